//! Study metrics per condition and per route.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;
use thiserror::Error;

use crate::script::ConditionKind;
use crate::telemetry::{EventKind, TelemetryRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no telemetry records to summarize")]
    Empty,
}

/// What one scenario amounted to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub participant: u32,
    pub condition: ConditionKind,
    pub route: String,
    pub interactions: usize,
    pub deviations: usize,
    /// First interaction to arrival; none when the scenario timed out.
    pub task_time_s: Option<f64>,
}

impl ScenarioResult {
    pub fn errored(&self) -> bool {
        self.deviations > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub group: String,
    pub scenarios: usize,
    pub completed: usize,
    pub mean_task_time_s: Option<f64>,
    pub task_time_sd_s: Option<f64>,
    pub error_rate_pct: f64,
    pub mean_interactions: f64,
    pub interaction_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub by_condition: Vec<MetricsRow>,
    pub by_route: Vec<MetricsRow>,
    pub total_interactions: usize,
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation; needs two values.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Groups records into scenarios by participant, condition and route, in
/// that order.
pub fn scenario_results(records: &[TelemetryRecord]) -> Vec<ScenarioResult> {
    #[derive(Default)]
    struct Acc {
        interactions: usize,
        deviations: usize,
        first: Option<u64>,
        arrival: Option<u64>,
    }
    let mut acc: BTreeMap<(u32, ConditionKind, String), Acc> = BTreeMap::new();
    for r in records {
        let a = acc.entry((r.participant, r.condition, r.route.clone())).or_default();
        match r.event {
            EventKind::Interaction => {
                a.interactions += 1;
                a.first = Some(a.first.map_or(r.ts_ms, |f| f.min(r.ts_ms)));
            }
            EventKind::Deviation => a.deviations += 1,
            EventKind::Arrival => a.arrival = Some(r.ts_ms),
            _ => {}
        }
    }
    acc.into_iter()
        .map(|((participant, condition, route), a)| ScenarioResult {
            participant,
            condition,
            route,
            interactions: a.interactions,
            deviations: a.deviations,
            task_time_s: a.arrival.map(|end| end.saturating_sub(a.first.unwrap_or(end)) as f64 / 1000.0),
        })
        .collect()
}

fn row(group: String, results: &[&ScenarioResult]) -> MetricsRow {
    let times: Vec<f64> = results.iter().filter_map(|r| r.task_time_s).collect();
    let inter: Vec<f64> = results.iter().map(|r| r.interactions as f64).collect();
    let errored = results.iter().filter(|r| r.errored()).count();
    MetricsRow {
        group,
        scenarios: results.len(),
        completed: times.len(),
        mean_task_time_s: mean(&times),
        task_time_sd_s: sample_sd(&times),
        error_rate_pct: 100.0 * errored as f64 / results.len() as f64,
        mean_interactions: mean(&inter).unwrap_or(0.0),
        interaction_sd: sample_sd(&inter),
    }
}

pub fn summarize(records: &[TelemetryRecord]) -> Result<MetricsSummary, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let results = scenario_results(records);
    let mut by_condition = Vec::new();
    for c in ConditionKind::ALL {
        let group: Vec<_> = results.iter().filter(|r| r.condition == c).collect();
        if !group.is_empty() {
            by_condition.push(row(c.to_string(), &group));
        }
    }
    let mut routes: Vec<&str> = results.iter().map(|r| r.route.as_str()).collect();
    routes.sort_unstable();
    routes.dedup();
    let by_route = routes
        .into_iter()
        .map(|route| {
            let group: Vec<_> = results.iter().filter(|r| r.route == route).collect();
            row(route.to_owned(), &group)
        })
        .collect();
    Ok(MetricsSummary {
        by_condition,
        by_route,
        total_interactions: records.iter().filter(|r| r.event == EventKind::Interaction).count(),
    })
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.digits$}"))
}

/// Aligned text table, conditions first, then routes.
pub fn render_table(s: &MetricsSummary) -> String {
    let header = ["group", "n", "time mean (s)", "time SD", "error %", "interactions", "inter. SD"];
    let mut rows: Vec<[String; 7]> = Vec::new();
    for r in s.by_condition.iter().chain(&s.by_route) {
        rows.push([
            r.group.clone(),
            r.scenarios.to_string(),
            cell(r.mean_task_time_s, 1),
            cell(r.task_time_sd_s, 1),
            format!("{:.1}", r.error_rate_pct),
            format!("{:.1}", r.mean_interactions),
            cell(r.interaction_sd, 2),
        ]);
    }
    let mut width = header.map(str::len);
    for r in &rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}", w = width[0]);
            } else {
                let _ = write!(out, "  {c:>w$}", w = width[i]);
            }
        }
        out.push('\n');
    };
    line(&mut out, &header.map(str::to_owned));
    let total: usize = width.iter().sum::<usize>() + 2 * (width.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        if i == s.by_condition.len() && i > 0 {
            out.push('\n');
        }
        line(&mut out, r);
    }
    out
}

pub fn render_json(s: &MetricsSummary) -> String {
    serde_json::to_string_pretty(s).expect("summary serializes")
}
