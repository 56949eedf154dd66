//! Per-event log of a simulated study, one CSV row per event.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::script::ConditionKind;

pub const CSV_HEADER: &str = "ts_ms,participant,condition,route,event,detail";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// A user input.
    Interaction,
    /// Assistant speech or a gateway error reaching the user.
    Response,
    /// The target device greeted the user.
    Handoff,
    /// A wrong turn that had to be walked back.
    Deviation,
    Arrival,
    /// The scenario ran out of time before arriving.
    Timeout,
    /// Display directives for one device, when capture is enabled.
    Display,
}

/// `ts_ms` is on the scenario's own clock. `detail` is a JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub ts_ms: u64,
    pub participant: u32,
    pub condition: ConditionKind,
    pub route: String,
    pub event: EventKind,
    pub detail: String,
}

impl TelemetryRecord {
    pub fn detail_json(&self) -> serde_json::Value {
        serde_json::from_str(&self.detail).unwrap_or(serde_json::Value::Null)
    }
}

pub fn write_csv<W: Write>(out: W, records: &[TelemetryRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    // An empty log still gets its header.
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> csv::Result<Vec<TelemetryRecord>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let recs = vec![TelemetryRecord {
            ts_ms: 5,
            participant: 2,
            condition: ConditionKind::Handoff,
            route: "blue_square".into(),
            event: EventKind::Interaction,
            detail: r#"{"device":"robot1","text":"Where is it, then?"}"#.into(),
        }];
        let mut buf = Vec::new();
        write_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next(), Some(CSV_HEADER));
        assert_eq!(read_csv(&buf[..]).unwrap(), recs);

        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), CSV_HEADER);
    }
}
