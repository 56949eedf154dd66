use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reembody_core::RouteGraph;
use reembody_gateway::EngineConfig;
use reembody_sim::{
    generate_batch, generate_script, parse_scenarios, run_in_process, scenario_results, scenarios_to_toml, summarize, write_csv,
    Behavior, ConditionKind, EventKind, Place, RunOptions, ScenarioScript, World,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn exact() -> Behavior {
    Behavior {
        walking_speed: 1.4,
        deviation_probability: 0.0,
    }
}

fn instant() -> RunOptions {
    RunOptions {
        engine: EngineConfig::instant(),
        ..RunOptions::default()
    }
}

#[test]
fn generated_batches_have_three_rows_per_participant() {
    let g = RouteGraph::campus_default();
    let world = World::campus();
    for (n, rows) in [(24, 72), (1, 3)] {
        let scripts = generate_batch(n, &g, Behavior::default(), &mut rng(1)).unwrap();
        assert_eq!(scripts.len(), rows);
        for s in &scripts {
            s.validate(&world.graph, &world.triggers).unwrap();
        }
    }
}

#[test]
fn scripts_round_trip_through_toml() {
    let g = RouteGraph::campus_default();
    let scripts = generate_batch(2, &g, Behavior::default(), &mut rng(3)).unwrap();
    let text = scenarios_to_toml(&scripts);
    assert_eq!(parse_scenarios(&text).unwrap(), scripts);
}

#[test]
fn invalid_scripts_are_rejected() {
    let world = World::campus();
    let g = &world.graph;
    let mut s = generate_script(1, ConditionKind::Handoff, "blue_square", g, exact(), &mut rng(0)).unwrap();
    s.steps.retain(|st| !st.text.contains("watch"));
    let err = s.validate(g, &world.triggers).unwrap_err().to_string();
    assert!(err.contains("hand-off request"), "{err}");

    let mut s = generate_script(1, ConditionKind::WearableOnly, "blue_square", g, exact(), &mut rng(0)).unwrap();
    s.steps[2].at = Place::Robot;
    assert!(s.validate(g, &world.triggers).is_err());

    let mut s = generate_script(1, ConditionKind::WearableOnly, "nowhere", g, exact(), &mut rng(0));
    assert!(s.is_err());
    s = generate_script(1, ConditionKind::WearableOnly, "blue_square", g, exact(), &mut rng(0));
    let mut s = s.unwrap();
    s.deviation_probability = 1.5;
    assert!(s.validate(g, &world.triggers).is_err());

    let bad = "[[scenario]]\nparticipant = 1\ncondition = \"teleport\"\nroute = \"x\"\nsteps = []\n";
    assert!(parse_scenarios(bad).is_err());
}

#[test]
fn errorless_batch_arrives_everywhere() {
    let g = RouteGraph::campus_default();
    let scripts = generate_batch(6, &g, exact(), &mut rng(9)).unwrap();
    let recs = run_in_process(&scripts, &World::campus(), &RunOptions::default()).unwrap();
    let results = scenario_results(&recs);
    assert_eq!(results.len(), 18);
    assert!(results.iter().all(|r| r.task_time_s.is_some() && !r.errored()));
    let s = summarize(&recs).unwrap();
    assert!(s.by_condition.iter().all(|r| r.error_rate_pct == 0.0));
    let interactions = recs.iter().filter(|r| r.event == EventKind::Interaction).count();
    assert_eq!(s.total_interactions, interactions);
    for r in &results {
        let arrivals = recs
            .iter()
            .filter(|x| x.participant == r.participant && x.condition == r.condition && x.event == EventKind::Arrival)
            .count();
        assert_eq!(arrivals, 1);
    }
}

#[test]
fn certain_deviation_on_three_legs_gives_three_events() {
    let world = World::campus();
    let mut s = generate_script(1, ConditionKind::WearableOnly, "blue_square", &world.graph, exact(), &mut rng(0)).unwrap();
    assert_eq!(s.plan(&world.graph).unwrap().legs.len(), 3);
    s.deviation_probability = 1.0;
    let recs = run_in_process(&[s], &world, &RunOptions::default()).unwrap();
    let devs = recs.iter().filter(|r| r.event == EventKind::Deviation).count();
    assert_eq!(devs, 3);
    assert!(scenario_results(&recs)[0].errored());
}

fn euclid(g: &RouteGraph, path: &[reembody_core::NodeId]) -> f64 {
    path.windows(2)
        .map(|w| {
            let (a, b) = (g.node(&w[0]).unwrap().position, g.node(&w[1]).unwrap().position);
            ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
        })
        .sum()
}

#[test]
fn robot_only_return_trips_follow_the_distance_formula() {
    let world = World::campus();
    let g = &world.graph;
    for route in ["blue_square", "green_circle", "red_triangle"] {
        let base = generate_script(1, ConditionKind::RobotOnly, route, g, exact(), &mut rng(0)).unwrap();
        let mut s = ScenarioScript {
            return_to_robot: true,
            ..base.clone()
        };
        s.steps.truncate(2);
        let plan = s.plan(g).unwrap();
        assert_eq!(plan.legs.len(), 3);
        for k in 1..plan.legs.len() {
            s.steps.push(reembody_sim::Step {
                at: Place::Robot,
                checkpoint: k,
                device: reembody_sim::Role::Robot,
                text: "What's next?".into(),
            });
        }
        let forward = euclid(g, &plan.checkpoints);
        let returns: f64 = (1..plan.legs.len()).map(|k| euclid(g, &plan.checkpoints[..=k])).sum();
        let expected_ms = (2.0 * returns + forward) / 1.4 * 1000.0;

        let recs = run_in_process(&[s], &world, &instant()).unwrap();
        let t = scenario_results(&recs)[0].task_time_s.unwrap() * 1000.0;
        assert!((t - expected_ms).abs() <= 1.0, "{route}: {t} vs {expected_ms}");
    }
}

#[test]
fn handoff_adds_exactly_one_interaction() {
    let world = World::campus();
    for route in ["blue_square", "green_circle", "red_triangle"] {
        let w = generate_script(1, ConditionKind::WearableOnly, route, &world.graph, exact(), &mut rng(0)).unwrap();
        let h = generate_script(1, ConditionKind::Handoff, route, &world.graph, exact(), &mut rng(0)).unwrap();
        let recs = run_in_process(&[w, h], &world, &RunOptions::default()).unwrap();
        let res = scenario_results(&recs);
        let by = |c| res.iter().find(|r| r.condition == c).unwrap().interactions;
        assert_eq!(by(ConditionKind::Handoff), by(ConditionKind::WearableOnly) + 1);
        let handoffs: Vec<_> = recs.iter().filter(|r| r.event == EventKind::Handoff).collect();
        assert_eq!(handoffs.len(), 1);
        assert_eq!(handoffs[0].detail_json()["latency_ms"], 3960);
    }
}

#[test]
fn same_seed_same_csv() {
    let g = RouteGraph::campus_default();
    let csv = |seed| {
        let scripts = generate_batch(6, &g, Behavior::default(), &mut rng(seed)).unwrap();
        let opts = RunOptions {
            seed,
            engine: EngineConfig::default().with_jitter(0.15),
            ..RunOptions::default()
        };
        let recs = run_in_process(&scripts, &World::campus(), &opts).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &recs).unwrap();
        buf
    };
    assert_eq!(csv(4), csv(4));
    assert_ne!(csv(4), csv(5));
}

#[test]
fn slow_walkers_time_out() {
    let world = World::campus();
    let mut s = generate_script(1, ConditionKind::WearableOnly, "blue_square", &world.graph, exact(), &mut rng(0)).unwrap();
    s.walking_speed = 0.01;
    let recs = run_in_process(&[s], &world, &RunOptions::default()).unwrap();
    assert_eq!(recs.last().unwrap().event, EventKind::Timeout);
    assert_eq!(recs.last().unwrap().ts_ms, 600_000);
    assert!(recs.iter().all(|r| r.event != EventKind::Arrival));
}
