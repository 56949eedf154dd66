mod support;

use proptest::prelude::*;
use regex::Regex;
use reembody_core::dialogue::{fill, AgentReply, DialogueConfig, IntentParser, ReplyKind, SideEffect};
use reembody_core::handoff::{abort_handoff, execute_handoff, TriggerConfig};
use reembody_core::routes::RouteGraph;
use reembody_core::{DeviceKind, DialoguePhase, Intent, NodeId, SessionState, VoiceConfig};
use support::{robot, watch};

fn campus() -> &'static RouteGraph {
    static G: std::sync::OnceLock<RouteGraph> = std::sync::OnceLock::new();
    G.get_or_init(RouteGraph::campus_default)
}

fn parse(text: &str) -> Intent {
    DialogueConfig::shipped().parse(text, campus(), &TriggerConfig::default())
}

fn step(s: &SessionState, i: Intent) -> (SessionState, AgentReply) {
    DialogueConfig::shipped().step_dialogue(s, &i, campus())
}

fn on_watch() -> SessionState {
    SessionState::new_session("w", &watch(), VoiceConfig::default()).unwrap()
}

fn on_robot() -> SessionState {
    SessionState::new_session("r", &robot(), VoiceConfig::default()).unwrap()
}

#[test]
fn parses_study_phrasings() {
    assert_eq!(parse("Can we continue on my watch?"), Intent::HandoffRequest(DeviceKind::Wearable));
    assert_eq!(parse("Hi, where is the student cafe?"), Intent::AskDestination(NodeId::from("cafe")));
    assert_eq!(parse(""), Intent::Unknown);
    assert_eq!(parse("hop over to my watch"), Intent::HandoffRequest(DeviceKind::Wearable));
    assert_eq!(parse("Can you come with me?"), Intent::HandoffRequest(DeviceKind::Wearable));
}

#[test]
fn parses_landmarks_and_navigation() {
    assert_eq!(parse("Hello!"), Intent::Greet);
    assert_eq!(parse("I'm at the information booth."), Intent::ProvideLocation(NodeId::from("booth")));
    assert_eq!(parse("Where is the blue square?"), Intent::AskDestination(NodeId::from("bs")));
    assert_eq!(parse("What's next?"), Intent::AskNextStep);
    assert_eq!(parse("Can you tell me the whole route?"), Intent::AskFullRoute);
    assert_eq!(parse("I'm here"), Intent::ConfirmArrival);
    assert_eq!(parse("tell me a joke"), Intent::Unknown);
    assert_eq!(parse("WHERE IS THE STUDENT CAFE"), parse("where is the student cafe"));
}

#[test]
fn greeting_then_location() {
    let (s, r) = step(&on_watch(), Intent::Greet);
    assert_eq!(s.phase, DialoguePhase::ElicitingLocation);
    assert_eq!(r.kind, ReplyKind::Greeting);
}

#[test]
fn robot_already_knows_where_it_stands() {
    let (s, _) = step(&on_robot(), Intent::Greet);
    assert_eq!(s.phase, DialoguePhase::ElicitingDestination);
}

#[test]
fn guiding_handoff_request_says_okay() {
    let (s, _) = step(&on_robot(), Intent::AskDestination("cafe".into()));
    let (s, r) = step(&s, Intent::HandoffRequest(DeviceKind::Wearable));
    assert_eq!(r.text, "Okay!");
    assert_eq!(r.side_effect, Some(SideEffect::BeginHandoff(DeviceKind::Wearable)));
    assert_eq!(s.phase, DialoguePhase::HandoffPending);
}

#[test]
fn cafe_route_ends_on_the_left() {
    let (s, _) = step(&on_robot(), Intent::Greet);
    let (s, r) = step(&s, Intent::AskDestination("cafe".into()));
    assert_eq!(s.phase, DialoguePhase::Guiding);
    assert_eq!(r.kind, ReplyKind::Instruction);
    let plan = s.route_plan.as_ref().unwrap();
    let g = campus();
    assert_eq!(Some(plan.checkpoints.clone()), support::brute_force(g, &"booth".into(), &"cafe".into()));
    let last = plan.legs.last().unwrap();
    assert!(last.text.contains("cafe") && last.text.contains("on your left"), "{}", last.text);
    let (s, r) = step(&s, Intent::AskNextStep);
    assert_eq!(r.text, last.text);
    let (s, r) = step(&s, Intent::ConfirmArrival);
    assert_eq!(s.phase, DialoguePhase::Arrived);
    assert_eq!(r.side_effect, Some(SideEffect::Complete));
}

#[test]
fn full_route_does_not_advance() {
    let (s, _) = step(&on_robot(), Intent::AskDestination("bs".into()));
    let (s2, r) = step(&s, Intent::AskFullRoute);
    assert_eq!(s2.step_index, s.step_index);
    assert_eq!(r.text.matches(" Then ").count(), s.legs() - 1);
}

#[test]
fn next_step_advances() {
    let (s, _) = step(&on_robot(), Intent::AskDestination("bs".into()));
    let (s, r) = step(&s, Intent::AskNextStep);
    assert_eq!(s.step_index, 1);
    assert_eq!(r.side_effect, Some(SideEffect::AdvanceStep));
}

#[test]
fn early_arrival_claim_is_corrected() {
    let (s, _) = step(&on_robot(), Intent::AskDestination("bs".into()));
    let (s2, r) = step(&s, Intent::ConfirmArrival);
    assert_eq!(s2, s);
    assert_eq!(r.kind, ReplyKind::NotThereYet);
}

#[test]
fn unreachable_destination_keeps_phase() {
    let g = RouteGraph::load_route_graph(
        r#"
[[nodes]]
id = "a"
label = "hall"
x = 0.0
y = 0.0
[[nodes]]
id = "b"
label = "island"
x = 5.0
y = 0.0
"#,
    )
    .unwrap();
    let cfg = DialogueConfig::shipped();
    let s = SessionState::new_session("x", &robot().at("a"), VoiceConfig::default()).unwrap();
    let (s, _) = cfg.step_dialogue(&s, &Intent::Greet, &g);
    let (s2, r) = cfg.step_dialogue(&s, &Intent::AskDestination("b".into()), &g);
    assert_eq!(r.kind, ReplyKind::NoRoute);
    assert_eq!(s2, s);
}

#[test]
fn duplicate_marker_means_expected_checkpoint() {
    // "green triangle" is both p1 (on the route) and decoy d3.
    let (s, _) = step(&on_robot(), Intent::AskDestination("bs".into()));
    let (s2, _) = step(&s, Intent::ProvideLocation("d3".into()));
    assert_eq!(s2.step_index, 1);
    assert_eq!(s2.known_location, Some(NodeId::from("p1")));
}

// ---- properties ----------------------------------------------------------------

fn node_ids() -> Vec<NodeId> {
    campus().nodes().map(|n| n.id.clone()).collect()
}

fn intent_strategy() -> impl Strategy<Value = Intent> {
    let idx = 0..node_ids().len();
    prop_oneof![
        Just(Intent::Greet),
        idx.clone().prop_map(|i| Intent::ProvideLocation(node_ids()[i].clone())),
        idx.prop_map(|i| Intent::AskDestination(node_ids()[i].clone())),
        Just(Intent::AskFullRoute),
        Just(Intent::AskNextStep),
        Just(Intent::HandoffRequest(DeviceKind::Wearable)),
        Just(Intent::HandoffRequest(DeviceKind::Stationary)),
        Just(Intent::ConfirmArrival),
        Just(Intent::Unknown),
    ]
}

/// Walks the dialogue, completing or aborting any hand-off it starts.
fn walk(intents: &[Intent], complete: &[bool]) -> Vec<(SessionState, AgentReply)> {
    let cfg = DialogueConfig::shipped();
    let g = campus();
    let mut s = on_watch();
    let mut out = Vec::new();
    for (k, i) in intents.iter().enumerate() {
        let (mut next, reply) = cfg.step_dialogue(&s, i, g);
        if next.phase == DialoguePhase::HandoffPending && s.phase != DialoguePhase::HandoffPending {
            let t = next.last_timestamp().unwrap_or(0);
            if complete.get(k).copied().unwrap_or(true) {
                next = execute_handoff(&next, &robot(), t, cfg).unwrap().session;
            } else {
                next = abort_handoff(&next, DeviceKind::Stationary, cfg).0;
            }
        }
        out.push((next.clone(), reply));
        s = next;
    }
    out
}

fn template_regexes() -> Vec<Regex> {
    let cfg = DialogueConfig::shipped();
    let r = &cfg.replies;
    let leg = r"(Walk to the .+\.|Walk ahead, and the .+ is right in front of you!|Walk straight ahead to the .+\.|Turn (left|right) and walk to the .+\.|Turn around and walk back to the .+\.|Walk straight ahead, and the .+ is right in front of you!|Keep walking, and the .+ is on your (left|right)!|Turn around, and the .+ is behind you!)";
    let mut pats = vec![format!("^{leg}( Then {}.*)*$", "[a-z]")];
    for t in [
        &r.greeting,
        &r.greeting_known_location,
        &r.elicit_location,
        &r.elicit_destination,
        &r.location_ack,
        &r.reprompt,
        &r.no_route,
        &r.already_there,
        &r.arrived,
        &r.already_arrived,
        &r.handoff_confirm,
        &r.handoff_in_progress,
    ] {
        let escaped = regex::escape(t);
        let generic = Regex::new(r"\\\{[a-z]+\\\}").unwrap().replace_all(&escaped, ".+").into_owned();
        pats.push(format!("^{generic}$"));
    }
    let not_there = fill(&regex::escape(&r.not_there_yet), &[]);
    pats.push(format!("^{}$", Regex::new(r"\\\{[a-z]+\\\}").unwrap().replace_all(&not_there, ".+")));
    pats.iter().map(|p| Regex::new(p).unwrap()).collect()
}

proptest! {
    #[test]
    fn step_is_deterministic(intents in prop::collection::vec(intent_strategy(), 0..25)) {
        let a = walk(&intents, &[]);
        let b = walk(&intents, &[]);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn replies_come_from_templates(text in "[a-zA-Z ,.?!']{0,60}", prefix in prop::collection::vec(intent_strategy(), 0..8)) {
        let regexes = template_regexes();
        let mut states = walk(&prefix, &[]);
        let s = states.pop().map(|x| x.0).unwrap_or_else(on_watch);
        let (_, reply) = step(&s, parse(&text));
        prop_assert!(regexes.iter().any(|re| re.is_match(&reply.text)), "{:?}", reply.text);
    }

    #[test]
    fn unknown_never_changes_phase(prefix in prop::collection::vec(intent_strategy(), 0..20)) {
        let states = walk(&prefix, &[]);
        let s = states.last().map(|x| x.0.clone()).unwrap_or_else(on_watch);
        let (after, reply) = step(&s, Intent::Unknown);
        prop_assert_eq!(after.phase, s.phase);
        prop_assert_eq!(reply.text, "Sorry, I can help with directions. Where would you like to go?");
    }

    #[test]
    fn random_walk_respects_phase_machine(
        intents in prop::collection::vec(intent_strategy(), 1..40),
        complete in prop::collection::vec(any::<bool>(), 40),
    ) {
        let cfg = DialogueConfig::shipped();
        let g = campus();
        let mut s = on_watch();
        let mut transcript_len = 0;
        for (k, i) in intents.iter().enumerate() {
            let (next, reply) = cfg.step_dialogue(&s, i, g);
            if s.phase == DialoguePhase::Greeting && next.phase == DialoguePhase::HandoffPending {
                // Passes through the prompt phase it will resume into.
                let via = next.resume_phase.expect("pending sessions know where to resume");
                prop_assert!(s.phase.can_transition(via) && via.can_transition(next.phase));
            } else {
                prop_assert!(s.phase.can_transition(next.phase), "{:?} -> {:?} on {:?}", s.phase, next.phase, i);
            }
            prop_assert!(next.check_invariants().is_ok());
            prop_assert!(!reply.text.is_empty());
            let mut next = next;
            if next.phase == DialoguePhase::HandoffPending && s.phase != DialoguePhase::HandoffPending {
                let resumed = if complete[k] {
                    execute_handoff(&next, &robot(), 0, cfg).unwrap().session
                } else {
                    abort_handoff(&next, DeviceKind::Stationary, cfg).0
                };
                prop_assert!(next.phase.can_transition(resumed.phase));
                next = resumed;
            }
            prop_assert!(next.transcript.len() >= transcript_len);
            transcript_len = next.transcript.len();
            s = next;
        }
    }
}

#[test]
fn progress_reaches_arrival_on_every_route() {
    let g = campus();
    for route in g.routes() {
        let mut s = on_watch();
        let legs = g.plan_route(&route.start, &route.destination).unwrap().legs.len();
        let mut seq = vec![
            Intent::Greet,
            Intent::ProvideLocation(route.start.clone()),
            Intent::AskDestination(route.destination.clone()),
        ];
        seq.extend(std::iter::repeat_n(Intent::AskNextStep, legs));
        assert_eq!(seq.len(), legs + 3);
        for i in &seq {
            s = step(&s, i.clone()).0;
        }
        assert_eq!(s.phase, DialoguePhase::Guiding);
        let (done, _) = step(&s, Intent::ConfirmArrival);
        assert_eq!(done.phase, DialoguePhase::Arrived, "route {}", route.id);
    }
}
