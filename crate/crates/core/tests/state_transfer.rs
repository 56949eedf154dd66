mod support;

use proptest::prelude::*;
use reembody_core::routes::RouteGraph;
use reembody_core::SessionState;
use support::{fuzz_session, transfer_violation};

#[test]
fn thousand_fuzzed_transfers() {
    let g = RouteGraph::campus_default();
    let bad: Vec<(u64, String)> = (0..1000u64)
        .filter_map(|seed| transfer_violation(seed, &g).map(|v| (seed, v)))
        .collect();
    assert!(bad.is_empty(), "{:?}", &bad[..bad.len().min(3)]);
}

proptest! {
    #[test]
    fn transfer_changes_only_the_device(seed: u64) {
        let g = RouteGraph::campus_default();
        prop_assert_eq!(transfer_violation(seed, &g), None);
    }

    #[test]
    fn canonical_round_trip(seed: u64) {
        let g = RouteGraph::campus_default();
        let s = fuzz_session(seed, &g);
        let text = s.to_canonical();
        let back = SessionState::from_canonical(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_canonical(), text);
    }
}
