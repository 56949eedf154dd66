use std::collections::BTreeMap;

use reembody_sim::{latin_square_schedule, ConditionKind};

#[test]
fn twenty_four_participants_are_balanced() {
    let rows = latin_square_schedule(24).unwrap();
    assert_eq!(rows.len(), 24);
    let mut per_position = BTreeMap::new();
    let mut pairs = BTreeMap::new();
    for row in &rows {
        for (pos, slot) in row.slots.iter().enumerate() {
            *per_position.entry((slot.condition, pos)).or_insert(0) += 1;
            *pairs.entry((slot.condition, slot.route)).or_insert(0) += 1;
        }
        let mut routes: Vec<_> = row.slots.iter().map(|s| s.route).collect();
        routes.sort();
        assert_eq!(routes, vec![0, 1, 2], "participant {} repeats a route", row.participant);
    }
    assert_eq!(per_position.len(), 9);
    assert!(per_position.values().all(|&n| n == 8), "{per_position:?}");
    assert_eq!(pairs.len(), 9);
    assert!(pairs.values().all(|&n| n == 8), "{pairs:?}");
}

#[test]
fn six_participants_balance_positions_and_adjacency() {
    let rows = latin_square_schedule(6).unwrap();
    let mut position = BTreeMap::new();
    let mut follows = BTreeMap::new();
    for row in &rows {
        let order: Vec<ConditionKind> = row.slots.iter().map(|s| s.condition).collect();
        for (i, c) in order.iter().enumerate() {
            *position.entry((*c, i)).or_insert(0) += 1;
        }
        for w in order.windows(2) {
            *follows.entry((w[0], w[1])).or_insert(0) += 1;
        }
    }
    assert!(position.values().all(|&n| n == 2));
    // Every ordered pair of distinct conditions is adjacent equally often.
    assert_eq!(follows.len(), 6);
    assert!(follows.values().all(|&n| n == 2), "{follows:?}");
}

#[test]
fn any_positive_count_gives_full_rows() {
    for n in [1, 5, 7, 13] {
        let rows = latin_square_schedule(n).unwrap();
        assert_eq!(rows.len(), n as usize);
        for r in rows {
            let mut c: Vec<_> = r.slots.iter().map(|s| s.condition).collect();
            c.sort();
            assert_eq!(c, ConditionKind::ALL);
        }
    }
}
