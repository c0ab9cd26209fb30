//! No prediction in one set may share a week, input or target, with a
//! prediction in another set.

mod common;

use common::{overlap_conflicts, toy_target, toy_week};
use proptest::prelude::*;
use wtdnet::preprocess::{split_with_gaps, Membership, SplitSet};

#[test]
fn sixty_week_series_has_no_cross_set_overlap() {
    for t in [1, 4, 10] {
        let target = toy_target(60, &[]);
        let split = split_with_gaps(&target, toy_week(29), toy_week(45), t).unwrap();
        assert!(overlap_conflicts(&split).is_empty(), "T = {t}");
        // exactly T candidates are sacrificed after each boundary
        assert_eq!(split.count(Membership::DroppedGap), 2 * t, "T = {t}");
    }
}

#[test]
fn checker_detects_planted_overlap() {
    let target = toy_target(60, &[]);
    let mut split = split_with_gaps(&target, toy_week(29), toy_week(45), 4).unwrap();
    let first_val = split.positions(SplitSet::Val)[0];
    split.membership[first_val - 1] = Membership::Val;
    assert!(!overlap_conflicts(&split).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_never_leaks(
        weeks in 30usize..90,
        t in 1usize..12,
        a in 0.1f64..0.6,
        b in 0.05f64..0.35,
        missing in proptest::collection::vec(0usize..90, 0..25),
    ) {
        let train_end = ((weeks as f64 * a) as usize).max(1);
        let test_start = (train_end + 1 + (weeks as f64 * b) as usize).min(weeks - 1);
        let target = toy_target(weeks, &missing);
        // an emptied set is a legitimate refusal, not a leak
        if let Ok(split) = split_with_gaps(&target, toy_week(train_end), toy_week(test_start), t) {
            prop_assert!(overlap_conflicts(&split).is_empty());
            for pos in split.positions(SplitSet::Val).into_iter().chain(split.positions(SplitSet::Test)) {
                prop_assert!(split.dates[pos] > toy_week(train_end));
            }
            for pos in split.positions(SplitSet::Test) {
                prop_assert!(split.dates[pos] >= toy_week(test_start));
            }
        }
    }
}
