//! Per-site two-bit saturating branch predictor and basic-block jump counting.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictorState {
    #[serde(rename = "ST")]
    StronglyTaken,
    #[serde(rename = "WT")]
    WeaklyTaken,
    #[serde(rename = "WNT")]
    #[default]
    WeaklyNotTaken,
    #[serde(rename = "SNT")]
    StronglyNotTaken,
}

impl PredictorState {
    pub const ALL: [PredictorState; 4] = [
        PredictorState::StronglyTaken,
        PredictorState::WeaklyTaken,
        PredictorState::WeaklyNotTaken,
        PredictorState::StronglyNotTaken,
    ];

    pub fn predicts_taken(self) -> bool {
        matches!(
            self,
            PredictorState::StronglyTaken | PredictorState::WeaklyTaken
        )
    }

    /// Moves one step toward the observed outcome, saturating at the ends.
    pub fn next(self, taken: bool) -> PredictorState {
        use PredictorState::*;
        match (self, taken) {
            (StronglyTaken, true) => StronglyTaken,
            (StronglyTaken, false) => WeaklyTaken,
            (WeaklyTaken, true) => StronglyTaken,
            (WeaklyTaken, false) => WeaklyNotTaken,
            (WeaklyNotTaken, true) => WeaklyTaken,
            (WeaklyNotTaken, false) => StronglyNotTaken,
            (StronglyNotTaken, true) => WeaklyNotTaken,
            (StronglyNotTaken, false) => StronglyNotTaken,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            PredictorState::StronglyTaken => "ST",
            PredictorState::WeaklyTaken => "WT",
            PredictorState::WeaklyNotTaken => "WNT",
            PredictorState::StronglyNotTaken => "SNT",
        }
    }
}

impl fmt::Display for PredictorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for PredictorState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PredictorState::ALL
            .into_iter()
            .find(|p| p.short_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown predictor state '{s}' (expected ST, WT, WNT or SNT)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Hit,
    Miss,
}

/// One predictor per conditional-branch site; sites never alias.
#[derive(Debug, Clone, Default)]
pub struct BranchPredictorTable {
    initial: PredictorState,
    sites: HashMap<u32, PredictorState>,
}

impl BranchPredictorTable {
    pub fn new(initial: PredictorState) -> Self {
        BranchPredictorTable {
            initial,
            sites: HashMap::new(),
        }
    }

    pub fn state(&self, site: u32) -> PredictorState {
        self.sites.get(&site).copied().unwrap_or(self.initial)
    }

    pub fn predict_and_update(&mut self, site: u32, taken: bool) -> Prediction {
        let state = self.sites.entry(site).or_insert(self.initial);
        let hit = state.predicts_taken() == taken;
        *state = state.next(taken);
        if hit {
            Prediction::Hit
        } else {
            Prediction::Miss
        }
    }

    pub fn reset(&mut self) {
        self.sites.clear();
    }

    pub fn tracked_sites(&self) -> usize {
        self.sites.len()
    }
}

/// Counts control transfers whose destination block differs from the source.
pub fn count_bb_jump<I>(transitions: I) -> u64
where
    I: IntoIterator<Item = (u32, u32)>,
{
    transitions
        .into_iter()
        .filter(|(from, to)| from != to)
        .count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use PredictorState::*;

    #[test]
    fn all_eight_transitions() {
        // (state, taken) -> (hit, successor)
        let table = [
            (StronglyTaken, true, true, StronglyTaken),
            (StronglyTaken, false, false, WeaklyTaken),
            (WeaklyTaken, true, true, StronglyTaken),
            (WeaklyTaken, false, false, WeaklyNotTaken),
            (WeaklyNotTaken, true, false, WeaklyTaken),
            (WeaklyNotTaken, false, true, StronglyNotTaken),
            (StronglyNotTaken, true, false, WeaklyNotTaken),
            (StronglyNotTaken, false, true, StronglyNotTaken),
        ];
        for (state, taken, hit, succ) in table {
            let mut t = BranchPredictorTable::new(state);
            let p = t.predict_and_update(0, taken);
            assert_eq!(p == Prediction::Hit, hit, "{state} {taken}");
            assert_eq!(t.state(0), succ, "{state} {taken}");
        }
    }

    #[test]
    fn loop_of_ten_from_weakly_not_taken() {
        let mut t = BranchPredictorTable::default();
        let outcomes = [true, true, true, true, true, true, true, true, true, false];
        let results: Vec<_> = outcomes
            .iter()
            .map(|&o| t.predict_and_update(7, o))
            .collect();
        assert_eq!(results[0], Prediction::Miss);
        assert_eq!(results[1], Prediction::Hit);
        assert_eq!(results[9], Prediction::Miss);
        let hits = results.iter().filter(|r| **r == Prediction::Hit).count();
        assert_eq!((hits, results.len() - hits), (8, 2));
        assert_eq!(t.state(7), WeaklyTaken);
    }

    #[test]
    fn bb_jump_examples() {
        assert_eq!(count_bb_jump(vec![(0, 0); 5]), 0);
        let cyc = [(0, 1), (1, 2), (2, 0), (0, 1), (1, 2), (2, 0)];
        assert_eq!(count_bb_jump(cyc), 6);
        let mut b = vec![(0, 1)];
        b.extend(std::iter::repeat_n((1, 1), 9));
        b.push((1, 2));
        assert_eq!(count_bb_jump(b), 2);
    }

    #[test]
    fn reset_restores_initial_state() {
        let mut t = BranchPredictorTable::new(StronglyNotTaken);
        t.reset();
        assert_eq!(t.tracked_sites(), 0);
        t.predict_and_update(1, true);
        t.predict_and_update(1, true);
        t.reset();
        assert_eq!(t.state(1), StronglyNotTaken);
        t.reset();
        assert_eq!(t.tracked_sites(), 0);
        assert_eq!(t.predict_and_update(1, true), Prediction::Miss);
    }

    #[test]
    fn state_names_round_trip() {
        for s in PredictorState::ALL {
            assert_eq!(s.short_name().parse::<PredictorState>().unwrap(), s);
        }
        assert!("XX".parse::<PredictorState>().is_err());
    }

    proptest! {
        #[test]
        fn saturates_after_two_repeats(init in 0usize..4, taken: bool, extra in 0usize..20) {
            let mut t = BranchPredictorTable::new(PredictorState::ALL[init]);
            t.predict_and_update(0, taken);
            t.predict_and_update(0, taken);
            for _ in 0..extra {
                prop_assert_eq!(t.predict_and_update(0, taken), Prediction::Hit);
            }
        }

        #[test]
        fn sites_are_independent(events in proptest::collection::vec((0u32..2, any::<bool>()), 0..64)) {
            let mut mixed = BranchPredictorTable::default();
            let mixed_out: Vec<_> = events.iter().map(|&(s, o)| (s, mixed.predict_and_update(s, o))).collect();
            for site in 0..2 {
                let mut alone = BranchPredictorTable::default();
                let solo: Vec<_> = events.iter().filter(|e| e.0 == site)
                    .map(|&(_, o)| alone.predict_and_update(site, o)).collect();
                let from_mixed: Vec<_> = mixed_out.iter().filter(|e| e.0 == site).map(|e| e.1).collect();
                prop_assert_eq!(solo, from_mixed);
                prop_assert_eq!(alone.state(site), mixed.state(site));
            }
        }
    }
}
