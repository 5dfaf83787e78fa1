//! Ground-truth scoring of filter decisions.
//!
//! This is the only place that reads proxy labels. A proxy sample counts as
//! truly in-distribution for a client when its label is one the client holds.
//! Indices a client donated itself are excluded: they bypass the density test.

use core::ops::AddAssign;

use crate::data::ProxyDataset;
use crate::protocol::{ClientState, PredictionSet, RoundPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FilterConfusion {
    /// Truly ID, kept.
    pub id_kept: u64,
    /// Truly ID, dropped.
    pub id_dropped: u64,
    /// Truly OOD, kept.
    pub ood_kept: u64,
    /// Truly OOD, dropped.
    pub ood_dropped: u64,
}

impl FilterConfusion {
    /// Recall on ID samples; `None` if there were none.
    pub fn id_kept_fraction(&self) -> Option<f64> {
        ratio(self.id_kept, self.id_kept + self.id_dropped)
    }

    /// Share of OOD samples that slipped through; `None` if there were none.
    pub fn ood_leak_fraction(&self) -> Option<f64> {
        ratio(self.ood_kept, self.ood_kept + self.ood_dropped)
    }

    pub fn total(&self) -> u64 {
        self.id_kept + self.id_dropped + self.ood_kept + self.ood_dropped
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl AddAssign for FilterConfusion {
    fn add_assign(&mut self, o: Self) {
        self.id_kept += o.id_kept;
        self.id_dropped += o.id_dropped;
        self.ood_kept += o.ood_kept;
        self.ood_dropped += o.ood_dropped;
    }
}

/// Scores one round of submissions. `submissions[i]` must belong to
/// `states[i]`.
pub fn tally(
    proxy: &ProxyDataset,
    states: &[ClientState],
    submissions: &[PredictionSet],
    plan: &RoundPlan,
) -> FilterConfusion {
    let mut c = FilterConfusion::default();
    for (state, sub) in states.iter().zip(submissions) {
        debug_assert_eq!(state.client_id, sub.client_id);
        let held = state.dataset.label_set();
        for &idx in &plan.indices {
            if state.contributed.contains(&idx) {
                continue;
            }
            let truly_id = held.contains(&proxy.diagnostic_label(idx));
            let kept = sub.entries.contains_key(&idx);
            match (truly_id, kept) {
                (true, true) => c.id_kept += 1,
                (true, false) => c.id_dropped += 1,
                (false, true) => c.ood_kept += 1,
                (false, false) => c.ood_dropped += 1,
            }
        }
    }
    c
}
