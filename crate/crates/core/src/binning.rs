//! Respiratory state clustering, modal-state selection and cardiac phase labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::{MotionTrace, Trace1d};
use crate::sampling::SamplingSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum BinningError {
    #[error("need at least two trigger times to bracket readouts, got {0}")]
    NoTriggers(usize),
    #[error("cardiac phase count must be >= 1")]
    NoPhases,
    #[error("state map is empty")]
    Empty,
    #[error("state map covers {states} navigators but the schedule has {schedule}")]
    NavCountMismatch { states: usize, schedule: usize },
}

/// Respiratory state: an integer shift vector (2-D) or a score bucket (1-D).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StateKey {
    Shift([i32; 2]),
    Bucket(usize),
}

impl StateKey {
    /// Ordering used for modal-state ties: smallest norm, then lexicographic.
    fn tie_key(&self) -> (i64, i64, i64) {
        match *self {
            StateKey::Shift([x, y]) => ((x * x + y * y) as i64, x as i64, y as i64),
            StateKey::Bucket(b) => (0, b as i64, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    pub buckets: usize,
}

impl Default for Quantizer {
    fn default() -> Self {
        Self { buckets: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub key: StateKey,
    /// Zero-based navigator indices, ascending.
    pub navigators: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StateMap {
    pub states: Vec<StateEntry>,
}

impl StateMap {
    fn from_keys(keys: impl IntoIterator<Item = StateKey>) -> Self {
        let mut map: BTreeMap<StateKey, Vec<usize>> = BTreeMap::new();
        for (i, k) in keys.into_iter().enumerate() {
            map.entry(k).or_default().push(i);
        }
        Self {
            states: map
                .into_iter()
                .map(|(key, navigators)| StateEntry { key, navigators })
                .collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.states.iter().map(|s| s.navigators.len()).sum()
    }

    pub fn count(&self, key: &StateKey) -> usize {
        self.states
            .iter()
            .find(|s| &s.key == key)
            .map_or(0, |s| s.navigators.len())
    }

    /// Most populated state with the documented tie-break.
    pub fn modal(&self) -> Option<&StateEntry> {
        self.states.iter().min_by(|a, b| {
            b.navigators
                .len()
                .cmp(&a.navigators.len())
                .then_with(|| a.key.tie_key().cmp(&b.key.tie_key()))
        })
    }
}

/// 2-D mode: the combined integer shift vector is the state key.
pub fn cluster_states_2d(trace: &MotionTrace) -> StateMap {
    StateMap::from_keys(trace.navs.iter().map(|n| StateKey::Shift(n.comb)))
}

/// 1-D mode: equal-width buckets over the observed score range.
pub fn cluster_states_1d(trace: &Trace1d, quantizer: &Quantizer) -> StateMap {
    let buckets = quantizer.buckets.max(1);
    let lo = trace.scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = trace.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / buckets as f64;
    let spread = hi - lo;
    StateMap::from_keys(trace.scores.iter().map(|&s| {
        // Range below round-off of the scores counts as a single state.
        if !(spread > 1e-12 * (hi.abs().max(lo.abs()).max(1.0))) {
            StateKey::Bucket(0)
        } else {
            StateKey::Bucket((((s - lo) / width).floor() as usize).min(buckets - 1))
        }
    }))
}

/// Cardiac phase `floor(P * elapsed RR fraction)`, or `None` outside the triggers.
pub fn cardiac_phase(time_s: f64, triggers: &[f64], phases: usize) -> Option<usize> {
    let k = triggers.partition_point(|&t| t <= time_s);
    if k == 0 || k >= triggers.len() {
        return None;
    }
    let (t0, t1) = (triggers[k - 1], triggers[k]);
    let frac = (time_s - t0) / (t1 - t0);
    Some(((phases as f64 * frac).floor() as usize).min(phases - 1))
}

/// Cardiac phase of every schedule readout.
pub fn phase_labels(schedule: &SamplingSchedule, triggers: &[f64], phases: usize) -> Vec<Option<usize>> {
    schedule
        .readouts
        .iter()
        .map(|r| cardiac_phase(r.time_s, triggers, phases))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSelection {
    pub states: StateMap,
    pub selected_state: Option<StateKey>,
    pub selected_navigators: Vec<usize>,
    /// Every readout governed by a selected navigator, navigation readouts included.
    pub selected_readouts: Vec<usize>,
    pub fraction_selected: f64,
    pub phases: usize,
    /// Aligned with `selected_readouts`; `None` when no trigger pair brackets it.
    pub cardiac_phase_of_readout: Vec<Option<usize>>,
    pub dropped: usize,
}

impl BinSelection {
    pub fn per_phase_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.phases];
        for p in self.cardiac_phase_of_readout.iter().flatten() {
            counts[*p] += 1;
        }
        counts
    }

    /// `(readout, phase)` pairs that received a cardiac phase.
    pub fn labelled(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.selected_readouts
            .iter()
            .zip(&self.cardiac_phase_of_readout)
            .filter_map(|(&r, p)| p.map(|p| (r, p)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bins serialize")
    }
}

fn build_selection(
    states: StateMap,
    selected_state: Option<StateKey>,
    selected_navigators: Vec<usize>,
    schedule: &SamplingSchedule,
    triggers: &[f64],
    phases: usize,
) -> Result<BinSelection, BinningError> {
    if phases == 0 {
        return Err(BinningError::NoPhases);
    }
    if triggers.len() < 2 {
        return Err(BinningError::NoTriggers(triggers.len()));
    }
    let nav_total = schedule.nav_events.len();
    let mut member = vec![false; nav_total];
    for &n in &selected_navigators {
        member[n] = true;
    }
    let selected_readouts: Vec<usize> = schedule
        .readouts
        .iter()
        .filter(|r| member.get(r.nav_id).copied().unwrap_or(false))
        .map(|r| r.index)
        .collect();
    let cardiac_phase_of_readout: Vec<Option<usize>> = selected_readouts
        .iter()
        .map(|&i| cardiac_phase(schedule.readouts[i].time_s, triggers, phases))
        .collect();
    let dropped = cardiac_phase_of_readout.iter().filter(|p| p.is_none()).count();
    Ok(BinSelection {
        states,
        selected_state,
        fraction_selected: selected_navigators.len() as f64 / nav_total.max(1) as f64,
        selected_navigators,
        selected_readouts,
        phases,
        cardiac_phase_of_readout,
        dropped,
    })
}

/// Keeps the readouts of the most frequent respiratory state.
pub fn select_bin(
    states: &StateMap,
    schedule: &SamplingSchedule,
    triggers: &[f64],
    phases: usize,
) -> Result<BinSelection, BinningError> {
    if states.total() != schedule.nav_events.len() {
        return Err(BinningError::NavCountMismatch {
            states: states.total(),
            schedule: schedule.nav_events.len(),
        });
    }
    let modal = states.modal().ok_or(BinningError::Empty)?;
    build_selection(
        states.clone(),
        Some(modal.key),
        modal.navigators.clone(),
        schedule,
        triggers,
        phases,
    )
}

/// Every readout, no respiratory gating.
pub fn select_all(
    schedule: &SamplingSchedule,
    triggers: &[f64],
    phases: usize,
) -> Result<BinSelection, BinningError> {
    let navs: Vec<usize> = (0..schedule.nav_events.len()).collect();
    build_selection(StateMap::default(), None, navs, schedule, triggers, phases)
}
