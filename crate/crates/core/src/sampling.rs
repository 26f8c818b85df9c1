//! Continuous pseudo-spiral phase-encode schedule with interleaved 2-D
//! navigation planes.
//!
//! Every readout acquires one full `k_x` line at a `(k_y, k_z)` point of the
//! phase-encode plane. Imaging readouts follow golden-angle rotated spokes
//! that start at the k-space center. Every `nav_interval_s` seconds the next
//! free slot after the current spoke carries a navigation block: the `k_z = 0`
//! line set `k_y = -u/2 .. u/2-1`, which together with the full `k_x` extent
//! gives a fully sampled `u x v` center plane.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::BinSelection;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("invalid pattern config: {0}")]
    Config(String),
    #[error("cardiac phase {phase} has no readouts")]
    EmptyBin { phase: usize },
    #[error("phase labels cover {labels} readouts but the schedule has {readouts}")]
    LabelMismatch { labels: usize, readouts: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternConfig {
    pub ny: usize,
    pub nz: usize,
    /// Samples per frequency-encode line.
    pub nx: usize,
    /// Samples per pseudo-spiral spoke; also the navigation line length.
    pub spoke_len: usize,
    pub nav_interval_s: f64,
    pub tr_s: f64,
    pub total_dur_s: f64,
    /// Spoke rotation per spoke, radians.
    pub spoke_angle_increment: f64,
    /// Recorded for provenance; the pattern itself has no random component.
    pub seed: u64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            ny: 64,
            nz: 18,
            nx: 64,
            spoke_len: 32,
            nav_interval_s: 1.0,
            tr_s: 0.0033,
            total_dur_s: 120.0,
            spoke_angle_increment: 2.39996,
            seed: 7,
        }
    }
}

impl PatternConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        for (name, v) in [
            ("ny", self.ny),
            ("nz", self.nz),
            ("nx", self.nx),
            ("spoke_len", self.spoke_len),
        ] {
            if v < 8 || v % 2 != 0 {
                return Err(SamplingError::Config(format!(
                    "{name} must be even and >= 8, got {v}"
                )));
            }
        }
        if self.spoke_len > self.ny {
            return Err(SamplingError::Config(format!(
                "spoke_len {} exceeds ny {}",
                self.spoke_len, self.ny
            )));
        }
        if !(self.tr_s > 0.0 && self.tr_s.is_finite()) {
            return Err(SamplingError::Config("tr_s must be positive".into()));
        }
        if !(self.total_dur_s >= self.tr_s && self.total_dur_s.is_finite()) {
            return Err(SamplingError::Config(
                "total_dur_s must cover at least one readout".into(),
            ));
        }
        if !self.spoke_angle_increment.is_finite() {
            return Err(SamplingError::Config("spoke_angle_increment not finite".into()));
        }
        if self.nav_interval_s + TIME_EPS < self.spoke_len as f64 * self.tr_s {
            return Err(SamplingError::Config(format!(
                "nav_interval_s {} shorter than one navigation block ({} readouts x {} s)",
                self.nav_interval_s, self.spoke_len, self.tr_s
            )));
        }
        Ok(())
    }

    /// Total readout slots, `floor(total_dur_s / tr_s)`.
    pub fn readout_count(&self) -> usize {
        (self.total_dur_s / self.tr_s + TIME_EPS).floor() as usize
    }

    /// The `k_y` coordinates of one navigation block, ascending.
    pub fn nav_line_ky(&self) -> std::ops::Range<i32> {
        let half = (self.spoke_len / 2) as i32;
        -half..half
    }

    fn ky_bounds(&self) -> (i32, i32) {
        let h = (self.ny / 2) as i32;
        (-h, h - 1)
    }

    fn kz_bounds(&self) -> (i32, i32) {
        let h = (self.nz / 2) as i32;
        (-h, h - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Imaging,
    Navigation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutDescriptor {
    pub index: usize,
    pub time_s: f64,
    pub ky: i32,
    pub kz: i32,
    pub role: Role,
    /// Most recent navigation event at or before this readout.
    pub nav_id: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavEvent {
    pub nav_id: usize,
    pub start_index: usize,
    /// Exclusive.
    pub end_index: usize,
    pub time_s: f64,
}

impl NavEvent {
    pub fn readouts(&self) -> std::ops::Range<usize> {
        self.start_index..self.end_index
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    pub config: PatternConfig,
    pub readouts: Vec<ReadoutDescriptor>,
    pub nav_events: Vec<NavEvent>,
}

impl SamplingSchedule {
    pub fn nav_count(&self) -> usize {
        self.nav_events.len()
    }

    /// Canonical JSON serialization; identical configs give identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schedule serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Phase-encode points of spoke `spoke_index`, starting at the center.
///
/// Points follow `r(s) = s * (ny/2 - 1) / (spoke_len - 1)` along the spoke
/// azimuth; the `k_z` component is scaled by `(nz/2 - 1)/(ny/2 - 1)` so the
/// spoke spans anisotropic grids. A point that rounds onto an already used
/// lattice position is advanced outward along the spoke until it lands on a
/// free one; if the spoke runs off the grid the point is clamped to the edge.
pub fn generate_spoke(spoke_index: usize, config: &PatternConfig) -> Vec<(i32, i32)> {
    let len = config.spoke_len;
    let r_max = (config.ny / 2) as f64 - 1.0;
    let step = r_max / (len as f64 - 1.0);
    let z_scale = ((config.nz / 2) as f64 - 1.0) / r_max;
    let theta = spoke_index as f64 * config.spoke_angle_increment;
    let (dy, dz) = (theta.cos(), theta.sin() * z_scale);
    let (ky_lo, ky_hi) = config.ky_bounds();
    let (kz_lo, kz_hi) = config.kz_bounds();
    // Past this parameter every rounded point is clamped to the same edge cell.
    let t_limit = 2.0 * config.ny.max(config.nz) as f64 / dy.abs().max(dz.abs()).max(1e-12);

    let lattice = |t: f64| -> (i32, i32) {
        let y = ((t * dy).round() as i64).clamp(ky_lo as i64, ky_hi as i64) as i32;
        let z = ((t * dz).round() as i64).clamp(kz_lo as i64, kz_hi as i64) as i32;
        (y, z)
    };

    let mut used = HashSet::with_capacity(len);
    let mut points = Vec::with_capacity(len);
    let mut t_prev = 0.0f64;
    for s in 0..len {
        let mut t = (s as f64 * step).max(t_prev);
        let mut p = lattice(t);
        while used.contains(&p) && t < t_limit {
            t += 0.25;
            p = lattice(t);
        }
        used.insert(p);
        points.push(p);
        t_prev = t;
    }
    points
}

/// Builds the full time-ordered schedule.
pub fn generate_schedule(config: &PatternConfig) -> Result<SamplingSchedule, SamplingError> {
    config.validate()?;
    let total = config.readout_count();
    let nav_len = config.spoke_len;
    let mut readouts = Vec::with_capacity(total);
    let mut nav_events = Vec::new();
    let mut next_nav = 0usize;
    let mut spoke_index = 0usize;

    let time_of = |i: usize| i as f64 * config.tr_s;

    while readouts.len() < total {
        let idx = readouts.len();
        let t = time_of(idx);
        let nav_due = t + TIME_EPS >= next_nav as f64 * config.nav_interval_s;
        // A navigation block is only started when it fits before the scan ends.
        if nav_due && idx + nav_len <= total {
            let nav_id = nav_events.len();
            for (j, ky) in config.nav_line_ky().enumerate() {
                readouts.push(ReadoutDescriptor {
                    index: idx + j,
                    time_s: time_of(idx + j),
                    ky,
                    kz: 0,
                    role: Role::Navigation,
                    nav_id,
                });
            }
            nav_events.push(NavEvent {
                nav_id,
                start_index: idx,
                end_index: idx + nav_len,
                time_s: t,
            });
            next_nav += 1;
            continue;
        }
        let nav_id = nav_events.len().saturating_sub(1);
        for (ky, kz) in generate_spoke(spoke_index, config) {
            let i = readouts.len();
            if i >= total {
                break;
            }
            readouts.push(ReadoutDescriptor {
                index: i,
                time_s: time_of(i),
                ky,
                kz,
                role: Role::Imaging,
                nav_id,
            });
        }
        spoke_index += 1;
    }

    Ok(SamplingSchedule {
        config: config.clone(),
        readouts,
        nav_events,
    })
}

/// Fully sampled reference schedule: `repeats` passes over the whole
/// phase-encode grid in raster order, each pass preceded by a navigation
/// block. `total_dur_s` is rewritten to match the readout count.
pub fn cartesian_schedule(config: &PatternConfig, repeats: usize) -> SamplingSchedule {
    let mut readouts = Vec::new();
    let mut nav_events = Vec::new();
    let (ky_lo, ky_hi) = config.ky_bounds();
    let (kz_lo, kz_hi) = config.kz_bounds();
    let push = |readouts: &mut Vec<ReadoutDescriptor>, ky, kz, role, nav_id| {
        let index = readouts.len();
        readouts.push(ReadoutDescriptor {
            index,
            time_s: index as f64 * config.tr_s,
            ky,
            kz,
            role,
            nav_id,
        });
    };
    for pass in 0..repeats {
        let start = readouts.len();
        for ky in config.nav_line_ky() {
            push(&mut readouts, ky, 0, Role::Navigation, pass);
        }
        nav_events.push(NavEvent {
            nav_id: pass,
            start_index: start,
            end_index: readouts.len(),
            time_s: start as f64 * config.tr_s,
        });
        for kz in kz_lo..=kz_hi {
            for ky in ky_lo..=ky_hi {
                push(&mut readouts, ky, kz, Role::Imaging, pass);
            }
        }
    }
    let mut config = config.clone();
    config.total_dur_s = readouts.len() as f64 * config.tr_s;
    SamplingSchedule {
        config,
        readouts,
        nav_events,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseAcceleration {
    pub phase: usize,
    pub readouts: usize,
    pub distinct_pe: usize,
    pub r_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UndersamplingReport {
    pub grid_points: usize,
    pub restricted: bool,
    pub phases: Vec<PhaseAcceleration>,
}

impl UndersamplingReport {
    pub fn max_r_factor(&self) -> f64 {
        self.phases.iter().map(|p| p.r_factor).fold(0.0, f64::max)
    }
}

/// Acceleration factor `ny*nz / distinct (ky,kz)` per cardiac phase.
///
/// `phase_of_readout[i]` labels schedule readout `i` (`None` = unbinned). When
/// `selection` is given only its readouts count.
pub fn undersampling_report(
    schedule: &SamplingSchedule,
    phase_of_readout: &[Option<usize>],
    phases: usize,
    selection: Option<&BinSelection>,
) -> Result<UndersamplingReport, SamplingError> {
    if phase_of_readout.len() != schedule.readouts.len() {
        return Err(SamplingError::LabelMismatch {
            labels: phase_of_readout.len(),
            readouts: schedule.readouts.len(),
        });
    }
    let grid_points = schedule.config.ny * schedule.config.nz;
    let mut per_phase: BTreeMap<usize, (usize, HashSet<(i32, i32)>)> =
        (0..phases).map(|p| (p, (0, HashSet::new()))).collect();

    let mut visit = |i: usize| {
        if let Some(p) = phase_of_readout[i] {
            if let Some((count, set)) = per_phase.get_mut(&p) {
                let r = &schedule.readouts[i];
                *count += 1;
                set.insert((r.ky, r.kz));
            }
        }
    };
    match selection {
        Some(sel) => sel.selected_readouts.iter().for_each(|&i| visit(i)),
        None => (0..schedule.readouts.len()).for_each(visit),
    }

    let mut out = Vec::with_capacity(phases);
    for (phase, (count, set)) in per_phase {
        if count == 0 {
            return Err(SamplingError::EmptyBin { phase });
        }
        out.push(PhaseAcceleration {
            phase,
            readouts: count,
            distinct_pe: set.len(),
            r_factor: grid_points as f64 / set.len() as f64,
        });
    }
    Ok(UndersamplingReport {
        grid_points,
        restricted: selection.is_some(),
        phases: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PatternConfig {
        PatternConfig {
            ny: 32,
            nz: 32,
            nx: 16,
            spoke_len: 16,
            total_dur_s: 10.0,
            ..PatternConfig::default()
        }
    }

    #[test]
    fn spoke_starts_at_center_and_is_monotone() {
        let cfg = PatternConfig::default();
        for s in 0..200 {
            let pts = generate_spoke(s, &cfg);
            assert_eq!(pts.len(), cfg.spoke_len);
            assert_eq!(pts[0], (0, 0));
            let r2: Vec<i32> = pts.iter().map(|&(y, z)| y * y + z * z).collect();
            assert!(r2.windows(2).all(|w| w[0] <= w[1]), "spoke {s}: {pts:?}");
            for &(y, z) in &pts {
                assert!((-32..32).contains(&y) && (-9..9).contains(&z));
            }
        }
    }

    #[test]
    fn zero_increment_repeats_spokes() {
        let cfg = PatternConfig {
            spoke_angle_increment: 0.0,
            ..small()
        };
        assert_eq!(generate_spoke(0, &cfg), generate_spoke(1, &cfg));
    }

    #[test]
    fn spoke_matches_rasterization_oracle() {
        // Frozen from an independent script rasterizing r(s) = s * 15 / 7 at
        // azimuth 2.39996 rad with outward collision advance in 0.25 steps.
        let cfg = PatternConfig {
            ny: 32,
            nz: 32,
            spoke_len: 8,
            spoke_angle_increment: 2.39996,
            ..PatternConfig::default()
        };
        let want = ORACLE_SPOKE_1.to_vec();
        assert_eq!(generate_spoke(1, &cfg), want);
    }

    const ORACLE_SPOKE_1: [(i32, i32); 8] = [
        (0, 0),
        (-2, 1),
        (-3, 3),
        (-5, 4),
        (-6, 6),
        (-8, 7),
        (-9, 9),
        (-11, 10),
    ];

    #[test]
    fn total_shorter_than_interval_gives_single_nav() {
        let cfg = PatternConfig {
            total_dur_s: 0.5,
            ..PatternConfig::default()
        };
        let s = generate_schedule(&cfg).unwrap();
        assert_eq!(s.nav_events.len(), 1);
        assert_eq!(s.nav_events[0].time_s, 0.0);
        assert_eq!(s.nav_events[0].start_index, 0);
    }

    #[test]
    fn full_protocol_nav_count() {
        let cfg = PatternConfig {
            total_dur_s: 318.0,
            ..PatternConfig::default()
        };
        let s = generate_schedule(&cfg).unwrap();
        assert_eq!(s.readouts.len(), (318.0f64 / 0.0033).floor() as usize);
        let want = 318i64;
        assert!((s.nav_events.len() as i64 - want).abs() <= 1, "{}", s.nav_events.len());
    }

    #[test]
    fn schedule_invariants() {
        let cfg = small();
        let s = generate_schedule(&cfg).unwrap();
        for w in s.readouts.windows(2) {
            assert!(w[1].time_s > w[0].time_s);
        }
        for (i, r) in s.readouts.iter().enumerate() {
            assert_eq!(r.index, i);
            // State assignment: latest nav event at or before the readout.
            let want = s
                .nav_events
                .iter()
                .filter(|e| e.time_s <= r.time_s)
                .map(|e| e.nav_id)
                .max()
                .unwrap();
            assert_eq!(r.nav_id, want);
            if r.role == Role::Navigation {
                assert_eq!(r.kz, 0);
            }
        }
        let want_ky: HashSet<i32> = (-8..8).collect();
        for e in &s.nav_events {
            let got: HashSet<i32> = s.readouts[e.readouts()]
                .iter()
                .map(|r| {
                    assert_eq!(r.role, Role::Navigation);
                    r.ky
                })
                .collect();
            assert_eq!(got, want_ky);
            assert_eq!(e.end_index - e.start_index, 16);
        }
    }

    #[test]
    fn navigation_waits_for_spoke_completion() {
        let s = generate_schedule(&small()).unwrap();
        for e in s.nav_events.iter().skip(1) {
            // The block before a navigation event ends a spoke: its last spoke
            // started exactly spoke_len readouts earlier.
            let before = &s.readouts[e.start_index - 16];
            assert_eq!((before.ky, before.kz), (0, 0));
            assert!(e.time_s + 1e-9 >= e.nav_id as f64 * 1.0);
        }
    }

    #[test]
    fn deterministic_serialization() {
        let cfg = small();
        let a = generate_schedule(&cfg).unwrap().to_json();
        let b = generate_schedule(&cfg).unwrap().to_json();
        assert_eq!(a, b);
        let back = SamplingSchedule::from_json(&a).unwrap();
        assert_eq!(back.to_json(), a);
    }

    #[test]
    fn config_errors() {
        let bad = [
            PatternConfig { ny: 30 + 1, ..small() },
            PatternConfig { spoke_len: 6, ..small() },
            PatternConfig { spoke_len: 34, ..small() },
            PatternConfig { nav_interval_s: 0.01, ..small() },
            PatternConfig { tr_s: 0.0, ..small() },
        ];
        for cfg in bad {
            assert!(matches!(generate_schedule(&cfg), Err(SamplingError::Config(_))));
        }
    }

    fn phase_labels(s: &SamplingSchedule, phases: usize) -> Vec<Option<usize>> {
        // Readouts spread round-robin over phases.
        (0..s.readouts.len()).map(|i| Some(i % phases)).collect()
    }

    #[test]
    fn undersampling_counts_distinct_points() {
        let cfg = small();
        let s = generate_schedule(&cfg).unwrap();
        let labels = phase_labels(&s, 4);
        let rep = undersampling_report(&s, &labels, 4, None).unwrap();
        for p in &rep.phases {
            let set: HashSet<(i32, i32)> = s
                .readouts
                .iter()
                .filter(|r| r.index % 4 == p.phase)
                .map(|r| (r.ky, r.kz))
                .collect();
            assert_eq!(p.distinct_pe, set.len());
            assert!((p.r_factor - 1024.0 / set.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_phase_is_reported() {
        let s = generate_schedule(&small()).unwrap();
        let labels = vec![Some(0); s.readouts.len()];
        assert_eq!(
            undersampling_report(&s, &labels, 2, None),
            Err(SamplingError::EmptyBin { phase: 1 })
        );
    }
}
