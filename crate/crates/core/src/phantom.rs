//! Numerical motion phantom and multi-coil k-space forward model.
//!
//! Grid axis 0 (`x`, the readout direction) is superior-inferior, axis 1 (`y`)
//! is anterior-posterior and axis 2 (`z`) is the slice direction. Respiratory
//! displacement is an integer-quantized sinusoid held constant from one
//! navigation event to the next, so ground-truth shifts are exactly
//! representable by an integer-pixel search.

use std::collections::BTreeMap;

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fft::{self, index_of};
use crate::sampling::SamplingSchedule;
use crate::scalar::{Cplx, Real};

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("phantom grid {phantom:?} does not match schedule grid {schedule:?}")]
    ConfigMismatch {
        phantom: [usize; 3],
        schedule: [usize; 3],
    },
    #[error("invalid phantom config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MotionAxis {
    /// Superior-inferior, grid axis 0.
    Si,
    /// Anterior-posterior, grid axis 1.
    Ap,
}

impl MotionAxis {
    pub fn grid_axis(self) -> usize {
        match self {
            MotionAxis::Si => 0,
            MotionAxis::Ap => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionSource {
    Static,
    /// Rigid displacement along `motion_axis`.
    Respiration,
    /// Respiratory displacement along `motion_axis` (if any) plus pulsation.
    Cardiac,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    /// Voxel-index coordinates.
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionComponent {
    pub name: String,
    pub shape: Vec<Ellipsoid>,
    pub motion_axis: Option<MotionAxis>,
    pub motion_source: MotionSource,
    #[serde(default)]
    pub pulsation_frac: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RespDrift {
    pub period_s: f64,
    /// Relative amplitude modulation depth.
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CoilModel {
    /// Unit sensitivity everywhere.
    Uniform,
    /// Complex Gaussians centered on a ring around the volume in the x-z plane.
    Ring { width: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub grid: [usize; 3],
    pub voxel_mm: f64,
    pub components: Vec<MotionComponent>,
    pub coils: usize,
    pub coil_model: CoilModel,
    /// Per-component (real and imaginary) std of k-space noise.
    pub noise_sigma: f64,
    pub resp_period_s: f64,
    pub resp_amp_ap_px: f64,
    pub resp_amp_si_px: f64,
    pub resp_drift: Option<RespDrift>,
    pub cardiac_period_s: f64,
    /// Cardiac phase is quantized to this many render levels.
    pub cardiac_levels: usize,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let z = 8.5;
        let ell = |c: [f64; 3], a: [f64; 3], i: f64| Ellipsoid {
            center: c,
            semi_axes: a,
            intensity: i,
        };
        Self {
            grid: [64, 64, 18],
            voxel_mm: 4.84,
            components: vec![
                MotionComponent {
                    name: "torso".into(),
                    shape: vec![
                        ell([31.5, 34.0, z], [24.0, 19.0, 100.0], 0.35),
                        ell([31.5, 16.0, z], [18.0, 3.5, 100.0], 0.6),
                    ],
                    motion_axis: Some(MotionAxis::Ap),
                    motion_source: MotionSource::Respiration,
                    pulsation_frac: 0.0,
                },
                MotionComponent {
                    name: "liver".into(),
                    shape: vec![ell([47.0, 38.0, z], [10.0, 11.0, 6.5], 0.45)],
                    motion_axis: Some(MotionAxis::Si),
                    motion_source: MotionSource::Respiration,
                    pulsation_frac: 0.0,
                },
                MotionComponent {
                    name: "heart".into(),
                    shape: vec![
                        ell([25.0, 32.0, z], [8.0, 7.0, 5.5], 0.5),
                        ell([24.0, 32.0, z], [4.5, 4.0, 3.5], 0.6),
                    ],
                    motion_axis: Some(MotionAxis::Si),
                    motion_source: MotionSource::Cardiac,
                    pulsation_frac: 0.12,
                },
            ],
            coils: 4,
            coil_model: CoilModel::Ring { width: 0.8 },
            noise_sigma: 20.0,
            resp_period_s: 4.3,
            resp_amp_ap_px: 2.0,
            resp_amp_si_px: 1.0,
            resp_drift: None,
            cardiac_period_s: 0.9,
            cardiac_levels: 20,
            seed: 11,
        }
    }
}

/// Integer respiratory displacement of one navigation interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NavShift {
    pub ap: i32,
    pub si: i32,
}

impl NavShift {
    /// As an image-axis vector `(x, y)` = `(si, ap)`.
    pub fn as_xy(self) -> [i32; 2] {
        [self.si, self.ap]
    }
}

/// Quantized sinusoid `round(amp * sin(2 pi phase))`.
pub fn respiration_shift(amp: f64, resp_phase: f64) -> i32 {
    (amp * (2.0 * std::f64::consts::PI * resp_phase).sin()).round() as i32
}

/// Raised cosine in `[0, 1]`, zero at phase 0.
pub fn cardiac_waveform(cardiac_phase: f64) -> f64 {
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * cardiac_phase).cos())
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.grid.iter().any(|&n| n == 0) {
            return Err(PhantomError::Config("grid must be non-empty".into()));
        }
        if self.coils == 0 {
            return Err(PhantomError::Config("at least one coil required".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(PhantomError::Config("noise_sigma must be >= 0".into()));
        }
        if !(self.resp_period_s > 0.0) || !(self.cardiac_period_s > 0.0) {
            return Err(PhantomError::Config("periods must be positive".into()));
        }
        if self.cardiac_levels == 0 {
            return Err(PhantomError::Config("cardiac_levels must be >= 1".into()));
        }
        let max_ap = self.max_shift(self.resp_amp_ap_px);
        let max_si = self.max_shift(self.resp_amp_si_px);
        for comp in &self.components {
            let (shift_x, shift_y) = match (comp.motion_source, comp.motion_axis) {
                (MotionSource::Static, _) | (_, None) => (0.0, 0.0),
                (_, Some(MotionAxis::Si)) => (max_si, 0.0),
                (_, Some(MotionAxis::Ap)) => (0.0, max_ap),
            };
            let grow = 1.0 + comp.pulsation_frac.abs();
            for e in &comp.shape {
                for (axis, shift) in [(0, shift_x), (1, shift_y)] {
                    let reach = e.semi_axes[axis] * grow + shift;
                    let lo = e.center[axis] - reach;
                    let hi = e.center[axis] + reach;
                    if lo < 0.0 || hi > (self.grid[axis] - 1) as f64 {
                        return Err(PhantomError::Config(format!(
                            "component '{}' leaves the grid along axis {axis} at maximal displacement",
                            comp.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest respiratory displacement in pixels on either axis, drift included.
    pub fn peak_shift_px(&self) -> f64 {
        self.max_shift(self.resp_amp_ap_px).max(self.max_shift(self.resp_amp_si_px))
    }

    fn max_shift(&self, amp: f64) -> f64 {
        let depth = self.resp_drift.as_ref().map_or(0.0, |d| d.depth.abs());
        (amp.abs() * (1.0 + depth)).round()
    }

    /// Respiratory amplitude factor at time `t` (drift modulation).
    fn drift_factor(&self, t: f64) -> f64 {
        match &self.resp_drift {
            Some(d) if d.period_s > 0.0 => {
                1.0 + d.depth * (2.0 * std::f64::consts::PI * t / d.period_s).sin()
            }
            _ => 1.0,
        }
    }

    /// Ground-truth displacement for a navigation event acquired at `t`.
    pub fn shift_at(&self, t: f64) -> NavShift {
        let phase = t / self.resp_period_s;
        let f = self.drift_factor(t);
        NavShift {
            ap: respiration_shift(self.resp_amp_ap_px * f, phase),
            si: respiration_shift(self.resp_amp_si_px * f, phase),
        }
    }

    /// Simulated ECG triggers at `k * cardiac_period_s` up to the scan end.
    pub fn trigger_times(&self, total_dur_s: f64) -> Vec<f64> {
        let n = (total_dur_s / self.cardiac_period_s + 1e-9).floor() as usize + 1;
        (0..n).map(|k| k as f64 * self.cardiac_period_s).collect()
    }

    /// Fraction of the current cardiac cycle elapsed at `t`.
    pub fn cardiac_fraction(&self, t: f64) -> f64 {
        let f = (t / self.cardiac_period_s).fract();
        if f < 0.0 {
            f + 1.0
        } else {
            f
        }
    }

    fn cardiac_level(&self, t: f64) -> usize {
        let l = (self.cardiac_fraction(t) * self.cardiac_levels as f64 + 1e-9).floor() as usize;
        l.min(self.cardiac_levels - 1)
    }

    pub fn with_static_motion(mut self) -> Self {
        self.resp_amp_ap_px = 0.0;
        self.resp_amp_si_px = 0.0;
        self.resp_drift = None;
        for c in &mut self.components {
            c.pulsation_frac = 0.0;
        }
        self
    }
}

/// Rasterizes every component at the given integer displacement and cardiac phase.
pub fn render_state<T: Real>(phantom: &PhantomConfig, shift: NavShift, cardiac_phase: f64) -> Array3<T> {
    let [nx, ny, nz] = phantom.grid;
    let mut vol = Array3::<T>::zeros((nx, ny, nz));
    let pulse = cardiac_waveform(cardiac_phase);
    for comp in &phantom.components {
        let mut offset = [0.0f64; 3];
        if comp.motion_source != MotionSource::Static {
            match comp.motion_axis {
                Some(MotionAxis::Si) => offset[0] = shift.si as f64,
                Some(MotionAxis::Ap) => offset[1] = shift.ap as f64,
                None => {}
            }
        }
        let scale = if comp.motion_source == MotionSource::Cardiac {
            1.0 + comp.pulsation_frac * pulse
        } else {
            1.0
        };
        for e in &comp.shape {
            let c: [f64; 3] = std::array::from_fn(|a| e.center[a] + offset[a]);
            let r: [f64; 3] = std::array::from_fn(|a| e.semi_axes[a] * scale);
            let range = |a: usize, n: usize| {
                let lo = (c[a] - r[a]).ceil().max(0.0) as usize;
                let hi = ((c[a] + r[a]).floor().min(n as f64 - 1.0)).max(-1.0);
                lo..(hi + 1.0) as usize
            };
            let value = T::lit(e.intensity);
            for ix in range(0, nx) {
                let dx = (ix as f64 - c[0]) / r[0];
                for iy in range(1, ny) {
                    let dy = (iy as f64 - c[1]) / r[1];
                    let dxy = dx * dx + dy * dy;
                    if dxy > 1.0 {
                        continue;
                    }
                    for iz in range(2, nz) {
                        let dz = (iz as f64 - c[2]) / r[2];
                        if dxy + dz * dz <= 1.0 {
                            vol[[ix, iy, iz]] += value;
                        }
                    }
                }
            }
        }
    }
    vol
}

/// Volume at a respiratory phase (fraction of a breath) and cardiac phase.
pub fn render_volume<T: Real>(phantom: &PhantomConfig, resp_phase: f64, cardiac_phase: f64) -> Array3<T> {
    let shift = NavShift {
        ap: respiration_shift(phantom.resp_amp_ap_px, resp_phase),
        si: respiration_shift(phantom.resp_amp_si_px, resp_phase),
    };
    render_state(phantom, shift, cardiac_phase)
}

/// Coil sensitivity volumes for `phantom.coils` receivers.
pub fn coil_maps<T: Real>(phantom: &PhantomConfig) -> Vec<Array3<Cplx<T>>> {
    let [nx, ny, nz] = phantom.grid;
    let cx = (nx as f64 - 1.0) / 2.0;
    let cz = (nz as f64 - 1.0) / 2.0;
    (0..phantom.coils)
        .map(|c| match phantom.coil_model {
            CoilModel::Uniform => Array3::from_elem((nx, ny, nz), Cplx::new(T::one(), T::zero())),
            CoilModel::Ring { width } => {
                let alpha = 2.0 * std::f64::consts::PI * c as f64 / phantom.coils as f64
                    + std::f64::consts::FRAC_PI_4;
                let (uc, vc) = (1.2 * alpha.cos(), 1.2 * alpha.sin());
                Array3::from_shape_fn((nx, ny, nz), |(ix, _iy, iz)| {
                    let u = (ix as f64 - cx) / (nx as f64 / 2.0);
                    let v = (iz as f64 - cz) / (nz as f64 / 2.0);
                    let d2 = (u - uc).powi(2) + (v - vc).powi(2);
                    let mag = (-d2 / (2.0 * width * width)).exp();
                    let phase = alpha + 0.5 * std::f64::consts::PI * u;
                    Cplx::new(T::lit(mag * phase.cos()), T::lit(mag * phase.sin()))
                })
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Displacement per navigation event.
    pub nav_shifts: Vec<NavShift>,
    /// Cardiac cycle fraction in `[0, 1)` per readout.
    pub cardiac_phase: Vec<f64>,
}

/// Multi-coil readouts keyed to a schedule.
#[derive(Clone, Debug)]
pub struct RawDataset<T> {
    pub schedule: SamplingSchedule,
    pub phantom: PhantomConfig,
    /// Readout-major, then coil, then `k_x`.
    pub samples: Vec<Cplx<T>>,
    pub coil_maps: Vec<Array3<Cplx<T>>>,
    pub trigger_times_s: Vec<f64>,
    pub truth: GroundTruth,
}

impl<T: Real> RawDataset<T> {
    pub fn coils(&self) -> usize {
        self.phantom.coils
    }

    pub fn nx(&self) -> usize {
        self.schedule.config.nx
    }

    pub fn readout_count(&self) -> usize {
        self.schedule.readouts.len()
    }

    /// The `k_x` line of one readout and coil.
    pub fn line(&self, readout: usize, coil: usize) -> &[Cplx<T>] {
        let nx = self.nx();
        let start = (readout * self.coils() + coil) * nx;
        &self.samples[start..start + nx]
    }
}

fn noise_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples every scheduled readout from the moving phantom.
///
/// Volumes are rendered once per distinct (displacement, cardiac level) state.
/// Noise for `(readout, coil)` comes from its own ChaCha stream, so the result
/// does not depend on thread scheduling.
pub fn simulate_acquisition<T: Real>(
    phantom: &PhantomConfig,
    schedule: &SamplingSchedule,
) -> Result<RawDataset<T>, PhantomError> {
    let pc = &schedule.config;
    let sched_grid = [pc.nx, pc.ny, pc.nz];
    if phantom.grid != sched_grid {
        return Err(PhantomError::ConfigMismatch {
            phantom: phantom.grid,
            schedule: sched_grid,
        });
    }
    phantom.validate()?;

    let nav_shifts: Vec<NavShift> = schedule
        .nav_events
        .iter()
        .map(|e| phantom.shift_at(e.time_s))
        .collect();
    let cardiac_phase: Vec<f64> = schedule
        .readouts
        .iter()
        .map(|r| phantom.cardiac_fraction(r.time_s))
        .collect();

    let mut groups: BTreeMap<(NavShift, usize), Vec<usize>> = BTreeMap::new();
    for r in &schedule.readouts {
        let shift = nav_shifts.get(r.nav_id).copied().unwrap_or_default();
        groups
            .entry((shift, phantom.cardiac_level(r.time_s)))
            .or_default()
            .push(r.index);
    }
    let groups: Vec<_> = groups.into_iter().collect();

    let maps = coil_maps::<T>(phantom);
    let coils = phantom.coils;
    let nx = pc.nx;
    let zero = Cplx::new(T::zero(), T::zero());

    let lines: Vec<Vec<(usize, Vec<Cplx<T>>)>> = groups
        .par_iter()
        .map(|((shift, level), members)| {
            let phase = *level as f64 / phantom.cardiac_levels as f64;
            let vol = render_state::<T>(phantom, *shift, phase);
            let mut planner = FftPlanner::new();
            let mut out = Vec::with_capacity(members.len() * coils);
            for (c, map) in maps.iter().enumerate() {
                let mut k = ndarray::Zip::from(&vol)
                    .and(map)
                    .map_collect(|&v, &s| s * v);
                fft::fftn(&mut k, &mut planner);
                for &ri in members {
                    let r = &schedule.readouts[ri];
                    let iy = index_of(r.ky as i64, pc.ny);
                    let iz = index_of(r.kz as i64, pc.nz);
                    let line: Vec<Cplx<T>> = (0..nx).map(|ix| k[[ix, iy, iz]]).collect();
                    out.push((ri * coils + c, line));
                }
            }
            out
        })
        .collect();

    let mut samples = vec![zero; schedule.readouts.len() * coils * nx];
    for group in lines {
        for (slot, line) in group {
            samples[slot * nx..(slot + 1) * nx].copy_from_slice(&line);
        }
    }

    if phantom.noise_sigma > 0.0 {
        let sigma = phantom.noise_sigma;
        samples
            .par_chunks_mut(nx)
            .enumerate()
            .for_each(|(slot, chunk)| {
                let mut rng = noise_rng(phantom.seed, slot as u64);
                for v in chunk.iter_mut() {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *v += Cplx::new(T::lit(re * sigma), T::lit(im * sigma));
                }
            });
    }

    Ok(RawDataset {
        schedule: schedule.clone(),
        phantom: phantom.clone(),
        samples,
        coil_maps: maps,
        trigger_times_s: phantom.trigger_times(pc.total_dur_s),
        truth: GroundTruth {
            nav_shifts,
            cardiac_phase,
        },
    })
}
