//! Cardiac-phase-resolved volume reconstruction from a readout selection.
//!
//! Two modes: zero-filled adjoint, and a coil-by-coil proximal-gradient
//! solver for `1/2 ||M F x - y||^2 + lambda ||W x||_1` with a unitary Fourier
//! transform `F`, sampling mask `M` and orthogonal Daubechies wavelet `W`
//! whose coarsest approximation band is left unpenalized. Coils are combined
//! by root sum of squares in both modes.

use ndarray::{Array2, Array3, Zip};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::BinSelection;
use crate::fft::{self, index_of};
use crate::phantom::RawDataset;
use crate::scalar::{Cplx, Real};
use crate::wavelet::{SeparableDwt, Wavelet};

#[derive(Debug, Error, PartialEq)]
pub enum ReconError {
    #[error("cardiac phase {0} received no samples")]
    EmptyPhase(usize),
    #[error("readout index {0} out of range")]
    BadIndex(usize),
    #[error("phase label {label} out of range for {phases} phases")]
    BadPhase { label: usize, phases: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReconMode {
    ZeroFilled,
    CsWavelet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconParams {
    /// Threshold relative to the largest detail coefficient of the zero-filled image.
    pub lambda_rel: f64,
    pub iterations: usize,
    pub levels: usize,
    pub wavelet: Wavelet,
}

impl Default for ReconParams {
    fn default() -> Self {
        Self {
            lambda_rel: 0.01,
            iterations: 30,
            levels: 3,
            wavelet: Wavelet::Db4,
        }
    }
}

/// Per-phase, per-coil averaged k-space with its phase-encode occupancy.
#[derive(Clone, Debug)]
pub struct GriddedKspace<T> {
    /// `kspace[phase][coil]`, each `(nx, ny, nz)`.
    pub kspace: Vec<Vec<Array3<Cplx<T>>>>,
    /// `(ny, nz)` hit counts per phase.
    pub hits: Vec<Array2<u32>>,
}

impl<T> GriddedKspace<T> {
    pub fn occupancy_fraction(&self, phase: usize) -> f64 {
        let h = &self.hits[phase];
        h.iter().filter(|&&c| c > 0).count() as f64 / h.len() as f64
    }
}

/// Accumulates readouts into their k-space cells and averages repeated hits.
pub fn grid_adjoint<T: Real>(
    raw: &RawDataset<T>,
    readout_indices: &[usize],
    phase_assignment: &[usize],
    phases: usize,
) -> Result<GriddedKspace<T>, ReconError> {
    let cfg = &raw.schedule.config;
    let (nx, ny, nz) = (cfg.nx, cfg.ny, cfg.nz);
    let coils = raw.coils();
    let mut kspace = vec![vec![Array3::<Cplx<T>>::zeros((nx, ny, nz)); coils]; phases];
    let mut hits = vec![Array2::<u32>::zeros((ny, nz)); phases];
    for (&ri, &p) in readout_indices.iter().zip(phase_assignment) {
        let r = raw.schedule.readouts.get(ri).ok_or(ReconError::BadIndex(ri))?;
        if p >= phases {
            return Err(ReconError::BadPhase { label: p, phases });
        }
        let iy = index_of(r.ky as i64, ny);
        let iz = index_of(r.kz as i64, nz);
        hits[p][[iy, iz]] += 1;
        for (c, k) in kspace[p].iter_mut().enumerate() {
            for (ix, &v) in raw.line(ri, c).iter().enumerate() {
                k[[ix, iy, iz]] += v;
            }
        }
    }
    for (p, (ks, h)) in kspace.iter_mut().zip(&hits).enumerate() {
        if h.iter().all(|&c| c == 0) {
            return Err(ReconError::EmptyPhase(p));
        }
        for k in ks.iter_mut() {
            Zip::indexed(k).for_each(|(_, iy, iz), v| {
                let n = h[[iy, iz]];
                if n > 1 {
                    *v = *v / T::lit(n as f64);
                }
            });
        }
    }
    Ok(GriddedKspace { kspace, hits })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub phase: usize,
    pub coil: usize,
    pub lambda: f64,
    /// Objective before the first iteration, then after each one.
    pub objective: Vec<f64>,
    pub non_convergence: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub mode: ReconMode,
    pub params: ReconParams,
    pub readouts_used: usize,
    pub fraction_selected: f64,
    pub iteration_logs: Vec<IterationLog>,
}

impl VolumeMeta {
    pub fn non_convergence(&self) -> bool {
        self.iteration_logs.iter().any(|l| l.non_convergence)
    }
}

/// Magnitude volumes, one per cardiac phase.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSeries<T> {
    pub volumes: Vec<Array3<T>>,
    pub meta: VolumeMeta,
}

impl<T: Real> VolumeSeries<T> {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.volumes[0].dim()
    }

    pub fn phases(&self) -> usize {
        self.volumes.len()
    }
}

fn sos3<T: Real>(coils: &[Array3<Cplx<T>>]) -> Array3<T> {
    let mut acc = Array3::<T>::zeros(coils[0].dim());
    for c in coils {
        acc.zip_mut_with(c, |a, v| *a += v.norm_sqr());
    }
    acc.mapv_inplace(|v| v.sqrt());
    acc
}

fn apply_mask<T: Real>(k: &mut Array3<Cplx<T>>, hits: &Array2<u32>) {
    let zero = Cplx::new(T::zero(), T::zero());
    Zip::indexed(k).for_each(|(_, iy, iz), v| {
        if hits[[iy, iz]] == 0 {
            *v = zero;
        }
    });
}

struct WaveletOp<T> {
    dwt: SeparableDwt<T>,
    /// True where a coefficient is penalized.
    detail: Array3<bool>,
}

impl<T: Real> WaveletOp<T> {
    fn new(wavelet: Wavelet, shape: [usize; 3], levels: usize) -> Self {
        let dwt = SeparableDwt::new(wavelet, &shape, levels);
        let detail = Array3::from_shape_fn((shape[0], shape[1], shape[2]), |(i, j, k)| {
            !dwt.is_approximation(&[i, j, k], &shape)
        });
        Self { dwt, detail }
    }

    fn detail_l1(&self, w: &Array3<Cplx<T>>) -> f64 {
        let mut acc = 0.0;
        Zip::from(w).and(&self.detail).for_each(|v, &d| {
            if d {
                acc += v.norm().as_f64();
            }
        });
        acc
    }

    fn max_detail(&self, w: &Array3<Cplx<T>>) -> f64 {
        let mut m = 0.0f64;
        Zip::from(w).and(&self.detail).for_each(|v, &d| {
            if d {
                m = m.max(v.norm().as_f64());
            }
        });
        m
    }

    /// Complex soft threshold of the detail coefficients.
    fn shrink(&self, w: &mut Array3<Cplx<T>>, lambda: T) {
        Zip::from(w).and(&self.detail).for_each(|v, &d| {
            if !d {
                return;
            }
            let mag = v.norm();
            if mag <= lambda {
                *v = Cplx::new(T::zero(), T::zero());
            } else {
                *v = *v * ((mag - lambda) / mag);
            }
        });
    }
}

/// `M F x - y` with the unitary transform.
fn data_residual<T: Real>(
    x: &Array3<Cplx<T>>,
    y: &Array3<Cplx<T>>,
    hits: &Array2<u32>,
    planner: &mut FftPlanner<T>,
) -> Array3<Cplx<T>> {
    let mut k = x.clone();
    fft::fftn_ortho(&mut k, planner);
    apply_mask(&mut k, hits);
    k.zip_mut_with(y, |a, &b| *a -= b);
    k
}

fn half_norm_sqr<T: Real>(r: &Array3<Cplx<T>>) -> f64 {
    0.5 * r.iter().map(|v| v.norm_sqr().as_f64()).sum::<f64>()
}

/// Proximal-gradient reconstruction of one coil; `y` is unitary-scaled masked k-space.
fn cs_coil<T: Real>(
    y: &Array3<Cplx<T>>,
    hits: &Array2<u32>,
    op: &WaveletOp<T>,
    params: &ReconParams,
    phase: usize,
    coil: usize,
) -> (Array3<Cplx<T>>, IterationLog) {
    let mut planner = FftPlanner::new();
    let mut x = y.clone();
    fft::ifftn_ortho(&mut x, &mut planner);

    let mut w = x.clone();
    op.dwt.forward(&mut w);
    let lambda = params.lambda_rel * op.max_detail(&w);
    let lambda_t = T::lit(lambda);

    let mut r = data_residual(&x, y, hits, &mut planner);
    let mut log = IterationLog {
        phase,
        coil,
        lambda,
        objective: vec![half_norm_sqr(&r) + lambda * op.detail_l1(&w)],
        non_convergence: false,
    };
    for _ in 0..params.iterations {
        // Unit step: the gradient step restores the measured samples.
        fft::ifftn_ortho(&mut r, &mut planner);
        x.zip_mut_with(&r, |a, &b| *a -= b);
        op.dwt.forward(&mut x);
        op.shrink(&mut x, lambda_t);
        // The transform is orthogonal, so the penalty can be read off the shrunk coefficients.
        let penalty = op.detail_l1(&x);
        op.dwt.inverse(&mut x);
        r = data_residual(&x, y, hits, &mut planner);
        let obj = half_norm_sqr(&r) + lambda * penalty;
        let prev = *log.objective.last().expect("seeded");
        if log.objective.len() > 1 && obj > prev * (1.0 + 1e-6) + 1e-300 {
            log.non_convergence = true;
        }
        log.objective.push(obj);
    }
    (x, log)
}

/// Reconstructs every cardiac phase from the labelled readouts of `bins`.
pub fn reconstruct<T: Real>(
    raw: &RawDataset<T>,
    bins: &BinSelection,
    mode: ReconMode,
    params: &ReconParams,
) -> Result<VolumeSeries<T>, ReconError> {
    let (indices, labels): (Vec<usize>, Vec<usize>) = bins.labelled().unzip();
    let grid = grid_adjoint(raw, &indices, &labels, bins.phases)?;
    let cfg = &raw.schedule.config;
    let shape = [cfg.nx, cfg.ny, cfg.nz];
    let coils = raw.coils();

    let jobs: Vec<(usize, usize)> = (0..bins.phases)
        .flat_map(|p| (0..coils).map(move |c| (p, c)))
        .collect();
    let op = WaveletOp::new(params.wavelet, shape, params.levels);
    let unitary = T::one() / T::lit((shape.iter().product::<usize>() as f64).sqrt());

    let results: Vec<(Array3<Cplx<T>>, Option<IterationLog>)> = jobs
        .par_iter()
        .map(|&(p, c)| {
            let k = &grid.kspace[p][c];
            match mode {
                ReconMode::ZeroFilled => {
                    let mut img = k.clone();
                    fft::ifftn(&mut img, &mut FftPlanner::new());
                    (img, None)
                }
                ReconMode::CsWavelet => {
                    let y = k.mapv(|v| v * unitary);
                    let (img, log) = cs_coil(&y, &grid.hits[p], &op, params, p, c);
                    (img, Some(log))
                }
            }
        })
        .collect();

    let mut logs = Vec::new();
    let mut per_phase: Vec<Vec<Array3<Cplx<T>>>> = vec![Vec::with_capacity(coils); bins.phases];
    for ((p, _), (img, log)) in jobs.iter().zip(results) {
        per_phase[*p].push(img);
        logs.extend(log);
    }
    Ok(VolumeSeries {
        volumes: per_phase.iter().map(|c| sos3(c)).collect(),
        meta: VolumeMeta {
            mode,
            params: params.clone(),
            readouts_used: indices.len(),
            fraction_selected: bins.fraction_selected,
            iteration_logs: logs,
        },
    })
}
