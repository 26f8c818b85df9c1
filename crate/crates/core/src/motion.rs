//! Respiratory motion from navigator images and from central `k`-space lines.
//!
//! The 2-D path matches reference ROIs from the first navigator against every
//! later navigator with an exhaustive integer-offset Pearson correlation
//! search, then uses a per-ROI PCA to decide which ROI reports motion along
//! each image axis. The 1-D path is the projection baseline: PCA over the
//! magnitude profiles of the `k_y = k_z = 0` readout.

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fft::{self, Direction};
use crate::navigator::NavImageSeries;
use crate::phantom::{MotionAxis, RawDataset};
use crate::scalar::{Cplx, Real};

/// Two correlations closer than this are treated as a tie.
const CC_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MotionError {
    #[error("every offset in the search window has a zero-variance patch")]
    DegeneratePatch,
    #[error("no ROI carries motion along {axes:?}")]
    DegenerateMotion {
        axes: Vec<ImageAxis>,
        /// Trace with the unserved axes held at zero.
        trace: Box<MotionTrace>,
    },
    #[error("invalid motion config: {0}")]
    Config(String),
    #[error("need at least {needed} navigator images, got {got}")]
    TooFewNavigators { needed: usize, got: usize },
    #[error("navigation event {0} has no k_y = k_z = 0 readout")]
    MissingNavData(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageAxis {
    X,
    Y,
}

/// Axis-aligned rectangle on a navigator image, `origin + size` exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub origin: [usize; 2],
    pub size: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    #[serde(flatten)]
    pub roi: Roi,
    /// Documentation hint only; assignment is decided by PCA.
    #[serde(default)]
    pub expected_axis: Option<MotionAxis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    pub rois: Vec<RoiSpec>,
    pub search_radius_px: usize,
}

impl Default for MotionConfig {
    /// ROIs for the default phantom: anterior chest wall and heart.
    fn default() -> Self {
        Self {
            rois: vec![
                RoiSpec {
                    roi: Roi {
                        origin: [18, 7],
                        size: [28, 16],
                    },
                    expected_axis: Some(MotionAxis::Ap),
                },
                RoiSpec {
                    roi: Roi {
                        origin: [12, 22],
                        size: [24, 20],
                    },
                    expected_axis: Some(MotionAxis::Si),
                },
            ],
            search_radius_px: 6,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self, dim: (usize, usize)) -> Result<(), MotionError> {
        if self.rois.is_empty() {
            return Err(MotionError::Config("at least one ROI required".into()));
        }
        let r = self.search_radius_px;
        for (i, spec) in self.rois.iter().enumerate() {
            let Roi { origin, size } = spec.roi;
            let fits = |a: usize, n: usize| origin[a] >= r && origin[a] + size[a] + r <= n;
            if size[0] < 2 || size[1] < 2 || !fits(0, dim.0) || !fits(1, dim.1) {
                return Err(MotionError::Config(format!(
                    "ROI {i} {:?} with search radius {r} does not fit a {dim:?} image",
                    spec.roi
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiMatch {
    pub shift: [i32; 2],
    pub cc: f64,
}

/// Mean and root of summed squared deviations.
fn patch_stats<T: Real>(p: ArrayView2<T>) -> (f64, f64) {
    let n = p.len() as f64;
    let mean = p.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let ss = p.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
    (mean, ss.sqrt())
}

fn is_degenerate<T: Real>(p: ArrayView2<T>, norm: f64) -> bool {
    let scale = p.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
    norm <= 1e-12 * scale * (p.len() as f64).sqrt() || norm == 0.0
}

/// Exhaustive Pearson-correlation search of `reference_roi` over `target`.
///
/// The reference patch sits at `origin` on the reference image; every offset
/// `|dx|, |dy| <= radius` of an equally sized patch on `target` is scored.
/// Ties prefer the smallest shift magnitude, then lexicographic `(dx, dy)`.
pub fn match_roi<T: Real>(
    reference_roi: ArrayView2<T>,
    target: ArrayView2<T>,
    origin: [usize; 2],
    radius: usize,
) -> Result<RoiMatch, MotionError> {
    let (w, h) = reference_roi.dim();
    let (tw, th) = target.dim();
    let r = radius as isize;
    if origin[0] < radius || origin[1] < radius || origin[0] + w + radius > tw || origin[1] + h + radius > th {
        return Err(MotionError::Config(format!(
            "search window at {origin:?} +/- {radius} exceeds target {:?}",
            target.dim()
        )));
    }
    let (ref_mean, ref_norm) = patch_stats(reference_roi);
    if is_degenerate(reference_roi, ref_norm) {
        return Err(MotionError::DegeneratePatch);
    }
    let centered: Vec<f64> = reference_roi.iter().map(|v| v.as_f64() - ref_mean).collect();

    let mut best: Option<(f64, [i32; 2])> = None;
    for dx in -r..=r {
        for dy in -r..=r {
            let x0 = (origin[0] as isize + dx) as usize;
            let y0 = (origin[1] as isize + dy) as usize;
            let patch = target.slice(s![x0..x0 + w, y0..y0 + h]);
            let (mean, norm) = patch_stats(patch);
            if is_degenerate(patch, norm) {
                continue;
            }
            let dot: f64 = patch
                .iter()
                .zip(&centered)
                .map(|(v, c)| (v.as_f64() - mean) * c)
                .sum();
            let cc = dot / (norm * ref_norm);
            let cand = [dx as i32, dy as i32];
            let better = match best {
                None => true,
                Some((bcc, bs)) => {
                    if cc > bcc + CC_TIE_EPS {
                        true
                    } else if cc + CC_TIE_EPS < bcc {
                        false
                    } else {
                        let key = |s: [i32; 2]| (s[0] * s[0] + s[1] * s[1], s[0], s[1]);
                        key(cand) < key(bs)
                    }
                }
            };
            if better {
                best = Some((cc, cand));
            }
        }
    }
    best.map(|(cc, shift)| RoiMatch { shift, cc })
        .ok_or(MotionError::DegeneratePatch)
}

/// First principal direction of one ROI's shift vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiPca {
    /// Unit vector; its largest-magnitude entry is positive.
    pub component: [f64; 2],
    pub eigenvalues: [f64; 2],
    pub explained_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    /// `None` for ROIs whose vectors have zero variance.
    pub per_roi: Vec<Option<RoiPca>>,
    pub x_roi: Option<usize>,
    pub y_roi: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavMotion {
    /// Per ROI; the reference navigator holds zero shifts with `cc = 1`.
    pub raw: Vec<RoiMatch>,
    pub comb: [i32; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionTrace {
    pub rois: Vec<Roi>,
    pub search_radius_px: usize,
    pub navs: Vec<NavMotion>,
    pub pca: PcaSummary,
}

impl MotionTrace {
    pub fn combined(&self) -> Vec<[i32; 2]> {
        self.navs.iter().map(|n| n.comb).collect()
    }
}

/// Eigen-decomposition of a symmetric 2x2 matrix `[[a, b], [b, c]]`,
/// eigenvalues descending, first eigenvector sign-normalized.
pub fn sym2_eigen(a: f64, b: f64, c: f64) -> ([f64; 2], [f64; 2]) {
    let tr = a + c;
    let diff = a - c;
    let disc = (diff * diff / 4.0 + b * b).sqrt();
    let l1 = tr / 2.0 + disc;
    let l2 = tr / 2.0 - disc;
    let v = if b.abs() > 1e-300 {
        [l1 - c, b]
    } else if a >= c {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let mut v = [v[0] / n, v[1] / n];
    let dominant = if v[0].abs() >= v[1].abs() { v[0] } else { v[1] };
    if dominant < 0.0 {
        v = [-v[0], -v[1]];
    }
    ([l1, l2], v)
}

fn roi_pca(vectors: &[[i32; 2]]) -> Option<RoiPca> {
    let n = vectors.len() as f64;
    if vectors.len() < 2 {
        return None;
    }
    let mx = vectors.iter().map(|v| v[0] as f64).sum::<f64>() / n;
    let my = vectors.iter().map(|v| v[1] as f64).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for v in vectors {
        let (dx, dy) = (v[0] as f64 - mx, v[1] as f64 - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let d = n - 1.0;
    let (sxx, sxy, syy) = (sxx / d, sxy / d, syy / d);
    if sxx + syy <= 0.0 {
        return None;
    }
    let (eigenvalues, component) = sym2_eigen(sxx, sxy, syy);
    Some(RoiPca {
        component,
        eigenvalues,
        explained_ratio: eigenvalues[0] / (sxx + syy),
    })
}

/// ROI serving `axis`: largest `|component[axis]| * explained_ratio`, lowest index on ties.
fn assign_axis(per_roi: &[Option<RoiPca>], axis: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in per_roi.iter().enumerate() {
        if let Some(p) = p {
            let score = p.component[axis].abs() * p.explained_ratio;
            if best.map_or(true, |(_, b)| score > b) {
                best = Some((i, score));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Per-navigator 2-D motion with `N_1` as the reference.
pub fn extract_motion_2d<T: Real>(
    navs: &NavImageSeries<T>,
    config: &MotionConfig,
) -> Result<MotionTrace, MotionError> {
    if navs.len() < 2 {
        return Err(MotionError::TooFewNavigators {
            needed: 2,
            got: navs.len(),
        });
    }
    config.validate(navs.dim())?;
    let reference = &navs.images[0];
    let radius = config.search_radius_px;
    let rois: Vec<Roi> = config.rois.iter().map(|s| s.roi).collect();

    let patches: Vec<Array2<T>> = rois
        .iter()
        .map(|r| {
            reference
                .slice(s![
                    r.origin[0]..r.origin[0] + r.size[0],
                    r.origin[1]..r.origin[1] + r.size[1]
                ])
                .to_owned()
        })
        .collect();

    let mut matches: Vec<Vec<RoiMatch>> = navs.images[1..]
        .par_iter()
        .map(|img| {
            rois.iter()
                .zip(&patches)
                .map(|(r, p)| match_roi(p.view(), img.view(), r.origin, radius))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let identity = RoiMatch {
        shift: [0, 0],
        cc: 1.0,
    };
    matches.insert(0, vec![identity; rois.len()]);

    let per_roi: Vec<Option<RoiPca>> = (0..rois.len())
        .map(|r| {
            let v: Vec<[i32; 2]> = matches[1..].iter().map(|m| m[r].shift).collect();
            roi_pca(&v)
        })
        .collect();
    let x_roi = assign_axis(&per_roi, 0);
    let y_roi = assign_axis(&per_roi, 1);

    let navs_out = matches
        .into_iter()
        .enumerate()
        .map(|(i, raw)| {
            let comb = if i == 0 {
                [0, 0]
            } else {
                [
                    x_roi.map_or(0, |r| raw[r].shift[0]),
                    y_roi.map_or(0, |r| raw[r].shift[1]),
                ]
            };
            NavMotion { raw, comb }
        })
        .collect();

    let trace = MotionTrace {
        rois,
        search_radius_px: radius,
        navs: navs_out,
        pca: PcaSummary {
            per_roi,
            x_roi,
            y_roi,
        },
    };
    let mut missing = Vec::new();
    if x_roi.is_none() {
        missing.push(ImageAxis::X);
    }
    if y_roi.is_none() {
        missing.push(ImageAxis::Y);
    }
    if missing.is_empty() {
        Ok(trace)
    } else {
        Err(MotionError::DegenerateMotion {
            axes: missing,
            trace: Box::new(trace),
        })
    }
}

/// Scalar respiratory surrogate per navigator from the 1-D projection baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace1d {
    pub scores: Vec<f64>,
    pub explained_ratio: f64,
}

/// First principal direction of the rows of `data` (observations x features)
/// by power iteration on the smaller Gram/covariance matrix.
pub fn first_principal_scores(data: &Array2<f64>) -> (Vec<f64>, f64) {
    let (n, d) = data.dim();
    let mean = data.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = data - &mean;
    let total: f64 = centered.iter().map(|v| v * v).sum();
    if n < 2 || total <= 1e-300 {
        return (vec![0.0; n], 0.0);
    }
    let use_gram = n <= d;
    let m = if use_gram {
        centered.dot(&centered.t())
    } else {
        centered.t().dot(&centered)
    };
    let k = m.nrows();
    // Deterministic start that is not orthogonal to typical leading vectors.
    let mut v = ndarray::Array1::from_shape_fn(k, |i| 1.0 + (i as f64 * 0.618_033_988_749).fract());
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let w = m.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm <= 1e-300 {
            break;
        }
        let next = &w / norm;
        let delta = (&next - &v).mapv(f64::abs).sum();
        v = next;
        lambda = norm;
        if delta < 1e-13 * k as f64 {
            break;
        }
    }
    let scores: ndarray::Array1<f64> = if use_gram {
        // Gram eigenvector u gives scores sqrt(lambda) * u.
        &v * lambda.sqrt()
    } else {
        let scores = centered.dot(&v);
        let (i_max, _) = v
            .iter()
            .enumerate()
            .fold((0, 0.0), |b, (i, x)| if x.abs() > b.1 { (i, x.abs()) } else { b });
        if v[i_max] < 0.0 {
            -scores
        } else {
            scores
        }
    };
    let mut scores = scores.to_vec();
    if use_gram {
        // Sign from the feature-space loading: largest-magnitude entry positive.
        let loading = centered.t().dot(&ndarray::Array1::from(scores.clone()));
        let (i_max, _) = loading
            .iter()
            .enumerate()
            .fold((0, 0.0), |b, (i, x)| if x.abs() > b.1 { (i, x.abs()) } else { b });
        if loading[i_max] < 0.0 {
            scores.iter_mut().for_each(|s| *s = -*s);
        }
    }
    (scores, lambda / total)
}

/// Central-line baseline: per navigator, magnitude of the 1-D inverse
/// transform of the `k_y = k_z = 0` line of every coil, then PCA.
pub fn extract_motion_1d<T: Real>(raw: &RawDataset<T>) -> Result<Trace1d, MotionError> {
    let sched = &raw.schedule;
    let nx = raw.nx();
    let coils = raw.coils();
    let events = &sched.nav_events;
    let mut features = Array2::<f64>::zeros((events.len(), nx * coils));
    let mut planner = FftPlanner::new();
    for (i, e) in events.iter().enumerate() {
        let ri = e
            .readouts()
            .find(|&r| {
                let d = &sched.readouts[r];
                d.ky == 0 && d.kz == 0
            })
            .ok_or(MotionError::MissingNavData(e.nav_id))?;
        for c in 0..coils {
            let mut line = ndarray::Array1::from(raw.line(ri, c).to_vec());
            fft::fft_axis(&mut line, 0, Direction::Inverse, &mut planner);
            for (x, v) in line.iter().enumerate() {
                features[[i, c * nx + x]] = Cplx::norm(*v).as_f64();
            }
        }
    }
    let (scores, explained_ratio) = first_principal_scores(&features);
    Ok(Trace1d {
        scores,
        explained_ratio,
    })
}
