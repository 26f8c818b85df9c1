//! Image-quality metrics per (slice, cardiac phase) and their statistics.

use std::fmt::Write as _;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::recon::VolumeSeries;
use crate::scalar::Real;
use crate::wavelet::{diagonal_detail, Wavelet};

const HIST_BINS: usize = 256;
/// Median absolute deviation of a standard normal.
const MAD_NORMAL: f64 = 0.6745;
const Z_95: f64 = 1.96;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("slice {0:?} is smaller than the 16x16 minimum for noise estimation")]
    TooSmall((usize, usize)),
    #[error("paired test needs at least 3 pairs, got {0}")]
    InsufficientSamples(usize),
    #[error("sample sets differ in length: {0} vs {1}")]
    Unpaired(usize, usize),
    #[error("volume series have different shapes")]
    ShapeMismatch,
}

/// Shannon entropy in bits of a 256-bin histogram after min/max normalization.
pub fn histogram_entropy<T: Real>(image: ArrayView2<T>) -> f64 {
    let (lo, hi) = image
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let v = v.as_f64();
            (lo.min(v), hi.max(v))
        });
    if image.is_empty() || !(hi > lo) {
        return 0.0;
    }
    let mut counts = [0usize; HIST_BINS];
    for v in image.iter() {
        let u = (v.as_f64() - lo) / (hi - lo);
        let b = ((u * HIST_BINS as f64).floor() as usize).min(HIST_BINS - 1);
        counts[b] += 1;
    }
    let n = image.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Anisotropic total variation with forward differences and no wraparound.
pub fn total_variation<T: Real>(image: ArrayView2<T>) -> f64 {
    let mut tv = 0.0;
    for axis in 0..2 {
        for lane in image.lanes(Axis(axis)) {
            for w in lane.windows(2) {
                tv += (w[1] - w[0]).abs().as_f64();
            }
        }
    }
    tv
}

/// Robust Gaussian noise std from the finest diagonal Daubechies-8 details.
pub fn sigma_noise<T: Real>(image: ArrayView2<T>) -> Result<f64, MetricsError> {
    let (r, c) = image.dim();
    if r < 16 || c < 16 {
        return Err(MetricsError::TooSmall((r, c)));
    }
    let mut hh: Vec<f64> = diagonal_detail(image, Wavelet::Db8)
        .into_iter()
        .map(|v| v.as_f64().abs())
        .collect();
    Ok(median(&mut hh) / MAD_NORMAL)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1`).
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let half = Z_95 * std / (n.max(1) as f64).sqrt();
        Self {
            n,
            mean,
            std,
            ci_low: mean - half,
            ci_high: mean + half,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub p: f64,
    /// Differences had zero variance; `t` is 0 or infinite by convention.
    pub degenerate: bool,
}

/// Paired two-sided Student's t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Unpaired(a.len(), b.len()));
    }
    let n = a.len();
    if n < 3 {
        return Err(MetricsError::InsufficientSamples(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = Summary::of(&d);
    if s.std == 0.0 {
        return Ok(if s.mean == 0.0 {
            TTest { n, mean_diff: 0.0, t: 0.0, p: 1.0, degenerate: true }
        } else {
            TTest {
                n,
                mean_diff: s.mean,
                t: f64::INFINITY.copysign(s.mean),
                p: 0.0,
                degenerate: true,
            }
        });
    }
    let t = s.mean / (s.std / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 2");
    // Survival function keeps relative accuracy deep in the tail.
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TTest { n, mean_diff: s.mean, t, p, degenerate: false })
}

/// Ranks starting at 1, ties get their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub slice: usize,
    pub phase: usize,
    pub h: f64,
    pub tv: f64,
    pub sigma_noise: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    H,
    Tv,
    SigmaNoise,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::H, Metric::Tv, Metric::SigmaNoise];

    pub fn of(self, s: &SampleMetrics) -> f64 {
        match self {
            Metric::H => s.h,
            Metric::Tv => s.tv,
            Metric::SigmaNoise => s.sigma_noise,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::H => "H",
            Metric::Tv => "TV",
            Metric::SigmaNoise => "sigma_noise",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    pub samples: Vec<SampleMetrics>,
    pub h: Summary,
    pub tv: Summary,
    pub sigma_noise: Summary,
}

impl MethodReport {
    pub fn values(&self, metric: Metric) -> Vec<f64> {
        self.samples.iter().map(|s| metric.of(s)).collect()
    }

    pub fn summary(&self, metric: Metric) -> &Summary {
        match metric {
            Metric::H => &self.h,
            Metric::Tv => &self.tv,
            Metric::SigmaNoise => &self.sigma_noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metric: Metric,
    pub test: TTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub methods: Vec<MethodReport>,
    pub comparisons: Vec<Comparison>,
}

/// Metrics of every `z` slice of every cardiac phase, slice-major within phase.
pub fn evaluate<T: Real>(name: &str, vols: &VolumeSeries<T>) -> Result<MethodReport, MetricsError> {
    let mut samples = Vec::new();
    for (phase, vol) in vols.volumes.iter().enumerate() {
        for (slice, img) in vol.axis_iter(Axis(2)).enumerate() {
            samples.push(SampleMetrics {
                slice,
                phase,
                h: histogram_entropy(img),
                tv: total_variation(img),
                sigma_noise: sigma_noise(img)?,
            });
        }
    }
    Ok(method_report(name, samples))
}

pub fn method_report(name: &str, samples: Vec<SampleMetrics>) -> MethodReport {
    let col = |m: Metric| samples.iter().map(|s| m.of(s)).collect::<Vec<_>>();
    MethodReport {
        name: name.to_string(),
        h: Summary::of(&col(Metric::H)),
        tv: Summary::of(&col(Metric::Tv)),
        sigma_noise: Summary::of(&col(Metric::SigmaNoise)),
        samples,
    }
}

/// Paired tests of every metric between two methods sharing (slice, phase) samples.
pub fn compare(a: &MethodReport, b: &MethodReport) -> Result<Vec<Comparison>, MetricsError> {
    let keyed = |r: &MethodReport| r.samples.iter().map(|s| (s.slice, s.phase)).collect::<Vec<_>>();
    if keyed(a) != keyed(b) {
        return Err(MetricsError::ShapeMismatch);
    }
    Metric::ALL
        .iter()
        .map(|&metric| {
            Ok(Comparison {
                a: a.name.clone(),
                b: b.name.clone(),
                metric,
                test: paired_t_test(&a.values(metric), &b.values(metric))?,
            })
        })
        .collect()
}

/// Report over several methods with all pairwise comparisons.
pub fn build_report(methods: Vec<MethodReport>) -> Result<MetricsReport, MetricsError> {
    let mut comparisons = Vec::new();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            comparisons.extend(compare(&methods[i], &methods[j])?);
        }
    }
    Ok(MetricsReport { methods, comparisons })
}

impl MetricsReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn comparison(&self, a: &str, b: &str, metric: Metric) -> Option<TTest> {
        self.comparisons.iter().find_map(|c| {
            if c.metric != metric {
                None
            } else if c.a == a && c.b == b {
                Some(c.test)
            } else if c.a == b && c.b == a {
                Some(TTest { t: -c.test.t, mean_diff: -c.test.mean_diff, ..c.test })
            } else {
                None
            }
        })
    }

    /// Plain-text table: mean +/- std [95% CI] per method and metric, then p-values.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>30} {:>34} {:>30}",
            "Method", "H", "TV", "sigma_noise"
        );
        for m in &self.methods {
            let cell = |s: &Summary, prec: usize| {
                format!(
                    "{:.p$} +/- {:.p$} [{:.p$}, {:.p$}]",
                    s.mean,
                    s.std,
                    s.ci_low,
                    s.ci_high,
                    p = prec
                )
            };
            let _ = writeln!(
                out,
                "{:<10} {:>30} {:>34} {:>30}",
                m.name,
                cell(&m.h, 3),
                cell(&m.tv, 1),
                cell(&m.sigma_noise, 4)
            );
        }
        let _ = writeln!(out);
        for c in &self.comparisons {
            let _ = writeln!(
                out,
                "{} vs {} ({}): t = {:.3}, p = {:.3e}, n = {}",
                c.a,
                c.b,
                c.metric.label(),
                c.test.t,
                c.test.p,
                c.test.n
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn entropy_conventions() {
        let flat = Array2::from_elem((8, 8), 4.2f64);
        assert_eq!(histogram_entropy(flat.view()), 0.0);
        let levels = Array2::from_shape_fn((16, 16), |(i, j)| (i * 16 + j) as f64 / 255.0 * 7.0 - 1.0);
        assert_eq!(histogram_entropy(levels.view()), 8.0);
        let scaled = levels.mapv(|v| 3.0 * v + 10.0);
        assert_eq!(histogram_entropy(scaled.view()), 8.0);
    }

    #[test]
    fn tv_hand_values() {
        let c = Array2::from_elem((5, 7), 2.5f64);
        assert_eq!(total_variation(c.view()), 0.0);
        let img = ndarray::arr2(&[[0.0, 1.0], [0.0, 1.0]]);
        assert_eq!(total_variation(img.view()), 2.0);
        // Step of height h across a boundary of length L.
        let (h, l) = (3.5, 12);
        let step = Array2::from_shape_fn((l, 20), |(_, j)| if j < 9 { 0.0 } else { h });
        let mut direct = 0.0;
        for i in 0..l {
            for j in 0..19 {
                direct += (step[[i, j + 1]] - step[[i, j]]) as f64;
            }
        }
        assert_eq!(total_variation(step.view()), direct);
        assert_eq!(direct, h * l as f64);
    }

    #[test]
    fn sigma_noise_errors_and_zero() {
        let z = Array2::<f64>::zeros((32, 32));
        assert_eq!(sigma_noise(z.view()).unwrap(), 0.0);
        let small = Array2::<f64>::zeros((15, 32));
        assert_eq!(sigma_noise(small.view()), Err(MetricsError::TooSmall((15, 32))));
    }

    fn noise_image(seed: u64, sigma: f64, ramp: bool) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma).unwrap();
        Array2::from_shape_fn((256, 256), |(i, j)| {
            let base = if ramp { 0.4 * i as f64 + 0.25 * j as f64 } else { 0.0 };
            base + n.sample(&mut rng)
        })
    }

    #[test]
    fn sigma_noise_monte_carlo() {
        let mut est = Vec::new();
        for seed in 0..100 {
            let e = sigma_noise(noise_image(seed, 5.0, false).view()).unwrap();
            assert!((e - 5.0).abs() <= 0.5, "seed {seed}: {e}");
            est.push(e);
        }
        let mean = est.iter().sum::<f64>() / est.len() as f64;
        assert!((mean - 5.0).abs() / 5.0 <= 0.02, "mean {mean}");
        for seed in 0..20 {
            let e = sigma_noise(noise_image(1000 + seed, 3.0, true).view()).unwrap();
            assert!((e - 3.0).abs() <= 0.3, "ramp seed {seed}: {e}");
        }
    }

    #[test]
    fn metrics_scale_linearly() {
        let img = noise_image(3, 2.0, true);
        let a = 3.7;
        let scaled = img.mapv(|v| a * v);
        let tv0 = total_variation(img.view());
        assert!((total_variation(scaled.view()) - a * tv0).abs() < 1e-9 * a * tv0);
        let s0 = sigma_noise(img.view()).unwrap();
        assert!((sigma_noise(scaled.view()).unwrap() - a * s0).abs() < 1e-9 * a * s0);
        let h0 = histogram_entropy(img.view());
        assert!((histogram_entropy(scaled.mapv(|v| v + 5.0).view()) - h0).abs() < 1e-12);
    }

    #[test]
    fn t_test_conventions() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let b = [0.0, 1.0, 2.0, 3.0, 4.0];
        let c = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_t_test(&c, &b).unwrap();
        assert!(r.degenerate && r.p == 0.0 && r.t.is_infinite());
        assert_eq!(paired_t_test(&a[..2], &a[..2]), Err(MetricsError::InsufficientSamples(2)));
    }

    #[test]
    fn t_test_is_antisymmetric() {
        let a = [3.1, 2.7, 4.4, 5.0, 3.3, 2.9];
        let b = [2.9, 2.8, 4.0, 4.1, 3.5, 2.0];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p, ba.p);
    }

    #[test]
    fn spearman_hand_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 90.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        // Ties: ranks (1.5, 1.5, 3) vs (1, 2, 3).
        let r = spearman(&[0.0, 0.0, 1.0], &[1.0, 2.0, 3.0]);
        assert!((r - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn summary_ci() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s.std - sd).abs() < 1e-15);
        assert!((s.ci_high - (2.5 + 1.96 * sd / 2.0)).abs() < 1e-15);
        assert!(s.ci_low <= s.ci_high);
    }
}
