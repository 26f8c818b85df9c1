//! Orthogonal Daubechies wavelets with periodic boundary handling.
//!
//! Multi-dimensional transforms are separable: each axis gets its own
//! multi-level 1-D decomposition, which keeps the transform orthogonal for any
//! even axis length divisible by `2^levels`.

use ndarray::{Array, ArrayView2, Axis, Dimension};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Values a real filter bank can act on: the scalar itself or a complex number.
pub trait Coefficient<T>: Copy + num_traits::Zero + std::ops::AddAssign + std::ops::Mul<T, Output = Self> {}

impl<T: Real> Coefficient<T> for T {}
impl<T: Real> Coefficient<T> for crate::scalar::Cplx<T> {}

// Decomposition low-pass filters, 4 and 8 vanishing moments.
const DB4_LO: [f64; 8] = [
    -0.010597401785069032,
    0.032883011666885200,
    0.030841381835560764,
    -0.18703481171909308,
    -0.027983769416859854,
    0.63088076792985891,
    0.71484657055291565,
    0.23037781330889650,
];

const DB8_LO: [f64; 16] = [
    -0.00011747678412476953,
    0.00067544940645056937,
    -0.00039174037337694705,
    -0.0048703529934515743,
    0.0087460940474057767,
    0.013981027917398282,
    -0.044088253930794752,
    -0.017369301001807546,
    0.12874742662047846,
    0.00047248457391328277,
    -0.28401554296154693,
    -0.015829105256349306,
    0.58535468365420671,
    0.67563073629728981,
    0.31287159091429997,
    0.054415842243104010,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wavelet {
    /// Daubechies, 4 vanishing moments (8 taps).
    Db4,
    /// Daubechies, 8 vanishing moments (16 taps).
    Db8,
}

impl Wavelet {
    pub fn low_pass(self) -> &'static [f64] {
        match self {
            Wavelet::Db4 => &DB4_LO,
            Wavelet::Db8 => &DB8_LO,
        }
    }
}

/// Quadrature mirror filter pair in the working precision.
#[derive(Clone, Debug)]
pub struct FilterBank<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real> FilterBank<T> {
    pub fn new(wavelet: Wavelet) -> Self {
        let lo: Vec<T> = wavelet.low_pass().iter().map(|&c| T::lit(c)).collect();
        let len = lo.len();
        let hi = (0..len)
            .map(|j| {
                let c = lo[len - 1 - j];
                if j % 2 == 0 {
                    c
                } else {
                    -c
                }
            })
            .collect();
        Self { lo, hi }
    }

    /// One analysis step on `x` (even length): approximation then detail into `out`.
    pub fn analyze<V: Coefficient<T>>(&self, x: &[V], out: &mut [V]) {
        let n = x.len();
        let half = n / 2;
        let taps = self.lo.len();
        for k in 0..half {
            let mut a = V::zero();
            let mut d = V::zero();
            if 2 * k + taps <= n {
                let w = &x[2 * k..2 * k + taps];
                for ((&l, &h), &v) in self.lo.iter().zip(&self.hi).zip(w) {
                    a += v * l;
                    d += v * h;
                }
            } else {
                for (j, (&l, &h)) in self.lo.iter().zip(&self.hi).enumerate() {
                    let v = x[(2 * k + j) % n];
                    a += v * l;
                    d += v * h;
                }
            }
            out[k] = a;
            out[half + k] = d;
        }
    }

    /// Exact inverse (transpose) of [`FilterBank::analyze`].
    pub fn synthesize<V: Coefficient<T>>(&self, coeffs: &[V], out: &mut [V]) {
        let n = coeffs.len();
        let half = n / 2;
        let taps = self.lo.len();
        out.iter_mut().for_each(|v| *v = V::zero());
        for k in 0..half {
            let a = coeffs[k];
            let d = coeffs[half + k];
            if 2 * k + taps <= n {
                let w = &mut out[2 * k..2 * k + taps];
                for ((&l, &h), o) in self.lo.iter().zip(&self.hi).zip(w) {
                    *o += a * l;
                    *o += d * h;
                }
            } else {
                for (j, (&l, &h)) in self.lo.iter().zip(&self.hi).enumerate() {
                    out[(2 * k + j) % n] += a * l;
                    out[(2 * k + j) % n] += d * h;
                }
            }
        }
    }

    /// Multi-level forward transform in place; approximation ends up first.
    pub fn forward_levels<V: Coefficient<T>>(&self, data: &mut [V], levels: usize, work: &mut Vec<V>) {
        let mut len = data.len();
        for _ in 0..levels {
            work.clear();
            work.resize(len, V::zero());
            self.analyze(&data[..len], work);
            data[..len].copy_from_slice(work);
            len /= 2;
        }
    }

    pub fn inverse_levels<V: Coefficient<T>>(&self, data: &mut [V], levels: usize, work: &mut Vec<V>) {
        let n = data.len();
        for level in (0..levels).rev() {
            let len = n >> level;
            work.clear();
            work.resize(len, V::zero());
            self.synthesize(&data[..len], work);
            data[..len].copy_from_slice(work);
        }
    }
}

/// Largest level count `<= requested` for which the axis length stays even at every step.
pub fn admissible_levels(len: usize, requested: usize) -> usize {
    let mut levels = 0;
    let mut n = len;
    while levels < requested && n >= 2 && n % 2 == 0 {
        n /= 2;
        levels += 1;
    }
    levels
}

/// Separable multi-level orthogonal transform over an n-D real array.
#[derive(Clone, Debug)]
pub struct SeparableDwt<T> {
    bank: FilterBank<T>,
    levels: Vec<usize>,
}

impl<T: Real> SeparableDwt<T> {
    /// Uses up to `levels` decompositions on every axis of `shape`.
    pub fn new(wavelet: Wavelet, shape: &[usize], levels: usize) -> Self {
        Self {
            bank: FilterBank::new(wavelet),
            levels: shape.iter().map(|&n| admissible_levels(n, levels)).collect(),
        }
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn forward<V: Coefficient<T>, D: Dimension>(&self, data: &mut Array<V, D>) {
        self.apply(data, true);
    }

    pub fn inverse<V: Coefficient<T>, D: Dimension>(&self, data: &mut Array<V, D>) {
        self.apply(data, false);
    }

    fn apply<V: Coefficient<T>, D: Dimension>(&self, data: &mut Array<V, D>, forward: bool) {
        let ndim = data.ndim();
        let axes: Vec<usize> = if forward {
            (0..ndim).collect()
        } else {
            (0..ndim).rev().collect()
        };
        let mut work = Vec::new();
        let mut lane_buf = Vec::new();
        for axis in axes {
            let levels = self.levels[axis];
            if levels == 0 {
                continue;
            }
            for mut lane in data.lanes_mut(Axis(axis)) {
                lane_buf.clear();
                lane_buf.extend(lane.iter().copied());
                if forward {
                    self.bank.forward_levels(&mut lane_buf, levels, &mut work);
                } else {
                    self.bank.inverse_levels(&mut lane_buf, levels, &mut work);
                }
                lane.iter_mut().zip(&lane_buf).for_each(|(d, &s)| *d = s);
            }
        }
    }

    /// True for the coarsest all-approximation block, which is never thresholded.
    pub fn is_approximation(&self, index: &[usize], shape: &[usize]) -> bool {
        index
            .iter()
            .zip(shape)
            .zip(&self.levels)
            .all(|((&i, &n), &l)| i < n >> l)
    }
}

/// Single-level 2-D decomposition returning the diagonal (high/high) detail band.
///
/// Odd trailing rows or columns are dropped so both axes are even.
pub fn diagonal_detail<T: Real>(image: ArrayView2<T>, wavelet: Wavelet) -> Vec<T> {
    let (r0, c0) = image.dim();
    let rows = r0 - r0 % 2;
    let cols = c0 - c0 % 2;
    let bank = FilterBank::<T>::new(wavelet);
    let mut buf = image.slice(ndarray::s![..rows, ..cols]).to_owned();
    let mut lane = Vec::new();
    let mut out = Vec::new();
    for axis in 0..2 {
        for mut l in buf.lanes_mut(Axis(axis)) {
            lane.clear();
            lane.extend(l.iter().copied());
            out.clear();
            out.resize(lane.len(), T::zero());
            bank.analyze(&lane, &mut out);
            l.iter_mut().zip(&out).for_each(|(d, &s)| *d = s);
        }
    }
    buf.slice(ndarray::s![rows / 2.., cols / 2..]).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn filters_are_orthonormal() {
        for w in [Wavelet::Db4, Wavelet::Db8] {
            let h = w.low_pass();
            let sum: f64 = h.iter().sum();
            assert!((sum - 2f64.sqrt()).abs() < 1e-12);
            for m in 0..h.len() / 2 {
                let dot: f64 = (0..h.len() - 2 * m).map(|k| h[k] * h[k + 2 * m]).sum();
                let want = if m == 0 { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12, "{w:?} shift {m}: {dot}");
            }
        }
    }

    #[test]
    fn high_pass_annihilates_linear_ramp() {
        let bank = FilterBank::<f64>::new(Wavelet::Db4);
        let x: Vec<f64> = (0..32).map(|i| 3.0 * i as f64 + 1.0).collect();
        let mut out = vec![0.0; 32];
        bank.analyze(&x, &mut out);
        // Periodic wrap only touches the last few details.
        for d in &out[16..16 + 12] {
            assert!(d.abs() < 1e-9);
        }
    }

    #[test]
    fn separable_roundtrip_and_energy() {
        let shape = [64, 32, 18];
        let dwt = SeparableDwt::<f64>::new(Wavelet::Db4, &shape, 3);
        assert_eq!(dwt.levels(), &[3, 3, 1]);
        let orig = Array3::from_shape_fn((64, 32, 18), |(i, j, k)| {
            ((i * 7 + j * 3 + k) % 11) as f64 - 0.3 * k as f64
        });
        let mut a = orig.clone();
        dwt.forward(&mut a);
        let e0: f64 = orig.iter().map(|v| v * v).sum();
        let e1: f64 = a.iter().map(|v| v * v).sum();
        assert!((e0 - e1).abs() / e0 < 1e-12);
        dwt.inverse(&mut a);
        let err = a.iter().zip(&orig).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn short_axes_stay_orthogonal() {
        // Filter longer than the axis: periodization still gives an orthogonal map.
        let shape = [4, 6];
        let dwt = SeparableDwt::<f64>::new(Wavelet::Db8, &shape, 3);
        let orig = ndarray::Array2::from_shape_fn((4, 6), |(i, j)| (i * 6 + j) as f64);
        let mut a = orig.clone();
        dwt.forward(&mut a);
        dwt.inverse(&mut a);
        let err = a.iter().zip(&orig).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn admissible_levels_respects_parity() {
        assert_eq!(admissible_levels(64, 3), 3);
        assert_eq!(admissible_levels(18, 3), 1);
        assert_eq!(admissible_levels(7, 3), 0);
    }
}
