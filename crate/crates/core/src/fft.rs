//! Centered discrete Fourier transforms over `ndarray` arrays.
//!
//! Array index `i` along an axis of length `n` holds coordinate `i - n/2`, in
//! both image space and k-space, so DC sits at the array center. The forward
//! transform is unnormalized and the inverse carries the `1/N` factor.

use ndarray::{Array, ArrayViewMut1, Axis, Dimension};
use rustfft::{Fft, FftPlanner};

use crate::scalar::{Cplx, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Array index holding centered coordinate `k` on an axis of length `n`.
#[inline]
pub fn index_of(k: i64, n: usize) -> usize {
    (k + (n / 2) as i64) as usize
}

/// Centered coordinate stored at array index `i` on an axis of length `n`.
#[inline]
pub fn coord_of(i: usize, n: usize) -> i64 {
    i as i64 - (n / 2) as i64
}

fn transform_lane<T: Real>(
    mut lane: ArrayViewMut1<Cplx<T>>,
    fft: &dyn Fft<T>,
    buf: &mut [Cplx<T>],
    scratch: &mut [Cplx<T>],
    scale: Option<T>,
) {
    let n = lane.len();
    let c = n / 2;
    for (j, b) in buf.iter_mut().enumerate() {
        *b = lane[(j + c) % n];
    }
    fft.process_with_scratch(buf, scratch);
    for i in 0..n {
        let v = buf[(i + n - c) % n];
        lane[i] = match scale {
            Some(s) => v * s,
            None => v,
        };
    }
}

/// Applies a centered 1-D transform along `axis` of `data`.
pub fn fft_axis<T: Real, D: Dimension>(
    data: &mut Array<Cplx<T>, D>,
    axis: usize,
    direction: Direction,
    planner: &mut FftPlanner<T>,
) {
    let n = data.len_of(Axis(axis));
    if n == 0 {
        return;
    }
    let fft = match direction {
        Direction::Forward => planner.plan_fft_forward(n),
        Direction::Inverse => planner.plan_fft_inverse(n),
    };
    let scale = match direction {
        Direction::Forward => None,
        Direction::Inverse => Some(T::one() / T::lit(n as f64)),
    };
    let mut buf = vec![Cplx::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Cplx::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    for lane in data.lanes_mut(Axis(axis)) {
        transform_lane(lane, fft.as_ref(), &mut buf, &mut scratch, scale);
    }
}

/// Forward transform over every axis (unnormalized).
pub fn fftn<T: Real, D: Dimension>(data: &mut Array<Cplx<T>, D>, planner: &mut FftPlanner<T>) {
    for axis in 0..data.ndim() {
        fft_axis(data, axis, Direction::Forward, planner);
    }
}

/// Inverse transform over every axis with `1/N` normalization.
pub fn ifftn<T: Real, D: Dimension>(data: &mut Array<Cplx<T>, D>, planner: &mut FftPlanner<T>) {
    for axis in 0..data.ndim() {
        fft_axis(data, axis, Direction::Inverse, planner);
    }
}

/// Unitary forward transform: `fftn` scaled by `1/sqrt(N)`.
pub fn fftn_ortho<T: Real, D: Dimension>(data: &mut Array<Cplx<T>, D>, planner: &mut FftPlanner<T>) {
    fftn(data, planner);
    let s = T::one() / T::lit(data.len() as f64).sqrt();
    data.mapv_inplace(|v| v * s);
}

/// Unitary inverse transform, the adjoint of [`fftn_ortho`].
pub fn ifftn_ortho<T: Real, D: Dimension>(data: &mut Array<Cplx<T>, D>, planner: &mut FftPlanner<T>) {
    ifftn(data, planner);
    let s = T::lit(data.len() as f64).sqrt();
    data.mapv_inplace(|v| v * s);
}
