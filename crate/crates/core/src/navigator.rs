//! Low-resolution 2-D navigator images from the interleaved `k_z = 0` planes.

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::fft::{self, index_of};
use crate::phantom::RawDataset;
use crate::scalar::{Cplx, Real};

#[derive(Debug, Error, PartialEq)]
pub enum NavError {
    #[error("navigation event {nav_id} is missing k_y line {ky}")]
    MissingNavData { nav_id: usize, ky: i32 },
    #[error("navigation event {0} does not exist")]
    UnknownEvent(usize),
    #[error("dataset has no navigation events")]
    NoEvents,
}

/// Navigator images `N_1 .. N_I` in acquisition order, each `(nx, ny)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NavImageSeries<T> {
    pub images: Vec<Array2<T>>,
    pub times_s: Vec<f64>,
}

impl<T: Real> NavImageSeries<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.images.first().map_or((0, 0), |i| i.dim())
    }

    /// Largest pixel over the whole series.
    pub fn max_value(&self) -> T {
        self.images
            .iter()
            .flat_map(|i| i.iter().copied())
            .fold(T::zero(), T::max)
    }
}

/// Zero-filled `(nx, ny)` k-space plane per coil for one navigation event.
pub fn assemble_nav_kspace<T: Real>(
    raw: &RawDataset<T>,
    nav_id: usize,
) -> Result<Vec<Array2<Cplx<T>>>, NavError> {
    let sched = &raw.schedule;
    let event = sched
        .nav_events
        .get(nav_id)
        .ok_or(NavError::UnknownEvent(nav_id))?;
    let (nx, ny) = (sched.config.nx, sched.config.ny);
    let coils = raw.coils();
    let mut planes = vec![Array2::<Cplx<T>>::zeros((nx, ny)); coils];
    let mut seen = vec![false; ny];
    for ri in event.readouts().filter(|&i| i < sched.readouts.len()) {
        let r = &sched.readouts[ri];
        if r.kz != 0 {
            continue;
        }
        let iy = index_of(r.ky as i64, ny);
        seen[iy] = true;
        for (c, plane) in planes.iter_mut().enumerate() {
            for (ix, &v) in raw.line(ri, c).iter().enumerate() {
                plane[[ix, iy]] = v;
            }
        }
    }
    if let Some(ky) = sched.config.nav_line_ky().find(|&ky| !seen[index_of(ky as i64, ny)]) {
        return Err(NavError::MissingNavData { nav_id, ky });
    }
    Ok(planes)
}

/// Root sum of squares over coil images.
pub fn sum_of_squares<T: Real>(coil_images: &[Array2<Cplx<T>>]) -> Array2<T> {
    let mut acc = Array2::<T>::zeros(coil_images[0].dim());
    for img in coil_images {
        acc.zip_mut_with(img, |a, v| *a += v.norm_sqr());
    }
    acc.mapv_inplace(|v| v.sqrt());
    acc
}

fn nav_image<T: Real>(raw: &RawDataset<T>, nav_id: usize) -> Result<Array2<T>, NavError> {
    let mut planes = assemble_nav_kspace(raw, nav_id)?;
    let mut planner = FftPlanner::new();
    for p in &mut planes {
        fft::ifftn(p, &mut planner);
    }
    Ok(sum_of_squares(&planes))
}

/// Inverse 2-D transform of every navigation plane followed by SoS coil combination.
pub fn reconstruct_nav_images<T: Real>(raw: &RawDataset<T>) -> Result<NavImageSeries<T>, NavError> {
    let events = &raw.schedule.nav_events;
    if events.is_empty() {
        return Err(NavError::NoEvents);
    }
    let images = (0..events.len())
        .into_par_iter()
        .map(|i| nav_image(raw, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NavImageSeries {
        images,
        times_s: events.iter().map(|e| e.time_s).collect(),
    })
}

/// Navigator SNR by the difference method: two acquisitions of the same
/// schedule with independent noise. Signal is the mean of the pair average
/// over pixels above half of each image's peak, noise is the std of the
/// pair difference over the same pixels divided by sqrt 2.
pub fn difference_snr<T: Real>(a: &NavImageSeries<T>, b: &NavImageSeries<T>) -> Option<f64> {
    if a.len() != b.len() || a.dim() != b.dim() || a.is_empty() {
        return None;
    }
    let (mut n, mut sig, mut d1, mut d2) = (0usize, 0.0, 0.0, 0.0);
    for (ia, ib) in a.images.iter().zip(&b.images) {
        let mean = (ia + ib).mapv(|v| v.as_f64() * 0.5);
        let peak = mean.iter().copied().fold(0.0, f64::max);
        for ((&m, &va), &vb) in mean.iter().zip(ia).zip(ib) {
            if m >= 0.5 * peak {
                let d = va.as_f64() - vb.as_f64();
                n += 1;
                sig += m;
                d1 += d;
                d2 += d * d;
            }
        }
    }
    let nf = n as f64;
    let var = (d2 - d1 * d1 / nf) / (nf - 1.0).max(1.0);
    let noise = (var / 2.0).sqrt();
    (noise > 0.0).then(|| sig / nf / noise)
}
