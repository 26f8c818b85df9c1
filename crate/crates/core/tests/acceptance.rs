//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! before asserting, so `cargo test --test acceptance -- --nocapture`
//! doubles as a report.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;

use respnav::binning::{cluster_states_2d, phase_labels, select_bin, StateEntry};
use respnav::experiment::{motion_2d_lenient, motion_recovery, run_experiment, NAV_1D, NAV_2D, NO_NAV};
use respnav::fft::{fftn, ifftn};
use respnav::metrics::{histogram_entropy, sigma_noise, total_variation};
use respnav::motion::{extract_motion_1d, extract_motion_2d};
use respnav::navigator::{difference_snr, reconstruct_nav_images};
use respnav::phantom::{
    simulate_acquisition, CoilModel, Ellipsoid, MotionAxis, MotionComponent, MotionSource,
};
use respnav::recon::{ReconMode, ReconParams};
use respnav::sampling::{
    generate_schedule, undersampling_report, NavEvent, ReadoutDescriptor, Role, SamplingSchedule,
};
use respnav::{
    Cplx, ExperimentConfig, Metric, MotionTrace, NavImageSeries64, PatternConfig, PhantomConfig,
    RawDataset64, StateKey, StateMap,
};

fn verdict(criterion: u32, name: &str, ok: bool, detail: String) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("criterion {criterion} [{name}]: {tag} ({detail})");
    assert!(ok, "criterion {criterion} [{name}] failed: {detail}");
}

struct Default2d {
    raw: RawDataset64,
    navs: NavImageSeries64,
    trace: MotionTrace,
    elapsed: Duration,
}

fn simulate(cfg: &ExperimentConfig) -> RawDataset64 {
    let sched = generate_schedule(&cfg.pattern).unwrap();
    simulate_acquisition(&cfg.phantom, &sched).unwrap()
}

/// Schedule, acquisition, navigator images and 2-D motion on one thread.
fn default_2d() -> &'static Default2d {
    static CELL: OnceLock<Default2d> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        pool.install(|| {
            let start = Instant::now();
            let raw = simulate(&cfg);
            let navs = reconstruct_nav_images(&raw).unwrap();
            let trace = extract_motion_2d(&navs, &cfg.motion).unwrap();
            Default2d {
                elapsed: start.elapsed(),
                raw,
                navs,
                trace,
            }
        })
    })
}

#[test]
fn criterion_1_motion_recovery() {
    let d = default_2d();
    let rec = motion_recovery(&d.raw, &d.trace, None);

    let mut second = ExperimentConfig::default();
    second.phantom.seed += 1;
    let other = reconstruct_nav_images(&simulate(&second)).unwrap();
    let snr = difference_snr(&d.navs, &other).unwrap();

    let secs = d.elapsed.as_secs_f64();
    let ok = rec.hit_rate >= 0.95 && snr >= 10.0 && secs < 60.0;
    verdict(
        1,
        "motion recovery",
        ok,
        format!(
            "hits {}/{} = {:.3}, navigator SNR {snr:.1}, single-thread time {secs:.1} s",
            rec.hits, rec.navigators, rec.hit_rate
        ),
    );
}

#[test]
fn criterion_2_one_dimensional_insufficiency() {
    let mut cfg = ExperimentConfig::default();
    cfg.phantom.resp_amp_ap_px = 4.0;
    cfg.phantom.resp_amp_si_px = 0.0;
    cfg.validate().unwrap();
    let raw = simulate(&cfg);
    let navs = reconstruct_nav_images(&raw).unwrap();
    let (trace, _) = motion_2d_lenient(&navs, &cfg.motion).unwrap();
    let trace_1d = extract_motion_1d(&raw).unwrap();
    let rec = motion_recovery(&raw, &trace, Some(&trace_1d));

    // The principal-component sign is arbitrary, so only the magnitude counts.
    let rho = rec.spearman_1d_vs_ap.abs();
    let ok = rho < 0.5 && rec.hit_rate >= 0.95;
    verdict(
        2,
        "1-D insufficiency",
        ok,
        format!("|rho(1-D, AP)| = {rho:.3}, 2-D hit rate {:.3}", rec.hit_rate),
    );
}

#[test]
fn criterion_3_metric_ordering() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        output_dir: tmp.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    let m = &report.metrics;

    let mut ok = true;
    let mut lines = Vec::new();
    for metric in Metric::ALL {
        for other in [NAV_1D, NO_NAV] {
            let t = m.comparison(NAV_2D, other, metric).unwrap();
            let pass = t.n >= 200 && t.mean_diff < 0.0 && t.p < 0.05;
            ok &= pass;
            lines.push(format!(
                "{} 2-D - {other}: {:+.4} p={:.2e} n={}{}",
                metric.label(),
                t.mean_diff,
                t.p,
                t.n,
                if pass { "" } else { " x" }
            ));
        }
    }
    verdict(3, "metric ordering", ok, lines.join("; "));
}

#[test]
fn criterion_4_modal_bin_accounting() {
    let d = default_2d();
    let states = cluster_states_2d(&d.trace);
    let total = states.total();
    let modal = states.modal().unwrap();
    let StateKey::Shift(key) = modal.key else { unreachable!() };

    let t0 = d.raw.truth.nav_shifts[0].as_xy();
    let dwell = d
        .raw
        .truth
        .nav_shifts
        .iter()
        .filter(|s| {
            let v = s.as_xy();
            [v[0] - t0[0], v[1] - t0[1]] == key
        })
        .count();
    let found = modal.navigators.len();
    let ok = total == d.raw.schedule.nav_count() && found.abs_diff(dwell) <= 2;
    verdict(
        4,
        "modal-bin accounting",
        ok,
        format!(
            "counts sum {total} of {} navigators, modal {key:?} holds {found}, truth dwell {dwell}",
            d.raw.schedule.nav_count()
        ),
    );
}

fn random_states(navs: usize, keys: usize, rng: &mut ChaCha8Rng) -> StateMap {
    let mut states: Vec<StateEntry> = (0..keys)
        .map(|k| StateEntry {
            key: StateKey::Bucket(k),
            navigators: vec![],
        })
        .collect();
    for n in 0..navs {
        states[rng.random_range(0..keys)].navigators.push(n);
    }
    states.retain(|s| !s.navigators.is_empty());
    StateMap { states }
}

/// Every `(ky, kz)` point once in random order, split into equal navigator blocks.
fn uniform_schedule(block: usize, navs: usize, rng: &mut ChaCha8Rng) -> SamplingSchedule {
    let config = PatternConfig {
        ny: 32,
        nz: 32,
        nx: 16,
        spoke_len: 16,
        ..PatternConfig::default()
    };
    let mut points: Vec<(i32, i32)> = (-16..16).flat_map(|y| (-16..16).map(move |z| (y, z))).collect();
    points.shuffle(rng);
    assert_eq!(block * navs, points.len());
    let readouts = points
        .iter()
        .enumerate()
        .map(|(index, &(ky, kz))| ReadoutDescriptor {
            index,
            time_s: index as f64 * config.tr_s,
            ky,
            kz,
            role: Role::Imaging,
            nav_id: index / block,
        })
        .collect();
    let nav_events = (0..navs)
        .map(|n| NavEvent {
            nav_id: n,
            start_index: n * block,
            end_index: n * block,
            time_s: (n * block) as f64 * config.tr_s,
        })
        .collect();
    SamplingSchedule {
        config,
        readouts,
        nav_events,
    }
}

#[test]
fn criterion_5_undersampling_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = default_2d();
    let (sched, trig) = (&d.raw.schedule, &d.raw.trigger_times_s);
    let phases = 20;
    let labels = phase_labels(sched, trig, phases);
    let full = undersampling_report(sched, &labels, phases, None).unwrap();

    let mut monotone = true;
    let mut trials = 0;
    let mut candidates = vec![cluster_states_2d(&d.trace)];
    for keys in [2usize, 3, 4, 5] {
        candidates.extend((0..4).map(|_| random_states(sched.nav_count(), keys, &mut rng)));
    }
    for states in &candidates {
        let sel = select_bin(states, sched, trig, phases).unwrap();
        let Ok(restricted) = undersampling_report(sched, &labels, phases, Some(&sel)) else {
            continue;
        };
        trials += 1;
        for (r, u) in restricted.phases.iter().zip(&full.phases) {
            monotone &= r.r_factor >= u.r_factor;
        }
    }

    let mut worst = 0.0f64;
    for seed in 0..8 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let sched = uniform_schedule(16, 64, &mut rng);
        let trig = [-1.0, 1e9];
        let labels = phase_labels(&sched, &trig, 1);
        let sel = select_bin(&random_states(64, 4, &mut rng), &sched, &trig, 1).unwrap();
        let r_all = undersampling_report(&sched, &labels, 1, None).unwrap().max_r_factor();
        let r_sel = undersampling_report(&sched, &labels, 1, Some(&sel)).unwrap().max_r_factor();
        worst = worst.max((r_sel / r_all * sel.fraction_selected - 1.0).abs());
    }
    let ok = monotone && trials > 0 && worst <= 0.1;
    verdict(
        5,
        "undersampling monotonicity",
        ok,
        format!("monotone over {trials} selections: {monotone}, worst |ratio * fraction - 1| = {worst:.2e}"),
    );
}

fn random_complex(dim: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<Cplx<f64>> {
    Array3::from_shape_fn(dim, |_| Cplx::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

fn inner(a: &Array3<Cplx<f64>>, b: &Array3<Cplx<f64>>) -> Cplx<f64> {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

/// Relative mismatch of `<F x, y>` against `<x, F* y>` where `F* = N ifftn`.
fn adjoint_error(rng: &mut ChaCha8Rng) -> f64 {
    let dim = (16, 12, 6);
    let n = (dim.0 * dim.1 * dim.2) as f64;
    let mut planner = FftPlanner::new();
    let (x, y) = (random_complex(dim, rng), random_complex(dim, rng));
    let mut fx = x.clone();
    fftn(&mut fx, &mut planner);
    let mut fy = y.clone();
    ifftn(&mut fy, &mut planner);
    fy.mapv_inplace(|v| v * n);
    let (lhs, rhs) = (inner(&fx, &y), inner(&x, &fy));
    (lhs - rhs).norm() / lhs.norm()
}

/// Largest deviation of each navigator image from the first one rolled by the true AP shift.
fn shift_theorem_error() -> (f64, usize) {
    let pattern = PatternConfig {
        nx: 32,
        ny: 32,
        nz: 8,
        spoke_len: 16,
        total_dur_s: 6.0,
        ..PatternConfig::default()
    };
    let phantom = PhantomConfig {
        grid: [32, 32, 8],
        components: vec![MotionComponent {
            name: "block".into(),
            shape: vec![Ellipsoid {
                center: [16.0, 14.0, 3.5],
                semi_axes: [7.0, 5.0, 3.0],
                intensity: 1.0,
            }],
            motion_axis: Some(MotionAxis::Ap),
            motion_source: MotionSource::Respiration,
            pulsation_frac: 0.0,
        }],
        coils: 2,
        coil_model: CoilModel::Uniform,
        noise_sigma: 0.0,
        resp_amp_ap_px: 3.0,
        resp_amp_si_px: 0.0,
        ..PhantomConfig::default()
    };
    let raw: RawDataset64 = simulate_acquisition(&phantom, &generate_schedule(&pattern).unwrap()).unwrap();
    let navs = reconstruct_nav_images(&raw).unwrap();
    let reference = &navs.images[0];
    let peak = navs.max_value();
    let a0 = raw.truth.nav_shifts[0].ap as isize;
    let (mut worst, mut moved) = (0.0f64, 0);
    for (img, s) in navs.images.iter().zip(&raw.truth.nav_shifts) {
        let d = s.ap as isize - a0;
        moved += (d != 0) as usize;
        for ((ix, iy), &v) in reference.indexed_iter() {
            let ty = (iy as isize + d).rem_euclid(32) as usize;
            worst = worst.max((img[[ix, ty]] - v).abs() / peak);
        }
    }
    (worst, moved)
}

#[test]
fn criterion_6_numerical_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let adjoint = (0..5).map(|_| adjoint_error(&mut rng)).fold(0.0, f64::max);
    let (shift, moved) = shift_theorem_error();

    let sigma = 5.0;
    let noise = Normal::new(0.0, sigma).unwrap();
    let estimates: Vec<f64> = (0..100)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let img = Array2::from_shape_fn((256, 256), |_| noise.sample(&mut rng));
            sigma_noise(img.view()).unwrap()
        })
        .collect();
    let worst_sigma = estimates.iter().map(|e| (e / sigma - 1.0).abs()).fold(0.0, f64::max);
    let mean_sigma = estimates.iter().sum::<f64>() / estimates.len() as f64;

    let levels = Array2::from_shape_fn((16, 16), |(i, j)| (16 * i + j) as f64);
    let entropy = histogram_entropy(levels.view());
    let tv = total_variation(Array2::from_elem((32, 32), 7.25).view());

    let ok = adjoint <= 1e-6
        && shift <= 1e-6
        && moved > 0
        && worst_sigma <= 0.1
        && entropy == 8.0
        && tv == 0.0;
    verdict(
        6,
        "numerical kernels",
        ok,
        format!(
            "adjoint {adjoint:.1e}, shift {shift:.1e} over {moved} moved navigators, \
             sigma worst {:.1}% mean {mean_sigma:.3}, H {entropy}, TV {tv}",
            100.0 * worst_sigma
        ),
    );
}

#[test]
fn criterion_7_determinism() {
    let run = || {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig {
            output_dir: tmp.path().to_path_buf(),
            phases: 4,
            seed: Some(11),
            ..ExperimentConfig::default()
        };
        cfg.pattern.total_dur_s = 12.0;
        cfg.phantom.coils = 2;
        cfg.recon.mode = ReconMode::CsWavelet;
        cfg.recon.params = ReconParams {
            iterations: 4,
            ..ReconParams::default()
        };
        run_experiment(&cfg).unwrap();
        std::fs::read(tmp.path().join("manifest.json")).unwrap()
    };
    let (a, b) = (run(), run());
    verdict(
        7,
        "determinism",
        a == b,
        format!("manifests {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
    );
}
