//! End-to-end comparison of No Nav, 1-D Nav and 2-D Nav reconstructions.
//!
//! Every intermediate artifact is written below the output directory and
//! listed with its SHA-256 in `manifest.json`. Nothing time-dependent is
//! recorded, so a fixed configuration reproduces the manifest byte for byte.

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::{s, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binning::{
    cluster_states_1d, cluster_states_2d, phase_labels, select_all, select_bin, BinSelection,
    Quantizer, StateKey,
};
use crate::io::{self, IoError};
use crate::metrics::{self, spearman, MetricsReport};
use crate::motion::{extract_motion_1d, extract_motion_2d, MotionConfig, MotionError, MotionTrace, Trace1d};
use crate::navigator::{reconstruct_nav_images, NavImageSeries};
use crate::phantom::{simulate_acquisition, PhantomConfig, RawDataset};
use crate::recon::{reconstruct, ReconMode, ReconParams, VolumeSeries};
use crate::sampling::{generate_schedule, undersampling_report, PatternConfig};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconSettings {
    pub mode: ReconMode,
    #[serde(flatten)]
    pub params: ReconParams,
}

impl Default for ReconSettings {
    fn default() -> Self {
        Self {
            mode: ReconMode::CsWavelet,
            params: ReconParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub pattern: PatternConfig,
    pub phantom: PhantomConfig,
    pub motion: MotionConfig,
    pub phases: usize,
    pub recon: ReconSettings,
    pub quantizer: Quantizer,
    pub output_dir: PathBuf,
    /// Overrides the phantom noise seed and the pattern seed when set.
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pattern: PatternConfig::default(),
            phantom: PhantomConfig::default(),
            motion: MotionConfig::default(),
            phases: 20,
            recon: ReconSettings::default(),
            quantizer: Quantizer::default(),
            output_dir: PathBuf::from("respnav_out"),
            seed: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Config,
    Io,
    Sampling,
    Simulate,
    Navigator,
    Motion,
    Binning,
    Recon,
    Metrics,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Io => 3,
            Stage::Sampling => 10,
            Stage::Simulate => 11,
            Stage::Navigator => 12,
            Stage::Motion => 13,
            Stage::Binning => 14,
            Stage::Recon => 15,
            Stage::Metrics => 16,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Io => "io",
            Stage::Sampling => "sampling",
            Stage::Simulate => "simulate",
            Stage::Navigator => "navimages",
            Stage::Motion => "motion",
            Stage::Binning => "bin",
            Stage::Recon => "recon",
            Stage::Metrics => "metrics",
        }
    }
}

#[derive(Debug)]
pub struct ExperimentError {
    pub stage: Stage,
    pub message: String,
}

impl fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage.name(), self.message)
    }
}

impl std::error::Error for ExperimentError {}

impl ExperimentError {
    pub fn new(stage: Stage, err: impl fmt::Display) -> Self {
        Self {
            stage,
            message: err.to_string(),
        }
    }
}

impl From<IoError> for ExperimentError {
    fn from(e: IoError) -> Self {
        Self::new(Stage::Io, e)
    }
}

/// Extension for tagging a stage's errors.
pub trait StageResult<V> {
    fn stage(self, stage: Stage) -> Result<V, ExperimentError>;
}

impl<V, E: fmt::Display> StageResult<V> for Result<V, E> {
    fn stage(self, stage: Stage) -> Result<V, ExperimentError> {
        self.map_err(|e| ExperimentError::new(stage, e))
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self, ExperimentError> {
        toml::from_str(s).stage(Stage::Config)
    }

    pub fn from_json(s: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(s).stage(Stage::Config)
    }

    /// Reads `.json` as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    /// Applies the seed override; the result is what gets recorded.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Some(seed) = c.seed {
            c.phantom.seed = seed;
            c.pattern.seed = seed;
        }
        c
    }

    /// Cross-module consistency checks run before any stage.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |msg: String| Err(ExperimentError::new(Stage::Config, msg));
        self.pattern.validate().stage(Stage::Config)?;
        self.phantom.validate().stage(Stage::Config)?;
        let p = &self.pattern;
        if self.phantom.grid != [p.nx, p.ny, p.nz] {
            return fail(format!(
                "phantom grid {:?} differs from pattern grid {:?}",
                self.phantom.grid,
                [p.nx, p.ny, p.nz]
            ));
        }
        self.motion.validate((p.nx, p.ny)).stage(Stage::Config)?;
        let amp = self.phantom.peak_shift_px();
        if amp > self.motion.search_radius_px as f64 {
            return fail(format!(
                "respiratory amplitude {amp} px exceeds search radius {}",
                self.motion.search_radius_px
            ));
        }
        if self.phantom.resp_period_s <= 2.0 * p.nav_interval_s {
            return fail(format!(
                "respiratory period {} s is not resolved by a {} s navigation interval",
                self.phantom.resp_period_s, p.nav_interval_s
            ));
        }
        if self.phases == 0 {
            return fail("phases must be >= 1".into());
        }
        if self.quantizer.buckets == 0 {
            return fail("quantizer needs at least one bucket".into());
        }
        Ok(())
    }
}

/// 2-D motion extraction that keeps the partial trace when an axis carries no motion.
pub fn motion_2d_lenient<T: Real>(
    navs: &NavImageSeries<T>,
    config: &MotionConfig,
) -> Result<(MotionTrace, Vec<String>), MotionError> {
    match extract_motion_2d(navs, config) {
        Ok(t) => Ok((t, vec![])),
        Err(MotionError::DegenerateMotion { axes, trace }) => Ok((
            *trace,
            vec![format!("no motion detected along {axes:?}; held at 0")],
        )),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionRecovery {
    pub navigators: usize,
    /// Navigators whose combined shift equals the true displacement relative to the first.
    pub hits: usize,
    pub hit_rate: f64,
    pub spearman_1d_vs_ap: f64,
    pub spearman_1d_vs_si: f64,
}

/// Exact-hit rate of a 2-D trace against ground truth, both relative to navigator 0.
pub fn motion_recovery<T: Real>(raw: &RawDataset<T>, trace: &MotionTrace, trace_1d: Option<&Trace1d>) -> MotionRecovery {
    let truth = &raw.truth.nav_shifts;
    let t0 = truth.first().map(|s| s.as_xy()).unwrap_or_default();
    let rel: Vec<[i32; 2]> = truth
        .iter()
        .map(|s| {
            let v = s.as_xy();
            [v[0] - t0[0], v[1] - t0[1]]
        })
        .collect();
    let hits = trace
        .navs
        .iter()
        .zip(&rel)
        .filter(|(n, t)| n.comb == **t)
        .count();
    let (ap, si) = trace_1d.map_or((f64::NAN, f64::NAN), |t| {
        let ap: Vec<f64> = rel.iter().map(|v| v[1] as f64).collect();
        let si: Vec<f64> = rel.iter().map(|v| v[0] as f64).collect();
        (spearman(&t.scores, &ap), spearman(&t.scores, &si))
    });
    MotionRecovery {
        navigators: rel.len(),
        hits,
        hit_rate: hits as f64 / rel.len().max(1) as f64,
        spearman_1d_vs_ap: ap,
        spearman_1d_vs_si: si,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub file_stem: String,
    pub selected_state: Option<StateKey>,
    pub states: usize,
    pub fraction_selected: f64,
    pub selected_navigators: usize,
    pub selected_readouts: usize,
    pub dropped_readouts: usize,
    pub max_r_factor: f64,
    pub non_convergence: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub motion: MotionRecovery,
    pub arms: Vec<ArmSummary>,
    pub metrics: MetricsReport,
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub files: Vec<ManifestEntry>,
}

pub const NO_NAV: &str = "No Nav";
pub const NAV_1D: &str = "1-D Nav";
pub const NAV_2D: &str = "2-D Nav";

/// Records artifacts as they are written.
struct Outputs {
    root: PathBuf,
    files: Vec<ManifestEntry>,
}

impl Outputs {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<(), ExperimentError> {
        io::write_bytes(&self.root.join(rel), bytes)?;
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    fn put_json<S: Serialize>(&mut self, rel: &str, value: &S) -> Result<(), ExperimentError> {
        let mut s = serde_json::to_string_pretty(value).stage(Stage::Io)?;
        s.push('\n');
        self.put(rel, s.as_bytes())
    }

    /// Registers files written by another writer.
    fn adopt(&mut self, rel: &str) -> Result<(), ExperimentError> {
        let path = self.root.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| ExperimentError::new(Stage::Io, format!("{}: {e}", path.display())))?;
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }
}

/// Runs the full three-arm experiment in double precision.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    run_experiment_with::<f64>(config)
}

pub fn run_experiment_with<T: Real>(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let cfg = config.resolved();
    cfg.validate()?;
    let mut out = Outputs {
        root: cfg.output_dir.clone(),
        files: vec![],
    };
    let mut warnings = Vec::new();
    // Recorded without the output location so identical inputs give identical bytes.
    let recorded = ExperimentConfig {
        output_dir: PathBuf::from("."),
        ..cfg.clone()
    };
    out.put_json("config.json", &recorded)?;

    let schedule = generate_schedule(&cfg.pattern).stage(Stage::Sampling)?;
    out.put("schedule.json", schedule.to_json().as_bytes())?;

    let raw: RawDataset<T> = simulate_acquisition(&cfg.phantom, &schedule).stage(Stage::Simulate)?;
    io::write_raw(&cfg.output_dir.join("raw"), &raw)?;
    out.adopt("raw.json")?;
    out.adopt("raw.bin")?;

    let navs = reconstruct_nav_images(&raw).stage(Stage::Navigator)?;
    let peak = navs.max_value().as_f64();
    for (i, img) in navs.images.iter().enumerate() {
        out.put(&format!("navs/nav_{i:04}.pgm"), &io::encode_pgm16(img.view(), peak))?;
    }

    let (trace, w) = motion_2d_lenient(&navs, &cfg.motion).stage(Stage::Motion)?;
    warnings.extend(w);
    let trace_1d = extract_motion_1d(&raw).stage(Stage::Motion)?;
    out.put_json("trace_2d.json", &trace)?;
    out.put_json("trace_1d.json", &trace_1d)?;
    let recovery = motion_recovery(&raw, &trace, Some(&trace_1d));

    let trig = &raw.trigger_times_s;
    let sel_2d = select_bin(&cluster_states_2d(&trace), &schedule, trig, cfg.phases).stage(Stage::Binning)?;
    let sel_1d = select_bin(&cluster_states_1d(&trace_1d, &cfg.quantizer), &schedule, trig, cfg.phases)
        .stage(Stage::Binning)?;
    let sel_all = select_all(&schedule, trig, cfg.phases).stage(Stage::Binning)?;
    let labels = phase_labels(&schedule, trig, cfg.phases);

    let arms: [(&str, &str, BinSelection); 3] = [
        (NO_NAV, "nonav", sel_all),
        (NAV_1D, "nav1d", sel_1d),
        (NAV_2D, "nav2d", sel_2d),
    ];
    let mut summaries = Vec::new();
    let mut volumes: Vec<VolumeSeries<T>> = Vec::new();
    for (name, stem, sel) in &arms {
        out.put(&format!("bins_{stem}.json"), sel.to_json().as_bytes())?;
        let us = undersampling_report(&schedule, &labels, cfg.phases, Some(sel)).stage(Stage::Binning)?;
        let vols = reconstruct(&raw, sel, cfg.recon.mode, &cfg.recon.params).stage(Stage::Recon)?;
        out.put(&format!("vols_{stem}.rnavvol"), &io::encode_volumes(&vols))?;
        if vols.meta.non_convergence() {
            warnings.push(format!("{name}: objective increased during iterations"));
        }
        summaries.push(ArmSummary {
            name: name.to_string(),
            file_stem: stem.to_string(),
            selected_state: sel.selected_state,
            states: sel.states.states.len(),
            fraction_selected: sel.fraction_selected,
            selected_navigators: sel.selected_navigators.len(),
            selected_readouts: sel.selected_readouts.len(),
            dropped_readouts: sel.dropped,
            max_r_factor: us.max_r_factor(),
            non_convergence: vols.meta.non_convergence(),
        });
        volumes.push(vols);
    }

    let methods = arms
        .iter()
        .zip(&volumes)
        .map(|((name, _, _), v)| metrics::evaluate(name, v))
        .collect::<Result<Vec<_>, _>>()
        .stage(Stage::Metrics)?;
    let report = metrics::build_report(methods).stage(Stage::Metrics)?;
    out.put_json("metrics.json", &report)?;
    out.put("table.txt", report.table().as_bytes())?;
    for (a, b) in [(0usize, 2usize), (1, 2)] {
        write_differences(&mut out, &arms[a].1, &volumes[a], &arms[b].1, &volumes[b])?;
    }

    let result = ExperimentReport {
        motion: recovery,
        arms: summaries,
        metrics: report,
        warnings,
    };
    out.put_json("report.json", &result)?;

    out.files.sort_by(|a, b| a.path.cmp(&b.path));
    io::write_json(
        &cfg.output_dir.join("manifest.json"),
        &Manifest {
            config: recorded,
            files: out.files,
        },
    )?;
    Ok(result)
}

/// `|A - B|` of cardiac phase 0, one PGM per slice, on a common scale.
fn write_differences<T: Real>(
    out: &mut Outputs,
    a_stem: &str,
    a: &VolumeSeries<T>,
    b_stem: &str,
    b: &VolumeSeries<T>,
) -> Result<(), ExperimentError> {
    let (va, vb) = (&a.volumes[0], &b.volumes[0]);
    let scale = va.iter().chain(vb.iter()).fold(0.0f64, |m, v| m.max(v.as_f64()));
    for z in 0..va.len_of(Axis(2)) {
        let diff = (&va.slice(s![.., .., z]) - &vb.slice(s![.., .., z])).mapv(|v| v.abs());
        out.put(
            &format!("diff/{a_stem}_vs_{b_stem}_p00_s{z:02}.pgm"),
            &io::encode_pgm16(diff.view(), scale),
        )?;
    }
    Ok(())
}
