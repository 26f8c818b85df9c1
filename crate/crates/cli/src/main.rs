//! `respnav` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{s, Axis};

use respnav::binning::{cluster_states_1d, cluster_states_2d, select_bin, Quantizer};
use respnav::experiment::{
    motion_2d_lenient, run_experiment, ExperimentConfig, ExperimentError, Stage, StageResult,
};
use respnav::metrics::{build_report, evaluate};
use respnav::motion::{extract_motion_1d, MotionConfig, MotionTrace, Trace1d};
use respnav::navigator::reconstruct_nav_images;
use respnav::phantom::simulate_acquisition;
use respnav::recon::{reconstruct, ReconMode, ReconParams};
use respnav::sampling::generate_schedule;
use respnav::{io, BinSelection, RawDataset64, VolumeSeries64};

#[derive(Parser)]
#[command(name = "respnav", version, about = "2-D respiratory self-navigation pipeline on a motion phantom")]
struct Cli {
    /// Overrides the phantom noise seed (and the recorded pattern seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML, or JSON by extension); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self, seed: Option<u64>) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if seed.is_some() {
            cfg.seed = seed;
        }
        Ok(cfg.resolved())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MotionMode {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "1d")]
    OneD,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Zf,
    Cs,
}

#[derive(Subcommand)]
enum Command {
    /// Write the sampling schedule as JSON.
    Pattern {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a raw dataset (`<out>.json` + `<out>.bin`).
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump navigator images as 16-bit PGM.
    Navimages {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract a 2-D or 1-D motion trace.
    Motion {
        #[arg(long)]
        raw: PathBuf,
        /// MotionConfig JSON; the default ROIs when omitted.
        #[arg(long)]
        rois: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "2d")]
        mode: MotionMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select the modal respiratory state and label cardiac phases.
    Bin {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        raw: PathBuf,
        #[arg(long, default_value_t = 20)]
        phases: usize,
        /// Score buckets for 1-D traces.
        #[arg(long, default_value_t = 8)]
        buckets: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the cardiac-phase volume series.
    Recon {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        bins: PathBuf,
        #[arg(long, value_enum, default_value = "cs")]
        mode: ModeArg,
        #[arg(long)]
        lambda_rel: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics report over one or more volume files.
    Metrics {
        #[arg(long, num_args = 1.., required = true)]
        vols: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Comparison table and per-slice difference images of two volume files.
    Compare {
        #[arg(long, num_args = 2, required = true)]
        vols: Vec<PathBuf>,
        /// Cardiac phase for the difference images.
        #[arg(long, default_value_t = 0)]
        phase: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full three-arm experiment.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory; overrides the config's.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_raw(prefix: &Path) -> Result<RawDataset64, ExperimentError> {
    Ok(io::read_raw(prefix)?)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

enum AnyTrace {
    TwoD(MotionTrace),
    OneD(Trace1d),
}

fn read_trace(path: &Path) -> Result<AnyTrace, ExperimentError> {
    let value: serde_json::Value = io::read_json(path)?;
    let parsed = if value.get("navs").is_some() {
        serde_json::from_value(value).map(AnyTrace::TwoD)
    } else {
        serde_json::from_value(value).map(AnyTrace::OneD)
    };
    parsed.map_err(|e| ExperimentError::new(Stage::Io, format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Pattern { config, out } => {
            let cfg = config.load(cli.seed)?;
            let sched = generate_schedule(&cfg.pattern).stage(Stage::Sampling)?;
            io::write_bytes(&out, sched.to_json().as_bytes())?;
            eprintln!(
                "{} readouts, {} navigation events",
                sched.readouts.len(),
                sched.nav_events.len()
            );
        }
        Command::Simulate { config, out } => {
            let cfg = config.load(cli.seed)?;
            cfg.validate()?;
            let sched = generate_schedule(&cfg.pattern).stage(Stage::Sampling)?;
            let raw: RawDataset64 = simulate_acquisition(&cfg.phantom, &sched).stage(Stage::Simulate)?;
            io::write_raw(&out, &raw)?;
        }
        Command::Navimages { raw, out } => {
            let raw = read_raw(&raw)?;
            let navs = reconstruct_nav_images(&raw).stage(Stage::Navigator)?;
            let peak = navs.max_value();
            for (i, img) in navs.images.iter().enumerate() {
                io::write_pgm16(&out.join(format!("nav_{i:04}.pgm")), img.view(), peak)?;
            }
            eprintln!("{} navigator images", navs.len());
        }
        Command::Motion {
            raw,
            rois,
            mode,
            out,
        } => {
            let raw = read_raw(&raw)?;
            match mode {
                MotionMode::TwoD => {
                    let cfg: MotionConfig = match rois {
                        Some(p) => io::read_json(&p)?,
                        None => MotionConfig::default(),
                    };
                    let navs = reconstruct_nav_images(&raw).stage(Stage::Navigator)?;
                    let (trace, warnings) = motion_2d_lenient(&navs, &cfg).stage(Stage::Motion)?;
                    for w in warnings {
                        eprintln!("warning: {w}");
                    }
                    io::write_json(&out, &trace)?;
                }
                MotionMode::OneD => {
                    let trace = extract_motion_1d(&raw).stage(Stage::Motion)?;
                    io::write_json(&out, &trace)?;
                }
            }
        }
        Command::Bin {
            trace,
            raw,
            phases,
            buckets,
            out,
        } => {
            let raw = read_raw(&raw)?;
            let states = match read_trace(&trace)? {
                AnyTrace::TwoD(t) => cluster_states_2d(&t),
                AnyTrace::OneD(t) => cluster_states_1d(&t, &Quantizer { buckets }),
            };
            let sel = select_bin(&states, &raw.schedule, &raw.trigger_times_s, phases)
                .stage(Stage::Binning)?;
            io::write_bytes(&out, sel.to_json().as_bytes())?;
            eprintln!(
                "selected {:?}: {:.1} % of navigators, {} readouts dropped outside triggers",
                sel.selected_state,
                100.0 * sel.fraction_selected,
                sel.dropped
            );
        }
        Command::Recon {
            raw,
            bins,
            mode,
            lambda_rel,
            iterations,
            out,
        } => {
            let raw = read_raw(&raw)?;
            let bins: BinSelection = io::read_json(&bins)?;
            let mut params = ReconParams::default();
            if let Some(l) = lambda_rel {
                params.lambda_rel = l;
            }
            if let Some(n) = iterations {
                params.iterations = n;
            }
            let mode = match mode {
                ModeArg::Zf => ReconMode::ZeroFilled,
                ModeArg::Cs => ReconMode::CsWavelet,
            };
            let vols = reconstruct(&raw, &bins, mode, &params).stage(Stage::Recon)?;
            if vols.meta.non_convergence() {
                eprintln!("warning: objective increased during iterations");
            }
            io::write_volumes(&out, &vols)?;
        }
        Command::Metrics { vols, out } => {
            let methods = vols
                .iter()
                .map(|p| {
                    let v: VolumeSeries64 = io::read_volumes(p)?;
                    evaluate(&stem(p), &v).stage(Stage::Metrics)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let report = build_report(methods).stage(Stage::Metrics)?;
            io::write_json(&out, &report)?;
        }
        Command::Compare { vols, phase, out } => {
            let (a, b): (VolumeSeries64, VolumeSeries64) =
                (io::read_volumes(&vols[0])?, io::read_volumes(&vols[1])?);
            if a.dim() != b.dim() || a.phases() != b.phases() {
                return Err(ExperimentError::new(Stage::Metrics, "volume series differ in shape"));
            }
            if phase >= a.phases() {
                return Err(ExperimentError::new(
                    Stage::Config,
                    format!("phase {phase} out of range for {} phases", a.phases()),
                ));
            }
            let (na, nb) = (stem(&vols[0]), stem(&vols[1]));
            let report = build_report(vec![
                evaluate(&na, &a).stage(Stage::Metrics)?,
                evaluate(&nb, &b).stage(Stage::Metrics)?,
            ])
            .stage(Stage::Metrics)?;
            let table = report.table();
            io::write_bytes(&out.join("table.txt"), table.as_bytes())?;
            let (va, vb) = (&a.volumes[phase], &b.volumes[phase]);
            let scale = va.iter().chain(vb.iter()).fold(0.0f64, |m, &v| m.max(v));
            for z in 0..va.len_of(Axis(2)) {
                let diff = (&va.slice(s![.., .., z]) - &vb.slice(s![.., .., z])).mapv(f64::abs);
                io::write_pgm16(
                    &out.join(format!("diff_{na}_vs_{nb}_p{phase:02}_s{z:02}.pgm")),
                    diff.view(),
                    scale,
                )?;
            }
            print!("{table}");
        }
        Command::Run { config, out } => {
            let mut cfg = config.load(cli.seed)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let report = run_experiment(&cfg)?;
            print!("{}", report.metrics.table());
            println!(
                "\n2-D motion exact hits: {}/{} ({:.1} %)",
                report.motion.hits,
                report.motion.navigators,
                100.0 * report.motion.hit_rate
            );
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(Stage::Config.exit_code() as u8);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
