//! Command-line pipeline runner: `simulate`, `decompose`, `decode`, and the
//! `eval` studies, chained through the matrix/spike file formats.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use myodecode_core::config::{config_hash, DetectorKind, RunConfig};
use myodecode_core::io::{self, FileFormat, Manifest};
use myodecode_core::sim::KinematicsTrajectory;
use myodecode_core::{bss, eval, sim};

#[derive(Parser)]
#[command(
    name = "myodecode",
    about = "EMG → motor unit spike trains → joint kinematics, end to end",
    after_help = "The MYODECODE_THREADS environment variable caps evaluation parallelism."
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Path to a TOML run configuration; defaults apply when omitted.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, short = 'o', global = true, default_value = "out")]
    out: PathBuf,
    /// On-disk format for matrices and spike trains.
    #[arg(long, global = true, default_value = "bin")]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic scene: EMG, ground-truth spikes, reference kinematics.
    Simulate,
    /// Decompose an EMG recording into qualified motor unit spike trains.
    Decompose {
        /// EMG matrix file.
        emg: PathBuf,
        /// Spike detector override (adaptive | kmeans).
        #[arg(long)]
        detector: Option<String>,
    },
    /// Fit the projection on training trials and estimate joint angles.
    Decode {
        /// Spike train file (decomposition output or ground truth).
        spikes: PathBuf,
        /// Reference kinematics matrix file.
        reference: PathBuf,
    },
    /// Robustness studies.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Reduced channel-set sweep.
    Sweep { spikes: PathBuf, reference: PathBuf },
    /// Time-multiplexed acquisition study.
    Mux { spikes: PathBuf, reference: PathBuf },
    /// Adaptive vs. K-means thresholding comparison.
    Thresholds {
        emg: PathBuf,
        reference: PathBuf,
        /// Ground-truth spike file enabling recall reporting.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            // A manifest from an earlier run is accepted in place of a config:
            // it embeds the resolved configuration and seed, so rerunning from
            // it reproduces the outputs bit for bit.
            match RunConfig::from_toml_str(&text) {
                Ok(cfg) => cfg,
                Err(config_err) => match io::read_manifest(path) {
                    Ok(manifest) => {
                        let mut cfg = manifest.config;
                        cfg.seed = manifest.seed;
                        cfg
                    }
                    Err(_) => return Err(config_err.into()),
                },
            }
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn finish(
    out: &Path,
    command: &str,
    cfg: &RunConfig,
    format: FileFormat,
    outputs: Vec<String>,
) -> Result<()> {
    let manifest = Manifest {
        command: command.to_string(),
        seed: cfg.seed,
        format,
        outputs,
        config: cfg.clone(),
    };
    io::write_manifest(&out.join("manifest.toml"), &manifest)?;
    Ok(())
}

fn read_reference(path: &Path, cfg: &RunConfig) -> Result<KinematicsTrajectory> {
    let (angles, rate) = io::read_matrix(path)?;
    let rate =
        rate.with_context(|| format!("{}: reference lacks a sample rate", path.display()))?;
    if angles.nrows() != cfg.sim.dof_labels.len() {
        bail!(
            "{}: {} reference rows but config names {} DoFs",
            path.display(),
            angles.nrows(),
            cfg.sim.dof_labels.len()
        );
    }
    Ok(KinematicsTrajectory::new(
        angles,
        cfg.sim.dof_labels.clone(),
        rate,
    )?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let format: FileFormat = cli.global.format.parse()?;
    let out = cli.global.out.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    match cli.command {
        Command::Simulate => {
            let scene = sim::simulate_scene(&cfg.sim, cfg.seed)?;
            let emg_name = format!("emg.{}", format.matrix_extension());
            let spikes_name = format!("spikes_truth.{}", format.spike_extension());
            let ref_name = format!("reference.{}", format.matrix_extension());
            io::write_matrix(
                &out.join(&emg_name),
                scene.emg.samples(),
                Some(scene.emg.sample_rate_hz()),
                format,
            )?;
            io::write_spikes(&out.join(&spikes_name), &scene.truth, format)?;
            io::write_matrix(
                &out.join(&ref_name),
                scene.reference.angles(),
                Some(scene.reference.sample_rate_hz()),
                format,
            )?;
            println!(
                "simulated {} channels × {:.1} s: {} neurons, {} spikes",
                scene.emg.channel_count(),
                scene.emg.sample_count() as f64 / scene.emg.sample_rate_hz(),
                scene.truth.source_count(),
                scene.truth.total_spikes()
            );
            finish(
                &out,
                "simulate",
                &cfg,
                format,
                vec![emg_name, spikes_name, ref_name],
            )
        }
        Command::Decompose { emg, detector } => {
            let (samples, rate) = io::read_matrix(&emg)?;
            let rate =
                rate.with_context(|| format!("{}: EMG lacks a sample rate", emg.display()))?;
            let recording = sim::EmgRecording::new(samples, rate)?;
            let mut bss_cfg = cfg.bss.clone();
            if let Some(d) = &detector {
                bss_cfg.detector = d.parse::<DetectorKind>()?;
            }
            let decomposition = bss::decompose(&recording, &bss_cfg, cfg.seed)?;
            let musts = decomposition.spike_trains();
            let spikes_name = format!("musts.{}", format.spike_extension());
            io::write_spikes(&out.join(&spikes_name), &musts, format)?;
            write_text(
                &out.join("diagnostics.csv"),
                &io::diagnostics_csv(&decomposition.diagnostics),
            )?;
            println!(
                "qualified {} of {} candidate sources ({} spikes total)",
                decomposition.qualified_count(),
                decomposition.diagnostics.len(),
                musts.total_spikes()
            );
            finish(
                &out,
                "decompose",
                &cfg,
                format,
                vec![spikes_name, "diagnostics.csv".into()],
            )
        }
        Command::Decode { spikes, reference } => {
            let musts = io::read_spikes(&spikes)?;
            let reference = read_reference(&reference, &cfg)?;
            let trial_s = cfg.trial_s();
            let prepared =
                eval::prepare_decode(&musts, &reference, &cfg.decode, trial_s, cfg.sim.trials)?;
            let outcome = eval::run_decode(&prepared, None, None, &cfg.decode)?;
            let hash = config_hash(&cfg.to_toml_string());
            io::write_model(&out.join("model.toml"), &outcome.model, Some(hash))?;

            let split = prepared.split;
            let ref_train = prepared.reference.window(split.train_bins())?;
            let ref_test = prepared.reference.window(split.test_bins())?;
            write_text(
                &out.join("estimates_train.csv"),
                &io::estimates_csv(&outcome.estimate_train, &ref_train)?,
            )?;
            write_text(
                &out.join("estimates_test.csv"),
                &io::estimates_csv(&outcome.estimate_test, &ref_test)?,
            )?;
            write_text(
                &out.join("r2.toml"),
                &format!(
                    "r2_train = {}\nr2_test = {}\ntrain_trials = {}\ntest_trials = {}\n",
                    outcome.r2_train,
                    outcome.r2_test,
                    split.train_trials,
                    split.trials - split.train_trials
                ),
            )?;
            println!(
                "decode: train R² {:.4}, test R² {:.4}",
                outcome.r2_train, outcome.r2_test
            );
            finish(
                &out,
                "decode",
                &cfg,
                format,
                vec![
                    "model.toml".into(),
                    "estimates_train.csv".into(),
                    "estimates_test.csv".into(),
                    "r2.toml".into(),
                ],
            )
        }
        Command::Eval(eval_cmd) => run_eval(eval_cmd, &cfg, format, &out),
    }
}

fn run_eval(cmd: EvalCommand, cfg: &RunConfig, format: FileFormat, out: &Path) -> Result<()> {
    let trial_s = cfg.trial_s();
    match cmd {
        EvalCommand::Sweep { spikes, reference } => {
            let musts = io::read_spikes(&spikes)?;
            let reference = read_reference(&reference, cfg)?;
            let report = eval::reduced_set_sweep(
                &musts,
                &reference,
                &cfg.eval.sizes,
                cfg.eval.runs,
                cfg.seed,
                &cfg.decode,
                trial_s,
                cfg.sim.trials,
            )?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            write_text(&out.join("sweep_runs.csv"), &io::sweep_runs_csv(&report))?;
            write_text(
                &out.join("sweep_aggregate.csv"),
                &io::sweep_aggregate_csv(&report),
            )?;
            for entry in &report.entries {
                println!(
                    "{}: train {:.4} ± {:.4}, test {:.4} ± {:.4}",
                    entry.label,
                    entry.train.mean,
                    entry.train.variance.sqrt(),
                    entry.test.mean,
                    entry.test.variance.sqrt()
                );
            }
            finish(
                out,
                "eval sweep",
                cfg,
                format,
                vec!["sweep_runs.csv".into(), "sweep_aggregate.csv".into()],
            )
        }
        EvalCommand::Mux { spikes, reference } => {
            let musts = io::read_spikes(&spikes)?;
            let reference = read_reference(&reference, cfg)?;
            let report = eval::mux_study(
                &musts,
                &reference,
                &cfg.eval.mux_setups,
                cfg.eval.runs,
                cfg.seed,
                &cfg.decode,
                trial_s,
                cfg.sim.trials,
            )?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            write_text(&out.join("mux_runs.csv"), &io::sweep_runs_csv(&report))?;
            write_text(
                &out.join("mux_aggregate.csv"),
                &io::sweep_aggregate_csv(&report),
            )?;
            for entry in &report.entries {
                println!(
                    "{}: train {:.4}, test {:.4}",
                    entry.label, entry.train.mean, entry.test.mean
                );
            }
            finish(
                out,
                "eval mux",
                cfg,
                format,
                vec!["mux_runs.csv".into(), "mux_aggregate.csv".into()],
            )
        }
        EvalCommand::Thresholds {
            emg,
            reference,
            truth,
        } => {
            let (samples, rate) = io::read_matrix(&emg)?;
            let rate =
                rate.with_context(|| format!("{}: EMG lacks a sample rate", emg.display()))?;
            let recording = sim::EmgRecording::new(samples, rate)?;
            let reference = read_reference(&reference, cfg)?;
            let truth_set = truth.map(|p| io::read_spikes(&p)).transpose()?;
            let report = eval::thresholding_comparison(
                &recording,
                &reference,
                truth_set.as_ref(),
                &cfg.bss,
                &cfg.decode,
                trial_s,
                cfg.sim.trials,
                cfg.eval.roa_tolerance_ms,
                cfg.eval.roa_max_lag_ms,
                cfg.eval.match_min_roa,
                cfg.seed,
            )?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            write_text(
                &out.join("thresholds.toml"),
                &io::thresholding_summary_toml(&report),
            )?;
            write_text(
                &out.join("raster_adaptive.csv"),
                &io::raster_csv(&report.adaptive.musts),
            )?;
            write_text(
                &out.join("raster_kmeans.csv"),
                &io::raster_csv(&report.kmeans.musts),
            )?;
            println!(
                "adaptive: {} sources, test R² {:?}; kmeans: {} sources, test R² {:?}; improvement {:?}%",
                report.adaptive.qualified_sources,
                report.adaptive.r2_test,
                report.kmeans.qualified_sources,
                report.kmeans.r2_test,
                report.improvement_percent
            );
            finish(
                out,
                "eval thresholds",
                cfg,
                format,
                vec![
                    "thresholds.toml".into(),
                    "raster_adaptive.csv".into(),
                    "raster_kmeans.csv".into(),
                ],
            )
        }
    }
}
