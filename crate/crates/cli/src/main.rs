//! Command-line pipeline: synthesize data, train, evaluate, score and
//! ablate, driven by one TOML experiment config.
//!
//! Exit codes: 0 success, 1 usage/config, 2 data or schema, 3 numeric.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use skeldiff::conditioning::ConditioningKind;
use skeldiff::config::{parse_stat, ExperimentConfig, Precision};
use skeldiff::error::Error;
use skeldiff::evaluation::{
    ablate, run_benchmark, score_all_windows, write_ablation_csv, write_report_json,
    write_sweep_csv,
};
use skeldiff::motion_data::{
    generate_synthetic, load_dataset, save_labels, save_tracks, synthetic_benchmark,
    write_manifest, DatasetManifest, PoseDataset, SplitStrategy, TrackFormat,
};
use skeldiff::scoring::{frame_scores, write_error_histogram, write_scores_csv};
use skeldiff::training::{
    fit, load_checkpoint, save_checkpoint, Checkpoint, StepMetrics, TrainState,
};
use skeldiff::Real;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

mod help;

#[derive(Parser)]
#[command(
    name = "skeldiff",
    version,
    about = "Skeleton-based video anomaly detection via motion-conditioned diffusion",
    after_long_help = help::CONFIG_KEYS
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled pose dataset from the config's
    /// [synthetic] section.
    Synth {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory (also: SKELDIFF_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on normal data and write a checkpoint per epoch.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score a labeled dataset and sweep AUC over the evaluation grid.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path (defaults to <out>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export per-label histograms of the generation errors.
        #[arg(long)]
        histogram: bool,
    },
    /// Emit per-frame anomaly scores without needing labels.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every conditioning strategy x proxy task cell.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Parse { .. }
        | Error::Schema(_)
        | Error::Protocol(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Toml(_)
        | Error::Csv(_) => 2,
        Error::Shape(_) | Error::Domain(_) | Error::Numeric(_) => 3,
    }
}

fn run(cmd: &Command) -> skeldiff::Result<()> {
    let config_path = match cmd {
        Command::Synth { config, .. }
        | Command::Train { config, .. }
        | Command::Eval { config, .. }
        | Command::Score { config, .. }
        | Command::Ablate { config, .. } => config,
    };
    let mut cfg = ExperimentConfig::load(config_path)?;
    apply_env_overrides(&mut cfg)?;
    match cfg.precision {
        Precision::F64 => dispatch::<f64>(cmd, &cfg),
        Precision::F32 => dispatch::<f32>(cmd, &cfg),
    }
}

fn apply_env_overrides(cfg: &mut ExperimentConfig) -> skeldiff::Result<()> {
    if let Ok(dir) = std::env::var("SKELDIFF_OUT") {
        cfg.out_dir = PathBuf::from(dir);
    }
    if let Ok(w) = std::env::var("SKELDIFF_WORKERS") {
        cfg.workers = w
            .parse()
            .map_err(|_| Error::config(format!("SKELDIFF_WORKERS = '{w}' is not a count")))?;
        if cfg.workers == 0 {
            return Err(Error::config("SKELDIFF_WORKERS must be >= 1"));
        }
    }
    Ok(())
}

fn out_dir(cfg: &ExperimentConfig, flag: &Option<PathBuf>) -> skeldiff::Result<PathBuf> {
    let dir = flag.clone().unwrap_or_else(|| cfg.out_dir.clone());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn checkpoint_path(dir: &Path, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone().unwrap_or_else(|| dir.join("checkpoint.json"))
}

/// Training data: the manifest when configured, otherwise the
/// anomaly-free half of the synthetic benchmark pair.
fn train_dataset<T: Real>(cfg: &ExperimentConfig) -> skeldiff::Result<PoseDataset<T>> {
    match &cfg.dataset {
        Some(manifest) => load_dataset(manifest),
        None => Ok(synthetic_benchmark::<T>(&cfg.synthetic)?.0),
    }
}

/// Evaluation data: the manifest when configured, otherwise the mixed
/// half of the synthetic benchmark pair.
fn eval_dataset<T: Real>(cfg: &ExperimentConfig) -> skeldiff::Result<PoseDataset<T>> {
    match &cfg.dataset {
        Some(manifest) => load_dataset(manifest),
        None => Ok(synthetic_benchmark::<T>(&cfg.synthetic)?.1),
    }
}

fn dispatch<T: Real>(cmd: &Command, cfg: &ExperimentConfig) -> skeldiff::Result<()> {
    match cmd {
        Command::Synth { out, .. } => cmd_synth::<T>(cfg, out),
        Command::Train { out, resume, .. } => cmd_train::<T>(cfg, out, *resume),
        Command::Eval {
            checkpoint,
            out,
            histogram,
            ..
        } => cmd_eval::<T>(cfg, checkpoint, out, *histogram),
        Command::Score {
            checkpoint, out, ..
        } => cmd_score::<T>(cfg, checkpoint, out),
        Command::Ablate { out, .. } => cmd_ablate::<T>(cfg, out),
    }
}

fn cmd_synth<T: Real>(cfg: &ExperimentConfig, out: &Option<PathBuf>) -> skeldiff::Result<()> {
    let dir = out_dir(cfg, out)?;
    let ds = generate_synthetic::<T>(&cfg.synthetic)?;
    save_tracks(&dir.join("tracks.jsonl"), &ds.tracks)?;
    save_labels(&dir.join("labels.jsonl"), &ds.labels)?;
    let manifest = DatasetManifest {
        joint_count: ds.skeleton.joint_count,
        edges: ds.skeleton.edges.clone(),
        root_joints: ds.skeleton.root_joints.clone(),
        tracks: "tracks.jsonl".into(),
        labels: Some("labels.jsonl".into()),
        format: TrackFormat::Jsonl,
        conf_floor: 0.1,
    };
    write_manifest(&dir.join("manifest.toml"), &manifest)?;
    println!(
        "wrote {} tracks / {} labeled frames to {}",
        ds.tracks.len(),
        ds.labels.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train<T: Real>(
    cfg: &ExperimentConfig,
    out: &Option<PathBuf>,
    resume: bool,
) -> skeldiff::Result<()> {
    let dir = out_dir(cfg, out)?;
    let ckpt_path = dir.join("checkpoint.json");
    let dataset = train_dataset::<T>(cfg)?;
    let spec = cfg.fit_spec(&dataset.skeleton);

    let resume_state: Option<TrainState<T>> = if resume {
        if !ckpt_path.exists() {
            return Err(Error::config(format!(
                "--resume given but {} does not exist",
                ckpt_path.display()
            )));
        }
        let ckpt = load_checkpoint::<T>(&ckpt_path)?;
        println!(
            "resuming from epoch {} ({} steps)",
            ckpt.state.epoch, ckpt.state.step
        );
        Some(ckpt.state)
    } else {
        None
    };

    let metrics_path = dir.join("metrics.ndjson");
    let mut metrics_file = std::fs::File::create(&metrics_path)?;
    let emit = |m: &StepMetrics| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        println!("{line}");
        use std::io::Write;
        let _ = writeln!(metrics_file, "{line}");
    };
    let skeleton = dataset.skeleton.clone();
    let save_hook = |state: &TrainState<T>| {
        let ckpt = Checkpoint::from_state(&skeleton, &spec, state.clone());
        save_checkpoint(&ckpt, &ckpt_path)
    };
    let state = fit(&dataset, &spec, resume_state, emit, save_hook)?;
    let ckpt = Checkpoint::from_state(&dataset.skeleton, &spec, state);
    save_checkpoint(&ckpt, &ckpt_path)?;
    println!(
        "checkpoint: {} ({} epochs, {} params)",
        ckpt_path.display(),
        ckpt.state.epoch,
        ckpt.state.model.param_count()
    );
    Ok(())
}

fn cmd_eval<T: Real>(
    cfg: &ExperimentConfig,
    checkpoint: &Option<PathBuf>,
    out: &Option<PathBuf>,
    histogram: bool,
) -> skeldiff::Result<()> {
    let dir = out_dir(cfg, out)?;
    let ckpt = load_checkpoint::<T>(&checkpoint_path(&dir, checkpoint))?;
    let dataset = eval_dataset::<T>(cfg)?;
    let opts = cfg.eval_options()?;
    let (report, sets) = run_benchmark(&ckpt, &dataset, &opts)?;
    for cell in &report.cells {
        println!("auc[stat={}, m={}] = {:.4}", cell.stat, cell.m, cell.auc);
    }
    write_report_json(&report, &dir.join("report.json"))?;
    write_sweep_csv(&report, &dir.join("sweep.csv"))?;
    let stat = parse_stat(&cfg.scoring.statistic)?;
    let labels = dataset.labels.as_ref().expect("benchmark is labeled");
    let universe: Vec<(String, u64)> = labels
        .iter()
        .map(|l| (l.scene_id.clone(), l.frame_index))
        .collect();
    let series = frame_scores(&sets, stat, Some(&universe))?;
    write_scores_csv(&series, &dir.join("scores.csv"))?;
    if histogram || cfg.eval.histogram {
        write_error_histogram(
            &sets,
            labels,
            cfg.scoring.histogram_bins,
            &dir.join("histogram.csv"),
        )?;
    }
    println!("report: {}", dir.join("report.json").display());
    Ok(())
}

fn cmd_score<T: Real>(
    cfg: &ExperimentConfig,
    checkpoint: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> skeldiff::Result<()> {
    let dir = out_dir(cfg, out)?;
    let ckpt = load_checkpoint::<T>(&checkpoint_path(&dir, checkpoint))?;
    let dataset = eval_dataset::<T>(cfg)?;
    let sets = score_all_windows(
        &ckpt,
        &dataset,
        cfg.scoring.generations,
        cfg.seed,
        cfg.window.stride,
        cfg.workers,
        cfg.scoring.allow_untrained,
    )?;
    let stat = parse_stat(&cfg.scoring.statistic)?;
    let series = frame_scores(&sets, stat, None)?;
    write_scores_csv(&series, &dir.join("scores.csv"))?;
    println!(
        "scored {} windows -> {} frames in {}",
        sets.len(),
        series.frames.len(),
        dir.join("scores.csv").display()
    );
    Ok(())
}

fn cmd_ablate<T: Real>(cfg: &ExperimentConfig, out: &Option<PathBuf>) -> skeldiff::Result<()> {
    if cfg.dataset.is_some() {
        return Err(Error::config(
            "ablation trains per cell and needs the synthetic benchmark; \
             remove the dataset key",
        ));
    }
    let dir = out_dir(cfg, out)?;
    let (train, test) = synthetic_benchmark::<T>(&cfg.synthetic)?;
    let base = cfg.fit_spec(&train.skeleton);
    let strategies: Vec<ConditioningKind> = cfg.ablation.strategies.clone();
    let tasks: Vec<SplitStrategy> = cfg
        .ablation
        .tasks
        .iter()
        .map(|&kind| SplitStrategy {
            kind,
            seed: cfg.window.imputation_seed,
        })
        .collect();
    let opts = cfg.eval_options()?;
    let cells = ablate(&train, &test, &base, &strategies, &tasks, &opts)?;
    println!("conditioning        task                auc");
    for c in &cells {
        println!(
            "{:<19} {:<19} {:.4}",
            format!("{:?}", c.conditioning),
            format!("{:?}", c.task.kind),
            c.report.auc
        );
    }
    write_ablation_csv(&cells, &dir.join("ablation.csv"))?;
    for c in &cells {
        let name = format!(
            "cell_{:?}_{:?}.json",
            c.conditioning, c.task.kind
        )
        .to_lowercase();
        write_report_json(&c.report, &dir.join(name))?;
    }
    println!("table: {}", dir.join("ablation.csv").display());
    Ok(())
}
