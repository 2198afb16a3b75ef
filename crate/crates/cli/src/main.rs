use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lds::config::{preset, preset_labels, DataSource, RunConfig};
use lds::data::{generate_toy_dataset, ToyConfig};
use lds::eval::{evaluate_tables, extract_table, save_feature_table};
use lds::model::checkpoint::load_checkpoint;
use lds::pipeline::{default_run_dir, load_data, run_training, LoadedData};
use lds::train::{resolve_checkpoint, METRICS_FILE};

/// Default root for run and dataset directories.
const OUTPUT_ROOT_VAR: &str = "LDS_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "lds", version, about = "Multi-branch person re-identification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic toy dataset in the Market-1501 layout.
    Toygen {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory (default: $LDS_OUTPUT_ROOT/toy-seed<N>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON file with toy generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model and write a run directory.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (default: $LDS_OUTPUT_ROOT/<name>-seed<N>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Market-layout dataset directory overriding the configured source.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on query/gallery; prints metrics JSON.
    Eval {
        #[command(flatten)]
        target: CheckpointArgs,
        /// Metrics file (default: metrics.json next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the concatenated features of one split as a feature container.
    ExportFeatures {
        #[command(flatten)]
        target: CheckpointArgs,
        #[arg(long, value_enum, default_value_t = SplitArg::Gallery)]
        split: SplitArg,
        /// Output `.bin` path; a `.json` sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ConfigSource {
    /// Run configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shipped preset label, e.g. `LDS-3(3)`.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct CheckpointArgs {
    /// Checkpoint file, `ep<N>` directory or run directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run configuration; defaults to the one stored in the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Market-layout dataset directory overriding the configured source.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Query,
    Gallery,
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn load_run_config(source: &ConfigSource) -> anyhow::Result<RunConfig> {
    match (&source.config, &source.preset) {
        (Some(path), _) => Ok(RunConfig::from_path(path)?),
        (None, Some(label)) => Ok(preset(label)?),
        (None, None) => bail!(
            "one of --config or --preset is required (presets: {})",
            preset_labels().collect::<Vec<_>>().join(", ")
        ),
    }
}

fn toygen(seed: u64, out: Option<PathBuf>, config: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize::<_, ToyConfig>(de)
                .map_err(|e| lds::Error::config(format!("toy.{}", e.path()), e.into_inner().to_string()))?
        }
        None => ToyConfig::default(),
    };
    let out = out.unwrap_or_else(|| output_root().join(format!("toy-seed{seed}")));
    let toy = generate_toy_dataset(&cfg, seed)?;
    toy.write_to(&out)?;
    log::info!(
        "wrote {} train / {} query / {} gallery images to {}",
        toy.train.len(),
        toy.query.len(),
        toy.gallery.len(),
        out.display()
    );
    Ok(())
}

fn train(source: ConfigSource, seed: Option<u64>, out: Option<PathBuf>, data: Option<PathBuf>) -> anyhow::Result<()> {
    let mut cfg = load_run_config(&source)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = &data {
        cfg.data = DataSource::Directory { root: d.clone() };
    }
    cfg.validate()?;
    let out = out.unwrap_or_else(|| default_run_dir(&output_root(), &cfg));
    let loaded = load_data(&cfg.data, None)?;
    let outcome = run_training(&cfg, &loaded, Some(&out))?;
    if let Some(m) = &outcome.metrics {
        println!("{}", serde_json::to_string_pretty(m)?);
    }
    log::info!("run directory: {}", out.display());
    Ok(())
}

/// Model, settings and data for a stored checkpoint.
struct Loaded {
    model: lds::model::MultiBranchModel,
    config: RunConfig,
    data: LoadedData,
    checkpoint: PathBuf,
}

fn load_target(target: &CheckpointArgs) -> anyhow::Result<Loaded> {
    let checkpoint = resolve_checkpoint(&target.checkpoint)?;
    let (model, header) = load_checkpoint(&checkpoint)?;
    let config = match &target.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::from_json(&header.run_config.to_string())?,
    };
    if config.augment.branch_plan.len() != model.num_branches() {
        return Err(lds::Error::config(
            "augment.branch_plan",
            format!("config has {} branches, checkpoint has {}", config.augment.branch_plan.len(), model.num_branches()),
        )
        .into());
    }
    let data = load_data(&config.data, target.data.as_deref())?;
    Ok(Loaded {
        model,
        config,
        data,
        checkpoint,
    })
}

fn eval(target: CheckpointArgs, out: Option<PathBuf>) -> anyhow::Result<()> {
    let mut t = load_target(&target)?;
    let (aug, bs) = (&t.config.augment, t.config.eval.batch_size);
    let q = extract_table(&mut t.model, &t.data.query, aug, bs)?;
    let g = extract_table(&mut t.model, &t.data.gallery, aug, bs)?;
    let report = evaluate_tables(&q, &g, t.config.eval.metric)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    let out = out.unwrap_or_else(|| t.checkpoint.parent().unwrap_or(Path::new(".")).join(METRICS_FILE));
    std::fs::write(&out, &json).with_context(|| format!("writing {}", out.display()))?;
    print!("{json}");
    Ok(())
}

fn export_features(target: CheckpointArgs, split: SplitArg, out: PathBuf) -> anyhow::Result<()> {
    let mut t = load_target(&target)?;
    let dataset = match split {
        SplitArg::Train => &t.data.train,
        SplitArg::Query => &t.data.query,
        SplitArg::Gallery => &t.data.gallery,
    };
    let table = extract_table(&mut t.model, dataset, &t.config.augment, t.config.eval.batch_size)?;
    save_feature_table(&out, &table)?;
    log::info!("wrote {} x {} features to {}", table.len(), table.dim(), out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Toygen { seed, out, config } => toygen(seed, out, config),
        Command::Train { source, seed, out, data } => train(source, seed, out, data),
        Command::Eval { target, out } => eval(target, out),
        Command::ExportFeatures { target, split, out } => export_features(target, split, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e.downcast_ref::<lds::Error>().is_some_and(lds::Error::is_validation);
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}
