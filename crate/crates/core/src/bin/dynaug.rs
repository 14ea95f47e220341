use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dynaug::analyze::{self, FeatureStage};
use dynaug::augment::{AugmentConfig, Method};
use dynaug::checkpoint;
use dynaug::model::{ArchConfig, GatedModel, Variant};
use dynaug::rng::RngStream;
use dynaug::series::{
    apply_normalizer, impute_missing, parse_ucr_tsv_labeled, to_ucr_tsv, Dataset, DatasetSource,
    TimeSeries,
};
use dynaug::train::{self, EvalInput, TrainConfig};
use dynaug::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dynaug",
    version,
    about = "Gated multi-expert augmentation for time-series classification"
)]
struct Cli {
    /// TOML manifest mapping dataset names to train/test files.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Directory laid out as <root>/<Name>/<Name>_TRAIN.tsv.
    #[arg(long, global = true, env = "UCR_ROOT")]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply one augmentation to every series of a UCR-format file.
    Augment {
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one or more trials and append a results row.
    Train(TrainArgs),
    /// Test accuracy of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: String,
        /// Feed a seeded augmented bundle instead of the replicated input.
        #[arg(long)]
        augmented_eval: Option<u64>,
    },
    /// Test-time-augmentation accuracy of a single-expert checkpoint.
    Tta {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Gating-weight analysis and feature export.
    Analyze {
        #[arg(value_enum)]
        what: AnalyzeWhat,
        #[command(flatten)]
        args: AnalyzeArgs,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value = "proposed")]
    variant: Variant,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = train::DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long)]
    out: PathBuf,
    /// Conv filter counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    filters: Option<Vec<usize>>,
    /// Dense layer and feature width.
    #[arg(long)]
    fc: Option<usize>,
    /// Print the loss every this many iterations (0 disables).
    #[arg(long, default_value_t = 500)]
    log_every: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalyzeWhat {
    Alphas,
    Histogram,
    Extremes,
    Features,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "fused")]
    stage: FeatureStage,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let source = DatasetSource {
        manifest: cli.manifest,
        data_root: cli.data_root,
    };
    match cli.command {
        Command::Augment {
            method,
            seed,
            input,
            out,
        } => augment_file(method, seed, &input, &out),
        Command::Train(args) => train_cmd(&source, args),
        Command::Evaluate {
            checkpoint,
            dataset,
            augmented_eval,
        } => {
            let (model, meta) = checkpoint::load(&checkpoint)?;
            let data = prepared(&source, &dataset, meta.normalizer)?;
            let input = match augmented_eval {
                Some(seed) => EvalInput::Augmented {
                    cfg: meta.augment,
                    seed,
                },
                None => EvalInput::Identity,
            };
            let acc = train::evaluate_with(&model, &data.test, &input)?;
            println!("{dataset},{},{},{acc}", model.variant, meta.lambda);
            Ok(())
        }
        Command::Tta {
            checkpoint,
            dataset,
            seed,
        } => {
            let (model, meta) = checkpoint::load(&checkpoint)?;
            if model.variant != Variant::NoAug {
                eprintln!(
                    "warning: TTA is meant for no_aug checkpoints, got {}",
                    model.variant
                );
            }
            let data = prepared(&source, &dataset, meta.normalizer)?;
            let acc = train::tta_evaluate(&model, &data.test, &meta.augment, seed)?;
            println!("{dataset},tta,{acc}");
            Ok(())
        }
        Command::Analyze { what, args } => analyze_cmd(&source, what, args),
    }
}

/// Loads `name`, normalizing with `norm` when given and refitting otherwise.
fn prepared(
    source: &DatasetSource,
    name: &str,
    norm: Option<dynaug::series::Normalizer>,
) -> Result<Dataset> {
    let raw = source.load(name)?;
    match norm {
        Some(n) => Ok(impute_missing(&apply_normalizer(&n, &raw))),
        None => Ok(raw.prepare()?.0),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(Error::from)
}

fn augment_file(method: Method, seed: u64, input: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(input)?;
    let (series, labels) = parse_ucr_tsv_labeled(&text)?;
    let cfg = AugmentConfig::default();
    let mut rng = RngStream::new(seed);
    let augmented = series
        .iter()
        .map(|s| TimeSeries::new(method.apply(s.values(), &cfg, &mut rng)?, s.label()))
        .collect::<Result<Vec<_>>>()?;
    write(out, &to_ucr_tsv(&augmented, Some(labels.names())))
}

fn train_cmd(source: &DatasetSource, a: TrainArgs) -> Result<()> {
    let raw = source.load(&a.dataset)?;
    let (data, norm) = raw.prepare()?;
    let (c, t) = data.shape();
    let mut arch = ArchConfig::standard(c, t, data.n_classes);
    if a.filters.is_some() || a.fc.is_some() {
        let filters = a
            .filters
            .clone()
            .unwrap_or_else(|| arch.conv_filters.clone());
        let fc = a.fc.unwrap_or(arch.fc_width);
        arch = arch.with_widths(&filters, fc);
    }
    let cfg = TrainConfig {
        iterations: a.iters,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed: a.seed,
        arch_cfg: arch,
        ..TrainConfig::for_dataset(&data, a.variant, a.lambda)
    };
    let seeds: Vec<u64> = (0..a.trials as u64).map(|k| a.seed + k).collect();
    let log_every = a.log_every;
    let mut progress = |trial: usize, it: usize, l: &dynaug::loss::LossBreakdown| {
        if log_every > 0 && it % log_every == 0 {
            eprintln!(
                "trial {trial} iter {it}: ce {:.4} con {:.4} total {:.4}",
                l.ce, l.con, l.total
            );
        }
    };
    let report = train::run_trials_observed(&cfg, &data, &seeds, Some(&a.out), &mut progress)?;
    // Record the normalizer so evaluation maps test data identically.
    for path in &report.checkpoints {
        let (model, mut meta) = checkpoint::load(path)?;
        meta.normalizer = Some(norm);
        checkpoint::save(path, &model, &meta)?;
    }
    let row = train::results_row(&a.dataset, a.variant, cfg.effective_lambda(), &report);
    train::append_result(&a.out.join("results.csv"), &row)?;
    write(
        &a.out.join("config.json"),
        &serde_json::to_string_pretty(&cfg).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    println!("{row}");
    Ok(())
}

fn analyze_cmd(source: &DatasetSource, what: AnalyzeWhat, a: AnalyzeArgs) -> Result<()> {
    let (model, meta): (GatedModel, _) = checkpoint::load(&a.checkpoint)?;
    let data = prepared(source, &a.dataset, meta.normalizer)?;
    let split = match a.split {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    let cfg = &meta.augment;
    if let AnalyzeWhat::Features = what {
        let path = analyze::export_features(&model, split, a.stage, cfg, a.seed, &a.out)?;
        println!("{}", path.display());
        return Ok(());
    }
    let records = analyze::collect_alphas(&model, split, cfg, a.seed)?;
    let (file, text) = match what {
        AnalyzeWhat::Alphas => {
            write(
                &a.out.join("alpha_table.csv"),
                &analyze::alpha_table_to_csv(&analyze::alpha_table(&records)?, a.seed),
            )?;
            ("alphas.csv", analyze::alphas_to_csv(&records, a.seed))
        }
        AnalyzeWhat::Histogram => (
            "histogram.csv",
            analyze::histogram_to_csv(&analyze::alpha_histogram(&records, a.bins)?),
        ),
        AnalyzeWhat::Extremes => {
            let (top, bottom) = analyze::extreme_samples(&records, a.k)?;
            ("extremes.csv", analyze::extremes_to_csv(&top, &bottom))
        }
        AnalyzeWhat::Features => unreachable!(),
    };
    let path = a.out.join(file);
    write(&path, &text)?;
    println!("{}", path.display());
    Ok(())
}
