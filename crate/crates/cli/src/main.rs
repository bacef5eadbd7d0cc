use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use gcart::corruptions::{CorruptionKind, CorruptionSpec};
use gcart::data::{self, Dataset, Split};
use gcart::enhancer::{Enhancer, GcArt};
use gcart::eval::{aggregate, evaluate, summary_csv, write_json, EvalReport, Summary};
use gcart::flops::{count_flops, FlopModule, REFERENCE_ROWS};
use gcart::gradcheck::{pipeline_gradcheck, GradcheckConfig};
use gcart::hypernet::HyperNet;
use gcart::model::{Model, ModelCheckpoint};
use gcart::softhist::HistogramConfig;
use gcart::tonecurve::MonoConfig;
use gcart::trainer::{train, TrainConfig};
use gcart::{ppm, Exec};

#[derive(Parser)]
#[command(name = "gcart", version, about = "Histogram-conditioned rational tone curves")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Run batch loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write seed<k>.json reports.
    Train(TrainArgs),
    /// Evaluate a checkpoint, clean or under corruptions.
    Eval(EvalArgs),
    /// Map a PPM image through an enhancer.
    Apply(ApplyArgs),
    /// Print the operation count of an enhancer.
    Flops(FlopsArgs),
    /// Finite-difference check of full-pipeline gradients.
    Gradcheck(GradcheckArgs),
    /// Combine per-seed reports into mean and standard deviation.
    Aggregate(AggregateArgs),
}

#[derive(Args, Clone, Serialize)]
struct DataArgs {
    /// Directory holding the CIFAR-10 binary batches.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use N generated training images (and N/5 test images) instead of CIFAR-10.
    #[arg(long, value_name = "N", conflicts_with = "data")]
    synthetic: Option<usize>,
    /// Train on a seeded subset of this size.
    #[arg(long)]
    subset: Option<usize>,
    /// Evaluate on a seeded subset of the test split.
    #[arg(long)]
    eval_subset: Option<usize>,
    /// Seed for subset sampling and synthetic data.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

impl DataArgs {
    fn load(&self, split: Split) -> Result<Dataset> {
        let subset = match split {
            Split::Train => self.subset,
            Split::Test => self.eval_subset,
        };
        if let Some(n) = self.synthetic {
            let (count, seed) = match split {
                Split::Train => (n, self.data_seed),
                Split::Test => ((n / 5).max(10), self.data_seed.wrapping_add(1)),
            };
            let ds = data::synthetic(count, seed);
            return Ok(match subset {
                Some(k) => ds.subsample(k, self.data_seed)?,
                None => ds,
            });
        }
        let dir = self
            .data
            .as_deref()
            .context("pass --data <cifar-10-batches-bin> or --synthetic <N>")?;
        data::load_cifar10(dir, split, subset, self.data_seed)
            .with_context(|| format!("loading {split:?} split from {}", dir.display()))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Results root; files go to <out>/<run-id>/.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Defaults to the enhancer name.
    #[arg(long)]
    run_id: Option<String>,
    /// Single seed; overrides --seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [42u64, 43, 44])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    #[arg(long, default_value = "gcart")]
    enhancer: Enhancer,
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 128)]
    head_hidden: usize,
    #[arg(long)]
    no_augment: bool,
    /// Skip the corruption sweep and report clean accuracy only.
    #[arg(long)]
    clean_only: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corruption: Option<CorruptionKind>,
    #[arg(long, requires = "corruption")]
    severity: Option<u8>,
    /// Write a full report here (sweep mode only).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long, default_value = "gcart")]
    enhancer: Enhancer,
    /// Checkpoint supplying learned weights for `gcart`.
    #[arg(long)]
    model: Option<PathBuf>,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long, default_value = "gcart")]
    module: FlopModule,
    #[arg(long, default_value_t = 32)]
    h: usize,
    #[arg(long, default_value_t = 32)]
    w: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    h: usize,
    #[arg(long, default_value_t = 8)]
    w: usize,
    #[arg(long, default_value_t = 16)]
    head_hidden: usize,
    /// Check at most this many entries per tensor.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AggregateArgs {
    /// Run directories containing seed<k>.json files.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Also write a CSV table with one row per run.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .format_timestamp(None)
        .init();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let result = match cli.command {
        Command::Train(a) => run_train(a, exec),
        Command::Eval(a) => run_eval(a, exec),
        Command::Apply(a) => run_apply(a),
        Command::Flops(a) => run_flops(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Aggregate(a) => run_aggregate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[derive(Serialize)]
struct RunConfig<'a> {
    #[serde(flatten)]
    train: &'a TrainConfig,
    data: &'a DataArgs,
    clean_only: bool,
}

fn run_train(a: TrainArgs, exec: Exec) -> Result<bool> {
    let seeds = match a.seed {
        Some(s) => vec![s],
        None => a.seeds.clone(),
    };
    let run_id = a.run_id.clone().unwrap_or_else(|| a.enhancer.to_string().replace(':', "-"));
    let dir = a.out.join(&run_id);
    let train_ds = a.data.load(Split::Train)?;
    let test_ds = a.data.load(Split::Test)?;
    info!("{} training / {} test images", train_ds.len(), test_ds.len());

    let mut reports = Vec::new();
    for seed in seeds {
        let config = TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            lambda: a.lambda,
            seed,
            enhancer: a.enhancer,
            head_hidden: a.head_hidden,
            augment: if a.no_augment { None } else { TrainConfig::default().augment },
            ..TrainConfig::default()
        };
        let echo = serde_json::to_value(RunConfig {
            train: &config,
            data: &a.data,
            clean_only: a.clean_only,
        })?;
        info!("seed {seed}: training {} for {} epochs", config.enhancer, config.epochs);
        let outcome = train(&config, &train_ds, None, exec)?;
        let report = if a.clean_only {
            EvalReport {
                version: 1,
                seed,
                config: echo,
                clean_acc: evaluate(&outcome.model, &test_ds, None, exec)?,
                corruptions: BTreeMap::new(),
            }
        } else {
            EvalReport::run(&outcome.model, &test_ds, seed, echo, exec)?
        };
        let path = dir.join(format!("seed{seed}.json"));
        report.write(&path)?;
        write_json(&dir.join(format!("seed{seed}_train.json")), &outcome.log)?;
        write_json(&dir.join(format!("seed{seed}_model.json")), &outcome.model.to_checkpoint())?;
        info!("seed {seed}: clean {:.2}% -> {}", report.clean_acc, path.display());
        reports.push(report);
    }
    if reports.len() > 1 {
        let summary = aggregate(&reports)?;
        write_json(&dir.join("summary.json"), &summary)?;
        print_summary(&run_id, &summary);
    }
    Ok(true)
}

fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let ck: ModelCheckpoint = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Model::from_checkpoint(&ck)?)
}

fn run_eval(a: EvalArgs, exec: Exec) -> Result<bool> {
    let model = load_model(&a.model)?;
    let ds = a.data.load(Split::Test)?;
    if let Some(kind) = a.corruption {
        let severities: Vec<u8> = match a.severity {
            Some(s) => vec![s],
            None => (1..=5).collect(),
        };
        for s in severities {
            let acc = evaluate(&model, &ds, Some(CorruptionSpec::new(kind, s)?), exec)?;
            println!("{kind} severity {s}: {acc:.2}%");
        }
        return Ok(true);
    }
    let config = serde_json::json!({ "model": a.model, "enhancer": model.enhancer, "data": &a.data });
    let report = EvalReport::run(&model, &ds, a.seed, config, exec)?;
    println!("clean: {:.2}%", report.clean_acc);
    for (name, c) in &report.corruptions {
        let cells: Vec<String> = c.per_severity.iter().map(|v| format!("{v:.2}")).collect();
        println!("{name}: [{}] mean {:.2}", cells.join(", "), c.mean);
    }
    if let Some(out) = &a.out {
        report.write(out)?;
    }
    Ok(true)
}

fn run_apply(a: ApplyArgs) -> Result<bool> {
    let image = ppm::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let out = match (a.enhancer, &a.model) {
        (Enhancer::GcArt, Some(path)) => {
            let model = load_model(path)?;
            let g = model.gcart.context("checkpoint has no learned enhancer")?;
            g.enhance(&image)?
        }
        (Enhancer::GcArt, None) => {
            warn!("no --model given; using the identity-initialized curve");
            GcArt::new(HyperNet::new(0), HistogramConfig::default(), MonoConfig::default())?.enhance(&image)?
        }
        (e, Some(_)) => bail!("--model only applies to gcart, not {e}"),
        (e, None) => e.apply_fixed(&image)?,
    };
    ppm::write(&a.output, &out).with_context(|| format!("writing {}", a.output.display()))?;
    Ok(true)
}

fn run_flops(a: FlopsArgs) -> Result<bool> {
    let report = count_flops(a.module, a.h, a.w, 3)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
        for r in REFERENCE_ROWS {
            println!("reference {}: params {}, total {} (reference, 32x32)", r.name, r.params, r.total_flops);
        }
    }
    Ok(true)
}

fn run_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let cfg = GradcheckConfig {
        max_per_tensor: a.sample,
        seed: a.seed,
        ..GradcheckConfig::default()
    };
    let r = pipeline_gradcheck(a.h, a.w, a.head_hidden, &cfg)?;
    println!(
        "checked {} entries, max rel err {:.3e}, {} above {:e}",
        r.checked, r.max_rel_err, r.failures, r.tolerance
    );
    if let Some(w) = &r.worst {
        println!(
            "worst: tensor {} index {}: analytic {:.9e}, numeric {:.9e}",
            w.tensor, w.index, w.analytic, w.numeric
        );
    }
    println!("{}", if r.passed() { "PASS" } else { "FAIL" });
    Ok(r.passed())
}

fn run_aggregate(a: AggregateArgs) -> Result<bool> {
    let mut rows = Vec::new();
    for dir in &a.runs {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_seed_report(p))
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("no seed<k>.json files in {}", dir.display());
        }
        let reports = files
            .iter()
            .map(|p| EvalReport::read(p).with_context(|| format!("reading {}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        let summary = aggregate(&reports)?;
        write_json(&dir.join("summary.json"), &summary)?;
        let label = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        print_summary(&label, &summary);
        rows.push((label, summary));
    }
    if let Some(path) = &a.csv {
        fs::write(path, summary_csv(&rows)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(true)
}

fn is_seed_report(p: &Path) -> bool {
    p.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("seed"))
        .and_then(|n| n.strip_suffix(".json"))
        .is_some_and(|k| !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()))
}

fn print_summary(label: &str, s: &Summary) {
    println!(
        "{label} ({} seeds): clean {:.2} ± {:.2}",
        s.seeds.len(),
        s.clean_acc.mean,
        s.clean_acc.sd
    );
    for (name, c) in &s.corruptions {
        println!("  {name}: {:.2} ± {:.2}", c.mean.mean, c.mean.sd);
    }
    for w in &s.warnings {
        warn!("{label}: {w}");
    }
}
