//! `cloudsvm`: train, apply and evaluate distributed SVMs from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use cloudsvm::dataset::{
    parse_csv_records, parse_libsvm_records, records_to_dataset, CsvOptions, Dataset, Label,
    LabelMapping, PartitionStrategy, RawRecord, ScalingMode, ScalingParams, SparseVector,
};
use cloudsvm::experiment::{run_experiment, ExperimentConfig, ExperimentError};
use cloudsvm::kernel::KernelSpec;
use cloudsvm::risk;
use cloudsvm::solver::{SvmModel, TrainConfig, WorkingSetSelection};
use cloudsvm::trainer::{
    cloud_train_with, write_trace_csv, CloudTrainConfig, IterationStats, RunOptions, StopRule,
};

#[derive(Parser)]
#[command(name = "cloudsvm", version, about = "Distributed SVM training by support-vector exchange")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on partitioned data.
    Train(TrainArgs),
    /// Print `<id>,<label>,<decision>` for every sample.
    Predict(PredictArgs),
    /// Run a cross-validated experiment from a JSON config.
    Experiment(ExperimentArgs),
    /// Summarise a dataset or a model file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Input file.
    #[arg(long)]
    data: PathBuf,
    /// `libsvm` or `csv`.
    #[arg(long, default_value = "libsvm", value_parser = ["libsvm", "csv"])]
    format: String,
    /// CSV label column (0-based).
    #[arg(long, default_value_t = 0)]
    label_column: usize,
    /// CSV: skip the first row.
    #[arg(long)]
    has_header: bool,
    /// `strict`, `zero-as-negative`, `one-vs-rest:<class>` or `majority-vs-rest`.
    #[arg(long, default_value = "strict", value_parser = parse_labels)]
    labels: LabelMapping,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Partition count.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    l: u64,
    #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
    c: f64,
    /// `linear`, `rbf:gamma=<v>` or `poly:degree=<d>,gamma=<v>,coef0=<v>`.
    #[arg(long, default_value = "linear", value_parser = parse_kernel)]
    kernel: KernelSpec,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// `minmax` or `none`.
    #[arg(long, default_value = "none", value_parser = parse_enum::<ScalingMode>)]
    scale: ScalingMode,
    #[arg(long, default_value_t = 1e-6, value_parser = non_negative_f64)]
    epsilon: f64,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    max_iterations: u64,
    /// `risk_delta`, `sv_set_fixed_point` or `either`.
    #[arg(long, default_value = "either", value_parser = parse_enum::<StopRule>)]
    stop_rule: StopRule,
    /// `stratified`, `shuffled` or `round_robin`.
    #[arg(long, default_value = "stratified", value_parser = parse_enum::<PartitionStrategy>)]
    partition_strategy: PartitionStrategy,
    #[arg(long)]
    reshuffle_each_iteration: bool,
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    kkt_tol: f64,
    /// `maximal_violating_pair` or `second_order`.
    #[arg(long, default_value = "maximal_violating_pair", value_parser = parse_enum::<WorkingSetSelection>)]
    working_set: WorkingSetSelection,
    /// Worker threads; defaults to the logical CPU count.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    parallelism: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the config value, then the logical CPU count.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    parallelism: Option<u64>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InspectTarget {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    target: InspectTarget,
    #[arg(long, default_value = "libsvm", value_parser = ["libsvm", "csv"])]
    format: String,
    #[arg(long, default_value_t = 0)]
    label_column: usize,
    #[arg(long)]
    has_header: bool,
    #[arg(long, default_value = "strict", value_parser = parse_labels)]
    labels: LabelMapping,
}

fn parse_kernel(s: &str) -> Result<KernelSpec, String> {
    s.parse::<KernelSpec>().map_err(|e| e.to_string())
}

fn parse_labels(s: &str) -> Result<LabelMapping, String> {
    match s {
        "strict" => Ok(LabelMapping::Strict),
        "zero-as-negative" => Ok(LabelMapping::ZeroAsNegative),
        "majority-vs-rest" => Ok(LabelMapping::MajorityVsRest),
        _ => match s.strip_prefix("one-vs-rest:") {
            Some(v) => v
                .parse::<f64>()
                .map(LabelMapping::OneVsRest)
                .map_err(|_| format!("bad class value `{v}`")),
            None => Err(format!("unknown label mapping `{s}`")),
        },
    }
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a non-negative number, got `{s}`")),
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn read_records(path: &Path, format: &str, opts: &CsvOptions) -> Result<Vec<RawRecord>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let parsed = match format {
        "csv" => parse_csv_records(&text, opts).map(|(records, _)| records),
        _ => parse_libsvm_records(&text),
    };
    parsed.map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn csv_options(label_column: usize, has_header: bool, labels: LabelMapping) -> CsvOptions {
    CsvOptions {
        label_column: Some(label_column),
        has_header,
        mapping: labels,
    }
}

fn load_labeled(args: &DataArgs) -> Result<Dataset, Failure> {
    let opts = csv_options(args.label_column, args.has_header, args.labels);
    let records = read_records(&args.data, &args.format, &opts)?;
    records_to_dataset(records, args.labels, 0, false)
        .map_err(|e| runtime(format!("{}: {e}", args.data.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct Manifest<'a> {
    data: String,
    seed: u64,
    scaling: ScalingMode,
    config: &'a CloudTrainConfig,
    converged: bool,
    converged_at: Option<usize>,
    iterations: usize,
    global_sv_count: usize,
    model_sv_count: usize,
    wall_time_secs: f64,
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let cfg = CloudTrainConfig {
        l: args.l as usize,
        train: TrainConfig {
            kkt_tol: args.kkt_tol,
            working_set: args.working_set,
            ..TrainConfig::default()
                .with_c(args.c)
                .with_kernel(args.kernel)
        },
        epsilon: args.epsilon,
        max_iterations: args.max_iterations as usize,
        seed: args.seed,
        stop_rule: args.stop_rule,
        partition_strategy: args.partition_strategy,
        reshuffle_each_iteration: args.reshuffle_each_iteration,
        ..CloudTrainConfig::default()
    };
    let raw = load_labeled(&args.data)?;
    if cfg.l > raw.len() {
        return Err(Failure::Usage(format!(
            "--l {} exceeds the {} samples in {}",
            cfg.l,
            raw.len(),
            args.data.data.display()
        )));
    }
    let params = ScalingParams::fit(&raw, args.scale);
    let ds = params.apply(&raw);
    let print_round = |s: &IterationStats| {
        println!(
            "t={} risk={} acc={} svs={}",
            s.t, s.risk, s.accuracy, s.global_sv_count
        );
    };
    let opts = RunOptions {
        holdout: None,
        parallelism: Some(args.parallelism.map_or_else(default_parallelism, |p| p as usize)),
        observer: Some(&print_round),
    };
    let outcome = cloud_train_with(&ds, &cfg, &opts).map_err(runtime)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    let model_path = args.out.join("model.json");
    let scaling = (args.scale != ScalingMode::None).then_some(&params);
    write_file(&model_path, (outcome.model.to_json(scaling) + "\n").as_bytes())?;

    let trace_path = args.out.join("trace.csv");
    let mut trace = Vec::new();
    write_trace_csv(&outcome.trace, &mut trace, false).map_err(runtime)?;
    write_file(&trace_path, &trace)?;

    let manifest_path = args.out.join("manifest.json");
    let manifest = Manifest {
        data: args.data.data.display().to_string(),
        seed: args.seed,
        scaling: args.scale,
        config: &cfg,
        converged: outcome.converged,
        converged_at: outcome.converged_at,
        iterations: outcome.trace.len(),
        global_sv_count: outcome.global_svs.len(),
        model_sv_count: outcome.model.support_vectors().len(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(runtime)? + "\n";
    write_file(&manifest_path, json.as_bytes())?;

    if !outcome.converged {
        eprintln!(
            "warning: no convergence within {} iterations",
            cfg.max_iterations
        );
    }
    for path in [&model_path, &trace_path, &manifest_path] {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.model)
        .map_err(|e| runtime(format!("{}: {e}", args.model.display())))?;
    let (model, scaling) = SvmModel::from_json(&text)
        .map_err(|e| runtime(format!("{}: {e}", args.model.display())))?;
    let scaling = scaling.unwrap_or_else(ScalingParams::identity);

    let d = &args.data;
    let opts = csv_options(d.label_column, d.has_header, d.labels);
    let records = read_records(&d.data, &d.format, &opts)?;
    let labeled = !records.is_empty() && records.iter().all(|r| r.label.is_some());
    let widest = records
        .iter()
        .map(|r| r.features.max_index() as usize)
        .max()
        .unwrap_or(0);
    if widest > model.dim() {
        return Err(runtime(format!(
            "{} has feature index {widest} but the model has dimension {}",
            d.data.display(),
            model.dim()
        )));
    }

    let samples: Vec<(u64, SparseVector, Option<Label>)> = if labeled {
        records_to_dataset(records, d.labels, 0, false)
            .map_err(|e| runtime(format!("{}: {e}", d.data.display())))?
            .into_samples()
            .into_iter()
            .map(|s| (s.id, s.features, Some(s.label)))
            .collect()
    } else {
        records
            .into_iter()
            .enumerate()
            .map(|(pos, r)| (pos as u64, r.features, None))
            .collect()
    };

    let mut out = String::new();
    let mut pairs = Vec::new();
    for (id, x, truth) in &samples {
        let f = model.decision(&scaling.apply_features(x));
        let label = Label::from_sign(f >= 0.0);
        out.push_str(&format!("{id},{label},{f}\n"));
        if let Some(t) = truth {
            pairs.push((f, *t));
        }
    }
    print!("{out}");
    if labeled {
        let r = risk::report_from_decisions(pairs).map_err(runtime)?;
        eprintln!(
            "accuracy={} correct={} n={} risk={}",
            r.accuracy, r.correct, r.n, r.empirical_risk
        );
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::from_file(&args.config).map_err(|e| match e {
        ExperimentError::Schema(_) | ExperimentError::Io { .. } => Failure::Usage(e.to_string()),
        other => runtime(other),
    })?;
    if let Some(out) = args.out {
        cfg.output_dir = Some(out);
    }
    cfg.parallelism = Some(
        args.parallelism
            .map(|p| p as usize)
            .or(cfg.parallelism)
            .unwrap_or_else(default_parallelism),
    );
    let outcome = run_experiment(&cfg).map_err(runtime)?;
    for path in &outcome.artifacts {
        println!("wrote {}", path.display());
    }
    let agg = &outcome.report.aggregate;
    println!(
        "accuracy={} iterations={} svs={}",
        agg.pooled_accuracy, agg.mean_iterations, agg.mean_sv_count
    );
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), Failure> {
    if let Some(path) = &args.target.model {
        let text =
            fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let (model, scaling) =
            SvmModel::from_json(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        println!("kernel={}", model.kernel());
        println!("dim={}", model.dim());
        println!("support_vectors={}", model.support_vectors().len());
        println!("bias={}", model.bias());
        println!(
            "scaling={}",
            scaling.map_or("none".to_string(), |s| format!("{:?}", s.mode).to_lowercase())
        );
        return Ok(());
    }
    let data = DataArgs {
        data: args.target.data.expect("clap enforces one target"),
        format: args.format,
        label_column: args.label_column,
        has_header: args.has_header,
        labels: args.labels,
    };
    let ds = load_labeled(&data)?;
    let (neg, pos) = ds.class_counts();
    println!("samples={}", ds.len());
    println!("dim={}", ds.dim());
    println!("positive={pos}");
    println!("negative={neg}");
    Ok(())
}
