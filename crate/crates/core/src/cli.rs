//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors, 2 for runtime failures.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{load_windows, PreparedData, RunConfig};
use crate::data::{load_csv, WindowPair};
use crate::decompose::{additive_decompose, DecompConfig, DecompMethod};
use crate::error::Error;
use crate::evaluation::{
    evaluate, export_attention_map, run_ablation, zero_shot_eval, AblationSetup, AblationVariant, MeanPredictor,
    MetricsReport,
};
use crate::model::Model;
use crate::checkpoint::TensorCheckpoint;
use crate::training::{finite_difference_check, train_with_observer};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "tsalign", version, about = "Decomposed, text-aligned time-series forecasting on a frozen backbone")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate trained runs on their test split.
    Eval(EvalArgs),
    /// Evaluate a trained run on another dataset without updates.
    Zeroshot(ZeroShotArgs),
    /// Train and evaluate ablation variants over several seeds.
    Ablate(AblateArgs),
    /// Write the trend/seasonal/residual split of one channel as CSV.
    Decompose(DecomposeArgs),
    /// Export trend-patch to anchor attention for one window.
    Explain(ExplainArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct Overrides {
    /// Output root (default: config `output`, then $TSALIGN_OUT, then ./runs)
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Run directories; one per horizon when reporting several horizons.
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    /// Merged metrics file (CSV); the JSON summary is written next to it.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ZeroShotArgs {
    #[arg(long)]
    run: PathBuf,
    /// Dataset descriptor of the target dataset.
    #[arg(long)]
    target: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Comma-separated seeds; defaults to three consecutive seeds starting at --seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// `all` or comma-separated variant ids.
    #[arg(long, default_value = "all")]
    variants: String,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    /// CSV file with a datetime column followed by numeric columns.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    csv: Option<PathBuf>,
    /// Run config; its dataset and decomposition settings are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    channel: usize,
    #[arg(long, default_value_t = 0)]
    start: usize,
    /// Number of steps to decompose (default: the rest of the series).
    #[arg(long)]
    len: Option<usize>,
    #[arg(long, value_parser = parse_method)]
    method: Option<DecompMethod>,
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Output CSV (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    run: PathBuf,
    /// Index of the test window.
    #[arg(long, default_value_t = 0)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    channel: usize,
    /// Also write every head separately.
    #[arg(long)]
    per_head: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long, default_value_t = 32)]
    sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
}

fn parse_method(s: &str) -> Result<DecompMethod, String> {
    match s {
        "moving_average" | "ma" => Ok(DecompMethod::MovingAverage),
        "stl" => Ok(DecompMethod::Stl),
        _ => Err(format!("unknown method {s:?}; expected moving_average or stl")),
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

type Outcome = Result<(), Failure>;

fn invalid(e: impl Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Zeroshot(a) => cmd_zeroshot(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            match &f {
                Failure::Invalid(m) => eprintln!("error: {m}"),
                Failure::Runtime(m) => eprintln!("runtime error: {m}"),
            }
            f.code()
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>, o: Option<&Overrides>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path).map_err(invalid)?;
    if let Some(seed) = seed {
        cfg.seed = Some(seed);
        cfg.train.seed = seed;
    }
    if let Some(o) = o {
        if let Some(v) = &o.variant {
            cfg.variant = v.parse().map_err(invalid)?;
        }
        if let Some(out) = &o.output {
            cfg.output = Some(out.clone());
        }
        if o.max_steps.is_some() {
            cfg.train.max_steps = o.max_steps;
        }
        if let Some(v) = o.max_epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = o.learning_rate {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = o.batch_size {
            cfg.train.batch_size = v;
        }
    }
    cfg.validate().map_err(invalid)?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    std::fs::write(path, text + "\n").map_err(|e| runtime(Error::io(path, e)))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| runtime(Error::io(path, e)))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| runtime(Error::io(path, e)))
}

fn load_data(cfg: &RunConfig) -> Result<PreparedData, Failure> {
    let data = load_windows(&cfg.dataset, cfg.model.seq_len, cfg.model.horizon).map_err(runtime)?;
    for w in &data.warnings {
        eprintln!("warning: {w}");
    }
    if data.train.is_empty() {
        return Err(runtime(format!("dataset {} yields no training windows", data.descriptor.name)));
    }
    Ok(data)
}

fn build_model(cfg: &RunConfig, channels: usize, seed: u64) -> Result<Model, Failure> {
    let backbone = cfg.build_backbone().map_err(runtime)?;
    Model::new(cfg.effective_model(channels), backbone, seed).map_err(runtime)
}

/// Rebuilds a trained model from a run directory.
pub fn load_run(dir: &Path) -> crate::error::Result<(RunConfig, Model)> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE))?;
    cfg.validate()?;
    let ck = TensorCheckpoint::load(&dir.join(CHECKPOINT_FILE))?;
    let channels = ck
        .metadata
        .get("channels")
        .and_then(|c| c.parse().ok())
        .unwrap_or(1);
    let mut model = Model::new(cfg.effective_model(channels), cfg.build_backbone()?, cfg.seed.unwrap_or(0))?;
    model.load_params(&ck)?;
    Ok((cfg, model))
}

fn run_dir_name(dataset: &str, variant: AblationVariant, seed: u64, horizon: usize) -> String {
    format!("{dataset}-{variant}-h{horizon}-seed{seed}")
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let cfg = load_config(&a.config, Some(a.seed), Some(&a.overrides))?;
    let data = load_data(&cfg)?;
    let channels = data.dataset.channels();
    let mut model = build_model(&cfg, channels, a.seed)?;
    let dir = cfg
        .output_root(None)
        .join(run_dir_name(&data.descriptor.name, cfg.variant, a.seed, cfg.model.horizon));
    create_dir(&dir)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml().map_err(runtime)?)?;
    let prepared = model.prepare_pair(&data.train[0]).map_err(runtime)?;
    write_text(&dir.join("prompts.txt"), &(prepared.prompts().join("\n") + "\n"))?;

    println!(
        "training {} ({} trainable values) on {} windows, {} validation",
        cfg.variant,
        model.param_count(),
        data.train.len(),
        data.val.len()
    );
    let report = train_with_observer(&mut model, &data.train, &data.val, &cfg.train, |e| match e.val_loss {
        Some(v) => println!("epoch {:>3}  train {:.6}  val {:.6}", e.epoch, e.train_loss, v),
        None => println!("epoch {:>3}  train {:.6}", e.epoch, e.train_loss),
    })
    .map_err(runtime)?;
    write_json(&dir.join("train_report.json"), &report)?;
    let mut ck = model.to_checkpoint();
    ck.metadata.insert("channels".into(), channels.to_string());
    ck.metadata.insert("seed".into(), a.seed.to_string());
    ck.save(&dir.join(CHECKPOINT_FILE)).map_err(runtime)?;
    if let Some(step) = report.diverged_at_step {
        return Err(runtime(Error::Divergence { step }));
    }
    if !data.test.is_empty() {
        let mut metrics = evaluate(&model, &data.test, &data.descriptor.name).map_err(runtime)?;
        metrics.variant = cfg.variant.id().into();
        metrics.seed = Some(a.seed);
        MetricsReport::write_csv(std::slice::from_ref(&metrics), &dir.join("metrics.csv")).map_err(runtime)?;
        write_json(&dir.join("metrics.json"), &metrics)?;
        println!("test mse {:.6}  mae {:.6}", metrics.mse(), metrics.mae());
    }
    println!("run directory: {}", dir.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let mut reports = Vec::new();
    for run in &a.runs {
        let (cfg, model) = load_run(run).map_err(invalid)?;
        let data = load_windows(&cfg.dataset, cfg.model.seq_len, cfg.model.horizon).map_err(runtime)?;
        let mut metrics = evaluate(&model, &data.test, &data.descriptor.name).map_err(runtime)?;
        metrics.variant = cfg.variant.id().into();
        metrics.seed = cfg.seed;
        let baseline = evaluate(&MeanPredictor { horizon: cfg.model.horizon }, &data.test, &data.descriptor.name)
            .map_err(runtime)?;
        MetricsReport::write_csv(std::slice::from_ref(&metrics), &run.join("metrics.csv")).map_err(runtime)?;
        write_json(&run.join("metrics.json"), &metrics)?;
        println!(
            "{}  H={}  mse {:.6}  mae {:.6}  (history mean: mse {:.6})",
            run.display(),
            cfg.model.horizon,
            metrics.mse(),
            metrics.mae(),
            baseline.mse()
        );
        reports.push(metrics);
    }
    if let Some(path) = &a.summary {
        let merged = MetricsReport::merge(&reports).map_err(runtime)?;
        MetricsReport::write_csv(std::slice::from_ref(&merged), path).map_err(runtime)?;
        write_json(&path.with_extension("json"), &merged)?;
    }
    Ok(())
}

fn cmd_zeroshot(a: ZeroShotArgs) -> Outcome {
    let (cfg, model) = load_run(&a.run).map_err(invalid)?;
    let source = crate::data::DatasetDescriptor::from_file(&cfg.dataset).map_err(invalid)?;
    let target = load_windows(&a.target, cfg.model.seq_len, cfg.model.horizon).map_err(invalid)?;
    let report = zero_shot_eval(&model, &source.name, &target.descriptor.name, &target.test).map_err(runtime)?;
    if !report.untouched() {
        return Err(runtime("parameters changed during zero-shot evaluation"));
    }
    let baseline = evaluate(&MeanPredictor { horizon: cfg.model.horizon }, &target.test, &target.descriptor.name)
        .map_err(runtime)?;
    let stem = format!("zeroshot-{}", target.descriptor.name);
    MetricsReport::write_csv(std::slice::from_ref(&report.metrics), &a.run.join(format!("{stem}.csv"))).map_err(runtime)?;
    write_json(&a.run.join(format!("{stem}.json")), &report)?;
    println!(
        "{} -> {}  mse {:.6}  mae {:.6}  (history mean: mse {:.6})",
        source.name,
        target.descriptor.name,
        report.metrics.mse(),
        report.metrics.mae(),
        baseline.mse()
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Outcome {
    let variants = AblationVariant::parse_list(&a.variants).map_err(invalid)?;
    let cfg = load_config(&a.config, Some(a.seed), Some(&a.overrides))?;
    for v in &variants {
        let mut probe = cfg.clone();
        probe.variant = *v;
        probe.validate().map_err(|e| invalid(format!("variant {v}: {e}")))?;
    }
    let seeds = if a.seeds.is_empty() {
        vec![a.seed, a.seed + 1, a.seed + 2]
    } else {
        a.seeds.clone()
    };
    let data = load_data(&cfg)?;
    let mut base = cfg.clone();
    base.variant = AblationVariant::Default;
    let setup = AblationSetup {
        dataset: data.descriptor.name.clone(),
        model: base.effective_model(data.dataset.channels()),
        backbone: cfg.build_backbone().map_err(runtime)?,
        train: cfg.train.clone(),
        train_windows: data.train,
        val_windows: data.val,
        test_windows: data.test,
    };
    let dir = cfg
        .output_root(None)
        .join(format!("ablation-{}-h{}-seed{}", setup.dataset, cfg.model.horizon, a.seed));
    create_dir(&dir)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml().map_err(runtime)?)?;
    println!("{} variants × {} seeds", variants.len(), seeds.len());
    let table = run_ablation(&setup, &variants, &seeds);
    for cell in &table.cells {
        let cell_dir = dir.join("cells").join(format!("{}-seed{}", cell.variant, cell.seed));
        create_dir(&cell_dir)?;
        write_json(&cell_dir.join("cell.json"), cell)?;
    }
    let metrics: Vec<MetricsReport> = table.cells.iter().filter_map(|c| c.metrics.clone()).collect();
    MetricsReport::write_csv(&metrics, &dir.join("metrics.csv")).map_err(runtime)?;
    table.write_summary_csv(&dir.join("summary.csv")).map_err(runtime)?;
    write_json(&dir.join("summary.json"), &table.summary)?;
    for s in &table.summary {
        println!(
            "{:<24} mse {:.6} ± {:.6}  mae {:.6} ± {:.6}  ({} ok, {} failed)",
            s.variant.id(),
            s.mse_mean,
            s.mse_std,
            s.mae_mean,
            s.mae_std,
            s.runs,
            s.failures
        );
    }
    for c in table.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("cell {} seed {} failed: {}", c.variant, c.seed, c.error.as_deref().unwrap_or(""));
    }
    println!("ablation directory: {}", dir.display());
    Ok(())
}

fn cmd_decompose(a: DecomposeArgs) -> Outcome {
    let (ds, mut dcfg, default_len) = match (&a.csv, &a.config) {
        (Some(csv), _) => {
            let name = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (load_csv(csv, &name).map_err(invalid)?, DecompConfig::default(), None)
        }
        (None, Some(path)) => {
            let cfg = RunConfig::load(path).map_err(invalid)?;
            let desc = crate::data::DatasetDescriptor::from_file(&cfg.dataset).map_err(invalid)?;
            (
                load_csv(&desc.path, &desc.name).map_err(invalid)?,
                cfg.model.decomposition,
                Some(cfg.model.seq_len),
            )
        }
        (None, None) => return Err(invalid("either --csv or --config is required")),
    };
    if let Some(m) = a.method {
        dcfg.method = m;
    }
    if let Some(p) = a.period {
        dcfg.period = p;
    }
    if let Some(k) = a.k {
        dcfg.k = k;
    }
    if let Some(b) = a.bandwidth {
        dcfg.loess_bandwidth = b;
    }
    dcfg.validate().map_err(invalid)?;
    if a.channel >= ds.channels() {
        return Err(invalid(format!("channel {} out of range (dataset has {})", a.channel, ds.channels())));
    }
    let len = a.len.or(default_len).unwrap_or(ds.len().saturating_sub(a.start));
    if a.start + len > ds.len() || len == 0 {
        return Err(invalid(format!(
            "range {}..{} outside the series of {} steps",
            a.start,
            a.start + len,
            ds.len()
        )));
    }
    let series: Vec<f64> = ds.values.column(a.channel).slice(ndarray::s![a.start..a.start + len]).to_vec();
    let parts = additive_decompose(&series, &dcfg).map_err(runtime)?;
    let mut out = String::from("timestamp,input,trend,seasonal,residual\n");
    for i in 0..len {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            ds.timestamps[a.start + i],
            series[i],
            parts.trend[i],
            parts.seasonal[i],
            parts.residual[i]
        ));
    }
    match &a.output {
        Some(p) => write_text(p, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn cmd_explain(a: ExplainArgs) -> Outcome {
    let (cfg, model) = load_run(&a.run).map_err(invalid)?;
    let data = load_windows(&cfg.dataset, cfg.model.seq_len, cfg.model.horizon).map_err(runtime)?;
    let windows: &[WindowPair] = if data.test.is_empty() { &data.train } else { &data.test };
    let w = windows
        .get(a.window)
        .ok_or_else(|| invalid(format!("window {} out of range ({} available)", a.window, windows.len())))?;
    let path = a
        .output
        .clone()
        .unwrap_or_else(|| a.run.join(format!("attention-w{}-c{}.csv", a.window, a.channel)));
    let map = export_attention_map(&model, &w.history, a.channel, Some(&path), a.per_head).map_err(runtime)?;
    for (k, row) in map.weights.rows().into_iter().enumerate() {
        let (best, weight) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        println!("patch {k:>3}  {:<12} {weight:.4}", map.labels[best]);
    }
    println!("attention map: {}", path.display());
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Outcome {
    let cfg = load_config(&a.config, Some(a.seed), None)?;
    let data = load_data(&cfg)?;
    let model = build_model(&cfg, data.dataset.channels(), a.seed)?;
    let report = finite_difference_check(&model, &data.train[0], a.epsilon, a.sample, a.seed).map_err(invalid)?;
    for e in &report.entries {
        println!(
            "{:<28} [{:>4},{:>4}]  analytic {:>13.6e}  numeric {:>13.6e}  deviation {:.2e}",
            e.param, e.row, e.col, e.analytic, e.numeric, e.deviation
        );
    }
    println!("max relative deviation {:.3e} (tolerance {:.1e})", report.max_deviation, a.tolerance);
    if report.max_deviation < a.tolerance {
        Ok(())
    } else {
        Err(runtime(format!("gradient check failed: {:.3e} ≥ {:.1e}", report.max_deviation, a.tolerance)))
    }
}
