//! `liarwalk`: command-line driver for the gait/gesture classification
//! pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 runtime or numeric failure.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use config::{load, write_sidecar, RunConfig};
use liarwalk::analysis::{export_scatter, ScatterFeatures};
use liarwalk::augment::{augment_dataset, AugmentConfig, Shifts};
use liarwalk::gait::GAIT_FEATURE_NAMES;
use liarwalk::gesture::{gesture_class_stats, GESTURE_NAMES};
use liarwalk::network::{reduced_model_check, FeatureMode, Model};
use liarwalk::pipeline::prepare_dataset;
use liarwalk::pose::{parse_dataset, write_dataset};
use liarwalk::synthetic::{generate_dataset, SynthConfig};
use liarwalk::tensor::primitive_checks;
use liarwalk::training::{
    ablation_csv, ablation_run, evaluate, history_csv, kfold_splits, select, split_dataset, train, Metrics, Split,
    SplitFile, SplitMode,
};
use liarwalk::{Dataset, Error, ErrorKind};

/// Error carrying the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Runtime => 3,
        };
        CliError { code, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "liarwalk", version, about = "Classify natural and deceptive walks from 3D pose sequences")]
struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class walking dataset.
    Synth(SynthArgs),
    /// Parse and check a dataset, printing a summary.
    Validate(DataArgs),
    /// Add reflected and phase-shifted variants of every walk.
    Augment(AugmentArgs),
    /// Write gait and gesture features as CSV.
    ExtractFeatures(OutArgs),
    /// Write per-class gesture presence percentages as CSV.
    GestureStats(OutArgs),
    /// Train a classifier and save the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset or one partition of a split.
    Eval(EvalArgs),
    /// Train one model per feature mode on a shared split.
    Ablate(AblateArgs),
    /// Project a feature set to 3 principal components.
    PcaScatter(PcaArgs),
    /// Check analytic gradients against central differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Input dataset (JSONL).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct OutArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML generator config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Master seed; required unless the config file sets one.
    #[arg(long)]
    seed: Option<u64>,
    /// Points per class, overriding the config.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Add the left/right reflection of every walk.
    #[arg(long)]
    reflect: bool,
    /// Comma-separated frame offsets; default is a quarter, half and three
    /// quarters of each walk's length.
    #[arg(long, value_delimiter = ',')]
    shifts: Option<Vec<usize>>,
}

#[derive(Args)]
struct TrainFlags {
    /// TOML file with `[split]` and `[train]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the split, batch order and weight init; required unless the
    /// config file sets `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split: Option<SplitMode>,
    /// Number of folds for `--split kfold`.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    t_frames: Option<usize>,
    #[arg(long)]
    feature_mode: Option<FeatureMode>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss, learning rate and validation accuracy as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Where to write the split (default `<out>.split.json`).
    #[arg(long)]
    split_out: Option<PathBuf>,
    /// Fold to train for `--split kfold` (0-based).
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Train every fold; checkpoints go to `<out>.fold<i>`.
    #[arg(long)]
    all_folds: bool,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Split file written by `train`; without it every point is evaluated.
    #[arg(long)]
    split_file: Option<PathBuf>,
    /// Partition of the split file to evaluate.
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    partition: String,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output CSV.
    #[arg(long, default_value = "ablation.csv")]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct PcaArgs {
    #[arg(long)]
    data: PathBuf,
    /// gait, gesture, gait+gesture or deep.
    #[arg(long)]
    features: ScatterFeatures,
    /// Checkpoint; required for deep features.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tolerance for the whole reduced model.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Validate(a) => validate(a),
        Command::Augment(a) => augment(a),
        Command::ExtractFeatures(a) => extract_features(a),
        Command::GestureStats(a) => gesture_stats(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::PcaScatter(a) => pca_scatter(a),
        Command::GradCheck(a) => grad_check(a),
    }
}

fn read_data(path: &Path) -> CliResult<Dataset> {
    parse_dataset(path).map_err(|e| {
        let mut err = CliError::from(e);
        if !err.message.starts_with(&*path.to_string_lossy()) {
            err.message = format!("{}: {}", path.display(), err.message);
        }
        err
    })
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => write_text(p, text),
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::runtime(e.to_string()))?;
            Ok(())
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn synth(a: SynthArgs) -> CliResult {
    let (mut cfg, seeded): (SynthConfig, bool) = load(a.config.as_deref(), &["seed"])?;
    match a.seed {
        Some(s) => cfg.seed = s,
        None if seeded => {}
        None => return Err(CliError::usage("synth needs --seed (or a config file that sets seed)")),
    }
    if let Some(n) = a.count {
        cfg.count_per_class = [n, n];
    }
    let ds = generate_dataset(&cfg)?;
    write_dataset(&ds, &a.out)?;
    write_sidecar(&a.out, "synth", &[], &cfg)?;
    info!("wrote {} points to {}", ds.len(), a.out.display());
    Ok(())
}

fn validate(a: DataArgs) -> CliResult {
    let ds = read_data(&a.data)?;
    let per_label = [0u8, 1].map(|l| ds.points.iter().filter(|p| p.label == l).count());
    let lens = ds.points.iter().map(|p| p.sequence.tau());
    let (lo, hi) = (lens.clone().min().unwrap_or(0), lens.max().unwrap_or(0));
    let mut subjects: Vec<&str> = ds.points.iter().map(|p| p.sequence.subject_id.as_str()).collect();
    subjects.sort_unstable();
    subjects.dedup();
    println!("{}: {} points ({} natural, {} deceptive)", a.data.display(), ds.len(), per_label[0], per_label[1]);
    println!("subjects: {}", subjects.len());
    println!("frames per walk: {lo}..{hi}");
    Ok(())
}

#[derive(serde::Serialize)]
struct AugmentSidecar {
    reflect: bool,
    shifts: Option<Vec<usize>>,
}

fn augment(a: AugmentArgs) -> CliResult {
    let ds = read_data(&a.data)?;
    let cfg = AugmentConfig {
        reflect: a.reflect,
        shifts: a.shifts.clone().map_or(Shifts::Quarters, Shifts::Fixed),
    };
    let (out, skipped) = augment_dataset(&ds, &cfg)?;
    for s in &skipped {
        eprintln!("skipped {} shift {}: {}", s.source_id, s.shift, s.reason);
    }
    write_dataset(&out, &a.out)?;
    write_sidecar(
        &a.out,
        "augment",
        &[("data", a.data.display().to_string())],
        &AugmentSidecar { reflect: a.reflect, shifts: a.shifts },
    )?;
    println!("{} -> {} points ({} variants skipped)", ds.len(), out.len(), skipped.len());
    Ok(())
}

fn extract_features(a: OutArgs) -> CliResult {
    let ds = read_data(&a.data)?;
    let points = prepare_dataset(&ds)?;
    let mut csv = String::from("id,label");
    for name in GAIT_FEATURE_NAMES.iter().chain(&GESTURE_NAMES) {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for p in &points {
        csv.push_str(&format!("{},{}", p.id(), p.label));
        for v in p.gait.0.iter().chain(&p.gesture.0) {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    emit(a.out.as_deref(), &csv)?;
    if let Some(out) = &a.out {
        write_sidecar(out, "extract-features", &[("data", a.data.display().to_string())], &toml::Table::new())?;
    }
    Ok(())
}

fn gesture_stats(a: OutArgs) -> CliResult {
    let ds = read_data(&a.data)?;
    let mut csv = String::from("label,gesture,percentage\n");
    for s in gesture_class_stats(&ds) {
        for (name, pct) in GESTURE_NAMES.iter().zip(s.percentages) {
            csv.push_str(&format!("{},{name},{pct}\n", s.label));
        }
    }
    emit(a.out.as_deref(), &csv)?;
    if let Some(out) = &a.out {
        write_sidecar(out, "gesture-stats", &[("data", a.data.display().to_string())], &toml::Table::new())?;
    }
    Ok(())
}

fn resolve_run_config(f: &TrainFlags) -> CliResult<RunConfig> {
    let (mut cfg, seeded): (RunConfig, bool) = load(f.config.as_deref(), &["train", "seed"])?;
    match f.seed {
        Some(s) => cfg.set_seed(s),
        None if seeded => {}
        None => return Err(CliError::usage("training needs --seed (or a config file that sets train.seed)")),
    }
    if let Some(m) = f.split {
        cfg.split.mode = m;
    }
    if let Some(k) = f.k {
        cfg.split.k = k;
    }
    if let Some(e) = f.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = f.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = f.lr {
        cfg.train.lr = lr;
    }
    if let Some(wd) = f.weight_decay {
        cfg.train.weight_decay = wd;
    }
    if let Some(t) = f.t_frames {
        cfg.train.model.t_frames = t;
    }
    if let Some(m) = f.feature_mode {
        cfg.train.model.feature_mode = m;
    }
    cfg.split.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

/// Every split the config asks for, with its fold number for k-fold.
fn make_splits(ds: &Dataset, cfg: &RunConfig) -> CliResult<Vec<(Option<usize>, Split)>> {
    Ok(match cfg.split.mode {
        SplitMode::Kfold => kfold_splits(ds, cfg.split.k, cfg.split.seed)?
            .into_iter()
            .enumerate()
            .map(|(f, s)| (Some(f), s))
            .collect(),
        _ => vec![(None, split_dataset(ds, &cfg.split)?)],
    })
}

fn print_metrics(m: &Metrics) {
    let correct = m.confusion[0][0] + m.confusion[1][1];
    println!("accuracy {:.4} ({correct}/{})", m.accuracy, m.n);
    println!("precision natural {:.4} deceptive {:.4}", m.precision[0], m.precision[1]);
    println!("recall natural {:.4} deceptive {:.4}", m.recall[0], m.recall[1]);
    println!("confusion (rows truth, columns predicted)");
    println!("            natural deceptive");
    println!("natural   {:>9} {:>9}", m.confusion[0][0], m.confusion[0][1]);
    println!("deceptive {:>9} {:>9}", m.confusion[1][0], m.confusion[1][1]);
}

fn train_cmd(a: TrainArgs) -> CliResult {
    let cfg = resolve_run_config(&a.flags)?;
    let ds = read_data(&a.data)?;
    let points = prepare_dataset(&ds)?;
    let mut splits = make_splits(&ds, &cfg)?;
    if a.all_folds && cfg.split.mode != SplitMode::Kfold {
        return Err(CliError::usage("--all-folds needs --split kfold"));
    }
    if !a.all_folds && cfg.split.mode == SplitMode::Kfold {
        if a.fold >= splits.len() {
            return Err(CliError::usage(format!("--fold {} out of range for k = {}", a.fold, splits.len())));
        }
        splits = vec![splits.swap_remove(a.fold)];
    }
    let mut accuracies = Vec::new();
    for (fold, split) in &splits {
        let out = match (a.all_folds, fold) {
            (true, Some(f)) => with_suffix(&a.out, &format!(".fold{f}")),
            _ => a.out.clone(),
        };
        let outcome = train(&select(&points, &split.train), &select(&points, &split.val), &cfg.train)?;
        outcome.model.save(&out)?;
        let split_path = match &a.split_out {
            Some(p) if !a.all_folds => p.clone(),
            _ => with_suffix(&out, ".split.json"),
        };
        let file = split.to_file(&ds, &cfg.split, *fold);
        let json = serde_json::to_string_pretty(&file).map_err(Error::from)?;
        write_text(&split_path, &json)?;
        if let Some(h) = &a.history {
            let h = if a.all_folds { with_suffix(h, &format!(".fold{}", fold.unwrap_or(0))) } else { h.clone() };
            write_text(&h, &history_csv(&outcome.history))?;
        }
        write_sidecar(
            &out,
            "train",
            &[
                ("data", a.data.display().to_string()),
                ("fold", fold.map_or("none".into(), |f| f.to_string())),
            ],
            &cfg,
        )?;
        let m = evaluate(&outcome.model, &select(&points, &split.test))?;
        if let Some(f) = fold {
            println!("fold {f}");
        }
        println!(
            "train {} / val {} / test {} points; best epoch {}",
            split.train.len(),
            split.val.len(),
            split.test.len(),
            outcome.best_epoch
        );
        print_metrics(&m);
        accuracies.push(m.accuracy);
    }
    if accuracies.len() > 1 {
        println!("mean test accuracy over {} folds {:.4}", accuracies.len(), accuracies.iter().sum::<f64>() / accuracies.len() as f64);
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let model = Model::load(&a.model)?;
    let ds = read_data(&a.data)?;
    let subset = match &a.split_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: SplitFile = serde_json::from_str(&text).map_err(|e| {
                CliError::from(Error::Parse { line: e.line(), message: format!("{}: {e}", path.display()) })
            })?;
            let split = Split::from_file(&ds, &file)?;
            let idx = match a.partition.as_str() {
                "train" => split.train,
                "val" => split.val,
                _ => split.test,
            };
            ds.select(&idx)
        }
        None => ds,
    };
    let points = prepare_dataset(&subset)?;
    let m = evaluate(&model, &points)?;
    print_metrics(&m);
    Ok(())
}

fn ablate(a: AblateArgs) -> CliResult {
    let cfg = resolve_run_config(&a.flags)?;
    let ds = read_data(&a.data)?;
    let points = prepare_dataset(&ds)?;
    let (_, split) = make_splits(&ds, &cfg)?.swap_remove(0);
    let rows = ablation_run(&points, &split, &cfg.train)?;
    write_text(&a.out, &ablation_csv(&rows))?;
    write_sidecar(&a.out, "ablate", &[("data", a.data.display().to_string())], &cfg)?;
    for r in &rows {
        println!("{:<16} {:.4}", r.mode.display_name(), r.accuracy);
    }
    Ok(())
}

fn pca_scatter(a: PcaArgs) -> CliResult {
    let model = a.model.as_ref().map(Model::load).transpose()?;
    let ds = read_data(&a.data)?;
    let points = prepare_dataset(&ds)?;
    let scatter = export_scatter(&points, a.features, model.as_ref())?;
    write_text(&a.out, &scatter.to_csv())?;
    let mut inputs = vec![("data", a.data.display().to_string())];
    if let Some(m) = &a.model {
        inputs.push(("model", m.display().to_string()));
    }
    let mut side = toml::Table::new();
    side.insert("features".into(), toml::Value::String(format!("{:?}", a.features).to_lowercase()));
    write_sidecar(&a.out, "pca-scatter", &inputs, &side)?;
    let ev = &scatter.pca.explained_variance;
    println!(
        "{} points; explained variance {:.4e} {:.4e} {:.4e} ({:.1}% of total)",
        scatter.coords.len(),
        ev[0],
        ev[1],
        ev[2],
        100.0 * scatter.pca.explained_ratio()
    );
    Ok(())
}

fn grad_check(a: GradCheckArgs) -> CliResult {
    let mut ok = true;
    for (name, r) in primitive_checks(a.seed)? {
        println!("{name:<20} max rel error {:.3e} {}", r.max_rel_error, if r.passed { "ok" } else { "FAIL" });
        ok &= r.passed;
    }
    let r = reduced_model_check(a.seed, a.tolerance)?;
    println!(
        "{:<20} max rel error {:.3e} over {} parameters {}",
        "reduced model",
        r.max_rel_error,
        r.checked,
        if r.passed { "ok" } else { "FAIL" }
    );
    ok &= r.passed;
    if ok {
        Ok(())
    } else {
        Err(CliError::runtime("gradient check failed"))
    }
}
