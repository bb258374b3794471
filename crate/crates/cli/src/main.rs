//! `qshield`: train, attack, purify and evaluate quantum variational
//! classifiers from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qshield::attacks::{attack_batch, AdversarialBatch, AttackConfig, AttackKind};
use qshield::cednet::{reconstruct_batch, train_autoencoder, AeArch, AeParams, AeTrainConfig};
use qshield::checkpoint::{self, load_checkpoint, save_checkpoint};
use qshield::dataio::{self, DatasetName, DatasetSplit, Labeled};
use qshield::pipeline::{self, AeMode, BoxMode, ExperimentConfig};
use qshield::qvc::{evaluate_accuracy, init_params, train_qvc, CircuitLayout, GradMode, TrainConfig};
use qshield::report::{self, ReportFormat};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "qshield", version, about = "Adversarial attacks on simulated quantum classifiers, and their purification")]
struct Cli {
    /// Directory holding the IDX files (or mnist/ and fmnist/ subdirectories).
    #[arg(long, global = true, env = "QSHIELD_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// Cap on worker threads for per-sample parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a classifier and write its checkpoint plus per-epoch metrics.
    TrainQvc(TrainQvcArgs),
    /// Attack a data subset with a trained classifier.
    Attack(AttackArgs),
    /// Train an encoder-decoder on adversarial/clean pairs.
    TrainAe(TrainAeArgs),
    /// Score a classifier on clean, adversarial and reconstructed images.
    Eval(EvalArgs),
    /// Run a full white-box or black-box experiment over an ε grid.
    Run(RunArgs),
    /// Render a JSON report as an SVG chart.
    Plot(PlotArgs),
    /// Print a checkpoint's kind, metadata and tensor shapes.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Dataset {
    Mnist,
    Fmnist,
}

impl From<Dataset> for DatasetName {
    fn from(d: Dataset) -> Self {
        match d {
            Dataset::Mnist => DatasetName::Mnist,
            Dataset::Fmnist => DatasetName::Fmnist,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Fgsm,
    Pgd,
}

impl From<Kind> for AttackKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Fgsm => AttackKind::Fgsm,
            Kind::Pgd => AttackKind::Pgd,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Grad {
    Adjoint,
    ParameterShift,
}

impl From<Grad> for GradMode {
    fn from(g: Grad) -> Self {
        match g {
            Grad::Adjoint => GradMode::Adjoint,
            Grad::ParameterShift => GradMode::ParameterShift,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Box_ {
    White,
    Black,
}

/// Which data a stage command reads.
#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset to read.
    #[arg(long, value_enum, default_value = "mnist")]
    dataset: Dataset,
    /// Training images per class (default: the whole split).
    #[arg(long)]
    subset_per_class: Option<usize>,
    /// Test images per class (default: the whole split).
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Seed for subset draws (and the stage's own randomness).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DataArgs {
    fn load(&self, data_dir: &Path) -> Result<DatasetSplit> {
        if !data_dir.is_dir() {
            bail!("data directory {} does not exist", data_dir.display());
        }
        let full = dataio::load_split(data_dir, self.dataset.into())?;
        Ok(pipeline::draw_subsets(full, self.subset_per_class, self.test_per_class, self.seed)?)
    }
}

#[derive(Args, Debug)]
struct TrainQvcArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of (rotation, entangler) layers.
    #[arg(long, default_value_t = 20)]
    layers: usize,
    /// Training epochs.
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    /// How parameter gradients are computed.
    #[arg(long, value_enum, default_value = "adjoint")]
    grad_mode: Grad,
    /// Checkpoint to write.
    #[arg(long, default_value = "runs/qvc.qshd")]
    out: PathBuf,
    /// Per-epoch metrics CSV (default: next to the checkpoint).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Classifier checkpoint that crafts the perturbations.
    #[arg(long)]
    model: PathBuf,
    /// Reject the checkpoint unless it has exactly this many layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Attack method.
    #[arg(long, value_enum, default_value = "pgd")]
    kind: Kind,
    /// L∞ budget ε.
    #[arg(long)]
    epsilon: f64,
    /// PGD iterations.
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// PGD step size (default ε/4).
    #[arg(long)]
    alpha: Option<f64>,
    /// Start PGD from a uniform point in the ε-ball.
    #[arg(long)]
    random_start: bool,
    /// Do not clip adversarial pixels to [0, 1].
    #[arg(long)]
    no_clip: bool,
    /// Which split to attack.
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Adversarial-batch checkpoint to write.
    #[arg(long, default_value = "runs/adv.qshd")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainAeArgs {
    /// Adversarial-batch checkpoints; pairs from all of them are pooled.
    #[arg(long = "batch", required = true)]
    batches: Vec<PathBuf>,
    /// Training epochs.
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Seed for initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint to write.
    #[arg(long, default_value = "runs/ae.qshd")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Classifier checkpoint to score.
    #[arg(long)]
    model: PathBuf,
    /// Adversarial batch; its originals give the clean accuracy.
    #[arg(long)]
    batch: PathBuf,
    /// Encoder-decoder for the reconstructed accuracy.
    #[arg(long)]
    ae: Option<PathBuf>,
    /// Reject the classifier unless it has exactly this many layers.
    #[arg(long)]
    layers: Option<usize>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// white: attack and evaluate one model; black: attack with one, evaluate on another.
    #[arg(long = "box", value_enum, default_value = "white")]
    box_mode: Box_,
    /// Attack method (default pgd).
    #[arg(long, value_enum)]
    attack: Option<Kind>,
    /// Dataset (default mnist).
    #[arg(long, value_enum)]
    dataset: Option<Dataset>,
    /// 200/class train, 50/class test, 20-layer classifiers (40-layer
    /// black-box evaluator), 10 classifier and 10 autoencoder epochs.
    #[arg(long)]
    desk_scale: bool,
    /// Comma-separated ε grid.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    /// Attacker depth.
    #[arg(long)]
    layers: Option<usize>,
    /// Evaluator depth (black-box).
    #[arg(long)]
    eval_layers: Option<usize>,
    /// Attacker initialization seed.
    #[arg(long)]
    attacker_seed: Option<u64>,
    /// Evaluator initialization seed (black-box).
    #[arg(long)]
    evaluator_seed: Option<u64>,
    /// Run seed: subsets, attacks and autoencoders.
    #[arg(long)]
    seed: Option<u64>,
    /// Training images per class.
    #[arg(long)]
    train_per_class: Option<usize>,
    /// Test images per class.
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Classifier epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Autoencoder epochs.
    #[arg(long)]
    ae_epochs: Option<usize>,
    /// PGD iterations.
    #[arg(long)]
    steps: Option<usize>,
    /// How classifier parameter gradients are computed.
    #[arg(long, value_enum)]
    grad_mode: Option<Grad>,
    /// Train one autoencoder on pairs pooled over the whole grid.
    #[arg(long, conflicts_with = "no_ae")]
    shared_ae: bool,
    /// Skip the reconstruction stage.
    #[arg(long)]
    no_ae: bool,
    /// Also write report.svg.
    #[arg(long)]
    plot: bool,
    /// Output directory for reports and the stage cache.
    #[arg(long, default_value = "runs/experiment")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// JSON report written by `run`.
    #[arg(long)]
    report: PathBuf,
    /// SVG file to write.
    #[arg(long, default_value = "report.svg")]
    out: PathBuf,
    /// Chart title (default: dataset, box mode and attack).
    #[arg(long)]
    title: Option<String>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Checkpoint file.
    path: PathBuf,
}

/// Bad flag combinations detected after parsing; exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::TrainQvc(a) => cmd_train_qvc(a, &cli.data_dir),
        Command::Attack(a) => cmd_attack(a, &cli.data_dir),
        Command::TrainAe(a) => cmd_train_ae(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Run(a) => cmd_run(a, &cli.data_dir),
        Command::Plot(a) => cmd_plot(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train_qvc(a: &TrainQvcArgs, data_dir: &Path) -> Result<()> {
    let data = a.data.load(data_dir)?;
    let config = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.data.seed,
        grad_mode: a.grad_mode.into(),
    };
    let initial = init_params(CircuitLayout::new(a.layers), a.data.seed)?;
    let (params, history) = train_qvc(initial, &config, &data.train, &data.test)?;
    save_checkpoint(&checkpoint::qvc_to_checkpoint(&params)?, &a.out)?;
    let metrics = a.metrics.clone().unwrap_or_else(|| a.out.with_extension("metrics.csv"));
    let mut csv = String::from("epoch,train_loss,eval_accuracy,steps\n");
    for m in &history {
        csv.push_str(&format!("{},{},{},{}\n", m.epoch, m.train_loss, m.eval_accuracy, m.steps));
    }
    write_file(&metrics, &csv)?;
    let last = history.last().map(|m| m.eval_accuracy).unwrap_or(0.0);
    println!("{}", json!({ "checkpoint": a.out, "metrics": metrics, "tag": params.tag(), "eval_accuracy": last }));
    Ok(())
}

fn cmd_attack(a: &AttackArgs, data_dir: &Path) -> Result<()> {
    let model = checkpoint::qvc_from_checkpoint(&load_checkpoint(&a.model)?, a.layers)?;
    let data = a.data.load(data_dir)?;
    let set: &Labeled = if a.split == Split::Train { &data.train } else { &data.test };
    let base = match a.kind {
        Kind::Fgsm => AttackConfig::fgsm(a.epsilon),
        Kind::Pgd => AttackConfig { steps: a.steps, ..AttackConfig::pgd(a.epsilon) },
    };
    let config = AttackConfig {
        alpha: a.alpha,
        clip_pixels: !a.no_clip,
        random_start: a.random_start,
        seed: a.data.seed,
        ..base
    };
    config.validate().map_err(|e| Usage(e.to_string()))?;
    let batch = attack_batch(&model, &set.images, &set.labels, &config)?;
    batch.verify().context("adversarial batch failed its L∞ post-check")?;
    save_checkpoint(&checkpoint::adversarial_to_checkpoint(&batch)?, &a.out)?;
    let adv_acc = evaluate_accuracy(&model, &batch.adversarials, &batch.labels)?;
    println!(
        "{}",
        json!({ "batch": a.out, "images": batch.len(), "linf": batch.linf(), "adv_acc": adv_acc, "model_tag": batch.model_tag })
    );
    Ok(())
}

fn load_batch(path: &Path) -> Result<AdversarialBatch> {
    Ok(checkpoint::adversarial_from_checkpoint(&load_checkpoint(path)?)?)
}

fn cmd_train_ae(a: &TrainAeArgs) -> Result<()> {
    let batches = a.batches.iter().map(|p| load_batch(p)).collect::<Result<Vec<_>>>()?;
    let inputs = dataio::ImageSet::concat(&batches.iter().map(|b| &b.adversarials).collect::<Vec<_>>())?;
    let targets = dataio::ImageSet::concat(&batches.iter().map(|b| &b.originals).collect::<Vec<_>>())?;
    let config = AeTrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let initial = AeParams::init_he(AeArch::standard(), a.seed)?;
    let (params, history) = train_autoencoder(initial, &inputs, &targets, &config)?;
    let tag = format!("ae-s{}-e{}", a.seed, a.epochs);
    save_checkpoint(&checkpoint::ae_to_checkpoint(&params, &tag)?, &a.out)?;
    println!("{}", json!({ "checkpoint": a.out, "pairs": inputs.len(), "epoch_mse": history }));
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = checkpoint::qvc_from_checkpoint(&load_checkpoint(&a.model)?, a.layers)?;
    let batch = load_batch(&a.batch)?;
    let clean = evaluate_accuracy(&model, &batch.originals, &batch.labels)?;
    let adv = evaluate_accuracy(&model, &batch.adversarials, &batch.labels)?;
    let recon = match &a.ae {
        Some(p) => {
            let ae = checkpoint::ae_from_checkpoint(&load_checkpoint(p)?)?;
            Some(evaluate_accuracy(&model, &reconstruct_batch(&ae, &batch.adversarials)?, &batch.labels)?)
        }
        None => None,
    };
    println!(
        "{}",
        json!({
            "epsilon": batch.config.epsilon,
            "clean_acc": clean,
            "adv_acc": adv,
            "recon_acc": recon,
            "attacker_tag": batch.model_tag,
            "evaluator_tag": model.tag(),
        })
    );
    Ok(())
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn build_config(a: &RunArgs) -> Result<ExperimentConfig> {
    let mode = match a.box_mode {
        Box_::White => BoxMode::White,
        Box_::Black => BoxMode::Black,
    };
    let kind: AttackKind = a.attack.map(Into::into).unwrap_or(AttackKind::Pgd);
    let seed = a.seed.unwrap_or(0);
    let preset = if a.desk_scale {
        ExperimentConfig::desk_scale(mode, kind, seed)
    } else {
        ExperimentConfig::full_scale(mode, kind, seed)
    };
    let mut value = serde_json::to_value(&preset)?;
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut value, file);
    }
    let mut c: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Usage(format!("invalid experiment config: {e}")))?;
    if let Some(k) = a.attack {
        let template = match k {
            Kind::Fgsm => AttackConfig::fgsm(0.0),
            Kind::Pgd => AttackConfig::pgd(0.0),
        };
        if c.attack.kind != template.kind {
            c.attack = template;
        }
    }
    if let Some(d) = a.dataset {
        c.dataset = d.into();
    }
    if let Some(e) = &a.epsilons {
        c.epsilons = e.clone();
    }
    if let Some(l) = a.layers {
        c.attacker.n_layers = l;
    }
    if let Some(s) = a.attacker_seed {
        c.attacker.seed = s;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    match mode {
        BoxMode::White => {
            if a.eval_layers.is_some_and(|l| l != c.attacker.n_layers)
                || a.evaluator_seed.is_some_and(|s| s != c.attacker.seed)
            {
                return Err(Usage("--box white evaluates on the attacking model; drop the evaluator flags".into()).into());
            }
            c.evaluator = c.attacker;
        }
        BoxMode::Black => {
            if let Some(l) = a.eval_layers {
                c.evaluator.n_layers = l;
            }
            if let Some(s) = a.evaluator_seed {
                c.evaluator.seed = s;
            }
            if c.attacker == c.evaluator {
                return Err(Usage("--box black needs attacker and evaluator specs that differ".into()).into());
            }
        }
    }
    if let Some(n) = a.train_per_class {
        c.train_per_class = Some(n);
    }
    if let Some(n) = a.test_per_class {
        c.test_per_class = Some(n);
    }
    if let Some(n) = a.epochs {
        c.qvc_training.epochs = n;
    }
    if let Some(n) = a.ae_epochs {
        c.ae_training.epochs = n;
    }
    if let Some(n) = a.steps {
        c.attack.steps = n;
    }
    if let Some(g) = a.grad_mode {
        c.qvc_training.grad_mode = g.into();
    }
    if a.shared_ae {
        c.ae_mode = AeMode::Shared;
    }
    if a.no_ae {
        c.ae_mode = AeMode::Off;
    }
    c.output_dir = Some(a.out_dir.clone());
    c.validate().map_err(|e| Usage(e.to_string()))?;
    Ok(c)
}

fn cmd_run(a: &RunArgs, data_dir: &Path) -> Result<()> {
    let config = build_config(a)?;
    if !data_dir.is_dir() {
        bail!("data directory {} does not exist", data_dir.display());
    }
    let data = pipeline::load_data(&config, data_dir)?;
    write_file(&a.out_dir.join("config.json"), &serde_json::to_string_pretty(&config)?)?;
    let report = match config.box_mode() {
        BoxMode::White => pipeline::run_whitebox(&config, &data)?,
        BoxMode::Black => pipeline::run_blackbox(&config, &data)?,
    };
    report::emit_report(&report, ReportFormat::Csv, &a.out_dir.join("report.csv"))?;
    report::emit_report(&report, ReportFormat::Json, &a.out_dir.join("report.json"))?;
    if a.plot {
        let title = format!("{} {}-box {}", config.dataset, config.box_mode().name(), config.attack.kind);
        write_file(&a.out_dir.join("report.svg"), &report::render_svg(&report, &title))?;
    }
    print!("{}", report.to_csv());
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let report = report::load_report(&a.report)?;
    let title = a.title.clone().unwrap_or_else(|| {
        let m = &report.metadata;
        format!("{} {}-box {}", m.dataset, m.box_mode, m.attack_kind)
    });
    write_file(&a.out, &report::render_svg(&report, &title))
}

fn cmd_inspect(a: &InspectArgs) -> Result<()> {
    let ck = load_checkpoint(&a.path)?;
    let kind = ck.kind.name();
    let tensors: Vec<Value> = ck.tensors.iter().map(|(n, t)| json!({ "name": n, "shape": t.shape() })).collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "kind": kind,
            "version": checkpoint::VERSION,
            "metadata": ck.metadata,
            "tensors": tensors,
        }))?
    );
    Ok(())
}
