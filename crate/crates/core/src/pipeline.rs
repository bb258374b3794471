//! White-box and black-box experiments over an ε grid.
//!
//! A run trains (or loads from the stage cache) the attacker and evaluator
//! classifiers, attacks the test subset at every ε with the attacker,
//! trains encoder-decoders on attacked/clean training pairs, and scores
//! clean, adversarial and reconstructed images on the evaluator.
//!
//! Every stage result is cached under `output_dir/cache`, named by a
//! SHA-256 of everything that determines it, so re-runs skip finished
//! stages.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::attacks::{attack_batch, AdversarialBatch, AttackConfig, AttackKind};
use crate::cednet::{reconstruct_batch, train_autoencoder, AeArch, AeParams, AeTrainConfig};
use crate::checkpoint::{self, load_checkpoint, save_checkpoint, write_atomic};
use crate::dataio::{self, DatasetName, DatasetSplit, ImageSet, LabelSet, Labeled};
use crate::error::{Error, Result};
use crate::qvc::{evaluate_accuracy, init_params, train_qvc, CircuitLayout, EpochMetrics, GradMode, QvcParams, TrainConfig};
use crate::report::{ReportMeta, ReportRow, RunReport};
use crate::rng::derive_seed;

/// Depth and initialization seed of one classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub n_layers: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxMode {
    White,
    Black,
}

impl BoxMode {
    pub fn name(self) -> &'static str {
        match self {
            BoxMode::White => "white",
            BoxMode::Black => "black",
        }
    }
}

/// How encoder-decoders are trained across the ε grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AeMode {
    /// One model per ε, trained on pairs attacked at that ε.
    #[default]
    PerEpsilon,
    /// One model trained on pairs pooled over the whole grid.
    Shared,
    /// Skip reconstruction; `recon_acc` is left empty.
    Off,
}

impl AeMode {
    pub fn name(self) -> &'static str {
        match self {
            AeMode::PerEpsilon => "per-epsilon",
            AeMode::Shared => "shared",
            AeMode::Off => "off",
        }
    }
}

/// Classifier optimizer settings; shuffling is seeded by the model seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QvcTraining {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_mode: GradMode,
}

impl Default for QvcTraining {
    fn default() -> Self {
        let t = TrainConfig::default();
        QvcTraining {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            grad_mode: t.grad_mode,
        }
    }
}

impl QvcTraining {
    pub fn for_model(&self, spec: ModelSpec) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: spec.seed,
            grad_mode: self.grad_mode,
        }
    }
}

/// Encoder-decoder optimizer settings; seeds derive from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeTraining {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for AeTraining {
    fn default() -> Self {
        let t = AeTrainConfig::default();
        AeTraining {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
        }
    }
}

pub fn default_epsilons() -> Vec<f64> {
    (0..=6).map(|i| i as f64 * 0.05).collect()
}

/// Everything that determines a run. `Default` is the full-size white-box
/// PGD experiment on MNIST with 100-layer classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetName,
    pub attacker: ModelSpec,
    pub evaluator: ModelSpec,
    /// Template; its `epsilon` is replaced by each grid value and its
    /// `seed` is mixed with the run seed.
    pub attack: AttackConfig,
    pub epsilons: Vec<f64>,
    pub qvc_training: QvcTraining,
    pub ae_training: AeTraining,
    pub ae_mode: AeMode,
    /// `None` keeps the whole split.
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub seed: u64,
    /// Cache and partial results go here; `None` keeps everything in memory.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelSpec { n_layers: 100, seed: 0 };
        ExperimentConfig {
            dataset: DatasetName::Mnist,
            attacker: model,
            evaluator: model,
            attack: AttackConfig::pgd(0.0),
            epsilons: default_epsilons(),
            qvc_training: QvcTraining::default(),
            ae_training: AeTraining::default(),
            ae_mode: AeMode::PerEpsilon,
            train_per_class: None,
            test_per_class: None,
            seed: 0,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// 200/class train, 50/class test, 20-layer classifiers (40-layer
    /// evaluator for black-box), 10 classifier and 10 autoencoder epochs.
    pub fn desk_scale(mode: BoxMode, kind: AttackKind, seed: u64) -> Self {
        let attacker = ModelSpec { n_layers: 20, seed };
        let evaluator = match mode {
            BoxMode::White => attacker,
            BoxMode::Black => ModelSpec {
                n_layers: 40,
                seed: seed.wrapping_add(1),
            },
        };
        ExperimentConfig {
            attacker,
            evaluator,
            attack: match kind {
                AttackKind::Fgsm => AttackConfig::fgsm(0.0),
                AttackKind::Pgd => AttackConfig::pgd(0.0),
            },
            qvc_training: QvcTraining {
                epochs: 10,
                ..Default::default()
            },
            ae_training: AeTraining {
                epochs: 10,
                ..Default::default()
            },
            train_per_class: Some(200),
            test_per_class: Some(50),
            seed,
            ..Default::default()
        }
    }

    /// Full splits, 20 epochs each, 100-layer classifiers (200-layer
    /// evaluator for black-box).
    pub fn full_scale(mode: BoxMode, kind: AttackKind, seed: u64) -> Self {
        let attacker = ModelSpec { n_layers: 100, seed };
        let evaluator = match mode {
            BoxMode::White => attacker,
            BoxMode::Black => ModelSpec {
                n_layers: 200,
                seed: seed.wrapping_add(1),
            },
        };
        ExperimentConfig {
            attacker,
            evaluator,
            attack: match kind {
                AttackKind::Fgsm => AttackConfig::fgsm(0.0),
                AttackKind::Pgd => AttackConfig::pgd(0.0),
            },
            seed,
            ..Default::default()
        }
    }

    pub fn box_mode(&self) -> BoxMode {
        if self.attacker == self.evaluator {
            BoxMode::White
        } else {
            BoxMode::Black
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::InvalidConfig("epsilons must be finite and non-negative".into()));
        }
        if self.epsilons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("epsilons must be strictly increasing".into()));
        }
        for e in &self.epsilons {
            self.attack.with_epsilon(*e).validate()?;
        }
        for spec in [self.attacker, self.evaluator] {
            if spec.n_layers == 0 {
                return Err(Error::InvalidConfig("classifiers need at least one layer".into()));
            }
            self.qvc_training.for_model(spec).validate()?;
        }
        if self.ae_mode != AeMode::Off
            && (self.ae_training.epochs == 0 || self.ae_training.batch_size == 0 || !(self.ae_training.learning_rate > 0.0))
        {
            return Err(Error::InvalidConfig(format!("bad autoencoder training {:?}", self.ae_training)));
        }
        if self.train_per_class == Some(0) || self.test_per_class == Some(0) {
            return Err(Error::InvalidConfig("per-class subset sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Loads the configured dataset and draws the configured subsets.
pub fn load_data(config: &ExperimentConfig, data_dir: &Path) -> Result<DatasetSplit> {
    let full = dataio::load_split(data_dir, config.dataset)?;
    draw_subsets(full, config.train_per_class, config.test_per_class, config.seed)
}

/// Class-balanced subsets of both splits, drawn from streams of `seed`.
/// `None` keeps a split whole.
pub fn draw_subsets(
    full: DatasetSplit,
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
    seed: u64,
) -> Result<DatasetSplit> {
    let train = match train_per_class {
        Some(n) => full.train.subset(n, derive_seed(seed, "subset-train", 0))?,
        None => full.train,
    };
    let test = match test_per_class {
        Some(n) => full.test.subset(n, derive_seed(seed, "subset-test", 0))?,
        None => full.test,
    };
    Ok(DatasetSplit {
        name: full.name,
        train,
        test,
    })
}

/// Content-addressed store of stage checkpoints.
#[derive(Clone, Debug)]
pub struct StageCache {
    dir: Option<PathBuf>,
}

impl StageCache {
    pub fn at(dir: impl Into<PathBuf>) -> Self {
        StageCache { dir: Some(dir.into()) }
    }

    pub fn disabled() -> Self {
        StageCache { dir: None }
    }

    fn path(&self, stage: &str, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{stage}-{key}.qshd")))
    }

    fn get(&self, stage: &str, key: &str) -> Result<Option<checkpoint::Checkpoint>> {
        match self.path(stage, key) {
            Some(p) if p.exists() => {
                log::info!("cache hit {}", p.display());
                load_checkpoint(&p).map(Some)
            }
            _ => Ok(None),
        }
    }

    fn put(&self, stage: &str, key: &str, ckpt: &checkpoint::Checkpoint) -> Result<()> {
        match self.path(stage, key) {
            Some(p) => save_checkpoint(ckpt, &p),
            None => Ok(()),
        }
    }
}

fn digest(value: &serde_json::Value) -> String {
    let hash = Sha256::digest(value.to_string().as_bytes());
    dataio::hex(&hash[..12])
}

/// Fingerprint of a labelled set, so cached stages never outlive their data.
pub fn data_fingerprint(data: &Labeled) -> String {
    let mut h = Sha256::new();
    for v in data.images.pixels().data() {
        h.update(v.to_le_bytes());
    }
    h.update(&data.labels.labels);
    dataio::hex(&h.finalize()[..12])
}

/// A classifier together with the cache key that identifies it.
#[derive(Clone, Debug)]
pub struct TrainedQvc {
    pub params: QvcParams,
    pub key: String,
    /// Empty when loaded from cache.
    pub history: Vec<EpochMetrics>,
}

/// Trains a classifier on `data.train` (scoring epochs on `data.test`), or
/// loads it from the cache.
pub fn obtain_qvc(spec: ModelSpec, training: &QvcTraining, data: &DatasetSplit, cache: &StageCache) -> Result<TrainedQvc> {
    let config = training.for_model(spec);
    let key = digest(&json!({
        "stage": "qvc",
        "spec": spec,
        "train": config,
        "train_data": data_fingerprint(&data.train),
        "eval_data": data_fingerprint(&data.test),
    }));
    if let Some(ck) = cache.get("qvc", &key)? {
        return Ok(TrainedQvc {
            params: checkpoint::qvc_from_checkpoint(&ck, Some(spec.n_layers))?,
            key,
            history: Vec::new(),
        });
    }
    let initial = init_params(CircuitLayout::new(spec.n_layers), spec.seed)?;
    let (params, history) = train_qvc(initial, &config, &data.train, &data.test)?;
    cache.put("qvc", &key, &checkpoint::qvc_to_checkpoint(&params)?)?;
    Ok(TrainedQvc { params, key, history })
}

/// Attacks `data` with `model`, or loads the batch from the cache. ε = 0
/// returns the originals unchanged without touching the model.
pub fn obtain_adversarial(
    model: &TrainedQvc,
    data: &Labeled,
    config: &AttackConfig,
    cache: &StageCache,
) -> Result<(AdversarialBatch, String)> {
    let key = digest(&json!({
        "stage": "adversarial",
        "model": model.key,
        "attack": config,
        "data": data_fingerprint(data),
    }));
    if let Some(ck) = cache.get("adv", &key)? {
        return Ok((checkpoint::adversarial_from_checkpoint(&ck)?, key));
    }
    let batch = if config.epsilon == 0.0 {
        AdversarialBatch {
            originals: data.images.clone(),
            adversarials: data.images.clone(),
            labels: data.labels.clone(),
            config: config.clone(),
            model_tag: model.params.tag().to_string(),
        }
    } else {
        attack_batch(&model.params, &data.images, &data.labels, config)?
    };
    batch.verify()?;
    cache.put("adv", &key, &checkpoint::adversarial_to_checkpoint(&batch)?)?;
    Ok((batch, key))
}

/// Trains an encoder-decoder mapping every batch's adversarials to its
/// originals, or loads it from the cache. Returns the model and its tag.
pub fn obtain_autoencoder(
    batches: &[(&AdversarialBatch, &str)],
    training: &AeTraining,
    seed: u64,
    cache: &StageCache,
) -> Result<(AeParams, String)> {
    let config = AeTrainConfig {
        learning_rate: training.learning_rate,
        epochs: training.epochs,
        batch_size: training.batch_size,
        seed,
    };
    let keys: Vec<&str> = batches.iter().map(|(_, k)| *k).collect();
    let key = digest(&json!({ "stage": "autoencoder", "pairs": keys, "train": config }));
    let tag = format!("ae-{key}");
    if let Some(ck) = cache.get("ae", &key)? {
        return Ok((checkpoint::ae_from_checkpoint(&ck)?, tag));
    }
    let inputs: Vec<&ImageSet> = batches.iter().map(|(b, _)| &b.adversarials).collect();
    let targets: Vec<&ImageSet> = batches.iter().map(|(b, _)| &b.originals).collect();
    let (inputs, targets) = (ImageSet::concat(&inputs)?, ImageSet::concat(&targets)?);
    let initial = AeParams::init_he(AeArch::standard(), derive_seed(seed, "ae-init", 0))?;
    let (params, _) = train_autoencoder(initial, &inputs, &targets, &config)?;
    cache.put("ae", &key, &checkpoint::ae_to_checkpoint(&params, &tag)?)?;
    Ok((params, tag))
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Runs the white-box protocol; attacker and evaluator must coincide.
pub fn run_whitebox(config: &ExperimentConfig, data: &DatasetSplit) -> Result<RunReport> {
    if config.box_mode() != BoxMode::White {
        return Err(Error::InvalidConfig("white-box runs need identical attacker and evaluator specs".into()));
    }
    run(config, data)
}

/// Runs the black-box protocol; attacker and evaluator must differ.
pub fn run_blackbox(config: &ExperimentConfig, data: &DatasetSplit) -> Result<RunReport> {
    if config.box_mode() != BoxMode::Black {
        return Err(Error::InvalidConfig("black-box runs need distinct attacker and evaluator specs".into()));
    }
    run(config, data)
}

fn attack_for(config: &ExperimentConfig, split: &str, epsilon: f64) -> AttackConfig {
    let base = derive_seed(config.seed, "attack", config.attack.seed);
    AttackConfig {
        seed: derive_seed(base, split, epsilon.to_bits()),
        ..config.attack.with_epsilon(epsilon)
    }
}

fn run(config: &ExperimentConfig, data: &DatasetSplit) -> Result<RunReport> {
    config.validate()?;
    let started = now_unix();
    let cache = match &config.output_dir {
        Some(dir) => StageCache::at(dir.join("cache")),
        None => StageCache::disabled(),
    };
    let attacker = obtain_qvc(config.attacker, &config.qvc_training, data, &cache)?;
    let evaluator = if config.box_mode() == BoxMode::White {
        attacker.clone()
    } else {
        obtain_qvc(config.evaluator, &config.qvc_training, data, &cache)?
    };
    let mut metadata = ReportMeta {
        dataset: config.dataset.to_string(),
        attack_kind: config.attack.kind.to_string(),
        box_mode: config.box_mode().name().to_string(),
        attacker_tag: attacker.params.tag().to_string(),
        evaluator_tag: evaluator.params.tag().to_string(),
        ae_mode: config.ae_mode.name().to_string(),
        ae_tags: Vec::new(),
        seeds: [
            ("run".to_string(), config.seed),
            ("attacker".to_string(), config.attacker.seed),
            ("evaluator".to_string(), config.evaluator.seed),
            ("attack".to_string(), config.attack.seed),
        ]
        .into_iter()
        .collect(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: 0,
    };
    let test: &Labeled = &data.test;
    let clean_acc = evaluate_accuracy(&evaluator.params, &test.images, &test.labels)?;

    let shared_ae = if config.ae_mode == AeMode::Shared {
        let mut batches = Vec::new();
        for &eps in &config.epsilons {
            batches.push(obtain_adversarial(&attacker, &data.train, &attack_for(config, "train", eps), &cache)?);
        }
        let refs: Vec<(&AdversarialBatch, &str)> = batches.iter().map(|(b, k)| (b, k.as_str())).collect();
        let ae = obtain_autoencoder(&refs, &config.ae_training, derive_seed(config.seed, "ae", 0), &cache)?;
        metadata.ae_tags.push(ae.1.clone());
        Some(ae.0)
    } else {
        None
    };

    let mut report = RunReport {
        rows: Vec::new(),
        metadata,
    };
    for &eps in &config.epsilons {
        let (adv, _) = obtain_adversarial(&attacker, test, &attack_for(config, "test", eps), &cache)?;
        let adv_acc = evaluate_accuracy(&evaluator.params, &adv.adversarials, &test.labels)?;
        let recon_acc = match config.ae_mode {
            AeMode::Off => None,
            AeMode::Shared => Some(score_reconstruction(shared_ae.as_ref().unwrap(), &evaluator.params, &adv.adversarials, &test.labels)?),
            AeMode::PerEpsilon => {
                let train_pairs = obtain_adversarial(&attacker, &data.train, &attack_for(config, "train", eps), &cache)?;
                let (ae, tag) = obtain_autoencoder(
                    &[(&train_pairs.0, &train_pairs.1)],
                    &config.ae_training,
                    derive_seed(config.seed, "ae", eps.to_bits()),
                    &cache,
                )?;
                report.metadata.ae_tags.push(tag);
                Some(score_reconstruction(&ae, &evaluator.params, &adv.adversarials, &test.labels)?)
            }
        };
        log::info!("ε={eps:.3}: clean {clean_acc:.4}, adversarial {adv_acc:.4}, reconstructed {recon_acc:?}");
        report.rows.push(ReportRow {
            epsilon: eps,
            clean_acc,
            adv_acc,
            recon_acc,
        });
        if let Some(dir) = &config.output_dir {
            write_atomic(&dir.join("partial-report.json"), report.to_json()?.as_bytes())?;
        }
    }
    report.metadata.finished_unix = now_unix();
    report.validate()?;
    Ok(report)
}

fn score_reconstruction(ae: &AeParams, model: &QvcParams, images: &ImageSet, labels: &LabelSet) -> Result<f64> {
    evaluate_accuracy(model, &reconstruct_batch(ae, images)?, labels)
}
