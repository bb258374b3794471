//! The quantum variational classifier.
//!
//! A 784-pixel image is amplitude-encoded into 10 qubits, run through
//! `n_layers` of (rotation on every qubit, CZ entanglers), and read out as
//! the ten `⟨Z_q⟩` values, one per class. Those raw expectations are the
//! logits of a softmax cross-entropy loss.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{epoch_batches, ImageSet, LabelSet, Labeled};
use crate::diffsim::{
    backward_adjoint, forward, parameter_shift_all, pixel_gradient, CircuitTape, Entangler,
    RotationKind,
};
use crate::error::{Error, Result};
use crate::numerics::AdamState;
use crate::rng::{derive_seed, prng};
use crate::statevec::PureState;

pub const N_QUBITS: usize = 10;

/// Circuit shape shared by parameters and their tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CircuitLayout {
    pub n_qubits: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub rotation: RotationKind,
    #[serde(default)]
    pub entangler: Entangler,
}

impl CircuitLayout {
    pub fn new(n_layers: usize) -> Self {
        CircuitLayout {
            n_qubits: N_QUBITS,
            n_layers,
            rotation: RotationKind::Euler,
            entangler: Entangler::Ring,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_layers * self.n_qubits * self.rotation.angles_per_qubit()
    }

    pub fn tape(&self) -> CircuitTape {
        CircuitTape::layered(self.n_qubits, self.n_layers, self.rotation, self.entangler)
    }
}

/// Trained (or freshly initialized) classifier angles, laid out
/// `[layer][qubit][angle]`.
#[derive(Clone, Debug)]
pub struct QvcParams {
    layout: CircuitLayout,
    angles: Vec<f64>,
    tag: String,
    tape: CircuitTape,
}

impl PartialEq for QvcParams {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout && self.angles == other.angles && self.tag == other.tag
    }
}

impl QvcParams {
    pub fn from_angles(layout: CircuitLayout, angles: Vec<f64>, tag: impl Into<String>) -> Result<Self> {
        if layout.n_qubits != N_QUBITS {
            return Err(Error::InvalidConfig(format!(
                "the classifier reads one qubit per class and needs {N_QUBITS} qubits"
            )));
        }
        if angles.len() != layout.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} angles for a layout with {} parameters",
                angles.len(),
                layout.n_params()
            )));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidConfig("non-finite angle".into()));
        }
        Ok(QvcParams {
            tape: layout.tape(),
            layout,
            angles,
            tag: tag.into(),
        })
    }

    pub fn layout(&self) -> &CircuitLayout {
        &self.layout
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn set_tag(&mut self, tag: impl Into<String>) {
        self.tag = tag.into();
    }

    pub fn tape(&self) -> &CircuitTape {
        &self.tape
    }

    fn encode(&self, pixels: &[f64]) -> Result<PureState> {
        PureState::amplitude_encode(pixels, self.layout.n_qubits)
    }
}

/// Angles drawn i.i.d. from `Uniform[0, 2π)`.
pub fn init_params(layout: CircuitLayout, seed: u64) -> Result<QvcParams> {
    if layout.n_layers == 0 {
        return Err(Error::InvalidConfig("n_layers must be at least 1".into()));
    }
    let mut rng = prng(derive_seed(seed, "qvc-init", 0));
    let angles = (0..layout.n_params()).map(|_| rng.random::<f64>() * TAU).collect();
    QvcParams::from_angles(layout, angles, format!("qvc-L{}-s{seed}", layout.n_layers))
}

/// `⟨Z_c⟩` of the final state for every class `c`.
pub fn forward_logits(params: &QvcParams, pixels: &[f64]) -> Result<Vec<f64>> {
    let mut state = params.encode(pixels)?;
    params.tape.run(&params.angles, &mut state)?;
    Ok(state.expect_z_all())
}

/// Softmax cross-entropy and its gradient `p − onehot(label)`.
pub fn loss_and_adjoint(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut d: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    d[label] -= 1.0;
    Ok((loss, d))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Argmax with ties going to the lowest index.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMode {
    #[default]
    Adjoint,
    ParameterShift,
}

/// Loss and parameter gradient for one labelled image.
pub fn sample_gradient(
    params: &QvcParams,
    pixels: &[f64],
    label: usize,
    mode: GradMode,
) -> Result<(f64, Vec<f64>)> {
    let input = params.encode(pixels)?;
    let (logits, cache) = forward(&params.tape, &params.angles, &input)?;
    let (loss, d_logits) = loss_and_adjoint(&logits, label)?;
    let grad = match mode {
        GradMode::Adjoint => backward_adjoint(&cache, &d_logits)?.d_params,
        GradMode::ParameterShift => parameter_shift_all(&params.tape, &params.angles, &input, &d_logits)?,
    };
    Ok((loss, grad))
}

/// Loss and `∇_x L` in raw pixel space, chained through the encoding's
/// normalization.
pub fn input_gradient(params: &QvcParams, pixels: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let input = params.encode(pixels)?;
    let (logits, cache) = forward(&params.tape, &params.angles, &input)?;
    let (loss, d_logits) = loss_and_adjoint(&logits, label)?;
    let bundle = backward_adjoint(&cache, &d_logits)?;
    Ok((loss, pixel_gradient(&bundle.d_input, pixels)?))
}

/// Fraction of images whose predicted class equals the label. An all-zero
/// image has no amplitude encoding and counts as misclassified.
pub fn evaluate_accuracy(params: &QvcParams, images: &ImageSet, labels: &LabelSet) -> Result<f64> {
    if images.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    if images.is_empty() {
        return Err(Error::InvalidConfig("cannot evaluate accuracy on an empty set".into()));
    }
    let correct = (0..images.len())
        .into_par_iter()
        .map(|i| match forward_logits(params, images.image(i)) {
            Ok(logits) => Ok(usize::from(predict(&logits) == labels.get(i))),
            Err(Error::ZeroVector) => Ok(0),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / images.len() as f64)
}

/// Optimizer settings for [`train_qvc`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub grad_mode: GradMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            batch_size: 256,
            epochs: 20,
            seed: 0,
            grad_mode: GradMode::Adjoint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean pre-update loss over the epoch's samples.
    pub train_loss: f64,
    pub eval_accuracy: f64,
    /// Optimizer steps taken so far.
    pub steps: u64,
}

/// Mini-batch Adam on mean cross-entropy.
pub fn train_qvc(
    initial: QvcParams,
    config: &TrainConfig,
    train: &Labeled,
    eval: &Labeled,
) -> Result<(QvcParams, Vec<EpochMetrics>)> {
    config.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(Error::InvalidConfig("training and evaluation sets must be non-empty".into()));
    }
    let mut params = initial;
    let mut adam = AdamState::new(params.angles.len());
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        for batch in epoch_batches(train.len(), config.batch_size, config.seed, epoch as u64)? {
            let per_sample = batch
                .par_iter()
                .map(|&i| sample_gradient(&params, train.images.image(i), train.labels.get(i), config.grad_mode))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; params.angles.len()];
            for (loss, g) in &per_sample {
                loss_sum += loss;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params.angles, &grad, config.learning_rate)?;
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            eval_accuracy: evaluate_accuracy(&params, &eval.images, &eval.labels)?,
            steps: adam.t,
        };
        log::info!(
            "qvc {} epoch {epoch}: loss {:.4}, eval acc {:.4}",
            params.tag,
            metrics.train_loss,
            metrics.eval_accuracy
        );
        history.push(metrics);
    }
    Ok((params, history))
}
