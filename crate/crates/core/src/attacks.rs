//! FGSM and PGD under an L∞ budget, driven by a model's pixel gradients.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{ImageSet, LabelSet};
use crate::error::{Error, Result};
use crate::qvc::{input_gradient, QvcParams};
use crate::rng::{derive_seed, prng};

/// Slack allowed on the L∞ budget for floating-point rounding.
pub const BUDGET_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    #[default]
    Pgd,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    /// PGD step size; `None` means `epsilon / 4`.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_true")]
    pub clip_pixels: bool,
    #[serde(default)]
    pub random_start: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_steps() -> usize {
    10
}

fn default_true() -> bool {
    true
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> Self {
        AttackConfig {
            kind: AttackKind::Fgsm,
            epsilon,
            alpha: None,
            steps: 1,
            clip_pixels: true,
            random_start: false,
            seed: 0,
        }
    }

    pub fn pgd(epsilon: f64) -> Self {
        AttackConfig {
            kind: AttackKind::Pgd,
            steps: default_steps(),
            ..Self::fgsm(epsilon)
        }
    }

    pub fn step_size(&self) -> f64 {
        self.alpha.unwrap_or(self.epsilon / 4.0)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        AttackConfig {
            epsilon,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be ≥ 0, got {}", self.epsilon)));
        }
        if self.kind == AttackKind::Pgd {
            if self.steps == 0 {
                return Err(Error::InvalidConfig("PGD needs at least one step".into()));
            }
            let alpha = self.step_size();
            if self.epsilon > 0.0 && !(alpha > 0.0 && alpha <= self.epsilon) {
                return Err(Error::InvalidConfig(format!(
                    "PGD step size must lie in (0, epsilon], got {alpha}"
                )));
            }
        }
        Ok(())
    }
}

/// Anything that can report `(loss, ∇_x loss)` for a labelled input.
pub trait GradientModel: Sync {
    fn loss_and_input_gradient(&self, pixels: &[f64], label: usize) -> Result<(f64, Vec<f64>)>;
    fn model_tag(&self) -> String;
}

impl GradientModel for QvcParams {
    fn loss_and_input_gradient(&self, pixels: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        input_gradient(self, pixels, label)
    }

    fn model_tag(&self) -> String {
        self.tag().to_string()
    }
}

/// `sign` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn gradient_or_stop(model: &dyn GradientModel, x: &[f64], y: usize) -> Result<Option<Vec<f64>>> {
    match model.loss_and_input_gradient(x, y) {
        Ok((_, g)) => Ok(Some(g)),
        // An all-black iterate has no defined gradient; the attack ends there.
        Err(Error::ZeroVector) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `x + ε·sign(∇_x L)`, clamped to `[0, 1]` when `clip_pixels` is set.
pub fn fgsm(model: &dyn GradientModel, x: &[f64], y: usize, config: &AttackConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if config.epsilon == 0.0 {
        return Ok(x.to_vec());
    }
    let Some(grad) = gradient_or_stop(model, x, y)? else {
        return Ok(x.to_vec());
    };
    Ok(x.iter()
        .zip(&grad)
        .map(|(&v, &g)| {
            let out = v + config.epsilon * sign(g);
            if config.clip_pixels {
                out.clamp(0.0, 1.0)
            } else {
                out
            }
        })
        .collect())
}

/// Iterated signed-gradient steps of size `α`, each followed by projection
/// onto `[x−ε, x+ε]` (and `[0, 1]` when `clip_pixels` is set).
pub fn pgd(model: &dyn GradientModel, x: &[f64], y: usize, config: &AttackConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let eps = config.epsilon;
    if eps == 0.0 {
        return Ok(x.to_vec());
    }
    let project = |v: f64, orig: f64| {
        let p = v.clamp(orig - eps, orig + eps);
        if config.clip_pixels {
            p.clamp(0.0, 1.0)
        } else {
            p
        }
    };
    let mut current: Vec<f64> = if config.random_start {
        let mut rng = prng(derive_seed(config.seed, "pgd-start", 0));
        x.iter().map(|&v| project(v + rng.random_range(-eps..=eps), v)).collect()
    } else {
        x.to_vec()
    };
    let alpha = config.step_size();
    for _ in 0..config.steps {
        let Some(grad) = gradient_or_stop(model, &current, y)? else {
            break;
        };
        for ((c, &g), &orig) in current.iter_mut().zip(&grad).zip(x) {
            *c = project(*c + alpha * sign(g), orig);
        }
    }
    Ok(current)
}

pub fn attack(model: &dyn GradientModel, x: &[f64], y: usize, config: &AttackConfig) -> Result<Vec<f64>> {
    match config.kind {
        AttackKind::Fgsm => fgsm(model, x, y, config),
        AttackKind::Pgd => pgd(model, x, y, config),
    }
}

/// Clean inputs, their attacked versions, and where the attack came from.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialBatch {
    pub originals: ImageSet,
    pub adversarials: ImageSet,
    pub labels: LabelSet,
    pub config: AttackConfig,
    pub model_tag: String,
}

impl AdversarialBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Largest per-pixel deviation over the batch.
    pub fn linf(&self) -> f64 {
        self.originals
            .pixels()
            .data()
            .iter()
            .zip(self.adversarials.pixels().data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Checks the L∞ budget and, if clipping was requested, the pixel range.
    pub fn verify(&self) -> Result<()> {
        let linf = self.linf();
        if linf > self.config.epsilon + BUDGET_SLACK {
            return Err(Error::InvalidConfig(format!(
                "adversarial batch exceeds its budget: L∞ {linf} > ε {}",
                self.config.epsilon
            )));
        }
        if self.config.clip_pixels
            && self.adversarials.pixels().data().iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::InvalidConfig("adversarial pixel outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Attacks every image independently. Sample `i` draws its random start
/// (if any) from a stream derived from `config.seed` and `i`.
pub fn attack_batch(
    model: &dyn GradientModel,
    images: &ImageSet,
    labels: &LabelSet,
    config: &AttackConfig,
) -> Result<AdversarialBatch> {
    config.validate()?;
    if images.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let adv = (0..images.len())
        .into_par_iter()
        .map(|i| {
            let per_sample = AttackConfig {
                seed: derive_seed(config.seed, "attack-sample", i as u64),
                ..config.clone()
            };
            attack(model, images.image(i), labels.get(i), &per_sample)
        })
        .collect::<Result<Vec<_>>>()?;
    let adversarials = if adv.is_empty() {
        ImageSet::empty(images.rows(), images.cols())
    } else {
        ImageSet::from_images(&adv, images.rows(), images.cols())?
    };
    Ok(AdversarialBatch {
        originals: images.clone(),
        adversarials,
        labels: labels.clone(),
        config: config.clone(),
        model_tag: model.model_tag(),
    })
}
