//! A small 2D holistically-nested segmentation network trained with Dice
//! losses and deep supervision.
//!
//! The network has `S` stages. Stage `s` works at stride `2^s`, ends in a
//! `1 x 1` head producing class logits, and those logits are upsampled
//! (nearest neighbour) to full resolution. The fused prediction is
//! `softmax_l(sum_s w[l][s] * logits_s[l])`. Training minimises
//! `lambda_fuse * L(fused) + sum_s lambda_s * L(softmax(logits_s))`.

pub mod layers;
mod model;
mod train;

pub use model::{ForwardOutput, HolisticModel, NetworkConfig, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{train, train_from, LogRow, Phase, TrainOptions, TrainingLog};

use crate::dice_losses;
use crate::error::{Error, Result};
use crate::label_metric::GroundMetric;
use crate::segmentation::{CrispSegmentation, ProbSegmentation};

/// Coefficients of the fused and per-scale loss terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionWeights {
    pub fused: f64,
    pub scales: Vec<f64>,
}

impl SupervisionWeights {
    /// Every coefficient `1 / (S + 1)`.
    pub fn uniform(scales: usize) -> Self {
        let w = 1.0 / (scales as f64 + 1.0);
        Self {
            fused: w,
            scales: vec![w; scales],
        }
    }

    pub fn new(fused: f64, scales: Vec<f64>) -> Result<Self> {
        let w = Self { fused, scales };
        if std::iter::once(&w.fused).chain(&w.scales).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid_arg("supervision weights", "must be finite and non-negative"));
        }
        Ok(w)
    }

    pub(crate) fn check(&self, scales: usize) -> Result<()> {
        if self.scales.len() != scales {
            return Err(Error::mismatch("supervision weights", scales, self.scales.len()));
        }
        Ok(())
    }
}

/// The training loss applied to every output.
#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// `1 -` mean over classes of the soft Dice.
    MeanDice,
    /// `1 -` soft Dice of label 1; two-label problems only.
    BinaryDice,
    /// `1 - D^M` for the named ground metric.
    Wasserstein { name: String, metric: GroundMetric },
}

impl LossKind {
    pub fn wasserstein(name: impl Into<String>, metric: GroundMetric) -> Self {
        LossKind::Wasserstein {
            name: name.into(),
            metric,
        }
    }

    /// Short name used in training logs.
    pub fn name(&self) -> String {
        match self {
            LossKind::MeanDice => "mean_dice".into(),
            LossKind::BinaryDice => "binary_dice".into(),
            LossKind::Wasserstein { name, .. } => format!("wasserstein:{name}"),
        }
    }

    pub fn loss(&self, p: &ProbSegmentation, g: &CrispSegmentation) -> Result<f64> {
        match self {
            LossKind::MeanDice => Ok(1.0 - dice_losses::mean_dice(p, g)?),
            LossKind::BinaryDice => Ok(1.0 - dice_losses::soft_dice_binary(p, g)?),
            LossKind::Wasserstein { metric, .. } => dice_losses::wasserstein_dice_loss(p, g, metric),
        }
    }

    /// Loss and its gradient with respect to the probabilities.
    pub fn loss_and_grad(&self, p: &ProbSegmentation, g: &CrispSegmentation) -> Result<(f64, Vec<f64>)> {
        match self {
            LossKind::MeanDice => dice_losses::mean_dice_loss_and_grad(p, g),
            LossKind::BinaryDice => dice_losses::soft_dice_binary_loss_and_grad(p, g),
            LossKind::Wasserstein { metric, .. } => dice_losses::wasserstein_dice_loss_and_grad(p, g, metric),
        }
    }
}

/// Deep-supervision loss of a forward pass. Scale logits are softmaxed
/// before their loss is taken.
pub fn total_loss(
    output: &ForwardOutput,
    g: &CrispSegmentation,
    kind: &LossKind,
    weights: &SupervisionWeights,
) -> Result<f64> {
    let dims = output.fused_probs.dims().clone();
    let l = output.fused_probs.num_labels();
    let scales = output
        .scale_logits
        .iter()
        .map(|z| {
            let mut p = z.clone();
            for v in p.chunks_mut(l) {
                let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for x in v.iter_mut() {
                    *x = (*x - m).exp();
                    s += *x;
                }
                v.iter_mut().for_each(|x| *x /= s);
            }
            ProbSegmentation::unconstrained(dims.clone(), l, p)
        })
        .collect::<Result<Vec<_>>>()?;
    weighted_loss(&output.fused_probs, &scales, g, kind, weights)
}

/// `weights.fused * L(fused) + sum_s weights.scales[s] * L(scales[s])`.
pub fn weighted_loss(
    fused: &ProbSegmentation,
    scales: &[ProbSegmentation],
    g: &CrispSegmentation,
    kind: &LossKind,
    weights: &SupervisionWeights,
) -> Result<f64> {
    weights.check(scales.len())?;
    let mut total = weights.fused * kind.loss(fused, g)?;
    for (p, w) in scales.iter().zip(&weights.scales) {
        total += w * kind.loss(p, g)?;
    }
    if !total.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            reason: "non-finite loss".into(),
        });
    }
    Ok(total)
}
