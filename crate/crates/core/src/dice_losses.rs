//! Dice-family overlap scores and the generalised Wasserstein Dice score.
//!
//! All scores use the smoothing `(2 * tp + eps) / (2 * tp + errors + eps)`
//! with `eps = DICE_EPSILON`, so two empty segmentations agree perfectly and
//! gradients stay finite. Gradients are taken with respect to unconstrained
//! probabilities; staying on the simplex is the caller's concern.

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::label_metric::GroundMetric;
use crate::segmentation::{check_pair, CrispSegmentation, ProbSegmentation};
use crate::wasserstein::per_voxel_distances;

pub const DICE_EPSILON: f64 = 1e-8;

/// Label treated as foreground by the binary scores.
pub const BINARY_FOREGROUND: usize = 1;

/// True positive, false positive, false negative and all-error masses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiceCounts {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub ae: f64,
}

impl DiceCounts {
    /// Counts for a crisp prediction of one foreground label.
    pub fn crisp(pred: &CrispSegmentation, gt: &CrispSegmentation, foreground: usize) -> Result<Self> {
        if pred.dims() != gt.dims() {
            return Err(Error::mismatch("crisp dice counts", gt.dims(), pred.dims()));
        }
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (&s, &g) in pred.labels().iter().zip(gt.labels()) {
            match (s as usize == foreground, g as usize == foreground) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (false, false) => {}
            }
        }
        Ok(Self { tp, fp, fn_, ae: fp + fn_ })
    }

    /// Soft counts of a binary prediction: `ae = sum |p - g|`,
    /// `tp = sum g (1 - |p - g|)`.
    pub fn soft_binary(p: &ProbSegmentation, g: &CrispSegmentation) -> Result<Self> {
        check_binary(p, g)?;
        let (mut tp, mut fp, mut fn_, mut ae) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..g.len() {
            let pi = p.voxel(i)[BINARY_FOREGROUND];
            let gi = if g.label(i) == BINARY_FOREGROUND { 1.0 } else { 0.0 };
            let d = (pi - gi).abs();
            ae += d;
            tp += gi * (1.0 - d);
            fp += (1.0 - gi) * pi;
            fn_ += gi * (1.0 - pi);
        }
        Ok(Self { tp, fp, fn_, ae })
    }

    pub fn dice(&self) -> f64 {
        smoothed_ratio(2.0 * self.tp, 2.0 * self.tp + self.ae)
    }
}

#[inline]
fn smoothed_ratio(num: f64, den: f64) -> f64 {
    (num + DICE_EPSILON) / (den + DICE_EPSILON)
}

fn check_binary(p: &ProbSegmentation, g: &CrispSegmentation) -> Result<()> {
    check_pair(p, g, "binary soft dice")?;
    if p.num_labels() != 2 {
        return Err(Error::invalid_arg(
            "num_labels",
            format!("binary Dice needs 2 labels, got {}", p.num_labels()),
        ));
    }
    Ok(())
}

/// Soft Dice of the foreground probability against a crisp binary mask.
pub fn soft_dice_binary(p: &ProbSegmentation, g: &CrispSegmentation) -> Result<f64> {
    check_binary(p, g)?;
    let (mut inter, mut total) = (0.0, 0.0);
    for i in 0..g.len() {
        let pi = p.voxel(i)[BINARY_FOREGROUND];
        let gi = if g.label(i) == BINARY_FOREGROUND { 1.0 } else { 0.0 };
        inter += gi * pi;
        total += gi + pi;
    }
    Ok(smoothed_ratio(2.0 * inter, total))
}

/// Loss `1 - soft_dice_binary` and its gradient, voxel-major. Only the
/// foreground column is non-zero.
pub fn soft_dice_binary_loss_and_grad(p: &ProbSegmentation, g: &CrispSegmentation) -> Result<(f64, Vec<f64>)> {
    check_binary(p, g)?;
    let (mut inter, mut total) = (0.0, 0.0);
    for i in 0..g.len() {
        let pi = p.voxel(i)[BINARY_FOREGROUND];
        let gi = if g.label(i) == BINARY_FOREGROUND { 1.0 } else { 0.0 };
        inter += gi * pi;
        total += gi + pi;
    }
    let num = 2.0 * inter + DICE_EPSILON;
    let den = total + DICE_EPSILON;
    let mut grad = vec![0.0; p.probs().len()];
    for (i, gv) in grad.chunks_mut(2).enumerate() {
        let gi = if g.label(i) == BINARY_FOREGROUND { 1.0 } else { 0.0 };
        gv[BINARY_FOREGROUND] = -(2.0 * gi * den - num) / (den * den);
    }
    Ok((1.0 - num / den, grad))
}

/// Intersection `sum g_l p_l` and size `sum (g_l + p_l)` for every class.
fn class_sums(p: &ProbSegmentation, g: &CrispSegmentation) -> (Vec<f64>, Vec<f64>) {
    let n = p.num_labels();
    let mut inter = vec![0.0; n];
    let mut size = vec![0.0; n];
    for i in 0..g.len() {
        let v = p.voxel(i);
        let gl = g.label(i);
        inter[gl] += v[gl];
        size[gl] += 1.0;
        for (s, &x) in size.iter_mut().zip(v) {
            *s += x;
        }
    }
    (inter, size)
}

/// Soft Dice of each class against its one-hot ground truth.
pub fn per_class_dice(p: &ProbSegmentation, g: &CrispSegmentation) -> Result<Vec<f64>> {
    check_pair(p, g, "per-class dice")?;
    let (inter, size) = class_sums(p, g);
    Ok(inter
        .iter()
        .zip(&size)
        .map(|(&i, &s)| smoothed_ratio(2.0 * i, s))
        .collect())
}

/// Mean over classes of the per-class soft Dice.
pub fn mean_dice(p: &ProbSegmentation, g: &CrispSegmentation) -> Result<f64> {
    let d = per_class_dice(p, g)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Loss `1 - mean_dice` and its gradient, voxel-major.
pub fn mean_dice_loss_and_grad(p: &ProbSegmentation, g: &CrispSegmentation) -> Result<(f64, Vec<f64>)> {
    check_pair(p, g, "mean dice gradient")?;
    let n = p.num_labels();
    let (inter, size) = class_sums(p, g);
    let dice: Vec<f64> = inter
        .iter()
        .zip(&size)
        .map(|(&i, &s)| smoothed_ratio(2.0 * i, s))
        .collect();
    let loss = 1.0 - dice.iter().sum::<f64>() / n as f64;

    // d D_l / d p_il = (2 g_il (S_l + eps) - (2 I_l + eps)) / (S_l + eps)^2
    let den: Vec<f64> = size.iter().map(|s| s + DICE_EPSILON).collect();
    let num: Vec<f64> = inter.iter().map(|i| 2.0 * i + DICE_EPSILON).collect();
    let base: Vec<f64> = (0..n).map(|l| -num[l] / (den[l] * den[l])).collect();
    let hit: Vec<f64> = (0..n).map(|l| 2.0 / den[l]).collect();
    let scale = -1.0 / n as f64;
    let mut grad = vec![0.0; p.probs().len()];
    for (i, gv) in grad.chunks_mut(n).enumerate() {
        let gl = g.label(i);
        for (l, x) in gv.iter_mut().enumerate() {
            let d = if l == gl { base[l] + hit[l] } else { base[l] };
            *x = scale * d;
        }
    }
    Ok((loss, grad))
}

pub fn mean_dice_grad(p: &ProbSegmentation, g: &CrispSegmentation) -> Result<Vec<f64>> {
    Ok(mean_dice_loss_and_grad(p, g)?.1)
}

/// Class-weighted soft Dice built on `min(p, g)` overlaps.
pub fn generalized_dice_fm(p: &ProbSegmentation, g: &CrispSegmentation, alpha: &[f64]) -> Result<f64> {
    check_pair(p, g, "generalised dice")?;
    let n = p.num_labels();
    if alpha.len() != n {
        return Err(Error::mismatch("generalised dice weights", n, alpha.len()));
    }
    if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::invalid_arg("alpha", format!("weight {a} must be finite and nonnegative")));
    }
    if alpha.iter().all(|&a| a == 0.0) {
        return Err(Error::invalid_arg("alpha", "weights are all zero"));
    }
    let mut overlap = vec![0.0; n];
    let mut size = vec![0.0; n];
    for i in 0..g.len() {
        let gl = g.label(i);
        for (l, &pl) in p.voxel(i).iter().enumerate() {
            let gil = if l == gl { 1.0 } else { 0.0 };
            overlap[l] += pl.min(gil);
            size[l] += pl + gil;
        }
    }
    let num: f64 = alpha.iter().zip(&overlap).map(|(a, o)| a * o).sum();
    let den: f64 = alpha.iter().zip(&size).map(|(a, s)| a * s).sum();
    Ok(smoothed_ratio(2.0 * num, den))
}

/// The terms of the generalised Wasserstein Dice score.
#[derive(Debug, Clone, PartialEq)]
pub struct WassersteinDiceBreakdown {
    /// Total Wasserstein error mass, `sum_i W(p_i, g_i)`.
    pub theta_ae: f64,
    /// `sum_i g_il (M[l, b] - W(p_i, g_i))` for every label `l`. The
    /// background entry carries weight zero.
    pub theta_tp_per_class: Vec<f64>,
    /// Class weights `M[l, b]`.
    pub alpha: Vec<f64>,
    pub theta_tp: f64,
    pub score: f64,
}

impl WassersteinDiceBreakdown {
    pub fn loss(&self) -> f64 {
        1.0 - self.score
    }
}

fn check_metric(p: &ProbSegmentation, metric: &GroundMetric) -> Result<()> {
    if metric.size() != p.num_labels() {
        return Err(Error::mismatch(
            "wasserstein dice metric",
            format!("{} labels", p.num_labels()),
            format!("{} labels", metric.size()),
        ));
    }
    Ok(())
}

pub fn wasserstein_dice(p: &ProbSegmentation, g: &CrispSegmentation, metric: &GroundMetric) -> Result<WassersteinDiceBreakdown> {
    wasserstein_dice_with(p, g, metric, Execution::default())
}

pub fn wasserstein_dice_with(
    p: &ProbSegmentation,
    g: &CrispSegmentation,
    metric: &GroundMetric,
    exec: Execution,
) -> Result<WassersteinDiceBreakdown> {
    check_pair(p, g, "wasserstein dice")?;
    check_metric(p, metric)?;
    let w = per_voxel_distances(p.probs(), g.labels(), metric, exec);
    Ok(breakdown_from_distances(&w, g, metric))
}

fn breakdown_from_distances(w: &[f64], g: &CrispSegmentation, metric: &GroundMetric) -> WassersteinDiceBreakdown {
    let alpha = metric.background_distances();
    let theta_ae = exec::ordered_sum(w);
    let mut per_class = vec![0.0; alpha.len()];
    for (i, wi) in w.iter().enumerate() {
        let gl = g.label(i);
        per_class[gl] += alpha[gl] - wi;
    }
    let theta_tp: f64 = alpha.iter().zip(&per_class).map(|(a, t)| a * t).sum();
    let score = smoothed_ratio(2.0 * theta_tp, 2.0 * theta_tp + theta_ae);
    WassersteinDiceBreakdown {
        theta_ae,
        theta_tp_per_class: per_class,
        alpha,
        theta_tp,
        score,
    }
}

pub fn wasserstein_dice_loss(p: &ProbSegmentation, g: &CrispSegmentation, metric: &GroundMetric) -> Result<f64> {
    Ok(wasserstein_dice(p, g, metric)?.loss())
}

/// Loss `1 - D^M` and its gradient, voxel-major.
///
/// Both the error and true-positive masses are affine in `p`, so the
/// gradient at voxel `i` is `c_{g_i} * M[., g_i]` with one scalar per label.
pub fn wasserstein_dice_loss_and_grad(
    p: &ProbSegmentation,
    g: &CrispSegmentation,
    metric: &GroundMetric,
) -> Result<(f64, Vec<f64>)> {
    let b = wasserstein_dice(p, g, metric)?;
    let n = metric.size();
    let num = 2.0 * b.theta_tp + DICE_EPSILON;
    let den = 2.0 * b.theta_tp + b.theta_ae + DICE_EPSILON;
    let coef: Vec<f64> = b
        .alpha
        .iter()
        .map(|&a| (2.0 * a * den + num * (1.0 - 2.0 * a)) / (den * den))
        .collect();
    let mut grad = vec![0.0; p.probs().len()];
    for (i, gv) in grad.chunks_mut(n).enumerate() {
        let gl = g.label(i);
        for (k, x) in gv.iter_mut().enumerate() {
            *x = coef[gl] * metric.get(k, gl);
        }
    }
    Ok((b.loss(), grad))
}

pub fn wasserstein_dice_grad(p: &ProbSegmentation, g: &CrispSegmentation, metric: &GroundMetric) -> Result<Vec<f64>> {
    Ok(wasserstein_dice_loss_and_grad(p, g, metric)?.1)
}
