use rand::seq::SliceRandom;

use super::{HolisticModel, LossKind, NetworkConfig, SupervisionWeights};
use crate::dice_losses;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::label_metric::GroundMetric;
use crate::synth_data::{derived_rng, Sample};

/// Number of training images used to calibrate the normalisation layers.
pub const CALIBRATION_IMAGES: usize = 8;

/// One stage of a training schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub loss: LossKind,
    pub epochs: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub momentum: f64,
    /// `None` means `SupervisionWeights::uniform`.
    pub weights: Option<SupervisionWeights>,
    /// Metric of the validation `D^M` column.
    pub validation_metric: GroundMetric,
    pub exec: Execution,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 8,
            momentum: 0.9,
            weights: None,
            validation_metric: GroundMetric::brats_tree(),
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    /// 1-based, counted across phases.
    pub epoch: usize,
    pub loss: String,
    pub train_loss: f64,
    pub val_mean_dice: Option<f64>,
    pub val_wasserstein_dice: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "epoch\tloss\ttrain_loss\tval_mean_dice\tval_wasserstein_dice";

    /// Tab-separated rows under [`TrainingLog::HEADER`]; floats are printed
    /// in shortest round-trip form, missing values as `nan`.
    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.epoch,
                r.loss,
                r.train_loss,
                opt(r.val_mean_dice),
                opt(r.val_wasserstein_dice)
            ));
        }
        out
    }
}

/// Initialises a model (calibrated on the first training images) and trains
/// it through `schedule`.
pub fn train(
    config: NetworkConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    schedule: &[Phase],
    options: &TrainOptions,
) -> Result<(HolisticModel, TrainingLog)> {
    let calib: Vec<_> = train_set.iter().take(CALIBRATION_IMAGES).map(|s| &s.image).collect();
    let model = HolisticModel::initialise(config, &calib)?;
    train_from(model, train_set, val_set, schedule, options)
}

/// Trains an existing model with SGD and momentum. The momentum buffer starts
/// at zero in every phase. Sample order is reshuffled each epoch from the
/// model seed.
pub fn train_from(
    mut model: HolisticModel,
    train_set: &[Sample],
    val_set: &[Sample],
    schedule: &[Phase],
    options: &TrainOptions,
) -> Result<(HolisticModel, TrainingLog)> {
    if options.batch_size == 0 {
        return Err(Error::invalid_arg("batch_size", "must be at least 1"));
    }
    if !(0.0..1.0).contains(&options.momentum) {
        return Err(Error::invalid_arg("momentum", "must lie in [0, 1)"));
    }
    for (k, ph) in schedule.iter().enumerate() {
        if !ph.learning_rate.is_finite() || ph.learning_rate < 0.0 {
            return Err(Error::invalid_arg(format!("schedule[{k}].learning_rate"), "must be finite and non-negative"));
        }
    }
    let total_epochs: usize = schedule.iter().map(|p| p.epochs).sum();
    if total_epochs > 0 && train_set.is_empty() {
        return Err(Error::invalid_arg("train_set", "is empty"));
    }
    let weights = options
        .weights
        .clone()
        .unwrap_or_else(|| SupervisionWeights::uniform(model.config().scales));
    weights.check(model.config().scales)?;

    let mut log = TrainingLog::default();
    let mut epoch = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for phase in schedule {
        let mut velocity = vec![0.0; model.param_count()];
        for _ in 0..phase.epochs {
            epoch += 1;
            let mut rng = derived_rng(model.config().seed, 1 << 32 | epoch as u64);
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for batch in order.chunks(options.batch_size) {
                let results = exec::map_indexed(batch.len(), options.exec, |j| {
                    let s = &train_set[batch[j]];
                    model.loss_and_gradient(&s.image, &s.labels, &phase.loss, &weights)
                });
                let mut grad = vec![0.0; model.param_count()];
                for r in results {
                    let (loss, g) = r.map_err(|e| at_epoch(e, epoch))?;
                    loss_sum += loss;
                    for (a, b) in grad.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                let scale = phase.learning_rate / batch.len() as f64;
                for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                    *v = options.momentum * *v - scale * g;
                    *p += *v;
                }
                if !model.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        reason: "non-finite parameters after update".into(),
                    });
                }
            }
            let (md, wd) = validate(&model, val_set, &options.validation_metric, options.exec).map_err(|e| at_epoch(e, epoch))?;
            log.rows.push(LogRow {
                epoch,
                loss: phase.loss.name(),
                train_loss: loss_sum / train_set.len() as f64,
                val_mean_dice: md,
                val_wasserstein_dice: wd,
            });
        }
    }
    Ok((model, log))
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Divergence { reason, .. } => Error::Divergence { epoch, reason },
        other => other,
    }
}

/// Mean validation Dice and `D^M` of the fused prediction.
fn validate(
    model: &HolisticModel,
    val_set: &[Sample],
    metric: &GroundMetric,
    exec_mode: Execution,
) -> Result<(Option<f64>, Option<f64>)> {
    if val_set.is_empty() {
        return Ok((None, None));
    }
    let scores = exec::map_indexed(val_set.len(), exec_mode, |k| -> Result<(f64, f64)> {
        let s = &val_set[k];
        let p = model.predict(&s.image)?;
        let md = dice_losses::mean_dice(&p, &s.labels)?;
        let wd = if metric.size() == p.num_labels() {
            dice_losses::wasserstein_dice(&p, &s.labels, metric)?.score
        } else {
            f64::NAN
        };
        Ok((md, wd))
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let n = scores.len() as f64;
    let md: Vec<f64> = scores.iter().map(|s| s.0).collect();
    let wd: Vec<f64> = scores.iter().map(|s| s.1).collect();
    let wd_mean = exec::ordered_sum(&wd) / n;
    Ok((Some(exec::ordered_sum(&md) / n), wd_mean.is_finite().then_some(wd_mean)))
}
