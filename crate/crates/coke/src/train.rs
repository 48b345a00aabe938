//! Training: Adam with warmup + linear decay, seeded shuffling, epoch
//! control, and dev-set model selection.
//!
//! One optimizer step per batch; batches and dropout draw from a single
//! ChaCha8 stream seeded from the config, so a full run is a pure function
//! of (data, config) at a fixed thread count. Gradients accumulate in batch
//! order inside each op, which pins the reduction order exactly.

use crate::error::{CokeError, Result};
use crate::kg::GraphPath;
use crate::model::{make_instances, ModelParams, SequenceInstance};
use crate::tensor::{Elem, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    /// Dev filtered mean reciprocal rank (link prediction).
    Mrr,
    /// Dev mean quantile (path queries).
    Mq,
}

impl std::str::FromStr for SelectionMetric {
    type Err = CokeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mrr" => Ok(SelectionMetric::Mrr),
            "mq" => Ok(SelectionMetric::Mq),
            other => Err(CokeError::Config(format!(
                "selection metric `{other}` is neither `mrr` nor `mq`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Fraction of total steps spent ramping the rate up linearly.
    pub warmup_fraction: f64,
    /// Dropout rates to enumerate in a grid search.
    pub dropout_grid: Vec<f64>,
    /// Label smoothing rates to enumerate in a grid search.
    pub label_smoothing_grid: Vec<f64>,
    pub selection_metric: SelectionMetric,
    pub seed: u64,
    /// Global-norm gradient clipping; off unless set.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            batch_size: 512,
            max_epochs: 1000,
            warmup_fraction: 0.10,
            dropout_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            label_smoothing_grid: (1..=20).map(|i| i as f64 * 0.05).collect(),
            selection_metric: SelectionMetric::Mrr,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    /// Path-task defaults: larger batches, far fewer epochs.
    pub fn paths() -> Self {
        TrainConfig {
            batch_size: 2048,
            max_epochs: 20,
            selection_metric: SelectionMetric::Mq,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(CokeError::Config(format!(
                "warmup fraction {} outside [0,1)",
                self.warmup_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(CokeError::Config("batch size must be positive".into()));
        }
        if self.dropout_grid.is_empty() || self.label_smoothing_grid.is_empty() {
            return Err(CokeError::Config("hyperparameter grids must be nonempty".into()));
        }
        Ok(())
    }
}

/// Linear 0→η over the first ⌈warmup·total⌉ steps, then linear η→0 at
/// `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(CokeError::Config("schedule over zero total steps".into()));
    }
    debug_assert!(step <= total_steps);
    let eta = cfg.learning_rate;
    let warmup = (cfg.warmup_fraction * total_steps as f64).ceil() as usize;
    if step >= total_steps {
        return Ok(0.0);
    }
    if warmup > 0 && step < warmup {
        return Ok(eta * step as f64 / warmup as f64);
    }
    Ok(eta * (total_steps - step) as f64 / (total_steps - warmup) as f64)
}

/// Adam with bias correction (β1=0.9, β2=0.999, ε=1e-8). Moments mirror
/// every parameter shape in declared order.
pub struct AdamState<E> {
    first: Vec<Tensor<E>>,
    second: Vec<Tensor<E>>,
    step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<E: Elem> AdamState<E> {
    pub fn new(params: &ModelParams<E>) -> Self {
        let mut first = Vec::new();
        params.for_each(|t| first.push(Tensor::zeros(t.shape())));
        let second = first.clone();
        AdamState {
            first,
            second,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update. `grads` must line up with the declared parameter order.
    pub fn apply(
        &mut self,
        params: &mut ModelParams<E>,
        grads: &[Tensor<E>],
        lr: f64,
        clip: Option<f64>,
    ) -> Result<()> {
        if grads.len() != self.first.len() {
            return Err(CokeError::Config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.first.len()
            )));
        }
        let clip_scale = match clip {
            Some(limit) => {
                let norm = grad_norm(grads);
                if norm > limit && norm > 0.0 {
                    limit / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut idx = 0;
        let mut failure = None;
        params.for_each_mut(|t| {
            if failure.is_some() {
                return;
            }
            let g = &grads[idx];
            if g.shape() != t.shape() {
                failure = Some(CokeError::Shape {
                    op: "adam_apply",
                    lhs: t.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
                return;
            }
            let m = self.first[idx].data_mut();
            let v = self.second[idx].data_mut();
            for ((p, g), (m, v)) in t
                .data_mut()
                .iter_mut()
                .zip(g.data().iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = g.to_f64() * clip_scale;
                let m_new = self.beta1 * m.to_f64() + (1.0 - self.beta1) * g;
                let v_new = self.beta2 * v.to_f64() + (1.0 - self.beta2) * g * g;
                *m = E::from_f64(m_new);
                *v = E::from_f64(v_new);
                let m_hat = m_new / bc1;
                let v_hat = v_new / bc2;
                *p = E::from_f64(p.to_f64() - lr * m_hat / (v_hat.sqrt() + self.epsilon));
            }
            idx += 1;
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn grad_norm<E: Elem>(grads: &[Tensor<E>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| {
            let x = v.to_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Step counter shared across epochs so the schedule spans the whole run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: usize,
    pub total_steps: usize,
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub batches: usize,
    pub last_lr: f64,
}

/// One pass over the instances: seeded shuffle, one Adam update per batch.
pub fn train_epoch<E: Elem>(
    params: &mut ModelParams<E>,
    instances: &[SequenceInstance],
    cfg: &TrainConfig,
    adam: &mut AdamState<E>,
    state: &mut TrainState,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    if instances.is_empty() {
        return Err(CokeError::Config("no training instances".into()));
    }
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(rng);
    let mut loss_sum = 0.0;
    let mut seen = 0usize;
    let mut batches = 0usize;
    let mut last_lr = 0.0;
    for chunk in order.chunks(cfg.batch_size) {
        state.step += 1;
        let lr = lr_schedule(state.step, state.total_steps, cfg)?;
        last_lr = lr;
        let batch: Vec<&SequenceInstance> = chunk.iter().map(|&i| &instances[i]).collect();
        let (mut tape, loss, _) = params.forward_loss(&batch, true, rng)?;
        let loss_value = tape.value(loss).item().to_f64();
        tape.backward(loss)?;
        let grads = tape.param_grads();
        if !loss_value.is_finite() {
            return Err(CokeError::NonFiniteLoss {
                step: state.step,
                lr,
                grad_norm: grad_norm(&grads),
            });
        }
        adam.apply(params, &grads, lr, cfg.grad_clip)?;
        loss_sum += loss_value * chunk.len() as f64;
        seen += chunk.len();
        batches += 1;
    }
    Ok(EpochStats {
        mean_loss: loss_sum / seen as f64,
        batches,
        last_lr,
    })
}

/// One training-log line per epoch; serializes as TSV.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub dev_metric: f64,
    pub wall_secs: f64,
}

impl EpochLog {
    pub const TSV_HEADER: &'static str = "epoch\tmean_loss\tlr\tdev_metric\twall_secs";

    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6e}\t{:.6}\t{:.3}",
            self.epoch, self.mean_loss, self.lr, self.dev_metric, self.wall_secs
        )
    }
}

pub struct FitOutcome<E> {
    pub best: ModelParams<E>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub log: Vec<EpochLog>,
}

/// Train for at most `max_epochs`, evaluating the dev metric every epoch
/// and keeping the checkpoint with the best value; ties break toward the
/// earlier epoch. With zero epochs the initial parameters are returned.
pub fn fit<E: Elem>(
    mut params: ModelParams<E>,
    contexts: &[GraphPath],
    cfg: &TrainConfig,
    mut dev_metric: impl FnMut(&ModelParams<E>) -> Result<f64>,
) -> Result<FitOutcome<E>> {
    cfg.validate()?;
    let instances: Vec<SequenceInstance> = contexts
        .iter()
        .flat_map(|p| make_instances(p, &params.config))
        .collect();
    if cfg.max_epochs == 0 {
        let metric = dev_metric(&params)?;
        return Ok(FitOutcome {
            best: params,
            best_epoch: 0,
            best_metric: metric,
            log: Vec::new(),
        });
    }
    if instances.is_empty() {
        return Err(CokeError::Config("no training instances".into()));
    }
    let steps_per_epoch = instances.len().div_ceil(cfg.batch_size);
    let mut state = TrainState {
        step: 0,
        total_steps: cfg.max_epochs * steps_per_epoch,
    };
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(ModelParams<E>, usize, f64)> = None;
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let stats = train_epoch(&mut params, &instances, cfg, &mut adam, &mut state, &mut rng)?;
        let metric = dev_metric(&params)?;
        log.push(EpochLog {
            epoch,
            mean_loss: stats.mean_loss,
            lr: stats.last_lr,
            dev_metric: metric,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        let improved = match &best {
            Some((_, _, m)) => metric > *m,
            None => true,
        };
        if improved {
            best = Some((params.clone(), epoch, metric));
        }
    }
    let (best, best_epoch, best_metric) = best.expect("at least one epoch ran");
    Ok(FitOutcome {
        best,
        best_epoch,
        best_metric,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::GraphPath;
    use crate::model::ModelConfig;

    fn toy_config() -> ModelConfig {
        ModelConfig {
            blocks: 1,
            heads: 2,
            hidden_size: 8,
            ffn_size: 16,
            max_seq_len: 3,
            dropout: 0.1,
            label_smoothing: 0.8,
            entity_count: 8,
            relation_count: 2,
        }
    }

    /// Ring edges over 8 entities with 2 relations.
    fn toy_edges() -> Vec<GraphPath> {
        let mut edges = Vec::new();
        for i in 0..8u32 {
            edges.push(GraphPath::new(i, &[8], (i + 1) % 8).unwrap());
            edges.push(GraphPath::new(i, &[9], (i + 3) % 8).unwrap());
        }
        edges
    }

    fn toy_instances(cfg: &ModelConfig) -> Vec<SequenceInstance> {
        toy_edges()
            .iter()
            .flat_map(|p| make_instances(p, cfg))
            .collect()
    }

    fn quick_train_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 4,
            warmup_fraction: 0.1,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_peaks_at_warmup_boundary_and_decays_to_zero() {
        let cfg = TrainConfig {
            learning_rate: 5e-4,
            ..TrainConfig::default()
        };
        // total=1000, warmup=100
        assert_eq!(lr_schedule(100, 1000, &cfg).unwrap(), 5e-4);
        assert_eq!(lr_schedule(1000, 1000, &cfg).unwrap(), 0.0);
        assert!((lr_schedule(50, 1000, &cfg).unwrap() - 2.5e-4).abs() < 1e-18);
        assert_eq!(lr_schedule(0, 1000, &cfg).unwrap(), 0.0);
        // halfway through decay
        let mid = lr_schedule(550, 1000, &cfg).unwrap();
        assert!((mid - 5e-4 * 0.5).abs() < 1e-12);
        assert!(lr_schedule(1, 0, &cfg).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let cfg = toy_config();
        let mut params = ModelParams::<f32>::init(cfg.clone(), 1).unwrap();
        let before = params.clone();
        let tc = TrainConfig {
            learning_rate: 0.0,
            batch_size: 4,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let instances = toy_instances(&cfg);
        let mut adam = AdamState::new(&params);
        let mut state = TrainState { step: 0, total_steps: 8 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        train_epoch(&mut params, &instances, &tc, &mut adam, &mut state, &mut rng).unwrap();
        let mut identical = true;
        let mut idx = 0;
        params.for_each(|t| {
            let mut other = Vec::new();
            before.for_each(|b| other.push(b.clone()));
            if t.data() != other[idx].data() {
                identical = false;
            }
            idx += 1;
        });
        assert!(identical);
    }

    #[test]
    fn adam_with_zero_gradients_is_a_no_op() {
        let cfg = toy_config();
        let mut params = ModelParams::<f32>::init(cfg, 2).unwrap();
        let before = params.clone();
        let mut adam = AdamState::new(&params);
        let mut zero_grads = Vec::new();
        params.for_each(|t| zero_grads.push(Tensor::<f32>::zeros(t.shape())));
        adam.apply(&mut params, &zero_grads, 1e-3, None).unwrap();
        adam.apply(&mut params, &zero_grads, 1e-3, None).unwrap();
        let mut flat_after = Vec::new();
        params.for_each(|t| flat_after.extend_from_slice(t.data()));
        let mut flat_before = Vec::new();
        before.for_each(|t| flat_before.extend_from_slice(t.data()));
        assert_eq!(flat_after, flat_before);
    }

    #[test]
    fn adam_rejects_misaligned_gradients() {
        let cfg = toy_config();
        let mut params = ModelParams::<f32>::init(cfg, 3).unwrap();
        let mut adam = AdamState::new(&params);
        assert!(adam.apply(&mut params, &[], 1e-3, None).is_err());
    }

    #[test]
    fn gradient_clipping_caps_the_update_norm() {
        let cfg = toy_config();
        let mut loose = ModelParams::<f32>::init(cfg.clone(), 4).unwrap();
        let mut clipped = loose.clone();
        let mut grads = Vec::new();
        loose.for_each(|t| grads.push(Tensor::<f32>::full(t.shape(), 10.0)));
        let mut a1 = AdamState::new(&loose);
        let mut a2 = AdamState::new(&clipped);
        a1.apply(&mut loose, &grads, 1e-3, None).unwrap();
        a2.apply(&mut clipped, &grads, 1e-3, Some(1.0)).unwrap();
        // both moved, but the clipped run saw gradients scaled to norm 1
        let mut moved = 0.0f64;
        let mut i = 0;
        let base = ModelParams::<f32>::init(toy_config(), 4).unwrap();
        let mut base_flat = Vec::new();
        base.for_each(|t| base_flat.extend_from_slice(t.data()));
        let mut clipped_flat = Vec::new();
        clipped.for_each(|t| clipped_flat.extend_from_slice(t.data()));
        for (a, b) in clipped_flat.iter().zip(base_flat.iter()) {
            moved += ((a - b) as f64).powi(2);
            i += 1;
        }
        assert!(i > 0 && moved > 0.0);
    }

    #[test]
    fn one_epoch_is_bit_reproducible() {
        let cfg = toy_config();
        let instances = toy_instances(&cfg);
        let run = || {
            let mut params = ModelParams::<f32>::init(cfg.clone(), 7).unwrap();
            let mut adam = AdamState::new(&params);
            let mut state = TrainState { step: 0, total_steps: 16 };
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let tc = quick_train_cfg();
            let stats =
                train_epoch(&mut params, &instances, &tc, &mut adam, &mut state, &mut rng)
                    .unwrap();
            let mut flat = Vec::new();
            params.for_each(|t| flat.extend(t.data().iter().map(|v| v.to_bits())));
            (stats.mean_loss.to_bits(), flat)
        };
        let (loss_a, params_a) = run();
        let (loss_b, params_b) = run();
        assert_eq!(loss_a, loss_b, "first-epoch loss must match to 0 ULPs");
        assert_eq!(params_a, params_b);
    }

    #[test]
    fn pad_embedding_row_never_receives_gradient() {
        // K=5 with 3-token edges forces real padding
        let mut cfg = toy_config();
        cfg.max_seq_len = 5;
        cfg.dropout = 0.0;
        let mut params = ModelParams::<f32>::init(cfg.clone(), 9).unwrap();
        let d = cfg.hidden_size;
        let pad = cfg.pad_id() as usize;
        let before: Vec<f32> =
            params.element_embeddings.data()[pad * d..(pad + 1) * d].to_vec();
        let instances = toy_instances(&cfg);
        let tc = quick_train_cfg();
        let mut adam = AdamState::new(&params);
        let mut state = TrainState { step: 0, total_steps: 16 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        train_epoch(&mut params, &instances, &tc, &mut adam, &mut state, &mut rng).unwrap();
        let after = &params.element_embeddings.data()[pad * d..(pad + 1) * d];
        assert_eq!(before.as_slice(), after, "pad row moved during training");
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let cfg = toy_config();
        let mut params = ModelParams::<f32>::init(cfg.clone(), 13).unwrap();
        params.element_embeddings.data_mut()[0] = f32::NAN;
        let instances = toy_instances(&cfg);
        let tc = quick_train_cfg();
        let mut adam = AdamState::new(&params);
        let mut state = TrainState { step: 0, total_steps: 16 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err =
            train_epoch(&mut params, &instances, &tc, &mut adam, &mut state, &mut rng)
                .unwrap_err();
        match err {
            CokeError::NonFiniteLoss { step, .. } => assert!(step > 0),
            other => panic!("expected a numerical abort, got {other}"),
        }
    }

    #[test]
    fn fit_with_zero_epochs_returns_initial_params() {
        let cfg = toy_config();
        let params = ModelParams::<f32>::init(cfg, 21).unwrap();
        let before = params.param_count();
        let tc = TrainConfig {
            max_epochs: 0,
            ..quick_train_cfg()
        };
        let outcome = fit(params, &toy_edges(), &tc, |_| Ok(0.5)).unwrap();
        assert_eq!(outcome.best_epoch, 0);
        assert_eq!(outcome.best_metric, 0.5);
        assert_eq!(outcome.best.param_count(), before);
        assert!(outcome.log.is_empty());
    }

    #[test]
    fn fit_selects_best_epoch_with_ties_to_earlier() {
        let cfg = toy_config();
        let params = ModelParams::<f32>::init(cfg, 23).unwrap();
        let tc = quick_train_cfg(); // 4 epochs
        // strictly improving → last epoch wins
        let mut counter = 0;
        let outcome = fit(params.clone(), &toy_edges(), &tc, |_| {
            counter += 1;
            Ok(counter as f64)
        })
        .unwrap();
        assert_eq!(outcome.best_epoch, 4);
        // plateau after epoch 2 → epoch 2 wins (earlier tie)
        let metrics = [0.1, 0.9, 0.9, 0.9];
        let mut i = 0;
        let outcome = fit(params, &toy_edges(), &tc, |_| {
            let m = metrics[i];
            i += 1;
            Ok(m)
        })
        .unwrap();
        assert_eq!(outcome.best_epoch, 2);
        assert_eq!(outcome.best_metric, 0.9);
    }

    #[test]
    fn best_checkpoint_reproduces_its_logged_metric() {
        let cfg = toy_config();
        let params = ModelParams::<f32>::init(cfg.clone(), 31).unwrap();
        let tc = TrainConfig {
            max_epochs: 3,
            ..quick_train_cfg()
        };
        // deterministic metric derived from the parameters themselves
        let metric_of = |p: &ModelParams<f32>| -> f64 {
            let mut acc = 0.0f64;
            p.for_each(|t| acc += t.data().iter().map(|v| (*v as f64).sin()).sum::<f64>());
            // fold to make an arbitrary but reproducible scalar
            (acc * 1000.0).sin()
        };
        let outcome = fit(params, &toy_edges(), &tc, |p| Ok(metric_of(p))).unwrap();
        let logged = outcome
            .log
            .iter()
            .find(|l| l.epoch == outcome.best_epoch)
            .unwrap()
            .dev_metric;
        assert_eq!(outcome.best_metric, logged);
        assert_eq!(metric_of(&outcome.best), logged, "re-evaluation differs");
        assert!(outcome.log.iter().all(|l| l.dev_metric <= outcome.best_metric));
    }

    #[test]
    fn full_run_reproducible_with_same_seed() {
        let cfg = toy_config();
        let tc = quick_train_cfg();
        let run = || {
            let params = ModelParams::<f32>::init(cfg.clone(), 17).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1234);
            let outcome = fit(params, &toy_edges(), &tc, |p| {
                // cheap deterministic dev proxy: loss on a fixed batch
                let edge = GraphPath::new(0, &[8], 1).unwrap();
                let [a, b] = make_instances(&edge, &p.config);
                let (tape, loss, _) = p.forward_loss(&[&a, &b], false, &mut rng)?;
                Ok(-tape.value(loss).item() as f64)
            })
            .unwrap();
            (outcome.best_metric.to_bits(), outcome.best_epoch)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn loss_trends_downward_over_twenty_epochs() {
        let cfg = ModelConfig {
            dropout: 0.0,
            ..toy_config()
        };
        let params = ModelParams::<f32>::init(cfg, 41).unwrap();
        let tc = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 20,
            warmup_fraction: 0.1,
            seed: 2,
            ..TrainConfig::default()
        };
        let outcome = fit(params, &toy_edges(), &tc, |_| Ok(0.0)).unwrap();
        let losses: Vec<f64> = outcome.log.iter().map(|l| l.mean_loss).collect();
        let avg = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
        let mut previous = f64::INFINITY;
        for window in losses.chunks(5) {
            let m = avg(window);
            assert!(
                m <= previous + 1e-9,
                "5-epoch moving average rose: {losses:?}"
            );
            previous = m;
        }
    }

    #[test]
    fn epoch_log_serializes_as_tsv() {
        let log = EpochLog {
            epoch: 3,
            mean_loss: 1.25,
            lr: 5e-4,
            dev_metric: 0.5,
            wall_secs: 0.125,
        };
        let line = log.tsv_line();
        assert_eq!(line.split('\t').count(), EpochLog::TSV_HEADER.split('\t').count());
        assert!(line.starts_with("3\t1.250000\t"));
    }
}
