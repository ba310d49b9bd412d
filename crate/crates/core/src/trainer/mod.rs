//! Parameter initialization, the training loop and checkpoints.

pub mod checkpoint;
pub mod grad;
pub mod optim;

use std::f64::consts::PI;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Snapshotter, TieMode};
use crate::kgdata::{KgData, Triple};
use crate::losses::{sample_queries, LossKind, LossSpec};
use crate::scoring::{ActivationKind, ActivationSpec, ModelSpec, ParameterSet, Scorer};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use grad::{batch_loss, compute_gradients, compute_gradients_sharded, Batch, Gradients};
pub use optim::{Optimizer, OptimizerKind};

/// Variance of the Gaussian used for entity and relation vectors.
pub const INIT_VARIANCE: f64 = 1e-3;

pub const LEARNING_RATE_GRID: [f64; 3] = [0.0005, 0.001, 0.005];
pub const BATCH_SIZE_GRID: [usize; 3] = [256, 512, 1024];
pub const ALPHA_GRID: [f64; 3] = [0.05, 0.1, 0.2];
pub const LAMBDA_GRID: [f64; 4] = [0.1, 0.3, 0.5, 1.0];
pub const GAMMA_GRID: [f64; 3] = [5.0, 10.0, 20.0];

/// Component switches for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// When false the activation is replaced by the identity.
    pub use_activation: bool,
    /// Squared (true) or linear (false) alignment term of HaLE.
    pub use_pos_square: bool,
    /// When false `c_r` stays at 1 and receives no gradient.
    pub use_rel_ratio: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_activation: true,
            use_pos_square: true,
            use_rel_ratio: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub activation: ActivationSpec,
    /// `loss.pos_square` is overridden by `ablation.use_pos_square`.
    pub loss: LossSpec,
    pub ablation: Ablation,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Training wall-clock budget; evaluation time is not counted.
    pub max_seconds: Option<f64>,
    pub max_epochs: Option<usize>,
    pub eval_interval_seconds: f64,
    /// Snapshot every this many epochs instead of on the clock.
    pub eval_interval_epochs: Option<usize>,
    /// Validation queries ranked per snapshot; `None` ranks all of them.
    pub eval_subsample: Option<usize>,
    pub tie_mode: TieMode,
    pub seed: u64,
    /// Reproducible mode: fixed shard count, epoch-based snapshots and no
    /// wall-clock values in the snapshot log.
    pub deterministic: bool,
    /// Gradient shards per batch in reproducible mode.
    pub shards: usize,
}

impl TrainConfig {
    /// Defaults for a loss: HaLE runs with Hanon and per-relation scales,
    /// the baselines with plain squared distances.
    pub fn preset(loss: LossKind, model: ModelSpec) -> Self {
        let hale = loss == LossKind::HaLE;
        TrainConfig {
            model,
            activation: if hale {
                ActivationSpec::new(ActivationKind::Hanon)
            } else {
                ActivationSpec::identity()
            },
            loss: LossSpec::new(loss),
            ablation: Ablation {
                use_rel_ratio: hale,
                ..Ablation::default()
            },
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.005,
            batch_size: 512,
            max_seconds: None,
            max_epochs: Some(100),
            eval_interval_seconds: 30.0,
            eval_interval_epochs: None,
            eval_subsample: None,
            tie_mode: TieMode::Mean,
            seed: 0,
            deterministic: false,
            shards: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        self.model.validate()?;
        self.activation.validate()?;
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.max_seconds.is_none() && self.max_epochs.is_none() {
            return bad("one of max_seconds and max_epochs must be set");
        }
        if let Some(s) = self.max_seconds {
            if s.is_nan() || s < 0.0 {
                return bad("max_seconds must be >= 0");
            }
        }
        if self.eval_interval_seconds.is_nan() || self.eval_interval_seconds <= 0.0 {
            return bad("eval_interval_seconds must be > 0");
        }
        if self.eval_interval_epochs == Some(0) {
            return bad("eval_interval_epochs must be >= 1");
        }
        if self.shards < 1 {
            return bad("shards must be >= 1");
        }
        if self.deterministic && self.max_seconds.is_some() {
            return bad("deterministic mode needs an epoch budget, not max_seconds");
        }
        Ok(())
    }

    /// Loss settings with the ablation switches applied.
    pub fn effective_loss(&self) -> LossSpec {
        LossSpec {
            pos_square: self.ablation.use_pos_square,
            ..self.loss
        }
    }

    /// Scorer with the ablation switches applied.
    pub fn scorer(&self) -> Scorer {
        let activation = if self.ablation.use_activation {
            self.activation
        } else {
            ActivationSpec::identity()
        };
        Scorer::new(self.model, activation, self.ablation.use_rel_ratio)
    }

    fn snapshot_every_epochs(&self) -> Option<usize> {
        match (self.eval_interval_epochs, self.deterministic) {
            (Some(k), _) => Some(k),
            (None, true) => Some(1),
            (None, false) => None,
        }
    }
}

/// Random initial parameters; identical for identical arguments.
pub fn init_parameters(
    model: &ModelSpec,
    n_entities: usize,
    n_relations: usize,
    seed: u64,
) -> ParameterSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_VARIANCE.sqrt()).expect("valid deviation");
    let mut p = ParameterSet::zeros(n_entities, n_relations, model.dimension);
    for table in [
        &mut p.entity,
        &mut p.relation_translation,
        &mut p.relation_second,
    ] {
        for v in table.as_mut_slice() {
            *v = normal.sample(&mut rng);
        }
    }
    for v in p.relation_angles.as_mut_slice() {
        // negating a draw from [-pi, pi) gives (-pi, pi]
        *v = -rng.random_range(-PI..PI);
    }
    p
}

/// One validation snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    /// Training seconds so far; absent in reproducible mode.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub elapsed_s: Option<f64>,
    pub epoch: usize,
    pub step: u64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_queries: usize,
    pub subsampled: bool,
}

/// Wall-clock side of a snapshot, kept apart from the reproducible log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub step: u64,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the snapshot with the best validation MRR, or the
    /// initial parameters if no snapshot was taken.
    pub best: Checkpoint,
    pub log: Vec<SnapshotRecord>,
    pub timings: Vec<TimingRecord>,
    /// Mean batch loss per completed epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    pub epochs: usize,
    /// Training time, excluding snapshots.
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

pub fn train(config: &TrainConfig, data: &KgData) -> Result<TrainOutcome> {
    train_with(config, data, &mut |_| {})
}

/// Trains and calls `on_snapshot` as each snapshot is recorded.
pub fn train_with(
    config: &TrainConfig,
    data: &KgData,
    on_snapshot: &mut dyn FnMut(&SnapshotRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let n_e = data.n_entities();
    let n_rel = data.n_relations();
    let n_t = data.train.len();
    if n_t == 0 {
        return Err(Error::EmptySplit);
    }
    let mut params = init_parameters(&config.model, n_e, n_rel, config.seed);
    let scorer = config.scorer();
    let loss = config.effective_loss();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let snapshotter = Snapshotter::new(
        data.valid.len(),
        config.eval_subsample,
        config.seed.wrapping_add(2),
    );
    let n_shards = if config.deterministic {
        config.shards
    } else {
        rayon::current_num_threads()
    };
    let mut shards = vec![Gradients::zeros_like(&params); n_shards];
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &params);

    let mut best = Checkpoint {
        parameters: params.clone(),
        config: config.clone(),
        epoch: 0,
        elapsed_seconds: 0.0,
        best_validation_mrr: None,
    };
    let mut log = Vec::new();
    let mut timings = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut train_seconds = 0.0;
    let mut eval_seconds = 0.0;
    let mut steps: u64 = 0;
    let mut steps_at_snapshot: u64 = 0;
    let mut next_eval = config.eval_interval_seconds;
    let by_epoch = config.snapshot_every_epochs();
    let n_batches = n_t.div_ceil(config.batch_size);
    let mut order: Vec<usize> = (0..n_t).collect();
    let mut epoch = 0;
    let mut out_of_time = false;

    let mut snapshot = |params: &ParameterSet,
                        epoch: usize,
                        steps: u64,
                        train_seconds: f64,
                        best: &mut Checkpoint|
     -> Result<f64> {
        let start = Instant::now();
        let report =
            snapshotter.evaluate(&scorer, params, &data.valid, &data.filter, config.tie_mode)?;
        let rec = SnapshotRecord {
            elapsed_s: (!config.deterministic).then_some(train_seconds),
            epoch,
            step: steps,
            mrr: report.mrr,
            hits1: report.hits(1),
            hits3: report.hits(3),
            hits10: report.hits(10),
            n_queries: report.n_queries,
            subsampled: report.subsampled,
        };
        if best.best_validation_mrr.is_none_or(|b| report.mrr > b) {
            *best = Checkpoint {
                parameters: params.clone(),
                config: config.clone(),
                epoch,
                elapsed_seconds: train_seconds,
                best_validation_mrr: Some(report.mrr),
            };
        }
        on_snapshot(&rec);
        log.push(rec);
        let spent = start.elapsed().as_secs_f64();
        timings.push(TimingRecord {
            step: steps,
            train_seconds,
            eval_seconds: spent,
        });
        Ok(spent)
    };

    while config.max_epochs.is_none_or(|m| epoch < m) && !out_of_time {
        let mut segment = Instant::now();
        order.shuffle(&mut rng);
        let sample = (loss.kind == LossKind::HaLE)
            .then(|| sample_queries(n_t, loss.sample_alpha, &mut rng, epoch));
        let n_sample = sample.as_ref().map_or(0, |s| s.indices.len());
        let mut loss_sum = 0.0;
        let mut done = 0usize;
        for b in 0..n_batches {
            if let (Some(budget), true) = (config.max_seconds, steps > 0) {
                if train_seconds + segment.elapsed().as_secs_f64() >= budget {
                    out_of_time = true;
                    break;
                }
            }
            let step_start = Instant::now();
            let positives: Vec<Triple> = order
                [b * config.batch_size..((b + 1) * config.batch_size).min(n_t)]
                .iter()
                .map(|&i| data.train.get(i))
                .collect();
            let queries = match &sample {
                Some(s) => s.indices[b * n_sample / n_batches..(b + 1) * n_sample / n_batches]
                    .iter()
                    .map(|&i| data.train.get(i))
                    .collect(),
                None => Vec::new(),
            };
            let (negatives, neg_count) = if loss.kind.uses_negatives() {
                let k = loss.neg_count;
                (
                    (0..positives.len() * k)
                        .map(|_| rng.random_range(0..n_e as u32))
                        .collect(),
                    k,
                )
            } else {
                (Vec::new(), 0)
            };
            let batch = Batch {
                index: b,
                positives,
                queries,
                negatives,
                neg_count,
            };
            let batch_loss =
                compute_gradients_sharded(&scorer, &loss, &params, &batch, &mut shards)?;
            optimizer.apply(&mut params, &shards[0]);
            loss_sum += batch_loss;
            done += 1;
            steps += 1;
            if steps == 1 {
                if let Some(budget) = config.max_seconds {
                    let step = step_start.elapsed().as_secs_f64();
                    if step > budget {
                        return Err(Error::BudgetTooSmall { budget, step });
                    }
                }
            }
            if by_epoch.is_none() {
                let now = train_seconds + segment.elapsed().as_secs_f64();
                if now >= next_eval {
                    train_seconds = now;
                    eval_seconds += snapshot(&params, epoch, steps, train_seconds, &mut best)?;
                    steps_at_snapshot = steps;
                    while next_eval <= train_seconds {
                        next_eval += config.eval_interval_seconds;
                    }
                    segment = Instant::now();
                }
            }
        }
        train_seconds += segment.elapsed().as_secs_f64();
        if done == n_batches {
            epoch += 1;
            epoch_losses.push(loss_sum / n_batches as f64);
            if let Some(k) = by_epoch {
                if epoch % k == 0 {
                    eval_seconds += snapshot(&params, epoch, steps, train_seconds, &mut best)?;
                    steps_at_snapshot = steps;
                }
            }
        }
    }
    if steps > steps_at_snapshot {
        eval_seconds += snapshot(&params, epoch, steps, train_seconds, &mut best)?;
    }
    Ok(TrainOutcome {
        best,
        log,
        timings,
        epoch_losses,
        steps,
        epochs: epoch,
        train_seconds,
        eval_seconds,
    })
}
