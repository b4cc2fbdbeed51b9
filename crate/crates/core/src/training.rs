//! Entropy-regularized policy-gradient training with a central self-critic
//! baseline.
//!
//! Each step draws a fresh batch of random instances, runs one sampled and
//! one greedy rollout per instance, and updates parameters with Adam on the
//! surrogate loss
//!
//! ```text
//! (1/B) sum_i [ -A_i * sum_t log p(a_t) - alpha * H_i ]
//! ```
//!
//! where `A_i = R_i - b_i` is the advantage against the baseline
//!
//! ```text
//! b_i = greedy_return_i + mean_j(sampled_return_j - greedy_return_j)
//! ```
//!
//! treated as a constant (no gradient flows through it), and `H_i` is the
//! per-sequence mean of the step entropies (the summed form is available via
//! [`EntropyTerm::Sum`]). Batch work runs in parallel, but gradients are
//! reduced in instance-index order, so results are independent of thread
//! scheduling.

use crate::instance::{random_instance, Instance};
use crate::policy::{
    rollout, rollout_recorded, sequence_entropy, ActionSource, Mode, ModelConfig, PolicyError,
    PolicyParams, RolloutTrace,
};
use crate::rngstream::{derive_seed, stream};
use crate::tape::Engine;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("baseline requires equal batch sizes, got {sampled} sampled vs {greedy} greedy")]
    BatchMismatch { sampled: usize, greedy: usize },
    #[error("{aborted} of {total} steps aborted on non-finite values")]
    TooManyAborts { aborted: usize, total: usize },
}

/// Which advantage multiplies each step's log-probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvantageForm {
    /// The whole-sequence advantage R_i - b_i on every step (default: the
    /// baseline is defined against total returns).
    WholeSequence,
    /// The literal per-step difference r_t - b_i.
    PerStepLiteral,
}

/// Whether the entropy bonus uses the per-sequence mean (length-independent
/// alpha scale) or the raw sum of step entropies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyTerm {
    Mean,
    Sum,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: Mode,
    pub n_train: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub model: ModelConfig,
    pub advantage: AdvantageForm,
    pub entropy_term: EntropyTerm,
    pub val_instances: usize,
    pub val_pool: usize,
}

impl TrainConfig {
    /// Published full-scale defaults: 40-city instances, 100 epochs of 1000
    /// steps, batch 256 (tree) or 128 (matching), constant learning rate
    /// 5e-4.
    pub fn full_scale(mode: Mode, alpha: f64, seed: u64) -> Self {
        Self {
            mode,
            n_train: 40,
            epochs: 100,
            steps_per_epoch: 1000,
            batch_size: match mode {
                Mode::Tree => 256,
                Mode::Matching => 128,
            },
            learning_rate: 5e-4,
            alpha,
            seed,
            checkpoint_every: 10,
            model: ModelConfig::default(),
            advantage: AdvantageForm::WholeSequence,
            entropy_term: EntropyTerm::Mean,
            val_instances: 32,
            val_pool: 64,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n_train < 3 {
            return Err(TrainError::Config(format!(
                "n_train must be >= 3, got {}",
                self.n_train
            )));
        }
        if self.mode == Mode::Matching && self.n_train % 2 != 0 {
            return Err(TrainError::Config(format!(
                "matching mode trains on full instances, so n_train must be even, got {}",
                self.n_train
            )));
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(TrainError::Config("counts must be positive".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(TrainError::Config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.model.gamma) {
            return Err(TrainError::Config(format!(
                "gamma must lie in [0, 1], got {}",
                self.model.gamma
            )));
        }
        Ok(())
    }

    fn subset(&self) -> Option<Vec<usize>> {
        match self.mode {
            Mode::Tree => None,
            // the matching policy trains on full even-sized instances and
            // generalizes to odd-degree subsets at inference
            Mode::Matching => Some((0..self.n_train).collect()),
        }
    }
}

/// Adam with the standard moment defaults (0.9, 0.999, eps 1e-8) and a
/// constant learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, dim: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Per-instance baselines b_i = greedy_i + mean(sampled - greedy) over the
/// batch. Both slices must pair sampled and greedy returns by instance.
pub fn central_self_critic_baseline(
    sampled_returns: &[f64],
    greedy_returns: &[f64],
) -> Result<Vec<f64>, TrainError> {
    if sampled_returns.len() != greedy_returns.len() || sampled_returns.is_empty() {
        return Err(TrainError::BatchMismatch {
            sampled: sampled_returns.len(),
            greedy: greedy_returns.len(),
        });
    }
    let b = sampled_returns.len() as f64;
    let mean_gap: f64 = sampled_returns
        .iter()
        .zip(greedy_returns)
        .map(|(s, g)| s - g)
        .sum::<f64>()
        / b;
    Ok(greedy_returns.iter().map(|g| g + mean_gap).collect())
}

/// Statistics from one training step.
#[derive(Debug, Clone)]
pub struct StepStats {
    pub mean_sampled_reward: f64,
    pub mean_greedy_reward: f64,
    pub mean_entropy: f64,
    pub surrogate_loss: f64,
    /// False when the step was aborted on non-finite values; parameters are
    /// untouched in that case.
    pub applied: bool,
    pub abort_reason: Option<String>,
}

fn batch_instances(cfg: &TrainConfig, step: u64) -> Vec<Instance> {
    let step_seed = derive_seed(cfg.seed, "train-instances", step);
    (0..cfg.batch_size)
        .map(|i| {
            let mut rng = stream(step_seed, "instance", i as u64);
            random_instance(cfg.n_train, &mut rng).expect("n_train validated")
        })
        .collect()
}

/// Gradient and value of the surrogate loss
/// `-sum_t coeff_t * log p(a_t) - entropy_weight * sum_t H_t`
/// for a fixed action sequence, via a forced replay on a recording engine.
/// The per-step coefficients are constants (no gradient flows through them).
pub fn surrogate_gradient(
    params: &PolicyParams,
    mode: Mode,
    inst: &Instance,
    subset: Option<&[usize]>,
    choices: &[crate::instance::EdgeId],
    step_coeffs: &[f64],
    entropy_weight: f64,
) -> Result<(Vec<f64>, f64), PolicyError> {
    let (trace, mut rec) =
        rollout_recorded(params, inst, mode, subset, ActionSource::Forced(choices))?;
    assert_eq!(trace.len(), step_coeffs.len());
    let mut terms = Vec::with_capacity(2 * trace.len());
    for (t, stats) in rec.stats_ids.clone().into_iter().enumerate() {
        let lp = rec.tape.entry(stats, 0, 0);
        terms.push(rec.tape.scale(lp, -step_coeffs[t]));
        if entropy_weight != 0.0 {
            let ent = rec.tape.entry(stats, 1, 0);
            terms.push(rec.tape.scale(ent, -entropy_weight));
        }
    }
    let loss = rec.tape.add_n(&terms);
    let loss_value = rec.tape.val(loss).get(0, 0);
    let grads = rec.tape.backward(loss);
    Ok((rec.param_gradient(&grads, params), loss_value))
}

/// Gradient of the surrogate loss for one instance of a training batch.
fn instance_gradient(
    params: &PolicyParams,
    cfg: &TrainConfig,
    inst: &Instance,
    subset: Option<&[usize]>,
    sampled: &RolloutTrace,
    baseline: f64,
) -> Result<(Vec<f64>, f64), PolicyError> {
    let kappa = sampled.len() as f64;
    let advantage = sampled.total_reward - baseline;
    let entropy_weight = match cfg.entropy_term {
        EntropyTerm::Mean => cfg.alpha / kappa,
        EntropyTerm::Sum => cfg.alpha,
    };
    let step_coeffs: Vec<f64> = match cfg.advantage {
        AdvantageForm::WholeSequence => vec![advantage; sampled.len()],
        AdvantageForm::PerStepLiteral => {
            sampled.step_reward.iter().map(|r| r - baseline).collect()
        }
    };
    surrogate_gradient(
        params,
        cfg.mode,
        inst,
        subset,
        &sampled.chosen,
        &step_coeffs,
        entropy_weight,
    )
}

/// Instances processed together during gradient computation; bounds peak
/// tape memory while leaving the result independent of the chunking.
const GRAD_CHUNK: usize = 16;

/// One training step: fresh batch, sampled + greedy rollouts, baseline,
/// surrogate gradient, Adam update. A non-finite loss or gradient aborts the
/// step and leaves the parameters unchanged.
pub fn train_step(
    params: &mut PolicyParams,
    optimizer: &mut Adam,
    cfg: &TrainConfig,
    step: u64,
) -> Result<StepStats, TrainError> {
    let instances = batch_instances(cfg, step);
    let subset = cfg.subset();
    let sample_seed = derive_seed(cfg.seed, "train-sample", step);

    // pass 1: sampled and greedy rollouts (no gradients) for the baseline
    let rollouts: Result<Vec<(RolloutTrace, RolloutTrace)>, PolicyError> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut rng = stream(sample_seed, "rollout", i as u64);
            let sampled = rollout(
                params,
                inst,
                cfg.mode,
                subset.as_deref(),
                ActionSource::Sample(&mut rng),
            )?;
            let greedy = rollout(params, inst, cfg.mode, subset.as_deref(), ActionSource::Greedy)?;
            Ok((sampled, greedy))
        })
        .collect();
    let rollouts = rollouts?;

    let sampled_returns: Vec<f64> = rollouts.iter().map(|(s, _)| s.total_reward).collect();
    let greedy_returns: Vec<f64> = rollouts.iter().map(|(_, g)| g.total_reward).collect();
    let baselines = central_self_critic_baseline(&sampled_returns, &greedy_returns)?;

    let b = cfg.batch_size as f64;
    let mean_sampled = sampled_returns.iter().sum::<f64>() / b;
    let mean_greedy = greedy_returns.iter().sum::<f64>() / b;
    let mean_entropy = rollouts
        .iter()
        .map(|(s, _)| sequence_entropy(s).mean)
        .sum::<f64>()
        / b;

    // pass 2: forced replays on recording engines, chunked; gradients are
    // averaged in instance order
    let dim = params.num_params();
    let mut grad_sum = vec![0.0; dim];
    let mut loss_sum = 0.0;
    for chunk_start in (0..instances.len()).step_by(GRAD_CHUNK) {
        let chunk_end = (chunk_start + GRAD_CHUNK).min(instances.len());
        let chunk: Result<Vec<(Vec<f64>, f64)>, PolicyError> = (chunk_start..chunk_end)
            .into_par_iter()
            .map(|i| {
                instance_gradient(
                    params,
                    cfg,
                    &instances[i],
                    subset.as_deref(),
                    &rollouts[i].0,
                    baselines[i],
                )
            })
            .collect();
        for (grad, loss) in chunk? {
            for (acc, g) in grad_sum.iter_mut().zip(&grad) {
                *acc += g;
            }
            loss_sum += loss;
        }
    }
    for g in &mut grad_sum {
        *g /= b;
    }
    let surrogate_loss = loss_sum / b;

    let finite = surrogate_loss.is_finite() && grad_sum.iter().all(|g| g.is_finite());
    if !finite {
        return Ok(StepStats {
            mean_sampled_reward: mean_sampled,
            mean_greedy_reward: mean_greedy,
            mean_entropy,
            surrogate_loss,
            applied: false,
            abort_reason: Some("non-finite loss or gradient".into()),
        });
    }

    let mut flat = params.flatten();
    optimizer.apply(&mut flat, &grad_sum);
    if flat.iter().all(|x| x.is_finite()) {
        params.set_from_flat(&flat);
    } else {
        return Ok(StepStats {
            mean_sampled_reward: mean_sampled,
            mean_greedy_reward: mean_greedy,
            mean_entropy,
            surrogate_loss,
            applied: false,
            abort_reason: Some("non-finite parameters after update".into()),
        });
    }

    Ok(StepStats {
        mean_sampled_reward: mean_sampled,
        mean_greedy_reward: mean_greedy,
        mean_entropy,
        surrogate_loss,
        applied: true,
        abort_reason: None,
    })
}

/// One end-of-epoch record. `val_cost` is the mean greedy structure cost on
/// the held-out set (tree mode additionally runs the tree through the
/// double-tree construction, so it reports tour cost); `val_jaccard` is the
/// mean pairwise edge-set Jaccard of a sampled pool on one held-out
/// instance.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_sampled_reward: f64,
    pub mean_greedy_reward: f64,
    pub mean_entropy: f64,
    pub val_cost: f64,
    pub val_jaccard: f64,
    pub seconds: f64,
}

/// Full training history, one record per completed epoch.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,mean_sampled_reward,mean_greedy_reward,mean_entropy,val_cost,val_jaccard,seconds\n",
        );
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                r.mean_sampled_reward,
                r.mean_greedy_reward,
                r.mean_entropy,
                r.val_cost,
                r.val_jaccard,
                r.seconds
            ));
        }
        out
    }
}

pub struct TrainOutcome {
    pub params: PolicyParams,
    pub report: TrainReport,
}

fn validation_instances(cfg: &TrainConfig) -> Vec<Instance> {
    (0..cfg.val_instances)
        .map(|j| {
            let mut rng = stream(cfg.seed, "val-instance", j as u64);
            random_instance(cfg.n_train, &mut rng).expect("n_train validated")
        })
        .collect()
}

fn validate(params: &PolicyParams, cfg: &TrainConfig, held_out: &[Instance]) -> Result<(f64, f64), TrainError> {
    let subset = cfg.subset();
    // greedy cost over the held-out set
    let costs: Result<Vec<f64>, PolicyError> = held_out
        .par_iter()
        .enumerate()
        .map(|(j, inst)| {
            let greedy = rollout(params, inst, cfg.mode, subset.as_deref(), ActionSource::Greedy)?;
            let cost = match cfg.mode {
                Mode::Tree => {
                    let tree = greedy.to_tree(inst.n())?;
                    let mut rng = stream(cfg.seed, "val-traversal", j as u64);
                    crate::construction::randomized_double_tree(&tree, inst, &mut rng)
                        .map(|t| t.cost())
                        .unwrap_or(f64::NAN)
                }
                Mode::Matching => -greedy.total_reward,
            };
            Ok(cost)
        })
        .collect();
    let costs = costs?;
    let val_cost = costs.iter().sum::<f64>() / costs.len() as f64;

    // pool diversity on the first held-out instance
    let inst = &held_out[0];
    let edge_sets: Result<Vec<Vec<crate::instance::EdgeId>>, PolicyError> = (0..cfg.val_pool)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream(cfg.seed, "val-pool", s as u64);
            let trace = rollout(
                params,
                inst,
                cfg.mode,
                subset.as_deref(),
                ActionSource::Sample(&mut rng),
            )?;
            let set = match cfg.mode {
                Mode::Tree => {
                    let tree = trace.to_tree(inst.n())?;
                    let mut trng = stream(cfg.seed, "val-pool-traversal", s as u64);
                    crate::construction::randomized_double_tree(&tree, inst, &mut trng)
                        .map(|t| t.edge_set().to_vec())
                        .unwrap_or_default()
                }
                Mode::Matching => {
                    let mut edges = trace.chosen.clone();
                    edges.sort();
                    edges
                }
            };
            Ok(set)
        })
        .collect();
    let edge_sets = edge_sets?;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..edge_sets.len() {
        for j in (i + 1)..edge_sets.len() {
            sum += crate::dispersion::edge_set_jaccard(&edge_sets[i], &edge_sets[j]);
            pairs += 1;
        }
    }
    let val_jaccard = if pairs == 0 { 0.0 } else { sum / pairs as f64 };
    Ok((val_cost, val_jaccard))
}

/// Runs the full training loop. `on_epoch` fires after each epoch's
/// validation with the record and the current parameters (checkpoint
/// persistence hooks in here). A run where more than 1% of steps abort
/// fails.
pub fn train(
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &PolicyParams),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut params = PolicyParams::init(cfg.model, derive_seed(cfg.seed, "init", 0));
    let mut optimizer = Adam::new(cfg.learning_rate, params.num_params());
    let held_out = validation_instances(cfg);
    let mut report = TrainReport::default();
    let mut aborted = 0usize;
    let total_steps = cfg.epochs * cfg.steps_per_epoch;

    for epoch in 1..=cfg.epochs {
        let started = std::time::Instant::now();
        let mut sum_sampled = 0.0;
        let mut sum_greedy = 0.0;
        let mut sum_entropy = 0.0;
        for s in 0..cfg.steps_per_epoch {
            let step = ((epoch - 1) * cfg.steps_per_epoch + s) as u64;
            let stats = train_step(&mut params, &mut optimizer, cfg, step)?;
            if !stats.applied {
                aborted += 1;
                if aborted * 100 > total_steps {
                    return Err(TrainError::TooManyAborts {
                        aborted,
                        total: total_steps,
                    });
                }
            }
            sum_sampled += stats.mean_sampled_reward;
            sum_greedy += stats.mean_greedy_reward;
            sum_entropy += stats.mean_entropy;
        }
        let (val_cost, val_jaccard) = validate(&params, cfg, &held_out)?;
        let record = EpochRecord {
            epoch,
            mean_sampled_reward: sum_sampled / cfg.steps_per_epoch as f64,
            mean_greedy_reward: sum_greedy / cfg.steps_per_epoch as f64,
            mean_entropy: sum_entropy / cfg.steps_per_epoch as f64,
            val_cost,
            val_jaccard,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record, &params);
        report.epochs.push(record);
    }
    Ok(TrainOutcome { params, report })
}
