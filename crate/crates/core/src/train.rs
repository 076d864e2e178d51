//! Offline meta-training of the completion model on censored episodes.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngCore;

use crate::env::{censor, CensoredObs, CostParams, DemandModel, HistoryStep, TaskPrior};
use crate::error::{invalid, Error, Result};
use crate::flow::{CompletionModel, FlowShape, ModelScratch};
use crate::math;
use crate::rng::{stream, unit};
use crate::survival::{HistorySummary, CONTEXT_DIM};

/// One logged interaction sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<HistoryStep>,
    /// Latent demands, kept only for synthetic diagnostics.
    pub demands: Option<Vec<f64>>,
    /// Generating task, when known.
    pub true_model: Option<DemandModel>,
}

impl Episode {
    pub fn new(steps: Vec<HistoryStep>) -> Result<Self> {
        for s in &steps {
            s.validate()?;
        }
        Ok(Episode {
            steps,
            demands: None,
            true_model: None,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Exploration policy used to log synthetic corpora.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum BehaviorPolicy {
    /// Uniform on `[0, B]`, replaced by exactly `B` with probability `atom_prob`.
    UniformWithAtom { atom_prob: f64 },
    /// As above, but each episode draws its own atom probability uniformly
    /// from `[atom_low, atom_high]` and its uniform range from `[0, B]`
    /// scaled by a per-episode factor in `[range_low, 1]`.
    Mixed {
        atom_low: f64,
        atom_high: f64,
        range_low: f64,
    },
    /// Always the same order.
    Constant { order: f64 },
    /// The generating task's `level`-quantile (a fixed base-stock rule).
    TaskQuantile { level: f64 },
}

impl Default for BehaviorPolicy {
    fn default() -> Self {
        BehaviorPolicy::UniformWithAtom { atom_prob: 0.1 }
    }
}

impl BehaviorPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            BehaviorPolicy::UniformWithAtom { atom_prob } => (0.0..=1.0).contains(&atom_prob),
            BehaviorPolicy::Mixed {
                atom_low,
                atom_high,
                range_low,
            } => (0.0..=atom_high).contains(&atom_low) && atom_high <= 1.0 && (0.0..=1.0).contains(&range_low),
            BehaviorPolicy::Constant { order } => order >= 0.0 && order.is_finite(),
            BehaviorPolicy::TaskQuantile { level } => level > 0.0 && level < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid!("invalid behavior policy {self:?}"))
        }
    }

    fn episode_state<R: RngCore + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match *self {
            BehaviorPolicy::UniformWithAtom { atom_prob } => (atom_prob, 1.0),
            BehaviorPolicy::Mixed {
                atom_low,
                atom_high,
                range_low,
            } => (
                atom_low + (atom_high - atom_low) * unit(rng),
                range_low + (1.0 - range_low) * unit(rng),
            ),
            _ => (0.0, 1.0),
        }
    }

    fn order<R: RngCore + ?Sized>(&self, task: &DemandModel, bound: f64, state: (f64, f64), rng: &mut R) -> f64 {
        match *self {
            BehaviorPolicy::UniformWithAtom { .. } | BehaviorPolicy::Mixed { .. } => {
                let (atom, range) = state;
                if unit(rng) < atom {
                    bound
                } else {
                    bound * range * unit(rng)
                }
            }
            BehaviorPolicy::Constant { order } => order.min(bound),
            BehaviorPolicy::TaskQuantile { level } => task.quantile_unchecked(level).clamp(0.0, bound),
        }
    }
}

/// Simulate one episode of `horizon` steps for `task` under `behavior`.
pub fn simulate_episode<R: RngCore + ?Sized>(
    task: &DemandModel,
    behavior: &BehaviorPolicy,
    horizon: usize,
    bound: f64,
    rng: &mut R,
) -> Result<Episode> {
    let state = behavior.episode_state(rng);
    let mut steps = Vec::with_capacity(horizon);
    let mut demands = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let d = task.sample(rng, bound);
        let x = behavior.order(task, bound, state, rng);
        steps.push(HistoryStep {
            order: x,
            obs: censor(x, d)?,
        });
        demands.push(d);
    }
    Ok(Episode {
        steps,
        demands: Some(demands),
        true_model: Some(task.clone()),
    })
}

/// Draw `n_tasks` tasks from `prior` and log one episode per task.
/// Episode `i` uses its own stream derived from `(seed, i)`.
pub fn generate_corpus(
    prior: &TaskPrior,
    behavior: &BehaviorPolicy,
    n_tasks: usize,
    horizon: usize,
    costs: &CostParams,
    seed: u64,
) -> Result<Vec<Episode>> {
    prior.validate()?;
    behavior.validate()?;
    costs.validate()?;
    if n_tasks == 0 || horizon == 0 {
        return Err(invalid!("corpus needs n_tasks ≥ 1 and horizon ≥ 1"));
    }
    (0..n_tasks)
        .map(|i| {
            let mut r = stream(seed, "corpus", i as u64, 0, 0);
            let task = prior.sample(&mut r);
            simulate_episode(&task, behavior, horizon, costs.bound, &mut r)
        })
        .collect()
}

/// Flattened (prefix context, next order, next observation) triples for a corpus.
#[derive(Debug, Clone)]
pub struct PrefixTable {
    contexts: Vec<f64>,
    pub orders: Vec<f64>,
    pub obs: Vec<CensoredObs>,
    /// Episode index and 1-based step of each row.
    pub origin: Vec<(usize, usize)>,
}

impl PrefixTable {
    pub fn build(corpus: &[Episode], bound: f64) -> Self {
        let total: usize = corpus.iter().map(Episode::len).sum();
        let mut t = PrefixTable {
            contexts: vec![0.0; total * CONTEXT_DIM],
            orders: Vec::with_capacity(total),
            obs: Vec::with_capacity(total),
            origin: Vec::with_capacity(total),
        };
        let mut summary = HistorySummary::new();
        let mut row = 0;
        for (ei, ep) in corpus.iter().enumerate() {
            summary.clear();
            for (si, step) in ep.steps.iter().enumerate() {
                summary.write_context(bound, &mut t.contexts[row * CONTEXT_DIM..(row + 1) * CONTEXT_DIM]);
                t.orders.push(step.order);
                t.obs.push(step.obs);
                t.origin.push((ei, si + 1));
                summary.push(step);
                row += 1;
            }
        }
        t
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn context(&self, row: usize) -> &[f64] {
        &self.contexts[row * CONTEXT_DIM..(row + 1) * CONTEXT_DIM]
    }

    /// Per-coordinate mean and population standard deviation of the contexts.
    pub fn context_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len().max(1) as f64;
        let mut mean = vec![0.0; CONTEXT_DIM];
        let mut sq = vec![0.0; CONTEXT_DIM];
        for r in 0..self.len() {
            for (j, &v) in self.context(r).iter().enumerate() {
                mean[j] += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        for r in 0..self.len() {
            for (j, &v) in self.context(r).iter().enumerate() {
                let d = v - mean[j];
                sq[j] += d * d;
            }
        }
        let std = sq.into_iter().map(|s| math::sqrt(s / n)).collect();
        (mean, std)
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixSample {
    pub context: Vec<f64>,
    pub order: f64,
    pub obs: CensoredObs,
}

/// Shuffled pass over every (episode, t) pair of a corpus, chunked into
/// batches. Each pair appears exactly once per pass.
pub struct PrefixBatches {
    table: PrefixTable,
    perm: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl Iterator for PrefixBatches {
    type Item = Vec<PrefixSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.perm.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.perm.len());
        let batch = self.perm[self.pos..end]
            .iter()
            .map(|&r| PrefixSample {
                context: self.table.context(r).to_vec(),
                order: self.table.orders[r],
                obs: self.table.obs[r],
            })
            .collect();
        self.pos = end;
        Some(batch)
    }
}

/// Random-prefix batches over one shuffled pass of the corpus.
pub fn prefix_batches(corpus: &[Episode], bound: f64, batch_size: usize, seed: u64) -> Result<PrefixBatches> {
    if corpus.iter().all(Episode::is_empty) {
        return Err(invalid!("prefix batches need a nonempty corpus"));
    }
    if batch_size == 0 {
        return Err(invalid!("batch size must be positive"));
    }
    let table = PrefixTable::build(corpus, bound);
    let mut perm: Vec<usize> = (0..table.len()).collect();
    perm.shuffle(&mut stream(seed, "batches", 0, 0, 0));
    Ok(PrefixBatches {
        table,
        perm,
        pos: 0,
        batch_size,
    })
}

/// Hyperparameters of the decoupled-weight-decay Adam update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One AdamW update of `params` in place.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - math::powf(cfg.beta1, t);
    let bc2 = 1.0 - math::powf(cfg.beta2, t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p = *p * decay - cfg.lr * mhat / (math::sqrt(vhat) + cfg.eps);
    }
    Ok(())
}

/// Offline training settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub validation_fraction: f64,
    pub patience: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 2048,
            lr: 1e-3,
            weight_decay: 0.01,
            grad_clip: None,
            validation_fraction: 0.1,
            patience: 10,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(invalid!("epochs, batch_size and patience must be positive"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(invalid!("lr must be positive and weight_decay nonnegative"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(invalid!("grad_clip must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(invalid!("validation_fraction must lie in [0, 1)"));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(invalid!("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// Learning curves and the selected checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-step censored NLL over each epoch's minibatches.
    pub train_nll: Vec<f64>,
    /// Mean per-episode summed censored NLL on the held-out episodes.
    pub val_nll: Vec<f64>,
    /// 0-based epoch of the returned checkpoint.
    pub best_epoch: usize,
    pub delta_obs: Option<DeltaObs>,
    pub n_train_episodes: usize,
    pub n_val_episodes: usize,
}

impl TrainReport {
    pub fn best_val_nll(&self) -> f64 {
        self.val_nll[self.best_epoch]
    }
}

/// Split episode indices into (train, validation) deterministically.
pub fn split_corpus(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, "split", 0, 0, 0));
    let mut n_val = libm::round(fraction * n as f64) as usize;
    if fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

/// Minimize the mean censored NLL over random prefixes with AdamW and
/// return the checkpoint with the best validation NLL.
pub fn train(corpus: &[Episode], shape: FlowShape, config: &TrainConfig) -> Result<(CompletionModel, TrainReport)> {
    config.validate()?;
    shape.validate()?;
    if corpus.iter().all(Episode::is_empty) {
        return Err(invalid!("training corpus is empty"));
    }
    let bound = shape.demand_bound;
    let (train_idx, val_idx) = split_corpus(corpus.len(), config.validation_fraction, config.seed);
    let train_eps: Vec<Episode> = train_idx.iter().map(|&i| corpus[i].clone()).collect();
    let val_eps: Vec<Episode> = val_idx.iter().map(|&i| corpus[i].clone()).collect();
    let table = PrefixTable::build(&train_eps, bound);
    let val_table = PrefixTable::build(&val_eps, bound);

    let mut init_rng = stream(config.seed, "init", 0, 0, 0);
    let mut model = CompletionModel::new(shape, CONTEXT_DIM, &config.hidden, &mut init_rng)?;
    let (mean, std) = table.context_moments();
    model.net.set_normalization(&mean, &std)?;

    let n_params = model.net.params().len();
    let mut adam = AdamState::new(n_params);
    let adam_cfg = AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let mut grad = vec![0.0; n_params];
    let mut scratch = model.scratch();
    let mut perm: Vec<usize> = (0..table.len()).collect();

    let mut report = TrainReport {
        train_nll: Vec::new(),
        val_nll: Vec::new(),
        best_epoch: 0,
        delta_obs: None,
        n_train_episodes: train_eps.len(),
        n_val_episodes: val_eps.len(),
    };
    let mut best = model.clone();
    let mut best_score = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        perm.shuffle(&mut stream(config.seed, "epoch", epoch as u64, 0, 0));
        let mut total = 0.0;
        for chunk in perm.chunks(config.batch_size) {
            grad.fill(0.0);
            let mut batch_nll = 0.0;
            for &r in chunk {
                batch_nll += model.accumulate_grad(table.context(r), table.orders[r], &table.obs[r], &mut scratch, &mut grad)?;
            }
            if !batch_nll.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += batch_nll;
            let inv = 1.0 / chunk.len() as f64;
            for g in &mut grad {
                *g *= inv;
            }
            if let Some(clip) = config.grad_clip {
                let norm = math::sqrt(grad.iter().map(|g| g * g).sum());
                if norm > clip {
                    let s = clip / norm;
                    for g in &mut grad {
                        *g *= s;
                    }
                }
            }
            adamw_step(model.net.params_mut(), &grad, &mut adam, &adam_cfg)?;
        }
        let train_mean = total / table.len() as f64;
        report.train_nll.push(train_mean);
        let score = if val_table.is_empty() {
            train_mean
        } else {
            table_episode_nll(&model, &val_table, val_eps.len(), &mut scratch)
        };
        if !score.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        report.val_nll.push(score);
        if score < best_score {
            best_score = score;
            best = model.clone();
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    if !val_eps.is_empty() && val_eps.iter().all(|e| e.true_model.is_some()) {
        report.delta_obs = Some(delta_obs_hat(&best, &val_eps)?);
    }
    Ok((best, report))
}

fn table_episode_nll(model: &CompletionModel, table: &PrefixTable, n_episodes: usize, s: &mut ModelScratch) -> f64 {
    let mut total = 0.0;
    for r in 0..table.len() {
        if model.params_into(table.context(r), s).is_err() {
            return f64::NAN;
        }
        total += s.params.censored_nll(table.orders[r], &table.obs[r]);
    }
    total / n_episodes.max(1) as f64
}

/// Per-episode summed censored NLL of `model` on each episode.
pub fn episode_nlls(model: &CompletionModel, episodes: &[Episode]) -> Vec<f64> {
    let bound = model.shape.demand_bound;
    let mut s = model.scratch();
    let mut summary = HistorySummary::new();
    let mut ctx = vec![0.0; CONTEXT_DIM];
    episodes
        .iter()
        .map(|ep| {
            summary.clear();
            let mut total = 0.0;
            for step in &ep.steps {
                summary.write_context(bound, &mut ctx);
                match model.params_into(&ctx, &mut s) {
                    Ok(()) => total += s.params.censored_nll(step.order, &step.obs),
                    Err(_) => return f64::NAN,
                }
                summary.push(step);
            }
            total
        })
        .collect()
}

/// Mean over episodes of the summed per-step censored NLL.
pub fn validation_nll(model: &CompletionModel, episodes: &[Episode]) -> f64 {
    if episodes.is_empty() {
        return 0.0;
    }
    let v = episode_nlls(model, episodes);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Censored NLL of one observation under a known demand law:
/// −ln f(s) when uncensored, −ln P(D > x) when censored.
pub fn true_censored_nll(model: &DemandModel, x: f64, obs: &CensoredObs) -> f64 {
    let p = if obs.censored { model.sf(x) } else { model.density(obs.sales) };
    -math::ln(p.max(f64::MIN_POSITIVE))
}

/// Excess censored log-loss of the learned model over the generating tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaObs {
    /// Per-episode mean of (model NLL − true NLL).
    pub mean: f64,
    /// Standard error of that mean across episodes.
    pub se: f64,
}

/// Paired per-episode difference between the model's and the true task's
/// censored NLL.
pub fn delta_obs_hat(model: &CompletionModel, episodes: &[Episode]) -> Result<DeltaObs> {
    if episodes.is_empty() {
        return Err(invalid!("delta_obs needs at least one episode"));
    }
    for (i, e) in episodes.iter().enumerate() {
        if e.true_model.is_none() {
            return Err(Error::MissingTrueModel(i));
        }
    }
    let learned = episode_nlls(model, episodes);
    let diffs: Vec<f64> = episodes
        .iter()
        .zip(&learned)
        .map(|(ep, &l)| {
            let m = ep.true_model.as_ref().unwrap();
            let t: f64 = ep.steps.iter().map(|s| true_censored_nll(m, s.order, &s.obs)).sum();
            l - t
        })
        .collect();
    Ok(mean_se(&diffs))
}

pub(crate) fn mean_se(v: &[f64]) -> DeltaObs {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = if v.len() > 1 {
        math::sqrt(v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n * (n - 1.0)))
    } else {
        0.0
    };
    DeltaObs { mean, se }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{FamilyPrior, ParamPrior};

    fn weibull_prior() -> TaskPrior {
        TaskPrior::single(FamilyPrior::Weibull {
            rate: ParamPrior::Fixed(0.5),
            shape: ParamPrior::Fixed(1.5),
        })
    }

    #[test]
    fn always_b_is_uncensored() {
        let c = CostParams::new(1.0, 1.0, 8.0).unwrap();
        let eps = generate_corpus(&weibull_prior(), &BehaviorPolicy::Constant { order: 8.0 }, 5, 50, &c, 1).unwrap();
        for e in &eps {
            for (s, d) in e.steps.iter().zip(e.demands.as_ref().unwrap()) {
                assert!(!s.obs.censored);
                assert_eq!(s.obs.sales, *d);
            }
        }
        let eps = generate_corpus(&weibull_prior(), &BehaviorPolicy::Constant { order: 0.0 }, 5, 50, &c, 1).unwrap();
        assert!(eps.iter().flat_map(|e| &e.steps).all(|s| s.obs.censored && s.obs.sales == 0.0));
    }

    #[test]
    fn atom_rate_matches() {
        let c = CostParams::new(1.0, 1.0, 8.0).unwrap();
        let eps = generate_corpus(&weibull_prior(), &BehaviorPolicy::default(), 100, 1000, &c, 2).unwrap();
        let n = 100_000.0;
        let k = eps.iter().flat_map(|e| &e.steps).filter(|s| s.order == 8.0).count() as f64;
        let p = k / n;
        let se = (0.1f64 * 0.9 / n).sqrt();
        assert!((p - 0.1).abs() < 3.0 * se, "atom rate {p}");
    }

    #[test]
    fn first_prefix_is_neutral() {
        let c = CostParams::new(1.0, 1.0, 8.0).unwrap();
        let eps = generate_corpus(&weibull_prior(), &BehaviorPolicy::default(), 3, 4, &c, 3).unwrap();
        let t = PrefixTable::build(&eps, 8.0);
        for r in 0..t.len() {
            if t.origin[r].1 == 1 {
                let ctx = t.context(r);
                assert!(ctx[..19].iter().all(|&v| v == 4.0));
                assert!(ctx[19..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn batches_cover_every_pair_once() {
        let c = CostParams::new(1.0, 1.0, 8.0).unwrap();
        let eps = generate_corpus(&weibull_prior(), &BehaviorPolicy::default(), 10, 7, &c, 4).unwrap();
        let sizes: Vec<usize> = prefix_batches(&eps, 8.0, 16, 0).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![16, 16, 16, 16, 6]);
    }

    #[test]
    fn adamw_edge_cases() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        adamw_step(&mut p, &[0.0, 0.0], &mut st, &cfg).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        for _ in 0..100 {
            adamw_step(&mut p, &[0.5, -0.5], &mut st, &cfg).unwrap();
        }
        assert!(p[0] < 1.0 && p[1] > -2.0);
        assert!(adamw_step(&mut p, &[0.0], &mut st, &cfg).is_err());
    }

    #[test]
    fn adamw_quadratic_bowl() {
        let cfg = AdamConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut w = vec![1.0];
        let mut st = AdamState::new(1);
        for _ in 0..2000 {
            let g = [2.0 * w[0]];
            adamw_step(&mut w, &g, &mut st, &cfg).unwrap();
        }
        assert!(w[0].abs() < 1e-3, "w = {}", w[0]);
    }

    #[test]
    fn split_is_disjoint() {
        let (t, v) = split_corpus(20, 0.1, 7);
        assert_eq!(v.len(), 2);
        assert_eq!(t.len(), 18);
        assert!(v.iter().all(|i| !t.contains(i)));
    }
}
