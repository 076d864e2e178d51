//! Online policy: censoring-consistent trajectory completion followed by the
//! full-information oracle.
//!
//! At round `t` a completion of the whole horizon is drawn given the
//! observed history:
//!
//! * past uncensored rounds keep their revealed demand;
//! * each past censored round `s` is redrawn from the predictive law given
//!   every other entry, restricted to `(x_s, B]`, and is then treated as
//!   revealed for the rest of the completion;
//! * future rounds are drawn from the unconstrained predictive law and are
//!   appended as fully observed entries ordered at `B`.
//!
//! The order played is the left empirical `γ`-quantile of the completed
//! demands, aggregated across rollouts by the (lower) median.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::env::{CensoredObs, DiscreteLaw, History, HistoryStep};
use crate::error::{invalid, Error, Result};
use crate::flow::{CompletionModel, LazyFlow, NetScratch};
use crate::harness::Policy;
use crate::math;
use crate::rng::{derive_seed, open01, stream, DetRng};
use crate::survival::{HistorySummary, CONTEXT_DIM};

/// What to do when the predictive law has (numerically) no mass above a
/// censoring level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TailFallback {
    /// Draw uniformly on `(x, B]` and count the event.
    #[default]
    Uniform,
    /// Propagate the error.
    Fail,
}

/// Rounds ordering `B` before the first rollout-based decision.
pub const DEFAULT_WARMUP: usize = 3;

/// Online settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct IcgpsConfig {
    pub rollouts: usize,
    pub warmup: usize,
    pub horizon: usize,
    pub tail_fallback: TailFallback,
}

impl Default for IcgpsConfig {
    fn default() -> Self {
        IcgpsConfig {
            rollouts: 32,
            warmup: DEFAULT_WARMUP,
            horizon: 600,
            tail_fallback: TailFallback::Uniform,
        }
    }
}

impl IcgpsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 || self.horizon == 0 {
            return Err(invalid!("rollouts and horizon must be at least 1"));
        }
        Ok(())
    }
}

/// A full demand trajectory consistent with a history.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub demands: Vec<f64>,
}

impl Completion {
    /// True when every prompt step is respected: revealed demands copied
    /// exactly and censored slots strictly above their order.
    pub fn is_consistent_with(&self, history: &[HistoryStep]) -> bool {
        history.len() <= self.demands.len()
            && history.iter().zip(&self.demands).all(|(s, &d)| {
                if s.obs.censored {
                    d > s.order
                } else {
                    d == s.obs.sales
                }
            })
    }
}

/// Predictive law used to fill in a completion, queried through the
/// summary of the current pseudo-history.
pub trait CompletionKernel {
    type Scratch;

    fn scratch(&self) -> Self::Scratch;

    fn bound(&self) -> f64;

    /// Draw the next demand.
    fn sample(&self, ctx: &HistorySummary, scratch: &mut Self::Scratch, rng: &mut DetRng) -> Result<f64>;

    /// Draw the next demand conditioned on exceeding `x`.
    fn sample_above(&self, ctx: &HistorySummary, x: f64, scratch: &mut Self::Scratch, rng: &mut DetRng) -> Result<f64>;
}

/// The learned flow as a completion kernel.
#[derive(Debug, Clone, Copy)]
pub struct FlowKernel<'a> {
    pub model: &'a CompletionModel,
}

/// Context buffer plus model scratch.
#[derive(Debug, Clone)]
pub struct FlowScratch {
    ctx: Vec<f64>,
    net: NetScratch,
    knots: Vec<f64>,
}

impl<'a> FlowKernel<'a> {
    pub fn new(model: &'a CompletionModel) -> Result<Self> {
        if model.context_dim() != CONTEXT_DIM {
            return Err(Error::DimensionMismatch {
                expected: CONTEXT_DIM,
                got: model.context_dim(),
            });
        }
        Ok(FlowKernel { model })
    }

    fn load<'s>(&'s self, ctx: &HistorySummary, s: &'s mut FlowScratch) -> Result<LazyFlow<'s>> {
        ctx.write_context(self.bound(), &mut s.ctx);
        let raw = self.model.net.forward(&s.ctx, &mut s.net)?;
        LazyFlow::new(&self.model.shape, raw, &mut s.knots)
    }
}

impl CompletionKernel for FlowKernel<'_> {
    type Scratch = FlowScratch;

    fn scratch(&self) -> FlowScratch {
        FlowScratch {
            ctx: vec![0.0; CONTEXT_DIM],
            net: NetScratch::default(),
            knots: Vec::with_capacity(self.model.shape.bins + 1),
        }
    }

    fn bound(&self) -> f64 {
        self.model.shape.demand_bound
    }

    fn sample(&self, ctx: &HistorySummary, s: &mut FlowScratch, rng: &mut DetRng) -> Result<f64> {
        Ok(self.load(ctx, s)?.sample(rng))
    }

    fn sample_above(&self, ctx: &HistorySummary, x: f64, s: &mut FlowScratch, rng: &mut DetRng) -> Result<f64> {
        self.load(ctx, s)?.tail_sample(x, rng)
    }
}

/// Exact Bayesian predictive for a finite family of discrete tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBayesKernel {
    tasks: Vec<DiscreteLaw>,
    log_prior: Vec<f64>,
    bound: f64,
}

impl DiscreteBayesKernel {
    /// `tasks` pairs each law with its (unnormalized) prior weight.
    pub fn new(tasks: &[(DiscreteLaw, f64)], bound: f64) -> Result<Self> {
        if tasks.is_empty() {
            return Err(invalid!("need at least one task"));
        }
        if tasks.iter().any(|(_, w)| !(*w > 0.0 && w.is_finite())) {
            return Err(invalid!("task weights must be positive"));
        }
        if tasks.iter().any(|(l, _)| l.values().iter().any(|&v| v > bound || v < 0.0)) {
            return Err(invalid!("task support must lie in [0, {bound}]"));
        }
        Ok(DiscreteBayesKernel {
            tasks: tasks.iter().map(|(l, _)| l.clone()).collect(),
            log_prior: tasks.iter().map(|(_, w)| math::ln(*w)).collect(),
            bound,
        })
    }

    pub fn tasks(&self) -> &[DiscreteLaw] {
        &self.tasks
    }

    /// Posterior task weights given revealed events and censoring levels.
    pub fn posterior(&self, events: &[f64], censored: &[f64]) -> Vec<f64> {
        let mut lw: Vec<f64> = self
            .tasks
            .iter()
            .zip(&self.log_prior)
            .map(|(law, &lp)| {
                let mut s = lp;
                for &e in events {
                    s += math::ln(law.pmf(e));
                }
                for &c in censored {
                    s += math::ln(law.sf(c));
                }
                s
            })
            .collect();
        normalize_log(&mut lw);
        lw
    }

    fn pick(weights: &[f64], rng: &mut DetRng) -> usize {
        let u = open01(rng);
        let mut acc = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

fn normalize_log(lw: &mut [f64]) {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        let n = lw.len() as f64;
        lw.iter_mut().for_each(|w| *w = 1.0 / n);
        return;
    }
    let mut z = 0.0;
    for w in lw.iter_mut() {
        *w = math::exp(*w - m);
        z += *w;
    }
    for w in lw.iter_mut() {
        *w /= z;
    }
}

impl CompletionKernel for DiscreteBayesKernel {
    type Scratch = ();

    fn scratch(&self) {}

    fn bound(&self) -> f64 {
        self.bound
    }

    fn sample(&self, ctx: &HistorySummary, _: &mut (), rng: &mut DetRng) -> Result<f64> {
        let w = self.posterior(ctx.events(), ctx.censored());
        let k = Self::pick(&w, rng);
        Ok(self.tasks[k].quantile(open01(rng)))
    }

    fn sample_above(&self, ctx: &HistorySummary, x: f64, _: &mut (), rng: &mut DetRng) -> Result<f64> {
        let mut w = self.posterior(ctx.events(), ctx.censored());
        for (wk, law) in w.iter_mut().zip(&self.tasks) {
            *wk *= law.sf(x);
        }
        let z: f64 = w.iter().sum();
        if !(z > 0.0) {
            return Err(Error::TailMassExhausted {
                threshold: x,
                survival: 0.0,
            });
        }
        w.iter_mut().for_each(|v| *v /= z);
        let k = Self::pick(&w, rng);
        self.tasks[k].sample_above(x, rng).ok_or(Error::TailMassExhausted {
            threshold: x,
            survival: 0.0,
        })
    }
}

/// Sample one completion of length `horizon` given the observed prompt.
///
/// `prompt` must be the summary of `history` (kept incrementally by the
/// caller). Returns the number of tail fallbacks used alongside.
pub fn complete_with_summary<K: CompletionKernel>(
    kernel: &K,
    history: &[HistoryStep],
    prompt: &HistorySummary,
    horizon: usize,
    fallback: TailFallback,
    scratch: &mut K::Scratch,
    work: &mut HistorySummary,
    demands: &mut Vec<f64>,
    rng: &mut DetRng,
) -> Result<usize> {
    if history.len() > horizon {
        return Err(invalid!("history of {} steps exceeds horizon {horizon}", history.len()));
    }
    let bound = kernel.bound();
    work.clone_from(prompt);
    demands.clear();
    let mut fallbacks = 0;
    for step in history {
        if !step.obs.censored {
            demands.push(step.obs.sales);
            continue;
        }
        work.remove(step);
        let d = match kernel.sample_above(work, step.order, scratch, rng) {
            Ok(d) => d,
            Err(Error::TailMassExhausted { .. }) if fallback == TailFallback::Uniform => {
                fallbacks += 1;
                uniform_above(step.order, bound, rng)
            }
            Err(e) => return Err(e),
        };
        work.add_revealed(d);
        demands.push(d);
    }
    for _ in history.len()..horizon {
        let d = kernel.sample(work, scratch, rng)?;
        work.push_revealed(bound, d);
        demands.push(d);
    }
    debug_assert!(Completion {
        demands: demands.clone()
    }
    .is_consistent_with(history));
    Ok(fallbacks)
}

fn uniform_above(x: f64, bound: f64, rng: &mut DetRng) -> f64 {
    // (x, B]: 1 − U with U ∈ (0,1) keeps the left end open.
    let d = bound - (bound - x) * open01(rng);
    if d > x {
        d
    } else {
        bound
    }
}

/// Sample one completion of the whole horizon given `history`.
pub fn complete_trajectory<K: CompletionKernel>(kernel: &K, history: &History, horizon: usize, rng: &mut DetRng) -> Result<Completion> {
    let prompt = HistorySummary::from_history(history);
    let mut work = HistorySummary::with_capacity(horizon);
    let mut demands = Vec::with_capacity(horizon);
    let mut scratch = kernel.scratch();
    complete_with_summary(
        kernel,
        history.steps(),
        &prompt,
        horizon,
        TailFallback::Uniform,
        &mut scratch,
        &mut work,
        &mut demands,
        rng,
    )?;
    Ok(Completion { demands })
}

/// Left empirical `γ`-quantile: the `⌈γn⌉`-th smallest value.
pub fn oracle_quantile(demands: &[f64], gamma: f64) -> Result<f64> {
    if demands.is_empty() {
        return Err(invalid!("oracle quantile of an empty completion"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid!("service level {gamma} outside (0,1)"));
    }
    let mut v = demands.to_vec();
    let rank = math::left_quantile_rank(v.len(), gamma);
    Ok(select_rank(&mut v, rank))
}

fn select_rank(v: &mut [f64], rank: usize) -> f64 {
    let (_, x, _) = v.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    *x
}

/// Lower median (the `⌈n/2⌉`-th smallest value).
pub fn lower_median(values: &mut [f64]) -> f64 {
    let n = values.len();
    select_rank(values, n.div_ceil(2))
}

/// ICGPS as a stateful policy.
pub struct IcgpsPolicy<K: CompletionKernel> {
    name: String,
    kernel: K,
    config: IcgpsConfig,
    gamma: f64,
    history: History,
    prompt: HistorySummary,
    seed: u64,
    scratch: K::Scratch,
    work: HistorySummary,
    demands: Vec<f64>,
    actions: Vec<f64>,
    fallbacks: usize,
}

impl<K: CompletionKernel> IcgpsPolicy<K> {
    pub fn new(name: &str, kernel: K, config: IcgpsConfig, gamma: f64) -> Result<Self> {
        config.validate()?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid!("service level {gamma} outside (0,1)"));
        }
        let scratch = kernel.scratch();
        Ok(IcgpsPolicy {
            name: name.into(),
            kernel,
            work: HistorySummary::with_capacity(config.horizon),
            demands: Vec::with_capacity(config.horizon),
            actions: Vec::with_capacity(config.rollouts),
            config,
            gamma,
            history: History::new(),
            prompt: HistorySummary::new(),
            seed: 0,
            scratch,
            fallbacks: 0,
        })
    }

    /// Tail fallbacks used since the last reset.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    /// Oracle action of one rollout for round `t`.
    pub fn rollout_action(&mut self, t: usize, m: usize) -> Result<f64> {
        let mut rng = stream(self.seed, "rollout", t as u64, m as u64, 0);
        self.fallbacks += complete_with_summary(
            &self.kernel,
            self.history.steps(),
            &self.prompt,
            self.config.horizon,
            self.config.tail_fallback,
            &mut self.scratch,
            &mut self.work,
            &mut self.demands,
            &mut rng,
        )?;
        let rank = math::left_quantile_rank(self.demands.len(), self.gamma);
        Ok(select_rank(&mut self.demands, rank))
    }
}

impl<K: CompletionKernel> Policy for IcgpsPolicy<K> {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self, seed: u64) {
        self.history = History::with_capacity(self.config.horizon);
        self.prompt.clear();
        self.seed = derive_seed(seed, &[0x1C6]);
        self.fallbacks = 0;
    }

    fn act(&mut self, t: usize) -> Result<f64> {
        if t == 0 || t > self.config.horizon {
            return Err(invalid!("round {t} outside 1..={}", self.config.horizon));
        }
        if t <= self.config.warmup {
            return Ok(self.kernel.bound());
        }
        self.actions.clear();
        for m in 0..self.config.rollouts {
            let a = self.rollout_action(t, m)?;
            self.actions.push(a);
        }
        Ok(lower_median(&mut self.actions))
    }

    fn observe(&mut self, order: f64, obs: CensoredObs) -> Result<()> {
        let step = HistoryStep::new(order, obs)?;
        self.history.push(step)?;
        self.prompt.push(&step);
        Ok(())
    }
}

/// One-shot ICGPS decision for round `t = |history| + 1`.
pub fn icgps_act<K: CompletionKernel>(kernel: K, config: &IcgpsConfig, gamma: f64, history: &History, seed: u64) -> Result<f64> {
    let mut p = IcgpsPolicy::new("icgps", kernel, config.clone(), gamma)?;
    p.reset(seed);
    for s in history.iter() {
        p.observe(s.order, s.obs)?;
    }
    p.act(history.len() + 1)
}

/// Enumeration guard for [`exact_gps_discrete`].
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Exact law of the oracle action under the true posterior over a finite
/// set of discrete tasks, by enumerating every completion.
///
/// Returns `(action, probability)` pairs sorted by action.
pub fn exact_gps_discrete(tasks: &[(DiscreteLaw, f64)], history: &History, gamma: f64, horizon: usize) -> Result<Vec<(f64, f64)>> {
    if history.len() > horizon {
        return Err(invalid!("history longer than horizon"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid!("service level {gamma} outside (0,1)"));
    }
    let bound = tasks
        .iter()
        .flat_map(|(l, _)| l.values().iter().cloned())
        .fold(0.0, f64::max);
    let kernel = DiscreteBayesKernel::new(tasks, bound.max(f64::MIN_POSITIVE))?;
    let summary = HistorySummary::from_history(history);
    let post = kernel.posterior(summary.events(), summary.censored());

    let censored_slots: Vec<usize> = history
        .iter()
        .enumerate()
        .filter(|(_, s)| s.obs.censored)
        .map(|(i, _)| i)
        .collect();
    let free = censored_slots.len() + horizon - history.len();
    let support = tasks.iter().map(|(l, _)| l.values().len()).max().unwrap_or(1) as u128;
    let count = support.checked_pow(free as u32).unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge(count));
    }

    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut base: Vec<f64> = history.iter().map(|s| s.obs.sales).collect();
    base.resize(horizon, 0.0);
    for (k, (law, _)) in tasks.iter().enumerate() {
        if post[k] == 0.0 {
            continue;
        }
        // Per-slot conditional laws under task k.
        let mut slots: Vec<(usize, Vec<(f64, f64)>)> = Vec::with_capacity(free);
        for &i in &censored_slots {
            let x = history.steps()[i].order;
            let tail = law.sf(x);
            let atoms: Vec<(f64, f64)> = law
                .values()
                .iter()
                .zip(law.probs())
                .filter(|(&v, _)| v > x)
                .map(|(&v, &p)| (v, p / tail))
                .collect();
            slots.push((i, atoms));
        }
        for i in history.len()..horizon {
            slots.push((i, law.values().iter().cloned().zip(law.probs().iter().cloned()).collect()));
        }
        let mut traj = base.clone();
        enumerate(&slots, 0, post[k], &mut traj, gamma, &mut out);
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(out.len());
    for (a, p) in out {
        match merged.last_mut() {
            Some(last) if last.0 == a => last.1 += p,
            _ => merged.push((a, p)),
        }
    }
    Ok(merged)
}

fn enumerate(slots: &[(usize, Vec<(f64, f64)>)], depth: usize, prob: f64, traj: &mut Vec<f64>, gamma: f64, out: &mut Vec<(f64, f64)>) {
    if depth == slots.len() {
        let mut v = traj.clone();
        let rank = math::left_quantile_rank(v.len(), gamma);
        out.push((select_rank(&mut v, rank), prob));
        return;
    }
    let (i, atoms) = &slots[depth];
    for &(v, p) in atoms {
        traj[*i] = v;
        enumerate(slots, depth + 1, prob * p, traj, gamma, out);
    }
}

/// Total-variation distance between two finitely supported laws given as
/// sorted `(value, probability)` lists.
pub fn total_variation(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j, mut tv) = (0, 0, 0.0);
    while i < a.len() || j < b.len() {
        if j >= b.len() || (i < a.len() && a[i].0 < b[j].0) {
            tv += a[i].1;
            i += 1;
        } else if i >= a.len() || b[j].0 < a[i].0 {
            tv += b[j].1;
            j += 1;
        } else {
            tv += (a[i].1 - b[j].1).abs();
            i += 1;
            j += 1;
        }
    }
    0.5 * tv
}

/// Empirical law of a sample as sorted `(value, frequency)` pairs.
pub fn empirical_law(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for x in v {
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 += 1.0 / n,
            _ => out.push((x, 1.0 / n)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::censor;
    use crate::rng::from_seed;

    fn two_tasks() -> Vec<(DiscreteLaw, f64)> {
        vec![
            (DiscreteLaw::new(&[(1.0, 0.5), (2.0, 0.3), (3.0, 0.2)]).unwrap(), 1.0),
            (DiscreteLaw::new(&[(2.0, 0.2), (3.0, 0.3), (4.0, 0.5)]).unwrap(), 1.0),
        ]
    }

    #[test]
    fn oracle_quantile_examples() {
        assert_eq!(oracle_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.0);
        assert_eq!(oracle_quantile(&[4.0, 3.0, 2.0, 1.0], 0.75).unwrap(), 3.0);
        assert_eq!(oracle_quantile(&[2.5; 7], 0.9).unwrap(), 2.5);
        assert!(oracle_quantile(&[], 0.5).is_err());
    }

    #[test]
    fn lower_median_picks_lower_middle() {
        assert_eq!(lower_median(&mut [4.0, 1.0, 3.0, 2.0]), 2.0);
        assert_eq!(lower_median(&mut [5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn completion_respects_history() {
        let k = DiscreteBayesKernel::new(&two_tasks(), 4.0).unwrap();
        let mut h = History::new();
        for (x, d) in [(4.0, 2.0), (1.5, 3.0), (2.5, 4.0), (4.0, 1.0)] {
            h.record(x, d).unwrap();
        }
        let mut rng = from_seed(1);
        for _ in 0..2000 {
            let c = complete_trajectory(&k, &h, 6, &mut rng).unwrap();
            assert_eq!(c.demands.len(), 6);
            assert!(c.is_consistent_with(h.steps()));
        }
    }

    #[test]
    fn warmup_orders_bound() {
        let k = DiscreteBayesKernel::new(&two_tasks(), 4.0).unwrap();
        let cfg = IcgpsConfig {
            horizon: 5,
            ..Default::default()
        };
        assert_eq!(icgps_act(k, &cfg, 0.5, &History::new(), 0).unwrap(), 4.0);
    }

    #[test]
    fn disjoint_supports_collapse() {
        let tasks = vec![
            (DiscreteLaw::new(&[(1.0, 0.5), (2.0, 0.5)]).unwrap(), 1.0),
            (DiscreteLaw::new(&[(3.0, 0.5), (4.0, 0.5)]).unwrap(), 1.0),
        ];
        let mut h = History::new();
        h.push(HistoryStep::new(4.0, censor(4.0, 3.0).unwrap()).unwrap()).unwrap();
        let law = exact_gps_discrete(&tasks, &h, 0.05, 2).unwrap();
        assert_eq!(law, vec![(3.0, 1.0)]);
    }

    #[test]
    fn enumeration_guard() {
        let support: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.1)).collect();
        let tasks = vec![(DiscreteLaw::new(&support).unwrap(), 1.0)];
        assert!(matches!(
            exact_gps_discrete(&tasks, &History::new(), 0.5, 7),
            Err(Error::EnumerationTooLarge(_))
        ));
    }

    #[test]
    fn total_variation_basics() {
        let a = [(1.0, 0.5), (2.0, 0.5)];
        let b = [(2.0, 0.5), (3.0, 0.5)];
        assert!((total_variation(&a, &b) - 0.5).abs() < 1e-15);
        assert_eq!(total_variation(&a, &a), 0.0);
    }
}
