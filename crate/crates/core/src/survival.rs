//! Kaplan–Meier estimation over censored histories and the fixed-size
//! conditioning context fed to the completion model.
//!
//! Uncensored steps are events at their sales value; censored steps are
//! right-censorings at their order level. On ties an event is processed
//! before a censoring at the same level.
//!
//! The product-limit CDF is accumulated block-wise: between two censoring
//! levels the product telescopes, so inside a block the CDF is
//! `base + (1 − base)·k/n₀` with `n₀` the risk set at the start of the
//! block. Without censoring this is exactly `k/n`, the empirical CDF.

use alloc::vec::Vec;

use crate::env::{History, HistoryStep};
use crate::math;

/// Number of KM quantile levels in the context.
pub const N_LEVELS: usize = 19;
/// Number of summary statistics appended after the quantiles.
pub const N_STATS: usize = 6;
/// Dimension of the default context vector.
pub const CONTEXT_DIM: usize = N_LEVELS + N_STATS;

/// Quantile levels 0.05, 0.10, …, 0.95.
pub fn quantile_levels() -> [f64; N_LEVELS] {
    let mut a = [0.0; N_LEVELS];
    for (i, v) in a.iter_mut().enumerate() {
        *v = (i + 1) as f64 / 20.0;
    }
    a
}

/// `⌈(j/20)·n⌉` in integer arithmetic: the left empirical rank of level `j`.
#[inline]
fn level_rank(j: usize, n: usize) -> usize {
    (j * n).div_ceil(N_LEVELS + 1).clamp(1, n)
}

/// Product-limit estimator built from a censored history.
#[derive(Debug, Clone, PartialEq)]
pub struct KMEstimator {
    event_times: Vec<f64>,
    censor_times: Vec<f64>,
    /// Distinct event times with the estimated CDF 1 − Ŝ just after them.
    steps: Vec<(f64, f64)>,
}

/// Walk sorted events and censorings, calling `emit(τ, F(τ))` at every
/// distinct event time. Returning `false` from `emit` stops the walk.
fn km_walk(events: &[f64], censored: &[f64], mut emit: impl FnMut(f64, f64) -> bool) {
    let mut at_risk = events.len() + censored.len();
    let mut base = 0.0;
    let mut block_n = at_risk;
    // (1 − base)/n₀ once per block; unused while base is zero so that the
    // uncensored prefix stays exactly k/n.
    let mut scale = 0.0;
    let mut block_k = 0usize;
    let mut i = 0;
    let mut j = 0;
    let next_censor = |j: usize| censored.get(j).copied().unwrap_or(f64::INFINITY);
    let mut c = next_censor(0);
    while i < events.len() {
        let tau = events[i];
        if c < tau {
            base += (1.0 - base) * (block_k as f64) / (block_n as f64);
            while c < tau {
                at_risk -= 1;
                j += 1;
                c = next_censor(j);
            }
            block_n = at_risk;
            block_k = 0;
            scale = (1.0 - base) / (block_n as f64);
        }
        let start = i;
        i += 1;
        while i < events.len() && events[i] == tau {
            i += 1;
        }
        block_k += i - start;
        at_risk -= i - start;
        let cdf = if base == 0.0 {
            (block_k as f64) / (block_n as f64)
        } else {
            base + scale * (block_k as f64)
        };
        if !emit(tau, cdf) {
            return;
        }
    }
}

impl KMEstimator {
    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn censor_times(&self) -> &[f64] {
        &self.censor_times
    }

    /// Distinct event times paired with 1 − Ŝ at that time.
    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }

    /// Estimated CDF 1 − Ŝ(z), right-continuous.
    pub fn cdf(&self, z: f64) -> f64 {
        let idx = self.steps.partition_point(|&(t, _)| t <= z);
        if idx == 0 {
            0.0
        } else {
            self.steps[idx - 1].1
        }
    }

    /// Ŝ(z).
    pub fn survival(&self, z: f64) -> f64 {
        1.0 - self.cdf(z)
    }

    /// inf{z ∈ [0, B] : 1 − Ŝ(z) ≥ α}, or `bound` when that set is empty.
    pub fn quantile(&self, alpha: f64, bound: f64) -> f64 {
        for &(t, f) in &self.steps {
            if f >= alpha {
                return t.min(bound);
            }
        }
        bound
    }
}

/// Fit the product-limit estimator to a history.
pub fn km_fit(history: &History) -> KMEstimator {
    let mut event_times = Vec::new();
    let mut censor_times = Vec::new();
    for s in history.iter() {
        if s.obs.censored {
            censor_times.push(s.order);
        } else {
            event_times.push(s.obs.sales);
        }
    }
    event_times.sort_by(f64::total_cmp);
    censor_times.sort_by(f64::total_cmp);
    let mut steps = Vec::new();
    km_walk(&event_times, &censor_times, |t, f| {
        steps.push((t, f));
        true
    });
    KMEstimator {
        event_times,
        censor_times,
        steps,
    }
}

/// Generalized inverse of the KM CDF, free-function form.
pub fn km_quantile(est: &KMEstimator, alpha: f64, bound: f64) -> f64 {
    est.quantile(alpha, bound)
}

/// Fixed-length conditioning vector: KM quantiles on the 0.05 grid, then
/// `[last order, last sales, proxy mean, proxy std, censoring rate, t − 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    pub values: Vec<f64>,
}

impl ContextVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Prepend an externally forecast quantile block on the same grid.
    pub fn with_forecast_quantiles(self, forecast: &[f64; N_LEVELS]) -> ContextVector {
        let mut values = Vec::with_capacity(N_LEVELS + self.values.len());
        values.extend_from_slice(forecast);
        values.extend_from_slice(&self.values);
        ContextVector { values }
    }

    /// The KM quantile block (the trailing 25 entries hold it at offset 0
    /// unless a forecast block was prepended).
    pub fn km_block(&self) -> &[f64] {
        let off = self.values.len() - CONTEXT_DIM;
        &self.values[off..off + N_LEVELS]
    }

    pub fn stats_block(&self) -> &[f64] {
        &self.values[self.values.len() - N_STATS..]
    }
}

/// Incrementally maintained summary of a (pseudo-)history: sorted event
/// and censoring levels plus running proxy moments. Used both to encode
/// observed histories and to update contexts cheaply during completion.
#[derive(Debug, Clone, Default)]
pub struct HistorySummary {
    events: Vec<f64>,
    censored: Vec<f64>,
    proxy_sum: f64,
    proxy_sumsq: f64,
    last: Option<(f64, f64)>,
}

fn sorted_insert(v: &mut Vec<f64>, x: f64) {
    let idx = v.partition_point(|&y| y <= x);
    v.insert(idx, x);
}

fn sorted_remove(v: &mut Vec<f64>, x: f64) -> bool {
    let idx = v.partition_point(|&y| y < x);
    if idx < v.len() && v[idx] == x {
        v.remove(idx);
        true
    } else {
        false
    }
}

impl HistorySummary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        HistorySummary {
            events: Vec::with_capacity(n),
            censored: Vec::with_capacity(n),
            ..Default::default()
        }
    }

    pub fn from_history(history: &History) -> Self {
        let mut s = Self::with_capacity(history.len());
        for step in history.iter() {
            s.push(step);
        }
        s
    }

    pub fn clear(&mut self) {
        self.events.clear();
        self.censored.clear();
        self.proxy_sum = 0.0;
        self.proxy_sumsq = 0.0;
        self.last = None;
    }

    pub fn len(&self) -> usize {
        self.events.len() + self.censored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sorted uncensored sales values.
    pub fn events(&self) -> &[f64] {
        &self.events
    }

    /// Sorted censoring levels.
    pub fn censored(&self) -> &[f64] {
        &self.censored
    }

    /// Append a step and make it the most recent one.
    pub fn push(&mut self, step: &HistoryStep) {
        self.add(step);
        self.last = Some((step.order, step.obs.sales));
    }

    /// Append a fully observed demand value reached with order `order`.
    pub fn push_revealed(&mut self, order: f64, demand: f64) {
        sorted_insert(&mut self.events, demand);
        self.proxy_sum += demand;
        self.proxy_sumsq += demand * demand;
        self.last = Some((order, demand));
    }

    /// Add a step to the multiset without touching the "last step" slot.
    pub fn add(&mut self, step: &HistoryStep) {
        let z = step.proxy();
        if step.obs.censored {
            sorted_insert(&mut self.censored, step.order);
        } else {
            sorted_insert(&mut self.events, step.obs.sales);
        }
        self.proxy_sum += z;
        self.proxy_sumsq += z * z;
    }

    /// Add a revealed demand without touching the "last step" slot.
    pub fn add_revealed(&mut self, demand: f64) {
        sorted_insert(&mut self.events, demand);
        self.proxy_sum += demand;
        self.proxy_sumsq += demand * demand;
    }

    /// Remove a previously added step. Returns `false` if it was absent.
    pub fn remove(&mut self, step: &HistoryStep) -> bool {
        let ok = if step.obs.censored {
            sorted_remove(&mut self.censored, step.order)
        } else {
            sorted_remove(&mut self.events, step.obs.sales)
        };
        if ok {
            let z = step.proxy();
            self.proxy_sum -= z;
            self.proxy_sumsq -= z * z;
        }
        ok
    }

    pub fn set_last(&mut self, last: Option<(f64, f64)>) {
        self.last = last;
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        self.last
    }

    /// Write the 25-entry context into `out`.
    pub fn write_context(&self, bound: f64, out: &mut [f64]) {
        debug_assert!(out.len() >= CONTEXT_DIM);
        let n = self.len();
        if n == 0 {
            out[..N_LEVELS].fill(0.5 * bound);
            out[N_LEVELS..CONTEXT_DIM].fill(0.0);
            return;
        }
        let levels = quantile_levels();
        if self.censored.is_empty() {
            for (i, v) in out[..N_LEVELS].iter_mut().enumerate() {
                *v = self.events[level_rank(i + 1, n) - 1].min(bound);
            }
        } else {
            let mut next = 0;
            km_walk(&self.events, &self.censored, |t, f| {
                while next < N_LEVELS && f >= levels[next] {
                    out[next] = t.min(bound);
                    next += 1;
                }
                next < N_LEVELS
            });
            for v in &mut out[next..N_LEVELS] {
                *v = bound;
            }
        }
        let nf = n as f64;
        let mean = self.proxy_sum / nf;
        let var = (self.proxy_sumsq / nf - mean * mean).max(0.0);
        let (lo, ls) = self.last.unwrap_or((0.0, 0.0));
        let stats = &mut out[N_LEVELS..CONTEXT_DIM];
        stats[0] = lo;
        stats[1] = ls;
        stats[2] = mean;
        stats[3] = math::sqrt(var);
        stats[4] = self.censored.len() as f64 / nf;
        stats[5] = nf;
    }

    pub fn context(&self, bound: f64) -> ContextVector {
        let mut values = alloc::vec![0.0; CONTEXT_DIM];
        self.write_context(bound, &mut values);
        ContextVector { values }
    }
}

/// Encode a history as the 25-dimensional conditioning vector.
pub fn encode_context(history: &History, bound: f64) -> ContextVector {
    HistorySummary::from_history(history).context(bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{CensoredObs, HistoryStep};

    fn step(order: f64, sales: f64, censored: bool) -> HistoryStep {
        HistoryStep {
            order,
            obs: CensoredObs { sales, censored },
        }
    }

    fn hist(steps: &[HistoryStep]) -> History {
        History::from_steps(steps.to_vec()).unwrap()
    }

    #[test]
    fn integer_level_rank_matches_float_rank() {
        let levels = quantile_levels();
        for n in 1..3000 {
            for (i, &a) in levels.iter().enumerate() {
                assert_eq!(level_rank(i + 1, n), math::left_quantile_rank(n, a), "n={n} level={a}");
            }
        }
    }

    #[test]
    fn hand_product_limit() {
        // events {1, 3}, censored {2}
        let h = hist(&[step(5.0, 1.0, false), step(2.0, 2.0, true), step(5.0, 3.0, false)]);
        let km = km_fit(&h);
        assert!((km.survival(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.survival(2.0 + 1e-9) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.survival(3.0), 0.0);
        assert_eq!(km.survival(0.5), 1.0);
        assert_eq!(km_quantile(&km, 0.3, 10.0), 1.0);
    }

    #[test]
    fn no_censoring_is_ecdf() {
        let h = hist(&[step(5.0, 3.0, false), step(5.0, 1.0, false), step(5.0, 2.0, false)]);
        let km = km_fit(&h);
        assert_eq!(km.cdf(1.0), 1.0 / 3.0);
        assert_eq!(km.cdf(2.0), 2.0 / 3.0);
        assert_eq!(km.cdf(3.0), 1.0);
        assert_eq!(km_quantile(&km, 0.5, 10.0), 2.0);
    }

    #[test]
    fn all_censored_never_reaches_level() {
        let h = hist(&[step(4.0, 4.0, true), step(4.0, 4.0, true)]);
        let km = km_fit(&h);
        for z in [0.0, 1.0, 4.0] {
            assert_eq!(km.survival(z), 1.0);
        }
        assert_eq!(km_quantile(&km, 0.1, 10.0), 10.0);
        assert_eq!(km_quantile(&km, 0.9, 10.0), 10.0);
    }

    #[test]
    fn tie_processes_event_first() {
        // event at 2 and censoring at 2: the censored unit is still at risk.
        let h = hist(&[step(5.0, 2.0, false), step(2.0, 2.0, true), step(5.0, 4.0, false)]);
        let km = km_fit(&h);
        assert_eq!(km.cdf(2.0), 1.0 / 3.0);
        assert_eq!(km.cdf(4.0), 1.0);
    }

    #[test]
    fn context_examples() {
        let c = encode_context(&History::new(), 10.0);
        assert_eq!(c.dim(), CONTEXT_DIM);
        assert!(c.values[..N_LEVELS].iter().all(|&v| v == 5.0));
        assert!(c.values[N_LEVELS..].iter().all(|&v| v == 0.0));

        let c = encode_context(&hist(&[step(4.0, 3.0, false)]), 10.0);
        assert_eq!(c.stats_block(), &[4.0, 3.0, 3.0, 0.0, 0.0, 1.0]);

        let c = encode_context(&hist(&[step(4.0, 3.0, false), step(2.0, 2.0, true)]), 10.0);
        assert_eq!(c.stats_block()[4], 0.5);
        assert_eq!(c.stats_block()[5], 2.0);
    }

    #[test]
    fn forecast_block_extends_to_44() {
        let c = encode_context(&History::new(), 10.0).with_forecast_quantiles(&[1.0; N_LEVELS]);
        assert_eq!(c.dim(), 44);
        assert!(c.km_block().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn summary_remove_restores() {
        let steps = [step(5.0, 1.0, false), step(2.0, 2.0, true), step(5.0, 3.0, false)];
        let mut s = HistorySummary::new();
        for st in &steps {
            s.push(st);
        }
        assert!(s.remove(&steps[1]));
        assert_eq!(s.censored().len(), 0);
        assert!(!s.remove(&steps[1]));
        s.add_revealed(2.5);
        assert_eq!(s.events(), &[1.0, 2.5, 3.0]);
    }
}
