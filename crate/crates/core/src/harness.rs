//! Trial orchestration and regret aggregation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::env::{censor, optimal_order, CensoredObs, CostParams, DemandModel};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::rng::{derive_seed, stream, tag_hash};
use crate::train::Episode;

/// A sequential ordering rule.
pub trait Policy {
    fn name(&self) -> &str;

    /// Forget all history and reseed internal randomness.
    fn reset(&mut self, seed: u64);

    /// Order for round `t` (1-based).
    fn act(&mut self, t: usize) -> Result<f64>;

    /// Feed back what the order revealed.
    fn observe(&mut self, order: f64, obs: CensoredObs) -> Result<()>;
}

/// Per-step record of one policy in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub policy: String,
    pub orders: Vec<f64>,
    pub demands: Vec<f64>,
    pub losses: Vec<f64>,
    /// Prefix sums of realized per-step regret against the clairvoyant order.
    pub cum_regret: Vec<f64>,
}

impl TrialResult {
    pub fn final_regret(&self) -> f64 {
        self.cum_regret.last().copied().unwrap_or(0.0)
    }
}

/// Seed of a policy's private randomness: keyed by its name so that the
/// list order of policies never matters.
pub fn policy_seed(seed: u64, name: &str) -> u64 {
    derive_seed(seed, &[tag_hash("policy"), tag_hash(name)])
}

/// The trial's latent demand stream.
pub fn demand_stream(task: &DemandModel, horizon: usize, bound: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "demand", 0, 0, 0);
    (0..horizon).map(|_| task.sample(&mut rng, bound)).collect()
}

/// Run every policy against the same demand stream.
pub fn run_trial(
    trial: usize,
    task: &DemandModel,
    policies: &mut [&mut dyn Policy],
    horizon: usize,
    costs: &CostParams,
    seed: u64,
) -> Result<Vec<TrialResult>> {
    if policies.is_empty() {
        return Err(invalid!("run_trial needs at least one policy"));
    }
    costs.validate()?;
    let demands = demand_stream(task, horizon, costs.bound, seed);
    let xstar = optimal_order(task, costs);
    policies
        .iter_mut()
        .map(|p| {
            p.reset(policy_seed(seed, p.name()));
            let mut r = TrialResult {
                trial,
                policy: p.name().into(),
                orders: Vec::with_capacity(horizon),
                demands: demands.clone(),
                losses: Vec::with_capacity(horizon),
                cum_regret: Vec::with_capacity(horizon),
            };
            let mut cum = 0.0;
            for (t, &d) in demands.iter().enumerate() {
                let x = p.act(t + 1)?;
                if !(x.is_finite() && x >= 0.0) {
                    return Err(invalid!("policy {} produced invalid order {x}", p.name()));
                }
                let x = x.min(costs.bound);
                let l = costs.cost(x, d);
                cum += l - costs.cost(xstar, d);
                r.orders.push(x);
                r.losses.push(l);
                r.cum_regret.push(cum);
                p.observe(x, censor(x, d)?)?;
            }
            Ok(r)
        })
        .collect()
}

/// Mean cumulative regret and its standard error at every round.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurve {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub trials: usize,
}

impl RegretCurve {
    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }

    pub fn final_se(&self) -> f64 {
        self.se.last().copied().unwrap_or(0.0)
    }
}

/// `μ̂_t = N⁻¹ Σ R_t`, `ŝe_t = sqrt(Σ (R_t − μ̂_t)² / (N(N−1)))`.
pub fn aggregate(results: &[&TrialResult]) -> Result<RegretCurve> {
    let n = results.len();
    if n < 2 {
        return Err(Error::TooFewTrials(n));
    }
    let len = results[0].cum_regret.len();
    if results.iter().any(|r| r.cum_regret.len() != len) {
        return Err(invalid!("trials have different horizons"));
    }
    let nf = n as f64;
    let mut mean = vec![0.0; len];
    let mut se = vec![0.0; len];
    for t in 0..len {
        let m = results.iter().map(|r| r.cum_regret[t]).sum::<f64>() / nf;
        let ss: f64 = results.iter().map(|r| (r.cum_regret[t] - m) * (r.cum_regret[t] - m)).sum();
        mean[t] = m;
        se[t] = math::sqrt(ss / (nf * (nf - 1.0)));
    }
    Ok(RegretCurve { mean, se, trials: n })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid!("spearman needs two equal-length samples of size ≥ 2"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / math::sqrt(sxx * syy))
}

/// One row of a real-episode cost table.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub policy: String,
    pub group: String,
    pub episodes: usize,
    pub steps: usize,
    pub mean_cost: f64,
    /// Steps whose cost used the censored-sales lower bound on demand.
    pub lower_bound_steps: usize,
}

/// A logged episode with its group label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEpisode {
    pub group: String,
    pub episode: Episode,
}

/// Replay logged episodes under each policy and report mean per-step cost
/// per (policy, group).
///
/// A policy learns only what the log reveals: after a logged stockout at
/// `X` it sees its own order `x` censored at `min(x, X)`, otherwise it sees
/// `min(D, x)`. The cost of `x` uses recorded demand when the store has it.
/// Without recorded demand a logged stockout only bounds demand below, so
/// the cost uses `X` in place of demand and the step is counted in
/// `lower_bound_steps`.
pub fn evaluate_episodes(
    episodes: &[LabeledEpisode],
    policies: &mut [&mut dyn Policy],
    costs: &CostParams,
    seed: u64,
) -> Result<Vec<CostRow>> {
    costs.validate()?;
    let mut groups: Vec<String> = Vec::new();
    for e in episodes {
        if !groups.contains(&e.group) {
            groups.push(e.group.clone());
        }
    }
    let mut rows = Vec::with_capacity(policies.len() * groups.len());
    for p in policies.iter_mut() {
        for g in &groups {
            let mut row = CostRow {
                policy: p.name().into(),
                group: g.clone(),
                episodes: 0,
                steps: 0,
                mean_cost: 0.0,
                lower_bound_steps: 0,
            };
            let mut total = 0.0;
            for (i, e) in episodes.iter().enumerate().filter(|(_, e)| &e.group == g) {
                p.reset(derive_seed(policy_seed(seed, p.name()), &[i as u64]));
                row.episodes += 1;
                for (t, step) in e.episode.steps.iter().enumerate() {
                    let x = p.act(t + 1)?.clamp(0.0, costs.bound);
                    let known = match &e.episode.demands {
                        Some(d) => Some(d[t]),
                        None if !step.obs.censored => Some(step.obs.sales),
                        None => None,
                    };
                    let seen = if step.obs.censored { x.min(step.order) } else { x };
                    let (d, obs) = match known {
                        Some(d) => (d, censor(seen, d)?),
                        None => {
                            row.lower_bound_steps += 1;
                            (step.order, CensoredObs { sales: seen, censored: true })
                        }
                    };
                    total += costs.cost(x, d);
                    row.steps += 1;
                    p.observe(seen, obs)?;
                }
            }
            row.mean_cost = if row.steps > 0 { total / row.steps as f64 } else { 0.0 };
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{BaselineKind, BaselinePolicy};

    fn result(r: &[f64]) -> TrialResult {
        TrialResult {
            trial: 0,
            policy: "p".into(),
            orders: vec![],
            demands: vec![],
            losses: vec![],
            cum_regret: r.to_vec(),
        }
    }

    #[test]
    fn aggregate_examples() {
        let (a, b) = (result(&[0.0]), result(&[2.0]));
        let c = aggregate(&[&a, &b]).unwrap();
        assert_eq!((c.mean[0], c.se[0]), (1.0, 1.0));
        let c = aggregate(&[&a, &a, &a]).unwrap();
        assert_eq!(c.se[0], 0.0);
        assert!(matches!(aggregate(&[&a]), Err(Error::TooFewTrials(1))));
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn clairvoyant_has_zero_regret() {
        let task = DemandModel::weibull(0.5, 1.5).unwrap();
        let costs = CostParams::new(1.0, 9.0, 8.0).unwrap();
        let xs = optimal_order(&task, &costs);
        let mut p = BaselinePolicy::new("star", BaselineKind::Fixed { order: xs }, 1.5, 0.9, 8.0).unwrap();
        let r = run_trial(0, &task, &mut [&mut p], 50, &costs, 3).unwrap();
        assert!(r[0].cum_regret.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn policy_order_does_not_matter() {
        let task = DemandModel::weibull(0.5, 1.5).unwrap();
        let costs = CostParams::new(1.0, 9.0, 8.0).unwrap();
        let mk = |n: &str, kind| BaselinePolicy::new(n, kind, 1.5, 0.9, 8.0).unwrap();
        let mut a = mk("ts", BaselineKind::TsWeibull { a0: 4.0, b0: 8.0 });
        let mut b = mk("saa", BaselineKind::Saa);
        let r1 = run_trial(0, &task, &mut [&mut a, &mut b], 60, &costs, 9).unwrap();
        let r2 = run_trial(0, &task, &mut [&mut b, &mut a], 60, &costs, 9).unwrap();
        assert_eq!(r1[0], r2[1]);
        assert_eq!(r1[1], r2[0]);
        assert_eq!(r1[0].demands, r1[1].demands);
    }

    fn logged(group: &str, steps: &[(f64, f64)], demands: Option<Vec<f64>>) -> LabeledEpisode {
        let steps = steps.iter().map(|&(x, d)| crate::env::HistoryStep::new(x, censor(x, d).unwrap()).unwrap()).collect();
        let mut episode = Episode::new(steps).unwrap();
        episode.demands = demands;
        LabeledEpisode { group: group.into(), episode }
    }

    #[test]
    fn replay_cost_table() {
        let costs = CostParams::new(1.0, 1.0, 10.0).unwrap();
        let eps = [
            logged("a", &[(5.0, 3.0); 4], Some(vec![3.0; 4])),
            logged("b", &[(2.0, 3.0); 3], None),
            logged("a", &[(1.0, 3.0); 2], Some(vec![3.0; 2])),
        ];
        let mk = |n: &str, x| BaselinePolicy::new(n, BaselineKind::Fixed { order: x }, 1.0, 0.5, 10.0).unwrap();
        let (mut p3, mut p6) = (mk("three", 3.0), mk("six", 6.0));
        let rows = evaluate_episodes(&eps, &mut [&mut p3, &mut p6], &costs, 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0].group.as_str(), rows[0].episodes, rows[0].steps), ("a", 2, 6));
        assert_eq!(rows[0].mean_cost, 0.0);
        assert_eq!(rows[0].lower_bound_steps, 0);
        // Unknown demand behind a stockout at 2: cost uses 2 and is flagged.
        assert_eq!((rows[1].mean_cost, rows[1].lower_bound_steps), (1.0, 3));
        assert_eq!((rows[3].mean_cost, rows[3].lower_bound_steps), (4.0, 3));
    }

    struct Recorder(Vec<(f64, CensoredObs)>);

    impl Policy for Recorder {
        fn name(&self) -> &str {
            "rec"
        }
        fn reset(&mut self, _: u64) {}
        fn act(&mut self, _: usize) -> Result<f64> {
            Ok(4.0)
        }
        fn observe(&mut self, order: f64, obs: CensoredObs) -> Result<()> {
            self.0.push((order, obs));
            Ok(())
        }
    }

    #[test]
    fn replay_reveals_only_what_the_log_reveals() {
        let costs = CostParams::new(1.0, 1.0, 10.0).unwrap();
        // Logged orders 2 (stockout, demand 5) and 6 (sale of 3).
        let eps = [logged("a", &[(2.0, 5.0), (6.0, 3.0)], Some(vec![5.0, 3.0]))];
        let mut rec = Recorder(Vec::new());
        let rows = evaluate_episodes(&eps, &mut [&mut rec], &costs, 0).unwrap();
        assert_eq!(rec.0[0], (2.0, CensoredObs { sales: 2.0, censored: true }));
        assert_eq!(rec.0[1], (4.0, CensoredObs { sales: 3.0, censored: false }));
        // Costs use the recorded demand: |4 − 5| and |4 − 3|.
        assert_eq!(rows[0].mean_cost, 1.0);
        assert_eq!(rows[0].lower_bound_steps, 0);
    }
}
