//! Reference policies: conjugate Thompson sampling for a Weibull rate with
//! known shape, the myopic plug-in MLE, an optimistic rate bound, sample
//! average approximation, and the Kaplan–Meier plug-in.

use alloc::string::String;
use alloc::vec::Vec;

use rand_distr::{Distribution, Gamma};

use crate::env::{CensoredObs, History, HistoryStep};
use crate::error::{invalid, Result};
use crate::harness::Policy;
use crate::icgps::DEFAULT_WARMUP;
use crate::math;
use crate::rng::{derive_seed, from_seed, DetRng};
use crate::survival::{km_fit, km_quantile};

/// Gamma(shape `a`, rate `b`) posterior on a Weibull rate with known shape `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPosterior {
    pub a: f64,
    pub b: f64,
    pub k: f64,
}

impl GammaPosterior {
    pub fn new(a: f64, b: f64, k: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && k > 0.0) || !(a.is_finite() && b.is_finite() && k.is_finite()) {
            return Err(invalid!("gamma posterior needs a, b, k > 0 (got {a}, {b}, {k})"));
        }
        Ok(GammaPosterior { a, b, k })
    }
}

/// Conjugate update: an exact demand `d` contributes `θ e^{−θ d^k}`, a
/// stockout at `x` contributes `e^{−θ x^k}`.
pub fn gamma_update(post: GammaPosterior, x: f64, obs: &CensoredObs) -> GammaPosterior {
    let mut p = post;
    if obs.censored {
        p.b += math::powf(x, p.k);
    } else {
        p.a += 1.0;
        p.b += math::powf(obs.sales, p.k);
    }
    p
}

/// Weibull `γ`-quantile `((−ln(1−γ))/θ)^{1/k}` clamped to `[0, B]`.
pub fn weibull_order(theta: f64, k: f64, gamma: f64, bound: f64) -> f64 {
    if !(theta > 0.0) {
        return bound;
    }
    math::powf(-math::ln_1p(-gamma) / theta, 1.0 / k).clamp(0.0, bound)
}

/// Thompson draw of the rate followed by the plug-in quantile.
pub fn ts_weibull_act(post: &GammaPosterior, gamma: f64, bound: f64, rng: &mut DetRng) -> Result<f64> {
    let g = Gamma::new(post.a, 1.0 / post.b).map_err(|e| invalid!("gamma posterior: {e}"))?;
    Ok(weibull_order(g.sample(rng), post.k, gamma, bound))
}

fn uncensored_stats(history: &History, k: f64) -> (f64, f64, f64) {
    let (mut n_u, mut s_u, mut s_all) = (0.0, 0.0, 0.0);
    for s in history.iter() {
        let p = math::powf(s.obs.sales, k);
        s_all += p;
        if !s.obs.censored {
            n_u += 1.0;
            s_u += p;
        }
    }
    (n_u, s_u, s_all)
}

/// Plug-in quantile at `θ̂ = n_u / Σ_uncensored d^k`; `B` before any exact demand.
pub fn myopic_mle_act(history: &History, k: f64, gamma: f64, bound: f64) -> f64 {
    let (n_u, s_u, _) = uncensored_stats(history, k);
    mle_order(n_u, s_u, k, gamma, bound)
}

fn mle_order(n_u: f64, s_u: f64, k: f64, gamma: f64, bound: f64) -> f64 {
    if n_u == 0.0 {
        return bound;
    }
    if s_u == 0.0 {
        return 0.0;
    }
    weibull_order(n_u / s_u, k, gamma, bound)
}

/// Optimistic order: the rate is taken at the `level`-quantile of
/// Gamma(n_u, Σ min(d, x)^k), a lower confidence bound on the rate.
pub fn ucb_act(history: &History, k: f64, gamma: f64, bound: f64, level: f64) -> f64 {
    let (n_u, _, s_all) = uncensored_stats(history, k);
    ucb_order(n_u, s_all, k, gamma, bound, level)
}

fn ucb_order(n_u: f64, s_all: f64, k: f64, gamma: f64, bound: f64, level: f64) -> f64 {
    if n_u == 0.0 {
        return bound;
    }
    if s_all == 0.0 {
        return 0.0;
    }
    weibull_order(math::gamma_quantile(n_u, s_all, level), k, gamma, bound)
}

/// Left empirical `γ`-quantile of raw sales, ignoring censoring.
pub fn saa_act(history: &History, gamma: f64, bound: f64) -> f64 {
    if history.is_empty() {
        return bound;
    }
    let mut v: Vec<f64> = history.iter().map(|s| s.obs.sales).collect();
    let r = math::left_quantile_rank(v.len(), gamma);
    let (_, x, _) = v.select_nth_unstable_by(r - 1, |a, b| a.total_cmp(b));
    x.min(bound)
}

/// Kaplan–Meier plug-in quantile.
pub fn km_act(history: &History, gamma: f64, bound: f64) -> f64 {
    if history.is_empty() {
        return bound;
    }
    km_quantile(&km_fit(history), gamma, bound)
}

/// Which baseline rule a [`BaselinePolicy`] follows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    /// Thompson sampling with a Gamma(a₀, b₀) prior on the rate.
    TsWeibull { a0: f64, b0: f64 },
    MyopicMle,
    /// Optimistic rate at the given lower quantile.
    Ucb { level: f64 },
    Saa,
    KaplanMeier,
    /// Always the same order (e.g. the clairvoyant one).
    Fixed { order: f64 },
}

/// A baseline rule wrapped as a stateful policy.
#[derive(Debug, Clone)]
pub struct BaselinePolicy {
    name: String,
    kind: BaselineKind,
    /// Weibull shape assumed by the parametric rules.
    k: f64,
    gamma: f64,
    bound: f64,
    warmup: usize,
    history: History,
    post: Option<GammaPosterior>,
    n_u: f64,
    s_u: f64,
    s_all: f64,
    rng: DetRng,
}

impl BaselinePolicy {
    pub fn new(name: &str, kind: BaselineKind, k: f64, gamma: f64, bound: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) || !(bound > 0.0) || !(k > 0.0) {
            return Err(invalid!("baseline needs γ ∈ (0,1), B > 0, k > 0"));
        }
        let post = match kind {
            BaselineKind::TsWeibull { a0, b0 } => Some(GammaPosterior::new(a0, b0, k)?),
            BaselineKind::Ucb { level } if !(level > 0.0 && level < 1.0) => {
                return Err(invalid!("UCB level {level} outside (0,1)"));
            }
            _ => None,
        };
        Ok(BaselinePolicy {
            name: name.into(),
            kind,
            k,
            gamma,
            bound,
            warmup: DEFAULT_WARMUP,
            history: History::new(),
            post,
            n_u: 0.0,
            s_u: 0.0,
            s_all: 0.0,
            rng: from_seed(0),
        })
    }

    /// Order `B` for the first `t0` rounds, as ICGPS does. Ignored by `Fixed`.
    pub fn with_warmup(mut self, t0: usize) -> Self {
        self.warmup = t0;
        self
    }

    pub fn posterior(&self) -> Option<GammaPosterior> {
        self.post
    }
}

impl Policy for BaselinePolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self, seed: u64) {
        self.history = History::new();
        if let BaselineKind::TsWeibull { a0, b0 } = self.kind {
            self.post = Some(GammaPosterior { a: a0, b: b0, k: self.k });
        }
        self.n_u = 0.0;
        self.s_u = 0.0;
        self.s_all = 0.0;
        self.rng = from_seed(derive_seed(seed, &[0xBA5E]));
    }

    fn act(&mut self, t: usize) -> Result<f64> {
        if t <= self.warmup && !matches!(self.kind, BaselineKind::Fixed { .. }) {
            return Ok(self.bound);
        }
        Ok(match self.kind {
            BaselineKind::TsWeibull { .. } => ts_weibull_act(self.post.as_ref().unwrap(), self.gamma, self.bound, &mut self.rng)?,
            BaselineKind::MyopicMle => mle_order(self.n_u, self.s_u, self.k, self.gamma, self.bound),
            BaselineKind::Ucb { level } => ucb_order(self.n_u, self.s_all, self.k, self.gamma, self.bound, level),
            BaselineKind::Saa => saa_act(&self.history, self.gamma, self.bound),
            BaselineKind::KaplanMeier => km_act(&self.history, self.gamma, self.bound),
            BaselineKind::Fixed { order } => order.clamp(0.0, self.bound),
        })
    }

    fn observe(&mut self, order: f64, obs: CensoredObs) -> Result<()> {
        let step = HistoryStep::new(order, obs)?;
        if let Some(p) = self.post {
            self.post = Some(gamma_update(p, order, &obs));
        }
        let p = math::powf(obs.sales, self.k);
        self.s_all += p;
        if !obs.censored {
            self.n_u += 1.0;
            self.s_u += p;
        }
        self.history.push(step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(sales: f64, censored: bool) -> CensoredObs {
        CensoredObs { sales, censored }
    }

    #[test]
    fn conjugate_algebra() {
        let p = GammaPosterior::new(2.0, 1.0, 1.5).unwrap();
        let p = gamma_update(p, 5.0, &obs(1.0, false));
        let p = gamma_update(p, 4.0, &obs(4.0, true));
        assert_eq!(p.a, 3.0);
        assert!((p.b - 10.0).abs() < 1e-12);
        let q = gamma_update(p, 0.0, &obs(0.0, true));
        assert_eq!(q, p);
        let mut r = p;
        for _ in 0..3 {
            r = gamma_update(r, 2.0, &obs(0.0, false));
        }
        assert_eq!((r.a, r.b), (p.a + 3.0, p.b));
    }

    #[test]
    fn degenerate_posterior_gives_closed_form() {
        let p = GammaPosterior::new(1e12, 2e12, 1.5).unwrap();
        let mut rng = from_seed(1);
        let x = ts_weibull_act(&p, 0.9, 100.0, &mut rng).unwrap();
        let exact = (-(0.1f64).ln() / 0.5).powf(1.0 / 1.5);
        assert!((x - exact).abs() < 1e-4);
        assert_eq!(weibull_order(0.5, 1.5, 1.0 - 1e-300, 5.0), 5.0);
        assert!(weibull_order(1.0, 1.5, 0.9, 10.0) < weibull_order(0.5, 1.5, 0.9, 10.0));
    }

    #[test]
    fn mle_rules() {
        let mut h = History::new();
        assert_eq!(myopic_mle_act(&h, 1.5, 0.9, 7.0), 7.0);
        assert_eq!(ucb_act(&h, 1.5, 0.9, 7.0, 0.05), 7.0);
        let d = 2f64.powf(1.0 / 1.5);
        h.record(10.0, d).unwrap();
        let x_mle = myopic_mle_act(&h, 1.5, 0.9, 70.0);
        assert!((x_mle - weibull_order(0.5, 1.5, 0.9, 70.0)).abs() < 1e-12);
        h.record(0.5, 3.0).unwrap();
        assert_eq!(myopic_mle_act(&h, 1.5, 0.9, 70.0), x_mle);
        assert!(ucb_act(&h, 1.5, 0.9, 70.0, 0.05) >= x_mle);
    }

    #[test]
    fn saa_and_km() {
        let mut h = History::new();
        for d in [3.0, 1.0, 4.0, 2.0] {
            h.record(10.0, d).unwrap();
        }
        assert_eq!(saa_act(&h, 0.5, 10.0), 2.0);
        assert_eq!(km_act(&h, 0.5, 10.0), 2.0);
        let mut c = History::new();
        for x in [1.0, 2.0] {
            c.record(x, 5.0).unwrap();
        }
        assert_eq!(km_act(&c, 0.5, 10.0), 10.0);
        assert_eq!(saa_act(&History::new(), 0.5, 10.0), 10.0);
    }

    #[test]
    fn warmup_orders_bound() {
        let mut p = BaselinePolicy::new("ts", BaselineKind::TsWeibull { a0: 4.0, b0: 8.0 }, 1.5, 0.5, 7.0).unwrap();
        p.reset(1);
        for t in 1..=3 {
            assert_eq!(p.act(t).unwrap(), 7.0);
            p.observe(7.0, obs(1.0, false)).unwrap();
        }
        assert!(p.act(4).unwrap() < 7.0);
        let mut f = BaselinePolicy::new("x", BaselineKind::Fixed { order: 1.0 }, 1.5, 0.5, 7.0).unwrap();
        assert_eq!(f.act(1).unwrap(), 1.0);
        let mut s = BaselinePolicy::new("saa", BaselineKind::Saa, 1.5, 0.5, 7.0).unwrap().with_warmup(0);
        s.observe(7.0, obs(1.0, false)).unwrap();
        assert_eq!(s.act(1).unwrap(), 1.0);
    }
}
