//! Environment primitives: costs, the censoring map, parametric demand laws,
//! task priors, and the clairvoyant newsvendor order.

use alloc::vec::Vec;

use rand::RngCore;
use rand_distr::Distribution;

use crate::error::{invalid, Result};
use crate::math;
use crate::rng::{open01, unit};

/// Absolute tolerance used for every Bayes-risk quadrature.
pub const QUAD_TOL: f64 = 1e-8;

/// Per-unit overage cost `h`, underage cost `b`, and the demand/action cap.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostParams {
    pub h: f64,
    pub b: f64,
    pub bound: f64,
}

impl CostParams {
    pub fn new(h: f64, b: f64, bound: f64) -> Result<Self> {
        let c = CostParams { h, b, bound };
        c.validate()?;
        Ok(c)
    }

    /// Costs with `h = 1` and `b` chosen so that the critical fractile is `gamma`.
    pub fn from_service_level(gamma: f64, bound: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid!("service level {gamma} outside (0,1)"));
        }
        Self::new(1.0, gamma / (1.0 - gamma), bound)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(invalid!("overage cost h must be positive, got {}", self.h));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(invalid!("underage cost b must be positive, got {}", self.b));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(invalid!("bound must be positive, got {}", self.bound));
        }
        Ok(())
    }

    /// Critical fractile b / (b + h).
    #[inline]
    pub fn gamma(&self) -> f64 {
        self.b / (self.b + self.h)
    }

    /// Newsvendor cost without domain checks.
    #[inline]
    pub fn cost(&self, x: f64, d: f64) -> f64 {
        if x >= d {
            self.h * (x - d)
        } else {
            self.b * (d - x)
        }
    }

    fn check(&self, what: &str, v: f64) -> Result<()> {
        if !(v >= 0.0 && v <= self.bound) {
            return Err(invalid!("{what} = {v} outside [0, {}]", self.bound));
        }
        Ok(())
    }
}

/// Newsvendor loss h·(x−d)⁺ + b·(d−x)⁺ with both arguments in `[0, B]`.
pub fn loss(x: f64, d: f64, costs: &CostParams) -> Result<f64> {
    costs.check("order", x)?;
    costs.check("demand", d)?;
    Ok(costs.cost(x, d))
}

/// ℓ(x, d) − ℓ(x*, d); negative when the played order happened to beat the oracle.
pub fn realized_regret_step(x: f64, xstar: f64, d: f64, costs: &CostParams) -> Result<f64> {
    Ok(loss(x, d, costs)? - loss(xstar, d, costs)?)
}

/// Right-censored feedback. `censored == true` means a stockout (demand
/// exceeded the order); the complementary indicator `1 − censored` is the
/// conventional "event observed" flag.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CensoredObs {
    pub sales: f64,
    pub censored: bool,
}

/// Sales `min(d, x)` and the stockout flag `d > x`.
pub fn censor(x: f64, d: f64) -> Result<CensoredObs> {
    if !(x >= 0.0 && x.is_finite()) || !(d >= 0.0 && d.is_finite()) {
        return Err(invalid!("censor expects finite nonnegative inputs, got x={x}, d={d}"));
    }
    Ok(CensoredObs {
        sales: if d < x { d } else { x },
        censored: d > x,
    })
}

/// One round of interaction: the order placed and what it revealed.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HistoryStep {
    pub order: f64,
    pub obs: CensoredObs,
}

impl HistoryStep {
    pub fn new(order: f64, obs: CensoredObs) -> Result<Self> {
        let step = HistoryStep { order, obs };
        step.validate()?;
        Ok(step)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.order >= 0.0 && self.order.is_finite()) {
            return Err(invalid!("order {} must be finite and nonnegative", self.order));
        }
        if !(self.obs.sales >= 0.0 && self.obs.sales <= self.order) {
            return Err(invalid!(
                "sales {} must lie in [0, order={}]",
                self.obs.sales,
                self.order
            ));
        }
        if self.obs.censored && self.obs.sales != self.order {
            return Err(invalid!(
                "censored step must have sales == order ({} != {})",
                self.obs.sales,
                self.order
            ));
        }
        Ok(())
    }

    /// Demand proxy: revealed demand when uncensored, the order when censored.
    #[inline]
    pub fn proxy(&self) -> f64 {
        if self.obs.censored {
            self.order
        } else {
            self.obs.sales
        }
    }
}

/// Append-only sequence of history steps, oldest first.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct History {
    steps: Vec<HistoryStep>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        History {
            steps: Vec::with_capacity(n),
        }
    }

    pub fn from_steps(steps: Vec<HistoryStep>) -> Result<Self> {
        for s in &steps {
            s.validate()?;
        }
        Ok(History { steps })
    }

    pub fn push(&mut self, step: HistoryStep) -> Result<()> {
        step.validate()?;
        self.steps.push(step);
        Ok(())
    }

    /// Record the outcome of ordering `x` against demand `d`.
    pub fn record(&mut self, x: f64, d: f64) -> Result<CensoredObs> {
        let obs = censor(x, d)?;
        self.steps.push(HistoryStep { order: x, obs });
        Ok(obs)
    }

    #[inline]
    pub fn steps(&self) -> &[HistoryStep] {
        &self.steps
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The first `n` steps as a fresh history.
    pub fn prefix(&self, n: usize) -> History {
        History {
            steps: self.steps[..n.min(self.steps.len())].to_vec(),
        }
    }

    pub fn iter(&self) -> core::slice::Iter<'_, HistoryStep> {
        self.steps.iter()
    }
}

/// A finite demand law: sorted distinct atoms with positive probabilities.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiscreteLaw {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteLaw {
    /// Atoms are sorted and merged; probabilities are renormalized.
    pub fn new(atoms: &[(f64, f64)]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid!("discrete law needs at least one atom"));
        }
        let mut v: Vec<(f64, f64)> = atoms.to_vec();
        for &(x, p) in &v {
            if !(x >= 0.0 && x.is_finite()) || !(p > 0.0 && p.is_finite()) {
                return Err(invalid!("bad atom ({x}, {p})"));
            }
        }
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values: Vec<f64> = Vec::with_capacity(v.len());
        let mut probs: Vec<f64> = Vec::with_capacity(v.len());
        for (x, p) in v {
            if values.last() == Some(&x) {
                *probs.last_mut().unwrap() += p;
            } else {
                values.push(x);
                probs.push(p);
            }
        }
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        Ok(DiscreteLaw { values, probs })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of exactly `d`.
    pub fn pmf(&self, d: f64) -> f64 {
        match self.values.binary_search_by(|v| v.total_cmp(&d)) {
            Ok(i) => self.probs[i],
            Err(_) => 0.0,
        }
    }

    pub fn cdf(&self, d: f64) -> f64 {
        let mut acc = 0.0;
        for (&v, &p) in self.values.iter().zip(&self.probs) {
            if v <= d {
                acc += p;
            } else {
                break;
            }
        }
        acc.min(1.0)
    }

    /// P(D > d).
    pub fn sf(&self, d: f64) -> f64 {
        let mut acc = 0.0;
        for (&v, &p) in self.values.iter().zip(&self.probs).rev() {
            if v > d {
                acc += p;
            } else {
                break;
            }
        }
        acc
    }

    /// Left generalized inverse: the smallest atom with CDF ≥ u.
    pub fn quantile(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (&v, &p) in self.values.iter().zip(&self.probs) {
            acc += p;
            if acc >= u {
                return v;
            }
        }
        *self.values.last().unwrap()
    }

    /// Draw conditioned on `D > x`; `None` when no atom lies above `x`.
    pub fn sample_above<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R) -> Option<f64> {
        let s = self.sf(x);
        if s <= 0.0 {
            return None;
        }
        let target = unit(rng) * s;
        let mut acc = 0.0;
        let mut last = None;
        for (&v, &p) in self.values.iter().zip(&self.probs) {
            if v > x {
                acc += p;
                last = Some(v);
                if target < acc {
                    return Some(v);
                }
            }
        }
        last
    }
}

/// A parametric demand law.
///
/// | family | CDF |
/// |---|---|
/// | Weibull(rate θ, shape k) | 1 − exp(−θ dᵏ) |
/// | Exponential(rate λ) | 1 − exp(−λ d) |
/// | LogNormal(μ, σ) | Φ((ln d − μ)/σ) |
/// | Gompertz(η, β) | 1 − exp(−(η/β)(e^{βd} − 1)) |
/// | LogLogistic(scale α, shape β) | 1 / (1 + (d/α)^{−β}) |
///
/// Atomic families report their probability mass function through
/// [`DemandModel::density`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case", deny_unknown_fields))]
pub enum DemandModel {
    Weibull { rate: f64, shape: f64 },
    Exponential { rate: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Gompertz { eta: f64, beta: f64 },
    LogLogistic { scale: f64, shape: f64 },
    PointMass { value: f64 },
    Discrete(DiscreteLaw),
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid!("{name} must be positive and finite, got {v}"))
    }
}

impl DemandModel {
    pub fn weibull(rate: f64, shape: f64) -> Result<Self> {
        let m = DemandModel::Weibull { rate, shape };
        m.validate()?;
        Ok(m)
    }

    pub fn discrete(atoms: &[(f64, f64)]) -> Result<Self> {
        Ok(DemandModel::Discrete(DiscreteLaw::new(atoms)?))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DemandModel::Weibull { rate, shape } => {
                positive("weibull rate", rate)?;
                positive("weibull shape", shape)
            }
            DemandModel::Exponential { rate } => positive("exponential rate", rate),
            DemandModel::LogNormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(invalid!("lognormal mu must be finite"));
                }
                positive("lognormal sigma", sigma)
            }
            DemandModel::Gompertz { eta, beta } => {
                positive("gompertz eta", eta)?;
                positive("gompertz beta", beta)
            }
            DemandModel::LogLogistic { scale, shape } => {
                positive("loglogistic scale", scale)?;
                positive("loglogistic shape", shape)
            }
            DemandModel::PointMass { value } => {
                if value >= 0.0 && value.is_finite() {
                    Ok(())
                } else {
                    Err(invalid!("point mass must be finite and nonnegative"))
                }
            }
            DemandModel::Discrete(ref law) => {
                if law.values.is_empty() {
                    Err(invalid!("empty discrete law"))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Whether the law has a Lebesgue density.
    pub fn is_continuous(&self) -> bool {
        !matches!(self, DemandModel::PointMass { .. } | DemandModel::Discrete(_))
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            DemandModel::Weibull { .. } => "weibull",
            DemandModel::Exponential { .. } => "exponential",
            DemandModel::LogNormal { .. } => "lognormal",
            DemandModel::Gompertz { .. } => "gompertz",
            DemandModel::LogLogistic { .. } => "loglogistic",
            DemandModel::PointMass { .. } => "point_mass",
            DemandModel::Discrete(_) => "discrete",
        }
    }

    /// Flat parameter list in the order the constructor takes them.
    pub fn params(&self) -> Vec<f64> {
        match self {
            DemandModel::Weibull { rate, shape } => alloc::vec![*rate, *shape],
            DemandModel::Exponential { rate } => alloc::vec![*rate],
            DemandModel::LogNormal { mu, sigma } => alloc::vec![*mu, *sigma],
            DemandModel::Gompertz { eta, beta } => alloc::vec![*eta, *beta],
            DemandModel::LogLogistic { scale, shape } => alloc::vec![*scale, *shape],
            DemandModel::PointMass { value } => alloc::vec![*value],
            DemandModel::Discrete(law) => law
                .values
                .iter()
                .zip(&law.probs)
                .flat_map(|(&v, &p)| [v, p])
                .collect(),
        }
    }

    /// Inverse of [`DemandModel::params`] given the family name.
    pub fn from_params(family: &str, p: &[f64]) -> Result<Self> {
        let need = |n: usize| -> Result<()> {
            if p.len() == n {
                Ok(())
            } else {
                Err(invalid!("family {family} takes {n} parameters, got {}", p.len()))
            }
        };
        let m = match family {
            "weibull" => {
                need(2)?;
                DemandModel::Weibull { rate: p[0], shape: p[1] }
            }
            "exponential" => {
                need(1)?;
                DemandModel::Exponential { rate: p[0] }
            }
            "lognormal" => {
                need(2)?;
                DemandModel::LogNormal { mu: p[0], sigma: p[1] }
            }
            "gompertz" => {
                need(2)?;
                DemandModel::Gompertz { eta: p[0], beta: p[1] }
            }
            "loglogistic" => {
                need(2)?;
                DemandModel::LogLogistic { scale: p[0], shape: p[1] }
            }
            "point_mass" => {
                need(1)?;
                DemandModel::PointMass { value: p[0] }
            }
            "discrete" => {
                if p.is_empty() || p.len() % 2 != 0 {
                    return Err(invalid!("discrete parameters come in (value, prob) pairs"));
                }
                let atoms: Vec<(f64, f64)> = p.chunks(2).map(|c| (c[0], c[1])).collect();
                DemandModel::discrete(&atoms)?
            }
            other => return Err(invalid!("unknown demand family {other:?}")),
        };
        m.validate()?;
        Ok(m)
    }

    /// P(D ≤ d).
    pub fn cdf(&self, d: f64) -> f64 {
        match *self {
            DemandModel::PointMass { value } => {
                if d >= value {
                    1.0
                } else {
                    0.0
                }
            }
            DemandModel::Discrete(ref law) => law.cdf(d),
            _ if d <= 0.0 => 0.0,
            DemandModel::Weibull { rate, shape } => -math::expm1(-rate * math::powf(d, shape)),
            DemandModel::Exponential { rate } => -math::expm1(-rate * d),
            DemandModel::LogNormal { mu, sigma } => math::norm_cdf((math::ln(d) - mu) / sigma),
            DemandModel::Gompertz { eta, beta } => -math::expm1(-(eta / beta) * math::expm1(beta * d)),
            DemandModel::LogLogistic { scale, shape } => 1.0 / (1.0 + math::powf(d / scale, -shape)),
        }
    }

    /// P(D > d), computed directly where that is more accurate than 1 − CDF.
    pub fn sf(&self, d: f64) -> f64 {
        match *self {
            DemandModel::Discrete(ref law) => law.sf(d),
            DemandModel::PointMass { .. } => 1.0 - self.cdf(d),
            _ if d <= 0.0 => 1.0,
            DemandModel::Weibull { rate, shape } => math::exp(-rate * math::powf(d, shape)),
            DemandModel::Exponential { rate } => math::exp(-rate * d),
            DemandModel::LogNormal { mu, sigma } => math::norm_sf((math::ln(d) - mu) / sigma),
            DemandModel::Gompertz { eta, beta } => math::exp(-(eta / beta) * math::expm1(beta * d)),
            DemandModel::LogLogistic { scale, shape } => {
                let r = math::powf(d / scale, shape);
                1.0 / (1.0 + r)
            }
        }
    }

    /// Density for continuous families; probability mass for atomic ones.
    pub fn density(&self, d: f64) -> f64 {
        match *self {
            DemandModel::PointMass { value } => {
                if d == value {
                    1.0
                } else {
                    0.0
                }
            }
            DemandModel::Discrete(ref law) => law.pmf(d),
            _ if d < 0.0 => 0.0,
            DemandModel::Weibull { rate, shape } => {
                if d == 0.0 {
                    return if shape < 1.0 {
                        f64::INFINITY
                    } else if shape == 1.0 {
                        rate
                    } else {
                        0.0
                    };
                }
                let dk = math::powf(d, shape);
                rate * shape * dk / d * math::exp(-rate * dk)
            }
            DemandModel::Exponential { rate } => rate * math::exp(-rate * d),
            DemandModel::LogNormal { mu, sigma } => {
                if d == 0.0 {
                    return 0.0;
                }
                let z = (math::ln(d) - mu) / sigma;
                math::norm_pdf(z) / (sigma * d)
            }
            DemandModel::Gompertz { eta, beta } => {
                eta * math::exp(beta * d) * math::exp(-(eta / beta) * math::expm1(beta * d))
            }
            DemandModel::LogLogistic { scale, shape } => {
                if d == 0.0 {
                    return if shape < 1.0 {
                        f64::INFINITY
                    } else if shape == 1.0 {
                        1.0 / scale
                    } else {
                        0.0
                    };
                }
                let r = math::powf(d / scale, shape);
                (shape / d) * r / ((1.0 + r) * (1.0 + r))
            }
        }
    }

    /// Generalized inverse CDF for `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(invalid!("quantile level {u} outside (0,1)"));
        }
        Ok(self.quantile_unchecked(u))
    }

    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        match *self {
            DemandModel::Weibull { rate, shape } => {
                math::powf(-math::ln_1p(-u) / rate, 1.0 / shape)
            }
            DemandModel::Exponential { rate } => -math::ln_1p(-u) / rate,
            DemandModel::LogNormal { mu, sigma } => math::exp(mu + sigma * math::norm_ppf(u)),
            DemandModel::Gompertz { eta, beta } => {
                math::ln_1p(-beta * math::ln_1p(-u) / eta) / beta
            }
            DemandModel::LogLogistic { scale, shape } => {
                scale * math::powf(u / (1.0 - u), 1.0 / shape)
            }
            DemandModel::PointMass { value } => value,
            DemandModel::Discrete(ref law) => law.quantile(u),
        }
    }

    /// Inverse-transform draw clamped to `[0, bound]`.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R, bound: f64) -> f64 {
        let u = open01(rng);
        self.quantile_unchecked(u).clamp(0.0, bound)
    }

    /// E[(x − D)⁺] for the law clamped to `[0, bound]`.
    pub fn expected_overage(&self, x: f64, bound: f64) -> f64 {
        let x = x.clamp(0.0, bound);
        match self {
            DemandModel::PointMass { value } => (x - value.clamp(0.0, bound)).max(0.0),
            DemandModel::Discrete(law) => law
                .values
                .iter()
                .zip(&law.probs)
                .map(|(&v, &p)| p * (x - v.clamp(0.0, bound)).max(0.0))
                .sum(),
            _ => math::integrate(|u| self.cdf(u), 0.0, x, QUAD_TOL),
        }
    }

    /// E[D] for the law clamped to `[0, bound]`.
    pub fn clamped_mean(&self, bound: f64) -> f64 {
        match self {
            DemandModel::PointMass { value } => value.clamp(0.0, bound),
            DemandModel::Discrete(law) => law
                .values
                .iter()
                .zip(&law.probs)
                .map(|(&v, &p)| p * v.clamp(0.0, bound))
                .sum(),
            _ => math::integrate(|u| self.sf(u), 0.0, bound, QUAD_TOL),
        }
    }

    /// Bayes risk E[ℓ(x, D)] = h·∫₀ˣ F + b·∫ₓᴮ (1 − F) for the clamped law.
    pub fn bayes_risk(&self, x: f64, costs: &CostParams) -> f64 {
        let bound = costs.bound;
        let x = x.clamp(0.0, bound);
        match self {
            DemandModel::PointMass { .. } | DemandModel::Discrete(_) => {
                let over = self.expected_overage(x, bound);
                let under = self.clamped_mean(bound) - x + over;
                costs.h * over + costs.b * under
            }
            _ => {
                let over = math::integrate(|u| self.cdf(u), 0.0, x, QUAD_TOL);
                let under = math::integrate(|u| self.sf(u), x, bound, QUAD_TOL);
                costs.h * over + costs.b * under
            }
        }
    }
}

/// CDF of a demand law, free-function form.
pub fn demand_cdf(model: &DemandModel, d: f64) -> f64 {
    model.cdf(d)
}

/// Generalized inverse CDF, free-function form.
pub fn demand_quantile(model: &DemandModel, u: f64) -> Result<f64> {
    model.quantile(u)
}

/// Density (or mass for atomic laws), free-function form.
pub fn demand_density(model: &DemandModel, d: f64) -> f64 {
    model.density(d)
}

/// Clamped inverse-transform sample, free-function form.
pub fn demand_sample<R: RngCore + ?Sized>(model: &DemandModel, rng: &mut R, bound: f64) -> f64 {
    model.sample(rng, bound)
}

/// The clairvoyant order: left γ-quantile of the demand law, clamped to `[0, B]`.
pub fn optimal_order(model: &DemandModel, costs: &CostParams) -> f64 {
    model.quantile_unchecked(costs.gamma()).clamp(0.0, costs.bound)
}

/// Distribution of one scalar parameter under a task prior.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", deny_unknown_fields))]
pub enum ParamPrior {
    Fixed(f64),
    Uniform(f64, f64),
    Gamma { shape: f64, rate: f64 },
}

impl ParamPrior {
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ParamPrior::Fixed(v) => v,
            ParamPrior::Uniform(lo, hi) => lo + (hi - lo) * unit(rng),
            ParamPrior::Gamma { shape, rate } => rand_distr::Gamma::new(shape, 1.0 / rate)
                .expect("validated gamma prior")
                .sample(rng),
        }
    }

    pub fn median(&self) -> f64 {
        match *self {
            ParamPrior::Fixed(v) => v,
            ParamPrior::Uniform(lo, hi) => 0.5 * (lo + hi),
            ParamPrior::Gamma { shape, rate } => math::gamma_quantile(shape, rate, 0.5),
        }
    }

    /// Smallest and largest value in the support.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            ParamPrior::Fixed(v) => (v, v),
            ParamPrior::Uniform(lo, hi) => (lo, hi),
            ParamPrior::Gamma { .. } => (0.0, f64::INFINITY),
        }
    }

    fn validate(&self, name: &str, must_be_positive: bool) -> Result<()> {
        match *self {
            ParamPrior::Fixed(v) => {
                if !v.is_finite() || (must_be_positive && v <= 0.0) {
                    return Err(invalid!("{name}: fixed value {v} not admissible"));
                }
            }
            ParamPrior::Uniform(lo, hi) => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(invalid!("{name}: uniform range [{lo}, {hi}] is empty"));
                }
                if must_be_positive && lo <= 0.0 {
                    return Err(invalid!("{name}: uniform range must be positive"));
                }
            }
            ParamPrior::Gamma { shape, rate } => {
                if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
                    return Err(invalid!("{name}: gamma hyperparameters must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Prior over one demand family's parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "snake_case", deny_unknown_fields))]
pub enum FamilyPrior {
    Weibull { rate: ParamPrior, shape: ParamPrior },
    Exponential { rate: ParamPrior },
    LogNormal { mu: ParamPrior, sigma: ParamPrior },
    Gompertz { eta: ParamPrior, beta: ParamPrior },
    LogLogistic { scale: ParamPrior, shape: ParamPrior },
    PointMass { value: ParamPrior },
    Fixed { model: DemandModel },
}

impl FamilyPrior {
    fn validate(&self) -> Result<()> {
        match self {
            FamilyPrior::Weibull { rate, shape } => {
                rate.validate("weibull.rate", true)?;
                shape.validate("weibull.shape", true)
            }
            FamilyPrior::Exponential { rate } => rate.validate("exponential.rate", true),
            FamilyPrior::LogNormal { mu, sigma } => {
                mu.validate("lognormal.mu", false)?;
                sigma.validate("lognormal.sigma", true)
            }
            FamilyPrior::Gompertz { eta, beta } => {
                eta.validate("gompertz.eta", true)?;
                beta.validate("gompertz.beta", true)
            }
            FamilyPrior::LogLogistic { scale, shape } => {
                scale.validate("loglogistic.scale", true)?;
                shape.validate("loglogistic.shape", true)
            }
            FamilyPrior::PointMass { value } => value.validate("point_mass.value", false),
            FamilyPrior::Fixed { model } => model.validate(),
        }
    }

    fn build(&self, mut pick: impl FnMut(&ParamPrior) -> f64) -> DemandModel {
        match self {
            FamilyPrior::Weibull { rate, shape } => DemandModel::Weibull {
                rate: pick(rate),
                shape: pick(shape),
            },
            FamilyPrior::Exponential { rate } => DemandModel::Exponential { rate: pick(rate) },
            FamilyPrior::LogNormal { mu, sigma } => DemandModel::LogNormal {
                mu: pick(mu),
                sigma: pick(sigma),
            },
            FamilyPrior::Gompertz { eta, beta } => DemandModel::Gompertz {
                eta: pick(eta),
                beta: pick(beta),
            },
            FamilyPrior::LogLogistic { scale, shape } => DemandModel::LogLogistic {
                scale: pick(scale),
                shape: pick(shape),
            },
            FamilyPrior::PointMass { value } => DemandModel::PointMass {
                value: pick(value).max(0.0),
            },
            FamilyPrior::Fixed { model } => model.clone(),
        }
    }
}

/// One mixture component of a task prior.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct PriorComponent {
    #[cfg_attr(feature = "serde", serde(default = "one"))]
    pub weight: f64,
    pub model: FamilyPrior,
}

#[cfg(feature = "serde")]
fn one() -> f64 {
    1.0
}

/// Prior ξ over demand laws: a weighted mixture of family priors.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TaskPrior {
    pub components: Vec<PriorComponent>,
}

impl TaskPrior {
    pub fn single(model: FamilyPrior) -> Self {
        TaskPrior {
            components: alloc::vec![PriorComponent { weight: 1.0, model }],
        }
    }

    /// Degenerate prior that always returns `model`.
    pub fn fixed(model: DemandModel) -> Self {
        Self::single(FamilyPrior::Fixed { model })
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(invalid!("task prior has no components"));
        }
        for c in &self.components {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(invalid!("prior component weight must be positive"));
            }
            c.model.validate()?;
        }
        Ok(())
    }

    /// Draw a demand law P* ~ ξ.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> DemandModel {
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let mut target = unit(rng) * total;
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            if target < c.weight {
                chosen = c;
                break;
            }
            target -= c.weight;
        }
        chosen.model.build(|p| p.sample(rng))
    }

    /// Per-component task with every parameter at its prior median.
    pub fn median_tasks(&self) -> Vec<DemandModel> {
        self.components
            .iter()
            .map(|c| c.model.build(|p| p.median()))
            .collect()
    }

    /// Default demand cap: the largest 0.9999-quantile among the
    /// prior-median tasks of each component.
    pub fn default_bound(&self) -> f64 {
        self.median_tasks()
            .iter()
            .map(|m| m.quantile_unchecked(0.9999))
            .fold(0.0, f64::max)
    }
}

/// Draw a task from a prior, free-function form.
pub fn sample_task<R: RngCore + ?Sized>(prior: &TaskPrior, rng: &mut R) -> DemandModel {
    prior.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    fn costs() -> CostParams {
        CostParams::new(1.0, 2.0, 10.0).unwrap()
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(5.0, 3.0, &costs()).unwrap(), 2.0);
        assert_eq!(loss(3.0, 5.0, &costs()).unwrap(), 4.0);
        assert_eq!(loss(4.0, 4.0, &costs()).unwrap(), 0.0);
        assert!(loss(11.0, 3.0, &costs()).is_err());
        assert!(loss(1.0, -0.5, &costs()).is_err());
    }

    #[test]
    fn censor_examples() {
        let o = censor(4.0, 6.0).unwrap();
        assert_eq!((o.sales, o.censored), (4.0, true));
        let o = censor(4.0, 2.0).unwrap();
        assert_eq!((o.sales, o.censored), (2.0, false));
        let o = censor(4.0, 4.0).unwrap();
        assert_eq!((o.sales, o.censored), (4.0, false));
    }

    #[test]
    fn regret_step_examples() {
        let c = costs();
        assert_eq!(realized_regret_step(3.0, 3.0, 7.0, &c).unwrap(), 0.0);
        assert_eq!(realized_regret_step(5.0, 3.0, 3.0, &c).unwrap(), 2.0);
        assert_eq!(realized_regret_step(2.0, 3.0, 3.0, &c).unwrap(), 2.0);
    }

    #[test]
    fn weibull_values() {
        let m = DemandModel::weibull(0.5, 1.5).unwrap();
        assert!((m.cdf(1.0) - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!((m.cdf(1.0) - 0.39347).abs() < 1e-5);
        let q = m.quantile(0.9).unwrap();
        let direct = ((-(0.1f64).ln()) / 0.5).powf(1.0 / 1.5);
        assert!((q - direct).abs() < 1e-12);
        assert!((q - 2.7683).abs() < 1e-3);
        assert!(m.quantile(1.0).is_err());
        assert!(m.quantile(0.0).is_err());
    }

    #[test]
    fn optimal_order_examples() {
        let c = CostParams::new(1.0, 9.0, 10.0).unwrap();
        let m = DemandModel::weibull(0.5, 1.5).unwrap();
        assert!((optimal_order(&m, &c) - 2.767_985_365).abs() < 1e-8);
        assert_eq!(optimal_order(&DemandModel::PointMass { value: 3.0 }, &c), 3.0);
        let half = CostParams::new(1.0, 1.0, 10.0).unwrap();
        let d = DemandModel::discrete(&[(1.0, 0.5), (4.0, 0.5)]).unwrap();
        assert_eq!(optimal_order(&d, &half), 1.0);
    }

    #[test]
    fn point_mass_quantile() {
        let m = DemandModel::PointMass { value: 1.0 };
        for &u in &[0.01, 0.5, 0.99] {
            assert_eq!(m.quantile(u).unwrap(), 1.0);
        }
    }

    #[test]
    fn gamma_is_recomputed() {
        let c = CostParams::new(1.0, 9.0, 5.0).unwrap();
        assert_eq!(c.gamma(), 9.0 / 10.0);
        let c = CostParams::from_service_level(0.98, 5.0).unwrap();
        assert!((c.gamma() - 0.98).abs() < 1e-12);
        assert!(CostParams::new(0.0, 1.0, 1.0).is_err());
        assert!(CostParams::new(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn censored_history_invariant() {
        let bad = HistoryStep {
            order: 4.0,
            obs: CensoredObs {
                sales: 3.0,
                censored: true,
            },
        };
        assert!(bad.validate().is_err());
        let mut h = History::new();
        assert!(h.push(bad).is_err());
        h.record(4.0, 6.0).unwrap();
        assert_eq!(h.steps()[0].obs.sales, 4.0);
    }

    #[test]
    fn task_prior_sampling() {
        let mut rng = from_seed(1);
        let fixed = TaskPrior::fixed(DemandModel::weibull(0.5, 1.5).unwrap());
        assert_eq!(fixed.sample(&mut rng), DemandModel::weibull(0.5, 1.5).unwrap());

        let boxed = TaskPrior::single(FamilyPrior::Weibull {
            rate: ParamPrior::Uniform(0.2, 0.4),
            shape: ParamPrior::Fixed(1.0),
        });
        for _ in 0..1000 {
            match boxed.sample(&mut rng) {
                DemandModel::Weibull { rate, .. } => assert!((0.2..=0.4).contains(&rate)),
                other => panic!("unexpected {other:?}"),
            }
        }

        let gamma = TaskPrior::single(FamilyPrior::Exponential {
            rate: ParamPrior::Gamma { shape: 2.0, rate: 1.0 },
        });
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| match gamma.sample(&mut rng) {
                DemandModel::Exponential { rate } => rate,
                _ => unreachable!(),
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn default_bound_is_high_quantile() {
        let p = TaskPrior::fixed(DemandModel::weibull(0.5, 1.5).unwrap());
        let b = p.default_bound();
        let m = DemandModel::weibull(0.5, 1.5).unwrap();
        assert!((m.cdf(b) - 0.9999).abs() < 1e-9);
    }

    #[test]
    fn discrete_tail_sampling() {
        let law = DiscreteLaw::new(&[(1.0, 0.25), (2.0, 0.25), (3.0, 0.5)]).unwrap();
        let mut rng = from_seed(9);
        let mut counts = [0usize; 2];
        for _ in 0..20_000 {
            let v = law.sample_above(1.0, &mut rng).unwrap();
            assert!(v > 1.0);
            counts[(v as usize) - 2] += 1;
        }
        let frac = counts[1] as f64 / 20_000.0;
        assert!((frac - 2.0 / 3.0).abs() < 0.02);
        assert!(law.sample_above(3.0, &mut rng).is_none());
    }
}
