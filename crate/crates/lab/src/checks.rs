//! Invariant checks run by `icgps check`. Each check yields one
//! diagnostics row holding its worst-case statistic.

use icgps_core::bco::{g_objective, unbiasedness_check};
use icgps_core::icgps::{empirical_law, exact_gps_discrete, icgps_act, total_variation, DiscreteBayesKernel, IcgpsConfig};
use icgps_core::math;
use icgps_core::rng::{open01, stream, unit, DetRng};
use icgps_core::train::true_censored_nll;
use icgps_core::{
    censor, km_fit, CompletionModel, CostParams, DemandModel, DiscreteLaw, FlowParams, FlowShape, History, HistoryStep,
    CONTEXT_DIM,
};

use crate::error::Result;
use crate::experiments::Diagnostic;

/// Deliberate faults, used to confirm that a check can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// Negate the analytic gradient before comparing it with finite differences.
    pub flip_gradient_sign: bool,
}

pub const CHECK_NAMES: [&str; 12] = [
    "gradient.finite_difference",
    "flow.round_trip",
    "flow.density_integral",
    "flow.tail_ks",
    "censored_nll.rate_half",
    "censored_nll.rate_double",
    "probability_matching.tv",
    "bco.unbiased",
    "bco.convexity",
    "bco.slope",
    "km.ecdf",
    "km.hand_example",
];

pub fn run_checks(seed: u64, faults: Faults) -> Result<Vec<Diagnostic>> {
    let mut d = vec![gradient_check(seed, faults)?];
    d.extend(flow_checks(seed)?);
    d.extend(censored_nll_checks(seed)?);
    d.push(probability_matching(seed)?);
    d.extend(bco_checks(seed)?);
    d.extend(km_checks(seed));
    debug_assert_eq!(d.iter().map(|x| x.name.as_str()).collect::<Vec<_>>(), CHECK_NAMES);
    Ok(d)
}

fn random_model(rng: &mut DetRng, bins: usize, bound: f64, hidden: &[usize]) -> Result<CompletionModel> {
    let shape = FlowShape::new(bins, 4.0, bound)?;
    let mut m = CompletionModel::new(shape, CONTEXT_DIM, hidden, rng)?;
    for p in m.net.params_mut() {
        *p += 0.3 * (2.0 * unit(rng) - 1.0);
    }
    Ok(m)
}

fn random_context(rng: &mut DetRng) -> Vec<f64> {
    (0..CONTEXT_DIM).map(|_| 4.0 * unit(rng) - 2.0).collect()
}

/// Central differences with step 1e-5 against the analytic gradient of the
/// censored NLL with respect to every network parameter, on 50 random
/// (context, order, observation) triples.
pub fn gradient_check(seed: u64, faults: Faults) -> Result<Diagnostic> {
    const EPS: f64 = 1e-5;
    let mut rng = stream(seed, "check-grad", 0, 0, 0);
    let mut m = random_model(&mut rng, 8, 10.0, &[12, 12])?;
    let mut worst = 0f64;
    for trial in 0..50 {
        let ctx = random_context(&mut rng);
        let p = m.hyper_forward(&ctx)?;
        let d = p.transform(4.0 * unit(&mut rng) - 2.0).clamp(0.05, 9.95);
        let censored = trial % 2 == 1;
        let x = if censored { d } else { d + (10.0 - d) * unit(&mut rng) };
        let obs = censor(x, if censored { x + 1.0 } else { d })?;
        let (_, mut g) = m.censored_nll_grad(&ctx, x, &obs)?;
        if faults.flip_gradient_sign {
            g.iter_mut().for_each(|v| *v = -*v);
        }
        for (i, gi) in g.iter().enumerate() {
            let orig = m.net.params()[i];
            m.net.params_mut()[i] = orig + EPS;
            let fp = m.censored_nll(&ctx, x, &obs)?;
            m.net.params_mut()[i] = orig - EPS;
            let fm = m.censored_nll(&ctx, x, &obs)?;
            m.net.params_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * EPS);
            let rel = (fd - gi).abs() / fd.abs().max(gi.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    Ok(Diagnostic::new(CHECK_NAMES[0], worst, "< 1e-4", worst < 1e-4))
}

/// Round trip, normalization and tail sampling of 10 random flows.
pub fn flow_checks(seed: u64) -> Result<Vec<Diagnostic>> {
    let mut rng = stream(seed, "check-flow", 0, 0, 0);
    let m = random_model(&mut rng, 8, 10.0, &[12])?;
    let (mut round, mut mass, mut ks) = (0f64, 0f64, 0f64);
    for k in 0..10 {
        let p = m.hyper_forward(&random_context(&mut rng))?;
        round = round.max(round_trip_error(&p)?);
        mass = mass.max((density_integral(&p) - 1.0).abs());
        let x = p.quantile(0.1 + 0.8 * unit(&mut rng))?;
        let mut trng = stream(seed, "check-tail", k, 0, 0);
        ks = ks.max(tail_ks(&p, x, 10_000, &mut trng)?);
    }
    Ok(vec![
        Diagnostic::new(CHECK_NAMES[1], round, "< 1e-6", round < 1e-6),
        Diagnostic::new(CHECK_NAMES[2], mass, "< 1e-3", mass < 1e-3),
        Diagnostic::new(CHECK_NAMES[3], ks, "< 0.02", ks < 0.02),
    ])
}

/// Worst `|F(Q(u)) − u|` over u = 0.01, …, 0.99. Where the quantile is
/// clamped to an end of `[0, B]`, the level must lie in the clamped mass.
pub fn round_trip_error(p: &FlowParams) -> Result<f64> {
    let mut worst = 0f64;
    for i in 1..100 {
        let u = i as f64 / 100.0;
        let q = p.quantile(u)?;
        let err = if q <= 0.0 {
            (u - p.cdf(0.0)).max(0.0)
        } else if q >= p.bound() {
            (p.cdf(p.bound()) - u).max(0.0)
        } else {
            (p.cdf(q) - u).abs()
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Trapezoid rule with 10⁴ points over the latent range `Φ⁻¹(1e-9)` to
/// `Φ⁻¹(1 − 1e-9)` pushed through the flow.
pub fn density_integral(p: &FlowParams) -> f64 {
    let (a, b) = (p.transform(math::norm_ppf(1e-9)), p.transform(math::norm_ppf(1.0 - 1e-9)));
    let n = 10_000;
    let h = (b - a) / (n - 1) as f64;
    let f = |d: f64| math::exp(p.log_density(d));
    let mut s = 0.5 * (f(a) + f(b));
    for i in 1..n - 1 {
        s += f(a + h * i as f64);
    }
    s * h
}

/// Kolmogorov–Smirnov distance between `n` tail draws above `x` and the
/// conditional law `(F(d) − F(x)) / (1 − F(x))`, whose mass beyond `B`
/// sits at `B`.
pub fn tail_ks(p: &FlowParams, x: f64, n: usize, rng: &mut DetRng) -> Result<f64> {
    let mut s: Vec<f64> = (0..n).map(|_| p.tail_sample(x, rng)).collect::<icgps_core::Result<_>>()?;
    s.sort_by(|a, b| a.total_cmp(b));
    let sx = p.sf(x);
    let g = |d: f64| ((p.cdf(d) - p.cdf(x)) / sx).clamp(0.0, 1.0);
    let nf = n as f64;
    let mut worst = 0f64;
    let mut i = 0;
    while i < n {
        let v = s[i];
        let mut j = i;
        while j < n && s[j] == v {
            j += 1;
        }
        let below = g(v);
        let at = if v >= p.bound() { 1.0 } else { below };
        worst = worst.max((i as f64 / nf - below).abs()).max((j as f64 / nf - at).abs());
        i = j;
    }
    Ok(worst)
}

/// On 10⁴ censored observations of Weibull(rate 0.5, shape 1.5), the true
/// law's mean censored NLL must beat the rate-halved and rate-doubled laws
/// by at least five standard errors of the paired difference.
pub fn censored_nll_checks(seed: u64) -> Result<Vec<Diagnostic>> {
    let truth = DemandModel::weibull(0.5, 1.5)?;
    let bound = 20.0;
    let top = truth.quantile(0.95)?;
    let mut rng = stream(seed, "check-nll", 0, 0, 0);
    let data: Vec<(f64, f64)> = (0..10_000)
        .map(|_| {
            let x = top * unit(&mut rng);
            (x, truth.sample(&mut rng, bound))
        })
        .collect();
    let mut out = Vec::new();
    for (k, factor) in [(4, 0.5), (5, 2.0)] {
        let alt = DemandModel::weibull(0.5 * factor, 1.5)?;
        let diffs = data
            .iter()
            .map(|&(x, d)| {
                let obs = censor(x, d)?;
                Ok(true_censored_nll(&alt, x, &obs) - true_censored_nll(&truth, x, &obs))
            })
            .collect::<Result<Vec<f64>>>()?;
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let z = mean / math::sqrt(var / n);
        out.push(Diagnostic::new(CHECK_NAMES[k], z, ">= 5 (mean excess NLL in SE units)", z >= 5.0));
    }
    Ok(out)
}

/// Two finite tasks, horizon 6, one rollout per decision and no warm-up:
/// 10⁵ ICGPS actions under the exact posterior kernel against the
/// enumerated law of the oracle action.
pub fn probability_matching(seed: u64) -> Result<Diagnostic> {
    let tasks = vec![
        (DiscreteLaw::new(&[(1.0, 0.5), (2.0, 0.3), (3.0, 0.2)])?, 0.5),
        (DiscreteLaw::new(&[(2.0, 0.2), (3.0, 0.3), (4.0, 0.5)])?, 0.5),
    ];
    let mut history = History::new();
    for (x, d) in [(2.5, 2.0), (1.5, 3.0), (3.5, 3.0)] {
        history.push(HistoryStep::new(x, censor(x, d)?)?)?;
    }
    let (gamma, horizon) = (0.7, 6);
    let exact = exact_gps_discrete(&tasks, &history, gamma, horizon)?;
    let kernel = DiscreteBayesKernel::new(&tasks, 4.0)?;
    let cfg = IcgpsConfig {
        rollouts: 1,
        warmup: 0,
        horizon,
        ..Default::default()
    };
    let actions = (0..100_000u64)
        .map(|i| icgps_act(kernel.clone(), &cfg, gamma, &history, icgps_core::rng::derive_seed(seed, &[i])))
        .collect::<icgps_core::Result<Vec<f64>>>()?;
    let tv = total_variation(&empirical_law(&actions), &exact);
    Ok(Diagnostic::new(CHECK_NAMES[6], tv, "< 0.02", tv < 0.02))
}

fn bco_models() -> Result<Vec<DemandModel>> {
    Ok(vec![
        DemandModel::weibull(0.5, 1.5)?,
        DemandModel::Exponential { rate: 0.7 },
        DemandModel::LogNormal { mu: 0.5, sigma: 0.6 },
        DemandModel::Gompertz { eta: 0.2, beta: 0.6 },
        DemandModel::LogLogistic { scale: 1.5, shape: 3.0 },
    ])
}

/// Unbiasedness of the derived feedback on a 30-cell grid (5 families,
/// 3 orders, 2 cost pairs) at 10⁵ draws each, plus convexity and slope
/// bounds of `g` on a 201-point grid.
pub fn bco_checks(seed: u64) -> Result<Vec<Diagnostic>> {
    let bound = 10.0;
    let cost_grid = [CostParams::new(1.0, 1.0, bound)?, CostParams::new(1.0, 9.0, bound)?];
    let models = bco_models()?;
    let mut worst_z = 0f64;
    let mut all_pass = true;
    for (mi, m) in models.iter().enumerate() {
        for (ci, c) in cost_grid.iter().enumerate() {
            for (xi, x) in [0.5, 1.5, 3.0].into_iter().enumerate() {
                let mut rng = stream(seed, "check-bco", mi as u64, ci as u64, xi as u64);
                let r = unbiasedness_check(m, x, c, 100_000, &mut rng)?;
                all_pass &= r.pass;
                worst_z = worst_z.max((r.mean - r.g).abs() / r.se.max(f64::MIN_POSITIVE));
            }
        }
    }
    let (mut convex, mut slope_excess) = (f64::INFINITY, f64::NEG_INFINITY);
    for m in &models {
        for c in &cost_grid {
            let g: Vec<f64> = (0..=200).map(|i| g_objective(m, bound * i as f64 / 200.0, c)).collect();
            let h = bound / 200.0;
            for w in g.windows(3) {
                convex = convex.min(w[2] - 2.0 * w[1] + w[0]);
            }
            for w in g.windows(2) {
                let s = (w[1] - w[0]) / h;
                slope_excess = slope_excess.max(s - c.h).max(-c.b - s);
            }
        }
    }
    Ok(vec![
        Diagnostic::new(CHECK_NAMES[7], worst_z, "<= 3 (|mean - g| in SE units)", all_pass),
        Diagnostic::new(CHECK_NAMES[8], convex, ">= -1e-8", convex >= -1e-8),
        Diagnostic::new(CHECK_NAMES[9], slope_excess, "<= 1e-6", slope_excess <= 1e-6),
    ])
}

/// KM without censoring equals the ECDF exactly; the product-limit
/// example with events {1, 3} and a censoring at 2 is reproduced exactly.
pub fn km_checks(seed: u64) -> Vec<Diagnostic> {
    let mut rng = stream(seed, "check-km", 0, 0, 0);
    let mut h = History::new();
    let mut values = Vec::new();
    for _ in 0..200 {
        // Coarse grid so ties occur.
        let d = (20.0 * open01(&mut rng)).floor() / 4.0;
        values.push(d);
        h.push(HistoryStep::new(10.0, censor(10.0, d).expect("d below order")).expect("valid step"))
            .expect("valid step");
    }
    let km = km_fit(&h);
    let mut worst = 0f64;
    for i in 0..=44 {
        let z = i as f64 / 4.0 - 0.5;
        let ecdf = values.iter().filter(|&&v| v <= z).count() as f64 / values.len() as f64;
        worst = worst.max((km.cdf(z) - ecdf).abs());
    }

    let mut hand = History::new();
    for (x, d) in [(5.0, 1.0), (2.0, 4.0), (5.0, 3.0)] {
        hand.push(HistoryStep::new(x, censor(x, d).expect("valid")).expect("valid")).expect("valid");
    }
    let km = km_fit(&hand);
    // Three at risk at 1 (one event), one at risk at 3 (one event).
    let s1 = 1.0 - 1.0 / 3.0;
    let expected = [(0.5, 1.0), (1.0, s1), (2.0, s1), (2.5, s1), (3.0, 0.0), (4.0, 0.0)];
    let hand_err = expected
        .iter()
        .map(|&(z, s)| (km.survival(z) - s).abs())
        .fold(0.0, f64::max);
    vec![
        Diagnostic::new(CHECK_NAMES[10], worst, "== 0", worst == 0.0),
        Diagnostic::new(CHECK_NAMES[11], hand_err, "== 0", hand_err == 0.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_flip_is_caught() {
        let d = gradient_check(1, Faults { flip_gradient_sign: true }).unwrap();
        assert!(!d.pass, "{d:?}");
    }

    #[test]
    fn km_rows_pass() {
        assert!(km_checks(3).iter().all(|d| d.pass));
    }
}
