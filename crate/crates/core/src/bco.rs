//! Observable unbiased feedback for the risk-equivalent convex objective
//! `g(x) = (h+b)·E[(x−D)⁺] − b·x`.
//!
//! With `U ~ Unif[0, x]` independent of demand, `Z = 1{D ≤ U}` is computable
//! from the censored observation alone (a stockout means `D > x ≥ U`), and
//! `Y = (h+b)·x·Z − b·x` has mean `g(x)`. Diagnostic only; no policy uses it.

use rand::RngCore;

use crate::env::{censor, CensoredObs, CostParams, DemandModel};
use crate::error::{invalid, Result};
use crate::math;
use crate::rng::unit;

/// One draw of the derived feedback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedFeedback {
    pub u: f64,
    pub z: bool,
    pub y: f64,
}

/// `Z` from `(S, C, U)`: false after a stockout, else `S ≤ U`.
pub fn z_from_obs(obs: &CensoredObs, order: f64, u: f64) -> Result<bool> {
    if !(u >= 0.0 && u <= order) {
        return Err(invalid!("auxiliary draw {u} outside [0, {order}]"));
    }
    Ok(!obs.censored && obs.sales <= u)
}

/// Draw `U`, derive `Z` and the payoff `Y`.
pub fn derived_feedback<R: RngCore + ?Sized>(x: f64, obs: &CensoredObs, rng: &mut R, costs: &CostParams) -> Result<DerivedFeedback> {
    if !(x >= 0.0 && x <= costs.bound) {
        return Err(invalid!("order {x} outside [0, {}]", costs.bound));
    }
    let u = if x == 0.0 { 0.0 } else { x * unit(rng) };
    let z = z_from_obs(obs, x, u)?;
    let y = (costs.h + costs.b) * x * if z { 1.0 } else { 0.0 } - costs.b * x;
    Ok(DerivedFeedback { u, z, y })
}

/// `g(x)` by quadrature of `E[(x−D)⁺] = ∫₀ˣ F`.
pub fn g_objective(model: &DemandModel, x: f64, costs: &CostParams) -> f64 {
    (costs.h + costs.b) * model.expected_overage(x, costs.bound) - costs.b * x
}

/// Monte Carlo check of `E[Y] = g(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnbiasednessCheck {
    pub mean: f64,
    pub se: f64,
    pub g: f64,
    pub pass: bool,
}

/// Simulate `n` rounds at order `x`; pass iff `|mean − g| ≤ 3·se`.
pub fn unbiasedness_check<R: RngCore + ?Sized>(model: &DemandModel, x: f64, costs: &CostParams, n: usize, rng: &mut R) -> Result<UnbiasednessCheck> {
    if n < 1000 {
        return Err(invalid!("unbiasedness check needs at least 1000 draws"));
    }
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..n {
        let d = model.sample(rng, costs.bound);
        let fb = derived_feedback(x, &censor(x, d)?, rng, costs)?;
        sum += fb.y;
        sumsq += fb.y * fb.y;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    let se = math::sqrt(var / nf);
    let g = g_objective(model, x, costs);
    let pass = (mean - g).abs() <= 3.0 * se || (se == 0.0 && (mean - g).abs() < 1e-12);
    Ok(UnbiasednessCheck { mean, se, g, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn z_rules() {
        let c = CensoredObs { sales: 2.0, censored: true };
        assert!(!z_from_obs(&c, 2.0, 1.0).unwrap());
        let u = CensoredObs { sales: 1.5, censored: false };
        assert!(z_from_obs(&u, 3.0, 2.0).unwrap());
        assert!(!z_from_obs(&u, 3.0, 1.0).unwrap());
        assert!(z_from_obs(&u, 3.0, 3.5).is_err());
    }

    #[test]
    fn feedback_values() {
        let costs = CostParams::new(1.0, 1.0, 5.0).unwrap();
        let mut rng = from_seed(1);
        let fb = derived_feedback(0.0, &censor(0.0, 1.0).unwrap(), &mut rng, &costs).unwrap();
        assert_eq!(fb.y, 0.0);
        for _ in 0..100 {
            let fb = derived_feedback(2.0, &censor(2.0, 1.0).unwrap(), &mut rng, &costs).unwrap();
            assert!(fb.y == 2.0 || fb.y == -2.0);
        }
    }

    #[test]
    fn point_mass_objective() {
        let costs = CostParams::new(1.0, 1.0, 5.0).unwrap();
        let m = DemandModel::PointMass { value: 1.0 };
        assert!(g_objective(&m, 2.0, &costs).abs() < 1e-9);
        assert_eq!(g_objective(&m, 0.0, &costs), 0.0);
        let mut rng = from_seed(2);
        let r = unbiasedness_check(&m, 2.0, &costs, 100_000, &mut rng).unwrap();
        assert!(r.pass, "{r:?}");
        let r = unbiasedness_check(&m, 0.0, &costs, 1000, &mut rng).unwrap();
        assert!(r.pass && r.mean == 0.0 && r.g == 0.0);
    }
}
