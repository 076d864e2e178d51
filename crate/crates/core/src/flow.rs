//! One-dimensional conditional monotone flow.
//!
//! Demand is `D = T(Z)` with `Z ~ N(0, 1)` and `T` strictly increasing and
//! piecewise linear with `K` bins. The bins split `[0, B]` into equal
//! demand intervals `[jg, (j+1)g)` (`g = B/K`); what is learned is where each
//! bin edge sits in latent space, i.e. the latent knots `z₀ < z₁ < … < z_K`.
//! Beyond the outer knots `T` continues linearly with its own tail slopes,
//! and everything it sends outside `[0, B]` is clamped onto the endpoints.
//! A small MLP hypernetwork maps the context vector to
//!
//! ```text
//! raw = [r₀, r₁ … r_K, r_left, r_right]
//! z₀  = −L + c·r₀
//! z_j = z_{j−1} + c·(softplus(r_j) + ε_w)        c = 2L/K
//! s   = g·(softplus(r_tail) + ε_w)
//! ```
//!
//! so a network with zero output places the knots evenly on `[−L, L]`.
//! Because the bin a demand value falls in never depends on the parameters,
//! the per-observation likelihood is smooth in them.
//!
//! The CDF is `Φ(T⁻¹(d))`, the inverse CDF `T(Φ⁻¹(u))` clamped to `[0, B]`,
//! and the density `φ(T⁻¹(d)) / T′(T⁻¹(d))`. An uncensored observation at
//! `B` or above carries the mass of the clamped upper atom, `1 − Φ(z_K)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use crate::env::CensoredObs;
use crate::error::{invalid, Error, Result};
use crate::math::{self, LN_SQRT_2PI};
use crate::rng::{open01, unit};

/// Additive floor on every softplus-derived width and slope.
pub const SLOPE_FLOOR: f64 = 1e-4;
/// Survival mass below which the censored term is clamped and tail
/// sampling is refused.
pub const SURVIVAL_FLOOR: f64 = 1e-9;

/// Discretization of the transform.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct FlowShape {
    pub bins: usize,
    pub latent_bound: f64,
    pub demand_bound: f64,
}

impl FlowShape {
    pub fn new(bins: usize, latent_bound: f64, demand_bound: f64) -> Result<Self> {
        let s = FlowShape {
            bins,
            latent_bound,
            demand_bound,
        };
        s.validate()?;
        Ok(s)
    }

    /// Default discretization (`K = 8`, `L = 4`) for a demand bound.
    pub fn with_bound(demand_bound: f64) -> Result<Self> {
        Self::new(8, 4.0, demand_bound)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(invalid!("flow needs at least 2 bins, got {}", self.bins));
        }
        if !(self.latent_bound > 0.0 && self.latent_bound.is_finite()) {
            return Err(invalid!("latent bound must be positive"));
        }
        if !(self.demand_bound > 0.0 && self.demand_bound.is_finite()) {
            return Err(invalid!("demand bound must be positive"));
        }
        Ok(())
    }

    /// Hypernetwork output size: K+1 knots and two tail slopes.
    #[inline]
    pub fn raw_dim(&self) -> usize {
        self.bins + 3
    }

    /// Demand width of one bin.
    #[inline]
    pub fn bin_width(&self) -> f64 {
        self.demand_bound / self.bins as f64
    }

    /// Latent units per raw unit.
    #[inline]
    pub fn latent_scale(&self) -> f64 {
        2.0 * self.latent_bound / self.bins as f64
    }

    /// Demand value of knot `j`.
    #[inline]
    pub fn height(&self, j: usize) -> f64 {
        if j >= self.bins {
            self.demand_bound
        } else {
            j as f64 * self.bin_width()
        }
    }
}

/// Which linear piece of `T` a point falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    Left,
    Bin(usize),
    Right,
}

/// Decoded transform parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    /// Latent knots `T⁻¹(jg)`, strictly increasing.
    pub knots: Vec<f64>,
    /// Tail slopes in demand units per latent unit.
    pub left_slope: f64,
    pub right_slope: f64,
    bin_width: f64,
    bound: f64,
}

impl FlowParams {
    pub fn empty(shape: &FlowShape) -> Self {
        FlowParams {
            knots: vec![0.0; shape.bins + 1],
            left_slope: 1.0,
            right_slope: 1.0,
            bin_width: shape.bin_width(),
            bound: shape.demand_bound,
        }
    }

    /// Decode raw hypernetwork outputs.
    pub fn from_raw(shape: &FlowShape, raw: &[f64]) -> Result<Self> {
        if raw.len() != shape.raw_dim() {
            return Err(Error::DimensionMismatch {
                expected: shape.raw_dim(),
                got: raw.len(),
            });
        }
        let mut p = Self::empty(shape);
        p.fill(shape, raw);
        Ok(p)
    }

    /// Decode in place; `raw` must have length `K + 3`.
    pub fn fill(&mut self, shape: &FlowShape, raw: &[f64]) {
        let k = shape.bins;
        let c = shape.latent_scale();
        let g = shape.bin_width();
        self.knots.resize(k + 1, 0.0);
        let mut z = -shape.latent_bound + c * raw[0];
        self.knots[0] = z;
        for j in 1..=k {
            z += c * (math::softplus(raw[j]) + SLOPE_FLOOR);
            self.knots[j] = z;
        }
        self.left_slope = g * (math::softplus(raw[k + 1]) + SLOPE_FLOOR);
        self.right_slope = g * (math::softplus(raw[k + 2]) + SLOPE_FLOOR);
        self.bin_width = g;
        self.bound = shape.demand_bound;
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Demand value of knot `j`.
    #[inline]
    pub fn height(&self, j: usize) -> f64 {
        if j >= self.bins() {
            self.bound
        } else {
            j as f64 * self.bin_width
        }
    }

    /// T(z), before clamping.
    pub fn transform(&self, z: f64) -> f64 {
        let k = self.bins();
        if z < self.knots[0] {
            return self.left_slope * (z - self.knots[0]);
        }
        if z >= self.knots[k] {
            return self.bound + self.right_slope * (z - self.knots[k]);
        }
        let j = self.knots.partition_point(|&v| v <= z).clamp(1, k) - 1;
        let frac = (z - self.knots[j]) / (self.knots[j + 1] - self.knots[j]);
        (self.height(j) + self.bin_width * frac).min(self.height(j + 1))
    }

    /// Locate the linear piece containing demand level `d`.
    #[inline]
    pub fn piece(&self, d: f64) -> Piece {
        if d < 0.0 {
            Piece::Left
        } else if d >= self.bound {
            Piece::Right
        } else {
            Piece::Bin(((d / self.bin_width) as usize).min(self.bins() - 1))
        }
    }

    /// T⁻¹(d) and the piece it lies in.
    pub fn latent(&self, d: f64) -> (f64, Piece) {
        let k = self.bins();
        let piece = self.piece(d);
        let z = match piece {
            Piece::Left => self.knots[0] + d / self.left_slope,
            Piece::Right => self.knots[k] + (d - self.bound) / self.right_slope,
            Piece::Bin(j) => {
                let u = (d - self.height(j)) / self.bin_width;
                self.knots[j] + u * (self.knots[j + 1] - self.knots[j])
            }
        };
        (z, piece)
    }

    /// Slope of T on a piece, in demand units per latent unit.
    #[inline]
    fn slope(&self, piece: Piece) -> f64 {
        match piece {
            Piece::Left => self.left_slope,
            Piece::Right => self.right_slope,
            Piece::Bin(j) => self.bin_width / (self.knots[j + 1] - self.knots[j]),
        }
    }

    /// F(d) = Φ(T⁻¹(d)).
    pub fn cdf(&self, d: f64) -> f64 {
        math::norm_cdf(self.latent(d).0)
    }

    /// 1 − F(d), accurate in the upper tail.
    pub fn sf(&self, d: f64) -> f64 {
        math::norm_sf(self.latent(d).0)
    }

    /// T(Φ⁻¹(u)) clamped to `[0, B]`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(invalid!("flow quantile level {u} outside (0,1)"));
        }
        Ok(self.quantile_unchecked(u))
    }

    #[inline]
    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        self.transform(math::norm_ppf(u)).clamp(0.0, self.bound)
    }

    /// log φ(T⁻¹(d)) − log T′(T⁻¹(d)).
    pub fn log_density(&self, d: f64) -> f64 {
        let (z, piece) = self.latent(d);
        -0.5 * z * z - LN_SQRT_2PI - math::ln(self.slope(piece))
    }

    /// Unconstrained draw by inverse transform.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile_unchecked(open01(rng))
    }

    /// Draw from the law conditioned on `D > x`: `U ~ Unif(F(x), 1)`,
    /// `D = F⁻¹(U)`. Works in survival space so the tail stays accurate.
    pub fn tail_sample<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        let (zx, _) = self.latent(x);
        let surv = math::norm_sf(zx);
        if !(x < self.bound) || surv < SURVIVAL_FLOOR {
            return Err(Error::TailMassExhausted {
                threshold: x,
                survival: surv,
            });
        }
        for _ in 0..8 {
            let v = surv * open01(rng);
            let z = -math::norm_ppf(v);
            let d = self.transform(z).min(self.bound);
            if d > x {
                return Ok(d);
            }
        }
        // Rounding kept landing on the threshold; take the next float above it.
        Ok(next_up(x).min(self.bound))
    }

    /// Censoring-aware negative log-likelihood of one observation.
    pub fn censored_nll(&self, x: f64, obs: &CensoredObs) -> f64 {
        if obs.censored || obs.sales >= self.bound {
            let t = if obs.censored { x } else { self.bound };
            let (z, _) = self.latent(t);
            -math::ln(math::norm_sf(z).max(SURVIVAL_FLOOR))
        } else {
            -self.log_density(obs.sales)
        }
    }
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// The flow read straight from raw hypernetwork outputs, decoding knots
/// left to right only as far as each query needs. Sampling through it gives
/// bit-identical draws to [`FlowParams`] at a fraction of the decoding cost.
#[derive(Debug)]
pub struct LazyFlow<'a> {
    shape: &'a FlowShape,
    raw: &'a [f64],
    knots: &'a mut Vec<f64>,
}

impl<'a> LazyFlow<'a> {
    /// `knots` is a reusable buffer; its previous contents are discarded.
    pub fn new(shape: &'a FlowShape, raw: &'a [f64], knots: &'a mut Vec<f64>) -> Result<Self> {
        if raw.len() != shape.raw_dim() {
            return Err(Error::DimensionMismatch {
                expected: shape.raw_dim(),
                got: raw.len(),
            });
        }
        knots.clear();
        Ok(LazyFlow { shape, raw, knots })
    }

    fn knot(&mut self, j: usize) -> f64 {
        let c = self.shape.latent_scale();
        while self.knots.len() <= j {
            let n = self.knots.len();
            let z = match n {
                0 => -self.shape.latent_bound + c * self.raw[0],
                _ => self.knots[n - 1] + c * (math::softplus(self.raw[n]) + SLOPE_FLOOR),
            };
            self.knots.push(z);
        }
        self.knots[j]
    }

    fn tail_slope(&self, right: bool) -> f64 {
        let k = self.shape.bins;
        let r = self.raw[if right { k + 2 } else { k + 1 }];
        self.shape.bin_width() * (math::softplus(r) + SLOPE_FLOOR)
    }

    /// Same as [`FlowParams::transform`].
    pub fn transform(&mut self, z: f64) -> f64 {
        let k = self.shape.bins;
        let z0 = self.knot(0);
        if z < z0 {
            return self.tail_slope(false) * (z - z0);
        }
        let mut j = 0;
        while j < k && self.knot(j + 1) <= z {
            j += 1;
        }
        if j == k {
            return self.shape.demand_bound + self.tail_slope(true) * (z - self.knots[k]);
        }
        let frac = (z - self.knots[j]) / (self.knots[j + 1] - self.knots[j]);
        (self.shape.height(j) + self.shape.bin_width() * frac).min(self.shape.height(j + 1))
    }

    /// Same as the latent coordinate of [`FlowParams::latent`].
    pub fn latent(&mut self, d: f64) -> f64 {
        let k = self.shape.bins;
        let g = self.shape.bin_width();
        if d < 0.0 {
            self.knot(0) + d / self.tail_slope(false)
        } else if d >= self.shape.demand_bound {
            self.knot(k) + (d - self.shape.demand_bound) / self.tail_slope(true)
        } else {
            let j = ((d / g) as usize).min(k - 1);
            let u = (d - self.shape.height(j)) / g;
            let lo = self.knot(j);
            lo + u * (self.knot(j + 1) - lo)
        }
    }

    /// Same as [`FlowParams::sample`].
    pub fn sample<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let z = math::norm_ppf(open01(rng));
        self.transform(z).clamp(0.0, self.shape.demand_bound)
    }

    /// Same as [`FlowParams::tail_sample`].
    pub fn tail_sample<R: RngCore + ?Sized>(&mut self, x: f64, rng: &mut R) -> Result<f64> {
        let bound = self.shape.demand_bound;
        let surv = math::norm_sf(self.latent(x));
        if !(x < bound) || surv < SURVIVAL_FLOOR {
            return Err(Error::TailMassExhausted {
                threshold: x,
                survival: surv,
            });
        }
        for _ in 0..8 {
            let v = surv * open01(rng);
            let z = -math::norm_ppf(v);
            let d = self.transform(z).min(bound);
            if d > x {
                return Ok(d);
            }
        }
        Ok(next_up(x).min(bound))
    }
}

/// NLL of one observation and its gradient with respect to the raw
/// hypernetwork outputs (written into `grad`, overwriting it).
pub fn nll_grad_raw(shape: &FlowShape, raw: &[f64], x: f64, obs: &CensoredObs, grad: &mut [f64]) -> f64 {
    let k = shape.bins;
    let c = shape.latent_scale();
    let g = shape.bin_width();
    let bound = shape.demand_bound;
    debug_assert_eq!(raw.len(), k + 3);
    debug_assert_eq!(grad.len(), k + 3);
    grad.fill(0.0);

    // Gradients are first taken with respect to (z₀, δ₁ … δ_K, s_l, s_r),
    // stored at the matching raw positions, then chained to raw.
    let survival_term = obs.censored || obs.sales >= bound;
    let d = if obs.censored {
        x
    } else if survival_term {
        bound
    } else {
        obs.sales
    };
    let z0 = -shape.latent_bound + c * raw[0];

    let (z, piece) = if d < 0.0 {
        let sl = g * (math::softplus(raw[k + 1]) + SLOPE_FLOOR);
        (z0 + d / sl, Piece::Left)
    } else if d >= bound {
        let mut zk = z0;
        for r in &raw[1..=k] {
            zk += c * (math::softplus(*r) + SLOPE_FLOOR);
        }
        let sr = g * (math::softplus(raw[k + 2]) + SLOPE_FLOOR);
        (zk + (d - bound) / sr, Piece::Right)
    } else {
        let j = ((d / g) as usize).min(k - 1);
        let mut zj = z0;
        for r in &raw[1..=j] {
            zj += c * (math::softplus(*r) + SLOPE_FLOOR);
        }
        let delta = c * (math::softplus(raw[j + 1]) + SLOPE_FLOOR);
        (zj + (d - j as f64 * g) / g * delta, Piece::Bin(j))
    };

    let (nll, dnll_dz) = if survival_term {
        let sf = math::norm_sf(z);
        if sf < SURVIVAL_FLOOR {
            return -math::ln(SURVIVAL_FLOOR);
        }
        // d/dz [−ln(1 − Φ(z))] = φ(z) / (1 − Φ(z))
        (-math::ln(sf), math::exp(-0.5 * z * z - LN_SQRT_2PI - math::ln(sf)))
    } else {
        let (ln_slope, lnd_index, lnd_grad) = match piece {
            Piece::Left => {
                let sl = g * (math::softplus(raw[k + 1]) + SLOPE_FLOOR);
                (math::ln(sl), k + 1, 1.0 / sl)
            }
            Piece::Right => {
                let sr = g * (math::softplus(raw[k + 2]) + SLOPE_FLOOR);
                (math::ln(sr), k + 2, 1.0 / sr)
            }
            Piece::Bin(j) => {
                let delta = c * (math::softplus(raw[j + 1]) + SLOPE_FLOOR);
                // slope = g/δ, so ∂ ln(slope)/∂δ = −1/δ
                (math::ln(g / delta), j + 1, -1.0 / delta)
            }
        };
        grad[lnd_index] += lnd_grad;
        (0.5 * z * z + LN_SQRT_2PI + ln_slope, z)
    };

    grad[0] += dnll_dz;
    match piece {
        Piece::Left => {
            let sl = g * (math::softplus(raw[k + 1]) + SLOPE_FLOOR);
            grad[k + 1] += dnll_dz * (-d / (sl * sl));
        }
        Piece::Right => {
            for gm in &mut grad[1..=k] {
                *gm += dnll_dz;
            }
            let sr = g * (math::softplus(raw[k + 2]) + SLOPE_FLOOR);
            grad[k + 2] += dnll_dz * (-(d - bound) / (sr * sr));
        }
        Piece::Bin(j) => {
            for gm in &mut grad[1..=j] {
                *gm += dnll_dz;
            }
            grad[j + 1] += dnll_dz * (d - j as f64 * g) / g;
        }
    }

    grad[0] *= c;
    for i in 1..=k {
        grad[i] *= c * math::sigmoid(raw[i]);
    }
    for i in k + 1..k + 3 {
        grad[i] *= g * math::sigmoid(raw[i]);
    }
    nll
}

/// Multilayer perceptron with ReLU hidden layers, linear output, and frozen
/// per-coordinate input standardization.
///
/// Parameters live in one flat vector, layer by layer: the `in × out`
/// weight matrix row-major by input, then the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperNetwork {
    widths: Vec<usize>,
    params: Vec<f64>,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
}

/// Reusable activations for forward and backward passes.
#[derive(Debug, Clone, Default)]
pub struct NetScratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl HyperNetwork {
    /// He-uniform initialization; the output layer starts at one tenth scale.
    pub fn new<R: RngCore + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(invalid!("network widths {widths:?} must have ≥ 2 nonzero layers"));
        }
        let n_params = Self::count_params(widths);
        let mut params = vec![0.0; n_params];
        let mut off = 0;
        let n_layers = widths.len() - 1;
        for li in 0..n_layers {
            let (fan_in, fan_out) = (widths[li], widths[li + 1]);
            let mut lim = math::sqrt(6.0 / fan_in as f64);
            if li == n_layers - 1 {
                lim *= 0.1;
            }
            for w in &mut params[off..off + fan_in * fan_out] {
                *w = (2.0 * unit(rng) - 1.0) * lim;
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(HyperNetwork {
            widths: widths.to_vec(),
            params,
            input_mean: vec![0.0; widths[0]],
            input_std: vec![1.0; widths[0]],
        })
    }

    /// Rebuild from stored parts (checkpoint loading).
    pub fn from_parts(widths: Vec<usize>, params: Vec<f64>, input_mean: Vec<f64>, input_std: Vec<f64>) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(invalid!("network widths {widths:?} must have ≥ 2 nonzero layers"));
        }
        let expected = Self::count_params(&widths);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        if input_mean.len() != widths[0] || input_std.len() != widths[0] {
            return Err(Error::DimensionMismatch {
                expected: widths[0],
                got: input_mean.len().min(input_std.len()),
            });
        }
        if input_std.iter().any(|&s| !(s > 0.0)) || params.iter().any(|p| !p.is_finite()) {
            return Err(invalid!("non-finite parameters or nonpositive input scale"));
        }
        Ok(HyperNetwork {
            widths,
            params,
            input_mean,
            input_std,
        })
    }

    pub fn count_params(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_mean(&self) -> &[f64] {
        &self.input_mean
    }

    pub fn input_std(&self) -> &[f64] {
        &self.input_std
    }

    /// Set the frozen input standardization; tiny scales are replaced by 1.
    pub fn set_normalization(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let d = self.input_dim();
        if mean.len() != d || std.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: mean.len(),
            });
        }
        self.input_mean.copy_from_slice(mean);
        for (dst, &s) in self.input_std.iter_mut().zip(std) {
            *dst = if s > 1e-8 && s.is_finite() { s } else { 1.0 };
        }
        Ok(())
    }

    /// Offsets of the output layer's biases (used to seed the flow shape).
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let n = self.params.len();
        let out = self.output_dim();
        &mut self.params[n - out..]
    }

    fn ensure_scratch(&self, s: &mut NetScratch) {
        if s.acts.len() != self.widths.len() {
            s.acts = self.widths.iter().map(|&w| vec![0.0; w]).collect();
        } else {
            for (a, &w) in s.acts.iter_mut().zip(&self.widths) {
                if a.len() != w {
                    a.resize(w, 0.0);
                }
            }
        }
    }

    /// Forward pass; the output is left in the scratch's last activation.
    pub fn forward<'s>(&self, ctx: &[f64], s: &'s mut NetScratch) -> Result<&'s [f64]> {
        if ctx.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: ctx.len(),
            });
        }
        self.ensure_scratch(s);
        for ((dst, &x), (&m, &sd)) in s.acts[0]
            .iter_mut()
            .zip(ctx)
            .zip(self.input_mean.iter().zip(&self.input_std))
        {
            *dst = (x - m) / sd;
        }
        let n_layers = self.widths.len() - 1;
        let mut off = 0;
        for li in 0..n_layers {
            let (nin, nout) = (self.widths[li], self.widths[li + 1]);
            let w = &self.params[off..off + nin * nout];
            let b = &self.params[off + nin * nout..off + nin * nout + nout];
            off += nin * nout + nout;
            let (prev, rest) = s.acts.split_at_mut(li + 1);
            let input = &prev[li];
            let out = &mut rest[0];
            out.copy_from_slice(b);
            affine_accumulate(input, w, out);
            if li + 1 < n_layers {
                for v in out.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        Ok(&s.acts[n_layers])
    }

    /// Backward pass after [`HyperNetwork::forward`] on the same scratch:
    /// accumulates ∂L/∂params into `grad` given ∂L/∂output.
    pub fn backward(&self, s: &mut NetScratch, d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let n_layers = self.widths.len() - 1;
        s.delta.clear();
        s.delta.extend_from_slice(d_out);
        let mut end = self.params.len();
        for li in (0..n_layers).rev() {
            let (nin, nout) = (self.widths[li], self.widths[li + 1]);
            let start = end - (nin * nout + nout);
            let w_off = start;
            let b_off = start + nin * nout;
            for j in 0..nout {
                grad[b_off + j] += s.delta[j];
            }
            let input = &s.acts[li];
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let g = &mut grad[w_off + i * nout..w_off + (i + 1) * nout];
                for (gij, &dj) in g.iter_mut().zip(&s.delta) {
                    *gij += xi * dj;
                }
            }
            if li > 0 {
                s.delta_prev.clear();
                s.delta_prev.resize(nin, 0.0);
                let w = &self.params[w_off..w_off + nin * nout];
                for (i, dp) in s.delta_prev.iter_mut().enumerate() {
                    // ReLU mask: post-activation zero means inactive.
                    if input[i] <= 0.0 {
                        continue;
                    }
                    let row = &w[i * nout..(i + 1) * nout];
                    let mut acc = 0.0;
                    for (&wij, &dj) in row.iter().zip(&s.delta) {
                        acc += wij * dj;
                    }
                    *dp = acc;
                }
                core::mem::swap(&mut s.delta, &mut s.delta_prev);
            }
            end = start;
        }
    }
}

/// `out += inputᵀ W` for a row-major `[in][out]` block, four rows at a time.
/// Each output still accumulates rows in index order.
fn affine_accumulate(input: &[f64], w: &[f64], out: &mut [f64]) {
    let nout = out.len();
    let quads = input.len() / 4;
    for q in 0..quads {
        let i = 4 * q;
        let x = &input[i..i + 4];
        let rows = &w[i * nout..(i + 4) * nout];
        let (r0, rest) = rows.split_at(nout);
        let (r1, rest) = rest.split_at(nout);
        let (r2, r3) = rest.split_at(nout);
        for ((((o, &a), &b), &c), &d) in out.iter_mut().zip(r0).zip(r1).zip(r2).zip(r3) {
            *o = *o + x[0] * a + x[1] * b + x[2] * c + x[3] * d;
        }
    }
    for i in 4 * quads..input.len() {
        let xi = input[i];
        for (o, &wij) in out.iter_mut().zip(&w[i * nout..(i + 1) * nout]) {
            *o += xi * wij;
        }
    }
}

/// Learned completion model p_θ(· | context): flow shape plus hypernetwork.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionModel {
    pub shape: FlowShape,
    pub net: HyperNetwork,
}

/// Scratch buffers for repeated model evaluation.
#[derive(Debug, Clone)]
pub struct ModelScratch {
    pub net: NetScratch,
    pub params: FlowParams,
    pub raw_grad: Vec<f64>,
}

impl ModelScratch {
    pub fn new(shape: &FlowShape) -> Self {
        ModelScratch {
            net: NetScratch::default(),
            params: FlowParams::empty(shape),
            raw_grad: vec![0.0; shape.raw_dim()],
        }
    }
}

impl CompletionModel {
    /// Fresh model with hidden layer sizes `hidden` for contexts of size
    /// `context_dim`. Output biases start with the knots evenly spaced on `[−L, L]`.
    pub fn new<R: RngCore + ?Sized>(shape: FlowShape, context_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(context_dim);
        widths.extend_from_slice(hidden);
        widths.push(shape.raw_dim());
        let mut net = HyperNetwork::new(&widths, rng)?;
        let bias = net.output_bias_mut();
        bias[0] = 0.0;
        let unit_width = math::softplus_inv(1.0 - SLOPE_FLOOR);
        for b in &mut bias[1..] {
            *b = unit_width;
        }
        Ok(CompletionModel { shape, net })
    }

    pub fn from_parts(shape: FlowShape, net: HyperNetwork) -> Result<Self> {
        shape.validate()?;
        if net.output_dim() != shape.raw_dim() {
            return Err(Error::DimensionMismatch {
                expected: shape.raw_dim(),
                got: net.output_dim(),
            });
        }
        Ok(CompletionModel { shape, net })
    }

    pub fn context_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn scratch(&self) -> ModelScratch {
        ModelScratch::new(&self.shape)
    }

    /// Decode flow parameters for a context.
    pub fn hyper_forward(&self, ctx: &[f64]) -> Result<FlowParams> {
        let mut s = self.scratch();
        self.params_into(ctx, &mut s)?;
        Ok(s.params)
    }

    /// Decode flow parameters into the scratch (no allocation after warm-up).
    pub fn params_into(&self, ctx: &[f64], s: &mut ModelScratch) -> Result<()> {
        let raw = self.net.forward(ctx, &mut s.net)?;
        s.params.fill(&self.shape, raw);
        Ok(())
    }

    pub fn cdf(&self, ctx: &[f64], d: f64) -> Result<f64> {
        Ok(self.hyper_forward(ctx)?.cdf(d))
    }

    pub fn quantile(&self, ctx: &[f64], u: f64) -> Result<f64> {
        self.hyper_forward(ctx)?.quantile(u)
    }

    pub fn log_density(&self, ctx: &[f64], d: f64) -> Result<f64> {
        Ok(self.hyper_forward(ctx)?.log_density(d))
    }

    pub fn tail_sample<R: RngCore + ?Sized>(&self, ctx: &[f64], x: f64, rng: &mut R) -> Result<f64> {
        self.hyper_forward(ctx)?.tail_sample(x, rng)
    }

    pub fn censored_nll(&self, ctx: &[f64], x: f64, obs: &CensoredObs) -> Result<f64> {
        Ok(self.hyper_forward(ctx)?.censored_nll(x, obs))
    }

    /// Censored NLL and its exact gradient over every network parameter.
    pub fn censored_nll_grad(&self, ctx: &[f64], x: f64, obs: &CensoredObs) -> Result<(f64, Vec<f64>)> {
        let mut s = self.scratch();
        let mut grad = vec![0.0; self.net.params().len()];
        let nll = self.accumulate_grad(ctx, x, obs, &mut s, &mut grad)?;
        Ok((nll, grad))
    }

    /// Add this observation's gradient into `grad` and return its NLL.
    pub fn accumulate_grad(&self, ctx: &[f64], x: f64, obs: &CensoredObs, s: &mut ModelScratch, grad: &mut [f64]) -> Result<f64> {
        self.net.forward(ctx, &mut s.net)?;
        let n_layers = self.net.widths().len() - 1;
        let nll = nll_grad_raw(&self.shape, &s.net.acts[n_layers], x, obs, &mut s.raw_grad);
        let d_out = core::mem::take(&mut s.raw_grad);
        self.net.backward(&mut s.net, &d_out, grad);
        s.raw_grad = d_out;
        Ok(nll)
    }
}

/// Flow CDF at `d` given a context, free-function form.
pub fn flow_cdf(model: &CompletionModel, ctx: &[f64], d: f64) -> Result<f64> {
    model.cdf(ctx, d)
}

/// Flow inverse CDF, free-function form.
pub fn flow_quantile(model: &CompletionModel, ctx: &[f64], u: f64) -> Result<f64> {
    model.quantile(ctx, u)
}

/// Flow log-density, free-function form.
pub fn flow_log_density(model: &CompletionModel, ctx: &[f64], d: f64) -> Result<f64> {
    model.log_density(ctx, d)
}

/// Exact tail draw above `x`, free-function form.
pub fn tail_sample<R: RngCore + ?Sized>(model: &CompletionModel, ctx: &[f64], x: f64, rng: &mut R) -> Result<f64> {
    model.tail_sample(ctx, x, rng)
}

/// Censored NLL, free-function form.
pub fn censored_nll(model: &CompletionModel, ctx: &[f64], x: f64, obs: &CensoredObs) -> Result<f64> {
    model.censored_nll(ctx, x, obs)
}

/// Censored NLL gradient, free-function form.
pub fn censored_nll_grad(model: &CompletionModel, ctx: &[f64], x: f64, obs: &CensoredObs) -> Result<Vec<f64>> {
    Ok(model.censored_nll_grad(ctx, x, obs)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    fn shape() -> FlowShape {
        FlowShape::new(8, 4.0, 10.0).unwrap()
    }

    fn random_model(seed: u64) -> CompletionModel {
        let mut rng = from_seed(seed);
        CompletionModel::new(shape(), 25, &[16, 16], &mut rng).unwrap()
    }

    fn random_ctx(seed: u64) -> Vec<f64> {
        let mut rng = from_seed(seed);
        (0..25).map(|_| 2.0 * unit(&mut rng) - 1.0).collect()
    }

    #[test]
    fn zero_network_spaces_knots_evenly() {
        let mut rng = from_seed(1);
        let mut m = CompletionModel::new(shape(), 25, &[8], &mut rng).unwrap();
        let bias: Vec<f64> = m.net.output_bias_mut().to_vec();
        for p in m.net.params_mut() {
            *p = 0.0;
        }
        m.net.output_bias_mut().copy_from_slice(&bias);
        let p = m.hyper_forward(&[0.3; 25]).unwrap();
        let gaps: Vec<f64> = p.knots.windows(2).map(|w| w[1] - w[0]).collect();
        for g in &gaps {
            assert!((g - gaps[0]).abs() < 1e-12);
        }
        let expected = shape().latent_scale() * (math::softplus(bias[1]) + SLOPE_FLOOR);
        assert!((gaps[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = random_model(2);
        assert!(matches!(
            m.hyper_forward(&[0.0; 24]),
            Err(Error::DimensionMismatch { expected: 25, got: 24 })
        ));
    }

    #[test]
    fn knots_strictly_increase_for_extreme_raw() {
        let s = shape();
        let raw = [5.0, -800.0, -50.0, 30.0, -1e3, 0.0, 2.0, -40.0, 1.0, -100.0, -100.0];
        let p = FlowParams::from_raw(&s, &raw).unwrap();
        for w in p.knots.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!(p.left_slope > 0.0 && p.right_slope > 0.0);
    }

    #[test]
    fn median_is_image_of_zero() {
        let m = random_model(3);
        let p = m.hyper_forward(&random_ctx(4)).unwrap();
        let d0 = p.transform(0.0);
        assert!((p.cdf(d0) - 0.5).abs() < 1e-12);
        assert!((p.quantile(0.5).unwrap() - d0.clamp(0.0, 10.0)).abs() < 1e-12);
    }

    #[test]
    fn censored_nll_clamp() {
        let p = FlowParams::from_raw(&shape(), &[0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let med = p.transform(0.0);
        let obs = CensoredObs {
            sales: med,
            censored: true,
        };
        assert!((p.censored_nll(med, &obs) - core::f64::consts::LN_2).abs() < 1e-12);
        // Far right: survival underflows, the clamp takes over and the gradient vanishes.
        let far = p.transform(9.0);
        let obs = CensoredObs {
            sales: far,
            censored: true,
        };
        assert!((p.censored_nll(far, &obs) + SURVIVAL_FLOOR.ln()).abs() < 1e-12);
        let mut g = [1.0; 11];
        let raw = [0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5];
        nll_grad_raw(&shape(), &raw, far, &obs, &mut g);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lazy_flow_is_bit_identical() {
        let s = shape();
        let mut rng = from_seed(21);
        let mut buf = Vec::new();
        for _ in 0..300 {
            let raw: Vec<f64> = (0..11).map(|_| 6.0 * unit(&mut rng) - 3.0).collect();
            let p = FlowParams::from_raw(&s, &raw).unwrap();
            for _ in 0..20 {
                let z = 12.0 * unit(&mut rng) - 6.0;
                let d = 14.0 * unit(&mut rng) - 2.0;
                let mut lazy = LazyFlow::new(&s, &raw, &mut buf).unwrap();
                assert_eq!(lazy.transform(z).to_bits(), p.transform(z).to_bits());
                let mut lazy = LazyFlow::new(&s, &raw, &mut buf).unwrap();
                assert_eq!(lazy.latent(d).to_bits(), p.latent(d).0.to_bits());
                let seed = rng.next_u64();
                let (mut r1, mut r2) = (from_seed(seed), from_seed(seed));
                let mut lazy = LazyFlow::new(&s, &raw, &mut buf).unwrap();
                assert_eq!(lazy.sample(&mut r1).to_bits(), p.sample(&mut r2).to_bits());
                let x = 10.0 * unit(&mut rng);
                let mut lazy = LazyFlow::new(&s, &raw, &mut buf).unwrap();
                match (lazy.tail_sample(x, &mut r1), p.tail_sample(x, &mut r2)) {
                    (Ok(a), Ok(b)) => assert_eq!(a.to_bits(), b.to_bits()),
                    (Err(_), Err(_)) => {}
                    other => panic!("lazy and eager disagree: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn tail_sample_exhausted() {
        let p = FlowParams::from_raw(&shape(), &[0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let mut rng = from_seed(5);
        let x = p.transform(7.0);
        assert!(matches!(p.tail_sample(x, &mut rng), Err(Error::TailMassExhausted { .. })));
        assert!(p.tail_sample(10.0, &mut rng).is_err());
    }

    #[test]
    fn raw_gradient_matches_finite_differences() {
        let s = shape();
        let mut rng = from_seed(11);
        for trial in 0..200 {
            let raw: Vec<f64> = (0..11).map(|_| 2.0 * unit(&mut rng) - 1.0).collect();
            let p = FlowParams::from_raw(&s, &raw).unwrap();
            let censored = trial % 2 == 0;
            let d = p.transform(6.0 * unit(&mut rng) - 3.0).clamp(0.01, 9.99);
            let obs = CensoredObs { sales: d, censored };
            let mut g = vec![0.0; 11];
            nll_grad_raw(&s, &raw, d, &obs, &mut g);
            for i in 0..11 {
                let eps = 1e-6;
                let mut rp = raw.clone();
                rp[i] += eps;
                let mut rm = raw.clone();
                rm[i] -= eps;
                let fp = FlowParams::from_raw(&s, &rp).unwrap().censored_nll(d, &obs);
                let fm = FlowParams::from_raw(&s, &rm).unwrap().censored_nll(d, &obs);
                let fd = (fp - fm) / (2.0 * eps);
                assert!((fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()), "trial {trial} i {i}: fd {fd} an {}", g[i]);
            }
        }
    }
}

#[cfg(test)]
mod network_grad_tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn full_gradient_matches_finite_differences() {
        let shape = FlowShape::new(8, 4.0, 10.0).unwrap();
        let mut rng = from_seed(21);
        let mut m = CompletionModel::new(shape, 25, &[16, 16], &mut rng).unwrap();
        for p in m.net.params_mut() {
            *p += 0.3 * (2.0 * unit(&mut rng) - 1.0);
        }
        for trial in 0..20 {
            let ctx: Vec<f64> = (0..25).map(|_| 4.0 * unit(&mut rng) - 2.0).collect();
            let p = m.hyper_forward(&ctx).unwrap();
            let d = p.transform(4.0 * unit(&mut rng) - 2.0).clamp(0.01, 9.99);
            let obs = CensoredObs { sales: d, censored: trial % 3 == 0 };
            let (_, g) = m.censored_nll_grad(&ctx, d, &obs).unwrap();
            for i in 0..g.len() {
                let eps = 1e-6;
                let mut mp = m.clone();
                mp.net.params_mut()[i] += eps;
                let mut mm = m.clone();
                mm.net.params_mut()[i] -= eps;
                let fd = (mp.censored_nll(&ctx, d, &obs).unwrap() - mm.censored_nll(&ctx, d, &obs).unwrap()) / (2.0 * eps);
                assert!((fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()), "trial {trial} param {i}: fd {fd} an {}", g[i]);
            }
        }
    }
}
