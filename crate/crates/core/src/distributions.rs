//! Samplers and density evaluators used by the likelihood and the Gibbs steps.
//!
//! Every sampler takes an explicit [`RngStream`]; nothing here touches global
//! random state, so a chain is a pure function of its seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Open01, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric::sum_sorted;

/// Standardized distance from the mean beyond which truncated draws switch
/// from inverse-CDF to exponential rejection.
const TAIL_THRESHOLD: f64 = 4.0;

/// Seeded random stream. Equal `(seed, stream)` pairs yield bit-identical
/// sequences.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream `stream` under master seed `seed`. Used to give each
    /// replicate or chain its own generator.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        self.sample(Open01)
    }

    pub fn std_normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Unchecked standard-normal evaluators over the extended reals.
///
/// Infinite arguments evaluate to their limits (`cdf(-inf) = 0`,
/// `ln_cdf(-inf) = -inf`), which is what censoring bounds at ±∞ need.
pub mod std_normal {
    use statrs::function::erf::erfc;
    use std::f64::consts::FRAC_1_SQRT_2;

    /// ln(√(2π))
    pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
    pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

    /// Below this the log-CDF is evaluated through the Mills ratio.
    const MILLS_CUTOFF: f64 = -5.0;

    #[inline]
    pub fn pdf(z: f64) -> f64 {
        INV_SQRT_2PI * (-0.5 * z * z).exp()
    }

    #[inline]
    pub fn ln_pdf(z: f64) -> f64 {
        -0.5 * z * z - LN_SQRT_2PI
    }

    #[inline]
    pub fn cdf(z: f64) -> f64 {
        if z == f64::NEG_INFINITY {
            0.0
        } else if z == f64::INFINITY {
            1.0
        } else {
            0.5 * erfc(-z * FRAC_1_SQRT_2)
        }
    }

    /// Upper tail 1 − Φ(z), without cancellation.
    #[inline]
    pub fn sf(z: f64) -> f64 {
        cdf(-z)
    }

    pub fn ln_cdf(z: f64) -> f64 {
        if z == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else if z == f64::INFINITY {
            0.0
        } else if z < MILLS_CUTOFF {
            let x = -z;
            ln_pdf(x) + mills_ratio(x).ln()
        } else if z > 0.0 {
            (-sf(z)).ln_1p()
        } else {
            cdf(z).ln()
        }
    }

    #[inline]
    pub fn ln_sf(z: f64) -> f64 {
        ln_cdf(-z)
    }

    /// Mills ratio (1 − Φ(x)) / φ(x) for x ≥ 5 by a backward-evaluated
    /// continued fraction.
    fn mills_ratio(x: f64) -> f64 {
        let mut tail = 0.0;
        for k in (1..=80).rev() {
            tail = k as f64 / (x + tail);
        }
        1.0 / (x + tail)
    }

    /// Φ⁻¹(p) for p in (0, 1).
    pub fn quantile(p: f64) -> f64 {
        if p <= 0.0 {
            f64::NEG_INFINITY
        } else if p >= 1.0 {
            f64::INFINITY
        } else if p > 0.5 {
            -lower_quantile(1.0 - p)
        } else {
            lower_quantile(p)
        }
    }

    /// Acklam's rational approximation polished by one Halley step.
    fn lower_quantile(p: f64) -> f64 {
        const A: [f64; 6] = [
            -3.969683028665376e1,
            2.209460984245205e2,
            -2.759285104469687e2,
            1.383577518672690e2,
            -3.066479806614716e1,
            2.506628277459239,
        ];
        const B: [f64; 5] = [
            -5.447609879822406e1,
            1.615858368580409e2,
            -1.556989798598866e2,
            6.680131188771972e1,
            -1.328068155288572e1,
        ];
        const C: [f64; 6] = [
            -7.784894002430293e-3,
            -3.223964580411365e-1,
            -2.400758277161838,
            -2.549732539343734,
            4.374664141464968,
            2.938163982698783,
        ];
        const D: [f64; 4] = [
            7.784695709041462e-3,
            3.224671290700398e-1,
            2.445134137142996,
            3.754408661907416,
        ];
        let x = if p < 0.02425 {
            let q = (-2.0 * p.ln()).sqrt();
            (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
                / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
        } else {
            let q = p - 0.5;
            let r = q * q;
            (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
                / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
        };
        let e = cdf(x) - p;
        let u = e / pdf(x);
        if u.is_finite() {
            x - u / (1.0 + 0.5 * x * u)
        } else {
            x
        }
    }

    /// Pr(a < Z < b) for a < b, evaluated on whichever side of zero avoids
    /// cancellation.
    pub fn interval_prob(a: f64, b: f64) -> f64 {
        if a >= b {
            0.0
        } else if a > 0.0 {
            sf(a) - sf(b)
        } else if b < 0.0 {
            cdf(b) - cdf(a)
        } else {
            1.0 - cdf(a) - sf(b)
        }
    }
}

fn finite_or_domain(z: f64) -> Result<f64> {
    if z.is_finite() {
        Ok(z)
    } else {
        Err(Error::domain(format!("non-finite argument {z}")))
    }
}

/// Standard normal density φ(z).
pub fn normal_pdf(z: f64) -> Result<f64> {
    finite_or_domain(z).map(std_normal::pdf)
}

pub fn normal_ln_pdf(z: f64) -> Result<f64> {
    finite_or_domain(z).map(std_normal::ln_pdf)
}

/// Standard normal CDF Φ(z).
pub fn normal_cdf(z: f64) -> Result<f64> {
    finite_or_domain(z).map(std_normal::cdf)
}

/// ln Φ(z), accurate deep into the lower tail.
pub fn normal_ln_cdf(z: f64) -> Result<f64> {
    finite_or_domain(z).map(std_normal::ln_cdf)
}

/// Draw from N(mean, variance) restricted to (lower, upper). Either bound may
/// be infinite.
pub fn sample_truncated_normal(
    mean: f64,
    variance: f64,
    lower: f64,
    upper: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::domain(format!(
            "truncated normal variance must be positive, got {variance}"
        )));
    }
    if !mean.is_finite() {
        return Err(Error::domain(format!("truncated normal mean {mean}")));
    }
    if lower.is_nan() || upper.is_nan() || !(lower < upper) {
        return Err(Error::domain(format!(
            "truncated normal needs lower < upper, got ({lower}, {upper})"
        )));
    }
    let sd = variance.sqrt();
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    loop {
        let draw = mean + sd * standard_truncated(a, b, rng);
        // Rescaling can round onto a bound when the interval is narrow.
        if draw > lower && draw < upper {
            return Ok(draw);
        }
    }
}

/// Standard normal truncated to (a, b).
fn standard_truncated(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    if a >= TAIL_THRESHOLD {
        tail_rejection(a, b, rng)
    } else if b <= -TAIL_THRESHOLD {
        -tail_rejection(-b, -a, rng)
    } else if a > 0.0 {
        -inverse_cdf_draw(-b, -a, rng)
    } else {
        inverse_cdf_draw(a, b, rng)
    }
}

/// Inverse-CDF draw on (a, b) with a ≤ 0. Quantiles are always taken in a
/// lower tail (argument ≤ 0.5) so neither end loses relative precision.
fn inverse_cdf_draw(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    let below = std_normal::cdf(a);
    let above = std_normal::sf(b);
    let mass = std_normal::interval_prob(a, b);
    let finite = a.is_finite() && b.is_finite();
    let mut attempts = 0;
    while !finite || attempts < 16 {
        attempts += 1;
        let t = rng.open01() * mass;
        let x = if below + t <= 0.5 {
            std_normal::quantile(below + t)
        } else {
            -std_normal::quantile(above + (mass - t))
        };
        if x > a && x < b {
            return x;
        }
    }
    uniform_rejection(a, b, rng)
}

/// Fallback for intervals too narrow for the CDF to resolve.
fn uniform_rejection(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    let closest = if a > 0.0 {
        a
    } else if b < 0.0 {
        b
    } else {
        0.0
    };
    loop {
        let z = a + (b - a) * rng.open01();
        let log_accept = 0.5 * (closest * closest - z * z);
        if z > a && z < b && rng.open01().ln() <= log_accept {
            return z;
        }
    }
}

/// Exponential-proposal rejection sampler for (a, b) with a ≥ 4, the proposal
/// rate being the optimal one for the one-sided tail.
fn tail_rejection(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    // Mass of the exponential proposal inside the interval.
    let window = if b.is_finite() {
        -(-rate * (b - a)).exp_m1()
    } else {
        1.0
    };
    loop {
        let z = a - (-rng.open01() * window).ln_1p() / rate;
        if !(z > a && z < b) {
            continue;
        }
        let d = z - rate;
        if rng.open01().ln() <= -0.5 * d * d {
            return z;
        }
    }
}

/// ln of a Gamma(shape, 1) variate. Small shapes go through the
/// Gamma(shape + 1)·U^(1/shape) identity in log space so the result never
/// underflows to ln 0.
pub(crate) fn ln_gamma_variate(shape: f64, rng: &mut RngStream) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0)
            .expect("shape validated by caller")
            .sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0)
            .expect("shape validated by caller")
            .sample(rng);
        g.ln() + rng.open01().ln() / shape
    }
}


/// Draw from IG(shape, scale) with density `b^a / Γ(a) · x^(−a−1) · exp(−b/x)`.
pub fn sample_inverse_gamma(shape: f64, scale: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::domain(format!(
            "inverse gamma needs positive shape and scale, got ({shape}, {scale})"
        )));
    }
    let draw = (scale.ln() - ln_gamma_variate(shape, rng)).exp();
    Ok(draw.clamp(f64::MIN_POSITIVE, f64::MAX))
}

pub fn sample_dirichlet(concentrations: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    if concentrations.len() < 2 {
        return Err(Error::domain("dirichlet needs at least two concentrations"));
    }
    let order: Vec<usize> = (0..concentrations.len()).collect();
    sample_dirichlet_ordered(concentrations, &order, rng)
}

/// Dirichlet draw consuming randomness in `order`. Normalization is
/// order-free, so permuting both `concentrations` and `order` permutes the
/// result exactly.
pub(crate) fn sample_dirichlet_ordered(
    concentrations: &[f64],
    order: &[usize],
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if let Some(bad) = concentrations.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::domain(format!(
            "dirichlet concentration must be positive, got {bad}"
        )));
    }
    let mut logs = vec![0.0; concentrations.len()];
    for &c in order {
        logs[c] = ln_gamma_variate(concentrations[c], rng);
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total = sum_sorted(&scaled);
    Ok(scaled
        .iter()
        .map(|s| (s / total).max(f64::MIN_POSITIVE))
        .collect())
}

/// Index in `0..probs.len()` drawn with probability proportional to `probs`.
pub fn sample_categorical(probs: &[f64], rng: &mut RngStream) -> Result<usize> {
    let order: Vec<usize> = (0..probs.len()).collect();
    sample_categorical_ordered(probs, &order, rng)
}

/// Categorical draw whose cumulative walk visits classes in `order`.
pub(crate) fn sample_categorical_ordered(
    probs: &[f64],
    order: &[usize],
    rng: &mut RngStream,
) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::domain("categorical over zero classes"));
    }
    if let Some(bad) = probs.iter().find(|&&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::domain(format!("categorical probability {bad}")));
    }
    let total = sum_sorted(probs);
    if !(total > 0.0) {
        return Err(Error::domain("categorical probabilities sum to zero"));
    }
    let target = rng.random::<f64>() * total;
    let mut cumulative = 0.0;
    let mut last = order[0];
    for &c in order {
        if probs[c] == 0.0 {
            continue;
        }
        cumulative += probs[c];
        last = c;
        if target < cumulative {
            return Ok(c);
        }
    }
    Ok(last)
}

/// Draw from N(mean, covariance).
pub fn sample_mv_normal(
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let p = mean.len();
    if covariance.nrows() != p || covariance.ncols() != p {
        return Err(Error::domain(format!(
            "covariance is {}x{}, mean has length {p}",
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    check_symmetric(covariance)?;
    let chol = covariance
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            context: format!("covariance (first failing pivot {})", failing_pivot(covariance)),
        })?;
    let eps = DVector::from_fn(p, |_, _| rng.std_normal());
    Ok(mean + chol.l() * eps)
}

/// Draw from N(P⁻¹r, P⁻¹) given the precision `P` and `r`, factoring `P` once.
/// Returns `None` when `P` is not positive definite.
pub(crate) fn sample_mv_normal_canonical(
    precision: DMatrix<f64>,
    shift: &DVector<f64>,
    rng: &mut RngStream,
) -> Option<DVector<f64>> {
    let p = shift.len();
    let chol = precision.cholesky()?;
    let mean = chol.solve(shift);
    let eps = DVector::from_fn(p, |_, _| rng.std_normal());
    // L'x = eps gives x ~ N(0, (LL')⁻¹).
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&eps)
        .expect("cholesky factor has a positive diagonal");
    let draw = mean + noise;
    draw.iter().all(|v| v.is_finite()).then_some(draw)
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::domain(format!(
                    "matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// First leading minor at which a plain Cholesky sweep breaks down.
fn failing_pivot(m: &DMatrix<f64>) -> usize {
    let n = m.nrows();
    for k in 1..=n {
        let minor = m.view((0, 0), (k, k)).clone_owned();
        if minor.cholesky().is_none() {
            return k - 1;
        }
    }
    n
}
