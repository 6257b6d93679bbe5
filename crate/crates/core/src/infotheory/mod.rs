//! Gaussian channel entropy and its dependence on the singular values of
//! the weight matrix.
//!
//! For `Y = W X` with `X ~ N(μ, σ_x² I_n)` and `W` of full row rank,
//!
//! ```text
//!   h(Y) = ½ log2((2πe)^m det(σ_x² W Wᵀ))
//!        = (m/2) log2(2πe σ_x²) + Σ log2 σ_i(W)      [bits]
//! ```
//!
//! Both routes are implemented independently ([`entropy_via_det`] uses a
//! Cholesky log-determinant, [`gaussian_output_entropy`] the singular
//! values) so they can check each other. Element-wise activations add
//! `E[log2 |det J_φ(Z)|]`, which is non-positive for contractive φ; that
//! correction is estimated by Monte Carlo in [`mc_entropy_bound_check`].

mod activation;
pub mod knn;
mod suite;
pub mod theorem;

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

pub use activation::{jacobian_log_det, Activation, JacobianLogDet};
pub use knn::knn_entropy_bits;
pub use suite::{run_theory_suite, TheorySuiteConfig, VerificationReport};
pub use theorem::{theorem1_dominance_check, theorem1_numeric_check, theorem1_optimum, Theorem1Optimum};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Stream;

/// Fewest Monte Carlo samples any estimator accepts.
pub const MIN_MC_SAMPLES: usize = 1000;

/// Tolerance between the two closed-form entropy routes, relative to
/// `max(1, |h|)`.
pub const DUAL_PATH_TOL: f64 = 1e-9;

/// Largest κ(W) for which the two routes are compared at [`DUAL_PATH_TOL`].
/// Forming `W Wᵀ` squares the condition number, so the determinant route
/// carries a rounding error of order `ε κ(W)²`.
pub const DUAL_PATH_MAX_KAPPA: f64 = 1e3;

/// Relative pivot floor below which the output covariance counts as singular.
const COVARIANCE_PIVOT_TOL: f64 = 1e-14;

/// `log2(2πe)`.
pub fn log2_two_pi_e() -> f64 {
    (2.0 * PI * std::f64::consts::E).log2()
}

/// Outcome of one numerical verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub passed: bool,
    pub seed: Option<u64>,
    pub measured: BTreeMap<String, f64>,
    pub tolerance: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Linear Gaussian channel `Y = W X`, `X ~ N(0, σ_x² I_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianChannel {
    weights: Matrix<f64>,
    sigma_x: f64,
}

impl GaussianChannel {
    pub fn new(weights: Matrix<f64>, sigma_x: f64) -> Result<Self> {
        if !(sigma_x > 0.0 && sigma_x.is_finite()) {
            return Err(Error::Config(format!("sigma_x must be positive, got {sigma_x}")));
        }
        if let Some(index) = weights.first_non_finite() {
            return Err(Error::NonFiniteData {
                name: "channel weights".into(),
                index,
            });
        }
        Ok(Self { weights, sigma_x })
    }

    pub fn weights(&self) -> &Matrix<f64> {
        &self.weights
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    /// Output dimension.
    pub fn m(&self) -> usize {
        self.weights.rows()
    }

    /// Input dimension.
    pub fn n(&self) -> usize {
        self.weights.cols()
    }

    /// Output covariance `σ_x² W Wᵀ`.
    pub fn output_covariance(&self) -> Matrix<f64> {
        self.weights.row_gram().scale(self.sigma_x * self.sigma_x)
    }
}

/// `(m/2) log2(2πe σ_x²) + Σ log2 σ_i`, in bits.
pub fn gaussian_output_entropy(sigmas: &[f64], m: usize, sigma_x: f64) -> Result<f64> {
    if !(sigma_x > 0.0 && sigma_x.is_finite()) {
        return Err(Error::Config(format!("sigma_x must be positive, got {sigma_x}")));
    }
    if let Some((index, &value)) = sigmas.iter().enumerate().find(|(_, &s)| !(s > 0.0 && s.is_finite())) {
        return Err(Error::DegenerateSpectrum { index, value });
    }
    let base = 0.5 * m as f64 * (2.0 * PI * std::f64::consts::E * sigma_x * sigma_x).log2();
    Ok(base + sigmas.iter().map(|s| s.log2()).sum::<f64>())
}

/// `½ log2((2πe)^m det(σ_x² W Wᵀ))` through a pivoted Cholesky
/// log-determinant; no singular values involved.
pub fn entropy_via_det(channel: &GaussianChannel) -> Result<f64> {
    let (m, n) = (channel.m(), channel.n());
    if m > n {
        return Err(Error::SingularCovariance(format!(
            "{m}x{n} weights: W Wᵀ has rank at most {n} < {m}"
        )));
    }
    let ln_det = channel
        .output_covariance()
        .spd_log_det(COVARIANCE_PIVOT_TOL)
        .ok_or_else(|| Error::SingularCovariance("W does not have full row rank".into()))?;
    Ok(0.5 * (m as f64 * log2_two_pi_e() + ln_det / LN_2))
}

/// Entropy figures for one channel and activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub activation: Activation,
    /// Singular-value route, bits.
    pub h_formula: f64,
    /// Determinant route, when `W Wᵀ` is non-singular.
    pub h_det: Option<f64>,
    /// `h_formula` plus the Monte Carlo Jacobian correction: the estimate of
    /// `h(φ(Z))`.
    pub h_mc: f64,
    /// Mean of `log2 |det J_φ(Z)|` over the samples.
    pub correction: f64,
    pub mc_std_err: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// `correction ≤ 3 · mc_std_err`.
    pub bound_holds: bool,
    /// Set when some sample hit an exactly-zero slope.
    #[serde(default)]
    pub saturated_samples: usize,
}

/// Running mean and variance (Welford).
#[derive(Debug, Default, Clone, Copy)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Standard error of the mean.
    fn std_err(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n < MIN_MC_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: n,
            min: MIN_MC_SAMPLES,
        });
    }
    Ok(())
}

fn sample_output(channel: &GaussianChannel, mean: Option<&[f64]>, stream: &mut Stream, x: &mut [f64]) -> Vec<f64> {
    for (j, xj) in x.iter_mut().enumerate() {
        *xj = channel.sigma_x * stream.normal() + mean.map_or(0.0, |m| m[j]);
    }
    channel.weights.mul_vec(x)
}

/// Monte Carlo estimate of the activation's entropy correction
/// `E[log2 |det J_φ(Z)|]` for `Z = W X`, plus the resulting `h(φ(Z))`.
pub fn mc_entropy_bound_check(
    channel: &GaussianChannel,
    activation: &Activation,
    n_samples: usize,
    seed: u64,
) -> Result<EntropyReport> {
    check_samples(n_samples)?;
    if channel.m() > channel.n() {
        return Err(Error::SingularCovariance(format!(
            "{}x{} channel has a degenerate Gaussian output",
            channel.m(),
            channel.n()
        )));
    }
    let sigmas = channel.weights.singular_values();
    let h_formula = gaussian_output_entropy(&sigmas, channel.m(), channel.sigma_x)?;
    let h_det = entropy_via_det(channel).ok();

    let mut stream = Stream::new(seed);
    let mut x = vec![0.0; channel.n()];
    let mut moments = Moments::default();
    let mut saturated = 0usize;
    for _ in 0..n_samples {
        let z = sample_output(channel, None, &mut stream, &mut x);
        match jacobian_log_det(activation, &z) {
            JacobianLogDet::Finite(v) => moments.push(v),
            JacobianLogDet::NegativeInfinity { .. } => saturated += 1,
        }
    }
    let (correction, se) = if saturated > 0 {
        (f64::NEG_INFINITY, moments.std_err())
    } else {
        (moments.mean, moments.std_err())
    };
    Ok(EntropyReport {
        activation: *activation,
        h_formula,
        h_det,
        h_mc: h_formula + correction,
        correction,
        mc_std_err: se,
        n_samples,
        seed,
        bound_holds: correction <= 3.0 * se,
        saturated_samples: saturated,
    })
}

/// Plug-in Monte Carlo entropy of the channel output, in bits:
/// the sample mean of `-log2 p_Y(y)` for draws `y = W x`,
/// `x ~ N(input_mean, σ_x² I)`, with `p_Y` the exact output density.
/// Returns `(estimate, standard error)`.
pub fn mc_gaussian_entropy(
    channel: &GaussianChannel,
    input_mean: Option<&[f64]>,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_samples(n_samples)?;
    if let Some(mu) = input_mean {
        if mu.len() != channel.n() {
            return Err(Error::Config(format!(
                "input mean has length {}, channel expects {}",
                mu.len(),
                channel.n()
            )));
        }
    }
    let m = channel.m();
    let chol = channel
        .output_covariance()
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("output covariance is not positive definite".into()))?;
    let ln_det: f64 = (0..m).map(|i| 2.0 * chol[(i, i)].ln()).sum();
    let out_mean = input_mean.map(|mu| channel.weights.mul_vec(mu));
    let const_nats = 0.5 * (m as f64 * (2.0 * PI).ln() + ln_det);

    let mut stream = Stream::new(seed);
    let mut x = vec![0.0; channel.n()];
    let mut moments = Moments::default();
    for _ in 0..n_samples {
        let mut y = sample_output(channel, input_mean, &mut stream, &mut x);
        if let Some(mu) = &out_mean {
            for (yi, mi) in y.iter_mut().zip(mu) {
                *yi -= mi;
            }
        }
        let w = chol.solve_lower(&y);
        let quad: f64 = w.iter().map(|v| v * v).sum();
        moments.push((const_nats + 0.5 * quad) / LN_2);
    }
    Ok((moments.mean, moments.std_err()))
}

/// Checks `h(cZ) = h(Z) + m log2|c|` for `Z ~ N(0, I_m)`: exactly through
/// the singular-value formula, and statistically with two independent plug-in
/// Monte Carlo estimates.
pub fn scale_shift_check(m: usize, c: f64, n_samples: usize, seed: u64) -> Result<CheckReport> {
    if c == 0.0 || !c.is_finite() {
        return Err(Error::DegenerateScale);
    }
    if m == 0 {
        return Err(Error::Config("m must be >= 1".into()));
    }
    check_samples(n_samples)?;
    let expected = m as f64 * c.abs().log2();

    let base = vec![1.0; m];
    let scaled = vec![c.abs(); m];
    let analytic = gaussian_output_entropy(&scaled, m, 1.0)? - gaussian_output_entropy(&base, m, 1.0)?;
    let analytic_err = (analytic - expected).abs();

    let plain = GaussianChannel::new(Matrix::identity(m), 1.0)?;
    let scaled_ch = GaussianChannel::new(Matrix::identity(m).scale(c), 1.0)?;
    let (h0, se0) = mc_gaussian_entropy(&plain, None, n_samples, Stream::derived(seed, 0).next_u64())?;
    let (h1, se1) = mc_gaussian_entropy(&scaled_ch, None, n_samples, Stream::derived(seed, 1).next_u64())?;
    let mc_shift = h1 - h0;
    let se = (se0 * se0 + se1 * se1).sqrt();
    let mc_err = (mc_shift - expected).abs();

    Ok(CheckReport {
        check: format!("scale_shift(m={m}, c={c})"),
        passed: analytic_err <= DUAL_PATH_TOL && mc_err <= 3.0 * se,
        seed: Some(seed),
        measured: BTreeMap::from([
            ("expected_shift".into(), expected),
            ("analytic_shift".into(), analytic),
            ("analytic_error".into(), analytic_err),
            ("mc_shift".into(), mc_shift),
            ("mc_std_err".into(), se),
            ("mc_error".into(), mc_err),
        ]),
        tolerance: BTreeMap::from([
            ("analytic_error".into(), DUAL_PATH_TOL),
            ("mc_error_in_std_errs".into(), 3.0),
        ]),
        notes: Vec::new(),
    })
}

/// Translating the input mean must not change the output entropy. Both
/// estimates use the same draws, so they agree far inside their error bars.
pub fn translation_invariance_check(
    channel: &GaussianChannel,
    input_mean: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    let (h0, se0) = mc_gaussian_entropy(channel, None, n_samples, seed)?;
    let (h1, _) = mc_gaussian_entropy(channel, Some(input_mean), n_samples, seed)?;
    let analytic = entropy_via_det(channel)?;
    let diff = (h1 - h0).abs();
    Ok(CheckReport {
        check: format!("translation_invariance({}x{})", channel.m(), channel.n()),
        passed: diff <= 3.0 * se0 && (h0 - analytic).abs() <= 4.0 * se0,
        seed: Some(seed),
        measured: BTreeMap::from([
            ("h_zero_mean".into(), h0),
            ("h_shifted_mean".into(), h1),
            ("abs_difference".into(), diff),
            ("analytic".into(), analytic),
            ("mc_std_err".into(), se0),
        ]),
        tolerance: BTreeMap::from([
            ("difference_in_std_errs".into(), 3.0),
            ("analytic_gap_in_std_errs".into(), 4.0),
        ]),
        notes: Vec::new(),
    })
}

/// On the circle `σ₁² + σ₂² = C`, the entropy of `(√(C − t²), t)` must
/// increase strictly as `t` grows to `√(C/2)` (spectrum becoming isotropic).
pub fn spread_monotonicity_check(c: f64, grid: usize) -> Result<CheckReport> {
    if !(c > 0.0) || grid < 2 {
        return Err(Error::Config("need C > 0 and at least two grid points".into()));
    }
    let t_max = (c / 2.0).sqrt();
    let mut prev = f64::NEG_INFINITY;
    let mut violations = 0usize;
    let mut min_step = f64::INFINITY;
    for i in 1..=grid {
        let t = t_max * i as f64 / grid as f64;
        let big = (c - t * t).sqrt();
        let h = gaussian_output_entropy(&[big, t], 2, 1.0)?;
        if h <= prev {
            violations += 1;
        }
        if prev.is_finite() {
            min_step = min_step.min(h - prev);
        }
        prev = h;
    }
    Ok(CheckReport {
        check: format!("spread_monotonicity(C={c})"),
        passed: violations == 0,
        seed: None,
        measured: BTreeMap::from([
            ("violations".into(), violations as f64),
            ("min_increment".into(), min_step),
            ("grid_points".into(), grid as f64),
        ]),
        tolerance: BTreeMap::from([("violations".into(), 0.0)]),
        notes: Vec::new(),
    })
}
