use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    entropy_via_det, gaussian_output_entropy, knn_entropy_bits, log2_two_pi_e, mc_entropy_bound_check,
    scale_shift_check, spread_monotonicity_check, theorem1_dominance_check, theorem1_numeric_check,
    translation_invariance_check, Activation, CheckReport, GaussianChannel, DUAL_PATH_MAX_KAPPA, DUAL_PATH_TOL,
    MIN_MC_SAMPLES,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Stream;

pub const DUAL_PATH_MATRICES: usize = 200;
pub const KNN_TOL_BITS: f64 = 0.03;
pub const THEOREM1_RESTARTS: usize = 100;
pub const THEOREM1_POINTS: usize = 1000;
pub const BOUND_CHANNELS: usize = 5;
const THEOREM1_BUDGETS: [f64; 3] = [1.0, 2.0, 4.0];
const THEOREM1_DIMS: [usize; 3] = [2, 4, 8];
const SCALE_FACTORS: [f64; 3] = [0.5, 2.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySuiteConfig {
    pub samples: usize,
    pub seed: u64,
    /// Largest matrix dimension for randomly drawn channels.
    pub max_dim: usize,
    /// Neighbour rank for the k-NN entropy estimator.
    pub knn_k: usize,
}

impl Default for TheorySuiteConfig {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 0,
            max_dim: 8,
            knn_k: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub config: TheorySuiteConfig,
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

impl VerificationReport {
    pub fn failed(&self) -> impl Iterator<Item = &CheckReport> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn random_matrix(stream: &mut Stream, m: usize, n: usize) -> Matrix<f64> {
    Matrix::from_fn(m, n, |_, _| stream.uniform_in(-1.0, 1.0))
}

/// Random `m × n` channel with `1 ≤ m ≤ n ≤ max_dim`.
fn random_wide_dims(stream: &mut Stream, max_dim: usize) -> (usize, usize) {
    let m = 1 + stream.index(max_dim);
    let n = m + stream.index(max_dim - m + 1);
    (m, n)
}

/// Singular-value route against determinant route on random full-rank
/// channels. Draws with κ above [`DUAL_PATH_MAX_KAPPA`] are redrawn.
pub fn dual_path_check(count: usize, max_dim: usize, seed: u64) -> Result<CheckReport> {
    let mut stream = Stream::new(seed);
    let mut max_rel = 0.0f64;
    let mut redrawn = 0usize;
    let mut done = 0usize;
    while done < count {
        let (m, n) = random_wide_dims(&mut stream, max_dim);
        let sigma_x = stream.uniform_in(0.25, 2.0);
        let ch = GaussianChannel::new(random_matrix(&mut stream, m, n), sigma_x)?;
        let sigmas = ch.weights().singular_values();
        if sigmas[m - 1] * DUAL_PATH_MAX_KAPPA < sigmas[0] {
            redrawn += 1;
            continue;
        }
        let det = match entropy_via_det(&ch) {
            Ok(h) => h,
            Err(Error::SingularCovariance(_)) => {
                redrawn += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let svd = gaussian_output_entropy(&sigmas, m, sigma_x)?;
        max_rel = max_rel.max((svd - det).abs() / svd.abs().max(1.0));
        done += 1;
    }
    Ok(CheckReport {
        check: "entropy_dual_path".into(),
        passed: max_rel <= DUAL_PATH_TOL,
        seed: Some(seed),
        measured: BTreeMap::from([
            ("max_relative_difference".into(), max_rel),
            ("matrices".into(), count as f64),
            ("redrawn_ill_conditioned".into(), redrawn as f64),
        ]),
        tolerance: BTreeMap::from([("max_relative_difference".into(), DUAL_PATH_TOL)]),
        notes: Vec::new(),
    })
}

/// k-NN estimate of `h(N(0, I_m))` against `(m/2) log2(2πe)`.
pub fn knn_anchor_check(m: usize, samples: usize, k: usize, seed: u64) -> Result<CheckReport> {
    let mut stream = Stream::new(seed);
    let pts: Vec<f64> = (0..samples * m).map(|_| stream.normal()).collect();
    let estimate = knn_entropy_bits(&pts, m, k)?;
    let analytic = gaussian_output_entropy(&vec![1.0; m], m, 1.0)?;
    debug_assert!((analytic - 0.5 * m as f64 * log2_two_pi_e()).abs() < 1e-12);
    let err = (estimate - analytic).abs();
    Ok(CheckReport {
        check: format!("knn_entropy_anchor(m={m})"),
        passed: err <= KNN_TOL_BITS,
        seed: Some(seed),
        measured: BTreeMap::from([
            ("knn_estimate_bits".into(), estimate),
            ("analytic_bits".into(), analytic),
            ("abs_error_bits".into(), err),
            ("samples".into(), samples as f64),
            ("k".into(), k as f64),
        ]),
        tolerance: BTreeMap::from([("abs_error_bits".into(), KNN_TOL_BITS)]),
        notes: Vec::new(),
    })
}

/// Activation entropy correction must be ≤ 0 up to 3 standard errors on
/// random channels; identity must give exactly 0.
pub fn contractive_bound_check(
    activation: Activation,
    channels: usize,
    max_dim: usize,
    samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    let mut stream = Stream::new(seed);
    let mut worst_margin = f64::NEG_INFINITY;
    let mut max_correction = f64::NEG_INFINITY;
    let mut identity_nonzero = 0usize;
    let mut tight_violations = 0usize;
    let mut ok = true;
    for i in 0..channels {
        let (m, n) = random_wide_dims(&mut stream, max_dim);
        let ch = loop {
            let ch = GaussianChannel::new(random_matrix(&mut stream, m, n), 1.0)?;
            if entropy_via_det(&ch).is_ok() {
                break ch;
            }
        };
        let run_seed = Stream::derived(seed, i as u64).next_u64();
        let r = mc_entropy_bound_check(&ch, &activation, samples, run_seed)?;
        ok &= r.bound_holds;
        worst_margin = worst_margin.max(r.correction - 3.0 * r.mc_std_err);
        max_correction = max_correction.max(r.correction);
        // slope bound b gives correction <= m log2 b
        let tight = m as f64 * activation.derivative_bound().log2();
        if r.correction > tight + 3.0 * r.mc_std_err {
            tight_violations += 1;
        }
        let id = mc_entropy_bound_check(&ch, &Activation::Identity, MIN_MC_SAMPLES, run_seed)?;
        if id.correction != 0.0 || id.h_mc != id.h_formula {
            identity_nonzero += 1;
        }
    }
    Ok(CheckReport {
        check: format!("contractive_bound({activation})"),
        passed: ok && identity_nonzero == 0 && tight_violations == 0,
        seed: Some(seed),
        measured: BTreeMap::from([
            ("max_correction_bits".into(), max_correction),
            ("max_correction_minus_3se".into(), worst_margin),
            ("identity_nonzero_corrections".into(), identity_nonzero as f64),
            ("slope_bound_violations".into(), tight_violations as f64),
            ("channels".into(), channels as f64),
            ("samples".into(), samples as f64),
        ]),
        tolerance: BTreeMap::from([
            ("max_correction_minus_3se".into(), 0.0),
            ("identity_nonzero_corrections".into(), 0.0),
        ]),
        notes: Vec::new(),
    })
}

/// Runs every entropy and log-volume optimum check.
pub fn run_theory_suite(config: &TheorySuiteConfig) -> Result<VerificationReport> {
    if config.samples < MIN_MC_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: config.samples,
            min: MIN_MC_SAMPLES,
        });
    }
    if config.max_dim == 0 {
        return Err(Error::Config("max_dim must be >= 1".into()));
    }
    let seed_for = |salt: u64| Stream::derived(config.seed, salt).next_u64();
    let mut checks = Vec::new();
    let timed = |checks: &mut Vec<CheckReport>, r: CheckReport, start: Instant| {
        log::info!(
            "{}: {} ({:.2}s)",
            r.check,
            if r.passed { "pass" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        checks.push(r);
    };

    let t = Instant::now();
    timed(&mut checks, dual_path_check(DUAL_PATH_MATRICES, config.max_dim, seed_for(1))?, t);

    for m in 1..=config.max_dim.min(3) {
        let t = Instant::now();
        let r = knn_anchor_check(m, config.samples, config.knn_k, seed_for(10 + m as u64))?;
        timed(&mut checks, r, t);
    }

    for (i, &c) in THEOREM1_BUDGETS.iter().enumerate() {
        for (j, &p) in THEOREM1_DIMS.iter().enumerate() {
            let salt = 100 + (i * THEOREM1_DIMS.len() + j) as u64;
            let t = Instant::now();
            timed(&mut checks, theorem1_numeric_check(c, p, THEOREM1_RESTARTS, seed_for(salt))?, t);
            let t = Instant::now();
            timed(&mut checks, theorem1_dominance_check(c, p, THEOREM1_POINTS, seed_for(salt + 50))?, t);
        }
    }

    for c in THEOREM1_BUDGETS {
        let t = Instant::now();
        timed(&mut checks, spread_monotonicity_check(c, 1000)?, t);
    }

    let activations = [
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softplus,
        Activation::LeakyRelu(0.01),
    ];
    for (i, act) in activations.into_iter().enumerate() {
        let t = Instant::now();
        let r = contractive_bound_check(act, BOUND_CHANNELS, config.max_dim, config.samples, seed_for(200 + i as u64))?;
        timed(&mut checks, r, t);
    }

    for m in 1..=3 {
        for (i, &c) in SCALE_FACTORS.iter().enumerate() {
            let t = Instant::now();
            let r = scale_shift_check(m, c, config.samples, seed_for(300 + (m * 10 + i) as u64))?;
            timed(&mut checks, r, t);
        }
    }

    {
        let mut stream = Stream::new(seed_for(400));
        let (m, n) = random_wide_dims(&mut stream, config.max_dim);
        let ch = loop {
            let ch = GaussianChannel::new(random_matrix(&mut stream, m, n), 1.0)?;
            if entropy_via_det(&ch).is_ok() {
                break ch;
            }
        };
        let mean: Vec<f64> = (0..n).map(|_| stream.uniform_in(-10.0, 10.0)).collect();
        let t = Instant::now();
        timed(&mut checks, translation_invariance_check(&ch, &mean, config.samples, seed_for(401))?, t);
    }

    let passed = checks.iter().all(|c| c.passed);
    Ok(VerificationReport {
        config: config.clone(),
        passed,
        checks,
    })
}
