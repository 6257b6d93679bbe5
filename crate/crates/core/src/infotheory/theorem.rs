//! Maximum log-volume under a Frobenius-norm constraint.
//!
//! For singular values on the sphere `Σ σ_k² = C` the log-volume
//! `f(σ) = Σ log2 σ_k` peaks at the isotropic point `σ_k = √(C/p)`, i.e. at
//! condition number 1. [`theorem1_optimum`] gives the closed form;
//! [`theorem1_numeric_check`] reaches it independently by projected gradient
//! ascent from random feasible starts.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::infotheory::CheckReport;
use crate::rng::Stream;

pub const MAX_ASCENT_ITERATIONS: usize = 10_000;
/// Allowed deviation of an ascent end point from `√(C/p)`.
pub const ASCENT_SIGMA_TOL: f64 = 1e-6;
/// Allowed excess of any objective value over the analytic optimum.
pub const OPTIMUM_EXCESS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Optimum {
    pub sigmas: Vec<f64>,
    pub log_volume: f64,
}

fn check_args(c: f64, p: usize) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("norm budget C must be positive, got {c}")));
    }
    if p == 0 {
        return Err(Error::Config("p must be >= 1".into()));
    }
    Ok(())
}

pub fn theorem1_optimum(c: f64, p: usize) -> Result<Theorem1Optimum> {
    check_args(c, p)?;
    let s = (c / p as f64).sqrt();
    Ok(Theorem1Optimum {
        sigmas: vec![s; p],
        log_volume: 0.5 * p as f64 * (c / p as f64).log2(),
    })
}

/// `Σ log2 σ_k`.
pub fn log_volume_objective(sigmas: &[f64]) -> f64 {
    sigmas.iter().map(|s| s.log2()).sum()
}

/// Rescales `sigmas` onto the sphere `Σ σ² = c`.
fn project_to_sphere(sigmas: &mut [f64], c: f64) {
    let norm2: f64 = sigmas.iter().map(|s| s * s).sum();
    let k = (c / norm2).sqrt();
    for s in sigmas {
        *s *= k;
    }
}

/// A random point with positive coordinates on the sphere `Σ σ² = c`.
pub fn random_feasible_point(stream: &mut Stream, c: f64, p: usize) -> Vec<f64> {
    let mut s: Vec<f64> = (0..p).map(|_| stream.uniform_in(1e-3, 1.0)).collect();
    project_to_sphere(&mut s, c);
    s
}

#[derive(Debug, Clone)]
pub struct AscentOutcome {
    pub sigmas: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Ended because no step size improved the objective any further.
    pub stalled: bool,
}

/// Projected gradient ascent of `Σ log2 σ_k` on the sphere `Σ σ_k² = c`.
///
/// Each iteration takes a gradient step, rescales back onto the sphere, and
/// accepts the point only if the objective improves beyond rounding noise, after which the step
/// may grow back (doubling, capped at its initial value `C/p`); otherwise the
/// step size is halved. Stops when the tangential gradient vanishes relative
/// to the full gradient, or when the step size has shrunk below any
/// representable improvement.
pub fn projected_ascent(start: &[f64], c: f64, restart: usize) -> Result<AscentOutcome> {
    check_args(c, start.len())?;
    if start.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Config("ascent start must have positive coordinates".into()));
    }
    let p = start.len();
    let mut sigmas = start.to_vec();
    project_to_sphere(&mut sigmas, c);
    let mut objective = log_volume_objective(&sigmas);
    let initial_step = c / p as f64;
    let mut step = initial_step;
    let mut trace = Vec::new();

    for it in 0..MAX_ASCENT_ITERATIONS {
        let grad: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * LN_2)).collect();
        let radial = grad.iter().zip(&sigmas).map(|(g, s)| g * s).sum::<f64>() / c;
        let tangent2: f64 = grad.iter().zip(&sigmas).map(|(g, s)| (g - radial * s).powi(2)).sum();
        let grad2: f64 = grad.iter().map(|g| g * g).sum();
        if tangent2 <= 1e-20 * grad2 {
            return Ok(AscentOutcome {
                sigmas,
                objective,
                iterations: it,
                stalled: false,
            });
        }
        if step < initial_step * 1e-18 {
            return Ok(AscentOutcome {
                sigmas,
                objective,
                iterations: it,
                stalled: true,
            });
        }

        let mut candidate: Vec<f64> = sigmas.iter().zip(&grad).map(|(s, g)| s + step * g).collect();
        project_to_sphere(&mut candidate, c);
        let cand_obj = log_volume_objective(&candidate);
        // gains inside the rounding error of the sum are noise, not progress
        let noise = 4.0 * f64::EPSILON * candidate.iter().map(|s| s.log2().abs()).sum::<f64>().max(1.0);
        if cand_obj > objective + noise {
            sigmas = candidate;
            objective = cand_obj;
            step = (2.0 * step).min(initial_step);
        } else {
            step *= 0.5;
        }
        trace.push(objective);
        if trace.len() > 8 {
            trace.remove(0);
        }
    }
    Err(Error::ConvergenceFailure { restart, trace })
}

/// Runs the ascent from `n_restarts` random feasible starts and compares each
/// end point with the closed-form optimum.
pub fn theorem1_numeric_check(c: f64, p: usize, n_restarts: usize, seed: u64) -> Result<CheckReport> {
    check_args(c, p)?;
    if n_restarts == 0 {
        return Err(Error::Config("n_restarts must be >= 1".into()));
    }
    let optimum = theorem1_optimum(c, p)?;
    let target = optimum.sigmas[0];
    let mut stream = Stream::new(seed);
    let mut max_dev = 0.0f64;
    let mut max_excess = f64::NEG_INFINITY;
    let mut max_iterations = 0usize;
    let mut stalled = 0usize;
    for r in 0..n_restarts {
        let start = random_feasible_point(&mut stream, c, p);
        let out = projected_ascent(&start, c, r)?;
        let dev = out.sigmas.iter().map(|s| (s - target).abs()).fold(0.0, f64::max);
        max_dev = max_dev.max(dev);
        max_excess = max_excess.max(out.objective - optimum.log_volume);
        max_iterations = max_iterations.max(out.iterations);
        stalled += out.stalled as usize;
    }
    let passed = max_dev < ASCENT_SIGMA_TOL && max_excess <= OPTIMUM_EXCESS_TOL;
    Ok(CheckReport {
        check: format!("theorem1_ascent(C={c}, p={p})"),
        passed,
        seed: Some(seed),
        measured: BTreeMap::from([
            ("max_sigma_deviation".into(), max_dev),
            ("max_objective_excess".into(), max_excess),
            ("max_iterations".into(), max_iterations as f64),
            ("restarts".into(), n_restarts as f64),
            ("stalled_restarts".into(), stalled as f64),
            ("analytic_log_volume".into(), optimum.log_volume),
        ]),
        tolerance: BTreeMap::from([
            ("max_sigma_deviation".into(), ASCENT_SIGMA_TOL),
            ("max_objective_excess".into(), OPTIMUM_EXCESS_TOL),
        ]),
        notes: Vec::new(),
    })
}

/// Evaluates the objective at `n_points` random feasible points; none may
/// exceed the analytic optimum, and any non-uniform point must fall strictly
/// below it.
pub fn theorem1_dominance_check(c: f64, p: usize, n_points: usize, seed: u64) -> Result<CheckReport> {
    let optimum = theorem1_optimum(c, p)?;
    let mut stream = Stream::new(seed);
    let mut max_excess = f64::NEG_INFINITY;
    let mut strictness_violations = 0usize;
    for _ in 0..n_points {
        let s = random_feasible_point(&mut stream, c, p);
        let excess = log_volume_objective(&s) - optimum.log_volume;
        max_excess = max_excess.max(excess);
        let spread = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - s.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread > 1e-9 && excess >= 0.0 {
            strictness_violations += 1;
        }
    }
    Ok(CheckReport {
        check: format!("theorem1_dominance(C={c}, p={p})"),
        passed: max_excess <= OPTIMUM_EXCESS_TOL && strictness_violations == 0,
        seed: Some(seed),
        measured: BTreeMap::from([
            ("max_objective_excess".into(), max_excess),
            ("points".into(), n_points as f64),
            ("strictness_violations".into(), strictness_violations as f64),
        ]),
        tolerance: BTreeMap::from([("max_objective_excess".into(), OPTIMUM_EXCESS_TOL)]),
        notes: Vec::new(),
    })
}
