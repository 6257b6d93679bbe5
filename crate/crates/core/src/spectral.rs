//! Singular-value spectra of weight tensors: condition number, Frobenius
//! norm and log-volume.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tensor_io::{CheckpointView, TensorRecord};
use crate::Scalar;

/// Relative threshold (against σ_max) below which a singular value counts
/// as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

/// Default number of singular values kept per line of a JSON-lines report.
pub const DEFAULT_SIGMA_CAP: usize = 64;

/// Reshapes a tensor of rank ≥ 2 into a `(d_out, d_in)` matrix: dimension 0
/// becomes the rows and the trailing dimensions are flattened row-major into
/// the columns, e.g. a conv kernel `[out, in, kh, kw]` becomes
/// `out × (in·kh·kw)`.
pub fn reshape_to_matrix<T: Scalar>(tensor: &TensorRecord) -> Result<Matrix<T>> {
    let shape = tensor.shape();
    if shape.len() < 2 {
        return Err(Error::NotEligible {
            name: tensor.name().to_string(),
            reason: format!("{}-D tensor cannot be reshaped to a matrix", shape.len()),
        });
    }
    let rows = shape[0];
    let cols = shape[1..].iter().product();
    let values = tensor.values_f32();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteData {
            name: tensor.name().to_string(),
            index,
        });
    }
    Matrix::new(rows, cols, values.into_iter().map(|v| T::of(v as f64)).collect())
}

/// Singular values of `matrix`, descending, `min(m, n)` of them.
pub fn singular_values<T: Scalar>(matrix: &Matrix<T>) -> Result<Vec<T>> {
    if let Some(index) = matrix.first_non_finite() {
        return Err(Error::NonFiniteData {
            name: "<matrix>".into(),
            index,
        });
    }
    Ok(matrix.singular_values())
}

/// Result of applying the zero threshold to a spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditioning<T> {
    pub kappa: T,
    pub sigma_max: T,
    pub sigma_min_nonzero: T,
    pub numerical_rank: usize,
    /// Absolute threshold, `zero_tol · σ_max`.
    pub threshold: T,
}

fn check_spectrum<T: Scalar>(sigmas: &[T], zero_tol: T) -> Result<()> {
    if sigmas.is_empty() {
        return Err(Error::Config("empty spectrum".into()));
    }
    if !(zero_tol >= T::zero()) || !zero_tol.is_finite() {
        return Err(Error::Config(format!("zero tolerance {zero_tol} must be finite and >= 0")));
    }
    if sigmas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Config("spectrum must be sorted descending".into()));
    }
    Ok(())
}

/// κ = σ_max / σ_min_nonzero, where "non-zero" means strictly above
/// `zero_tol · σ_max`.
pub fn condition_number<T: Scalar>(sigmas: &[T], zero_tol: T) -> Result<Conditioning<T>> {
    check_spectrum(sigmas, zero_tol)?;
    let sigma_max = sigmas[0];
    let threshold = zero_tol * sigma_max;
    let numerical_rank = sigmas.iter().take_while(|&&s| s > threshold).count();
    if sigma_max <= T::zero() || numerical_rank == 0 {
        return Err(Error::ZeroTensor("<spectrum>".into()));
    }
    let sigma_min_nonzero = sigmas[numerical_rank - 1];
    Ok(Conditioning {
        kappa: sigma_max / sigma_min_nonzero,
        sigma_max,
        sigma_min_nonzero,
        numerical_rank,
        threshold,
    })
}

pub fn frobenius_norm<T: Scalar>(matrix: &Matrix<T>) -> Result<T> {
    if let Some(index) = matrix.first_non_finite() {
        return Err(Error::NonFiniteData {
            name: "<matrix>".into(),
            index,
        });
    }
    Ok(matrix.frobenius_norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogVolume<T> {
    /// Σ log2 σ_i over the singular values above threshold.
    pub bits: T,
    /// Number of terms included.
    pub terms: usize,
}

pub fn log_volume<T: Scalar>(sigmas: &[T], zero_tol: T) -> Result<LogVolume<T>> {
    let c = condition_number(sigmas, zero_tol)?;
    let bits = sigmas[..c.numerical_rank].iter().map(|s| s.log2()).sum();
    Ok(LogVolume {
        bits,
        terms: c.numerical_rank,
    })
}

/// Per-tensor spectrum report. Serializes as one JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub name: String,
    pub m: usize,
    pub n: usize,
    pub sigmas: Vec<f64>,
    pub sigma_max: f64,
    pub sigma_min_nonzero: f64,
    pub kappa: f64,
    pub frobenius: f64,
    pub log_volume: f64,
    pub numerical_rank: usize,
    pub zero_tolerance_used: f64,
}

impl SpectralSummary {
    /// True when the matrix has more rows than columns, in which case the
    /// Gaussian output covariance `W Wᵀ` is singular.
    pub fn is_tall(&self) -> bool {
        self.m > self.n
    }

    pub fn is_full_rank(&self) -> bool {
        self.numerical_rank == self.m.min(self.n)
    }

    /// Number of scalar parameters in the underlying tensor.
    pub fn numel(&self) -> usize {
        self.m * self.n
    }

    /// Copy with at most `cap` singular values retained.
    pub fn capped(&self, cap: usize) -> Self {
        let mut s = self.clone();
        s.sigmas.truncate(cap);
        s
    }
}

/// Full spectral summary of one eligible tensor, computed in `f64`.
pub fn spectral_summary(tensor: &TensorRecord, zero_tol: f64) -> Result<SpectralSummary> {
    let name = tensor.name();
    let matrix: Matrix<f64> = reshape_to_matrix(tensor)?;
    let sigmas = singular_values(&matrix)?;
    let cond = condition_number(&sigmas, zero_tol).map_err(|e| match e {
        Error::ZeroTensor(_) => Error::ZeroTensor(name.to_string()),
        e => e,
    })?;
    let log_vol: f64 = sigmas[..cond.numerical_rank].iter().map(|s| s.log2()).sum();
    Ok(SpectralSummary {
        name: name.to_string(),
        m: matrix.rows(),
        n: matrix.cols(),
        frobenius: frobenius_norm(&matrix)?,
        sigma_max: cond.sigma_max,
        sigma_min_nonzero: cond.sigma_min_nonzero,
        kappa: cond.kappa,
        log_volume: log_vol,
        numerical_rank: cond.numerical_rank,
        zero_tolerance_used: cond.threshold,
        sigmas,
    })
}

/// Summaries for `names` read from `view`, computed on the current rayon
/// pool. Results come back in the order of `names`, independent of thread
/// count.
pub fn summarize_tensors(
    view: &CheckpointView,
    names: &[String],
    zero_tol: f64,
) -> Vec<(String, Result<SpectralSummary>)> {
    names
        .par_iter()
        .map(|n| {
            let res = view.read_tensor(n).and_then(|t| spectral_summary(&t, zero_tol));
            (n.clone(), res)
        })
        .collect()
}

/// Same as [`summarize_tensors`] for in-memory records.
pub fn summarize_records(
    records: &[&TensorRecord],
    zero_tol: f64,
) -> Vec<(String, Result<SpectralSummary>)> {
    records
        .par_iter()
        .map(|t| (t.name().to_string(), spectral_summary(t, zero_tol)))
        .collect()
}

/// Writes one compact JSON object per summary, one per line.
pub fn write_jsonl<W: Write>(mut out: W, summaries: &[SpectralSummary], sigma_cap: usize) -> Result<()> {
    for s in summaries {
        serde_json::to_writer(&mut out, &s.capped(sigma_cap))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<SpectralSummary>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
