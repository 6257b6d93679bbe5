//! Test-only reference implementations. Nothing here calls the library's
//! decompositions, so agreement with them is an independent check.
#![allow(dead_code)]

use kappatune::linalg::Matrix;
use kappatune::rng::Stream;

/// Eigenvalues of a symmetric `n × n` row-major matrix by the cyclic Jacobi
/// method, descending.
pub fn jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    let idx = |r: usize, c: usize| r * n + c;
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| a[idx(r, c)].powi(2))
            .sum();
        let diag: f64 = (0..n).map(|i| a[idx(i, i)].powi(2)).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[idx(p, q)];
                if apq == 0.0 {
                    continue;
                }
                // annihilate a[p][q] with the rotation of Rutishauser's form
                let theta = (a[idx(q, q)] - a[idx(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[idx(k, p)], a[idx(k, q)]);
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[idx(p, k)], a[idx(q, k)]);
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[idx(i, i)]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Singular values as square roots of the eigenvalues of the smaller Gram
/// matrix, descending, `min(m, n)` of them.
pub fn oracle_singular_values(w: &Matrix<f64>) -> Vec<f64> {
    let (m, n) = (w.rows(), w.cols());
    let k = m.min(n);
    let mut g = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            g[i * k + j] = if m <= n {
                (0..n).map(|c| w[(i, c)] * w[(j, c)]).sum()
            } else {
                (0..m).map(|r| w[(r, i)] * w[(r, j)]).sum()
            };
        }
    }
    jacobi_eigenvalues(g, k).into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

pub fn random_matrix(stream: &mut Stream, m: usize, n: usize) -> Matrix<f64> {
    Matrix::from_fn(m, n, |_, _| stream.uniform_in(-1.0, 1.0))
}

/// Random orthogonal matrix from modified Gram–Schmidt on the columns of a
/// seeded Gaussian matrix.
pub fn random_orthogonal(stream: &mut Stream, n: usize) -> Matrix<f64> {
    let mut cols: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| stream.normal()).collect()).collect();
    for j in 0..n {
        for i in 0..j {
            let d: f64 = (0..n).map(|k| cols[i][k] * cols[j][k]).sum();
            for k in 0..n {
                cols[j][k] -= d * cols[i][k];
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut cols[j] {
            *v /= norm;
        }
    }
    Matrix::from_fn(n, n, |r, c| cols[c][r])
}

/// `max_i |a_i - b_i| / max(|b|_∞, tiny)`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}


/// Central finite-difference check of the MLP's analytic gradients on a
/// random model with sizes at most `[5, 7, 3]` and a random batch. Returns
/// the worst per-tensor relative error `‖g − ĝ‖∞ / max(‖g‖∞, ‖ĝ‖∞)`.
pub fn gradient_check(seed: u64, step: f64) -> f64 {
    use kappatune::infotheory::Activation;
    use kappatune::toytrain::{build_mlp, LossKind};

    let mut s = Stream::new(seed);
    let depth = 2 + s.index(2);
    let caps = [5usize, 7, 3];
    let sizes: Vec<usize> = (0..depth)
        .map(|i| 1 + s.index(if i == depth - 1 { caps[2] } else { caps[i.min(1)] }))
        .collect();
    let act = [Activation::Tanh, Activation::Sigmoid, Activation::Softplus][s.index(3)];
    let loss = if s.index(2) == 0 { LossKind::Mse } else { LossKind::CrossEntropy };
    let mut model = build_mlp::<f64>(&sizes, act, s.next_u64()).unwrap();
    let batch = 1 + s.index(6);
    let x = Matrix::from_fn(batch, sizes[0], |_, _| s.normal());
    let out = *sizes.last().unwrap();
    let t = match loss {
        LossKind::Mse => Matrix::from_fn(batch, out, |_, _| s.normal()),
        LossKind::CrossEntropy => {
            let labels: Vec<usize> = (0..batch).map(|_| s.index(out)).collect();
            Matrix::from_fn(batch, out, |r, c| if labels[r] == c { 1.0 } else { 0.0 })
        }
    };
    let (_, grads) = model.loss_and_gradients(&x, &t, loss).unwrap();
    let mut worst = 0.0f64;
    for name in model.param_names() {
        let analytic = grads.get(&name).unwrap().to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = model.param(&name).unwrap()[i];
            model.param_mut(&name).unwrap()[i] = orig + step;
            let up = model.loss(&x, &t, loss).unwrap();
            model.param_mut(&name).unwrap()[i] = orig - step;
            let down = model.loss(&x, &t, loss).unwrap();
            model.param_mut(&name).unwrap()[i] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = analytic.iter().chain(&numeric).fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}
