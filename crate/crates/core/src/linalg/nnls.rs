//! Non-negative quadratic minimization by the Lawson–Hanson active-set method.
//!
//! Solves `min_{theta >= 0} 1/2 theta' G theta - b' theta` for a symmetric
//! positive definite `G`. This is the normal-equation form of NNLS, which is
//! how NNK neighborhoods arrive (a kernel Gram block and a kernel column).

use super::{DenseMatrix, LinalgError};

pub const DEFAULT_NNLS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub theta: Vec<f64>,
    pub objective: f64,
    /// `max(max_i(-g_i, 0), |theta' g|)` with `g = G theta - b`.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Value of `1/2 theta' G theta - b' theta`.
pub fn quadratic_objective(gram: &DenseMatrix, target: &[f64], theta: &[f64]) -> f64 {
    let n = theta.len();
    let mut quad = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += gram[(i, j)] * theta[j];
        }
        quad += theta[i] * row;
    }
    0.5 * quad - theta.iter().zip(target).map(|(t, b)| t * b).sum::<f64>()
}

/// Gradient `G theta - b`.
pub fn quadratic_gradient(gram: &DenseMatrix, target: &[f64], theta: &[f64]) -> Vec<f64> {
    let n = theta.len();
    (0..n)
        .map(|i| (0..n).map(|j| gram[(i, j)] * theta[j]).sum::<f64>() - target[i])
        .collect()
}

pub fn kkt_residual(gram: &DenseMatrix, target: &[f64], theta: &[f64]) -> f64 {
    let g = quadratic_gradient(gram, target, theta);
    let dual = g.iter().fold(0.0f64, |m, gi| m.max(-gi));
    let slack: f64 = theta.iter().zip(&g).map(|(t, gi)| t * gi).sum();
    dual.max(slack.abs())
}

pub fn nnls_solve(gram: &DenseMatrix, target: &[f64], tol: f64) -> Result<NnlsSolution, LinalgError> {
    let n = target.len();
    if !gram.is_square() || gram.rows() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            found: gram.rows(),
        });
    }

    let mut theta = vec![0.0; n];
    let mut passive = vec![false; n];
    let max_outer = 3 * n;
    let mut iterations = 0;

    loop {
        // Negative gradient.
        let grad = quadratic_gradient(gram, target, &theta);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if !passive[i] && -grad[i] > tol && best.is_none_or(|(_, w)| -grad[i] > w) {
                best = Some((i, -grad[i]));
            }
        }
        let Some((enter, _)) = best else { break };
        if iterations == max_outer {
            return Err(LinalgError::NoConvergence { iterations });
        }
        iterations += 1;
        passive[enter] = true;

        loop {
            let set: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let z = solve_passive(gram, target, &set)?;
            if z.iter().all(|&v| v > 0.0) {
                for (&i, &v) in set.iter().zip(&z) {
                    theta[i] = v;
                }
                break;
            }
            // Step toward z until the first passive coordinate hits zero.
            let mut alpha = f64::INFINITY;
            let mut blocking = set[0];
            for (&i, &v) in set.iter().zip(&z) {
                if v <= 0.0 {
                    let denom = theta[i] - v;
                    let a = if denom > 0.0 { theta[i] / denom } else { 0.0 };
                    if a < alpha {
                        alpha = a;
                        blocking = i;
                    }
                }
            }
            for (&i, &v) in set.iter().zip(&z) {
                theta[i] += alpha * (v - theta[i]);
            }
            theta[blocking] = 0.0;
            for &i in &set {
                if theta[i] <= 0.0 {
                    theta[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }

    let objective = quadratic_objective(gram, target, &theta);
    let kkt_residual = kkt_residual(gram, target, &theta);
    Ok(NnlsSolution {
        theta,
        objective,
        kkt_residual,
        iterations,
    })
}

/// Solves `G_PP z = b_P` on the passive set by Cholesky factorization.
fn solve_passive(gram: &DenseMatrix, target: &[f64], set: &[usize]) -> Result<Vec<f64>, LinalgError> {
    let sub = gram.submatrix(set);
    let rhs: Vec<f64> = set.iter().map(|&i| target[i]).collect();
    cholesky_solve(&sub, &rhs)
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn cholesky_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}
