//! Box-constrained Levenberg-Marquardt with a central-difference Jacobian.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative chi-square reduction (actual and predicted) below which the fit stops.
    pub ftol: f64,
    /// Relative step size below which the fit stops.
    pub xtol: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iterations: 200, ftol: 1e-12, xtol: 1e-10, lambda0: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub x: Vec<f64>,
    pub chi2: f64,
    /// `(J^T J)^-1` at the solution, when it exists.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

fn clamp(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

fn jacobian<F: Fn(&[f64], &mut [f64])>(f: &F, x: &[f64], steps: &[f64], m: usize) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    let mut rp = vec![0.0; m];
    let mut rm = vec![0.0; m];
    for j in 0..n {
        let h = steps[j];
        xp[j] = x[j] + h;
        f(&xp, &mut rp);
        xp[j] = x[j] - h;
        f(&xp, &mut rm);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Minimize `sum r_i(x)^2` with `lo <= x <= hi`.
///
/// `f(x, r)` writes the `m` weighted residuals. The residual function must
/// be defined slightly outside the box, since derivatives at a bound are
/// taken symmetrically. Trial points are projected onto the box.
pub fn minimize<F: Fn(&[f64], &mut [f64])>(
    f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    steps: &[f64],
    m: usize,
    opts: &LmOptions,
) -> LmResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp(&mut x, lo, hi);
    let mut r = vec![0.0; m];
    f(&x, &mut r);
    let mut chi2: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = opts.lambda0;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut rt = vec![0.0; m];

    while iterations < opts.max_iterations && !converged {
        iterations += 1;
        let jac = jacobian(&f, &x, steps, m);
        let rv = DVector::from_column_slice(&r);
        let h = jac.transpose() * &jac;
        let g = jac.transpose() * &rv;
        loop {
            let mut a = h.clone();
            for j in 0..n {
                a[(j, j)] += lambda * h[(j, j)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    converged = true;
                    break;
                }
                continue;
            };
            for j in 0..n {
                trial[j] = x[j] + delta[j];
            }
            clamp(&mut trial, lo, hi);
            f(&trial, &mut rt);
            let chi2_t: f64 = rt.iter().map(|v| v * v).sum();
            if chi2_t.is_finite() && chi2_t < chi2 {
                let actual = (chi2 - chi2_t) / chi2.max(1e-300);
                let taken = DVector::from_iterator(n, (0..n).map(|j| trial[j] - x[j]));
                let lin = &rv + &jac * &taken;
                let predicted = (chi2 - lin.norm_squared()) / chi2.max(1e-300);
                let small_step = (0..n).all(|j| (trial[j] - x[j]).abs() <= opts.xtol * (x[j].abs() + steps[j]));
                x.copy_from_slice(&trial);
                r.copy_from_slice(&rt);
                chi2 = chi2_t;
                lambda = (lambda / 3.0).max(1e-15);
                if (actual <= opts.ftol && predicted.abs() <= opts.ftol) || small_step {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                // no descent direction left inside the box
                converged = true;
                break;
            }
        }
    }

    let jac = jacobian(&f, &x, steps, m);
    let covariance = (jac.transpose() * &jac).try_inverse();
    LmResult { x, chi2, covariance, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential() {
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|&x| 2.5 * (-1.3 * x).exp() + 0.2).collect();
        let f = |p: &[f64], r: &mut [f64]| {
            for i in 0..t.len() {
                r[i] = p[0] * (-p[1] * t[i]).exp() + p[2] - y[i];
            }
        };
        let res = minimize(f, &[1.0, 0.5, 0.0], &[-10.0; 3], &[10.0; 3], &[1e-6; 3], t.len(), &LmOptions::default());
        assert!(res.converged);
        assert!((res.x[0] - 2.5).abs() < 1e-8 && (res.x[1] - 1.3).abs() < 1e-8 && (res.x[2] - 0.2).abs() < 1e-8);
        assert!(res.chi2 < 1e-20);
    }

    #[test]
    fn respects_bounds() {
        // unconstrained optimum at x = 3
        let f = |p: &[f64], r: &mut [f64]| {
            r[0] = p[0] - 3.0;
            r[1] = 0.5 * (p[0] - 3.0);
        };
        let res = minimize(f, &[0.0], &[-1.0], &[1.0], &[1e-6], 2, &LmOptions::default());
        assert_eq!(res.x[0], 1.0);
        assert!(res.converged);
    }

    #[test]
    fn covariance_of_linear_model() {
        // y = a + b x with unit weights: cov = (X^T X)^-1
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.1, 4.9, 7.0];
        let f = |p: &[f64], r: &mut [f64]| {
            for i in 0..4 {
                r[i] = p[0] + p[1] * xs[i] - ys[i];
            }
        };
        let res = minimize(f, &[0.0, 0.0], &[-1e9; 2], &[1e9; 2], &[1e-3; 2], 4, &LmOptions::default());
        let cov = res.covariance.unwrap();
        // sum x = 6, sum x^2 = 14, n = 4, det = 20
        assert!((cov[(0, 0)] - 14.0 / 20.0).abs() < 1e-9);
        assert!((cov[(1, 1)] - 4.0 / 20.0).abs() < 1e-9);
        assert!((cov[(0, 1)] + 6.0 / 20.0).abs() < 1e-9);
    }
}
