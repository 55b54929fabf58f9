//! Small projected Levenberg-Marquardt solver for weighted least squares.

use nalgebra::{DMatrix, DVector};

/// Model value and gradient with respect to the parameters at `x`.
pub(crate) type ModelFn<'a> = &'a dyn Fn(f64, &[f64], &mut [f64]) -> f64;
/// Maps a parameter vector back into the feasible set.
pub(crate) type ProjectFn<'a> = &'a dyn Fn(&mut [f64]);

pub(crate) struct Problem<'a> {
    pub xs: &'a [f64],
    pub ys: &'a [f64],
    pub sigmas: &'a [f64],
    pub model: ModelFn<'a>,
    pub project: ProjectFn<'a>,
    /// Characteristic magnitude of each parameter; the solver works in
    /// units of these.
    pub scale: &'a [f64],
}

#[derive(Clone, Debug)]
pub(crate) struct Solution {
    pub params: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Covariance of the parameters (absolute error bars).
    pub covariance: Option<DMatrix<f64>>,
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64], r: &mut DVector<f64>, j: Option<&mut DMatrix<f64>>) -> f64 {
        let k = p.len();
        let mut grad = vec![0.0; k];
        let mut chi2 = 0.0;
        let mut jac = j;
        for (i, ((&x, &y), &s)) in self.xs.iter().zip(self.ys).zip(self.sigmas).enumerate() {
            let f = (self.model)(x, p, &mut grad);
            let ri = (y - f) / s;
            r[i] = ri;
            chi2 += ri * ri;
            if let Some(jm) = jac.as_deref_mut() {
                for c in 0..k {
                    jm[(i, c)] = grad[c] * self.scale[c] / s;
                }
            }
        }
        chi2
    }

    pub fn solve(&self, start: &[f64], max_iter: usize) -> Solution {
        let n = self.xs.len();
        let k = start.len();
        let mut p = start.to_vec();
        (self.project)(&mut p);
        let mut r = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, k);
        let mut chi2 = self.residuals(&p, &mut r, Some(&mut jac));
        let mut lambda = 1e-3;
        let mut converged = false;
        let mut iterations = 0;
        let mut trial = p.clone();
        let mut r_trial = DVector::zeros(n);

        while iterations < max_iter {
            iterations += 1;
            if !chi2.is_finite() {
                break;
            }
            let jtj = jac.transpose() * &jac;
            let jtr = jac.transpose() * &r;
            if jtr.amax() < 1e-14 * (1.0 + chi2) {
                converged = true;
                break;
            }
            let mut accepted = false;
            for _ in 0..40 {
                let mut a = jtj.clone();
                for d in 0..k {
                    a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
                }
                let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                    lambda *= 10.0;
                    continue;
                };
                for c in 0..k {
                    trial[c] = p[c] + step[c] * self.scale[c];
                }
                (self.project)(&mut trial);
                let new_chi2 = self.residuals(&trial, &mut r_trial, None);
                if new_chi2.is_finite() && new_chi2 <= chi2 {
                    let rel_step = (0..k)
                        .map(|c| ((trial[c] - p[c]) / self.scale[c]).abs())
                        .fold(0.0, f64::max);
                    let small = (chi2 - new_chi2) <= 1e-15 * chi2.max(1e-300) || rel_step < 1e-13;
                    p.copy_from_slice(&trial);
                    chi2 = self.residuals(&p, &mut r, Some(&mut jac));
                    lambda = (lambda / 5.0).max(1e-15);
                    accepted = true;
                    if small || chi2 < 1e-28 {
                        converged = true;
                    }
                    break;
                }
                lambda *= 4.0;
                if lambda > 1e16 {
                    break;
                }
            }
            if converged {
                break;
            }
            if !accepted {
                // No descent direction left: a (possibly constrained) minimum.
                converged = chi2.is_finite();
                break;
            }
        }

        let covariance = (jac.transpose() * &jac)
            .try_inverse()
            .map(|m| DMatrix::from_fn(k, k, |a, b| m[(a, b)] * self.scale[a] * self.scale[b]));
        Solution {
            params: p,
            chi2,
            iterations,
            converged,
            covariance,
        }
    }
}
