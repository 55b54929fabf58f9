use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lm::Problem;
use super::EstimateError;
use crate::phys_model::{DecayFitParams, DecayForm};
use crate::time::TimeNs;

const STARTS: usize = 16;
const FIT_SEED: u64 = 0x05ee_df17;
const MAX_ITER: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub t_ns: f64,
    pub g2: f64,
    pub err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: DecayFitParams,
    /// One-sigma errors on `a`, `b`, `c` (`c` is zero for the exponential form).
    pub std_errs: [f64; 3],
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    pub converged_starts: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifetimeConvention {
    /// `g(t) = g(0) / e`
    #[default]
    Peak,
    /// `g(t) - 1 = (g(0) - 1) / e`
    Excess,
}

fn rq_model(t: f64, p: &[f64], grad: &mut [f64]) -> f64 {
    let d = 1.0 + p[0] * t + p[1] * t * t;
    let inv = 1.0 / d;
    grad[0] = -p[2] * t * inv * inv;
    grad[1] = -p[2] * t * t * inv * inv;
    grad[2] = inv;
    1.0 + p[2] * inv
}

fn rq_project(p: &mut [f64]) {
    p[0] = p[0].max(0.0);
    p[1] = p[1].max(0.0);
    p[2] = p[2].max(1e-12);
}

fn exp_model(t: f64, p: &[f64], grad: &mut [f64]) -> f64 {
    let e = (-p[1] * t).exp();
    grad[0] = e;
    grad[1] = -p[0] * t * e;
    p[0] * e
}

fn exp_project(p: &mut [f64]) {
    p[0] = p[0].max(1e-300);
    p[1] = p[1].max(0.0);
}

/// Heuristic start and per-parameter scales from the data.
fn initial_guess(form: DecayForm, s: &[DecaySample]) -> (Vec<f64>, Vec<f64>) {
    let t_min = s.iter().map(|p| p.t_ns).fold(f64::INFINITY, f64::min);
    let t_max = s.iter().map(|p| p.t_ns).fold(f64::NEG_INFINITY, f64::max);
    let span = (t_max - t_min).max(t_max.abs()).max(1e-9);
    match form {
        DecayForm::RationalQuadratic => {
            let first = s.iter().min_by(|a, b| a.t_ns.total_cmp(&b.t_ns)).unwrap();
            let c0 = (first.g2 - 1.0).max(1e-3);
            let t_half = s
                .iter()
                .filter(|p| p.g2 - 1.0 < c0 / 2.0)
                .map(|p| p.t_ns)
                .fold(f64::INFINITY, f64::min);
            let a0 = if t_half.is_finite() && t_half > 0.0 {
                1.0 / t_half
            } else {
                0.5 / span
            };
            (vec![a0, 0.1 * a0 * a0, c0], vec![1.0 / span, 1.0 / (span * span), c0])
        }
        DecayForm::Exponential => {
            // weighted log-linear regression
            let (mut sw, mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for p in s.iter().filter(|p| p.g2 > 0.0) {
                let w = (p.g2 / p.err).powi(2);
                let ly = p.g2.ln();
                sw += w;
                st += w * p.t_ns;
                sy += w * ly;
                stt += w * p.t_ns * p.t_ns;
                sty += w * p.t_ns * ly;
            }
            let det = sw * stt - st * st;
            let (mut a0, mut b0) = if sw > 0.0 && det.abs() > 0.0 {
                let slope = (sw * sty - st * sy) / det;
                (((sy - slope * st) / sw).exp(), -slope)
            } else {
                (s.iter().map(|p| p.g2).fold(0.0, f64::max), 1.0 / span)
            };
            if !a0.is_finite() || a0 <= 0.0 {
                a0 = s.iter().map(|p| p.g2.abs()).fold(1e-12, f64::max);
            }
            if !b0.is_finite() {
                b0 = 1.0 / span;
            }
            let b0 = b0.max(0.0);
            (vec![a0, b0], vec![a0, b0.max(1.0 / span)])
        }
    }
}

/// Weighted least-squares fit of one of the two decay forms.
///
/// Sixteen seeded starts (the data heuristic plus fifteen log-space
/// perturbations of it) are refined by a projected Levenberg-Marquardt
/// solver; the lowest chi-square wins.
pub fn fit_decay(samples: &[DecaySample], form: DecayForm) -> Result<FitReport, EstimateError> {
    let need = match form {
        DecayForm::RationalQuadratic => 4,
        DecayForm::Exponential => 2,
    };
    if samples.len() < need {
        return Err(EstimateError::TooFewPoints {
            need,
            got: samples.len(),
        });
    }
    for (i, p) in samples.iter().enumerate() {
        if !(p.err > 0.0 && p.err.is_finite() && p.g2.is_finite() && p.t_ns.is_finite()) {
            return Err(EstimateError::BadErrorBar { index: i });
        }
    }
    let xs: Vec<f64> = samples.iter().map(|p| p.t_ns).collect();
    let ys: Vec<f64> = samples.iter().map(|p| p.g2).collect();
    let sigmas: Vec<f64> = samples.iter().map(|p| p.err).collect();
    let (guess, scale) = initial_guess(form, samples);
    let (model, project): (&dyn Fn(f64, &[f64], &mut [f64]) -> f64, &dyn Fn(&mut [f64])) = match form {
        DecayForm::RationalQuadratic => (&rq_model, &rq_project),
        DecayForm::Exponential => (&exp_model, &exp_project),
    };
    let problem = Problem {
        xs: &xs,
        ys: &ys,
        sigmas: &sigmas,
        model,
        project,
        scale: &scale,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(FIT_SEED);
    let mut best: Option<super::lm::Solution> = None;
    let mut converged_starts = 0;
    let mut worst_iter = 0;
    for s in 0..STARTS {
        let start: Vec<f64> = if s == 0 {
            guess.clone()
        } else {
            guess
                .iter()
                .zip(&scale)
                .map(|(&g, &sc)| {
                    let base = if g > 0.0 { g } else { sc };
                    base * 10f64.powf(rng.gen_range(-1.5..1.5))
                })
                .collect()
        };
        let sol = problem.solve(&start, MAX_ITER);
        worst_iter = worst_iter.max(sol.iterations);
        if !sol.converged || !sol.chi2.is_finite() {
            continue;
        }
        converged_starts += 1;
        if best.as_ref().is_none_or(|b| sol.chi2 < b.chi2) {
            best = Some(sol);
        }
    }
    let Some(best) = best else {
        return Err(EstimateError::FitFailure(format!(
            "no start of {STARTS} converged (up to {worst_iter} iterations each)"
        )));
    };

    let p = &best.params;
    let params = match form {
        DecayForm::RationalQuadratic => DecayFitParams::rational_quadratic(p[0], p[1], p[2]),
        DecayForm::Exponential => DecayFitParams::exponential(p[0], p[1]),
    };
    let mut std_errs = [0.0; 3];
    for (i, e) in std_errs.iter_mut().take(p.len()).enumerate() {
        *e = best.covariance.as_ref().map_or(f64::NAN, |c| c[(i, i)].max(0.0).sqrt());
    }
    let dof = samples.len().saturating_sub(p.len());
    Ok(FitReport {
        params,
        std_errs,
        chi2: best.chi2,
        dof,
        reduced_chi2: best.chi2 / dof.max(1) as f64,
        converged_starts,
    })
}

/// Evaluates the curve at a real-valued time without grid rounding.
fn curve_exact(params: &DecayFitParams, t: f64) -> f64 {
    match params.form {
        DecayForm::RationalQuadratic => 1.0 + params.c / params.rq_denominator(t),
        DecayForm::Exponential => params.a * (-params.b * t).exp(),
    }
}

const LIFETIME_HORIZON_NS: f64 = 1e12;

/// Storage time at which the curve falls to `1/e` of its start, by bracketing
/// and bisection to better than 1e-3 ns.
pub fn lifetime_1e(params: &DecayFitParams, convention: LifetimeConvention) -> Result<TimeNs, EstimateError> {
    params
        .validate()
        .map_err(|_| EstimateError::Unphysical("decay parameters outside their domain"))?;
    let g0 = curve_exact(params, 0.0);
    let target = match convention {
        LifetimeConvention::Peak => g0 / std::f64::consts::E,
        LifetimeConvention::Excess => 1.0 + (g0 - 1.0) / std::f64::consts::E,
    };
    let f = |t: f64| curve_exact(params, t) - target;
    if f(0.0) <= 0.0 {
        return Err(EstimateError::NoCrossing { horizon_ns: 0.0 });
    }
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > LIFETIME_HORIZON_NS {
            return Err(EstimateError::NoCrossing {
                horizon_ns: LIFETIME_HORIZON_NS,
            });
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-5 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(TimeNs::from_ns(0.5 * (lo + hi)))
}
