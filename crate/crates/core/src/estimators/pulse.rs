use serde::{Deserialize, Serialize};

use super::lm::Problem;
use super::EstimateError;
use crate::time::TimeNs;

/// `FWHM / sigma` of a Gaussian, `2 sqrt(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Arrival-time histogram with uniform bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Left edge of the first bin, ns.
    pub start_ns: f64,
    pub bin_width_ns: f64,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn from_samples(samples: &[f64], start_ns: f64, bin_width_ns: f64, bins: usize) -> Self {
        let mut counts = vec![0.0; bins];
        for &s in samples {
            let k = ((s - start_ns) / bin_width_ns).floor();
            if k >= 0.0 && (k as usize) < bins {
                counts[k as usize] += 1.0;
            }
        }
        Self {
            start_ns,
            bin_width_ns,
            counts,
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        self.start_ns + (i as f64 + 0.5) * self.bin_width_ns
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseFit {
    pub fwhm: TimeNs,
    pub center: TimeNs,
    pub sigma_ns: f64,
    /// The pulse is narrower than one bin; `fwhm` is the bin width.
    pub upper_bound: bool,
    /// More than one significant peak was seen; the fit covers the tallest.
    pub multi_peak: bool,
}

fn gauss(t: f64, p: &[f64], g: &mut [f64]) -> f64 {
    let z = (t - p[1]) / p[2];
    let e = (-0.5 * z * z).exp();
    g[0] = e;
    g[1] = p[0] * e * z / p[2];
    g[2] = p[0] * e * z * z / p[2];
    p[0] * e
}

fn gauss_project(p: &mut [f64]) {
    p[0] = p[0].max(0.0);
    p[2] = p[2].abs().max(1e-9);
}

/// Peaks separated by a dip below 80% of the lower peak, counting only
/// peaks above half the maximum.
fn count_peaks(c: &[f64]) -> usize {
    let max = c.iter().cloned().fold(0.0, f64::max);
    let mut peaks = 0;
    let mut current_peak: Option<f64> = None;
    let mut dip = f64::INFINITY;
    for &v in c {
        match current_peak {
            None if v >= 0.5 * max => {
                current_peak = Some(v);
                dip = v;
                peaks = 1;
            }
            Some(p) => {
                dip = dip.min(v);
                if v >= 0.5 * max && dip < 0.8 * p.min(v) {
                    peaks += 1;
                    current_peak = Some(v);
                    dip = v;
                } else if v > p {
                    current_peak = Some(v);
                    dip = v;
                }
            }
            _ => {}
        }
    }
    peaks
}

/// Gaussian least-squares fit of an arrival histogram, weighted by Poisson
/// errors. Returns the FWHM `2 sqrt(2 ln 2) sigma`.
pub fn pulse_duration_fit(h: &Histogram) -> Result<PulseFit, EstimateError> {
    let n = h.counts.len();
    if n < 5 {
        return Err(EstimateError::TooFewPoints { need: 5, got: n });
    }
    if !(h.bin_width_ns > 0.0) {
        return Err(EstimateError::Unphysical("bin width must be positive"));
    }
    let total: f64 = h.counts.iter().sum();
    if total <= 0.0 {
        return Err(EstimateError::Undefined("empty histogram".into()));
    }
    let (imax, &cmax) = h.counts.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let multi_peak = count_peaks(&h.counts) > 1;
    let nonzero = h.counts.iter().filter(|&&c| c > 0.0).count();
    if nonzero == 1 {
        return Ok(PulseFit {
            fwhm: TimeNs::from_ns(h.bin_width_ns),
            center: TimeNs::from_ns(h.center(imax)),
            sigma_ns: h.bin_width_ns / FWHM_PER_SIGMA,
            upper_bound: true,
            multi_peak,
        });
    }

    let xs: Vec<f64> = (0..n).map(|i| h.center(i)).collect();
    let mean = xs.iter().zip(&h.counts).map(|(x, c)| x * c).sum::<f64>() / total;
    let var = xs
        .iter()
        .zip(&h.counts)
        .map(|(x, c)| c * (x - mean).powi(2))
        .sum::<f64>()
        / total;
    let sigmas: Vec<f64> = h.counts.iter().map(|&c| c.max(1.0).sqrt()).collect();
    let start = [cmax, h.center(imax), var.sqrt().max(0.25 * h.bin_width_ns)];
    let scale = [cmax.max(1.0), h.bin_width_ns, start[2]];
    let problem = Problem {
        xs: &xs,
        ys: &h.counts,
        sigmas: &sigmas,
        model: &gauss,
        project: &gauss_project,
        scale: &scale,
    };
    let sol = problem.solve(&start, 500);
    if !sol.chi2.is_finite() {
        return Err(EstimateError::FitFailure("gaussian fit diverged".into()));
    }
    let sigma = sol.params[2].abs();
    let fwhm = sigma * FWHM_PER_SIGMA;
    let upper_bound = fwhm < h.bin_width_ns;
    Ok(PulseFit {
        fwhm: TimeNs::from_ns(if upper_bound { h.bin_width_ns } else { fwhm }),
        center: TimeNs::from_ns(sol.params[1]),
        sigma_ns: sigma,
        upper_bound,
        multi_peak,
    })
}

/// Photon linewidth from a filter-cavity scan, assuming Gaussian line shapes:
/// `sqrt(scan^2 - cavity^2)`.
pub fn bandwidth_deconvolve(scan_fwhm_mhz: f64, cavity_fwhm_mhz: f64) -> Result<f64, EstimateError> {
    if !(cavity_fwhm_mhz > 0.0 && cavity_fwhm_mhz.is_finite() && scan_fwhm_mhz.is_finite()) {
        return Err(EstimateError::Unphysical("cavity linewidth must be positive"));
    }
    if scan_fwhm_mhz <= cavity_fwhm_mhz {
        return Err(EstimateError::Unphysical("scan must be wider than the cavity"));
    }
    Ok((scan_fwhm_mhz.powi(2) - cavity_fwhm_mhz.powi(2)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_hist(sigma: f64, n: usize, width: f64) -> Histogram {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Normal::new(50.0, sigma).unwrap();
        let s: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        Histogram::from_samples(&s, 50.0 - 8.0 * sigma, width, (16.0 * sigma / width) as usize)
    }

    #[test]
    fn fwhm_of_gaussians() {
        let f = pulse_duration_fit(&gaussian_hist(0.68, 200_000, 0.1)).unwrap();
        assert!((f.fwhm.as_ns() - 1.6).abs() < 0.02, "{f:?}");
        assert!(!f.multi_peak);
        let f = pulse_duration_fit(&gaussian_hist(2.0, 200_000, 0.25)).unwrap();
        assert!((f.fwhm.as_ns() / 4.7096 - 1.0).abs() < 0.02, "{f:?}");
    }

    #[test]
    fn single_bin_is_upper_bound() {
        let h = Histogram {
            start_ns: 0.0,
            bin_width_ns: 0.5,
            counts: vec![0.0, 0.0, 40.0, 0.0, 0.0, 0.0],
        };
        let f = pulse_duration_fit(&h).unwrap();
        assert!(f.upper_bound);
        assert_eq!(f.fwhm, TimeNs::from_ns(0.5));
    }

    #[test]
    fn two_peaks_flagged() {
        let mut counts = vec![0.0; 40];
        for (i, c) in counts.iter_mut().enumerate() {
            let x = i as f64;
            *c = 100.0 * (-(x - 10.0).powi(2) / 4.0).exp() + 90.0 * (-(x - 28.0).powi(2) / 4.0).exp();
        }
        let h = Histogram {
            start_ns: 0.0,
            bin_width_ns: 1.0,
            counts,
        };
        assert!(pulse_duration_fit(&h).unwrap().multi_peak);
    }

    #[test]
    fn too_few_bins() {
        let h = Histogram {
            start_ns: 0.0,
            bin_width_ns: 1.0,
            counts: vec![1.0; 4],
        };
        assert!(pulse_duration_fit(&h).is_err());
    }

    #[test]
    fn deconvolution() {
        let c = 396.0;
        assert!((bandwidth_deconvolve(c * 2f64.sqrt(), c).unwrap() - c).abs() < 1e-9);
        assert!((bandwidth_deconvolve(497.0, 396.0).unwrap() - 300.4).abs() < 0.1);
        assert!(bandwidth_deconvolve(300.0, 396.0).is_err());
        assert!(bandwidth_deconvolve(396.0, 396.0).is_err());
    }
}
