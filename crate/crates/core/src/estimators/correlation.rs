use serde::{Deserialize, Serialize};

use super::EstimateError;
use crate::netsim::{DetectionRecord, DetectorId};
use crate::phys_model::CorrelationEstimate;
use crate::time::TimeNs;

/// Correlation above which a source is usable for a Bell-type test.
pub const BELL_THRESHOLD: f64 = 6.0;

/// A detection window: a click on any of `detectors` with time in
/// `[center - width/2, center + width/2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub label: String,
    pub detectors: Vec<DetectorId>,
    pub center: TimeNs,
    pub width: TimeNs,
}

impl WindowSpec {
    pub fn new(label: impl Into<String>, detector: DetectorId, center: TimeNs, width: TimeNs) -> Self {
        Self::any_of(label, &[detector], center, width)
    }

    pub fn any_of(label: impl Into<String>, detectors: &[DetectorId], center: TimeNs, width: TimeNs) -> Self {
        Self {
            label: label.into(),
            detectors: detectors.to_vec(),
            center,
            width,
        }
    }

    pub fn validate(&self) -> Result<(), EstimateError> {
        if self.width <= TimeNs::ZERO {
            return Err(EstimateError::InvalidWindow {
                label: self.label.clone(),
                reason: "width must be positive",
            });
        }
        if self.detectors.is_empty() {
            return Err(EstimateError::InvalidWindow {
                label: self.label.clone(),
                reason: "no detector",
            });
        }
        Ok(())
    }

    pub fn start(&self) -> TimeNs {
        self.center - TimeNs::from_ps(self.width.ps() / 2)
    }

    pub fn end(&self) -> TimeNs {
        self.start() + self.width
    }

    pub fn contains(&self, detector: DetectorId, t: TimeNs) -> bool {
        self.detectors.contains(&detector) && t >= self.start() && t < self.end()
    }

    fn overlaps(&self, other: &WindowSpec) -> bool {
        self.start() < other.end() && other.start() < self.end()
    }
}

/// Rejects invalid windows and overlapping windows on the same detector set.
pub fn validate_windows(windows: &[WindowSpec]) -> Result<(), EstimateError> {
    if windows.len() > 64 {
        return Err(EstimateError::InvalidWindow {
            label: windows[64].label.clone(),
            reason: "at most 64 windows per tally",
        });
    }
    for (i, w) in windows.iter().enumerate() {
        w.validate()?;
        for v in &windows[..i] {
            if v.detectors == w.detectors && v.overlaps(w) {
                return Err(EstimateError::InvalidWindow {
                    label: w.label.clone(),
                    reason: "overlaps another window on the same detectors",
                });
            }
        }
    }
    Ok(())
}

/// Bit `i` is set when the trial has a click inside `windows[i]`.
pub fn trial_mask(records: &[DetectionRecord], windows: &[WindowSpec]) -> u64 {
    let mut mask = 0u64;
    for r in records {
        for (i, w) in windows.iter().enumerate() {
            if w.contains(r.detector, r.time) {
                mask |= 1 << i;
            }
        }
    }
    mask
}

/// Calls `f` once per trial that has any record, with that trial's records.
fn for_each_trial(records: &[DetectionRecord], mut f: impl FnMut(&[DetectionRecord])) {
    let sorted = records.windows(2).all(|w| w[0].trial_id <= w[1].trial_id);
    let owned;
    let records = if sorted {
        records
    } else {
        let mut v = records.to_vec();
        v.sort_by_key(|r| r.trial_id);
        owned = v;
        &owned[..]
    };
    for chunk in records.chunk_by(|a, b| a.trial_id == b.trial_id) {
        f(chunk);
    }
}

/// Singles and pairwise coincidence counts over a set of windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub labels: Vec<String>,
    pub n_trials: u64,
    pub singles: Vec<u64>,
    /// Row-major `n x n`; only `i < j` entries are filled.
    pub pairs: Vec<u64>,
}

impl WindowCounts {
    pub fn new(windows: &[WindowSpec]) -> Self {
        let n = windows.len();
        Self {
            labels: windows.iter().map(|w| w.label.clone()).collect(),
            n_trials: 0,
            singles: vec![0; n],
            pairs: vec![0; n * n],
        }
    }

    pub fn tally(records: &[DetectionRecord], windows: &[WindowSpec], n_trials: u64) -> Result<Self, EstimateError> {
        validate_windows(windows)?;
        let mut c = Self::new(windows);
        for_each_trial(records, |trial| c.add_mask(trial_mask(trial, windows)));
        c.n_trials = n_trials;
        Ok(c)
    }

    /// Records one trial's window mask. Trials with no click need no call;
    /// set `n_trials` separately.
    pub fn add_mask(&mut self, mask: u64) {
        let n = self.singles.len();
        let mut m = mask;
        while m != 0 {
            let i = m.trailing_zeros() as usize;
            m &= m - 1;
            self.singles[i] += 1;
            let mut rest = m;
            while rest != 0 {
                let j = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                self.pairs[i * n + j] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &WindowCounts) {
        self.n_trials += other.n_trials;
        for (a, b) in self.singles.iter_mut().zip(&other.singles) {
            *a += b;
        }
        for (a, b) in self.pairs.iter_mut().zip(&other.pairs) {
            *a += b;
        }
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn coincidences(&self, a: usize, b: usize) -> u64 {
        let n = self.singles.len();
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        self.pairs[i * n + j]
    }

    pub fn g2(&self, a: usize, b: usize) -> Result<CorrelationEstimate, EstimateError> {
        correlation_estimate(self.coincidences(a, b), self.singles[a], self.singles[b], self.n_trials)
    }

    pub fn g2_by_label(&self, a: &str, b: &str) -> Result<CorrelationEstimate, EstimateError> {
        let find = |l: &str| {
            self.index(l)
                .ok_or_else(|| EstimateError::Undefined(format!("no window labelled `{l}`")))
        };
        self.g2(find(a)?, find(b)?)
    }
}

/// `g2 = N_c N / (N_a N_b)` with first-order Poisson error.
pub fn correlation_estimate(
    n_coinc: u64,
    n_a: u64,
    n_b: u64,
    n_trials: u64,
) -> Result<CorrelationEstimate, EstimateError> {
    if n_trials == 0 {
        return Err(EstimateError::Undefined("no trials".into()));
    }
    if n_a == 0 || n_b == 0 {
        return Err(EstimateError::Undefined("a window has no counts".into()));
    }
    let scale = n_trials as f64 / (n_a as f64 * n_b as f64);
    let rel = |nc: f64| (1.0 / nc + 1.0 / n_a as f64 + 1.0 / n_b as f64).sqrt();
    let (value, std_err, upper_bound) = if n_coinc == 0 {
        (0.0, scale * rel(1.0), true)
    } else {
        let v = n_coinc as f64 * scale;
        (v, v * rel(n_coinc as f64), false)
    };
    Ok(CorrelationEstimate {
        value,
        std_err,
        n_coinc,
        n_a,
        n_b,
        n_trials,
        upper_bound,
    })
}

pub fn g2_cross(
    records: &[DetectionRecord],
    win_a: &WindowSpec,
    win_b: &WindowSpec,
    n_trials: u64,
) -> Result<CorrelationEstimate, EstimateError> {
    win_a.validate()?;
    win_b.validate()?;
    let windows = [win_a.clone(), win_b.clone()];
    let mut c = WindowCounts::new(&windows);
    for_each_trial(records, |t| c.add_mask(trial_mask(t, &windows)));
    c.n_trials = n_trials;
    c.g2(0, 1)
}

/// Auto-correlation from the two outputs of a splitter in the same time window.
pub fn g2_auto(
    records: &[DetectionRecord],
    win_a: &WindowSpec,
    win_b: &WindowSpec,
    n_trials: u64,
) -> Result<CorrelationEstimate, EstimateError> {
    if win_a.detectors.iter().any(|d| win_b.detectors.contains(d)) {
        return Err(EstimateError::InvalidWindow {
            label: win_b.label.clone(),
            reason: "auto-correlation needs two distinct detectors",
        });
    }
    g2_cross(records, win_a, win_b, n_trials)
}

/// Auto-correlation conditioned on a herald: `N_h N_hab / (N_ha N_hb)`.
pub fn g2_auto_heralded(
    records: &[DetectionRecord],
    herald: &WindowSpec,
    win_a: &WindowSpec,
    win_b: &WindowSpec,
) -> Result<CorrelationEstimate, EstimateError> {
    let windows = [herald.clone(), win_a.clone(), win_b.clone()];
    validate_windows(&windows)?;
    let (mut nh, mut nha, mut nhb, mut nhab) = (0u64, 0u64, 0u64, 0u64);
    for_each_trial(records, |t| {
        let m = trial_mask(t, &windows);
        if m & 1 == 0 {
            return;
        }
        nh += 1;
        let (a, b) = (m & 2 != 0, m & 4 != 0);
        nha += a as u64;
        nhb += b as u64;
        nhab += (a && b) as u64;
    });
    let mut est = correlation_estimate(nhab, nha, nhb, nh)?;
    let nc = nhab.max(1) as f64;
    let reference = nc * nh as f64 / (nha as f64 * nhb as f64);
    est.std_err = reference * (1.0 / nc + 1.0 / nha as f64 + 1.0 / nhb as f64 + 1.0 / nh as f64).sqrt();
    Ok(est)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CSTestResult {
    pub ratio: f64,
    pub excess: f64,
    pub sigma: f64,
    pub violated: bool,
}

/// Classical bound `g_sas^2 <= g_ss * g_asas`, with the excess expressed in
/// standard deviations from first-order propagation of the three errors.
pub fn cauchy_schwarz(
    g_sas: &CorrelationEstimate,
    g_ss: &CorrelationEstimate,
    g_asas: &CorrelationEstimate,
) -> CSTestResult {
    let product = g_ss.value * g_asas.value;
    let excess = g_sas.value.powi(2) - product;
    let var = (2.0 * g_sas.value * g_sas.std_err).powi(2)
        + (g_asas.value * g_ss.std_err).powi(2)
        + (g_ss.value * g_asas.std_err).powi(2);
    let sigma = if var > 0.0 {
        excess / var.sqrt()
    } else if excess == 0.0 {
        0.0
    } else {
        excess.signum() * f64::INFINITY
    };
    let ratio = if product > 0.0 {
        g_sas.value.powi(2) / product
    } else {
        f64::INFINITY
    };
    CSTestResult {
        ratio,
        excess,
        sigma,
        violated: excess > 0.0,
    }
}

pub fn bell_threshold(g: &CorrelationEstimate) -> bool {
    g.value > BELL_THRESHOLD
}
