//! Domain parameters and the closed-form click statistics of the network.
//!
//! Everything here is a pure function of its inputs. The Monte Carlo engine in
//! [`crate::netsim`] is checked against these expressions, so they are written
//! independently of the trial code: the click probabilities are computed by
//! summing the thermal joint distribution, and a second generating-function
//! route is kept alongside for cross-checking.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::TimeNs;

/// Tail mass below which the joint sums are truncated.
pub const TRUNCATION_TOLERANCE: f64 = 1e-12;
/// Hard cap on the number of excitation terms in a joint sum.
pub const MAX_TRUNCATION: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter `{name}` = {value} is outside its domain: {reason}")]
    ParameterDomain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("joint sum did not reach tail mass {TRUNCATION_TOLERANCE:e} within n_max = {n_max}")]
    Truncation { n_max: usize },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("decay form mismatch: expected {expected:?}, found {found:?}")]
    FormMismatch { expected: DecayForm, found: DecayForm },
}

fn check_unit(name: &'static str, value: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::ParameterDomain {
            name,
            value,
            reason: "must lie in [0, 1]",
        })
    }
}

fn check_non_negative(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::ParameterDomain {
            name,
            value,
            reason: "must be finite and non-negative",
        })
    }
}

fn check_chi(chi: f64) -> Result<(), ModelError> {
    if (0.0..1.0).contains(&chi) {
        Ok(())
    } else {
        Err(ModelError::ParameterDomain {
            name: "chi",
            value: chi,
            reason: "excitation probability must lie in [0, 1)",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayForm {
    /// `1 + C / (1 + A t + B t^2)`
    RationalQuadratic,
    /// `A exp(-B t)`
    Exponential,
}

/// Coefficients of one of the two decay forms.
///
/// Units: rational-quadratic `a` in 1/ns, `b` in 1/ns², `c` dimensionless;
/// exponential `a` dimensionless, `b` in 1/ns, `c` unused.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFitParams {
    pub form: DecayForm,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub c: f64,
}

impl DecayFitParams {
    pub fn rational_quadratic(a: f64, b: f64, c: f64) -> Self {
        Self {
            form: DecayForm::RationalQuadratic,
            a,
            b,
            c,
        }
    }

    pub fn exponential(a: f64, b: f64) -> Self {
        Self {
            form: DecayForm::Exponential,
            a,
            b,
            c: 0.0,
        }
    }

    /// No decay: a rational-quadratic with zero time coefficients.
    pub fn flat() -> Self {
        Self::rational_quadratic(0.0, 0.0, 1.0)
    }

    /// Rejects coefficient sets that do not give a non-increasing curve on `t >= 0`.
    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = self.a.is_finite() && self.b.is_finite() && self.c.is_finite();
        if !finite {
            return Err(ModelError::ParameterDomain {
                name: "decay",
                value: f64::NAN,
                reason: "coefficients must be finite",
            });
        }
        match self.form {
            DecayForm::RationalQuadratic => {
                check_non_negative("decay.a", self.a)?;
                check_non_negative("decay.b", self.b)?;
                if self.c <= 0.0 {
                    return Err(ModelError::ParameterDomain {
                        name: "decay.c",
                        value: self.c,
                        reason: "rational-quadratic amplitude must be positive",
                    });
                }
            }
            DecayForm::Exponential => {
                if self.a <= 0.0 {
                    return Err(ModelError::ParameterDomain {
                        name: "decay.a",
                        value: self.a,
                        reason: "exponential amplitude must be positive",
                    });
                }
                check_non_negative("decay.b", self.b)?;
            }
        }
        Ok(())
    }

    /// Denominator `1 + A t + B t^2` of the rational-quadratic form.
    pub fn rq_denominator(&self, t_ns: f64) -> f64 {
        1.0 + self.a * t_ns + self.b * t_ns * t_ns
    }

    /// Rescales the time axis so that every feature moves by `factor`
    /// (a curve with 1/e time `L` becomes one with 1/e time `factor * L`).
    pub fn stretched(&self, factor: f64) -> Self {
        match self.form {
            DecayForm::RationalQuadratic => {
                Self::rational_quadratic(self.a / factor, self.b / (factor * factor), self.c)
            }
            DecayForm::Exponential => Self::exponential(self.a, self.b / factor),
        }
    }
}

/// Descriptive settings of the write/read optics. Carried for provenance only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FordMetadata {
    pub write_detuning_ghz: Option<f64>,
    pub read_detuning_ghz: Option<f64>,
    pub hyperfine_splitting_ghz: f64,
    pub beam_waist_um: Option<f64>,
}

impl Default for FordMetadata {
    fn default() -> Self {
        Self {
            write_detuning_ghz: None,
            read_detuning_ghz: None,
            hyperfine_splitting_ghz: 9.2,
            beam_waist_um: None,
        }
    }
}

/// Calibrated parameters of the heralded-pair source memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FordParams {
    /// Excitation probability per write attempt (mean of the thermal distribution).
    pub chi: f64,
    pub eta_stokes: f64,
    /// Anti-Stokes detection path efficiency (filters, coupling, detector).
    pub eta_as: f64,
    pub eta_ret0: f64,
    /// Retrieval decay in storage time; only `a` and `b` are used.
    pub decay: DecayFitParams,
    /// Mean background counts per Stokes detection gate.
    pub bg_stokes: f64,
    /// Mean background counts per anti-Stokes detection gate, summed over
    /// all anti-Stokes detectors.
    pub bg_as: f64,
    pub pump_duration: TimeNs,
    pub write_period: TimeNs,
    #[serde(default)]
    pub metadata: FordMetadata,
}

impl FordParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        check_chi(self.chi)?;
        check_unit("eta_stokes", self.eta_stokes)?;
        check_unit("eta_as", self.eta_as)?;
        check_unit("eta_ret0", self.eta_ret0)?;
        check_non_negative("bg_stokes", self.bg_stokes)?;
        check_non_negative("bg_as", self.bg_as)?;
        check_non_negative("pump_duration", self.pump_duration.as_ns())?;
        check_non_negative("write_period", self.write_period.as_ns())?;
        if self.decay.form != DecayForm::RationalQuadratic {
            return Err(ModelError::FormMismatch {
                expected: DecayForm::RationalQuadratic,
                found: self.decay.form,
            });
        }
        check_non_negative("decay.a", self.decay.a)?;
        check_non_negative("decay.b", self.decay.b)?;
        Ok(())
    }

    pub fn retrieval_efficiency(&self, tau1: TimeNs) -> f64 {
        ford_retrieval_efficiency(tau1, self.eta_ret0, &self.decay)
    }
}

/// Parameters of the all-optical storage loop and its Pockels-cell switch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopParams {
    pub period_tau: TimeNs,
    pub transmission_per_cycle: f64,
    pub pc_rise_time: TimeNs,
    /// Minimum separation between two activations of the same switch channel.
    pub pc_min_spacing: TimeNs,
    /// Fractional half-wave voltage `V / V_pi` used for partial out-coupling.
    pub voltage_ratio: f64,
}

impl LoopParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let t = self.transmission_per_cycle;
        if !(t > 0.0 && t <= 1.0) {
            return Err(ModelError::ParameterDomain {
                name: "transmission_per_cycle",
                value: t,
                reason: "must lie in (0, 1]",
            });
        }
        if self.period_tau <= self.pc_rise_time || self.pc_rise_time.is_negative() {
            return Err(ModelError::ParameterDomain {
                name: "period_tau",
                value: self.period_tau.as_ns(),
                reason: "circulation period must exceed the switch rise time",
            });
        }
        check_non_negative("pc_min_spacing", self.pc_min_spacing.as_ns())?;
        check_unit("voltage_ratio", self.voltage_ratio)
    }
}

/// A fiber link between nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub length_m: f64,
    /// Group velocity in m/s.
    pub group_velocity: f64,
    pub transmission: f64,
}

impl ChannelParams {
    pub fn delay(&self) -> TimeNs {
        TimeNs::from_ns(self.length_m / self.group_velocity * 1e9)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.length_m > 0.0 && self.group_velocity > 0.0 && self.group_velocity.is_finite()) {
            return Err(ModelError::ParameterDomain {
                name: "length_m",
                value: self.length_m,
                reason: "length and group velocity must be positive so the delay is positive",
            });
        }
        check_unit("transmission", self.transmission)
    }
}

/// A measured or simulated second-order correlation value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub value: f64,
    pub std_err: f64,
    pub n_coinc: u64,
    pub n_a: u64,
    pub n_b: u64,
    pub n_trials: u64,
    /// Set when no coincidences were seen and `std_err` is the one-count bound.
    #[serde(default)]
    pub upper_bound: bool,
}

impl CorrelationEstimate {
    /// An estimate known only by value and error (e.g. a quoted measurement).
    pub fn from_value(value: f64, std_err: f64) -> Self {
        Self {
            value,
            std_err,
            n_coinc: 0,
            n_a: 0,
            n_b: 0,
            n_trials: 0,
            upper_bound: false,
        }
    }
}

/// Threshold-detector click probabilities for one trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickProbs {
    pub p_stokes: f64,
    pub p_as: f64,
    pub p_coinc: f64,
}

/// Sampler for the number of collective excitations created by one write pulse.
///
/// The distribution is thermal, `P(n) = chi^n / (1 + chi)^(n + 1)`.
#[derive(Clone, Debug)]
pub struct ThermalSampler {
    dist: Geometric,
}

impl ThermalSampler {
    pub fn new(chi: f64) -> Result<Self, ModelError> {
        check_chi(chi)?;
        let dist = Geometric::new(1.0 / (1.0 + chi)).map_err(|_| ModelError::ParameterDomain {
            name: "chi",
            value: chi,
            reason: "invalid geometric parameter",
        })?;
        Ok(Self { dist })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.dist.sample(rng)
    }
}

pub fn sample_excitation_number<R: Rng + ?Sized>(chi: f64, rng: &mut R) -> Result<u64, ModelError> {
    Ok(ThermalSampler::new(chi)?.sample(rng))
}

/// Number of successes in `n` Bernoulli(`p`) trials. Intended for the small
/// photon numbers that occur here; large `n` falls back to `rand_distr`.
pub fn sample_binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if n <= 16 {
        return (0..n).filter(|_| rng.gen::<f64>() < p).count() as u64;
    }
    rand_distr::Binomial::new(n, p).map(|d| d.sample(rng)).unwrap_or(0)
}

/// Poisson draw by sequential inversion; cheap for the small means of
/// background counts per gate.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean > 30.0 {
        return rand_distr::Poisson::new(mean)
            .map(|d| d.sample(rng) as u64)
            .unwrap_or(0);
    }
    let u: f64 = rng.gen();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0u64;
    while u > cdf && k < 1000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

/// `P(n)` of the thermal distribution with mean `chi`.
pub fn thermal_pmf(chi: f64, n: u32) -> f64 {
    let r = chi / (1.0 + chi);
    (1.0 - r) * r.powi(n as i32)
}

/// Probability generating function `E[x^n]` of the thermal distribution.
pub fn thermal_pgf(chi: f64, x: f64) -> f64 {
    1.0 / (1.0 + chi * (1.0 - x))
}

/// Smallest `n_max` whose thermal tail mass `P(n > n_max)` is below the tolerance.
pub fn truncation_order(chi: f64) -> Result<usize, ModelError> {
    check_chi(chi)?;
    let r = chi / (1.0 + chi);
    let mut tail = r;
    for n in 0..=MAX_TRUNCATION {
        if tail < TRUNCATION_TOLERANCE {
            return Ok(n);
        }
        tail *= r;
    }
    Err(ModelError::Truncation { n_max: MAX_TRUNCATION })
}

/// Per-excitation probability that an anti-Stokes photon reaches and fires
/// the anti-Stokes detection path after `tau1` of storage and `loop_cycles`
/// round trips.
pub fn as_path_efficiency(
    ford: &FordParams,
    tau1: TimeNs,
    loop_cycles: u32,
    loop_params: &LoopParams,
    channel: &ChannelParams,
) -> f64 {
    ford.eta_as
        * ford.retrieval_efficiency(tau1)
        * channel.transmission
        * loop_retrieval_efficiency(loop_cycles, loop_params.transmission_per_cycle)
}

/// Exact click probabilities for one write attempt followed by one read.
///
/// Stokes photons are thinned by `eta_stokes`; anti-Stokes photons by the
/// composed path efficiency. Each detector adds Poisson background and fires
/// at most once.
pub fn analytic_click_probs(
    ford: &FordParams,
    tau1: TimeNs,
    loop_cycles: u32,
    loop_params: &LoopParams,
    channel: &ChannelParams,
) -> Result<ClickProbs, ModelError> {
    ford.validate()?;
    loop_params.validate()?;
    channel.validate()?;
    let eta_a = as_path_efficiency(ford, tau1, loop_cycles, loop_params, channel);
    joint_click_sum(ford.chi, ford.eta_stokes, ford.bg_stokes, eta_a, ford.bg_as)
}

/// Truncated sum over the thermal excitation number of the joint click law.
pub fn joint_click_sum(chi: f64, eta_s: f64, bg_s: f64, eta_a: f64, bg_a: f64) -> Result<ClickProbs, ModelError> {
    check_unit("eta_s", eta_s)?;
    check_unit("eta_a", eta_a)?;
    check_non_negative("bg_s", bg_s)?;
    check_non_negative("bg_a", bg_a)?;
    let n_max = truncation_order(chi)?;
    let quiet_s = (-bg_s).exp();
    let quiet_a = (-bg_a).exp();
    let (mut none_s, mut none_a, mut none_both) = (0.0, 0.0, 0.0);
    for n in 0..=n_max as u32 {
        let p = thermal_pmf(chi, n);
        let miss_s = (1.0 - eta_s).powi(n as i32);
        let miss_a = (1.0 - eta_a).powi(n as i32);
        none_s += p * miss_s;
        none_a += p * miss_a;
        none_both += p * miss_s * miss_a;
    }
    let ns = quiet_s * none_s;
    let na = quiet_a * none_a;
    let nb = quiet_s * quiet_a * none_both;
    Ok(clamp_probs(1.0 - ns, 1.0 - na, 1.0 - ns - na + nb))
}

/// Same quantities as [`joint_click_sum`], via the generating function.
pub fn click_probs_pgf(chi: f64, eta_s: f64, bg_s: f64, eta_a: f64, bg_a: f64) -> ClickProbs {
    let ns = (-bg_s).exp() * thermal_pgf(chi, 1.0 - eta_s);
    let na = (-bg_a).exp() * thermal_pgf(chi, 1.0 - eta_a);
    let nb = (-bg_s - bg_a).exp() * thermal_pgf(chi, (1.0 - eta_s) * (1.0 - eta_a));
    clamp_probs(1.0 - ns, 1.0 - na, 1.0 - ns - na + nb)
}

fn clamp_probs(p_s: f64, p_a: f64, p_c: f64) -> ClickProbs {
    let p_stokes = p_s.clamp(0.0, 1.0);
    let p_as = p_a.clamp(0.0, 1.0);
    ClickProbs {
        p_stokes,
        p_as,
        p_coinc: p_c.clamp(0.0, p_stokes.min(p_as)),
    }
}

/// Click probabilities at the two outputs of a 50:50 splitter placed after
/// the anti-Stokes path. `p_stokes` and `p_as` hold the two singles and
/// `p_coinc` their coincidence. Background `bg_total` is shared equally.
pub fn hbt_click_probs(chi: f64, eta_a: f64, bg_total: f64) -> ClickProbs {
    let half_quiet = (-bg_total / 2.0).exp();
    let n_one = half_quiet * thermal_pgf(chi, 1.0 - eta_a / 2.0);
    let n_both = (-bg_total).exp() * thermal_pgf(chi, 1.0 - eta_a);
    clamp_probs(1.0 - n_one, 1.0 - n_one, 1.0 - 2.0 * n_one + n_both)
}

/// Same splitter statistics conditioned on a Stokes herald from one attempt.
/// Returns `(p_herald, p_a_and_herald, p_ab_and_herald)` with the two
/// outputs symmetric.
pub fn heralded_hbt_probs(chi: f64, eta_s: f64, bg_s: f64, eta_a: f64, bg_total: f64) -> (f64, f64, f64) {
    let qs = (-bg_s).exp();
    let g = |x: f64| thermal_pgf(chi, x);
    let half = (-bg_total / 2.0).exp();
    let full = (-bg_total).exp();
    let s = 1.0 - eta_s;
    // E[x^n 1{herald}] = G(x) - e^{-bg_s} G(s x)
    let herald = |x: f64| g(x) - qs * g(s * x);
    let p_h = herald(1.0);
    let h_no_a = half * herald(1.0 - eta_a / 2.0);
    let h_none = full * herald(1.0 - eta_a);
    let p_ha = p_h - h_no_a;
    let p_hab = p_h - 2.0 * h_no_a + h_none;
    (p_h, p_ha, p_hab)
}

/// Click probabilities of a repeat-until-success herald followed by one read.
///
/// `mode_efficiency[i]` is the probability that an excitation created on
/// write attempt `i` ends up as a click-capable photon in the anti-Stokes
/// window of interest. Attempts stop at the first Stokes click; excitations
/// from earlier unheralded attempts stay stored and are read out too.
pub fn feedback_click_probs(
    chi: f64,
    eta_s: f64,
    bg_s: f64,
    mode_efficiency: &[f64],
    bg_mode: f64,
) -> Result<ClickProbs, ModelError> {
    check_chi(chi)?;
    check_unit("eta_s", eta_s)?;
    check_non_negative("bg_s", bg_s)?;
    check_non_negative("bg_mode", bg_mode)?;
    for &e in mode_efficiency {
        check_unit("mode_efficiency", e)?;
    }
    let qs = (-bg_s).exp();
    let no_click = |x: f64| qs * thermal_pgf(chi, (1.0 - eta_s) * x);
    let click = |x: f64| thermal_pgf(chi, x) - no_click(x);

    let m = mode_efficiency.len();
    let p_miss_one = no_click(1.0);
    let p_stokes = 1.0 - p_miss_one.powi(m as i32);

    // prefix = prod_{j<i} E[x_j^n 1{no click}]
    let mut prefix = 1.0;
    let mut herald_and_quiet = 0.0;
    for &e in mode_efficiency {
        let x = 1.0 - e;
        herald_and_quiet += prefix * click(x);
        prefix *= no_click(x);
    }
    let quiet_a = (-bg_mode).exp();
    let none_a = quiet_a * (herald_and_quiet + prefix);
    let p_as = 1.0 - none_a;
    let p_coinc = p_stokes - quiet_a * herald_and_quiet;
    Ok(clamp_probs(p_stokes, p_as, p_coinc))
}

pub fn g2_analytic(probs: &ClickProbs) -> Result<f64, ModelError> {
    let denom = probs.p_stokes * probs.p_as;
    if denom <= 0.0 {
        return Err(ModelError::UndefinedCorrelation(
            "both single-click probabilities must be positive",
        ));
    }
    Ok(probs.p_coinc / denom)
}

/// `eta_ret0 / (1 + A tau1 + B tau1^2)`, clamped to `[0, 1]`.
pub fn ford_retrieval_efficiency(tau1: TimeNs, eta_ret0: f64, decay: &DecayFitParams) -> f64 {
    let t = tau1.as_ns().max(0.0);
    (eta_ret0 / decay.rq_denominator(t)).clamp(0.0, 1.0)
}

/// Surviving fraction after `k` round trips: `T^k`.
pub fn loop_retrieval_efficiency(k_cycles: u32, transmission: f64) -> f64 {
    transmission.powi(k_cycles as i32)
}

/// Which storage axis a decay curve is evaluated along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageTime {
    /// Storage in the source memory; pairs with the rational-quadratic form.
    Source(TimeNs),
    /// Storage in the loop; pairs with the exponential form.
    Loop(TimeNs),
}

/// Evaluates one of the correlation decay forms.
pub fn g2_decay_model(time: StorageTime, params: &DecayFitParams) -> Result<f64, ModelError> {
    match (time, params.form) {
        (StorageTime::Source(t), DecayForm::RationalQuadratic) => Ok(1.0 + params.c / params.rq_denominator(t.as_ns())),
        (StorageTime::Loop(t), DecayForm::Exponential) => Ok(params.a * (-params.b * t.as_ns()).exp()),
        (StorageTime::Source(_), found) => Err(ModelError::FormMismatch {
            expected: DecayForm::RationalQuadratic,
            found,
        }),
        (StorageTime::Loop(_), found) => Err(ModelError::FormMismatch {
            expected: DecayForm::Exponential,
            found,
        }),
    }
}

/// Product of the two decay curves, with the loop factor taken relative to
/// its zero-storage value so that `joint(tau1, 0) == g2(tau1)`.
pub fn joint_g2_model(
    tau1: TimeNs,
    tau2: TimeNs,
    source_fit: &DecayFitParams,
    loop_fit: &DecayFitParams,
) -> Result<f64, ModelError> {
    if loop_fit.form == DecayForm::Exponential && loop_fit.a == 0.0 {
        return Err(ModelError::UndefinedCorrelation(
            "loop fit amplitude is zero; relative decay undefined",
        ));
    }
    let source = g2_decay_model(StorageTime::Source(tau1), source_fit)?;
    let lp = g2_decay_model(StorageTime::Loop(tau2), loop_fit)?;
    Ok(source * lp / loop_fit.a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ford(chi: f64) -> FordParams {
        FordParams {
            chi,
            eta_stokes: 1.0,
            eta_as: 1.0,
            eta_ret0: 1.0,
            decay: DecayFitParams::flat(),
            bg_stokes: 0.0,
            bg_as: 0.0,
            pump_duration: TimeNs::from_ns(1000.0),
            write_period: TimeNs::from_us(21.6),
            metadata: FordMetadata::default(),
        }
    }

    fn ideal_loop() -> LoopParams {
        LoopParams {
            period_tau: TimeNs::from_ns(10.4),
            transmission_per_cycle: 1.0,
            pc_rise_time: TimeNs::from_ns(5.0),
            pc_min_spacing: TimeNs::from_ns(33.3),
            voltage_ratio: 1.0,
        }
    }

    fn ideal_channel() -> ChannelParams {
        ChannelParams {
            length_m: 1.0,
            group_velocity: 2.0e8,
            transmission: 1.0,
        }
    }

    #[test]
    fn vacuum_sampler_always_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(sample_excitation_number(0.0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn sampler_rejects_out_of_domain_chi() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_excitation_number(1.0, &mut rng).is_err());
        assert!(sample_excitation_number(-0.1, &mut rng).is_err());
    }

    #[test]
    fn thermal_pmf_at_half() {
        assert_relative_eq!(thermal_pmf(0.5, 0), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(thermal_pmf(0.5, 1), 2.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn sampler_mean_matches_chi() {
        let chi = 0.05;
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = ThermalSampler::new(chi).unwrap();
        let sum: u64 = (0..n).map(|_| s.sample(&mut rng)).sum();
        let mean = sum as f64 / n as f64;
        let tol = 3.0 * (chi * (1.0 + chi) / n as f64).sqrt();
        assert!((mean - chi).abs() < tol, "mean {mean} vs {chi} ± {tol}");
    }

    #[test]
    fn sampler_histogram_matches_pmf() {
        let chi = 0.3;
        let n = 1_000_000u64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = ThermalSampler::new(chi).unwrap();
        let mut hist = [0u64; 4];
        for _ in 0..n {
            let k = s.sample(&mut rng) as usize;
            if k < 4 {
                hist[k] += 1;
            }
        }
        for (k, &h) in hist.iter().enumerate() {
            let p = thermal_pmf(chi, k as u32);
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((h as f64 - n as f64 * p).abs() < 4.0 * sigma, "bin {k}");
        }
    }

    #[test]
    fn no_source_no_noise_gives_zero_clicks() {
        let p = analytic_click_probs(&ford(0.0), TimeNs::ZERO, 0, &ideal_loop(), &ideal_channel()).unwrap();
        assert_eq!(p.p_stokes, 0.0);
        assert_eq!(p.p_as, 0.0);
        assert_eq!(p.p_coinc, 0.0);
    }

    #[test]
    fn perfect_efficiency_collapses_to_nonvacuum_probability() {
        let chi = 0.05;
        let p = analytic_click_probs(&ford(chi), TimeNs::ZERO, 0, &ideal_loop(), &ideal_channel()).unwrap();
        let expect = 1.0 - 1.0 / (1.0 + chi);
        assert_relative_eq!(p.p_coinc, expect, epsilon = 1e-12);
        assert_relative_eq!(p.p_stokes, expect, epsilon = 1e-12);
    }

    #[test]
    fn truncated_sum_agrees_with_generating_function() {
        for &(chi, es, bs, ea, ba) in &[
            (0.02, 0.3, 1e-4, 0.124, 1e-4),
            (0.5, 0.9, 0.01, 0.6, 0.2),
            (0.9, 0.1, 0.0, 0.05, 0.0),
        ] {
            let a = joint_click_sum(chi, es, bs, ea, ba).unwrap();
            let b = click_probs_pgf(chi, es, bs, ea, ba);
            assert_relative_eq!(a.p_stokes, b.p_stokes, epsilon = 1e-12);
            assert_relative_eq!(a.p_as, b.p_as, epsilon = 1e-12);
            assert_relative_eq!(a.p_coinc, b.p_coinc, epsilon = 1e-12);
        }
    }

    #[test]
    fn truncation_order_is_capped() {
        assert_eq!(truncation_order(0.0).unwrap(), 0);
        assert!(truncation_order(0.99).unwrap() <= MAX_TRUNCATION);
    }

    #[test]
    fn independent_clicks_give_unit_g2() {
        let p = ClickProbs {
            p_stokes: 0.1,
            p_as: 0.2,
            p_coinc: 0.02,
        };
        assert_relative_eq!(g2_analytic(&p).unwrap(), 1.0, epsilon = 1e-12);
        let z = ClickProbs {
            p_stokes: 0.0,
            p_as: 0.2,
            p_coinc: 0.0,
        };
        assert!(matches!(g2_analytic(&z), Err(ModelError::UndefinedCorrelation(_))));
    }

    /// Brute-force oracle: enumerate the thermal joint law directly.
    fn brute_g2(chi: f64) -> f64 {
        let (mut ps, mut pc) = (0.0, 0.0);
        for n in 1..200 {
            let p = thermal_pmf(chi, n);
            ps += p;
            pc += p;
        }
        pc / (ps * ps)
    }

    #[test]
    fn lossless_thermal_pairs_are_strongly_correlated() {
        let chi = 0.01;
        let brute = brute_g2(chi);
        assert!(brute > 50.0);
        let p = analytic_click_probs(&ford(chi), TimeNs::ZERO, 0, &ideal_loop(), &ideal_channel()).unwrap();
        assert_relative_eq!(g2_analytic(&p).unwrap(), brute, max_relative = 1e-10);
    }

    #[test]
    fn retrieval_efficiency_shapes() {
        let d = DecayFitParams::rational_quadratic(1.0 / 600.0, 0.0, 1.0);
        assert_eq!(ford_retrieval_efficiency(TimeNs::ZERO, 0.7, &d), 0.7);
        assert_relative_eq!(ford_retrieval_efficiency(TimeNs::from_ns(600.0), 1.0, &d), 0.5);
        let mut prev = f64::INFINITY;
        for t in (0..=2000).step_by(10) {
            let v = ford_retrieval_efficiency(TimeNs::from_ns(t as f64), 1.0, &d);
            assert!(v <= prev);
            prev = v;
        }
        for t in [0.0, 10.0, 1e4] {
            assert_eq!(
                ford_retrieval_efficiency(TimeNs::from_ns(t), 1.0, &DecayFitParams::flat()),
                1.0
            );
        }
    }

    #[test]
    fn loop_efficiency_power() {
        assert_eq!(loop_retrieval_efficiency(0, 0.9), 1.0);
        assert_relative_eq!(loop_retrieval_efficiency(5, 0.9), 0.59049, epsilon = 1e-12);
        let inv_e = (-1.0f64).exp();
        assert!(loop_retrieval_efficiency(9, 0.9) > inv_e);
        assert!(loop_retrieval_efficiency(10, 0.9) < inv_e);
    }

    #[test]
    fn decay_model_peaks_and_mismatch() {
        let rq = DecayFitParams::rational_quadratic(1e-3, 1e-7, 21.0);
        let ex = DecayFitParams::exponential(22.0, 1.0 / 1220.0);
        assert_eq!(g2_decay_model(StorageTime::Source(TimeNs::ZERO), &rq).unwrap(), 22.0);
        assert_eq!(g2_decay_model(StorageTime::Loop(TimeNs::ZERO), &ex).unwrap(), 22.0);
        let at = g2_decay_model(StorageTime::Loop(TimeNs::from_ns(1220.0)), &ex).unwrap();
        assert_relative_eq!(at, 22.0 / std::f64::consts::E, epsilon = 1e-12);
        assert!(matches!(
            g2_decay_model(StorageTime::Loop(TimeNs::ZERO), &rq),
            Err(ModelError::FormMismatch { .. })
        ));
    }

    #[test]
    fn joint_model_normalization_and_zero_amplitude() {
        let rq = DecayFitParams::rational_quadratic(8e-4, 3e-7, 22.0);
        let ex = DecayFitParams::exponential(23.0, 1.0 / 1220.0);
        let t1 = TimeNs::from_ns(480.0);
        let j = joint_g2_model(t1, TimeNs::ZERO, &rq, &ex).unwrap();
        let g = g2_decay_model(StorageTime::Source(t1), &rq).unwrap();
        assert!((j - g).abs() < 1e-9);
        let zero = DecayFitParams::exponential(0.0, 1.0);
        assert!(joint_g2_model(t1, TimeNs::ZERO, &rq, &zero).is_err());
    }

    #[test]
    fn feedback_single_attempt_matches_joint_sum() {
        let a = feedback_click_probs(0.04, 0.3, 1e-3, &[0.2], 1e-3).unwrap();
        let b = click_probs_pgf(0.04, 0.3, 1e-3, 0.2, 1e-3);
        assert_relative_eq!(a.p_stokes, b.p_stokes, epsilon = 1e-14);
        assert_relative_eq!(a.p_as, b.p_as, epsilon = 1e-14);
        assert_relative_eq!(a.p_coinc, b.p_coinc, epsilon = 1e-14);
    }

    /// Enumerates all excitation-number histories for two attempts.
    #[test]
    fn feedback_two_attempts_matches_enumeration() {
        let (chi, es, bs, bg): (f64, f64, f64, f64) = (0.2, 0.4, 0.05, 0.03);
        let eff: [f64; 2] = [0.3, 0.5];
        let (mut ps, mut pa, mut pc) = (0.0, 0.0, 0.0);
        let qs = (-bs).exp();
        let qa = (-bg).exp();
        for n0 in 0..60u32 {
            for n1 in 0..60u32 {
                let w = thermal_pmf(chi, n0) * thermal_pmf(chi, n1);
                let miss0 = qs * (1.0f64 - es).powi(n0 as i32);
                let miss1 = qs * (1.0f64 - es).powi(n1 as i32);
                let a0 = (1.0 - eff[0]).powi(n0 as i32);
                let a1 = (1.0 - eff[1]).powi(n1 as i32);
                // herald on attempt 0: attempt 1 never happens, n1 irrelevant
                let h0 = 1.0 - miss0;
                let h1 = miss0 * (1.0 - miss1);
                let none = miss0 * miss1;
                let quiet_h0 = qa * a0;
                let quiet_h1 = qa * a0 * a1;
                let quiet_none = qa * a0 * a1;
                ps += w * (h0 + h1);
                pa += w * (h0 * (1.0 - quiet_h0) + h1 * (1.0 - quiet_h1) + none * (1.0 - quiet_none));
                pc += w * (h0 * (1.0 - quiet_h0) + h1 * (1.0 - quiet_h1));
            }
        }
        let p = feedback_click_probs(chi, es, bs, &eff, bg).unwrap();
        assert_relative_eq!(p.p_stokes, ps, epsilon = 1e-12);
        assert_relative_eq!(p.p_as, pa, epsilon = 1e-12);
        assert_relative_eq!(p.p_coinc, pc, epsilon = 1e-12);
    }

    #[test]
    fn hbt_thermal_bunching_approaches_two() {
        let p = hbt_click_probs(1e-3, 1.0, 0.0);
        let g = p.p_coinc / (p.p_stokes * p.p_as);
        assert!((g - 2.0).abs() < 0.01, "{g}");
    }

    #[test]
    fn channel_delay_from_length() {
        let c = ChannelParams {
            length_m: 500.0,
            group_velocity: 2.0e8,
            transmission: 0.9,
        };
        assert_eq!(c.delay(), TimeNs::from_ns(2500.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn click_probs_are_ordered(
                chi in 0.0f64..0.95, es in 0.0f64..=1.0, ea in 0.0f64..=1.0,
                bs in 0.0f64..0.5, ba in 0.0f64..0.5,
            ) {
                let p = joint_click_sum(chi, es, bs, ea, ba).unwrap();
                prop_assert!((0.0..=1.0).contains(&p.p_stokes));
                prop_assert!((0.0..=1.0).contains(&p.p_as));
                prop_assert!(p.p_coinc <= p.p_stokes.min(p.p_as) + 1e-15);
                prop_assert!(p.p_coinc >= 0.0);
            }

            #[test]
            fn factorized_joint_gives_unit_g2(ps in 1e-6f64..1.0, pa in 1e-6f64..1.0) {
                let p = ClickProbs { p_stokes: ps, p_as: pa, p_coinc: ps * pa };
                prop_assert!((g2_analytic(&p).unwrap() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn efficiency_curves_non_increasing(
                a in 0.0f64..1e-2, b in 0.0f64..1e-5, t in 0.0f64..5e3, dt in 0.0f64..1e3,
                tr in 0.01f64..=1.0, k in 0u32..50,
            ) {
                let d = DecayFitParams::rational_quadratic(a, b, 1.0);
                let e0 = ford_retrieval_efficiency(TimeNs::from_ns(t), 0.8, &d);
                let e1 = ford_retrieval_efficiency(TimeNs::from_ns(t + dt), 0.8, &d);
                prop_assert!(e1 <= e0);
                prop_assert!(loop_retrieval_efficiency(k + 1, tr) <= loop_retrieval_efficiency(k, tr));
            }
        }
    }
}
