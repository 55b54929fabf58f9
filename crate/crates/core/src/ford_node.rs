//! Source-memory state machine: pump, heralded write attempts, storage, read-out.
//!
//! Transitions follow `(pump · write_attempt* · read_out?)*`. Anything else is a
//! [`SequenceError`]. Excitations created by unheralded attempts stay in the
//! ensemble until the next pump, each batch remembering when it was written so
//! the read-out can apply the right storage-time efficiency.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phys_model::{
    ford_retrieval_efficiency, sample_binomial, sample_poisson, FordParams, ModelError, ThermalSampler,
};
use crate::time::TimeNs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Pumped,
    Excited,
    ReadOut,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("`{op}` is not allowed in phase {phase:?}")]
    InvalidTransition { op: &'static str, phase: Phase },
    #[error("attempt budget exhausted ({max_attempts} attempts)")]
    AttemptBudget { max_attempts: u32 },
    #[error("storage time must be non-negative, got {0} ns")]
    NegativeStorage(TimeNs),
    #[error("read time {read} precedes the last write attempt at {last}")]
    ReadBeforeWrite { read: TimeNs, last: TimeNs },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Excitations created by a single write attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcitationBatch {
    pub created_at: TimeNs,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FordState {
    pub phase: Phase,
    /// Node-local time of the next action.
    pub clock: TimeNs,
    pub excitation_count: u64,
    pub herald_time: Option<TimeNs>,
    pub attempt_index: u32,
    pub read_time: Option<TimeNs>,
    batches: Vec<ExcitationBatch>,
}

impl Default for FordState {
    fn default() -> Self {
        Self::new(TimeNs::ZERO)
    }
}

impl FordState {
    pub fn new(clock: TimeNs) -> Self {
        Self {
            phase: Phase::Idle,
            clock,
            excitation_count: 0,
            herald_time: None,
            attempt_index: 0,
            read_time: None,
            batches: Vec::new(),
        }
    }

    pub fn batches(&self) -> &[ExcitationBatch] {
        &self.batches
    }

    fn reject(&self, op: &'static str) -> SequenceError {
        SequenceError::InvalidTransition { op, phase: self.phase }
    }
}

/// Repeat-until-success settings for one write period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    pub max_attempts: u32,
    pub attempt_spacing: TimeNs,
    pub period: TimeNs,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            max_attempts: 10,
            attempt_spacing: TimeNs::from_ns(108.0),
            period: TimeNs::from_us(21.6),
        }
    }
}

impl FeedbackConfig {
    pub fn single() -> Self {
        Self {
            max_attempts: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self, ford: &FordParams) -> Result<(), ModelError> {
        if self.max_attempts == 0 {
            return Err(ModelError::ParameterDomain {
                name: "max_attempts",
                value: 0.0,
                reason: "at least one attempt is required",
            });
        }
        if self.attempt_spacing.is_negative() {
            return Err(ModelError::ParameterDomain {
                name: "attempt_spacing",
                value: self.attempt_spacing.as_ns(),
                reason: "must be non-negative",
            });
        }
        let window = self.attempt_spacing * self.max_attempts as i64;
        if window > self.period - ford.pump_duration {
            return Err(ModelError::ParameterDomain {
                name: "max_attempts",
                value: self.max_attempts as f64,
                reason: "attempt window does not fit in the period after pumping",
            });
        }
        Ok(())
    }

    /// Offset of the last attempt slot from the end of the pump.
    pub fn last_slot_offset(&self) -> TimeNs {
        self.attempt_spacing * (self.max_attempts.saturating_sub(1)) as i64
    }
}

/// Detector-level outcome of one write attempt.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StokesOutcome {
    pub excitations: u64,
    pub signal_photons: u64,
    pub background_counts: u64,
}

impl StokesOutcome {
    pub fn click(&self) -> bool {
        self.signal_photons + self.background_counts > 0
    }
}

pub fn pump(mut state: FordState, ford: &FordParams) -> Result<FordState, SequenceError> {
    match state.phase {
        Phase::Idle | Phase::ReadOut => {}
        _ => return Err(state.reject("pump")),
    }
    state.phase = Phase::Pumped;
    state.clock += ford.pump_duration;
    state.excitation_count = 0;
    state.herald_time = None;
    state.attempt_index = 0;
    state.read_time = None;
    state.batches.clear();
    Ok(state)
}

/// One write pulse at the current clock, with full detector-level detail.
pub fn write_attempt_outcome<R: Rng + ?Sized>(
    mut state: FordState,
    ford: &FordParams,
    sampler: &ThermalSampler,
    rng: &mut R,
) -> Result<(FordState, StokesOutcome), SequenceError> {
    if state.phase != Phase::Pumped {
        return Err(state.reject("write_attempt"));
    }
    let n = sampler.sample(rng);
    let outcome = StokesOutcome {
        excitations: n,
        signal_photons: sample_binomial(rng, n, ford.eta_stokes),
        background_counts: sample_poisson(rng, ford.bg_stokes),
    };
    if n > 0 {
        state.batches.push(ExcitationBatch {
            created_at: state.clock,
            count: n,
        });
        state.excitation_count += n;
    }
    state.attempt_index += 1;
    if outcome.click() {
        state.phase = Phase::Excited;
        state.herald_time = Some(state.clock);
    }
    Ok((state, outcome))
}

pub fn write_attempt<R: Rng + ?Sized>(
    state: FordState,
    ford: &FordParams,
    rng: &mut R,
) -> Result<(FordState, bool), SequenceError> {
    let sampler = ThermalSampler::new(ford.chi)?;
    let (state, outcome) = write_attempt_outcome(state, ford, &sampler, rng)?;
    Ok((state, outcome.click()))
}

/// Retries the write until a Stokes click or until the attempt budget is spent.
/// The clock advances by `attempt_spacing` between attempts and stops on the
/// heralding (or last) attempt.
pub fn feedback_until_success<R: Rng + ?Sized>(
    mut state: FordState,
    ford: &FordParams,
    cfg: &FeedbackConfig,
    rng: &mut R,
) -> Result<(FordState, u32, bool), SequenceError> {
    cfg.validate(ford)?;
    if state.phase != Phase::Pumped {
        return Err(state.reject("feedback_until_success"));
    }
    let sampler = ThermalSampler::new(ford.chi)?;
    for i in 0..cfg.max_attempts {
        if i > 0 {
            state.clock += cfg.attempt_spacing;
        }
        let (next, outcome) = write_attempt_outcome(state, ford, &sampler, rng)?;
        state = next;
        if outcome.click() {
            return Ok((state, i + 1, true));
        }
    }
    Ok((state, cfg.max_attempts, false))
}

fn retrieve<R: Rng + ?Sized>(state: &FordState, ford: &FordParams, at: TimeNs, rng: &mut R) -> u64 {
    state
        .batches
        .iter()
        .map(|b| {
            let eta = ford_retrieval_efficiency(at - b.created_at, ford.eta_ret0, &ford.decay);
            sample_binomial(rng, b.count, eta)
        })
        .sum()
}

/// Heralded read-out `tau1` after the herald. Returns the number of anti-Stokes
/// photons emitted; the emission time is recorded in `read_time`.
pub fn read_out<R: Rng + ?Sized>(
    mut state: FordState,
    ford: &FordParams,
    tau1: TimeNs,
    rng: &mut R,
) -> Result<(FordState, u64), SequenceError> {
    if state.phase != Phase::Excited {
        return Err(state.reject("read_out"));
    }
    if tau1.is_negative() {
        return Err(SequenceError::NegativeStorage(tau1));
    }
    let herald = state.herald_time.ok_or_else(|| state.reject("read_out"))?;
    let at = herald + tau1;
    let emitted = retrieve(&state, ford, at, rng);
    state.phase = Phase::ReadOut;
    state.read_time = Some(at);
    state.clock = at;
    Ok((state, emitted))
}

/// Read pulse fired at a fixed time whether or not a herald occurred.
///
/// This is how the experiment runs: the read pulse is on a clock, and the
/// heralds only select which trials are counted.
pub fn read_out_free_running<R: Rng + ?Sized>(
    mut state: FordState,
    ford: &FordParams,
    at: TimeNs,
    rng: &mut R,
) -> Result<(FordState, u64), SequenceError> {
    match state.phase {
        Phase::Excited => {}
        Phase::Pumped if state.attempt_index > 0 => {}
        _ => return Err(state.reject("read_out_free_running")),
    }
    if at < state.clock {
        return Err(SequenceError::ReadBeforeWrite {
            read: at,
            last: state.clock,
        });
    }
    let emitted = retrieve(&state, ford, at, rng);
    state.phase = Phase::ReadOut;
    state.read_time = Some(at);
    state.clock = at;
    Ok((state, emitted))
}

/// Per-period success probability of repeat-until-success writing.
pub fn feedback_success_probability(p1: f64, max_attempts: u32) -> f64 {
    1.0 - (1.0 - p1).powi(max_attempts as i32)
}

/// Success-rate gain of `max_attempts` retries over a single attempt.
pub fn feedback_enhancement(p1: f64, max_attempts: u32) -> f64 {
    if p1 <= 0.0 {
        return max_attempts as f64;
    }
    feedback_success_probability(p1, max_attempts) / p1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phys_model::{DecayFitParams, FordMetadata};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(chi: f64, eta_s: f64, bg_s: f64) -> FordParams {
        FordParams {
            chi,
            eta_stokes: eta_s,
            eta_as: 1.0,
            eta_ret0: 1.0,
            decay: DecayFitParams::flat(),
            bg_stokes: bg_s,
            bg_as: 0.0,
            pump_duration: TimeNs::from_ns(1000.0),
            write_period: TimeNs::from_us(21.6),
            metadata: FordMetadata::default(),
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn pump_transitions() {
        let f = params(0.05, 1.0, 0.0);
        let s = pump(FordState::default(), &f).unwrap();
        assert_eq!(s.phase, Phase::Pumped);
        assert_eq!(s.clock, TimeNs::from_ns(1000.0));
        let mut r = rng();
        let mut s = s;
        s.phase = Phase::ReadOut;
        assert_eq!(pump(s, &f).unwrap().phase, Phase::Pumped);
        let e = FordState {
            phase: Phase::Excited,
            ..Default::default()
        };
        assert!(matches!(pump(e, &f), Err(SequenceError::InvalidTransition { .. })));
        assert!(write_attempt(FordState::default(), &f, &mut r).is_err());
    }

    fn click_rate(f: &FordParams, n: usize) -> (f64, usize) {
        let mut r = rng();
        let mut clicks = 0;
        let mut false_heralds = 0;
        for _ in 0..n {
            let s = pump(FordState::default(), f).unwrap();
            let (s, c) = write_attempt(s, f, &mut r).unwrap();
            if c {
                clicks += 1;
                if s.excitation_count == 0 {
                    false_heralds += 1;
                }
            }
        }
        (clicks as f64 / n as f64, false_heralds)
    }

    #[test]
    fn click_probabilities() {
        assert_eq!(click_rate(&params(0.0, 1.0, 0.0), 10_000).0, 0.0);
        let n = 200_000;
        let (p, false_heralds) = click_rate(&params(0.05, 1.0, 0.0), n);
        let expect = 1.0 - 1.0 / 1.05;
        assert!((p - expect).abs() < 4.0 * (expect * (1.0 - expect) / n as f64).sqrt());
        assert_eq!(false_heralds, 0);
        let (p, false_heralds) = click_rate(&params(0.0, 1.0, 0.01), n);
        let expect = 1.0 - (-0.01f64).exp();
        assert!((p - expect).abs() < 4.0 * (expect / n as f64).sqrt());
        assert_eq!(false_heralds as f64 / n as f64, p);
    }

    #[test]
    fn feedback_rate_matches_geometric_retry() {
        let f = params(0.05, 1.0, 0.0);
        let p1 = 1.0 - 1.0 / 1.05;
        let n = 50_000;
        for m in [1u32, 3, 10] {
            let cfg = FeedbackConfig {
                max_attempts: m,
                ..FeedbackConfig::default()
            };
            let mut r = rng();
            let mut ok = 0;
            for _ in 0..n {
                let s = pump(FordState::default(), &f).unwrap();
                let (s, used, success) = feedback_until_success(s, &f, &cfg, &mut r).unwrap();
                assert!(used <= m);
                assert_eq!(s.attempt_index, used);
                if success {
                    ok += 1;
                    assert_eq!(
                        s.herald_time,
                        Some(TimeNs::from_ns(1000.0) + cfg.attempt_spacing * (used as i64 - 1))
                    );
                }
            }
            let p = feedback_success_probability(p1, m);
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((ok as f64 / n as f64 - p).abs() < 4.0 * sigma, "m = {m}");
        }
    }

    #[test]
    fn enhancement_values() {
        assert_relative_eq!(feedback_success_probability(0.05, 10), 0.401263, epsilon = 1e-6);
        assert!((feedback_enhancement(0.05, 10) - 8.03).abs() < 0.01);
        assert!((feedback_enhancement(1e-3, 10) - 10.0).abs() < 0.1);
        assert_relative_eq!(feedback_enhancement(0.3, 1), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn feedback_config_must_fit_period() {
        let f = params(0.05, 1.0, 0.0);
        assert!(FeedbackConfig::default().validate(&f).is_ok());
        let bad = FeedbackConfig {
            max_attempts: 300,
            ..FeedbackConfig::default()
        };
        assert!(bad.validate(&f).is_err());
    }

    #[test]
    fn read_out_requires_herald_and_keeps_time() {
        let f = params(0.0, 1.0, 0.0);
        let mut r = rng();
        let s = pump(FordState::default(), &f).unwrap();
        let (s, click) = write_attempt(s, &f, &mut r).unwrap();
        assert!(!click);
        assert!(matches!(
            read_out(s.clone(), &f, TimeNs::from_ns(30.0), &mut r),
            Err(SequenceError::InvalidTransition { .. })
        ));
        let (s, emitted) = read_out_free_running(s, &f, TimeNs::from_ns(1030.0), &mut r).unwrap();
        assert_eq!(emitted, 0);
        assert_eq!(s.phase, Phase::ReadOut);
    }

    #[test]
    fn single_excitation_with_unit_efficiency_is_emitted() {
        let f = params(0.5, 1.0, 0.0);
        let mut r = rng();
        let mut seen = 0;
        for _ in 0..1000 {
            let s = pump(FordState::default(), &f).unwrap();
            let (s, click) = write_attempt(s, &f, &mut r).unwrap();
            if click {
                let n = s.excitation_count;
                let herald = s.herald_time.unwrap();
                let (s, emitted) = read_out(s, &f, TimeNs::from_ns(30.0), &mut r).unwrap();
                assert_eq!(emitted, n);
                assert_eq!(s.read_time, Some(herald + TimeNs::from_ns(30.0)));
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn false_herald_emits_nothing() {
        let f = params(0.0, 1.0, 5.0);
        let mut r = rng();
        let s = pump(FordState::default(), &f).unwrap();
        let (s, click) = write_attempt(s, &f, &mut r).unwrap();
        assert!(click);
        let (_, emitted) = read_out(s, &f, TimeNs::ZERO, &mut r).unwrap();
        assert_eq!(emitted, 0);
    }

    #[test]
    fn storage_decay_reduces_emission() {
        let mut f = params(0.0, 1.0, 0.0);
        f.decay = DecayFitParams::rational_quadratic(1.0 / 1450.0, 0.0, 1.0);
        let mut r = rng();
        let n = 20_000;
        let mut total = 0;
        for _ in 0..n {
            let mut s = pump(FordState::default(), &f).unwrap();
            s.batches.push(ExcitationBatch {
                created_at: s.clock,
                count: 1,
            });
            s.excitation_count = 1;
            s.phase = Phase::Excited;
            s.herald_time = Some(s.clock);
            let (_, e) = read_out(s, &f, TimeNs::from_ns(1450.0), &mut r).unwrap();
            total += e;
        }
        let p = total as f64 / n as f64;
        assert!((p - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn sequencing_rejects_write_after_herald() {
        let f = params(0.0, 1.0, 50.0);
        let mut r = rng();
        let s = pump(FordState::default(), &f).unwrap();
        let (s, click) = write_attempt(s, &f, &mut r).unwrap();
        assert!(click);
        assert!(write_attempt(s, &f, &mut r).is_err());
    }
}
