//! Compiles two-photon chain operations into loop switch schedules.
//!
//! Two heralded anti-Stokes photons leave the source `t2` apart. The first
//! takes the fiber delay line, the second a short bypass, so they reach the
//! loop `t3` apart. The loop holds each for a whole number of cycles, which
//! sets the output interval `t4 = t3 + (k2 - k1) * tau`. Sub-cycle changes are
//! made on the source side by shifting the second read pulse.
//!
//! All switch times in a plan are relative to the first photon's map-in.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ford_node::FeedbackConfig;
use crate::loop_node::{q_of_voltage, validate_sequence, voltage_for_q, SwitchEvent, SwitchKind, Violation};
use crate::phys_model::{
    feedback_click_probs, ford_retrieval_efficiency, g2_analytic, loop_retrieval_efficiency, ChannelParams, FordParams,
    LoopParams, ModelError,
};
use crate::time::TimeNs;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ChainOperation {
    Fifo,
    Filo,
    Combine,
    Split,
    Chop,
    ChopFifo,
    ChopFilo,
    FineTune { delta: TimeNs },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRequest {
    pub operation: ChainOperation,
    pub target_t3: TimeNs,
    pub target_t4: TimeNs,
    #[serde(default)]
    pub target_t5: Option<TimeNs>,
    /// Probability ratio first part : remainder for chopping.
    #[serde(default)]
    pub chop_ratio: Option<(f64, f64)>,
}

impl ChainRequest {
    pub fn new(operation: ChainOperation, t3_ns: f64, t4_ns: f64) -> Self {
        Self {
            operation,
            target_t3: TimeNs::from_ns(t3_ns),
            target_t4: TimeNs::from_ns(t4_ns),
            target_t5: None,
            chop_ratio: None,
        }
    }

    pub fn with_t5(mut self, t5_ns: f64) -> Self {
        self.target_t5 = Some(TimeNs::from_ns(t5_ns));
        self
    }

    pub fn with_ratio(mut self, first: f64, remainder: f64) -> Self {
        self.chop_ratio = Some((first, remainder));
        self
    }
}

/// Fixed timing of the source side and the photon routes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainTiming {
    /// Storage time of the first photon: from the last write slot to its read.
    pub t1: TimeNs,
    /// Delay line taken by the first photon.
    pub fiber: ChannelParams,
    /// Fixed extra path of the second photon (switches and short fiber).
    pub bypass_delay: TimeNs,
    /// Cycles every photon spends in the loop before reordering.
    pub base_cycles: u32,
    pub fine_tune_step: TimeNs,
    pub feedback: FeedbackConfig,
}

impl Default for ChainTiming {
    fn default() -> Self {
        Self {
            t1: TimeNs::from_ns(565.5),
            fiber: ChannelParams {
                length_m: 500.0,
                group_velocity: 2.0e8,
                transmission: 1.0,
            },
            bypass_delay: TimeNs::from_ns(21.5),
            base_cycles: 1,
            fine_tune_step: TimeNs::from_ns(2.0),
            feedback: FeedbackConfig::default(),
        }
    }
}

impl ChainTiming {
    /// Difference between the two photons' delays to the loop.
    pub fn route_offset(&self) -> TimeNs {
        self.fiber.delay() - self.bypass_delay
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("requested ordering unreachable: {0}")]
    UnreachableOrdering(String),
    #[error("slot collision: {0}")]
    SlotCollision(String),
    #[error("switch constraint violated: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    SwitchConstraint(Vec<Violation>),
    #[error("fine-tune delta {delta} ns is not a multiple of the {step} ns step")]
    Quantization { delta: TimeNs, step: TimeNs },
    #[error("chop operations need a chop ratio")]
    MissingChopRatio,
    #[error("invalid chop ratio {0}:{1}")]
    InvalidChopRatio(f64, f64),
    #[error("second read at t2 = {t2} ns would precede its own write window (needs at least {min} ns)")]
    Timing { t2: TimeNs, min: TimeNs },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub first_via_fiber: bool,
    pub second_via_fiber: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChopPlan {
    /// 0 for the first photon, 1 for the second.
    pub photon: usize,
    /// Extra cycles between the partial and the full map-out.
    pub extra_cycles: u32,
    pub q: f64,
    pub v: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModePart {
    Whole,
    First,
    Remainder,
}

/// A temporal output mode of the loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputMode {
    pub label: String,
    /// Source pair that feeds the mode: 0 or 1.
    pub pair: usize,
    pub part: ModePart,
    /// Output time relative to the first photon's map-in.
    pub time: TimeNs,
    pub cycles: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainPlan {
    pub operation: ChainOperation,
    pub t1: TimeNs,
    pub t2: TimeNs,
    pub route: Route,
    pub k1: u32,
    pub k2: u32,
    pub chop: Option<ChopPlan>,
    /// Voltage ratio of each map-out event, in event order.
    pub voltages: Vec<f64>,
    pub achieved_t3: TimeNs,
    pub achieved_t4: TimeNs,
    pub achieved_t5: Option<TimeNs>,
    pub target_t4: TimeNs,
    pub target_t5: Option<TimeNs>,
    /// `target_t4 - achieved_t4`.
    pub residual: TimeNs,
    pub residual_t5: Option<TimeNs>,
    pub events: Vec<SwitchEvent>,
    pub modes: Vec<OutputMode>,
    pub warnings: Vec<String>,
}

fn rebuild(plan: &mut ChainPlan, loop_params: &LoopParams) {
    let tau = loop_params.period_tau;
    let t3 = plan.achieved_t3;
    let entry = [TimeNs::ZERO, t3];
    let k = [plan.k1, plan.k2];
    let mut events = vec![
        SwitchEvent {
            time: entry[0],
            kind: SwitchKind::MapIn,
            target: 0,
        },
        SwitchEvent {
            time: entry[1],
            kind: SwitchKind::MapIn,
            target: 1,
        },
    ];
    let mut modes = Vec::new();
    for p in 0..2 {
        let out = entry[p] + tau * k[p] as i64;
        match plan.chop.filter(|c| c.photon == p) {
            None => {
                events.push(SwitchEvent {
                    time: out,
                    kind: SwitchKind::MapOutFull,
                    target: p as u32,
                });
                modes.push(OutputMode {
                    label: format!("AS{}", p + 1),
                    pair: p,
                    part: ModePart::Whole,
                    time: out,
                    cycles: k[p],
                });
            }
            Some(c) => {
                let rem = out + tau * c.extra_cycles as i64;
                events.push(SwitchEvent {
                    time: out,
                    kind: SwitchKind::MapOutPartial { v: c.v },
                    target: p as u32,
                });
                events.push(SwitchEvent {
                    time: rem,
                    kind: SwitchKind::MapOutFull,
                    target: p as u32,
                });
                modes.push(OutputMode {
                    label: format!("AS{}", p + 1),
                    pair: p,
                    part: ModePart::First,
                    time: out,
                    cycles: k[p],
                });
                modes.push(OutputMode {
                    label: "AS3".into(),
                    pair: p,
                    part: ModePart::Remainder,
                    time: rem,
                    cycles: k[p] + c.extra_cycles,
                });
            }
        }
    }
    events.sort_by_key(|e| e.time);
    modes.sort_by_key(|m| m.time);
    plan.voltages = events
        .iter()
        .filter_map(|e| match e.kind {
            SwitchKind::MapOutFull => Some(1.0),
            SwitchKind::MapOutPartial { v } => Some(v),
            SwitchKind::MapIn => None,
        })
        .collect();
    let first_out = |p: usize| {
        modes
            .iter()
            .find(|m| m.pair == p && m.part != ModePart::Remainder)
            .unwrap()
            .time
    };
    plan.achieved_t4 = first_out(1) - first_out(0);
    plan.residual = plan.target_t4 - plan.achieved_t4;
    plan.achieved_t5 = modes.iter().position(|m| m.part == ModePart::Remainder).map(|i| {
        let rem = modes[i].time;
        // interval to the output just before the remainder
        modes[..i].last().map_or(TimeNs::ZERO, |prev| rem - prev.time)
    });
    plan.residual_t5 = plan.target_t5.zip(plan.achieved_t5).map(|(a, b)| a - b);
    plan.events = events;
    plan.modes = modes;
}

fn check_plan(
    plan: &ChainPlan,
    loop_params: &LoopParams,
    timing: &ChainTiming,
    ford: &FordParams,
) -> Result<(), PlanError> {
    let rise = loop_params.pc_rise_time;
    for (i, a) in plan.modes.iter().enumerate() {
        for b in &plan.modes[i + 1..] {
            if (b.time - a.time).abs() < rise {
                return Err(PlanError::SlotCollision(format!(
                    "outputs {} and {} are {} ns apart, rise time {} ns",
                    a.label,
                    b.label,
                    (b.time - a.time).abs(),
                    rise
                )));
            }
        }
    }
    let min = ford.pump_duration + timing.feedback.last_slot_offset();
    if plan.t2 < min {
        return Err(PlanError::Timing { t2: plan.t2, min });
    }
    validate_sequence(&plan.events, loop_params).map_err(PlanError::SwitchConstraint)
}

fn check_ordering(op: ChainOperation, t3: TimeNs, t4: TimeNs) -> Result<(), PlanError> {
    let ok = match op {
        ChainOperation::Fifo | ChainOperation::Chop | ChainOperation::ChopFifo | ChainOperation::ChopFilo => {
            t4 > TimeNs::ZERO
        }
        ChainOperation::Filo => t4 < TimeNs::ZERO,
        ChainOperation::Combine => t4.abs() < t3.abs(),
        ChainOperation::Split => t4.abs() > t3.abs(),
        ChainOperation::FineTune { .. } => true,
    };
    if ok {
        Ok(())
    } else {
        Err(PlanError::UnreachableOrdering(format!(
            "{op:?} with t3 = {t3} ns cannot produce t4 = {t4} ns"
        )))
    }
}

/// Compiles a request into a validated schedule.
pub fn plan(
    request: &ChainRequest,
    loop_params: &LoopParams,
    ford: &FordParams,
    channel: &ChannelParams,
    timing: &ChainTiming,
) -> Result<ChainPlan, PlanError> {
    loop_params.validate()?;
    ford.validate()?;
    channel.validate()?;
    timing.fiber.validate()?;

    if let ChainOperation::FineTune { delta } = request.operation {
        let step = timing.fine_tune_step;
        if !delta.is_multiple_of(step) && delta != TimeNs::ZERO {
            return Err(PlanError::Quantization { delta, step });
        }
        let base = ChainRequest {
            operation: ChainOperation::FineTune { delta: TimeNs::ZERO },
            target_t3: request.target_t3 - delta,
            target_t4: request.target_t4 - delta,
            ..request.clone()
        };
        let mut p = plan_core(&base, loop_params, ford, timing)?;
        p.target_t4 = request.target_t4;
        p = fine_tune(&p, delta, step, loop_params)?;
        p.operation = request.operation;
        check_plan(&p, loop_params, timing, ford)?;
        return Ok(p);
    }
    plan_core(request, loop_params, ford, timing)
}

fn plan_core(
    request: &ChainRequest,
    loop_params: &LoopParams,
    ford: &FordParams,
    timing: &ChainTiming,
) -> Result<ChainPlan, PlanError> {
    let tau = loop_params.period_tau;
    let t3 = request.target_t3;
    if t3.abs() < loop_params.pc_rise_time {
        return Err(PlanError::SlotCollision(format!(
            "photons arrive {t3} ns apart, within the {} ns rise time",
            loop_params.pc_rise_time
        )));
    }
    let dk = (request.target_t4 - t3).round_div(tau);
    let base = timing.base_cycles as i64;
    let k1 = (base + (-dk).max(0)) as u32;
    let k2 = (base + dk.max(0)) as u32;

    let chop = match request.operation {
        ChainOperation::Chop | ChainOperation::ChopFifo | ChainOperation::ChopFilo => {
            let (a, b) = match (request.operation, request.chop_ratio) {
                (_, Some(r)) => r,
                (ChainOperation::Chop, None) => return Err(PlanError::MissingChopRatio),
                (_, None) => (1.0, 1.0),
            };
            if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(PlanError::InvalidChopRatio(a, b));
            }
            let photon = if request.operation == ChainOperation::ChopFilo {
                0
            } else {
                1
            };
            Some((photon, a / b))
        }
        _ => None,
    };

    let mut plan = ChainPlan {
        operation: request.operation,
        t1: timing.t1,
        t2: t3 + timing.route_offset(),
        route: Route {
            first_via_fiber: true,
            second_via_fiber: false,
        },
        k1,
        k2,
        chop: None,
        voltages: Vec::new(),
        achieved_t3: t3,
        achieved_t4: TimeNs::ZERO,
        achieved_t5: None,
        target_t4: request.target_t4,
        target_t5: request.target_t5,
        residual: TimeNs::ZERO,
        residual_t5: None,
        events: Vec::new(),
        modes: Vec::new(),
        warnings: Vec::new(),
    };

    if let Some((photon, ratio)) = chop {
        let t = loop_params.transmission_per_cycle;
        let mut best: Option<(TimeNs, ChainPlan)> = None;
        for m in 1..=16u32 {
            let qm = ratio * t.powi(m as i32);
            let q = qm / (1.0 + qm);
            let mut candidate = plan.clone();
            candidate.chop = Some(ChopPlan {
                photon,
                extra_cycles: m,
                q,
                v: voltage_for_q(q),
            });
            rebuild(&mut candidate, loop_params);
            let miss = match (request.target_t5, candidate.achieved_t5) {
                (Some(target), Some(got)) => (target - got).abs(),
                _ => TimeNs::from_ps(m as i64),
            };
            if best.as_ref().is_none_or(|(b, _)| miss < *b) {
                best = Some((miss, candidate));
            }
        }
        plan = best.unwrap().1;
    } else {
        rebuild(&mut plan, loop_params);
    }

    check_ordering(request.operation, plan.achieved_t3, plan.achieved_t4)?;
    if plan.residual.abs() > timing.fine_tune_step {
        plan.warnings.push(format!(
            "t4 residual {} ns exceeds the {} ns fine-tune step",
            plan.residual, timing.fine_tune_step
        ));
    }
    check_plan(&plan, loop_params, timing, ford)?;
    Ok(plan)
}

/// Shifts the second read pulse by `delta`, moving the second photon and its
/// switch events with it. Loop cycle counts are unchanged.
pub fn fine_tune(
    plan: &ChainPlan,
    delta: TimeNs,
    step: TimeNs,
    loop_params: &LoopParams,
) -> Result<ChainPlan, PlanError> {
    if delta != TimeNs::ZERO && !delta.is_multiple_of(step) {
        return Err(PlanError::Quantization { delta, step });
    }
    if delta == TimeNs::ZERO {
        return Ok(plan.clone());
    }
    let mut p = plan.clone();
    p.t2 += delta;
    p.achieved_t3 += delta;
    rebuild(&mut p, loop_params);
    validate_sequence(&p.events, loop_params).map_err(PlanError::SwitchConstraint)?;
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModePrediction {
    pub label: String,
    pub pair: usize,
    /// Probability that an excitation from the heralding write slot becomes
    /// a click-capable photon in this mode (all path efficiencies).
    pub efficiency: f64,
    /// Probability of an anti-Stokes click in the mode window.
    pub p_click: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub herald: String,
    pub mode: String,
    pub g2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p_herald: [f64; 2],
    pub modes: Vec<ModePrediction>,
    pub g2: Vec<PairPrediction>,
}

impl Prediction {
    pub fn g2(&self, herald: &str, mode: &str) -> Option<f64> {
        self.g2
            .iter()
            .find(|p| p.herald == herald && p.mode == mode)
            .map(|p| p.g2)
    }
}

/// Storage age of each write slot's excitations when its pair is read.
pub fn slot_ages(pair: usize, plan: &ChainPlan, ford: &FordParams, timing: &ChainTiming) -> Vec<TimeNs> {
    let m = timing.feedback.max_attempts as i64;
    let sp = timing.feedback.attempt_spacing;
    (0..m)
        .map(|i| match pair {
            0 => sp * (m - 1 - i) + timing.t1,
            _ => plan.t2 - ford.pump_duration - sp * i,
        })
        .collect()
}

/// Fraction of a photon leaving the source that ends up in `mode`, before
/// detection efficiency.
pub fn mode_transport(
    mode: &OutputMode,
    plan: &ChainPlan,
    loop_params: &LoopParams,
    channel: &ChannelParams,
    timing: &ChainTiming,
) -> f64 {
    let via_fiber = if mode.pair == 0 {
        plan.route.first_via_fiber
    } else {
        plan.route.second_via_fiber
    };
    let route = if via_fiber { timing.fiber.transmission } else { 1.0 };
    let t = loop_params.transmission_per_cycle;
    let chop = match (plan.chop, mode.part) {
        (Some(c), ModePart::First) => c.q,
        (Some(c), ModePart::Remainder) => 1.0 - c.q,
        _ => 1.0,
    };
    channel.transmission * route * loop_retrieval_efficiency(mode.cycles, t) * chop
}

/// Click statistics expected from running the plan.
pub fn predict_outcomes(
    plan: &ChainPlan,
    ford: &FordParams,
    loop_params: &LoopParams,
    channel: &ChannelParams,
    timing: &ChainTiming,
) -> Result<Prediction, ModelError> {
    let m = timing.feedback.max_attempts;
    let mut p_herald = [0.0; 2];
    let mut modes = Vec::new();
    let mut g2 = Vec::new();
    for mode in &plan.modes {
        let transport = mode_transport(mode, plan, loop_params, channel, timing);
        let ages = slot_ages(mode.pair, plan, ford, timing);
        let effs: Vec<f64> = ages
            .iter()
            .map(|&a| ford.eta_as * ford_retrieval_efficiency(a, ford.eta_ret0, &ford.decay) * transport)
            .collect();
        let probs = feedback_click_probs(ford.chi, ford.eta_stokes, ford.bg_stokes, &effs, ford.bg_as)?;
        p_herald[mode.pair] = probs.p_stokes;
        modes.push(ModePrediction {
            label: mode.label.clone(),
            pair: mode.pair,
            efficiency: effs[(m - 1) as usize],
            p_click: probs.p_as,
        });
        for h in 0..2 {
            let value = if h == mode.pair { g2_analytic(&probs)? } else { 1.0 };
            g2.push(PairPrediction {
                herald: format!("S{}", h + 1),
                mode: mode.label.clone(),
                g2: value,
            });
        }
    }
    Ok(Prediction { p_herald, modes, g2 })
}

/// Per-pass out-coupling voltage giving a first:remainder ratio after `m`
/// extra cycles.
pub fn chop_voltage(ratio: f64, transmission: f64, m: u32) -> f64 {
    let qm = ratio * transmission.powi(m as i32);
    voltage_for_q(qm / (1.0 + qm))
}

/// Inverse of [`chop_voltage`].
pub fn chop_ratio_of(v: f64, transmission: f64, m: u32) -> f64 {
    let q = q_of_voltage(v);
    q / ((1.0 - q) * transmission.powi(m as i32))
}
