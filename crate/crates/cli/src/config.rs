//! TOML scenario files. Every key carries its unit; unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hqm_core::chainplan::{self, ChainOperation, ChainRequest, ChainTiming};
use hqm_core::ford_node::FeedbackConfig;
use hqm_core::netsim::{ChainScenario, CorrelationScenario, DetectionParams, LoopStage, RunConfig, Scenario};
use hqm_core::phys_model::{ChannelParams, DecayFitParams, FordMetadata, FordParams, LoopParams};
use hqm_core::TimeNs;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub n_trials: u64,
    pub ford: FordSection,
    #[serde(default)]
    pub detection: DetectionSection,
    pub channel: ChannelSection,
    #[serde(default, rename = "loop")]
    pub loop_params: Option<LoopSection>,
    #[serde(default)]
    pub feedback: Option<FeedbackSection>,
    #[serde(default)]
    pub delay_fiber: Option<ChannelSection>,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FordSection {
    pub chi: f64,
    pub eta_stokes: f64,
    pub eta_as: f64,
    pub eta_ret0: f64,
    pub decay_a_per_ns: f64,
    pub decay_b_per_ns2: f64,
    pub bg_stokes_per_gate: f64,
    pub bg_as_per_gate: f64,
    #[serde(default = "default_pump_ns")]
    pub pump_duration_ns: f64,
    #[serde(default = "default_period_ns")]
    pub write_period_ns: f64,
    #[serde(default)]
    pub write_detuning_ghz: Option<f64>,
    #[serde(default)]
    pub read_detuning_ghz: Option<f64>,
    #[serde(default)]
    pub beam_waist_um: Option<f64>,
}

fn default_pump_ns() -> f64 {
    1000.0
}

fn default_period_ns() -> f64 {
    21600.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    #[serde(default = "default_gate_ns")]
    pub gate_width_ns: f64,
    #[serde(default)]
    pub hbt: bool,
    #[serde(default)]
    pub jitter_ns: f64,
    #[serde(default = "default_fwhm_ns")]
    pub pulse_fwhm_ns: f64,
}

fn default_gate_ns() -> f64 {
    4.0
}

fn default_fwhm_ns() -> f64 {
    1.6
}

impl Default for DetectionSection {
    fn default() -> Self {
        Self {
            gate_width_ns: default_gate_ns(),
            hbt: false,
            jitter_ns: 0.0,
            pulse_fwhm_ns: default_fwhm_ns(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub length_m: f64,
    #[serde(default = "default_velocity")]
    pub group_velocity_m_per_s: f64,
    pub transmission: f64,
}

fn default_velocity() -> f64 {
    2.0e8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSection {
    pub period_ns: f64,
    pub transmission_per_cycle: f64,
    pub rise_time_ns: f64,
    pub min_spacing_ns: f64,
    #[serde(default = "default_voltage")]
    pub voltage_ratio: f64,
}

fn default_voltage() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSection {
    pub max_attempts: u32,
    pub attempt_spacing_ns: f64,
    pub period_ns: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSection {
    Correlation {
        tau1_ns: f64,
        #[serde(default)]
        loop_cycles: u32,
    },
    Chain {
        operation: OperationName,
        t3_ns: f64,
        t4_ns: f64,
        #[serde(default)]
        t5_ns: Option<f64>,
        #[serde(default)]
        chop_ratio: Option<[f64; 2]>,
        #[serde(default)]
        delta_ns: Option<f64>,
        #[serde(default = "default_t1")]
        t1_ns: f64,
        #[serde(default = "default_bypass")]
        bypass_delay_ns: f64,
        #[serde(default = "default_base_cycles")]
        base_cycles: u32,
        #[serde(default = "default_step")]
        fine_tune_step_ns: f64,
    },
}

fn default_t1() -> f64 {
    565.5
}

fn default_bypass() -> f64 {
    21.5
}

fn default_base_cycles() -> u32 {
    1
}

fn default_step() -> f64 {
    2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationName {
    Fifo,
    Filo,
    Combine,
    Split,
    Chop,
    ChopFifo,
    ChopFilo,
    FineTune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub tau1_ns: Vec<f64>,
}

/// One point of a (possibly one-point) sweep, ready to run.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub index: usize,
    pub tau1_ns: Option<f64>,
    pub run: RunConfig,
}

fn time(field: &str, ns: f64) -> Result<TimeNs, CliError> {
    TimeNs::try_from_ns(ns).ok_or_else(|| CliError::Config(format!("{field}: {ns} is not a representable time")))
}

fn non_negative_time(field: &str, ns: f64) -> Result<TimeNs, CliError> {
    let t = time(field, ns)?;
    if t.is_negative() {
        return Err(CliError::Config(format!("{field}: must be non-negative, got {ns}")));
    }
    Ok(t)
}

impl ChannelSection {
    fn to_params(&self) -> ChannelParams {
        ChannelParams {
            length_m: self.length_m,
            group_velocity: self.group_velocity_m_per_s,
            transmission: self.transmission,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// SHA-256 of the canonical JSON form of the parsed configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    fn check(&self) -> Result<(), CliError> {
        if self.n_trials == 0 {
            return Err(CliError::Config("n_trials: must be at least 1".into()));
        }
        if let Some(s) = &self.sweep {
            if s.tau1_ns.is_empty() {
                return Err(CliError::Config("sweep.tau1_ns: grid must not be empty".into()));
            }
            if s.tau1_ns.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(CliError::Config(
                    "sweep.tau1_ns: grid must be strictly increasing".into(),
                ));
            }
            if matches!(self.scenario, ScenarioSection::Chain { .. }) {
                return Err(CliError::Config(
                    "sweep: only correlation scenarios can be swept".into(),
                ));
            }
        }
        if let ScenarioSection::Chain {
            operation,
            delta_ns,
            chop_ratio,
            ..
        } = &self.scenario
        {
            if self.loop_params.is_none() {
                return Err(CliError::Config("loop: chain scenarios need a [loop] section".into()));
            }
            if (*operation == OperationName::FineTune) != delta_ns.is_some() {
                return Err(CliError::Config(
                    "scenario.delta_ns: required for fine_tune and only allowed there".into(),
                ));
            }
            let chop = matches!(
                operation,
                OperationName::Chop | OperationName::ChopFifo | OperationName::ChopFilo
            );
            if chop_ratio.is_some() && !chop {
                return Err(CliError::Config(
                    "scenario.chop_ratio: only allowed for chop operations".into(),
                ));
            }
        }
        if let ScenarioSection::Correlation { loop_cycles, .. } = &self.scenario {
            if *loop_cycles > 0 && self.loop_params.is_none() {
                return Err(CliError::Config("loop: loop_cycles > 0 needs a [loop] section".into()));
            }
        }
        Ok(())
    }

    pub fn ford_params(&self) -> Result<FordParams, CliError> {
        let f = &self.ford;
        let p = FordParams {
            chi: f.chi,
            eta_stokes: f.eta_stokes,
            eta_as: f.eta_as,
            eta_ret0: f.eta_ret0,
            decay: DecayFitParams::rational_quadratic(f.decay_a_per_ns, f.decay_b_per_ns2, 1.0),
            bg_stokes: f.bg_stokes_per_gate,
            bg_as: f.bg_as_per_gate,
            pump_duration: non_negative_time("ford.pump_duration_ns", f.pump_duration_ns)?,
            write_period: non_negative_time("ford.write_period_ns", f.write_period_ns)?,
            metadata: FordMetadata {
                write_detuning_ghz: f.write_detuning_ghz,
                read_detuning_ghz: f.read_detuning_ghz,
                beam_waist_um: f.beam_waist_um,
                ..FordMetadata::default()
            },
        };
        p.validate().map_err(|e| CliError::Config(format!("ford: {e}")))?;
        Ok(p)
    }

    pub fn loop_params(&self) -> Result<Option<LoopParams>, CliError> {
        let Some(l) = &self.loop_params else {
            return Ok(None);
        };
        let p = LoopParams {
            period_tau: time("loop.period_ns", l.period_ns)?,
            transmission_per_cycle: l.transmission_per_cycle,
            pc_rise_time: non_negative_time("loop.rise_time_ns", l.rise_time_ns)?,
            pc_min_spacing: non_negative_time("loop.min_spacing_ns", l.min_spacing_ns)?,
            voltage_ratio: l.voltage_ratio,
        };
        p.validate().map_err(|e| CliError::Config(format!("loop: {e}")))?;
        Ok(Some(p))
    }

    pub fn channel_params(&self) -> Result<ChannelParams, CliError> {
        let c = self.channel.to_params();
        c.validate().map_err(|e| CliError::Config(format!("channel: {e}")))?;
        Ok(c)
    }

    fn feedback(&self, default: FeedbackConfig) -> Result<FeedbackConfig, CliError> {
        Ok(match &self.feedback {
            None => default,
            Some(f) => FeedbackConfig {
                max_attempts: f.max_attempts,
                attempt_spacing: non_negative_time("feedback.attempt_spacing_ns", f.attempt_spacing_ns)?,
                period: non_negative_time("feedback.period_ns", f.period_ns)?,
            },
        })
    }

    pub fn detection(&self) -> Result<DetectionParams, CliError> {
        let d = &self.detection;
        let p = DetectionParams {
            gate_width: time("detection.gate_width_ns", d.gate_width_ns)?,
            hbt: d.hbt,
            jitter: non_negative_time("detection.jitter_ns", d.jitter_ns)?,
            pulse_fwhm: non_negative_time("detection.pulse_fwhm_ns", d.pulse_fwhm_ns)?,
        };
        if p.gate_width <= TimeNs::ZERO {
            return Err(CliError::Config("detection.gate_width_ns: must be positive".into()));
        }
        Ok(p)
    }

    /// Chain timing and request, for chain scenarios.
    pub fn chain_request(&self) -> Result<Option<(ChainRequest, ChainTiming)>, CliError> {
        let ScenarioSection::Chain {
            operation,
            t3_ns,
            t4_ns,
            t5_ns,
            chop_ratio,
            delta_ns,
            t1_ns,
            bypass_delay_ns,
            base_cycles,
            fine_tune_step_ns,
        } = &self.scenario
        else {
            return Ok(None);
        };
        let op = match operation {
            OperationName::Fifo => ChainOperation::Fifo,
            OperationName::Filo => ChainOperation::Filo,
            OperationName::Combine => ChainOperation::Combine,
            OperationName::Split => ChainOperation::Split,
            OperationName::Chop => ChainOperation::Chop,
            OperationName::ChopFifo => ChainOperation::ChopFifo,
            OperationName::ChopFilo => ChainOperation::ChopFilo,
            OperationName::FineTune => ChainOperation::FineTune {
                delta: time("scenario.delta_ns", delta_ns.unwrap_or(0.0))?,
            },
        };
        time("scenario.t3_ns", *t3_ns)?;
        time("scenario.t4_ns", *t4_ns)?;
        let mut req = ChainRequest::new(op, *t3_ns, *t4_ns);
        if let Some(t5) = t5_ns {
            time("scenario.t5_ns", *t5)?;
            req = req.with_t5(*t5);
        }
        if let Some([a, b]) = chop_ratio {
            req = req.with_ratio(*a, *b);
        }
        let mut fiber = ChainTiming::default().fiber;
        if let Some(d) = &self.delay_fiber {
            fiber = d.to_params();
        }
        let timing = ChainTiming {
            t1: non_negative_time("scenario.t1_ns", *t1_ns)?,
            fiber,
            bypass_delay: non_negative_time("scenario.bypass_delay_ns", *bypass_delay_ns)?,
            base_cycles: *base_cycles,
            fine_tune_step: time("scenario.fine_tune_step_ns", *fine_tune_step_ns)?,
            feedback: self.feedback(FeedbackConfig::default())?,
        };
        Ok(Some((req, timing)))
    }

    /// Expands the configuration into runnable sweep points. Chain scenarios
    /// are planned here, so schedule problems surface before any trial runs.
    pub fn points(&self) -> Result<Vec<SweepPoint>, CliError> {
        let ford = self.ford_params()?;
        let detection = self.detection()?;
        let channel = self.channel_params()?;
        let loop_params = self.loop_params()?;
        match &self.scenario {
            ScenarioSection::Correlation { tau1_ns, loop_cycles } => {
                let delay_fiber = match &self.delay_fiber {
                    None => None,
                    Some(d) => {
                        let p = d.to_params();
                        p.validate()
                            .map_err(|e| CliError::Config(format!("delay_fiber: {e}")))?;
                        Some(p)
                    }
                };
                let feedback = self.feedback(FeedbackConfig::single())?;
                let grid = match &self.sweep {
                    Some(s) => s.tau1_ns.clone(),
                    None => vec![*tau1_ns],
                };
                grid.iter()
                    .enumerate()
                    .map(|(i, &t)| {
                        let tau1 = non_negative_time("scenario.tau1_ns", t)?;
                        let seed = if self.sweep.is_some() {
                            hqm_core::netsim::sweep_seed(self.seed, i as u64)
                        } else {
                            self.seed
                        };
                        Ok(SweepPoint {
                            index: i,
                            tau1_ns: Some(t),
                            run: RunConfig {
                                seed,
                                n_trials: self.n_trials,
                                ford: ford.clone(),
                                detection,
                                scenario: Scenario::Correlation(CorrelationScenario {
                                    tau1,
                                    feedback: feedback.clone(),
                                    channel,
                                    delay_fiber,
                                    loop_stage: loop_params.map(|params| LoopStage {
                                        params,
                                        cycles: *loop_cycles,
                                    }),
                                }),
                            },
                        })
                    })
                    .collect()
            }
            ScenarioSection::Chain { .. } => {
                let (req, timing) = self.chain_request()?.expect("chain scenario");
                let lp = loop_params.expect("checked at load");
                let plan = chainplan::plan(&req, &lp, &ford, &channel, &timing)?;
                Ok(vec![SweepPoint {
                    index: 0,
                    tau1_ns: None,
                    run: RunConfig {
                        seed: self.seed,
                        n_trials: self.n_trials,
                        ford,
                        detection,
                        scenario: Scenario::Chain(ChainScenario {
                            plan,
                            timing,
                            loop_params: lp,
                            channel,
                        }),
                    },
                }])
            }
        }
    }
}
