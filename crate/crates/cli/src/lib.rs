//! Driver for the network simulator: scenario files in, records, estimates,
//! plans, fits and reproduction summaries out.

pub mod config;
pub mod output;
pub mod reproduce;

use std::path::{Path, PathBuf};

use thiserror::Error;

use hqm_core::chainplan::{self, PlanError};
use hqm_core::estimators::{fit_decay, lifetime_1e, DecaySample, EstimateError, LifetimeConvention, WindowCounts};
use hqm_core::netsim::{self, SimError};
use hqm_core::phys_model::DecayForm;
use serde::Serialize;

use config::ScenarioConfig;
use output::{Metadata, RecordFormat, ResultRow, ResultTable};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("constraint violation: {0}")]
    Constraint(String),
    #[error("acceptance failure: {0}")]
    Acceptance(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 0 success, 1 runtime or fit failure, 2 config error, 3 constraint
    /// violation, 4 acceptance failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) | CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Constraint(_) => 3,
            CliError::Acceptance(_) => 4,
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Model(m) => CliError::Config(m.to_string()),
            PlanError::MissingChopRatio | PlanError::InvalidChopRatio(..) | PlanError::Quantization { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Constraint(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Schedule(_) => CliError::Constraint(e.to_string()),
            SimError::Model(_) | SimError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Overrides applied on top of a scenario file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<u64>,
}

pub fn load_config(path: &Path, o: &Overrides) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(n) = o.trials {
        if n == 0 {
            return Err(CliError::Config("--trials: must be at least 1".into()));
        }
        cfg.n_trials = n;
    }
    Ok(cfg)
}

/// Runs every sweep point, writing one record file per point and one
/// estimates table. Returns the table.
pub fn cmd_simulate(cfg: &ScenarioConfig, out: &Path, format: RecordFormat) -> Result<ResultTable, CliError> {
    let hash = cfg.hash();
    let meta = Metadata::new(&hash, cfg.seed);
    let points = cfg.points()?;
    let sweep = points.len() > 1 || cfg.sweep.is_some();
    let mut rows = Vec::new();
    for p in &points {
        let windows = netsim::standard_windows(&p.run)?;
        let records = netsim::run(&p.run)?;
        let counts = WindowCounts::tally(&records, &windows, p.run.n_trials)?;
        let file = if sweep {
            format!("{}_records_{:03}.{}", cfg.name, p.index, format.extension())
        } else {
            format!("{}_records.{}", cfg.name, format.extension())
        };
        output::write_records(&out.join(file), &Metadata::new(&hash, p.run.seed), &records, format)?;
        rows.push(ResultRow {
            index: p.index,
            tau1_ns: p.tau1_ns,
            seed: p.run.seed,
            n_trials: p.run.n_trials,
            windows: counts.labels.clone(),
            singles: counts.singles.clone(),
            estimates: output::estimates(&counts),
        });
    }
    let table = ResultTable {
        metadata: meta,
        name: cfg.name.clone(),
        rows,
    };
    output::write_json(&out.join(format!("{}_estimates.json", cfg.name)), &table)?;
    Ok(table)
}

#[derive(Clone, Debug, Serialize)]
pub struct PlanReport {
    pub metadata: Metadata,
    pub name: String,
    pub plan: chainplan::ChainPlan,
    pub prediction: chainplan::Prediction,
    pub warnings: Vec<String>,
}

pub fn cmd_plan(cfg: &ScenarioConfig, out: &Path) -> Result<PlanReport, CliError> {
    let (req, timing) = cfg
        .chain_request()?
        .ok_or_else(|| CliError::Config("scenario.kind: `plan` needs a chain scenario".into()))?;
    let ford = cfg.ford_params()?;
    let channel = cfg.channel_params()?;
    let lp = cfg.loop_params()?.expect("chain scenarios carry a loop");
    let plan = chainplan::plan(&req, &lp, &ford, &channel, &timing)?;
    let prediction = chainplan::predict_outcomes(&plan, &ford, &lp, &channel, &timing)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut warnings = Vec::new();
    if plan.residual.abs().as_ns() > timing.fine_tune_step.as_ns() / 2.0 {
        warnings.push(format!(
            "achieved t4 misses the target by {} ns, more than half the {} ns fine-tune step",
            plan.residual, timing.fine_tune_step
        ));
    }
    let report = PlanReport {
        metadata: Metadata::new(cfg.hash(), cfg.seed),
        name: cfg.name.clone(),
        plan,
        prediction,
        warnings,
    };
    output::write_json(&out.join(format!("{}_plan.json", cfg.name)), &report)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitForm {
    RationalQuadratic,
    Exponential,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitOutput {
    pub schema_version: u32,
    pub input: String,
    pub n_points: usize,
    pub report: hqm_core::estimators::FitReport,
    pub lifetime_peak_ns: Option<f64>,
    pub lifetime_excess_ns: Option<f64>,
}

/// Reads `t_ns,g2,std_err` rows from a CSV table (comment lines start with
/// `#`, the first other line is a header), or the first herald-signal
/// estimate of each row of an estimates JSON file.
pub fn read_samples(path: &Path) -> Result<Vec<DecaySample>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let table: ResultTable =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return table
            .rows
            .iter()
            .map(|r| {
                let t = r
                    .tau1_ns
                    .ok_or_else(|| CliError::Config(format!("row {}: no tau1_ns", r.index)))?;
                let e = r
                    .estimates
                    .first()
                    .ok_or_else(|| CliError::Config(format!("row {}: no estimates", r.index)))?;
                match (e.value, e.std_err) {
                    (Some(g2), Some(err)) => Ok(DecaySample { t_ns: t, g2, err }),
                    _ => Err(CliError::Runtime(format!("row {}: correlation undefined", r.index))),
                }
            })
            .collect();
    }
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::Config(format!("{}: empty table", path.display())))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() != 3 {
        return Err(CliError::Config(format!(
            "{}: expected three columns `t_ns,g2,std_err`, found `{header}`",
            path.display()
        )));
    }
    lines
        .map(|(n, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Config(format!("{} line {}: {e}", path.display(), n + 1)))?;
            if v.len() != 3 {
                return Err(CliError::Config(format!(
                    "{} line {}: expected 3 values",
                    path.display(),
                    n + 1
                )));
            }
            Ok(DecaySample {
                t_ns: v[0],
                g2: v[1],
                err: v[2],
            })
        })
        .collect()
}

pub fn cmd_fit(input: &Path, form: FitForm, out: Option<&Path>) -> Result<FitOutput, CliError> {
    let samples = read_samples(input)?;
    let form = match form {
        FitForm::RationalQuadratic => DecayForm::RationalQuadratic,
        FitForm::Exponential => DecayForm::Exponential,
    };
    let report = fit_decay(&samples, form)?;
    let life = |c| lifetime_1e(&report.params, c).ok().map(|t| t.as_ns());
    let result = FitOutput {
        schema_version: output::SCHEMA_VERSION,
        input: input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        n_points: samples.len(),
        lifetime_peak_ns: life(LifetimeConvention::Peak),
        lifetime_excess_ns: life(LifetimeConvention::Excess),
        report,
    };
    if let Some(dir) = out {
        let stem = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "fit".into());
        output::write_json(&dir.join(format!("{stem}_fit.json")), &result)?;
    }
    Ok(result)
}

/// Applies `HQM_THREADS` to the global rayon pool.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("HQM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("HQM_THREADS: expected a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}
