use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hqm_cli::output::RecordFormat;
use hqm_cli::reproduce::{self, Target};
use hqm_cli::{cmd_fit, cmd_plan, cmd_simulate, configure_threads, load_config, CliError, FitForm, Overrides};

/// Event-driven simulator of heralded single-photon memories with a
/// switchable fiber loop.
///
/// Exit codes: 0 success, 1 runtime or fit failure, 2 config error,
/// 3 schedule or timing constraint violation, 4 failed reproduction check.
///
/// Environment: HQM_THREADS caps the number of worker threads.
/// Results do not depend on it.
#[derive(Parser)]
#[command(name = "hqm", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    /// 1 + C / (1 + A t + B t^2)
    Rq,
    /// A exp(-B t)
    Exponential,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write detection records and estimates.
    Simulate {
        /// Scenario file (TOML, units in key names).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of trials per point.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Record file format.
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Plan switch timings for a chain scenario and predict its correlations.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Fit a decay model to a `t_ns,g2,std_err` table or an estimates JSON.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "rq")]
        form: Form,
        /// Directory for the fit JSON; prints only when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate a built-in reference dataset and check it.
    Reproduce {
        /// fig2, fig3a, fig3b, fig3c, fig4, table1 or supp_bandwidth.
        target: Target,
        #[arg(long, default_value_t = reproduce::DEFAULT_SEED)]
        seed: u64,
        /// Overrides the main Monte Carlo size of the target.
        #[arg(long)]
        trials: Option<u64>,
        /// Defaults to out/<target>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate {
            config,
            seed,
            trials,
            out,
            format,
        } => {
            let cfg = load_config(&config, &Overrides { seed, trials })?;
            let format = match format {
                Format::Csv => RecordFormat::Csv,
                Format::Json => RecordFormat::Json,
            };
            let table = cmd_simulate(&cfg, &out, format)?;
            for row in &table.rows {
                for e in &row.estimates {
                    let v = match (e.value, e.std_err) {
                        (Some(v), Some(s)) => format!("{v:.4} +- {s:.4}"),
                        _ => "undefined".into(),
                    };
                    let tau = row.tau1_ns.map_or(String::new(), |t| format!(" tau1={t}"));
                    println!("[{}]{tau} g2({},{}) = {v}", row.index, e.a, e.b);
                }
            }
        }
        Command::Plan { config, out } => {
            let cfg = load_config(&config, &Overrides::default())?;
            let r = cmd_plan(&cfg, &out)?;
            println!(
                "{:?}: t2={} t3={} t4={} residual={}",
                r.plan.operation, r.plan.t2, r.plan.achieved_t3, r.plan.achieved_t4, r.plan.residual
            );
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            for p in &r.prediction.g2 {
                println!("g2({},{}) = {:.3}", p.herald, p.mode, p.g2);
            }
        }
        Command::Fit { input, form, out } => {
            let form = match form {
                Form::Rq => FitForm::RationalQuadratic,
                Form::Exponential => FitForm::Exponential,
            };
            let r = cmd_fit(&input, form, out.as_deref())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&r).map_err(|e| CliError::Runtime(e.to_string()))?
            );
        }
        Command::Reproduce {
            target,
            seed,
            trials,
            out,
        } => {
            if trials == Some(0) {
                return Err(CliError::Config("--trials: must be at least 1".into()));
            }
            let out = out.unwrap_or_else(|| reproduce::default_out(target));
            let s = reproduce::run(target, &reproduce::Options { seed, trials, out })?;
            for c in &s.checks {
                let tag = c.criterion.map_or(String::new(), |n| format!(" [{n}]"));
                println!(
                    "{}{tag} {}: {} (expected {})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.expected
                );
            }
            for n in &s.notes {
                println!("note: {n}");
            }
            if !s.pass {
                let failed = s.checks.iter().filter(|c| !c.pass).count();
                return Err(CliError::Acceptance(format!("{target}: {failed} check(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
