//! Command-line front end: `noise`, `simulate` and `report`.
//!
//! Everything here is callable in-process through [`execute`]; the binary
//! only parses arguments and maps the outcome to an exit code.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dispatch::{receding_horizon_run, SolverChoice, EXACT_MAX_BINARIES};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::metrics::{
    noise_histogram, noise_moment_check, write_histogram, write_plot_data, RunReport, Summary, HISTOGRAM_BINS,
    NOISE_CSV, SUMMARY_CSV,
};
use crate::privacy::{compute_net_pv, generate_noise_trace};
use crate::scenario::{build_simulation, ScenarioConfig};

pub const MANIFEST_TOML: &str = "manifest.toml";
pub const HISTOGRAM_CSV: &str = "histogram.csv";
pub const NOISE_MOMENTS_CSV: &str = "noise_moments.csv";

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_SOLVER_GUARD: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dppv",
    version,
    about = "Private PV reference tracking with building HVAC loads"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Sample a Laplace noise trace and its histogram.
    Noise(RunArgs),
    /// Run the full closed loop and write every output.
    Simulate(RunArgs),
    /// Recompute summary and plot data from an existing run directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario TOML; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if needed.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// exact or greedy
    #[arg(long)]
    pub solver: Option<SolverChoice>,
    /// MPC prediction horizon in steps.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Exit with status 3 when any step had no comfort-feasible action.
    #[arg(long)]
    pub strict: bool,
}

impl RunArgs {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunArgs {
            config: None,
            out: out.into(),
            seed: None,
            epsilon: None,
            solver: None,
            horizon: None,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Directory written by an earlier `simulate`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub strict: bool,
}

/// Written next to every run so `report` can rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: ScenarioConfig,
}

impl Manifest {
    fn new(command: &str, config: &ScenarioConfig) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_TOML);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
            _ => Error::io(format!("reading {}", path.display()), e),
        })?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        manifest.config.validate()?;
        Ok(manifest)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        write_text(&dir.join(MANIFEST_TOML), &text)
    }
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// Human-readable text for stdout.
    pub message: String,
    /// Steps with no comfort-feasible action.
    pub infeasible_steps: usize,
    pub strict: bool,
    pub summary: Option<Summary>,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        if self.strict && self.infeasible_steps > 0 {
            EXIT_INFEASIBLE
        } else {
            EXIT_OK
        }
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::SolverGuard { .. } => EXIT_SOLVER_GUARD,
        _ => EXIT_ERROR,
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_OK });
        }
    };
    match execute(&cli.command) {
        Ok(outcome) => {
            print!("{}", outcome.message);
            let code = outcome.exit_code();
            if code == EXIT_INFEASIBLE {
                eprintln!(
                    "error: {} step(s) had no comfort-feasible action (--strict)",
                    outcome.infeasible_steps
                );
            }
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn execute(command: &Command) -> Result<Outcome> {
    match command {
        Command::Noise(args) => run_noise(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Report(args) => run_report(args),
    }
}

/// Config file (or defaults) with command-line overrides applied.
pub fn resolve_config(args: &RunArgs) -> Result<ScenarioConfig> {
    let mut config = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epsilon) = args.epsilon {
        config.dp.epsilon = epsilon;
    }
    if let Some(solver) = args.solver {
        config.solver = solver;
    }
    if let Some(horizon) = args.horizon {
        config.mpc.horizon_np = horizon;
    }
    config.validate()?;
    Ok(config)
}

pub fn run_noise(args: &RunArgs) -> Result<Outcome> {
    let config = resolve_config(args)?;
    let params = config.dp_params()?;
    let noise = generate_noise_trace(&params, config.horizon_steps, config.step_seconds)?;
    create_dir(&args.out)?;
    noise.save_csv(&args.out.join(NOISE_CSV))?;
    write_histogram(&noise_histogram(&noise, HISTOGRAM_BINS)?, &args.out.join(HISTOGRAM_CSV))?;

    let moments = noise_moment_check(&noise, &params);
    let variance = moments.variance.map(fmt_f64).unwrap_or_default();
    let csv = format!(
        "n,mean_kw,variance_kw2,expected_variance_kw2,scale_kw,epsilon,delta,delta_is_slack\n{},{},{},{},{},{},{},{}\n",
        moments.n,
        fmt_f64(moments.mean),
        variance,
        fmt_f64(moments.expected_variance),
        fmt_f64(params.scale()),
        fmt_f64(params.epsilon),
        fmt_f64(params.delta),
        params.delta_is_slack() as u8,
    );
    write_text(&args.out.join(NOISE_MOMENTS_CSV), &csv)?;
    Manifest::new("noise", &config).save(&args.out)?;

    let mut message = format!(
        "noise samples        {}\nlaplace scale        {:.4} kW\nsample mean          {:.4} kW\n",
        moments.n,
        params.scale(),
        moments.mean
    );
    if let Some(v) = moments.variance {
        message += &format!(
            "sample variance      {v:.4} kW² (target {:.4})\n",
            moments.expected_variance
        );
    }
    if params.delta_is_slack() {
        message += &format!("delta {} is unused by the pure Laplace mechanism\n", params.delta);
    }
    Ok(Outcome {
        message,
        infeasible_steps: 0,
        strict: args.strict,
        summary: None,
    })
}

/// Runs one scenario end to end in memory. The exact solver is refused up
/// front when the first horizon already exceeds its variable budget.
pub fn simulate(config: &ScenarioConfig) -> Result<RunReport> {
    config.validate()?;
    if config.solver == SolverChoice::Exact {
        let binaries = config.n_buildings * config.mpc.horizon_np.min(config.horizon_steps);
        if binaries > EXACT_MAX_BINARIES {
            return Err(Error::SolverGuard {
                binaries,
                limit: EXACT_MAX_BINARIES,
            });
        }
    }

    let sim = build_simulation(config)?;
    let params = config.dp_params()?;
    let noise = generate_noise_trace(&params, config.horizon_steps, config.step_seconds)?;
    let net = compute_net_pv(&sim.pv, &noise)?;
    let run = receding_horizon_run(
        &sim.models,
        &sim.init_states,
        &sim.disturbances,
        &net.values,
        &config.mpc,
        config.solver,
    )?;
    RunReport::assemble(&sim.pv, &noise, &net, run)
}

pub fn run_simulate(args: &RunArgs) -> Result<Outcome> {
    let config = resolve_config(args)?;
    let report = simulate(&config)?;

    create_dir(&args.out)?;
    report.save(&args.out)?;
    Manifest::new("simulate", &config).save(&args.out)?;
    let summary = finish_report(&report, &config, &args.out)?;
    Ok(Outcome {
        message: summary.to_string(),
        infeasible_steps: summary.infeasible_steps,
        strict: args.strict,
        summary: Some(summary),
    })
}

pub fn run_report(args: &ReportArgs) -> Result<Outcome> {
    if !args.out.is_dir() {
        return Err(Error::MissingFile(args.out.clone()));
    }
    let manifest = Manifest::load(&args.out)?;
    if manifest.command != "simulate" {
        return Err(Error::Config(format!(
            "{} was written by `{}`, not `simulate`",
            args.out.join(MANIFEST_TOML).display(),
            manifest.command
        )));
    }
    let report = RunReport::load(&args.out, manifest.config.step_seconds)?;
    if report.temps.len() != manifest.config.n_buildings || report.len() != manifest.config.horizon_steps {
        return Err(Error::DimensionMismatch(format!(
            "run files hold {} buildings x {} steps but the manifest says {} x {}",
            report.temps.len(),
            report.len(),
            manifest.config.n_buildings,
            manifest.config.horizon_steps
        )));
    }
    let summary = finish_report(&report, &manifest.config, &args.out)?;
    Ok(Outcome {
        message: summary.to_string(),
        infeasible_steps: summary.infeasible_steps,
        strict: args.strict,
        summary: Some(summary),
    })
}

fn finish_report(report: &RunReport, config: &ScenarioConfig, dir: &Path) -> Result<Summary> {
    let params = config.dp_params()?;
    let summary = Summary::from_report(report, &params, (config.mpc.comfort_min, config.mpc.comfort_max));
    summary.save(&dir.join(SUMMARY_CSV))?;
    write_plot_data(report, dir)?;
    Ok(summary)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("dppv").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn parses_overrides() {
        let cli = parse(&[
            "simulate",
            "--seed",
            "7",
            "--epsilon",
            "0.5",
            "--solver",
            "exact",
            "--horizon",
            "3",
            "--strict",
        ]);
        let Command::Simulate(args) = cli.command else {
            panic!("wrong subcommand")
        };
        let config = resolve_config(&args).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.dp.epsilon, 0.5);
        assert_eq!(config.solver, SolverChoice::Exact);
        assert_eq!(config.mpc.horizon_np, 3);
        assert!(args.strict);
    }

    #[test]
    fn rejects_unknown_solver_and_bad_epsilon() {
        assert!(Cli::try_parse_from(["dppv", "simulate", "--solver", "milp"]).is_err());
        let Command::Noise(args) = parse(&["noise", "--epsilon=-1"]).command else {
            panic!("wrong subcommand")
        };
        assert!(resolve_config(&args).is_err());
    }

    #[test]
    fn exact_guard_fires_before_any_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut args = RunArgs::new(dir.path().join("run"));
        args.solver = Some(SolverChoice::Exact);
        let err = run_simulate(&args).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_SOLVER_GUARD);
        assert!(!dir.path().join("run").exists());
    }

    #[test]
    fn strict_exit_code() {
        let outcome = Outcome {
            message: String::new(),
            infeasible_steps: 2,
            strict: true,
            summary: None,
        };
        assert_eq!(outcome.exit_code(), EXIT_INFEASIBLE);
        assert_eq!(
            Outcome {
                strict: false,
                ..outcome
            }
            .exit_code(),
            EXIT_OK
        );
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let config = ScenarioConfig {
            n_buildings: 3,
            ..Default::default()
        };
        let m = Manifest::new("simulate", &config);
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn report_on_empty_dir_names_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_report(&ReportArgs {
            out: dir.path().to_path_buf(),
            strict: false,
        })
        .unwrap_err();
        assert!(err.to_string().contains(MANIFEST_TOML), "{err}");
    }
}
