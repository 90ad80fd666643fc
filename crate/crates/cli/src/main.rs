//! Batch front end: fit a model to a CSV file, compare estimators on one
//! dataset, or run a Monte Carlo study from a config file.

mod config;
mod data;
mod error;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use log::info;
use semiql::simulation::run_monte_carlo;
use semiql::{
    asymptotic_report, spec_from_names, LinkName, Procedure, SchemeKind, Trimming, VarianceName,
};
use serde::Serialize;

use config::{Format, Mode, RunConfig};
use error::{model_exit_code, CliError, Result, EXIT_ESTIMATION};
use report::{
    AsymptoticsBlock, CompareBody, DataInfo, ErrorInfo, EstimateBlock, EstimatorEntry, FitBlock,
    FitBody, Report, SimulateBody,
};

#[derive(Parser, Debug)]
#[command(
    version,
    about = "Two-stage semiparametric quasi-likelihood estimation"
)]
struct Cli {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// CSV with a header row; the last column is the response.
    #[arg(long)]
    input: Option<PathBuf>,
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report path (standard output when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Seed of the simulation study.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["roc", "polar"])]
    scheme: Option<String>,
    /// `auto`, `auto:<multiplier>` or a fixed bandwidth.
    #[arg(long, value_parser = config::parse_bandwidth)]
    bandwidth: Option<semiql::Bandwidth>,
    /// Share of observations trimmed by the density-statistic quantile rule.
    #[arg(long)]
    trim_q: Option<f64>,
    #[arg(long, value_parser = ["identity", "exp", "logistic-mean"])]
    link: Option<String>,
    #[arg(long, value_parser = ["constant", "mean-variance", "unknown-of-index"])]
    variance: Option<String>,
    #[arg(long, value_parser = ["one", "two"])]
    procedure: Option<String>,
    /// Run simulation replicates on one thread.
    #[arg(long)]
    serial: bool,
}

impl Cli {
    fn into_config(self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(mode) = self.mode {
            config.mode = Some(mode);
        }
        if let Some(input) = self.input {
            config.input = Some(input);
        }
        if let Some(out) = self.out {
            config.output = Some(out);
        }
        if let Some(format) = self.format {
            config.format = format;
        }
        if let Some(scheme) = self.scheme {
            config.options.scheme = scheme.parse::<SchemeKind>()?;
        }
        if let Some(h) = self.bandwidth {
            config.options.smoother.bandwidth = h;
        }
        if let Some(q) = self.trim_q {
            config.options.smoother.trimming = Trimming::Quantile(q);
        }
        if let Some(link) = self.link {
            let link = link.parse::<LinkName>()?;
            config.link = Some(link);
            if let Some(sim) = config.simulation.as_mut() {
                sim.design.link = link;
            }
        }
        if let Some(variance) = self.variance {
            let variance = variance.parse::<VarianceName>()?;
            config.variance = variance;
            if let Some(sim) = config.simulation.as_mut() {
                sim.design.variance = variance;
            }
        }
        if let Some(procedure) = self.procedure.as_deref() {
            config.procedure = if procedure == "one" {
                Procedure::One
            } else {
                Procedure::Two
            };
        }
        if let Some(seed) = self.seed {
            if let Some(sim) = config.simulation.as_mut() {
                sim.design.seed = seed;
            }
        }
        if self.serial {
            config.parallel = false;
        }
        config.options.smoother.validate()?;
        config.options.solver.validate()?;
        Ok(config)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors share the input-error exit code; help and version exit 0.
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                error::EXIT_INPUT as u8
            } else {
                0
            });
        }
    };
    let code = match cli.into_config().and_then(|config| run(&config)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

/// Runs the configured mode. Errors before a report exists are returned;
/// estimation failures write a report and yield exit code 2.
fn run(config: &RunConfig) -> Result<i32> {
    match config.mode()? {
        Mode::Fit => cmd_fit(config),
        Mode::Compare => cmd_compare(config),
        Mode::Simulate => cmd_simulate(config),
    }
}

/// Splits a library error into an estimation failure (reported) or an input error.
fn estimation_failure(e: semiql::Error) -> Result<ErrorInfo> {
    if model_exit_code(&e) == EXIT_ESTIMATION {
        Ok(ErrorInfo::from(&e))
    } else {
        Err(e.into())
    }
}

fn cmd_fit(config: &RunConfig) -> Result<i32> {
    let table = data::read_dataset(config.input()?)?;
    let spec = spec_from_names(config.link()?, config.variance);
    let kernel = config.options.smoother.kernel;
    let mut body = FitBody {
        data: DataInfo::new(&table),
        fit: None,
        estimate: None,
        asymptotics: None,
    };
    let failure = match semiql::fit(&table.dataset, &spec, config.procedure, &config.options) {
        Ok(fit) => {
            body.fit = Some(FitBlock::new(&fit));
            match asymptotic_report(&table.dataset, &spec, &fit, kernel) {
                Ok(r) => {
                    body.estimate = Some(EstimateBlock::procedure(&fit, &r));
                    body.asymptotics = Some(AsymptoticsBlock::new(&r));
                    None
                }
                Err(e) => Some(estimation_failure(e)?),
            }
        }
        Err(e) => Some(estimation_failure(e)?),
    };
    let csv = body
        .estimate
        .as_ref()
        .map(|b| report::coefficients_csv(&table.predictors, &[b]))
        .unwrap_or_default();
    finish(config, Mode::Fit, body, failure, csv)
}

fn cmd_compare(config: &RunConfig) -> Result<i32> {
    let table = data::read_dataset(config.input()?)?;
    let spec = spec_from_names(config.link()?, config.variance);
    let kernel = config.options.smoother.kernel;
    let mut body = CompareBody {
        data: DataInfo::new(&table),
        fit: None,
        estimators: Vec::new(),
        asymptotics: None,
    };
    let failure = match semiql::estimators::fit_both(&table.dataset, &spec, &config.options) {
        Ok((one, two)) => {
            body.fit = Some(FitBlock::new(&one));
            match asymptotic_report(&table.dataset, &spec, &one, kernel) {
                Ok(r) => {
                    body.estimators
                        .push(EstimatorEntry::Estimate(EstimateBlock::classical(
                            &one.beta_initial,
                            &r,
                        )));
                    body.estimators
                        .push(EstimatorEntry::Estimate(EstimateBlock::procedure(&one, &r)));
                    let scale_failure = match two {
                        Ok(two) => {
                            body.estimators
                                .push(EstimatorEntry::Estimate(EstimateBlock::procedure(&two, &r)));
                            None
                        }
                        Err(e) => {
                            let info = estimation_failure(e)?;
                            body.estimators.push(EstimatorEntry::Failed {
                                estimator: "procedure-two",
                                error: info.clone(),
                            });
                            Some(info)
                        }
                    };
                    body.asymptotics = Some(AsymptoticsBlock::new(&r));
                    scale_failure
                }
                Err(e) => Some(estimation_failure(e)?),
            }
        }
        Err(e) => Some(estimation_failure(e)?),
    };
    let blocks: Vec<&EstimateBlock> = body
        .estimators
        .iter()
        .filter_map(|e| match e {
            EstimatorEntry::Estimate(b) => Some(b),
            EstimatorEntry::Failed { .. } => None,
        })
        .collect();
    let csv = report::coefficients_csv(&table.predictors, &blocks);
    finish(config, Mode::Compare, body, failure, csv)
}

fn cmd_simulate(config: &RunConfig) -> Result<i32> {
    let sim = config.simulation()?;
    info!(
        "simulating {} replicates of n = {}, p = {}",
        sim.design.replications, sim.design.n, sim.design.p
    );
    let summary = run_monte_carlo(
        &sim.design,
        &sim.estimators,
        &config.options,
        config.parallel,
    )?;
    let csv = report::simulation_csv(&summary);
    let json = to_json(&Report::new(
        Mode::Simulate,
        config,
        SimulateBody { summary: &summary },
        None,
    ))?;
    match &config.output {
        Some(path) => {
            let (main, other) = match config.format {
                Format::Json => (json, csv),
                Format::Csv => (csv, json),
            };
            write_file(path, &main)?;
            write_file(&companion(path, config.format.other()), &other)?;
        }
        None => emit(config, &json, &csv)?,
    }
    Ok(0)
}

/// Path of the second output of a simulation run: the report path with the
/// other format's extension.
fn companion(path: &Path, format: Format) -> PathBuf {
    let swapped = path.with_extension(format.extension());
    if swapped == path {
        let mut name = path.as_os_str().to_owned();
        name.push(".");
        name.push(format.extension());
        PathBuf::from(name)
    } else {
        swapped
    }
}

fn finish<B: Serialize>(
    config: &RunConfig,
    mode: Mode,
    body: B,
    failure: Option<ErrorInfo>,
    csv: String,
) -> Result<i32> {
    let code = if failure.is_some() {
        EXIT_ESTIMATION
    } else {
        0
    };
    if let Some(f) = &failure {
        eprintln!("error: {}", f.message);
    }
    let csv = match &failure {
        None => csv,
        Some(f) => failure_csv(&f.message)?,
    };
    let json = to_json(&Report::new(mode, config, body, failure))?;
    match &config.output {
        Some(path) => write_file(
            path,
            match config.format {
                Format::Json => &json,
                Format::Csv => &csv,
            },
        )?,
        None => emit(config, &json, &csv)?,
    }
    Ok(code)
}

fn failure_csv(message: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["status", "error"])
        .and_then(|_| w.write_record(["failed", message]))
        .map_err(|e| CliError::Serialize(e.to_string()))?;
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Serialize(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Serialize(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn emit(config: &RunConfig, json: &str, csv: &str) -> Result<()> {
    let text = match config.format {
        Format::Json => json,
        Format::Csv => csv,
    };
    std::io::stdout()
        .write_all(text.as_bytes())
        .map_err(|source| CliError::Write {
            path: PathBuf::from("<stdout>"),
            source,
        })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}
