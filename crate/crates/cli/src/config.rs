//! Run configuration: a TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use semiql::simulation::{Estimator, SimDesign};
use semiql::{Bandwidth, FitOptions, LinkName, Procedure, VarianceName};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Fit,
    Simulate,
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }

    pub fn other(self) -> Format {
        match self {
            Format::Json => Format::Csv,
            Format::Csv => Format::Json,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    #[serde(flatten)]
    pub design: SimDesign,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<Estimator>,
}

fn all_estimators() -> Vec<Estimator> {
    Estimator::ALL.to_vec()
}

/// Everything a run needs. Paths and the worker setting are left out of
/// reports so that output depends only on the data and the statistical settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    #[serde(skip_serializing)]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
    pub format: Format,
    pub link: Option<LinkName>,
    pub variance: VarianceName,
    pub procedure: Procedure,
    pub options: FitOptions,
    #[serde(skip_serializing)]
    pub parallel: bool,
    pub simulation: Option<SimulationConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            input: None,
            output: None,
            format: Format::Json,
            link: None,
            variance: VarianceName::Constant,
            procedure: Procedure::Two,
            options: FitOptions::default(),
            parallel: true,
            simulation: None,
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.input, &mut config.output]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn mode(&self) -> Result<Mode> {
        self.mode.ok_or_else(|| {
            CliError::Usage("no mode given (use --mode or `mode` in the config)".into())
        })
    }

    pub fn link(&self) -> Result<LinkName> {
        self.link.ok_or_else(|| {
            CliError::Usage("no link given (use --link or `link` in the config)".into())
        })
    }

    pub fn input(&self) -> Result<&Path> {
        self.input.as_deref().ok_or_else(|| {
            CliError::Usage("no input file given (use --input or `input` in the config)".into())
        })
    }

    pub fn simulation(&self) -> Result<&SimulationConfig> {
        self.simulation.as_ref().ok_or_else(|| {
            CliError::Usage("simulate mode needs a [simulation] table in the config".into())
        })
    }
}

/// `auto`, `auto:<multiplier>` or a fixed positive bandwidth.
pub fn parse_bandwidth(s: &str) -> std::result::Result<Bandwidth, String> {
    let number = |v: &str| -> std::result::Result<f64, String> {
        let x = f64::from_str(v).map_err(|_| format!("'{v}' is not a number"))?;
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            Err(format!("bandwidth value {x} must be positive"))
        }
    };
    match s.split_once(':') {
        None if s == "auto" => Ok(Bandwidth::Auto(1.0)),
        Some(("auto", m)) => number(m).map(Bandwidth::Auto),
        None => number(s).map(Bandwidth::Fixed),
        Some(_) => Err(format!(
            "bad bandwidth '{s}' (expected auto, auto:<multiplier> or a number)"
        )),
    }
}
