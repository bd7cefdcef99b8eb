//! Resolved run settings, written as a comment header on every output file.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use smc_core::{Backend, Result, SmcError};

pub const WORKERS_ENV: &str = "SMC_WORKERS";

/// `seq`, `pool` or `pool:k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendSpec {
    Seq,
    Pool(Option<usize>),
}

impl FromStr for BackendSpec {
    type Err = SmcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "seq" => Ok(BackendSpec::Seq),
            None if s == "pool" => Ok(BackendSpec::Pool(None)),
            Some(("pool", k)) => match k.parse::<usize>() {
                Ok(k) if k > 0 => Ok(BackendSpec::Pool(Some(k))),
                _ => Err(SmcError::InvalidParameter(format!("bad worker count `{k}`"))),
            },
            _ => Err(SmcError::InvalidParameter(format!(
                "unknown backend `{s}` (expected seq, pool or pool:k)"
            ))),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Seq => write!(f, "seq"),
            BackendSpec::Pool(None) => write!(f, "pool"),
            BackendSpec::Pool(Some(k)) => write!(f, "pool:{k}"),
        }
    }
}

impl BackendSpec {
    /// Fills in the worker count from `SMC_WORKERS`, else the number of
    /// available cores.
    pub fn resolved(self) -> Result<BackendSpec> {
        match self {
            BackendSpec::Pool(None) => Ok(BackendSpec::Pool(Some(default_workers()?))),
            spec => Ok(spec),
        }
    }

    pub fn build(self) -> Result<Backend> {
        match self.resolved()? {
            BackendSpec::Seq => Ok(Backend::Sequential),
            BackendSpec::Pool(k) => Backend::thread_pool(k.unwrap_or(1)),
        }
    }
}

pub fn default_workers() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k > 0 => Ok(k),
            _ => Err(SmcError::InvalidParameter(format!("{WORKERS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Everything that determines the content of an output file. The output
/// path is deliberately absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub seed: u64,
    pub particles: usize,
    pub iterations: usize,
    pub backend: String,
    pub scheme: String,
    pub threshold: f64,
    pub data: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmm: Option<GmmKnobs>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmKnobs {
    pub components: usize,
    pub anneal: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl RunConfig {
    /// The config as `# `-prefixed TOML lines.
    pub fn header(&self) -> Result<String> {
        let text = toml::to_string(self).map_err(|e| SmcError::InvalidParameter(e.to_string()))?;
        Ok(comment_lines(&text))
    }

    /// Reads the config back from the leading comment lines of `text`.
    pub fn from_header(text: &str) -> Result<Self> {
        let body: String = text
            .lines()
            .map_while(|l| l.strip_prefix('#'))
            .map(|l| format!("{}\n", l.strip_prefix(' ').unwrap_or(l)))
            .collect();
        if body.trim().is_empty() {
            return Err(SmcError::InvalidParameter("file has no config header".into()));
        }
        toml::from_str(&body).map_err(|e| SmcError::InvalidParameter(format!("bad config header: {e}")))
    }
}

pub fn comment_lines(text: &str) -> String {
    text.lines().map(|l| if l.is_empty() { "#\n".to_string() } else { format!("# {l}\n") }).collect()
}
