//! The `smc` command line tool: runs the particle filter and the mixture
//! sampler, generates data and times the backends.

pub mod bench;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use smc_core::sampler::format_real;
use smc_core::{Backend, ResampleScheme, Result, SmcError};
use smc_models::anneal::AnnealKind;
use smc_models::data::parse_rows;
use smc_models::gmm::{self, GmmConfig, GmmPrior};
use smc_models::pf::{self, CvData};

use crate::bench::{bench, BenchSettings};
use crate::config::{comment_lines, BackendSpec, GmmKnobs, RunConfig};

/// Observation file used by `pf` when `--data` is not given.
pub const BUILTIN_PF_DATA: &str = include_str!("../data/pf.data");

#[derive(Debug, Parser)]
#[command(name = "smc", version, about = "Sequential Monte Carlo examples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Particle filter for the almost constant velocity model
    Pf(PfArgs),
    /// Annealed SMC for a Gaussian mixture; prints both log normalizing constant estimates
    Gmm(GmmArgs),
    /// Time the mixture sampler across particle counts and backends
    Bench(BenchArgs),
    /// Simulate an observation file
    Generate(GenerateArgs),
    /// Repeat the run recorded in the header of an output file
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// seq, pool or pool:k; pool without k reads SMC_WORKERS, else uses all cores
    #[arg(long, default_value = "seq")]
    pub backend: BackendSpec,
    /// multinomial, residual, stratified or systematic
    #[arg(long, default_value = "stratified")]
    pub scheme: ResampleScheme,
    /// Resample when ESS/N falls below this
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct PfArgs {
    /// Observation file, `builtin` for the shipped data, or `simulate`
    #[arg(long, default_value = "builtin")]
    pub data: String,
    #[arg(long, default_value_t = 1000)]
    pub particles: usize,
    /// Seed for `--data simulate`
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
    /// Time steps for `--data simulate`
    #[arg(long, default_value_t = pf::DATA_NUM)]
    pub data_size: usize,
    #[command(flatten)]
    pub run: RunArgs,
    /// Output table, `-` for stdout
    #[arg(long, default_value = "pf.est")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GmmArgs {
    #[arg(long, default_value_t = 4)]
    pub components: usize,
    #[arg(long, default_value_t = 8192)]
    pub particles: usize,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// linear, prior (power 2) or prior:p
    #[arg(long, default_value = "prior:2")]
    pub anneal: AnnealKind,
    /// Observation file (one value per line) or `simulate`
    #[arg(long, default_value = "simulate")]
    pub data: String,
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 100)]
    pub data_size: usize,
    /// Prior mean of the component means (default: data midrange)
    #[arg(long)]
    pub xi: Option<f64>,
    /// Prior precision of the component means (default: 1/range^2)
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Gamma shape of the precisions (default: 2)
    #[arg(long)]
    pub nu: Option<f64>,
    /// Gamma scale of the precisions (default: 50/range^2)
    #[arg(long)]
    pub chi: Option<f64>,
    /// Dirichlet parameter of the weights (default: 1)
    #[arg(long)]
    pub rho: Option<f64>,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "gmm.est")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 3)]
    pub log2_min: u32,
    #[arg(long, default_value_t = 17)]
    pub log2_max: u32,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 4)]
    pub components: usize,
    /// Comma separated backends; seq is always included
    #[arg(long, value_delimiter = ',', default_value = "seq,pool")]
    pub backends: Vec<BackendSpec>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
    #[arg(long, default_value = "bench.tsv")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Pf,
    Gmm,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub model: Model,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of observations (default 100)
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Observation file; the particle filter truth goes to `<out>.truth`
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub file: PathBuf,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<SmcError> for Failure {
    fn from(e: SmcError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `args` (including the program name) and runs. Returns the exit
/// code: 0 success, 1 usage error, 2 runtime failure.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Pf(a) => {
            let config = pf_config(&a)?;
            execute(&config, &a.out, out)
        }
        Command::Gmm(a) => {
            let config = gmm_config(&a)?;
            execute(&config, &a.out, out)
        }
        Command::Bench(a) => run_bench(&a, err),
        Command::Generate(a) => generate(&a),
        Command::Rerun(a) => {
            let text = fs::read_to_string(&a.file).map_err(|e| Failure::Runtime(format!("{}: {e}", a.file.display())))?;
            let config = RunConfig::from_header(&text)?;
            validate(&config)?;
            execute(&config, &a.out, out)
        }
    }
}

fn resolved_backend(spec: BackendSpec) -> Result<String, Failure> {
    Ok(spec.resolved().map_err(|e| usage(e.to_string()))?.to_string())
}

fn pf_config(a: &PfArgs) -> Result<RunConfig, Failure> {
    let simulated = a.data == "simulate";
    let config = RunConfig {
        subcommand: "pf".into(),
        seed: a.run.seed,
        particles: a.particles,
        iterations: 0,
        backend: resolved_backend(a.run.backend)?,
        scheme: a.run.scheme.to_string(),
        threshold: a.run.threshold,
        data: a.data.clone(),
        data_seed: simulated.then_some(a.data_seed),
        data_size: simulated.then_some(a.data_size),
        gmm: None,
    };
    validate(&config)?;
    Ok(config)
}

fn gmm_config(a: &GmmArgs) -> Result<RunConfig, Failure> {
    let simulated = a.data == "simulate";
    let config = RunConfig {
        subcommand: "gmm".into(),
        seed: a.run.seed,
        particles: a.particles,
        iterations: a.iters,
        backend: resolved_backend(a.run.backend)?,
        scheme: a.run.scheme.to_string(),
        threshold: a.run.threshold,
        data: a.data.clone(),
        data_seed: simulated.then_some(a.data_seed),
        data_size: simulated.then_some(a.data_size),
        gmm: Some(GmmKnobs {
            components: a.components,
            anneal: a.anneal.to_string(),
            xi: a.xi,
            kappa: a.kappa,
            nu: a.nu,
            chi: a.chi,
            rho: a.rho,
        }),
    };
    validate(&config)?;
    Ok(config)
}

fn validate(c: &RunConfig) -> Result<(), Failure> {
    if c.particles == 0 {
        return Err(usage("--particles must be at least 1"));
    }
    if c.threshold.is_nan() {
        return Err(usage("--threshold must be a number"));
    }
    c.backend.parse::<BackendSpec>().map_err(|e| usage(e.to_string()))?;
    c.scheme.parse::<ResampleScheme>().map_err(|e| usage(e.to_string()))?;
    if c.data_size == Some(0) {
        return Err(usage("--data-size must be at least 1"));
    }
    match (c.subcommand.as_str(), &c.gmm) {
        ("pf", None) => Ok(()),
        ("gmm", Some(g)) => {
            if g.components == 0 {
                return Err(usage("--components must be at least 1"));
            }
            if c.iterations == 0 {
                return Err(usage("--iters must be at least 1"));
            }
            g.anneal.parse::<AnnealKind>().map_err(|e| usage(e.to_string()))?;
            for (name, v) in [("kappa", g.kappa), ("nu", g.nu), ("chi", g.chi), ("rho", g.rho)] {
                if let Some(v) = v {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(usage(format!("--{name} must be positive")));
                    }
                }
            }
            if matches!(g.xi, Some(x) if !x.is_finite()) {
                return Err(usage("--xi must be finite"));
            }
            Ok(())
        }
        (s, _) => Err(usage(format!("unknown subcommand `{s}` in config"))),
    }
}

fn pf_data(c: &RunConfig) -> Result<CvData> {
    let rows = match c.data.as_str() {
        "builtin" => parse_rows(BUILTIN_PF_DATA, 2)?,
        "simulate" => {
            let sim = pf::simulate(c.data_seed.unwrap_or(1), c.data_size.unwrap_or(pf::DATA_NUM))?;
            return Ok(sim.data);
        }
        path => return CvData::load(Path::new(path)),
    };
    Ok(CvData {
        x_obs: rows.iter().map(|r| r[0]).collect(),
        y_obs: rows.iter().map(|r| r[1]).collect(),
    })
}

fn gmm_data(c: &RunConfig) -> Result<Vec<f64>> {
    match c.data.as_str() {
        "simulate" => Ok(gmm::simulate(c.data_seed.unwrap_or(1), c.data_size.unwrap_or(100))),
        path => gmm::load_observations(Path::new(path)),
    }
}

/// Prior from the data with any explicitly given hyperparameter replaced.
fn gmm_prior(g: &GmmKnobs, obs: &[f64]) -> Result<Option<GmmPrior>> {
    if [g.xi, g.kappa, g.nu, g.chi, g.rho].iter().all(Option::is_none) {
        return Ok(None);
    }
    let base = GmmPrior::from_data(obs)?;
    Ok(Some(GmmPrior {
        xi: g.xi.unwrap_or(base.xi),
        kappa: g.kappa.unwrap_or(base.kappa),
        nu: g.nu.unwrap_or(base.nu),
        chi: g.chi.unwrap_or(base.chi),
        rho: g.rho.unwrap_or(base.rho),
    }))
}

/// Estimates printed on stdout by `gmm`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSummary {
    pub ds_log_zconst: f64,
    pub ps_log_zconst: f64,
}

/// Runs `config` and returns the complete output file, header included.
pub fn run_config(config: &RunConfig) -> Result<(String, Option<RunSummary>)> {
    let backend: Backend = config.backend.parse::<BackendSpec>()?.build()?;
    let scheme: ResampleScheme = config.scheme.parse()?;
    let mut config = config.clone();
    let mut table = Vec::new();
    let mut summary = None;
    match &config.gmm {
        None => {
            let data = pf_data(&config)?;
            config.iterations = data.len().saturating_sub(1);
            let s = pf::run_filter(data, config.particles, scheme, config.threshold, config.seed, &backend)?;
            s.write_tsv(&mut table)?;
        }
        Some(g) => {
            let obs = gmm_data(&config)?;
            let kind: AnnealKind = g.anneal.parse()?;
            let gc = GmmConfig {
                comp_num: g.components,
                particles: config.particles,
                schedule: kind.schedule(config.iterations),
                scheme,
                threshold: config.threshold,
                seed: config.seed,
                prior: gmm_prior(g, &obs)?,
            };
            let s = gmm::run_gmm(&gc, obs, &backend)?;
            let z = gmm::log_zconst(&s)?;
            summary = Some(RunSummary {
                ds_log_zconst: z.ds,
                ps_log_zconst: z.ps,
            });
            s.write_tsv(&mut table)?;
        }
    }
    let table = String::from_utf8(table).expect("tables are ASCII");
    Ok((format!("{}{table}", config.header()?), summary))
}

fn write_output(path: &Path, text: &str, out: &mut dyn Write) -> Result<()> {
    if path == Path::new("-") {
        out.write_all(text.as_bytes())?;
    } else {
        fs::write(path, text).map_err(|e| SmcError::InvalidParameter(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn execute(config: &RunConfig, path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let (text, summary) = run_config(config)?;
    write_output(path, &text, out)?;
    if let Some(z) = summary {
        writeln!(out, "ds_log_zconst\t{}", format_real(z.ds_log_zconst)).map_err(SmcError::from)?;
        writeln!(out, "ps_log_zconst\t{}", format_real(z.ps_log_zconst)).map_err(SmcError::from)?;
    }
    Ok(())
}

fn run_bench(a: &BenchArgs, err: &mut dyn Write) -> Result<(), Failure> {
    if a.reps == 0 || a.iters == 0 || a.components == 0 || a.log2_min > a.log2_max || a.log2_max > 30 {
        return Err(usage("need reps, iters, components >= 1 and log2-min <= log2-max <= 30"));
    }
    let mut backends = Vec::new();
    for spec in &a.backends {
        let spec = spec.resolved().map_err(|e| usage(e.to_string()))?;
        backends.push((spec.to_string(), spec.build()?));
    }
    let settings = BenchSettings {
        log2_min: a.log2_min,
        log2_max: a.log2_max,
        reps: a.reps,
        iters: a.iters,
        components: a.components,
        seed: a.seed,
    };
    let obs = gmm::simulate(a.data_seed, 100);
    let report = bench(&settings, &obs, &backends)?;
    let names: Vec<&str> = backends.iter().map(|(n, _)| n.as_str()).collect();
    let header = format!(
        "subcommand = \"bench\"\nseed = {}\ndata_seed = {}\niterations = {}\ncomponents = {}\nreps = {}\nlog2_min = {}\nlog2_max = {}\nbackends = {:?}\n",
        a.seed, a.data_seed, a.iters, a.components, a.reps, a.log2_min, a.log2_max, names
    );
    let text = format!("{}{}", comment_lines(&header), report.to_tsv());
    write_output(&a.out, &text, err)?;
    Ok(())
}

fn generate(a: &GenerateArgs) -> Result<(), Failure> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    match a.model {
        Model::Pf => pf::simulate(a.seed, a.n)?.save(&a.out)?,
        Model::Gmm => gmm::save_observations(&a.out, &gmm::simulate(a.seed, a.n))?,
    }
    Ok(())
}
