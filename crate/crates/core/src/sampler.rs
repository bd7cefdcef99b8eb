//! The sampler: operation queues, adaptive resampling, monitors, path
//! sampling and the iteration history.

use std::any::Any;
use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Result, SmcError};
use crate::estimate::{weighted_sum, MonitorRecord, PathRecord};
use crate::particle::{Particle, DEFAULT_SEED};
use crate::resample::ResampleScheme;
use crate::state::Value;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Initializes the particle system; returns an acceptance count.
pub trait InitOp<T>: Send {
    fn initialize(&mut self, particle: &mut Particle<T>, param: Option<&dyn Any>) -> Result<usize>;
}

impl<T, F> InitOp<T> for F
where
    F: FnMut(&mut Particle<T>, Option<&dyn Any>) -> Result<usize> + Send,
{
    fn initialize(&mut self, particle: &mut Particle<T>, param: Option<&dyn Any>) -> Result<usize> {
        self(particle, param)
    }
}

/// A move or MCMC step; returns an acceptance count.
pub trait MoveOp<T>: Send {
    fn apply(&mut self, iter: usize, particle: &mut Particle<T>) -> Result<usize>;
}

impl<T, F> MoveOp<T> for F
where
    F: FnMut(usize, &mut Particle<T>) -> Result<usize> + Send,
{
    fn apply(&mut self, iter: usize, particle: &mut Particle<T>) -> Result<usize> {
        self(iter, particle)
    }
}

/// Writes `h(X_i)` for every particle into `res`, row-major `N x dim`.
pub trait MonitorEval<T>: Send {
    fn eval(&mut self, iter: usize, dim: usize, particle: &Particle<T>, res: &mut [f64]) -> Result<()>;
}

impl<T, F> MonitorEval<T> for F
where
    F: FnMut(usize, usize, &Particle<T>, &mut [f64]) -> Result<()> + Send,
{
    fn eval(&mut self, iter: usize, dim: usize, particle: &Particle<T>, res: &mut [f64]) -> Result<()> {
        self(iter, dim, particle, res)
    }
}

/// Writes the path sampling integrand of every particle into `res` and
/// returns the grid point `alpha_t`.
pub trait PathEval<T>: Send {
    fn eval(&mut self, iter: usize, particle: &Particle<T>, res: &mut [f64]) -> Result<f64>;
}

impl<T, F> PathEval<T> for F
where
    F: FnMut(usize, &Particle<T>, &mut [f64]) -> Result<f64> + Send,
{
    fn eval(&mut self, iter: usize, particle: &Particle<T>, res: &mut [f64]) -> Result<f64> {
        self(iter, particle, res)
    }
}

/// One row of the sampler history.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// ESS / N before any resampling in this iteration.
    pub ess_over_n: f64,
    pub resampled: bool,
    /// Acceptance counts, init or moves first and then mcmc steps.
    pub accept: Vec<usize>,
}

struct Monitor<T> {
    eval: Box<dyn MonitorEval<T>>,
    buffer: Vec<f64>,
    estimate: Vec<f64>,
    record: MonitorRecord,
}

struct Path<T> {
    eval: Box<dyn PathEval<T>>,
    buffer: Vec<f64>,
    record: PathRecord,
}

pub struct Sampler<T> {
    particle: Particle<T>,
    threshold: f64,
    init: Option<Box<dyn InitOp<T>>>,
    moves: Vec<Box<dyn MoveOp<T>>>,
    mcmcs: Vec<Box<dyn MoveOp<T>>>,
    monitors: BTreeMap<String, Monitor<T>>,
    path: Option<Path<T>>,
    history: Vec<IterationRecord>,
    iter: usize,
    initialized: bool,
}

impl<T: Value> Sampler<T> {
    /// `n` particles, stratified resampling, threshold 0.5.
    pub fn new(n: usize) -> Result<Self> {
        Self::with_options(n, ResampleScheme::default(), DEFAULT_THRESHOLD, DEFAULT_SEED)
    }

    pub fn with_options(n: usize, scheme: ResampleScheme, threshold: f64, seed: u64) -> Result<Self> {
        Ok(Self::from_particle(Particle::new(n, scheme, seed)?, threshold))
    }

    pub fn from_particle(particle: Particle<T>, threshold: f64) -> Self {
        Sampler {
            particle,
            threshold,
            init: None,
            moves: Vec::new(),
            mcmcs: Vec::new(),
            monitors: BTreeMap::new(),
            path: None,
            history: Vec::new(),
            iter: 0,
            initialized: false,
        }
    }

    pub fn size(&self) -> usize {
        self.particle.size()
    }

    pub fn particle(&self) -> &Particle<T> {
        &self.particle
    }

    pub fn particle_mut(&mut self) -> &mut Particle<T> {
        &mut self.particle
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) -> &mut Self {
        self.threshold = threshold;
        self
    }

    pub fn set_init(&mut self, op: impl InitOp<T> + 'static) -> &mut Self {
        self.init = Some(Box::new(op));
        self
    }

    /// Appends to the move queue, or replaces it when `append` is false.
    pub fn add_move(&mut self, op: impl MoveOp<T> + 'static, append: bool) -> &mut Self {
        if !append {
            self.moves.clear();
        }
        self.moves.push(Box::new(op));
        self
    }

    /// Appends to the mcmc queue, or replaces it when `append` is false.
    pub fn add_mcmc(&mut self, op: impl MoveOp<T> + 'static, append: bool) -> &mut Self {
        if !append {
            self.mcmcs.clear();
        }
        self.mcmcs.push(Box::new(op));
        self
    }

    pub fn move_queue_len(&self) -> usize {
        self.moves.len()
    }

    pub fn mcmc_queue_len(&self) -> usize {
        self.mcmcs.len()
    }

    /// Adds or replaces the monitor `name` of dimension `dim`.
    pub fn set_monitor(
        &mut self,
        name: &str,
        dim: usize,
        eval: impl MonitorEval<T> + 'static,
    ) -> Result<&mut Self> {
        if dim == 0 {
            return Err(SmcError::InvalidParameter(format!(
                "monitor {name} must have positive dimension"
            )));
        }
        if name.is_empty() || name.contains(|c: char| c.is_whitespace()) {
            return Err(SmcError::InvalidParameter(format!(
                "invalid monitor name {name:?}"
            )));
        }
        let n = self.size();
        self.monitors.insert(
            name.to_string(),
            Monitor {
                eval: Box::new(eval),
                buffer: vec![0.0; n * dim],
                estimate: vec![0.0; dim],
                record: MonitorRecord::new(dim),
            },
        );
        Ok(self)
    }

    pub fn set_path(&mut self, eval: impl PathEval<T> + 'static) -> &mut Self {
        self.path = Some(Path {
            eval: Box::new(eval),
            buffer: vec![0.0; self.size()],
            record: PathRecord::new(),
        });
        self
    }

    /// Resets the history, runs the init op with `param`, then applies the
    /// resampling rule and records iteration 0.
    pub fn initialize(&mut self, param: Option<&dyn Any>) -> Result<()> {
        self.initialized = false;
        self.iter = 0;
        self.history.clear();
        for m in self.monitors.values_mut() {
            m.record.clear();
        }
        if let Some(p) = self.path.as_mut() {
            p.record.clear();
        }
        let init = self.init.as_mut().ok_or(SmcError::MissingInit)?;
        let accept = init.initialize(&mut self.particle, param)?;
        let (ess_over_n, resampled) = self.resample()?;
        self.record(ess_over_n, resampled, vec![accept])?;
        self.initialized = true;
        Ok(())
    }

    /// Runs `n` iterations.
    pub fn iterate(&mut self, n: usize) -> Result<()> {
        if !self.initialized {
            return Err(SmcError::NotInitialized);
        }
        for _ in 0..n {
            self.iter += 1;
            let iter = self.iter;
            let mut accept = Vec::with_capacity(self.moves.len() + self.mcmcs.len());
            for op in self.moves.iter_mut() {
                accept.push(op.apply(iter, &mut self.particle)?);
            }
            let (ess_over_n, resampled) = self.resample()?;
            for op in self.mcmcs.iter_mut() {
                accept.push(op.apply(iter, &mut self.particle)?);
            }
            self.record(ess_over_n, resampled, accept)?;
        }
        Ok(())
    }

    fn resample(&mut self) -> Result<(f64, bool)> {
        let ess_over_n = self.particle.weight_set().ess() / self.size() as f64;
        let resampled = self.particle.resample(self.threshold)?;
        Ok((ess_over_n, resampled))
    }

    fn record(&mut self, ess_over_n: f64, resampled: bool, accept: Vec<usize>) -> Result<()> {
        let iter = self.iter;
        let weights = self.particle.weight_set().weight();
        for m in self.monitors.values_mut() {
            let dim = m.record.dim();
            m.eval.eval(iter, dim, &self.particle, &mut m.buffer)?;
            weighted_sum(weights, &m.buffer, dim, &mut m.estimate);
            m.record.push(iter, &m.estimate);
        }
        if let Some(p) = self.path.as_mut() {
            let grid = p.eval.eval(iter, &self.particle, &mut p.buffer)?;
            let mut integrand = [0.0];
            weighted_sum(weights, &p.buffer, 1, &mut integrand);
            p.record.push(iter, grid, integrand[0]);
        }
        self.history.push(IterationRecord {
            iter,
            ess_over_n,
            resampled,
            accept,
        });
        Ok(())
    }

    /// Number of iterations performed since initialization.
    pub fn iter_num(&self) -> usize {
        self.iter
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    pub fn monitor(&self, name: &str) -> Option<&MonitorRecord> {
        self.monitors.get(name).map(|m| &m.record)
    }

    pub fn monitor_names(&self) -> impl Iterator<Item = &str> {
        self.monitors.keys().map(String::as_str)
    }

    /// Importance sampling estimate of monitor `name` at iteration `iter`.
    pub fn monitor_estimate(&self, name: &str, iter: usize) -> Result<&[f64]> {
        self.monitors
            .get(name)
            .ok_or_else(|| SmcError::UnknownMonitor(name.to_string()))?
            .record
            .estimate(iter)
    }

    pub fn path(&self) -> Option<&PathRecord> {
        self.path.as_ref().map(|p| &p.record)
    }

    /// Path sampling estimate of the log normalizing constant ratio.
    pub fn path_log_zconst(&self) -> Result<f64> {
        let p = self
            .path
            .as_ref()
            .ok_or_else(|| SmcError::InvalidParameter("no path evaluator set".into()))?;
        if p.record.is_empty() {
            return Err(SmcError::NotInitialized);
        }
        Ok(p.record.log_zconst())
    }

    /// Writes the history as a tab separated table with a header row.
    /// Acceptance columns hold `count / N`; absent cells are `NA`.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.size() as f64;
        let naccept = self.history.iter().map(|r| r.accept.len()).max().unwrap_or(0);
        let mut header = vec!["iter".to_string(), "ess_over_n".into(), "resampled".into()];
        header.extend((0..naccept).map(|k| format!("accept.{k}")));
        if self.path.is_some() {
            header.push("path.grid".into());
            header.push("path.integrand".into());
        }
        for (name, m) in &self.monitors {
            header.extend((0..m.record.dim()).map(|j| format!("{name}.{j}")));
        }
        writeln!(out, "{}", header.join("\t"))?;

        let mut row = Vec::with_capacity(header.len());
        for rec in &self.history {
            row.clear();
            row.push(rec.iter.to_string());
            row.push(format_real(rec.ess_over_n));
            row.push(u8::from(rec.resampled).to_string());
            for k in 0..naccept {
                row.push(match rec.accept.get(k) {
                    Some(&c) => format_real(c as f64 / n),
                    None => "NA".into(),
                });
            }
            if let Some(p) = &self.path {
                match p.record.at(rec.iter) {
                    Some((g, u)) => {
                        row.push(format_real(g));
                        row.push(format_real(u));
                    }
                    None => row.extend(["NA".to_string(), "NA".to_string()]),
                }
            }
            for m in self.monitors.values() {
                match m.record.estimate(rec.iter) {
                    Ok(est) => row.extend(est.iter().map(|&v| format_real(v))),
                    Err(_) => row.extend((0..m.record.dim()).map(|_| "NA".to_string())),
                }
            }
            writeln!(out, "{}", row.join("\t"))?;
        }
        Ok(())
    }
}

/// Scientific notation with 17 significant digits, which round-trips exactly.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}
