//! Almost constant velocity particle filter.
//!
//! State `(x_pos, y_pos, x_vel, y_vel)`, observations of the position with
//! t distributed errors.

use std::any::Any;
use std::path::{Path, PathBuf};

use smc_core::{
    make_monitor, Backend, ConstSingleParticle, InitKernel, KernelInit, KernelMove, KernelResult,
    MoveKernel, Particle, ResampleScheme, Result, Sampler, SingleParticle, SmcError, State, Stream,
};

use crate::data::{read_rows, student_t, write_rows};

pub const DATA_NUM: usize = 100;
pub const DIM: usize = 4;
pub const SCALE: f64 = 10.0;
pub const NU: f64 = 10.0;
pub const DELTA: f64 = 0.1;
pub const SD_POS0: f64 = 2.0;
pub const SD_VEL0: f64 = 1.0;

pub fn sd_pos() -> f64 {
    0.02f64.sqrt()
}

pub fn sd_vel() -> f64 {
    0.001f64.sqrt()
}

/// Observed positions, one pair per time step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CvData {
    pub x_obs: Vec<f64>,
    pub y_obs: Vec<f64>,
}

impl CvData {
    pub fn len(&self) -> usize {
        self.x_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_obs.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows = read_rows(path, 2)?;
        Ok(CvData {
            x_obs: rows.iter().map(|r| r[0]).collect(),
            y_obs: rows.iter().map(|r| r[1]).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<[f64; 2]> = self.x_obs.iter().zip(&self.y_obs).map(|(&x, &y)| [x, y]).collect();
        write_rows(path, rows.iter().map(|r| &r[..]))
    }
}

/// Particle values: an `N x 4` matrix sharing the observations.
pub type Cv = State<f64, CvData, DIM>;

/// Log likelihood of a position given an observation.
pub fn cv_log_likelihood(x_pos: f64, y_pos: f64, x_obs: f64, y_obs: f64) -> f64 {
    let rx = SCALE * (x_pos - x_obs);
    let ry = SCALE * (y_pos - y_obs);
    let lx = (1.0 + rx * rx / NU).ln();
    let ly = (1.0 + ry * ry / NU).ln();
    -0.5 * (NU + 1.0) * (lx + ly)
}

fn particle_log_likelihood(sp: &SingleParticle<'_, Cv>, t: usize) -> std::result::Result<f64, String> {
    let data = sp.shared();
    if t >= data.len() {
        return Err(format!("no observation for time step {t} (have {})", data.len()));
    }
    Ok(cv_log_likelihood(*sp.state(0), *sp.state(1), data.x_obs[t], data.y_obs[t]))
}

/// Accepts `CvData`, a path (`&str`, `String`, `PathBuf`, `&Path`), or no
/// parameter to keep the data already loaded.
pub fn data_from_param(param: &dyn Any) -> Result<CvData> {
    if let Some(d) = param.downcast_ref::<CvData>() {
        return Ok(d.clone());
    }
    let path: Option<&Path> = if let Some(s) = param.downcast_ref::<&str>() {
        Some(Path::new(*s))
    } else if let Some(s) = param.downcast_ref::<String>() {
        Some(Path::new(s))
    } else if let Some(p) = param.downcast_ref::<PathBuf>() {
        Some(p)
    } else if let Some(p) = param.downcast_ref::<&Path>() {
        Some(p)
    } else {
        None
    };
    match path {
        Some(p) => CvData::load(p),
        None => Err(SmcError::InvalidParameter(
            "unsupported initialization parameter".into(),
        )),
    }
}

/// Draws from the prior and weights by the first observation.
#[derive(Clone, Debug, Default)]
pub struct CvInit;

impl InitKernel<Cv> for CvInit {
    type Slot = f64;

    fn initialize_param(&mut self, particle: &mut Particle<Cv>, param: Option<&dyn Any>) -> Result<()> {
        if let Some(param) = param {
            *particle.value_mut().shared_mut() = data_from_param(param)?;
        }
        if particle.value().shared().is_empty() {
            return Err(SmcError::InvalidParameter("no observations loaded".into()));
        }
        Ok(())
    }

    fn initialize_state(&self, mut sp: SingleParticle<'_, Cv>, llh: &mut f64) -> KernelResult {
        for (pos, sd) in [(0, SD_POS0), (1, SD_POS0), (2, SD_VEL0), (3, SD_VEL0)] {
            let z = sp.rng().std_normal();
            *sp.state_mut(pos) = sd * z;
        }
        *llh = particle_log_likelihood(&sp, 0)?;
        Ok(0)
    }

    fn post_processor(&mut self, particle: &mut Particle<Cv>, llh: &[f64]) -> Result<()> {
        particle.weight_set_mut().set_log_weight(llh)
    }
}

/// Propagates with the constant velocity dynamics and reweights by the
/// observation at the current time step.
#[derive(Clone, Debug)]
pub struct CvMove {
    pub sd_pos: f64,
    pub sd_vel: f64,
    pub delta: f64,
}

impl Default for CvMove {
    fn default() -> Self {
        CvMove {
            sd_pos: sd_pos(),
            sd_vel: sd_vel(),
            delta: DELTA,
        }
    }
}

impl MoveKernel<Cv> for CvMove {
    type Slot = f64;

    fn move_state(&self, iter: usize, mut sp: SingleParticle<'_, Cv>, incw: &mut f64) -> KernelResult {
        let zx = sp.rng().std_normal();
        let x = *sp.state(0) + self.sd_pos * zx + self.delta * *sp.state(2);
        *sp.state_mut(0) = x;
        let zy = sp.rng().std_normal();
        let y = *sp.state(1) + self.sd_pos * zy + self.delta * *sp.state(3);
        *sp.state_mut(1) = y;
        let zvx = sp.rng().std_normal();
        *sp.state_mut(2) += self.sd_vel * zvx;
        let zvy = sp.rng().std_normal();
        *sp.state_mut(3) += self.sd_vel * zvy;
        *incw = particle_log_likelihood(&sp, iter)?;
        Ok(0)
    }

    fn post_processor(&mut self, _iter: usize, particle: &mut Particle<Cv>, incw: &[f64]) -> Result<()> {
        particle.weight_set_mut().add_log_weight(incw)
    }
}

/// The first `dim` state values of a particle.
pub fn cv_monitor_state(_iter: usize, dim: usize, csp: ConstSingleParticle<'_, Cv>, res: &mut [f64]) {
    assert!(dim <= DIM, "monitor dimension {dim} exceeds state dimension {DIM}");
    for (d, r) in res.iter_mut().enumerate().take(dim) {
        *r = *csp.state(d);
    }
}

/// A sampler with the init and move kernels and the `pos` monitor.
pub fn pf_sampler(
    particles: usize,
    scheme: ResampleScheme,
    threshold: f64,
    seed: u64,
    backend: &Backend,
) -> Result<Sampler<Cv>> {
    let mut sampler = Sampler::<Cv>::with_options(particles, scheme, threshold, seed)?;
    sampler
        .set_init(KernelInit::new(CvInit, backend.clone()))
        .add_move(KernelMove::new(CvMove::default(), backend.clone()), false)
        .set_monitor("pos", 2, make_monitor(cv_monitor_state, backend.clone()))?;
    Ok(sampler)
}

/// Filtered position estimates `(x, y)` for every time step.
pub fn filtered_positions(sampler: &Sampler<Cv>) -> Result<Vec<[f64; 2]>> {
    (0..=sampler.iter_num())
        .map(|t| {
            let e = sampler.monitor_estimate("pos", t)?;
            Ok([e[0], e[1]])
        })
        .collect()
}

/// Runs the filter over all of `data`.
pub fn run_filter(
    data: CvData,
    particles: usize,
    scheme: ResampleScheme,
    threshold: f64,
    seed: u64,
    backend: &Backend,
) -> Result<Sampler<Cv>> {
    let steps = data.len();
    let mut sampler = pf_sampler(particles, scheme, threshold, seed, backend)?;
    sampler.initialize(Some(&data))?;
    sampler.iterate(steps.saturating_sub(1))?;
    Ok(sampler)
}

/// Simulated trajectory and its observations.
#[derive(Clone, Debug, PartialEq)]
pub struct CvSimulation {
    pub truth: Vec<[f64; DIM]>,
    pub data: CvData,
}

impl CvSimulation {
    /// Writes the observations to `path` and the states to `path.truth`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.data.save(path)?;
        write_rows(&truth_path(path), self.truth.iter().map(|r| &r[..]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = CvData::load(path)?;
        let truth = read_rows(&truth_path(path), DIM)?
            .into_iter()
            .map(|r| [r[0], r[1], r[2], r[3]])
            .collect();
        Ok(CvSimulation { truth, data })
    }

    /// Mean squared distance between `estimates` and the true positions.
    pub fn position_mse(&self, estimates: &[[f64; 2]]) -> f64 {
        let n = self.truth.len().min(estimates.len());
        let total: f64 = self.truth[..n]
            .iter()
            .zip(estimates)
            .map(|(s, e)| (s[0] - e[0]).powi(2) + (s[1] - e[1]).powi(2))
            .sum();
        total / n as f64
    }

    /// Mean squared distance between the raw observations and the truth.
    pub fn observation_mse(&self) -> f64 {
        let obs: Vec<[f64; 2]> = self.data.x_obs.iter().zip(&self.data.y_obs).map(|(&x, &y)| [x, y]).collect();
        self.position_mse(&obs)
    }
}

/// Path of the ground truth file written next to an observation file.
pub fn truth_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".truth");
    PathBuf::from(name)
}

/// Simulates `steps` states from the model, with observation errors
/// `t_nu / SCALE`.
pub fn simulate(seed: u64, steps: usize) -> Result<CvSimulation> {
    let mut rng = Stream::new(seed, 0);
    let mut truth = Vec::with_capacity(steps);
    let mut data = CvData::default();
    let mut s = [0.0; DIM];
    for t in 0..steps {
        if t == 0 {
            for (v, sd) in s.iter_mut().zip([SD_POS0, SD_POS0, SD_VEL0, SD_VEL0]) {
                *v = sd * rng.std_normal();
            }
        } else {
            s[0] += sd_pos() * rng.std_normal() + DELTA * s[2];
            s[1] += sd_pos() * rng.std_normal() + DELTA * s[3];
            s[2] += sd_vel() * rng.std_normal();
            s[3] += sd_vel() * rng.std_normal();
        }
        truth.push(s);
        data.x_obs.push(s[0] + student_t(&mut rng, NU)? / SCALE);
        data.y_obs.push(s[1] + student_t(&mut rng, NU)? / SCALE);
    }
    Ok(CvSimulation { truth, data })
}
