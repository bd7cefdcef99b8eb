//! Normal mean with known noise and a normal prior, run through the same
//! annealed machinery as the mixture. Its marginal likelihood is available
//! in closed form, which makes it a check on the estimators.

use std::any::Any;

use smc_core::rng::Normal;
use smc_core::{
    Backend, InitKernel, KernelInit, KernelMove, KernelPath, KernelResult, MoveKernel, Particle,
    ResampleScheme, Result, Sampler, SingleParticle, SmcError, State,
};

use crate::anneal::{mh_reject, AlphaSchedule, AnnealMove, AnnealPath, Annealing, Tempered};
use crate::gmm::LOG_2PI;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConjugateParam {
    pub theta: f64,
    pub log_likelihood: f64,
}

/// Sufficient statistics of `y_k ~ N(theta, noise_sd^2)` and the prior
/// `theta ~ N(prior_mean, prior_sd^2)`.
#[derive(Clone, Debug, Default)]
pub struct ConjugateShared {
    n: usize,
    mean: f64,
    ss: f64,
    prior_mean: f64,
    prior_sd: f64,
    noise_sd: f64,
    proposal_sd: f64,
    annealing: Annealing,
}

impl ConjugateShared {
    pub fn new(obs: &[f64], prior_mean: f64, prior_sd: f64, noise_sd: f64) -> Result<Self> {
        if obs.is_empty() {
            return Err(SmcError::InvalidParameter("no observations".into()));
        }
        if !(prior_sd > 0.0 && noise_sd > 0.0) {
            return Err(SmcError::InvalidParameter("standard deviations must be positive".into()));
        }
        let n = obs.len();
        let mean = obs.iter().sum::<f64>() / n as f64;
        let ss = obs.iter().map(|y| (y - mean) * (y - mean)).sum();
        Ok(ConjugateShared {
            n,
            mean,
            ss,
            prior_mean,
            prior_sd,
            noise_sd,
            proposal_sd: 0.0,
            annealing: Annealing::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn alpha(&self) -> f64 {
        self.annealing.alpha()
    }

    pub fn proposal_sd(&self) -> f64 {
        self.proposal_sd
    }

    pub fn log_likelihood(&self, theta: f64) -> f64 {
        let v = self.noise_sd * self.noise_sd;
        let d = self.mean - theta;
        -0.5 * self.n as f64 * (LOG_2PI + v.ln()) - 0.5 * (self.ss + self.n as f64 * d * d) / v
    }

    pub fn log_prior(&self, theta: f64) -> f64 {
        let z = (theta - self.prior_mean) / self.prior_sd;
        -0.5 * LOG_2PI - self.prior_sd.ln() - 0.5 * z * z
    }

    /// Random walk scale `2.4` times the standard deviation of the
    /// tempered posterior.
    pub fn set_proposal_scale(&mut self, alpha: f64) {
        let prec = 1.0 / (self.prior_sd * self.prior_sd)
            + alpha * self.n as f64 / (self.noise_sd * self.noise_sd);
        self.proposal_sd = 2.4 / prec.sqrt();
    }
}

pub type Conjugate = State<ConjugateParam, ConjugateShared, 1>;

impl Tempered for Conjugate {
    fn annealing(&self) -> &Annealing {
        &self.shared().annealing
    }

    fn annealing_mut(&mut self) -> &mut Annealing {
        &mut self.shared_mut().annealing
    }

    fn log_likelihood(&self, id: usize) -> f64 {
        self.state(id, 0).log_likelihood
    }

    fn adapt_proposals(&mut self, alpha: f64) {
        self.shared_mut().set_proposal_scale(alpha);
    }
}

/// Takes a [`ConjugateShared`] as parameter, then draws from the prior.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConjugateInit;

impl InitKernel<Conjugate> for ConjugateInit {
    type Slot = ();

    fn initialize_param(&mut self, particle: &mut Particle<Conjugate>, param: Option<&dyn Any>) -> Result<()> {
        if let Some(param) = param {
            let shared = param
                .downcast_ref::<ConjugateShared>()
                .ok_or_else(|| SmcError::InvalidParameter("unsupported initialization parameter".into()))?;
            *particle.value_mut().shared_mut() = shared.clone();
        }
        let shared = particle.value_mut().shared_mut();
        if shared.is_empty() {
            return Err(SmcError::InvalidParameter("no observations loaded".into()));
        }
        shared.annealing.reset();
        shared.set_proposal_scale(0.0);
        particle.set_equal_weight();
        Ok(())
    }

    fn initialize_state(&self, mut sp: SingleParticle<'_, Conjugate>, _: &mut ()) -> KernelResult {
        let shared = sp.shared();
        let prior = Normal::new(shared.prior_mean, shared.prior_sd)?;
        let (param, rng) = sp.state_and_rng(0);
        param.theta = prior.sample(rng);
        param.log_likelihood = shared.log_likelihood(param.theta);
        Ok(1)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ConjugateMove;

impl MoveKernel<Conjugate> for ConjugateMove {
    type Slot = ();

    fn move_state(&self, _iter: usize, mut sp: SingleParticle<'_, Conjugate>, _: &mut ()) -> KernelResult {
        let shared = sp.shared();
        let alpha = shared.alpha();
        let (param, rng) = sp.state_and_rng(0);
        let theta = param.theta + shared.proposal_sd * rng.std_normal();
        let ll = shared.log_likelihood(theta);
        let p = shared.log_prior(theta) + alpha * ll
            - shared.log_prior(param.theta)
            - alpha * param.log_likelihood;
        let u = rng.uniform01().ln();
        if mh_reject(p, u) {
            return Ok(0);
        }
        param.theta = theta;
        param.log_likelihood = ll;
        Ok(1)
    }
}

#[derive(Clone, Debug)]
pub struct ConjugateConfig {
    pub particles: usize,
    pub schedule: AlphaSchedule,
    pub scheme: ResampleScheme,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for ConjugateConfig {
    fn default() -> Self {
        ConjugateConfig {
            particles: 8192,
            schedule: AlphaSchedule::prior(100, 2.0),
            scheme: ResampleScheme::Stratified,
            threshold: 0.5,
            seed: 0,
        }
    }
}

pub fn conjugate_sampler(config: &ConjugateConfig, backend: &Backend) -> Result<Sampler<Conjugate>> {
    let mut s = Sampler::<Conjugate>::with_options(config.particles, config.scheme, config.threshold, config.seed)?;
    s.set_init(KernelInit::new(ConjugateInit, backend.clone()))
        .add_move(AnnealMove::new(config.schedule), false)
        .add_mcmc(KernelMove::new(ConjugateMove, backend.clone()), false)
        .set_path(KernelPath::new(AnnealPath, backend.clone()));
    Ok(s)
}

pub fn run_conjugate(config: &ConjugateConfig, shared: ConjugateShared, backend: &Backend) -> Result<Sampler<Conjugate>> {
    let mut s = conjugate_sampler(config, backend)?;
    s.initialize(Some(&shared))?;
    s.iterate(config.schedule.iters())?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn likelihood_from_statistics() {
        let obs = [0.5, 1.5, -0.25, 2.0];
        let s = ConjugateShared::new(&obs, 0.0, 1.0, 1.3).unwrap();
        let theta = 0.8;
        let direct: f64 = obs
            .iter()
            .map(|y| {
                let z = (y - theta) / 1.3;
                -0.5 * LOG_2PI - 1.3f64.ln() - 0.5 * z * z
            })
            .sum();
        assert!((s.log_likelihood(theta) - direct).abs() < 1e-12);
    }

    #[test]
    fn proposal_scale() {
        let mut s = ConjugateShared::new(&[0.0, 1.0], 0.0, 2.0, 1.0).unwrap();
        s.set_proposal_scale(0.0);
        assert!((s.proposal_sd() - 4.8).abs() < 1e-12);
        s.set_proposal_scale(1.0);
        assert!((s.proposal_sd() - 2.4 / 2.25f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ConjugateShared::new(&[], 0.0, 1.0, 1.0).is_err());
        assert!(ConjugateShared::new(&[1.0], 0.0, 0.0, 1.0).is_err());
    }
}
