//! Annealed SMC for a Bayesian Gaussian mixture with `r` components.
//!
//! Each particle holds `(mu, lambda, omega)` with cached log prior and log
//! likelihood. The target at step `t` is `prior * likelihood^alpha_t`.

use std::any::Any;
use std::path::{Path, PathBuf};

use smc_core::rng::{Gamma, Normal};
use smc_core::{
    Backend, InitKernel, KernelInit, KernelMove, KernelPath, KernelResult, MoveKernel, Particle,
    ResampleScheme, Result, Sampler, SingleParticle, SmcError, State, Stream,
};
use statrs::function::gamma::ln_gamma;

use crate::anneal::{mh_reject, AlphaSchedule, AnnealMove, AnnealPath, Annealing, Tempered};
use crate::data::{read_rows, write_rows};

pub const LOG_2PI: f64 = 1.8378770664093455;
pub const MIN_PROPOSAL_ALPHA: f64 = 0.02;

/// Parameters of one particle plus the copies needed to undo a rejected
/// Metropolis proposal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GmmParam {
    mu: Vec<f64>,
    lambda: Vec<f64>,
    weight: Vec<f64>,
    log_lambda: Vec<f64>,
    log_prior: f64,
    log_likelihood: f64,
    mu_old: Vec<f64>,
    lambda_old: Vec<f64>,
    weight_old: Vec<f64>,
    log_lambda_old: Vec<f64>,
    log_prior_old: f64,
    log_likelihood_old: f64,
}

impl GmmParam {
    pub fn new(r: usize) -> Self {
        let mut p = GmmParam::default();
        p.set_comp_num(r);
        p
    }

    pub fn comp_num(&self) -> usize {
        self.mu.len()
    }

    pub fn set_comp_num(&mut self, r: usize) {
        for v in [
            &mut self.mu,
            &mut self.lambda,
            &mut self.weight,
            &mut self.log_lambda,
            &mut self.mu_old,
            &mut self.lambda_old,
            &mut self.weight_old,
            &mut self.log_lambda_old,
        ] {
            v.resize(r, 0.0);
        }
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn log_lambda(&self) -> &[f64] {
        &self.log_lambda
    }

    /// Direct access to the parameters; call the `update_*` methods of
    /// [`GmmShared`] afterwards to refresh the caches.
    pub fn mu_mut(&mut self) -> &mut [f64] {
        &mut self.mu
    }

    pub fn lambda_mut(&mut self) -> &mut [f64] {
        &mut self.lambda
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn log_prior(&self) -> f64 {
        self.log_prior
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn update_log_lambda(&mut self) {
        for (l, &x) in self.log_lambda.iter_mut().zip(&self.lambda) {
            *l = x.ln();
        }
    }

    pub fn save_old(&mut self) {
        self.mu_old.copy_from_slice(&self.mu);
        self.lambda_old.copy_from_slice(&self.lambda);
        self.weight_old.copy_from_slice(&self.weight);
        self.log_lambda_old.copy_from_slice(&self.log_lambda);
        self.log_prior_old = self.log_prior;
        self.log_likelihood_old = self.log_likelihood;
    }

    /// Returns 1 if accepted; otherwise restores the means and returns 0.
    pub fn mh_reject_mu(&mut self, p: f64, u: f64) -> usize {
        if mh_reject(p, u) {
            self.mu.copy_from_slice(&self.mu_old);
            self.mh_reject_common();
            0
        } else {
            1
        }
    }

    pub fn mh_reject_lambda(&mut self, p: f64, u: f64) -> usize {
        if mh_reject(p, u) {
            self.lambda.copy_from_slice(&self.lambda_old);
            self.log_lambda.copy_from_slice(&self.log_lambda_old);
            self.mh_reject_common();
            0
        } else {
            1
        }
    }

    pub fn mh_reject_weight(&mut self, p: f64, u: f64) -> usize {
        if mh_reject(p, u) {
            self.weight.copy_from_slice(&self.weight_old);
            self.mh_reject_common();
            0
        } else {
            1
        }
    }

    fn mh_reject_common(&mut self) {
        self.log_prior = self.log_prior_old;
        self.log_likelihood = self.log_likelihood_old;
    }

    /// `sum_j (ln lambda_j - ln lambda_j_old)`, from the caches.
    pub fn log_lambda_diff(&self) -> f64 {
        self.log_lambda
            .iter()
            .zip(&self.log_lambda_old)
            .map(|(a, b)| a - b)
            .sum()
    }

    /// `sum_j (ln omega_j - ln omega_j_old)` over all components.
    pub fn logit_weight_diff(&self) -> f64 {
        self.weight
            .iter()
            .zip(&self.weight_old)
            .map(|(a, b)| a.ln() - b.ln())
            .sum()
    }
}

/// `mu_j ~ N(xi, 1/kappa)`, `lambda_j ~ Gamma(shape nu, scale chi)`,
/// `omega ~ Dirichlet(rho, ..., rho)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmmPrior {
    pub xi: f64,
    pub kappa: f64,
    pub nu: f64,
    pub chi: f64,
    pub rho: f64,
}

impl GmmPrior {
    /// Defaults scaled to the data: `xi` the midrange, `kappa = 1/R^2`,
    /// `nu = 2`, `chi = 50/R^2`, `rho = 1`, with `R` the range.
    pub fn from_data(obs: &[f64]) -> Result<Self> {
        let min = obs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = obs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        if !(range > 0.0) || !range.is_finite() {
            return Err(SmcError::InvalidParameter(
                "observations must be finite and not all equal".into(),
            ));
        }
        let r2 = range * range;
        Ok(GmmPrior {
            xi: 0.5 * (min + max),
            kappa: 1.0 / r2,
            nu: 2.0,
            chi: 50.0 / r2,
            rho: 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.xi.is_finite()
            && [self.kappa, self.nu, self.chi, self.rho]
                .iter()
                .all(|v| *v > 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SmcError::InvalidParameter(format!("invalid mixture prior {self:?}")))
        }
    }
}

/// Data and settings shared by all particles.
#[derive(Clone, Debug)]
pub struct GmmShared {
    obs: Vec<f64>,
    comp_num: usize,
    prior: GmmPrior,
    mu_sd: f64,
    lambda_sd: f64,
    weight_sd: f64,
    annealing: Annealing,
}

impl Default for GmmShared {
    fn default() -> Self {
        GmmShared {
            obs: Vec::new(),
            comp_num: 0,
            prior: GmmPrior {
                xi: 0.0,
                kappa: 1.0,
                nu: 1.0,
                chi: 1.0,
                rho: 1.0,
            },
            mu_sd: 0.0,
            lambda_sd: 0.0,
            weight_sd: 0.0,
            annealing: Annealing::default(),
        }
    }
}

impl GmmShared {
    pub fn new(obs: Vec<f64>, comp_num: usize, prior: GmmPrior) -> Self {
        GmmShared {
            obs,
            comp_num,
            prior,
            ..GmmShared::default()
        }
    }

    pub fn obs(&self) -> &[f64] {
        &self.obs
    }

    pub fn comp_num(&self) -> usize {
        self.comp_num
    }

    pub fn prior(&self) -> &GmmPrior {
        &self.prior
    }

    pub fn alpha(&self) -> f64 {
        self.annealing.alpha()
    }

    pub fn proposal_scales(&self) -> (f64, f64, f64) {
        (self.mu_sd, self.lambda_sd, self.weight_sd)
    }

    /// Random walk scales for the current `alpha`, floored at 0.02.
    pub fn set_proposal_scales(&mut self, alpha: f64) {
        let a = if alpha < MIN_PROPOSAL_ALPHA { MIN_PROPOSAL_ALPHA } else { alpha };
        let widen = 1.0 + (1.0 / a).sqrt();
        self.mu_sd = 0.15 / a;
        self.lambda_sd = widen * 0.15;
        self.weight_sd = widen * 0.2;
    }

    pub fn set_fixed_scales(&mut self, mu_sd: f64, lambda_sd: f64, weight_sd: f64) {
        self.mu_sd = mu_sd;
        self.lambda_sd = lambda_sd;
        self.weight_sd = weight_sd;
    }

    pub fn annealing(&self) -> &Annealing {
        &self.annealing
    }

    pub fn annealing_mut(&mut self) -> &mut Annealing {
        &mut self.annealing
    }

    /// Log prior density; refreshes `log_lambda` and the cached value.
    pub fn update_log_prior(&self, param: &mut GmmParam) -> f64 {
        param.update_log_lambda();
        let GmmPrior { xi, kappa, nu, chi, rho } = self.prior;
        let r = param.comp_num() as f64;
        let mut lp = 0.0;
        for &m in &param.mu {
            let d = m - xi;
            lp += 0.5 * (kappa.ln() - LOG_2PI) - 0.5 * kappa * d * d;
        }
        let gamma_norm = -ln_gamma(nu) - nu * chi.ln();
        for (&l, &ll) in param.lambda.iter().zip(&param.log_lambda) {
            lp += if l > 0.0 {
                gamma_norm + (nu - 1.0) * ll - l / chi
            } else {
                f64::NEG_INFINITY
            };
        }
        lp += ln_gamma(r * rho) - r * ln_gamma(rho);
        if rho != 1.0 {
            lp += (rho - 1.0) * param.weight.iter().map(|w| w.ln()).sum::<f64>();
        }
        param.log_prior = lp;
        lp
    }

    /// Log likelihood of all observations; refreshes `log_lambda` and the
    /// cached value.
    pub fn update_log_likelihood(&self, param: &mut GmmParam) -> f64 {
        param.update_log_lambda();
        let mut ll = -0.5 * self.obs.len() as f64 * LOG_2PI;
        for &y in &self.obs {
            let mut lli = 0.0;
            for j in 0..param.comp_num() {
                let resid = y - param.mu[j];
                lli += param.weight[j] * (0.5 * param.log_lambda[j] - 0.5 * param.lambda[j] * resid * resid).exp();
            }
            ll += if lli > f64::MIN_POSITIVE {
                lli.ln()
            } else {
                // every component underflowed; redo this term on log scale
                log_mixture_density(param, y)
            };
        }
        param.log_likelihood = ll;
        ll
    }
}

// ln sum_j omega_j exp(0.5 ln lambda_j - 0.5 lambda_j (y - mu_j)^2)
fn log_mixture_density(param: &GmmParam, y: f64) -> f64 {
    let terms = (0..param.comp_num()).map(|j| {
        let resid = y - param.mu[j];
        param.weight[j].ln() + 0.5 * param.log_lambda[j] - 0.5 * param.lambda[j] * resid * resid
    });
    smc_core::weights::log_sum_exp(terms)
}

/// Particle values: one [`GmmParam`] per particle.
pub type Gmm = State<GmmParam, GmmShared, 1>;

impl Tempered for Gmm {
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
        self.shared_mut().set_proposal_scales(alpha);
    }
}

/// Observations for the mixture model: a vector of floats, or a path to a
/// file with one float per line.
pub fn observations_from_param(param: &dyn Any) -> Result<Vec<f64>> {
    if let Some(v) = param.downcast_ref::<Vec<f64>>() {
        return Ok(v.clone());
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
        Some(p) => load_observations(p),
        None => Err(SmcError::InvalidParameter(
            "unsupported initialization parameter".into(),
        )),
    }
}

pub fn load_observations(path: &Path) -> Result<Vec<f64>> {
    Ok(read_rows(path, 1)?.into_iter().map(|r| r[0]).collect())
}

pub fn save_observations(path: &Path, obs: &[f64]) -> Result<()> {
    write_rows(path, obs.chunks(1))
}

/// Draws every particle from the prior; equal weights, `alpha = 0`.
#[derive(Clone, Debug)]
pub struct GmmInit {
    comp_num: usize,
    prior: Option<GmmPrior>,
}

impl GmmInit {
    /// `prior = None` derives the prior from the data.
    pub fn new(comp_num: usize, prior: Option<GmmPrior>) -> Self {
        GmmInit { comp_num, prior }
    }
}

impl InitKernel<Gmm> for GmmInit {
    type Slot = ();

    fn initialize_param(&mut self, particle: &mut Particle<Gmm>, param: Option<&dyn Any>) -> Result<()> {
        if self.comp_num == 0 {
            return Err(SmcError::InvalidParameter("component count must be at least 1".into()));
        }
        let value = particle.value_mut();
        if let Some(param) = param {
            value.shared_mut().obs = observations_from_param(param)?;
        }
        if value.shared().obs.is_empty() {
            return Err(SmcError::InvalidParameter("no observations loaded".into()));
        }
        let prior = match self.prior {
            Some(p) => p,
            None => GmmPrior::from_data(&value.shared().obs)?,
        };
        prior.validate()?;
        let shared = value.shared_mut();
        shared.prior = prior;
        shared.comp_num = self.comp_num;
        shared.annealing.reset();
        shared.set_proposal_scales(0.0);
        for i in 0..particle.size() {
            particle.value_mut().state_mut(i, 0).set_comp_num(self.comp_num);
        }
        particle.set_equal_weight();
        Ok(())
    }

    fn initialize_state(&self, mut sp: SingleParticle<'_, Gmm>, _: &mut ()) -> KernelResult {
        let shared = sp.shared();
        let prior = shared.prior;
        let rmu = Normal::new(prior.xi, 1.0 / prior.kappa.sqrt())?;
        let rlambda = Gamma::new(prior.nu, prior.chi)?;
        let rweight = Gamma::new(1.0, 1.0)?;
        let (param, rng) = sp.state_and_rng(0);
        let mut sum = 0.0;
        for j in 0..param.comp_num() {
            param.mu[j] = rmu.sample(rng);
            param.lambda[j] = rlambda.sample(rng);
            param.weight[j] = rweight.sample(rng);
            sum += param.weight[j];
        }
        for w in param.weight.iter_mut() {
            *w /= sum;
        }
        shared.update_log_prior(param);
        shared.update_log_likelihood(param);
        Ok(1)
    }
}

/// Random walk on the means.
#[derive(Clone, Copy, Debug, Default)]
pub struct GmmMoveMu;

impl MoveKernel<Gmm> for GmmMoveMu {
    type Slot = ();

    fn move_state(&self, _iter: usize, mut sp: SingleParticle<'_, Gmm>, _: &mut ()) -> KernelResult {
        let shared = sp.shared();
        let alpha = shared.alpha();
        let (param, rng) = sp.state_and_rng(0);
        let p_old = param.log_prior + alpha * param.log_likelihood;
        param.save_old();
        for m in param.mu.iter_mut() {
            *m += shared.mu_sd * rng.std_normal();
        }
        let p = shared.update_log_prior(param) + alpha * shared.update_log_likelihood(param) - p_old;
        let u = rng.uniform01().ln();
        Ok(param.mh_reject_mu(p, u))
    }
}

/// Random walk on the log precisions.
#[derive(Clone, Copy, Debug, Default)]
pub struct GmmMoveLambda;

impl MoveKernel<Gmm> for GmmMoveLambda {
    type Slot = ();

    fn move_state(&self, _iter: usize, mut sp: SingleParticle<'_, Gmm>, _: &mut ()) -> KernelResult {
        let shared = sp.shared();
        let alpha = shared.alpha();
        let (param, rng) = sp.state_and_rng(0);
        let p_old = param.log_prior + alpha * param.log_likelihood;
        param.save_old();
        for l in param.lambda.iter_mut() {
            *l *= (shared.lambda_sd * rng.std_normal()).exp();
        }
        let p = shared.update_log_prior(param) + alpha * shared.update_log_likelihood(param) - p_old
            + param.log_lambda_diff();
        let u = rng.uniform01().ln();
        Ok(param.mh_reject_lambda(p, u))
    }
}

/// Random walk on the logits `ln(omega_j / omega_r)`, `j < r`.
#[derive(Clone, Copy, Debug, Default)]
pub struct GmmMoveWeight;

impl MoveKernel<Gmm> for GmmMoveWeight {
    type Slot = ();

    fn move_state(&self, _iter: usize, mut sp: SingleParticle<'_, Gmm>, _: &mut ()) -> KernelResult {
        let shared = sp.shared();
        let alpha = shared.alpha();
        let (param, rng) = sp.state_and_rng(0);
        let r = param.comp_num();
        let p_old = param.log_prior + alpha * param.log_likelihood;
        param.save_old();
        // logits into `weight`, then back through a stabilized softmax
        let log_last = param.weight[r - 1].ln();
        let mut max = 0.0f64;
        for j in 0..r - 1 {
            let g = param.weight[j].ln() - log_last + shared.weight_sd * rng.std_normal();
            param.weight[j] = g;
            max = max.max(g);
        }
        param.weight[r - 1] = 0.0;
        let mut sum = 0.0;
        for w in param.weight.iter_mut() {
            *w = (*w - max).exp();
            sum += *w;
        }
        for w in param.weight.iter_mut() {
            *w /= sum;
        }
        let p = shared.update_log_prior(param) + alpha * shared.update_log_likelihood(param) - p_old
            + param.logit_weight_diff();
        let u = rng.uniform01().ln();
        Ok(param.mh_reject_weight(p, u))
    }
}

/// Model and run settings for [`gmm_sampler`].
#[derive(Clone, Debug)]
pub struct GmmConfig {
    pub comp_num: usize,
    pub particles: usize,
    pub schedule: AlphaSchedule,
    pub scheme: ResampleScheme,
    pub threshold: f64,
    pub seed: u64,
    pub prior: Option<GmmPrior>,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            comp_num: 4,
            particles: 8192,
            schedule: AlphaSchedule::prior(100, 2.0),
            scheme: ResampleScheme::Stratified,
            threshold: 0.5,
            seed: 0,
            prior: None,
        }
    }
}

/// Init, reweighting move, the three Metropolis blocks (mu, lambda, weight)
/// and path sampling, all on `backend`.
pub fn gmm_sampler(config: &GmmConfig, backend: &Backend) -> Result<Sampler<Gmm>> {
    let mut s = Sampler::<Gmm>::with_options(config.particles, config.scheme, config.threshold, config.seed)?;
    s.set_init(KernelInit::new(GmmInit::new(config.comp_num, config.prior), backend.clone()))
        .add_move(AnnealMove::new(config.schedule), false)
        .add_mcmc(KernelMove::new(GmmMoveMu, backend.clone()), false)
        .add_mcmc(KernelMove::new(GmmMoveLambda, backend.clone()), true)
        .add_mcmc(KernelMove::new(GmmMoveWeight, backend.clone()), true)
        .set_path(KernelPath::new(AnnealPath, backend.clone()));
    Ok(s)
}

/// Normalizing constant estimates of a finished run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogZ {
    pub ds: f64,
    pub ps: f64,
}

pub fn log_zconst<T: Tempered>(sampler: &Sampler<T>) -> Result<LogZ> {
    Ok(LogZ {
        ds: sampler.particle().value().annealing().nc().log_zconst(),
        ps: sampler.path_log_zconst()?,
    })
}

/// Initializes on `obs` and runs the whole schedule.
pub fn run_gmm(config: &GmmConfig, obs: Vec<f64>, backend: &Backend) -> Result<Sampler<Gmm>> {
    let mut s = gmm_sampler(config, backend)?;
    s.initialize(Some(&obs))?;
    s.iterate(config.schedule.iters())?;
    Ok(s)
}

pub const TRUE_MU: [f64; 4] = [-3.0, 0.0, 3.0, 6.0];
pub const TRUE_LAMBDA: f64 = 2.0;

/// `n` draws from the four component mixture with means (-3, 0, 3, 6),
/// precisions 2 and equal weights.
pub fn simulate(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = Stream::new(seed, 0);
    let sd = 1.0 / TRUE_LAMBDA.sqrt();
    (0..n)
        .map(|_| {
            let j = ((rng.uniform01() * 4.0) as usize).min(3);
            TRUE_MU[j] + sd * rng.std_normal()
        })
        .collect()
}
