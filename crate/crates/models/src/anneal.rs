//! Annealing schedules and the tempering steps shared by the annealed models.

use std::fmt;
use std::marker::PhantomData;
use std::str::FromStr;

use smc_core::estimate::NormalizingConstant;
use smc_core::{ConstSingleParticle, MoveOp, Particle, PathKernel, Result, SmcError, SmpValue};

/// `alpha(t)` for `t = 0..=iters`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaSchedule {
    /// `t / T`
    Linear { iters: usize },
    /// `(t / T)^power`
    Prior { iters: usize, power: f64 },
}

impl AlphaSchedule {
    pub fn linear(iters: usize) -> Self {
        AlphaSchedule::Linear { iters }
    }

    pub fn prior(iters: usize, power: f64) -> Self {
        AlphaSchedule::Prior { iters, power }
    }

    pub fn iters(&self) -> usize {
        match *self {
            AlphaSchedule::Linear { iters } | AlphaSchedule::Prior { iters, .. } => iters,
        }
    }

    pub fn with_iters(self, iters: usize) -> Self {
        match self {
            AlphaSchedule::Linear { .. } => AlphaSchedule::Linear { iters },
            AlphaSchedule::Prior { power, .. } => AlphaSchedule::Prior { iters, power },
        }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        let iters = self.iters().max(1);
        let x = t as f64 / iters as f64;
        match *self {
            AlphaSchedule::Linear { .. } => x,
            AlphaSchedule::Prior { power, .. } => x.powf(power),
        }
    }
}

/// Parses `linear` or `prior:<power>`; the iteration count is set separately.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnnealKind {
    Linear,
    Prior(f64),
}

impl AnnealKind {
    pub fn schedule(self, iters: usize) -> AlphaSchedule {
        match self {
            AnnealKind::Linear => AlphaSchedule::linear(iters),
            AnnealKind::Prior(p) => AlphaSchedule::prior(iters, p),
        }
    }
}

impl FromStr for AnnealKind {
    type Err = SmcError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SmcError::InvalidParameter(format!("unknown annealing scheme `{s}`"));
        match s.split_once(':') {
            None if s == "linear" => Ok(AnnealKind::Linear),
            None if s == "prior" => Ok(AnnealKind::Prior(2.0)),
            Some(("prior", p)) => {
                let p: f64 = p.parse().map_err(|_| bad())?;
                if !(p > 0.0) || !p.is_finite() {
                    return Err(SmcError::InvalidParameter(format!(
                        "prior annealing power must be positive, got {p}"
                    )));
                }
                Ok(AnnealKind::Prior(p))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for AnnealKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnnealKind::Linear => write!(f, "linear"),
            AnnealKind::Prior(p) => write!(f, "prior:{p}"),
        }
    }
}

/// Current tempering exponent, its last increment, and the running direct
/// estimate of the log normalizing constant.
#[derive(Clone, Debug, Default)]
pub struct Annealing {
    alpha: f64,
    alpha_inc: f64,
    nc: NormalizingConstant,
}

impl Annealing {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alpha_inc(&self) -> f64 {
        self.alpha_inc
    }

    /// Clamps `a` to `[0, 1]`; setting 0 resets the increment to 0.
    pub fn set_alpha(&mut self, a: f64) {
        let a = a.clamp(0.0, 1.0);
        if a == 0.0 {
            self.alpha_inc = 0.0;
            self.alpha = 0.0;
        } else {
            self.alpha_inc = a - self.alpha;
            self.alpha = a;
        }
    }

    pub fn nc(&self) -> &NormalizingConstant {
        &self.nc
    }

    pub fn nc_mut(&mut self) -> &mut NormalizingConstant {
        &mut self.nc
    }

    /// `alpha = 0` and a fresh normalizing constant.
    pub fn reset(&mut self) {
        self.set_alpha(0.0);
        self.nc.initialize();
    }
}

/// A value collection targeting `prior * likelihood^alpha`.
pub trait Tempered: SmpValue {
    fn annealing(&self) -> &Annealing;
    fn annealing_mut(&mut self) -> &mut Annealing;

    /// Log likelihood of particle `id`.
    fn log_likelihood(&self, id: usize) -> f64;

    /// Called with the current `alpha` before reweighting.
    fn adapt_proposals(&mut self, _alpha: f64) {}
}

/// Whole-system reweighting step: advances `alpha` along the schedule and
/// multiplies the weights by `likelihood^(alpha_t - alpha_{t-1})`, updating
/// the direct normalizing constant estimate on the way.
pub struct AnnealMove<T> {
    schedule: AlphaSchedule,
    incw: Vec<f64>,
    _value: PhantomData<fn() -> T>,
}

impl<T> AnnealMove<T> {
    pub fn new(schedule: AlphaSchedule) -> Self {
        AnnealMove {
            schedule,
            incw: Vec::new(),
            _value: PhantomData,
        }
    }
}

impl<T: Tempered> MoveOp<T> for AnnealMove<T> {
    fn apply(&mut self, iter: usize, particle: &mut Particle<T>) -> Result<usize> {
        let value = particle.value_mut();
        value.annealing_mut().set_alpha(self.schedule.alpha(iter));
        let alpha = value.annealing().alpha();
        value.adapt_proposals(alpha);

        let n = particle.size();
        self.incw.resize(n, 0.0);
        let coeff = particle.value().annealing().alpha_inc();
        for (i, w) in self.incw.iter_mut().enumerate() {
            // 0 * -inf would be NaN; a zero step leaves the weight alone
            *w = if coeff == 0.0 { 0.0 } else { coeff * particle.value().log_likelihood(i) };
        }
        let (value, weights) = particle.value_and_weights_mut();
        value.annealing_mut().nc_mut().add_log_weight(&self.incw, weights)?;
        weights.add_log_weight(&self.incw)?;
        Ok(0)
    }
}

/// Path sampling under geometric annealing: the integrand is the log
/// likelihood and the grid is the current `alpha`.
pub struct AnnealPath;

impl<T: Tempered> PathKernel<T> for AnnealPath {
    fn path_state(&self, _iter: usize, csp: ConstSingleParticle<'_, T>) -> f64 {
        csp.particle().value().log_likelihood(csp.id())
    }

    fn path_grid(&self, _iter: usize, particle: &Particle<T>) -> f64 {
        particle.value().annealing().alpha()
    }
}

/// Metropolis decision on log scale: reject unless `log_ratio >= log_u`.
#[inline]
pub fn mh_reject(log_ratio: f64, log_u: f64) -> bool {
    !(log_ratio >= log_u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let lin = AlphaSchedule::linear(10);
        assert_eq!(lin.alpha(0), 0.0);
        assert_eq!(lin.alpha(10), 1.0);
        let pri = AlphaSchedule::prior(10, 2.0);
        assert_eq!(pri.alpha(5), 0.25);
        assert_eq!(pri.alpha(10), 1.0);
        for s in [lin, pri, AlphaSchedule::prior(7, 3.5)] {
            for t in 0..s.iters() {
                assert!(s.alpha(t) <= s.alpha(t + 1));
            }
        }
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("linear".parse::<AnnealKind>().unwrap(), AnnealKind::Linear);
        assert_eq!("prior:3".parse::<AnnealKind>().unwrap(), AnnealKind::Prior(3.0));
        assert_eq!("prior".parse::<AnnealKind>().unwrap(), AnnealKind::Prior(2.0));
        assert!("prior:-1".parse::<AnnealKind>().is_err());
        assert!("cubic".parse::<AnnealKind>().is_err());
        let k = AnnealKind::Prior(2.5);
        assert_eq!(k.to_string().parse::<AnnealKind>().unwrap(), k);
    }

    #[test]
    fn alpha_clamping() {
        let mut a = Annealing::default();
        a.set_alpha(0.3);
        assert_eq!((a.alpha(), a.alpha_inc()), (0.3, 0.3));
        a.set_alpha(1.7);
        assert_eq!(a.alpha(), 1.0);
        assert!((a.alpha_inc() - 0.7).abs() < 1e-15);
        a.set_alpha(-2.0);
        assert_eq!((a.alpha(), a.alpha_inc()), (0.0, 0.0));
    }

    #[test]
    fn mh_rule() {
        assert!(!mh_reject(0.0, -1.0));
        assert!(!mh_reject(-1.0, -1.0));
        assert!(mh_reject(-2.0, -1.0));
        assert!(mh_reject(f64::NAN, -1.0));
        assert!(!mh_reject(-5.0, f64::NEG_INFINITY));
    }
}
