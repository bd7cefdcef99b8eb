//! Wall clock timing of the mixture sampler across particle counts and
//! backends.

use std::fmt::Write as _;
use std::time::Instant;

use smc_core::sampler::format_real;
use smc_core::{Backend, Result, SmcError};
use smc_models::anneal::AlphaSchedule;
use smc_models::gmm::{run_gmm, GmmConfig};

#[derive(Clone, Debug)]
pub struct BenchSettings {
    pub log2_min: u32,
    pub log2_max: u32,
    pub reps: usize,
    pub iters: usize,
    pub components: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub backend: String,
    pub particles: usize,
    pub seconds: f64,
    pub speedup: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn get(&self, backend: &str, particles: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.backend == backend && r.particles == particles)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("backend\tparticles\tseconds\tspeedup\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.backend, r.particles, format_real(r.seconds), format_real(r.speedup));
        }
        s
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median time of initialize plus the whole schedule. The sequential
/// backend is always timed first and is the speedup reference.
pub fn bench(settings: &BenchSettings, obs: &[f64], backends: &[(String, Backend)]) -> Result<BenchReport> {
    if settings.reps == 0 || settings.log2_min > settings.log2_max || settings.log2_max > 30 {
        return Err(SmcError::InvalidParameter("bad benchmark range".into()));
    }
    let mut all = vec![("seq".to_string(), Backend::Sequential)];
    all.extend(backends.iter().filter(|(name, _)| name != "seq").cloned());
    let mut report = BenchReport::default();
    for k in settings.log2_min..=settings.log2_max {
        let n = 1usize << k;
        let config = GmmConfig {
            comp_num: settings.components,
            particles: n,
            schedule: AlphaSchedule::prior(settings.iters, 2.0),
            seed: settings.seed,
            ..GmmConfig::default()
        };
        let mut reference = 0.0;
        for (name, backend) in &all {
            let mut times = Vec::with_capacity(settings.reps);
            for _ in 0..settings.reps {
                let data = obs.to_vec();
                let start = Instant::now();
                run_gmm(&config, data, backend)?;
                times.push(start.elapsed().as_secs_f64());
            }
            let seconds = median(times);
            if name == "seq" {
                reference = seconds;
            }
            report.rows.push(BenchRow {
                backend: name.clone(),
                particles: n,
                seconds,
                speedup: if name == "seq" { 1.0 } else { reference / seconds },
            });
        }
    }
    Ok(report)
}
