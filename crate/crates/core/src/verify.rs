//! Benchmark linear system and comparisons of the particle sampler against
//! closed-form answers.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::Result;
use crate::girf::{girf_fixed, GirfMode, GirfSpec, RecursiveNoise};
use crate::model::Snapshot;
use crate::oracle::{
    closed_form_conditional_forecast, closed_form_irf, GaussianPath, LinearSystem,
};
use crate::pgas::{Forecaster, PgasConfig, Trajectory};
use crate::restrictions::{RestrictionBlock, RestrictionSet, HARD_VARIANCE};
use crate::sampling::{derive_seed, quantile, rng_from_seed, weighted_quantile};

pub const BENCHMARK_NAMES: [&str; 5] = ["GDP", "CPI", "PAYEMS", "FEDFUNDS", "SP500"];
pub const BENCHMARK_HORIZON: usize = 20;
pub const BENCHMARK_T: usize = 1000;
const BENCHMARK_BURN: usize = 500;

/// Quantiles compared against the oracle: the median and the 68% band.
pub const BAND_QUANTILES: [f64; 3] = [0.16, 0.5, 0.84];

/// Five-variable, five-lag system resembling a quarterly macro VAR: output,
/// inflation and payroll growth, a persistent policy rate and stock returns.
pub fn benchmark_system() -> LinearSystem {
    let n = 5;
    let p = 5;
    let lag1 = [
        [0.25, -0.05, 0.30, -0.30, 0.03],
        [0.05, 0.55, 0.05, 0.10, 0.00],
        [0.15, -0.03, 0.55, -0.15, 0.02],
        [0.02, 0.03, 0.03, 1.05, 0.003],
        [0.30, -0.40, 0.20, -1.00, 0.05],
    ];
    let own2 = [0.10, 0.15, 0.10, -0.12, 0.0];
    let mut a = DMatrix::zeros(n, n * p);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = lag1[i][j];
        }
        a[(i, n + i)] = own2[i];
        for l in 3..=p {
            a[(i, (l - 1) * n + i)] = 0.05 / (l * l) as f64;
        }
    }
    let sd = [3.0, 1.8, 1.6, 0.5, 15.0];
    let corr = [
        [1.0, 0.1, 0.6, 0.2, 0.3],
        [0.1, 1.0, 0.1, 0.15, -0.1],
        [0.6, 0.1, 1.0, 0.25, 0.2],
        [0.2, 0.15, 0.25, 1.0, 0.1],
        [0.3, -0.1, 0.2, 0.1, 1.0],
    ];
    let sigma = DMatrix::from_fn(n, n, |i, j| corr[i][j] * sd[i] * sd[j]);
    let target_mean = DVector::from_vec(vec![2.5, 3.0, 1.5, 4.0, 7.0]);
    let mut m = DMatrix::identity(n, n);
    for l in 0..p {
        m -= a.columns(l * n, n);
    }
    let intercept = m * &target_mean;
    let x_init = DVector::from_fn(n * p, |r, _| target_mean[r % n]);
    LinearSystem::new(a, intercept, sigma, x_init).expect("benchmark system is well formed")
}

/// The simulated sample, forecast origin and restriction set of the benchmark.
pub struct BenchmarkFixture {
    pub system: LinearSystem,
    pub data: DMatrix<f64>,
    pub restrictions: RestrictionSet,
    pub unconditional_sd: DVector<f64>,
    pub unconditional_mean: DVector<f64>,
}

impl BenchmarkFixture {
    /// Simulates `T = 1000` observations and sets up three hard restrictions:
    /// the policy rate one unconditional SD above its last value at `h = 1`,
    /// inflation at its unconditional mean for `h = 9..=12`, and output one
    /// unconditional SD above its last value at `h = 20`.
    pub fn new(seed: u64) -> Result<Self> {
        let mut system = benchmark_system();
        let mut rng = rng_from_seed(seed);
        let data = system.simulate(BENCHMARK_T, BENCHMARK_BURN, &mut rng)?;
        let (n, p) = (system.n(), system.p());
        let t = data.nrows();
        system.x_init = DVector::from_fn(n * p, |r, _| data[(t - 1 - r / n, r % n)]);
        let sd = system.unconditional_sd()?;
        let mean = system.unconditional_mean()?;
        let last = data.row(t - 1).transpose();
        let mut set = RestrictionSet::empty(n, BENCHMARK_HORIZON);
        set.add_obs(
            1,
            RestrictionBlock::pin(n, 3, last[3] + sd[3], HARD_VARIANCE)?,
        )?;
        for h in 9..=12 {
            set.add_obs(h, RestrictionBlock::pin(n, 1, mean[1], HARD_VARIANCE)?)?;
        }
        set.add_obs(
            20,
            RestrictionBlock::pin(n, 0, last[0] + sd[0], HARD_VARIANCE)?,
        )?;
        Ok(Self {
            system,
            data,
            restrictions: set,
            unconditional_sd: sd,
            unconditional_mean: mean,
        })
    }

    pub fn oracle(&self) -> Result<GaussianPath> {
        closed_form_conditional_forecast(&self.system, &self.restrictions, BENCHMARK_HORIZON)
    }
}

/// How PGAS output is turned into predictive quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileSource {
    /// One traced-back path per draw.
    Paths,
    /// Every particle of every draw, weighted by its smoothing weight.
    Ensemble,
}

/// Largest gaps between PGAS and oracle quantiles, in unconditional SDs.
#[derive(Debug, Clone, Serialize)]
pub struct ForecastComparison {
    pub particles: usize,
    pub draws: usize,
    pub seconds: f64,
    pub max_deviation_paths: f64,
    pub max_deviation_ensemble: f64,
    /// Median over all compared quantiles, traced paths.
    pub median_deviation_paths: f64,
    /// Largest `|R y - r|` over hard-restricted coordinates of all retained paths.
    pub max_restriction_gap: f64,
    /// `(source, horizon, variable, quantile, pgas, oracle, deviation)`
    pub rows: Vec<(QuantileSource, usize, usize, f64, f64, f64, f64)>,
}

/// Runs `burn + draws` PGAS passes at fixed parameters and compares predictive
/// quantiles with the closed-form conditional forecast.
pub fn compare_conditional_forecast(
    fixture: &BenchmarkFixture,
    cfg: PgasConfig,
    draws: usize,
    burn: usize,
    seed: u64,
) -> Result<ForecastComparison> {
    let oracle = fixture.oracle()?;
    let snap = Snapshot::new(&fixture.system, fixture.system.sigma.clone())?;
    let mut forecaster = Forecaster::new(PgasConfig {
        keep_ensemble: true,
        ..cfg
    });
    let start = Instant::now();
    let mut kept: Vec<Trajectory> = Vec::with_capacity(draws);
    for m in 0..burn + draws {
        let mut rng = rng_from_seed(derive_seed(seed, m as u64));
        let t = forecaster.draw(
            &fixture.system.x_init,
            &fixture.restrictions,
            &snap,
            &mut rng,
        )?;
        if m >= burn {
            kept.push(t);
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let n = fixture.system.n();
    let mut rows = Vec::new();
    let mut max_paths: f64 = 0.0;
    let mut max_ens: f64 = 0.0;
    for h in 1..=BENCHMARK_HORIZON {
        for i in 0..n {
            let paths: Vec<f64> = kept.iter().map(|t| t.path[(h - 1, i)]).collect();
            let mut ens_v = Vec::with_capacity(draws * cfg.particles);
            let mut ens_w = Vec::with_capacity(draws * cfg.particles);
            for t in &kept {
                let e = t.ensemble.as_ref().expect("ensemble kept");
                ens_v.extend(e.particles[h - 1].row(i).iter().copied());
                ens_w.extend(e.weights[h - 1].iter().copied());
            }
            for &q in &BAND_QUANTILES {
                let truth = oracle.quantile(h, i, q);
                let sd = fixture.unconditional_sd[i];
                let qp = quantile(&paths, q);
                let dp = (qp - truth).abs() / sd;
                let qe = weighted_quantile(&ens_v, &ens_w, q);
                let de = (qe - truth).abs() / sd;
                max_paths = max_paths.max(dp);
                max_ens = max_ens.max(de);
                rows.push((QuantileSource::Paths, h, i, q, qp, truth, dp));
                rows.push((QuantileSource::Ensemble, h, i, q, qe, truth, de));
            }
        }
    }
    let mut dev: Vec<f64> = rows
        .iter()
        .filter(|r| r.0 == QuantileSource::Paths)
        .map(|r| r.6)
        .collect();
    dev.sort_by(f64::total_cmp);
    let median_deviation_paths = dev[dev.len() / 2];
    let mut gap: f64 = 0.0;
    for h in 1..=BENCHMARK_HORIZON {
        if let Some(o) = &fixture.restrictions.at(h).obs {
            for t in &kept {
                let y = t.path.row(h - 1).transpose();
                gap = gap.max((&o.r_mat * y - &o.r).amax());
            }
        }
    }
    Ok(ForecastComparison {
        particles: cfg.particles,
        draws,
        seconds,
        max_deviation_paths: max_paths,
        max_deviation_ensemble: max_ens,
        median_deviation_paths,
        max_restriction_gap: gap,
        rows,
    })
}

/// Largest absolute errors of simulated impulse responses against `d A^h beta_0`.
#[derive(Debug, Clone, Serialize)]
pub struct IrfComparison {
    pub shock: usize,
    pub draws: usize,
    /// Particle sampler, all other impact shocks pinned to zero.
    pub pgas_expectation: f64,
    /// Particle sampler, other impact shocks free.
    pub pgas_simulation: f64,
    /// Recursive simulation with shared random numbers.
    pub recursive_shared: f64,
    /// Recursive simulation with independent random numbers: largest error of
    /// the across-draw mean, in standard errors.
    pub recursive_independent_z: f64,
}

pub fn compare_irf(
    system: &LinearSystem,
    shock: usize,
    particles: usize,
    draws: usize,
    seed: u64,
) -> Result<IrfComparison> {
    let snap = Snapshot::new(system, system.sigma.clone())?;
    let truth = closed_form_irf(system, shock, 1.0, BENCHMARK_HORIZON)?;
    let cfg = PgasConfig {
        particles,
        ..Default::default()
    };
    let x = [system.x_init.clone()];
    let max_err = |spec: &GirfSpec, draws: usize| -> Result<f64> {
        let res = girf_fixed(&snap, &x, spec, &cfg, draws, seed)?;
        Ok(res
            .delta
            .iter()
            .map(|d| (&d[0][0] - &truth).amax())
            .fold(0.0, f64::max))
    };
    let base = GirfSpec::sgirf(shock, vec![1.0], BENCHMARK_HORIZON);
    let pgas_expectation = max_err(
        &GirfSpec {
            pin_other_shocks: true,
            ..base.clone()
        },
        draws,
    )?;
    let pgas_simulation = max_err(&base, draws)?;
    let recursive_shared = max_err(
        &GirfSpec {
            mode: GirfMode::Recursive {
                noise: RecursiveNoise::Shared,
            },
            ..base.clone()
        },
        draws,
    )?;
    let indep = GirfSpec {
        mode: GirfMode::Recursive {
            noise: RecursiveNoise::Independent,
        },
        ..base
    };
    let res = girf_fixed(&snap, &x, &indep, &cfg, draws, seed)?;
    let (m, se) = (res.mean(0, 0), res.mean_se(0, 0));
    let mut z: f64 = 0.0;
    for h in 1..BENCHMARK_HORIZON {
        for i in 0..system.n() {
            z = z.max((m[(h, i)] - truth[(h, i)]).abs() / se[(h, i)]);
        }
    }
    Ok(IrfComparison {
        shock,
        draws,
        pgas_expectation,
        pgas_simulation,
        recursive_shared,
        recursive_independent_z: z,
    })
}

/// Wall time of `draws` conditional-forecast draws for each particle count.
pub fn runtime_table(
    fixture: &BenchmarkFixture,
    particles: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<ForecastComparison>> {
    particles
        .iter()
        .map(|&v| {
            compare_conditional_forecast(
                fixture,
                PgasConfig {
                    particles: v,
                    ..Default::default()
                },
                draws,
                0,
                seed,
            )
        })
        .collect()
}
