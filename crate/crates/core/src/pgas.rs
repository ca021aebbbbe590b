//! Particle Gibbs with ancestor sampling over forecast paths `y_{tau+1..tau+H}`.
//!
//! Particles are proposed from the optimal restriction-conditional Gaussian
//! and weighted by the predictive density of the restriction. Index `V - 1`
//! holds the reference trajectory when there is one.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Panel;
use crate::error::{Error, Result};
use crate::gibbs::{ChainTask, ModelState};
use crate::model::{OutlierForecast, Snapshot};
use crate::restrictions::{HorizonProposal, RestrictionSet, RestrictionSource};
use crate::sampling::{
    categorical_from_uniform, derive_seed, normalize_log_weights, rng_from_seed, ChainRng,
};

/// How the reference particle's ancestor is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AncestorWeights {
    /// Every future density of the reference path that depends on the
    /// candidate ancestor: the `p` transition terms it enters through the lag
    /// stack and the matching shock-restriction terms.
    #[default]
    Exact,
    /// Only the one-step transition density of the reference's next value.
    OneStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgasConfig {
    pub particles: usize,
    #[serde(default)]
    pub ancestor_weights: AncestorWeights,
    /// Keep every particle with its smoothing weight in the returned trajectory.
    #[serde(default)]
    pub keep_ensemble: bool,
}

impl Default for PgasConfig {
    fn default() -> Self {
        Self {
            particles: 10,
            ancestor_weights: AncestorWeights::Exact,
            keep_ensemble: false,
        }
    }
}

/// All particles of one pass with their smoothing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    /// Per horizon, `n x V`.
    pub particles: Vec<DMatrix<f64>>,
    /// Per horizon, `V` weights summing to one.
    pub weights: Vec<Vec<f64>>,
}

/// One forecast path with the smoothing-weight expectation of every horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `H x n`
    pub path: DMatrix<f64>,
    /// Error scales `s_{tau+h}` along the path.
    pub scales: Vec<f64>,
    /// `H x n`
    pub smoothed_mean: DMatrix<f64>,
    pub ensemble: Option<WeightedEnsemble>,
}

impl Trajectory {
    /// A bare path with unit scales, e.g. a fixed reference.
    pub fn from_path(path: DMatrix<f64>) -> Self {
        let (h, n) = path.shape();
        Self {
            path,
            scales: vec![1.0; h],
            smoothed_mean: DMatrix::zeros(h, n),
            ensemble: None,
        }
    }
}

/// Proposals for one horizon, one per outlier scale in use.
struct HorizonCache {
    by_scale: Vec<Option<HorizonProposal>>,
}

impl HorizonCache {
    fn get(
        &mut self,
        h: usize,
        s: f64,
        set: &RestrictionSet,
        model: &Snapshot,
    ) -> Result<&HorizonProposal> {
        let idx = s as usize - 1;
        if self.by_scale.len() <= idx {
            self.by_scale.resize_with(idx + 1, || None);
        }
        if self.by_scale[idx].is_none() {
            let sigma = &model.sigma * (s * s);
            let p =
                HorizonProposal::new(set.at(h), &sigma, Some(&model.factor)).map_err(
                    |e| match e {
                        Error::Numerical(m) => Error::DegenerateRestriction {
                            horizon: h,
                            message: m,
                        },
                        other => other,
                    },
                )?;
            self.by_scale[idx] = Some(p);
        }
        Ok(self.by_scale[idx].as_ref().unwrap())
    }
}

/// Particle states, weights and ancestry for horizons `1..=H` (stored 0-based).
pub struct ParticleSystem {
    v: usize,
    n: usize,
    k: usize,
    horizon: usize,
    reference: Option<Trajectory>,
    ancestor_weights: AncestorWeights,
    x_init: DVector<f64>,
    particles: Vec<DMatrix<f64>>,
    lags: Vec<DMatrix<f64>>,
    means: Vec<DMatrix<f64>>,
    scales: Vec<Vec<f64>>,
    log_w: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    ancestors: Vec<Vec<usize>>,
    cache: Vec<HorizonCache>,
    keep_ensemble: bool,
    chol_inv: DMatrix<f64>,
    done: usize,
}

fn draw_scale<R: Rng + ?Sized>(o: &Option<OutlierForecast>, rng: &mut R) -> f64 {
    match o {
        None => 1.0,
        Some(o) => {
            let u: f64 = rng.random();
            if u < 1.0 - o.p_out {
                1.0
            } else {
                let m = (o.s_bar - 1) as f64;
                (2.0 + ((u - (1.0 - o.p_out)) / o.p_out * m).floor()).min(o.s_bar as f64)
            }
        }
    }
}

impl ParticleSystem {
    /// Draws the horizon-1 particles; the last slot copies the reference if given.
    pub fn initialize<R: Rng + ?Sized>(
        x_init: &DVector<f64>,
        reference: Option<&Trajectory>,
        restrictions: &RestrictionSet,
        model: &Snapshot,
        cfg: &PgasConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let n = model.n();
        let k = model.mean.n_inputs();
        let horizon = restrictions.horizon();
        let v = cfg.particles;
        if horizon == 0 {
            return Err(Error::config("forecast horizon must be positive"));
        }
        if x_init.len() != k || restrictions.n() != n {
            return Err(Error::dimension(
                "initial lag vector or restrictions do not match the model",
            ));
        }
        if v == 0 || (reference.is_some() && v < 2) {
            return Err(Error::config(
                "need at least one particle, and two when a reference is kept",
            ));
        }
        if let Some(r) = reference {
            if r.path.shape() != (horizon, n) {
                return Err(Error::dimension("reference trajectory has the wrong shape"));
            }
        }
        let chol_inv = crate::linalg::invert_lower(&model.sigma_chol)?;
        let mut sys = Self {
            v,
            n,
            k,
            horizon,
            reference: reference.cloned(),
            ancestor_weights: cfg.ancestor_weights,
            x_init: x_init.clone(),
            particles: Vec::with_capacity(horizon),
            lags: Vec::with_capacity(horizon),
            means: Vec::with_capacity(horizon),
            scales: Vec::with_capacity(horizon),
            log_w: Vec::with_capacity(horizon),
            w: Vec::with_capacity(horizon),
            ancestors: Vec::with_capacity(horizon),
            cache: (0..horizon)
                .map(|_| HorizonCache {
                    by_scale: Vec::new(),
                })
                .collect(),
            keep_ensemble: cfg.keep_ensemble,
            chol_inv,
            done: 0,
        };
        let mu = model.mean.predict(x_init.as_slice());
        let parents_mu = DMatrix::from_columns(&[mu]);
        let parents_lag = DMatrix::from_columns(std::slice::from_ref(x_init));
        let ancestors = vec![0; v];
        sys.propagate(
            1,
            &ancestors,
            &parents_mu,
            &parents_lag,
            restrictions,
            model,
            rng,
        )?;
        Ok(sys)
    }

    pub fn particles(&self) -> usize {
        self.v
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn has_reference(&self) -> bool {
        self.reference.is_some()
    }

    fn fresh(&self) -> usize {
        if self.reference.is_some() {
            self.v - 1
        } else {
            self.v
        }
    }

    /// Particle `v` at 1-based horizon `h`.
    pub fn particle(&self, h: usize, v: usize) -> DVector<f64> {
        self.particles[h - 1].column(v).into_owned()
    }

    /// Lag stack `x_{tau+h+1}` of particle `v`.
    pub fn lag_stack(&self, h: usize, v: usize) -> DVector<f64> {
        self.lags[h - 1].column(v).into_owned()
    }

    pub fn weights(&self, h: usize) -> &[f64] {
        &self.w[h - 1]
    }

    pub fn log_weights(&self, h: usize) -> &[f64] {
        &self.log_w[h - 1]
    }

    pub fn ancestors(&self, h: usize) -> &[usize] {
        &self.ancestors[h - 1]
    }

    /// Draws the particles of horizon `h` from parents given by `ancestors`
    /// (indices into the parent matrices) and weights them.
    #[allow(clippy::too_many_arguments)]
    fn propagate<R: Rng + ?Sized>(
        &mut self,
        h: usize,
        ancestors: &[usize],
        parent_mu: &DMatrix<f64>,
        parent_lag: &DMatrix<f64>,
        restrictions: &RestrictionSet,
        model: &Snapshot,
        rng: &mut R,
    ) -> Result<()> {
        let (n, k, v) = (self.n, self.k, self.v);
        let fresh = self.fresh();
        let mut ys = DMatrix::zeros(n, v);
        let mut lags = DMatrix::zeros(k, v);
        let mut mus = DMatrix::zeros(n, v);
        let mut scales = vec![1.0; v];
        let mut log_w = vec![0.0; v];
        for p in 0..v {
            let a = ancestors[p];
            let mu: DVector<f64> = parent_mu.column(a).into_owned();
            let (y, s) = if p < fresh {
                let s = draw_scale(&model.future_outliers, rng);
                let prop = self.cache[h - 1].get(h, s, restrictions, model)?;
                (prop.draw(&mu, rng), s)
            } else {
                let r = self.reference.as_ref().unwrap();
                (r.path.row(h - 1).transpose(), r.scales[h - 1])
            };
            let prop = self.cache[h - 1].get(h, s, restrictions, model)?;
            log_w[p] = prop.log_weight(&mu);
            lags.view_mut((0, p), (n, 1)).copy_from(&y);
            if k > n {
                lags.view_mut((n, p), (k - n, 1))
                    .copy_from(&parent_lag.view((0, a), (k - n, 1)));
            }
            ys.set_column(p, &y);
            mus.set_column(p, &mu);
            scales[p] = s;
        }
        let w = normalize_log_weights(&log_w).map_err(|e| Error::DegenerateRestriction {
            horizon: h,
            message: e.to_string(),
        })?;
        self.particles.push(ys);
        self.lags.push(lags);
        self.means.push(mus);
        self.scales.push(scales);
        self.log_w.push(log_w);
        self.w.push(w);
        self.ancestors.push(ancestors.to_vec());
        self.done = h;
        Ok(())
    }

    /// `-0.5 |L^{-1}(y - mu)|^2 / s^2`, the part of `log N(y; mu, s^2 Sigma)` that varies with `mu`.
    fn transition_kernel(&self, y: &DVector<f64>, mu: &DVector<f64>, s: f64) -> f64 {
        let z = &self.chol_inv * (y - mu);
        -0.5 * z.norm_squared() / (s * s)
    }

    /// Log ancestor-sampling weight of parent `a` (at horizon `h - 1`) for the reference.
    fn ancestor_log_weight(
        &mut self,
        h: usize,
        a: usize,
        cand_mu: &DVector<f64>,
        restrictions: &RestrictionSet,
        model: &Snapshot,
    ) -> Result<f64> {
        let reference = self.reference.clone().expect("reference present");
        let (n, k) = (self.n, self.k);
        let y_h = reference.path.row(h - 1).transpose();
        let s_h = reference.scales[h - 1];
        let mut total = self.log_w[h - 2][a] + self.transition_kernel(&y_h, cand_mu, s_h);
        if self.ancestor_weights == AncestorWeights::OneStep {
            return Ok(total);
        }
        total += self.cache[h - 1]
            .get(h, s_h, restrictions, model)?
            .shock_log_density(&y_h, cand_mu);
        let p = k / n;
        let mut x: DVector<f64> = self.lags[h - 2].column(a).into_owned();
        for j in (h + 1)..=(h + p - 1).min(self.horizon) {
            let prev = reference.path.row(j - 2).transpose();
            let mut next = DVector::zeros(k);
            next.rows_mut(0, n).copy_from(&prev);
            next.rows_mut(n, k - n).copy_from(&x.rows(0, k - n));
            x = next;
            let mu = model.mean.predict(x.as_slice());
            let y_j = reference.path.row(j - 1).transpose();
            let s_j = reference.scales[j - 1];
            total += self.transition_kernel(&y_j, &mu, s_j);
            total += self.cache[j - 1]
                .get(j, s_j, restrictions, model)?
                .shock_log_density(&y_j, &mu);
        }
        Ok(total)
    }

    /// Resamples ancestors and propagates to horizon `h >= 2`.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        h: usize,
        restrictions: &RestrictionSet,
        model: &Snapshot,
        rng: &mut R,
    ) -> Result<()> {
        if h < 2 || h != self.done + 1 || h > self.horizon {
            return Err(Error::config(format!(
                "step {h} out of order (last completed {})",
                self.done
            )));
        }
        let (n, v) = (self.n, self.v);
        let parents = &self.lags[h - 2];
        let mut cand_mu = DMatrix::zeros(n, v);
        for a in 0..v {
            let mu = model.mean.predict(parents.column(a).as_slice());
            cand_mu.set_column(a, &mu);
        }
        let fresh = self.fresh();
        let mut ancestors = vec![0; v];
        for slot in ancestors.iter_mut().take(fresh) {
            *slot = categorical_from_uniform(&self.w[h - 2], rng.random::<f64>());
        }
        if self.reference.is_some() {
            let mut pi = vec![0.0; v];
            for (a, slot) in pi.iter_mut().enumerate() {
                let mu: DVector<f64> = cand_mu.column(a).into_owned();
                *slot = self.ancestor_log_weight(h, a, &mu, restrictions, model)?;
            }
            let pw = normalize_log_weights(&pi).map_err(|e| Error::DegenerateRestriction {
                horizon: h,
                message: format!("ancestor weights: {e}"),
            })?;
            ancestors[v - 1] = categorical_from_uniform(&pw, rng.random::<f64>());
        }
        let parent_lag = self.lags[h - 2].clone();
        self.propagate(
            h,
            &ancestors,
            &cand_mu,
            &parent_lag,
            restrictions,
            model,
            rng,
        )
    }

    /// Backward smoothing weights for every horizon.
    pub fn smoothing_weights(&self) -> Vec<Vec<f64>> {
        let hmax = self.done;
        let mut s = vec![vec![0.0; self.v]; hmax];
        s[hmax - 1] = self.w[hmax - 1].clone();
        for h in (1..hmax).rev() {
            let mut acc = vec![0.0; self.v];
            for j in 0..self.v {
                acc[self.ancestors[h][j]] += s[h][j];
            }
            let total: f64 = acc.iter().sum();
            s[h - 1] = acc.into_iter().map(|x| x / total).collect();
        }
        s
    }

    /// Traces one path back from the final weights and computes smoothed expectations.
    pub fn finalize<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Trajectory> {
        if self.done != self.horizon {
            return Err(Error::config(format!(
                "finalize after {} of {} horizons",
                self.done, self.horizon
            )));
        }
        let (n, hmax) = (self.n, self.horizon);
        let mut path = DMatrix::zeros(hmax, n);
        let mut scales = vec![1.0; hmax];
        let mut idx = categorical_from_uniform(&self.w[hmax - 1], rng.random::<f64>());
        for h in (1..=hmax).rev() {
            path.set_row(h - 1, &self.particles[h - 1].column(idx).transpose());
            scales[h - 1] = self.scales[h - 1][idx];
            idx = self.ancestors[h - 1][idx];
        }
        let sw = self.smoothing_weights();
        let mut smoothed = DMatrix::zeros(hmax, n);
        for h in 0..hmax {
            let m = &self.particles[h] * DVector::from_column_slice(&sw[h]);
            smoothed.set_row(h, &m.transpose());
        }
        let ensemble = self.keep_ensemble.then(|| WeightedEnsemble {
            particles: self.particles.clone(),
            weights: sw,
        });
        Ok(Trajectory {
            path,
            scales,
            smoothed_mean: smoothed,
            ensemble,
        })
    }

    /// Initial lag vector this system was started from.
    pub fn x_init(&self) -> &DVector<f64> {
        &self.x_init
    }
}

/// One full conditional-SMC pass.
pub fn run_pgas<R: Rng + ?Sized>(
    x_init: &DVector<f64>,
    reference: Option<&Trajectory>,
    restrictions: &RestrictionSet,
    model: &Snapshot,
    cfg: &PgasConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut sys = ParticleSystem::initialize(x_init, reference, restrictions, model, cfg, rng)?;
    for h in 2..=restrictions.horizon() {
        sys.step(h, restrictions, model, rng)?;
    }
    sys.finalize(rng)
}

/// Keeps the previous draw as the reference for the next one.
#[derive(Debug, Clone, Default)]
pub struct Forecaster {
    pub cfg: PgasConfig,
    reference: Option<Trajectory>,
}

impl Forecaster {
    pub fn new(cfg: PgasConfig) -> Self {
        Self {
            cfg,
            reference: None,
        }
    }

    pub fn reference(&self) -> Option<&Trajectory> {
        self.reference.as_ref()
    }

    pub fn reset(&mut self) {
        self.reference = None;
    }

    /// Draws a path; the very first call runs without a reference (every particle fresh).
    pub fn draw<R: Rng + ?Sized>(
        &mut self,
        x_init: &DVector<f64>,
        restrictions: &RestrictionSet,
        model: &Snapshot,
        rng: &mut R,
    ) -> Result<Trajectory> {
        let traj = run_pgas(
            x_init,
            self.reference.as_ref(),
            restrictions,
            model,
            &self.cfg,
            rng,
        )?;
        self.reference = Some(traj.clone());
        Ok(traj)
    }
}

/// Conditional forecasts from the end of the sample at every retained sweep.
///
/// With `augment` set, the path drawn after each sweep is appended to the data
/// for the next one, so the parameters are updated given the restrictions.
pub struct ForecastTask {
    pub restrictions: Box<dyn RestrictionSource>,
    pub horizon: usize,
    pub augment: bool,
    pub simulate_future_outliers: bool,
    forecaster: Forecaster,
    latest: Option<Trajectory>,
}

impl ForecastTask {
    pub fn new(
        restrictions: Box<dyn RestrictionSource>,
        horizon: usize,
        cfg: PgasConfig,
        augment: bool,
    ) -> Self {
        Self {
            restrictions,
            horizon,
            augment,
            simulate_future_outliers: false,
            forecaster: Forecaster::new(cfg),
            latest: None,
        }
    }

    fn draw(
        &mut self,
        state: &ModelState,
        panel: &Panel,
        rng: &mut ChainRng,
    ) -> Result<Trajectory> {
        let snap = state.snapshot(self.simulate_future_outliers)?;
        let set = self.restrictions.resolve(&snap.sigma, self.horizon)?;
        self.forecaster
            .draw(&panel.final_lag_vector(), &set, &snap, rng)
    }
}

impl ChainTask for ForecastTask {
    type Output = Trajectory;

    fn augment(
        &mut self,
        state: &ModelState,
        panel: &Panel,
        rng: &mut ChainRng,
    ) -> Result<Option<DMatrix<f64>>> {
        if !self.augment {
            return Ok(None);
        }
        let t = self.draw(state, panel, rng)?;
        let path = t.path.clone();
        self.latest = Some(t);
        Ok(Some(path))
    }

    fn record(
        &mut self,
        state: &ModelState,
        panel: &Panel,
        rng: &mut ChainRng,
    ) -> Result<Trajectory> {
        match self.latest.take() {
            Some(t) if self.augment => Ok(t),
            _ => self.draw(state, panel, rng),
        }
    }
}

/// Runs one PGAS draw per snapshot, carrying the reference across snapshots.
///
/// Draw `m` uses an RNG seeded from `(seed, m)`.
pub fn forecast<'a, I>(
    snapshots: I,
    x_init: &DVector<f64>,
    restrictions: &dyn RestrictionSource,
    horizon: usize,
    cfg: &PgasConfig,
    seed: u64,
) -> Result<Vec<Trajectory>>
where
    I: IntoIterator<Item = Snapshot<'a>>,
{
    let mut f = Forecaster::new(*cfg);
    let mut out = Vec::new();
    for (m, snap) in snapshots.into_iter().enumerate() {
        let set = restrictions.resolve(&snap.sigma, horizon)?;
        let mut rng: ChainRng = rng_from_seed(derive_seed(seed, m as u64));
        out.push(f.draw(x_init, &set, &snap, &mut rng)?);
    }
    Ok(out)
}
