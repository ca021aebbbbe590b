//! Gibbs sampler over the conditional mean, `Sigma`, its scale hyperparameters
//! and the outlier scales, with optional data augmentation by restricted
//! forecast paths.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bart::{ForestSet, MoveProbs, MoveStats, TreePrior};
use crate::covariance::{
    sample_outlier_prob, sample_outliers, sample_scale_hyper, sample_sigma, CovarianceState,
    HyperShape, OutlierState,
};
use crate::data::Panel;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize};
use crate::linear::{sample_global_scale, sample_var_equation, LinearBackend};
use crate::model::{ConditionalMean, OutlierForecast, Snapshot};
use crate::sampling::{derive_seed, rng_from_seed, ChainRng};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Bart,
    Linear,
}

/// Prior hyperparameters shared by both backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Leaf prior calibration constant.
    pub leaf_k: f64,
    pub nu: f64,
    /// `A_j`, one value for every variable.
    pub a_scale: f64,
    pub s_bar: u32,
    pub a_p: f64,
    pub b_p: f64,
    pub hyper_shape: HyperShape,
    /// Linear backend only.
    pub intercept: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            beta: 2.0,
            leaf_k: 1.96,
            nu: 2.0,
            a_scale: 10.0,
            s_bar: 6,
            a_p: 1.0,
            b_p: 50.0,
            hyper_shape: HyperShape::Derived,
            intercept: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_burn: usize,
    pub n_save: usize,
    pub thin: usize,
    pub seed: u64,
    pub backend: Backend,
    pub heteroskedastic: bool,
    pub p: usize,
    /// Trees per equation.
    pub trees: usize,
    pub priors: PriorConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_burn: 2000,
            n_save: 3000,
            thin: 1,
            seed: 0,
            backend: Backend::Bart,
            heteroskedastic: true,
            p: 5,
            trees: 250,
            priors: PriorConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_save == 0 || self.thin == 0 {
            return Err(Error::config("n_save and thin must be at least 1"));
        }
        if self.p == 0 || self.trees == 0 {
            return Err(Error::config("p and the number of trees must be positive"));
        }
        TreePrior::new(self.priors.alpha, self.priors.beta, MoveProbs::default())?;
        if !(self.priors.leaf_k > 0.0) || !(self.priors.nu > 0.0) || !(self.priors.a_scale > 0.0) {
            return Err(Error::config("leaf_k, nu and a_scale must be positive"));
        }
        if self.priors.s_bar < 2 || !(self.priors.a_p > 0.0) || !(self.priors.b_p > 0.0) {
            return Err(Error::config(
                "outlier prior needs s_bar >= 2 and positive a_p, b_p",
            ));
        }
        Ok(())
    }

    pub fn total_sweeps(&self) -> usize {
        self.n_burn + self.n_save * self.thin
    }

    pub fn is_retained(&self, sweep: usize) -> bool {
        sweep >= self.n_burn && (sweep - self.n_burn + 1) % self.thin == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MeanBackend {
    Bart(ForestSet),
    Linear(LinearBackend),
}

impl ConditionalMean for MeanBackend {
    fn n_vars(&self) -> usize {
        match self {
            MeanBackend::Bart(f) => f.n_vars(),
            MeanBackend::Linear(l) => l.coef.n_vars(),
        }
    }

    fn n_inputs(&self) -> usize {
        match self {
            MeanBackend::Bart(f) => f.n_inputs(),
            MeanBackend::Linear(l) => l.coef.n_inputs(),
        }
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            MeanBackend::Bart(f) => f.predict_into(x, out),
            MeanBackend::Linear(l) => l.coef.predict_into(x, out),
        }
    }
}

/// All parameters and latent variables of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub mean: MeanBackend,
    pub cov: CovarianceState,
    pub outlier: OutlierState,
    pub heteroskedastic: bool,
    pub sweep: usize,
}

impl ModelState {
    /// Zero conditional mean, `Sigma` at the sample covariance of `y`, no outliers.
    pub fn initialize(cfg: &SamplerConfig, panel: &Panel) -> Result<Self> {
        cfg.validate()?;
        if panel.p != cfg.p {
            return Err(Error::config(format!(
                "panel has {} lags, configuration asks for {}",
                panel.p, cfg.p
            )));
        }
        let (t, n, k) = (panel.t(), panel.n(), panel.k());
        let pr = &cfg.priors;
        let mean = match cfg.backend {
            Backend::Bart => {
                let prior = TreePrior::new(pr.alpha, pr.beta, MoveProbs::default())?;
                MeanBackend::Bart(ForestSet::new(
                    &panel.y, &panel.x, cfg.trees, prior, pr.leaf_k,
                )?)
            }
            Backend::Linear => MeanBackend::Linear(LinearBackend::new(n, k, pr.intercept)),
        };
        let cov = CovarianceState::new(
            sample_covariance(&panel.y)?,
            pr.nu,
            vec![pr.a_scale; n],
            pr.hyper_shape,
        )?;
        let outlier = OutlierState::new(t, pr.s_bar, pr.a_p, pr.b_p)?;
        Ok(Self {
            mean,
            cov,
            outlier,
            heteroskedastic: cfg.heteroskedastic,
            sweep: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.cov.n()
    }

    /// Recomputes cached tree fits after the design rows changed.
    pub fn sync_design(&mut self, x: &DMatrix<f64>) {
        if let MeanBackend::Bart(f) = &mut self.mean {
            f.refresh(x);
        }
        self.outlier.resize(x.nrows());
    }

    /// `F(x_t)` for every row of `x`.
    pub fn fitted(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(x.nrows(), n);
        let mut row = vec![0.0; x.ncols()];
        let mut f = vec![0.0; n];
        for t in 0..x.nrows() {
            for (j, r) in row.iter_mut().enumerate() {
                *r = x[(t, j)];
            }
            self.mean.predict_into(&row, &mut f);
            for i in 0..n {
                out[(t, i)] = f[i];
            }
        }
        out
    }

    /// Parameters of the current sweep for forecasting, with recursive identification.
    pub fn snapshot(&self, simulate_future_outliers: bool) -> Result<Snapshot<'_>> {
        let outliers =
            (self.heteroskedastic && simulate_future_outliers).then_some(OutlierForecast {
                p_out: self.outlier.p_out,
                s_bar: self.outlier.s_bar,
            });
        Ok(Snapshot::new(&self.mean, self.cov.sigma().clone())?.with_future_outliers(outliers))
    }

    pub fn move_stats(&self) -> Option<&MoveStats> {
        match &self.mean {
            MeanBackend::Bart(f) => Some(&f.stats),
            MeanBackend::Linear(_) => None,
        }
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Checkpoint<'a> {
            version: u32,
            state: &'a ModelState,
        }
        Ok(serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION,
            state: self,
        })?)
    }

    /// Restores a checkpoint and rebuilds cached fits over `x`.
    pub fn from_checkpoint_json(s: &str, x: &DMatrix<f64>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Checkpoint {
            version: u32,
            state: ModelState,
        }
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {}",
                c.version
            )));
        }
        let mut state = c.state;
        if state.mean.n_inputs() != x.ncols() || state.n() != state.mean.n_vars() {
            return Err(Error::dimension("checkpoint does not match the data"));
        }
        let sigma = state.cov.sigma().clone();
        state.cov.set_sigma(sigma)?;
        state.sync_design(x);
        Ok(state)
    }
}

fn sample_covariance(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = y.nrows();
    if t < 2 {
        return Err(Error::InsufficientData(
            "at least two observations are needed".into(),
        ));
    }
    let mean = y.row_mean();
    let mut c = DMatrix::zeros(y.ncols(), y.ncols());
    for r in 0..t {
        let d = (y.row(r) - &mean).transpose();
        c += &d * d.transpose();
    }
    c /= (t - 1) as f64;
    if cholesky(&c).is_err() {
        let diag = c.diagonal().map(|v| v.max(1e-8));
        return Ok(DMatrix::from_diagonal(&diag));
    }
    Ok(symmetrize(&c))
}

/// Mean and variance of `y_i` given `y_{-i}` for errors with covariance `scale2 * Sigma`,
/// from the precision matrix `Sigma^{-1}`: returns `(mu_tilde, varsigma2)`.
pub fn equation_moments_from_precision(
    i: usize,
    y: &[f64],
    f: &[f64],
    precision: &DMatrix<f64>,
    scale2: f64,
) -> (f64, f64) {
    let pii = precision[(i, i)];
    let mut acc = 0.0;
    for j in 0..y.len() {
        if j != i {
            acc += precision[(i, j)] * (y[j] - f[j]);
        }
    }
    (-acc / pii, scale2 / pii)
}

/// `(mu_tilde_it, varsigma2_it)` for equation `i` under error covariance `sigma_t`.
pub fn conditional_equation_moments(
    i: usize,
    y: &[f64],
    f: &[f64],
    sigma_t: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let n = sigma_t.nrows();
    if y.len() != n || f.len() != n || i >= n {
        return Err(Error::dimension(
            "equation moments: y, F(x) and Sigma disagree",
        ));
    }
    let prec = symmetrize(&cholesky(sigma_t)?.inverse());
    Ok(equation_moments_from_precision(i, y, f, &prec, 1.0))
}

/// One sweep: every equation's mean, then `Sigma`, `a`, the outlier scales and
/// their probability.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut ModelState,
    panel: &Panel,
    rng: &mut R,
) -> Result<()> {
    let (t_len, n) = (panel.t(), panel.n());
    if state.n() != n || state.mean.n_inputs() != panel.k() {
        return Err(Error::dimension("state and panel disagree"));
    }
    if state.outlier.s.len() != t_len {
        state.sync_design(&panel.x);
    }
    let mut fit = state.fitted(&panel.x);
    let prec = state.cov.sigma_inv().clone();
    let scale2: Vec<f64> = state
        .outlier
        .s
        .iter()
        .map(|&s| (s as f64).powi(2))
        .collect();
    let mut target = vec![0.0; t_len];
    let mut variances = vec![0.0; t_len];
    let mut yrow = vec![0.0; n];
    let mut frow = vec![0.0; n];
    for i in 0..n {
        for t in 0..t_len {
            for j in 0..n {
                yrow[j] = panel.y[(t, j)];
                frow[j] = fit[(t, j)];
            }
            let (mu, v) = equation_moments_from_precision(i, &yrow, &frow, &prec, scale2[t]);
            target[t] = yrow[i] - mu;
            variances[t] = v;
        }
        match &mut state.mean {
            MeanBackend::Bart(set) => {
                let ForestSet {
                    forests,
                    prior,
                    ranges,
                    stats,
                } = set;
                forests[i].update(&panel.x, &target, &variances, prior, ranges, stats, rng)?;
                for (t, v) in forests[i].fit().iter().enumerate() {
                    fit[(t, i)] = *v;
                }
            }
            MeanBackend::Linear(lb) => {
                sample_var_equation(
                    i,
                    &panel.x,
                    &target,
                    &variances,
                    &mut lb.coef,
                    &mut lb.horseshoe,
                    rng,
                )?;
                let row: Vec<f64> = lb.coef.a.row(i).iter().copied().collect();
                let k = lb.coef.n_slopes();
                for t in 0..t_len {
                    let mut v = if lb.coef.intercept { row[k] } else { 0.0 };
                    for j in 0..k {
                        v += row[j] * panel.x[(t, j)];
                    }
                    fit[(t, i)] = v;
                }
            }
        }
    }
    if let MeanBackend::Linear(lb) = &mut state.mean {
        sample_global_scale(&lb.coef, &mut lb.horseshoe, rng)?;
    }

    let mut scaled = &panel.y - &fit;
    for t in 0..t_len {
        let s = state.outlier.s[t] as f64;
        scaled.row_mut(t).scale_mut(1.0 / s);
    }
    let sigma = sample_sigma(&scaled, &state.cov, rng)?;
    state.cov.set_sigma(sigma)?;
    state.cov.a = sample_scale_hyper(&state.cov, t_len, rng)?;

    if state.heteroskedastic {
        let o = &state.outlier;
        let s = sample_outliers(&panel.y, &fit, &state.cov, o.p_out, o.s_bar, rng)?;
        let p = sample_outlier_prob(&s, o.a_p, o.b_p, rng)?;
        state.outlier.s = s;
        state.outlier.p_out = p;
    }
    state.sweep += 1;
    Ok(())
}

/// Work attached to a chain: optional augmentation after every sweep and one
/// output per retained sweep.
pub trait ChainTask {
    type Output;

    /// Path `H x n` appended to the data for the next sweep, or `None`.
    fn augment(
        &mut self,
        _state: &ModelState,
        _panel: &Panel,
        _rng: &mut ChainRng,
    ) -> Result<Option<DMatrix<f64>>> {
        Ok(None)
    }

    fn record(
        &mut self,
        state: &ModelState,
        panel: &Panel,
        rng: &mut ChainRng,
    ) -> Result<Self::Output>;
}

/// Records nothing beyond what [`ChainSummary`] keeps.
pub struct NoTask;

impl ChainTask for NoTask {
    type Output = ();

    fn record(&mut self, _: &ModelState, _: &Panel, _: &mut ChainRng) -> Result<()> {
        Ok(())
    }
}

/// Retained parameter values of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterDraw {
    pub sigma: DMatrix<f64>,
    /// Linear backend only: `n x (k + 1)` with the intercept last when present.
    pub coefficients: Option<DMatrix<f64>>,
    pub outliers: Vec<u32>,
    pub p_out: f64,
}

/// Records parameters and one-step fitted values on the original sample.
pub struct ParameterTask;

impl ChainTask for ParameterTask {
    type Output = ParameterDraw;

    fn record(
        &mut self,
        state: &ModelState,
        panel: &Panel,
        _: &mut ChainRng,
    ) -> Result<ParameterDraw> {
        let t = panel.t();
        Ok(ParameterDraw {
            sigma: state.cov.sigma().clone(),
            coefficients: match &state.mean {
                MeanBackend::Linear(l) => Some(l.coef.a.clone()),
                MeanBackend::Bart(_) => None,
            },
            outliers: state.outlier.s[..t.min(state.outlier.s.len())].to_vec(),
            p_out: state.outlier.p_out,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ChainSummary<O> {
    pub outputs: Vec<O>,
    pub state: ModelState,
    pub seconds: f64,
}

/// Seed of the parameter stream; tasks use an independent stream so that
/// switching a task on or off leaves the parameter draws unchanged.
pub fn chain_seeds(seed: u64) -> (u64, u64) {
    (derive_seed(seed, 0), derive_seed(seed, 1))
}

/// Burn-in followed by `n_save` retained sweeps at thinning `thin`.
///
/// `panel` is the original sample; when the task augments, each sweep sees the
/// sample extended by the most recent path.
pub fn run_chain<T: ChainTask>(
    cfg: &SamplerConfig,
    panel: &Panel,
    initial: Option<ModelState>,
    task: &mut T,
) -> Result<ChainSummary<T::Output>> {
    cfg.validate()?;
    let start = Instant::now();
    let mut state = match initial {
        Some(s) => s,
        None => ModelState::initialize(cfg, panel)?,
    };
    let (ps, ts) = chain_seeds(cfg.seed);
    let mut prng = rng_from_seed(ps);
    let mut trng = rng_from_seed(ts);
    let mut augmented: Option<Panel> = None;
    let mut outputs = Vec::with_capacity(cfg.n_save);
    let total = cfg.total_sweeps();
    for sweep in 0..total {
        let wrap = |e: Error| Error::Sweep {
            sweep,
            source: Box::new(e),
        };
        let view = augmented.as_ref().unwrap_or(panel);
        if augmented.is_some() || state.outlier.s.len() != view.t() {
            state.sync_design(&view.x);
        }
        gibbs_sweep(&mut state, view, &mut prng).map_err(wrap)?;
        if let Some(path) = task.augment(&state, panel, &mut trng).map_err(wrap)? {
            augmented = Some(panel.augmented(&path).map_err(wrap)?);
        }
        if cfg.is_retained(sweep) {
            outputs.push(task.record(&state, panel, &mut trng).map_err(wrap)?);
        }
        if (sweep + 1) % 500 == 0 {
            log::info!("seed {}: sweep {}/{}", cfg.seed, sweep + 1, total);
        }
    }
    if augmented.is_some() {
        state.sync_design(&panel.x);
    }
    Ok(ChainSummary {
        outputs,
        state,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Posterior mean of the linear coefficients over retained draws.
pub fn mean_coefficients(draws: &[ParameterDraw]) -> Option<DMatrix<f64>> {
    let first = draws.first()?.coefficients.as_ref()?;
    let mut acc = DMatrix::zeros(first.nrows(), first.ncols());
    for d in draws {
        acc += d.coefficients.as_ref()?;
    }
    Some(acc / draws.len() as f64)
}

/// Share of retained draws flagging each period as an outlier.
pub fn outlier_frequency(draws: &[ParameterDraw]) -> DVector<f64> {
    let t = draws.first().map(|d| d.outliers.len()).unwrap_or(0);
    let mut f = DVector::zeros(t);
    for d in draws {
        for (i, &s) in d.outliers.iter().enumerate() {
            if s != 1 {
                f[i] += 1.0;
            }
        }
    }
    if !draws.is_empty() {
        f /= draws.len() as f64;
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TransformCode;
    use crate::oracle::LinearSystem;
    use crate::sampling::rng_from_seed;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn partitioned(i: usize, y: &[f64], f: &[f64], sigma: &DMatrix<f64>) -> (f64, f64) {
        let n = y.len();
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let s_oo = DMatrix::from_fn(n - 1, n - 1, |a, b| sigma[(others[a], others[b])]);
        let s_io = DMatrix::from_fn(1, n - 1, |_, b| sigma[(i, others[b])]);
        let d = DVector::from_fn(n - 1, |a, _| y[others[a]] - f[others[a]]);
        let inv = s_oo.try_inverse().unwrap();
        let mu = (&s_io * &inv * d)[(0, 0)];
        let v = sigma[(i, i)] - (&s_io * inv * s_io.transpose())[(0, 0)];
        (mu, v)
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        let m = DMatrix::from_fn(n, n, |_, _| crate::sampling::standard_normal(&mut rng));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn bivariate_moments() {
        let rho = 0.6;
        let s = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let (mu, v) = conditional_equation_moments(0, &[0.3, 2.0], &[0.1, 0.5], &s).unwrap();
        assert_relative_eq!(v, 1.0 - rho * rho, epsilon = 1e-12);
        assert_relative_eq!(mu, rho * 1.5, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_sigma_gives_zero_adjustment() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5, 3.0]));
        for i in 0..3 {
            let (mu, v) =
                conditional_equation_moments(i, &[1.0, -2.0, 4.0], &[0.0, 0.3, -1.0], &s).unwrap();
            assert_eq!(mu, 0.0);
            assert_relative_eq!(v, s[(i, i)], epsilon = 1e-14);
        }
    }

    #[test]
    fn singular_sigma_is_an_error() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(conditional_equation_moments(0, &[0.0, 0.0], &[0.0, 0.0], &s).is_err());
    }

    proptest! {
        #[test]
        fn moments_match_partitioned_gaussian(seed in 0u64..10_000, n in 2usize..6, i in 0usize..6) {
            let i = i % n;
            let sigma = random_spd(n, seed);
            let mut rng = rng_from_seed(seed + 1);
            let y: Vec<f64> = (0..n).map(|_| crate::sampling::standard_normal(&mut rng)).collect();
            let f: Vec<f64> = (0..n).map(|_| crate::sampling::standard_normal(&mut rng)).collect();
            let (mu, v) = conditional_equation_moments(i, &y, &f, &sigma).unwrap();
            let (mu_o, v_o) = partitioned(i, &y, &f, &sigma);
            prop_assert!((mu - mu_o).abs() < 1e-10 * (1.0 + mu_o.abs()));
            prop_assert!((v - v_o).abs() < 1e-10 * (1.0 + v_o));
        }

        #[test]
        fn moments_are_order_invariant(seed in 0u64..10_000, n in 2usize..6, i in 0usize..6) {
            let i = i % n;
            let sigma = random_spd(n, seed);
            let mut rng = rng_from_seed(seed + 2);
            let y: Vec<f64> = (0..n).map(|_| crate::sampling::standard_normal(&mut rng)).collect();
            let f: Vec<f64> = (0..n).map(|_| crate::sampling::standard_normal(&mut rng)).collect();
            let perm: Vec<usize> = (0..n).rev().collect();
            let ps = DMatrix::from_fn(n, n, |a, b| sigma[(perm[a], perm[b])]);
            let py: Vec<f64> = perm.iter().map(|&j| y[j]).collect();
            let pf: Vec<f64> = perm.iter().map(|&j| f[j]).collect();
            let pi = perm.iter().position(|&j| j == i).unwrap();
            let a = conditional_equation_moments(i, &y, &f, &sigma).unwrap();
            let b = conditional_equation_moments(pi, &py, &pf, &ps).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-10 && (a.1 - b.1).abs() < 1e-10);
        }
    }

    fn small_panel(seed: u64, t: usize) -> (Panel, LinearSystem) {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
        let sys = LinearSystem::new(
            a,
            DVector::from_vec(vec![0.2, -0.1]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
            DVector::zeros(2),
        )
        .unwrap();
        let mut rng = rng_from_seed(seed);
        let y = sys.simulate(t + 1, 100, &mut rng).unwrap();
        let dates = (0..t + 1)
            .map(|i| crate::data::Quarter::new(2000 + (i / 4) as i32, (i % 4 + 1) as u8).unwrap());
        let panel = Panel::from_levels(
            &y,
            vec!["a".into(), "b".into()],
            1,
            dates.collect(),
            vec![TransformCode::Level; 2],
        )
        .unwrap();
        (panel, sys)
    }

    fn linear_cfg(seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_burn: 50,
            n_save: 20,
            seed,
            backend: Backend::Linear,
            heteroskedastic: false,
            p: 1,
            ..Default::default()
        }
    }

    #[test]
    fn chain_is_deterministic_and_counts_draws() {
        let (panel, _) = small_panel(1, 120);
        let cfg = linear_cfg(9);
        let a = run_chain(&cfg, &panel, None, &mut ParameterTask).unwrap();
        let b = run_chain(&cfg, &panel, None, &mut ParameterTask).unwrap();
        assert_eq!(a.outputs.len(), 20);
        assert_eq!(a.outputs, b.outputs);
        assert_eq!(a.state.sweep, 70);
        let one = SamplerConfig {
            n_burn: 0,
            n_save: 1,
            ..cfg.clone()
        };
        assert_eq!(
            run_chain(&one, &panel, None, &mut NoTask)
                .unwrap()
                .outputs
                .len(),
            1
        );
        let thin = SamplerConfig {
            n_burn: 3,
            n_save: 4,
            thin: 3,
            ..cfg
        };
        assert_eq!(
            run_chain(&thin, &panel, None, &mut ParameterTask)
                .unwrap()
                .state
                .sweep,
            15
        );
    }

    #[test]
    fn homoskedastic_mode_leaves_scales_alone() {
        let (panel, _) = small_panel(2, 80);
        let out = run_chain(&linear_cfg(3), &panel, None, &mut ParameterTask).unwrap();
        assert!(out
            .outputs
            .iter()
            .all(|d| d.outliers.iter().all(|&s| s == 1)));
        let het = SamplerConfig {
            heteroskedastic: true,
            ..linear_cfg(3)
        };
        let out = run_chain(&het, &panel, None, &mut ParameterTask).unwrap();
        assert!(out.outputs.iter().all(|d| d.p_out > 0.0 && d.p_out < 1.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (panel, _) = small_panel(4, 60);
        let cfg = SamplerConfig {
            backend: Backend::Bart,
            trees: 5,
            n_burn: 5,
            n_save: 1,
            p: 1,
            ..Default::default()
        };
        let out = run_chain(&cfg, &panel, None, &mut NoTask).unwrap();
        let json = out.state.to_checkpoint_json().unwrap();
        let back = ModelState::from_checkpoint_json(&json, &panel.x).unwrap();
        assert_eq!(back, out.state);
        let bad = json.replacen("\"version\":1", "\"version\":7", 1);
        assert!(ModelState::from_checkpoint_json(&bad, &panel.x).is_err());
    }

    #[test]
    fn augmentation_off_matches_plain_chain() {
        struct Noisy;
        impl ChainTask for Noisy {
            type Output = f64;
            fn record(&mut self, _: &ModelState, _: &Panel, rng: &mut ChainRng) -> Result<f64> {
                Ok(rand::Rng::random(rng))
            }
        }
        let (panel, _) = small_panel(5, 80);
        let cfg = linear_cfg(11);
        let a = run_chain(&cfg, &panel, None, &mut Noisy).unwrap();
        let b = run_chain(&cfg, &panel, None, &mut NoTask).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn augmented_chain_sees_extra_rows() {
        struct Fixed(DMatrix<f64>, usize);
        impl ChainTask for Fixed {
            type Output = usize;
            fn augment(
                &mut self,
                _: &ModelState,
                _: &Panel,
                _: &mut ChainRng,
            ) -> Result<Option<DMatrix<f64>>> {
                Ok(Some(self.0.clone()))
            }
            fn record(&mut self, s: &ModelState, _: &Panel, _: &mut ChainRng) -> Result<usize> {
                self.1 += 1;
                Ok(s.outlier.s.len())
            }
        }
        let (panel, _) = small_panel(6, 50);
        let cfg = SamplerConfig {
            n_burn: 2,
            n_save: 3,
            ..linear_cfg(1)
        };
        let mut task = Fixed(DMatrix::from_element(2, 2, 0.5), 0);
        let out = run_chain(&cfg, &panel, None, &mut task).unwrap();
        assert_eq!(out.outputs, vec![52, 52, 52]);
        assert_eq!(out.state.outlier.s.len(), 50);
    }

    #[test]
    fn sweep_errors_carry_the_sweep_index() {
        let (panel, _) = small_panel(7, 40);
        let cfg = linear_cfg(1);
        struct Bad;
        impl ChainTask for Bad {
            type Output = ();
            fn augment(
                &mut self,
                _: &ModelState,
                _: &Panel,
                _: &mut ChainRng,
            ) -> Result<Option<DMatrix<f64>>> {
                Ok(Some(DMatrix::zeros(1, 3)))
            }
            fn record(&mut self, _: &ModelState, _: &Panel, _: &mut ChainRng) -> Result<()> {
                Ok(())
            }
        }
        match run_chain(&cfg, &panel, None, &mut Bad) {
            Err(Error::Sweep { sweep, .. }) => assert_eq!(sweep, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn linear_posterior_mean_tracks_least_squares() {
        let (panel, _) = small_panel(8, 500);
        let cfg = SamplerConfig {
            n_burn: 200,
            n_save: 400,
            ..linear_cfg(2)
        };
        let out = run_chain(&cfg, &panel, None, &mut ParameterTask).unwrap();
        let mean = mean_coefficients(&out.outputs).unwrap();
        let x = panel.x.clone().insert_column(2, 1.0);
        let ols =
            ((x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &panel.y).transpose();
        assert!((&mean - &ols).amax() < 0.15, "{mean} vs {ols}");
        let sigma = out
            .outputs
            .iter()
            .fold(DMatrix::zeros(2, 2), |acc, d| acc + &d.sigma)
            / 400.0;
        assert!(
            (sigma[(0, 0)] - 1.0).abs() < 0.2 && (sigma[(1, 1)] - 0.5).abs() < 0.1,
            "{sigma}"
        );
    }

    #[test]
    fn printed_hyper_shape_inflates_sigma() {
        let (panel, _) = small_panel(8, 500);
        let mut cfg = SamplerConfig {
            n_burn: 200,
            n_save: 400,
            ..linear_cfg(2)
        };
        cfg.priors.hyper_shape = HyperShape::Paper;
        let out = run_chain(&cfg, &panel, None, &mut ParameterTask).unwrap();
        assert!(out.state.cov.sigma()[(0, 0)] > 3.0);
    }
}
