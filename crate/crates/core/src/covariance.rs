//! Error covariance `s_t^2 Sigma`: hierarchical inverse-Wishart prior on
//! `Sigma`, inverse-gamma scale hyperparameters, and discrete outlier scales.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, symmetrize};
use crate::sampling::{
    normalize_log_weights, sample_beta, sample_categorical, sample_inverse_gamma,
    sample_inverse_wishart,
};

/// Shape of the inverse-gamma full conditional of `a_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperShape {
    /// `(nu + T) / 2`
    Paper,
    /// `(nu + n) / 2`
    #[default]
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceState {
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    chol: DMatrix<f64>,
    pub a: Vec<f64>,
    pub nu: f64,
    pub a_scale: Vec<f64>,
    pub hyper_shape: HyperShape,
}

impl CovarianceState {
    pub fn new(
        sigma: DMatrix<f64>,
        nu: f64,
        a_scale: Vec<f64>,
        hyper_shape: HyperShape,
    ) -> Result<Self> {
        let n = sigma.nrows();
        if a_scale.len() != n {
            return Err(Error::dimension("one scale A_j per variable is required"));
        }
        if !(nu > 0.0) || a_scale.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::config("nu and A_j must be positive"));
        }
        let mut s = Self {
            sigma: DMatrix::zeros(n, n),
            sigma_inv: DMatrix::zeros(n, n),
            chol: DMatrix::zeros(n, n),
            a: vec![1.0; n],
            nu,
            a_scale,
            hyper_shape,
        };
        s.set_sigma(sigma)?;
        Ok(s)
    }

    /// Replaces `Sigma` and refreshes the cached factor and inverse.
    pub fn set_sigma(&mut self, sigma: DMatrix<f64>) -> Result<()> {
        let sigma = symmetrize(&sigma);
        let chol = cholesky(&sigma)?;
        self.sigma_inv = symmetrize(&chol.inverse());
        self.chol = chol.l();
        self.sigma = sigma;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    /// Lower factor `P` with `Sigma = P P'`.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Prior degrees of freedom `nu + n - 1`.
    pub fn s0(&self) -> f64 {
        self.nu + self.n() as f64 - 1.0
    }

    /// Prior scale `2 nu diag(1 / a)`.
    pub fn prior_scale(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.n(), |i, j| {
            if i == j {
                2.0 * self.nu / self.a[i]
            } else {
                0.0
            }
        })
    }
}

/// Draws `Sigma | rest` given residuals already divided by `s_t` (one row per period).
pub fn sample_sigma<R: Rng + ?Sized>(
    scaled_residuals: &DMatrix<f64>,
    state: &CovarianceState,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if scaled_residuals.ncols() != state.n() {
        return Err(Error::dimension("residual columns must match Sigma"));
    }
    let t = scaled_residuals.nrows() as f64;
    let scale = state.prior_scale() + scaled_residuals.transpose() * scaled_residuals;
    sample_inverse_wishart(state.s0() + t, &scale, rng)
}

/// Draws the scale hyperparameters `a_i` given `Sigma^{-1}` and `t_obs` periods.
pub fn sample_scale_hyper<R: Rng + ?Sized>(
    state: &CovarianceState,
    t_obs: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = state.n();
    let shape = match state.hyper_shape {
        HyperShape::Paper => (state.nu + t_obs as f64) / 2.0,
        HyperShape::Derived => (state.nu + n as f64) / 2.0,
    };
    (0..n)
        .map(|i| {
            let rate = 1.0 / state.a_scale[i].powi(2) + state.nu * state.sigma_inv[(i, i)];
            sample_inverse_gamma(shape, rate, rng)
        })
        .collect()
}

/// Outlier scales `s_t` with prior probability `p_out` of an outlier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierState {
    pub s: Vec<u32>,
    pub s_bar: u32,
    pub p_out: f64,
    pub a_p: f64,
    pub b_p: f64,
}

impl OutlierState {
    pub fn new(t: usize, s_bar: u32, a_p: f64, b_p: f64) -> Result<Self> {
        if s_bar < 2 || !(a_p > 0.0) || !(b_p > 0.0) {
            return Err(Error::config(
                "outlier model needs s_bar >= 2 and positive Beta parameters",
            ));
        }
        Ok(Self {
            s: vec![1; t],
            s_bar,
            p_out: a_p / (a_p + b_p),
            a_p,
            b_p,
        })
    }

    pub fn n_outliers(&self) -> usize {
        self.s.iter().filter(|&&s| s != 1).count()
    }

    /// Resizes to `t` periods; new periods start at scale 1.
    pub fn resize(&mut self, t: usize) {
        self.s.resize(t, 1);
    }
}

/// Unnormalised log posterior of `s_t = 1..s_bar` for one residual.
///
/// `quad` is `e' Sigma^{-1} e`; terms common to all categories are dropped.
pub fn outlier_log_probabilities(quad: f64, n: usize, p_out: f64, s_bar: u32) -> Vec<f64> {
    (1..=s_bar)
        .map(|s| {
            let sf = s as f64;
            let prior = if s == 1 {
                (1.0 - p_out).ln()
            } else {
                (p_out / (s_bar as f64 - 1.0)).ln()
            };
            prior - n as f64 * sf.ln() - 0.5 * quad / (sf * sf)
        })
        .collect()
}

/// Draws every `s_t` from its discrete full conditional.
pub fn sample_outliers<R: Rng + ?Sized>(
    y: &DMatrix<f64>,
    fit: &DMatrix<f64>,
    state: &CovarianceState,
    p_out: f64,
    s_bar: u32,
    rng: &mut R,
) -> Result<Vec<u32>> {
    if y.shape() != fit.shape() || y.ncols() != state.n() {
        return Err(Error::dimension("y, fitted values and Sigma disagree"));
    }
    let n = state.n();
    let l = state.cholesky();
    (0..y.nrows())
        .map(|t| {
            let e = (y.row(t) - fit.row(t)).transpose();
            let z = l
                .solve_lower_triangular(&e)
                .ok_or_else(|| Error::numerical("Sigma factor is singular"))?;
            let lp = outlier_log_probabilities(z.norm_squared(), n, p_out, s_bar);
            let w = normalize_log_weights(&lp)
                .map_err(|e| Error::numerical(format!("outlier probabilities at t={t}: {e}")))?;
            Ok(sample_categorical(&w, rng) as u32 + 1)
        })
        .collect()
}

/// `p_out ~ Beta(a_p + T_o, b_p + T - T_o)`.
pub fn sample_outlier_prob<R: Rng + ?Sized>(
    s: &[u32],
    a_p: f64,
    b_p: f64,
    rng: &mut R,
) -> Result<f64> {
    let t_o = s.iter().filter(|&&v| v != 1).count() as f64;
    let t = s.len() as f64;
    sample_beta(a_p + t_o, b_p + t - t_o, rng)
}
