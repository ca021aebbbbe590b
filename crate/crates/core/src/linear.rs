//! Linear conditional mean `F(x) = A x (+ c)` with a horseshoe prior on the
//! slope coefficients, sampled equation by equation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, standard_normal};
use crate::model::ConditionalMean;
use crate::sampling::sample_inverse_gamma;

/// Prior variance of the intercept, which is not shrunk.
pub const INTERCEPT_PRIOR_VARIANCE: f64 = 1e4;

const MIN_PRIOR_VARIANCE: f64 = 1e-14;
const MAX_SCALE: f64 = 1e12;

/// Reduced-form coefficients; when `intercept` is set the last column holds the constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarCoefficients {
    pub a: DMatrix<f64>,
    pub intercept: bool,
}

impl VarCoefficients {
    pub fn zeros(n: usize, k: usize, intercept: bool) -> Self {
        Self {
            a: DMatrix::zeros(n, k + usize::from(intercept)),
            intercept,
        }
    }

    pub fn n_slopes(&self) -> usize {
        self.a.ncols() - usize::from(self.intercept)
    }
}

impl ConditionalMean for VarCoefficients {
    fn n_vars(&self) -> usize {
        self.a.nrows()
    }

    fn n_inputs(&self) -> usize {
        self.n_slopes()
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let k = self.n_slopes();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = if self.intercept { self.a[(i, k)] } else { 0.0 };
            for (j, xj) in x.iter().enumerate().take(k) {
                acc += self.a[(i, j)] * xj;
            }
            *o = acc;
        }
    }
}

/// `A x` with dimension checks.
pub fn predict_linear(coef: &VarCoefficients, x: &[f64]) -> Result<DVector<f64>> {
    if x.len() != coef.n_slopes() {
        return Err(Error::dimension(format!(
            "lag vector has length {}, coefficients expect {}",
            x.len(),
            coef.n_slopes()
        )));
    }
    Ok(coef.predict(x))
}

/// Horseshoe scales in the inverse-gamma auxiliary representation:
/// `b_ij ~ N(0, lambda2_ij * tau2)`, `lambda2_ij | nu_ij ~ IG(1/2, 1/nu_ij)`,
/// `nu_ij ~ IG(1/2, 1)`, and likewise `tau2 | xi`, `xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorseshoeState {
    pub lambda2: DMatrix<f64>,
    pub nu: DMatrix<f64>,
    pub tau2: f64,
    pub xi: f64,
}

impl HorseshoeState {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            lambda2: DMatrix::from_element(n, k, 1.0),
            nu: DMatrix::from_element(n, k, 1.0),
            tau2: 1.0,
            xi: 1.0,
        }
    }

    /// Prior precisions for row `i`, with the intercept (if any) last.
    pub fn prior_precision(&self, i: usize, intercept: bool) -> DVector<f64> {
        let k = self.lambda2.ncols();
        let mut prec = DVector::zeros(k + usize::from(intercept));
        for j in 0..k {
            prec[j] = 1.0 / (self.lambda2[(i, j)] * self.tau2).max(MIN_PRIOR_VARIANCE);
        }
        if intercept {
            prec[k] = 1.0 / INTERCEPT_PRIOR_VARIANCE;
        }
        prec
    }

    pub fn all_positive(&self) -> bool {
        self.tau2 > 0.0
            && self.xi > 0.0
            && self.lambda2.iter().all(|v| *v > 0.0)
            && self.nu.iter().all(|v| *v > 0.0)
    }
}

/// Gaussian posterior of one equation's coefficients.
pub struct EquationPosterior {
    pub mean: DVector<f64>,
    /// Lower Cholesky factor of the posterior precision.
    pub precision_chol: DMatrix<f64>,
}

impl EquationPosterior {
    pub fn covariance(&self) -> DMatrix<f64> {
        let l_inv = crate::linalg::invert_lower(&self.precision_chol).expect("positive diagonal");
        l_inv.transpose() * l_inv
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal(self.mean.len(), rng);
        let dev = self
            .precision_chol
            .transpose()
            .solve_upper_triangular(&z)
            .expect("positive diagonal");
        &self.mean + dev
    }
}

/// Posterior of `b` in `target_t = design_t' b + e_t`, `e_t ~ N(0, variances_t)`,
/// under the prior `b ~ N(0, diag(1 / prior_precision))`.
pub fn equation_posterior(
    design: &DMatrix<f64>,
    target: &[f64],
    variances: &[f64],
    prior_precision: &DVector<f64>,
) -> Result<EquationPosterior> {
    let (t, m) = design.shape();
    if target.len() != t || variances.len() != t || prior_precision.len() != m {
        return Err(Error::dimension(
            "design, target, variances and prior disagree",
        ));
    }
    if let Some(bad) = variances.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::numerical(format!(
            "observation variance at t={bad} is not positive"
        )));
    }
    let mut precision = DMatrix::from_diagonal(prior_precision);
    let mut rhs = DVector::zeros(m);
    for row in 0..t {
        let w = 1.0 / variances[row];
        let x = design.row(row);
        for a in 0..m {
            let xa = x[a] * w;
            rhs[a] += xa * target[row];
            for b in 0..=a {
                precision[(a, b)] += xa * x[b];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            precision[(b, a)] = precision[(a, b)];
        }
    }
    let chol = nalgebra::Cholesky::new(precision.clone()).ok_or_else(|| {
        Error::numerical(format!(
            "posterior precision is singular (condition number ~{:.3e})",
            condition_number(&precision)
        ))
    })?;
    let mean = chol.solve(&rhs);
    Ok(EquationPosterior {
        mean,
        precision_chol: chol.l(),
    })
}

fn design_with_intercept(x: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    if intercept {
        let (t, k) = x.shape();
        let mut d = x.clone().resize_horizontally(k + 1, 0.0);
        for row in 0..t {
            d[(row, k)] = 1.0;
        }
        d
    } else {
        x.clone()
    }
}

/// Draws row `i` of `A` from its conditional posterior and then refreshes that
/// row's local shrinkage scales.
pub fn sample_var_equation<R: Rng + ?Sized>(
    i: usize,
    x: &DMatrix<f64>,
    adjusted_target: &[f64],
    variances: &[f64],
    coef: &mut VarCoefficients,
    state: &mut HorseshoeState,
    rng: &mut R,
) -> Result<()> {
    let design = design_with_intercept(x, coef.intercept);
    let prior = state.prior_precision(i, coef.intercept);
    let post = equation_posterior(&design, adjusted_target, variances, &prior)?;
    let draw = post.draw(rng);
    for j in 0..draw.len() {
        coef.a[(i, j)] = draw[j];
    }
    let k = coef.n_slopes();
    for j in 0..k {
        let b2 = draw[j] * draw[j];
        let lambda2 =
            sample_inverse_gamma(1.0, 1.0 / state.nu[(i, j)] + b2 / (2.0 * state.tau2), rng)?;
        state.lambda2[(i, j)] = lambda2.clamp(f64::MIN_POSITIVE, MAX_SCALE);
        let nu = sample_inverse_gamma(1.0, 1.0 + 1.0 / state.lambda2[(i, j)], rng)?;
        state.nu[(i, j)] = nu.clamp(f64::MIN_POSITIVE, MAX_SCALE);
    }
    Ok(())
}

/// Updates the single global scale shared by all slope coefficients.
pub fn sample_global_scale<R: Rng + ?Sized>(
    coef: &VarCoefficients,
    state: &mut HorseshoeState,
    rng: &mut R,
) -> Result<()> {
    let k = coef.n_slopes();
    let n = coef.a.nrows();
    let mut ss = 0.0;
    for i in 0..n {
        for j in 0..k {
            ss += coef.a[(i, j)].powi(2) / state.lambda2[(i, j)];
        }
    }
    let count = (n * k) as f64;
    let tau2 = sample_inverse_gamma((count + 1.0) / 2.0, 1.0 / state.xi + ss / 2.0, rng)?;
    state.tau2 = tau2.clamp(f64::MIN_POSITIVE, MAX_SCALE);
    let xi = sample_inverse_gamma(1.0, 1.0 + 1.0 / state.tau2, rng)?;
    state.xi = xi.clamp(f64::MIN_POSITIVE, MAX_SCALE);
    Ok(())
}

/// Linear backend state: coefficients plus their shrinkage scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBackend {
    pub coef: VarCoefficients,
    pub horseshoe: HorseshoeState,
}

impl LinearBackend {
    pub fn new(n: usize, k: usize, intercept: bool) -> Self {
        Self {
            coef: VarCoefficients::zeros(n, k, intercept),
            horseshoe: HorseshoeState::new(n, k),
        }
    }
}
