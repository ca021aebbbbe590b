//! Closed-form forecasts and impulse responses of a linear Gaussian system
//! with fixed parameters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, lower_factor, sample_mvn, symmetrize};
use crate::model::ConditionalMean;
use crate::restrictions::{RestrictionSet, StructuralFactor};

/// `y_t = c + sum_l A_l y_{t-l} + eps_t`, `eps_t ~ N(0, Sigma)`, with `A = [A_1 .. A_p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub factor: StructuralFactor,
    /// `(y_tau, ..., y_{tau-p+1})`, the lag vector preceding the first forecast.
    pub x_init: DVector<f64>,
}

/// A Gaussian over the stacked path `(y_1', ..., y_H')'`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPath {
    pub n: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianPath {
    pub fn horizon(&self) -> usize {
        self.mean.len() / self.n
    }

    /// Mean and standard deviation of variable `i` at 1-based horizon `h`.
    pub fn marginal(&self, h: usize, i: usize) -> (f64, f64) {
        let idx = (h - 1) * self.n + i;
        (self.mean[idx], self.cov[(idx, idx)].max(0.0).sqrt())
    }

    pub fn quantile(&self, h: usize, i: usize, prob: f64) -> f64 {
        let (m, sd) = self.marginal(h, i);
        if sd == 0.0 {
            return m;
        }
        Normal::new(m, sd).expect("positive sd").inverse_cdf(prob)
    }

    /// `H x n` matrix of means.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.horizon(), self.n, |h, i| self.mean[h * self.n + i])
    }
}

impl LinearSystem {
    /// Recursively identified system.
    pub fn new(
        a: DMatrix<f64>,
        intercept: DVector<f64>,
        sigma: DMatrix<f64>,
        x_init: DVector<f64>,
    ) -> Result<Self> {
        let n = sigma.nrows();
        if a.nrows() != n || a.ncols() == 0 || a.ncols() % n != 0 {
            return Err(Error::dimension(format!(
                "A must be {n} x (n p), got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if intercept.len() != n || x_init.len() != a.ncols() {
            return Err(Error::dimension(
                "intercept or initial lag vector has the wrong length",
            ));
        }
        let factor = StructuralFactor::recursive(&sigma)?;
        Ok(Self {
            a,
            intercept,
            sigma,
            factor,
            x_init,
        })
    }

    pub fn n(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn p(&self) -> usize {
        self.a.ncols() / self.n()
    }

    pub fn k(&self) -> usize {
        self.a.ncols()
    }

    /// Lag matrix `A_l`, `l = 1..=p`.
    pub fn lag_matrix(&self, l: usize) -> DMatrix<f64> {
        let n = self.n();
        self.a.columns((l - 1) * n, n).into_owned()
    }

    pub fn companion(&self) -> DMatrix<f64> {
        let (n, k) = (self.n(), self.k());
        let mut c = DMatrix::zeros(k, k);
        c.rows_mut(0, n).copy_from(&self.a);
        for r in n..k {
            c[(r, r - n)] = 1.0;
        }
        c
    }

    pub fn spectral_radius(&self) -> f64 {
        self.companion()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Moving-average matrices `Psi_0 = I, ..., Psi_{h-1}`.
    pub fn ma_coefficients(&self, h: usize) -> Vec<DMatrix<f64>> {
        let (n, p) = (self.n(), self.p());
        let lags: Vec<DMatrix<f64>> = (1..=p).map(|l| self.lag_matrix(l)).collect();
        let mut psi: Vec<DMatrix<f64>> = Vec::with_capacity(h);
        for i in 0..h {
            if i == 0 {
                psi.push(DMatrix::identity(n, n));
                continue;
            }
            let mut m = DMatrix::zeros(n, n);
            for l in 1..=p.min(i) {
                m += &lags[l - 1] * &psi[i - l];
            }
            psi.push(m);
        }
        psi
    }

    /// Stationary mean `(I - sum A_l)^{-1} c`.
    pub fn unconditional_mean(&self) -> Result<DVector<f64>> {
        let n = self.n();
        let mut m = DMatrix::identity(n, n);
        for l in 1..=self.p() {
            m -= self.lag_matrix(l);
        }
        m.lu()
            .solve(&self.intercept)
            .ok_or_else(|| Error::numerical("system has a unit root"))
    }

    /// Stationary covariance of `y_t`, by doubling on the companion form.
    pub fn unconditional_covariance(&self) -> Result<DMatrix<f64>> {
        if self.spectral_radius() >= 1.0 {
            return Err(Error::numerical("system is not stationary"));
        }
        let (n, k) = (self.n(), self.k());
        let mut a = self.companion();
        let mut v = DMatrix::zeros(k, k);
        v.view_mut((0, 0), (n, n)).copy_from(&self.sigma);
        for _ in 0..200 {
            let next = &v + &a * &v * a.transpose();
            let change = (&next - &v).amax();
            v = next;
            a = &a * &a;
            if change <= 1e-15 * v.amax() {
                break;
            }
        }
        Ok(symmetrize(&v.view((0, 0), (n, n)).into_owned()))
    }

    pub fn unconditional_sd(&self) -> Result<DVector<f64>> {
        Ok(self.unconditional_covariance()?.diagonal().map(f64::sqrt))
    }

    /// Simulates `t` observations after `burn` discarded ones, starting from `x_init`.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        t: usize,
        burn: usize,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        let (n, k) = (self.n(), self.k());
        let l = lower_factor(&self.sigma)?;
        let mut x = self.x_init.clone();
        let mut out = DMatrix::zeros(t, n);
        for step in 0..burn + t {
            let y = sample_mvn(&(&self.a * &x + &self.intercept), &l, rng);
            let mut next = DVector::zeros(k);
            next.rows_mut(0, n).copy_from(&y);
            next.rows_mut(n, k - n).copy_from(&x.rows(0, k - n));
            x = next;
            if step >= burn {
                out.row_mut(step - burn).copy_from(&y.transpose());
            }
        }
        Ok(out)
    }

    /// Initial value `y_{1-m}` (`m = 1..=p`) read from `x_init`.
    fn initial(&self, m: usize) -> DVector<f64> {
        let n = self.n();
        self.x_init.rows((m - 1) * n, n).into_owned()
    }

    /// Unrestricted joint moments of `y_1..y_H`.
    pub fn path_moments(&self, horizon: usize) -> GaussianPath {
        let (n, p) = (self.n(), self.p());
        let mut mean = DVector::zeros(horizon * n);
        let mut hist: Vec<DVector<f64>> = (1..=p).rev().map(|m| self.initial(m)).collect();
        for h in 0..horizon {
            let mut y = self.intercept.clone();
            for l in 1..=p {
                y += self.lag_matrix(l) * &hist[hist.len() - l];
            }
            mean.rows_mut(h * n, n).copy_from(&y);
            hist.push(y);
        }
        let psi = self.ma_coefficients(horizon);
        let mut cov = DMatrix::zeros(horizon * n, horizon * n);
        for h in 1..=horizon {
            for g in h..=horizon {
                let mut block = DMatrix::zeros(n, n);
                for j in 1..=h {
                    block += &psi[h - j] * &self.sigma * psi[g - j].transpose();
                }
                cov.view_mut(((h - 1) * n, (g - 1) * n), (n, n))
                    .copy_from(&block);
                cov.view_mut(((g - 1) * n, (h - 1) * n), (n, n))
                    .copy_from(&block.transpose());
            }
        }
        GaussianPath { n, mean, cov }
    }
}

impl ConditionalMean for LinearSystem {
    fn n_vars(&self) -> usize {
        self.n()
    }

    fn n_inputs(&self) -> usize {
        self.k()
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let k = self.k();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.intercept[i];
            for j in 0..k {
                acc += self.a[(i, j)] * x[j];
            }
            *o = acc;
        }
    }
}

/// Stacked linear measurements `G Y ~ N(g, Omega)` implied by a restriction set.
fn measurements(
    sys: &LinearSystem,
    set: &RestrictionSet,
) -> Result<Option<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)>> {
    let (n, p, horizon) = (sys.n(), sys.p(), set.horizon());
    let mut rows: Vec<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> = Vec::new();
    for h in 1..=horizon {
        let hr = set.at(h);
        if let Some(o) = &hr.obs {
            let mut g = DMatrix::zeros(o.rows(), horizon * n);
            g.columns_mut((h - 1) * n, n).copy_from(&o.r_mat);
            rows.push((g, o.r.clone(), o.omega.clone()));
        }
        if let Some(s) = &hr.shock {
            // R^u H (y_h - c - sum_l A_l y_{h-l}) ~ N(r^u, Omega^u)
            let rh = &s.r_mat * &sys.factor.h;
            let mut g = DMatrix::zeros(s.rows(), horizon * n);
            g.columns_mut((h - 1) * n, n).copy_from(&rh);
            let mut known = sys.intercept.clone();
            for l in 1..=p {
                let al = sys.lag_matrix(l);
                if h > l {
                    let mut block = g.columns_mut((h - l - 1) * n, n);
                    block -= &rh * &al;
                } else {
                    known += &al * sys.initial(l - h + 1);
                }
            }
            rows.push((g, &s.r + &rh * known, s.omega.clone()));
        }
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let m: usize = rows.iter().map(|r| r.1.len()).sum();
    let mut g = DMatrix::zeros(m, horizon * n);
    let mut v = DVector::zeros(m);
    let mut om = DMatrix::zeros(m, m);
    let mut at = 0;
    for (gi, vi, oi) in rows {
        let k = vi.len();
        g.rows_mut(at, k).copy_from(&gi);
        v.rows_mut(at, k).copy_from(&vi);
        om.view_mut((at, at), (k, k)).copy_from(&oi);
        at += k;
    }
    Ok(Some((g, v, om)))
}

/// Exact joint distribution of `y_{tau+1..tau+H}` given every restriction at once.
pub fn closed_form_conditional_forecast(
    sys: &LinearSystem,
    set: &RestrictionSet,
    horizon: usize,
) -> Result<GaussianPath> {
    if set.horizon() != horizon || set.n() != sys.n() {
        return Err(Error::dimension(
            "restriction set does not match the system or horizon",
        ));
    }
    if sys.spectral_radius() >= 1.0 {
        log::warn!(
            "companion matrix is not stable; forecast moments are still finite at this horizon"
        );
    }
    let prior = sys.path_moments(horizon);
    let Some((g, v, om)) = measurements(sys, set)? else {
        return Ok(prior);
    };
    let cross = &prior.cov * g.transpose();
    let s = symmetrize(&(&g * &cross + om));
    let chol = cholesky(&s)?;
    let k_t = chol.solve(&cross.transpose());
    let mean = &prior.mean + k_t.transpose() * (v - &g * &prior.mean);
    let cov = symmetrize(&(&prior.cov - cross * k_t));
    Ok(GaussianPath {
        n: prior.n,
        mean,
        cov,
    })
}

/// `d Psi_{h-1} H^{-1} e_j` for `h = 1..=H`, as an `H x n` matrix.
pub fn closed_form_irf(
    sys: &LinearSystem,
    j: usize,
    d: f64,
    horizon: usize,
) -> Result<DMatrix<f64>> {
    let n = sys.n();
    if j >= n {
        return Err(Error::config(format!("shock index {j} out of range")));
    }
    let beta0 = sys.factor.impact(j);
    let psi = sys.ma_coefficients(horizon);
    Ok(DMatrix::from_fn(horizon, n, |h, i| {
        d * (&psi[h] * &beta0)[i]
    }))
}
