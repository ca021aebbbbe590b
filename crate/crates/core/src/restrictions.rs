//! Per-horizon linear restrictions on observables and structural shocks, and
//! the Gaussian conditioning they induce on one forecast step.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky, invert_lower, log_mvn_density_chol, psd_factor, sample_mvn, symmetrize,
};

/// Variance standing in for an exact restriction.
pub const HARD_VARIANCE: f64 = 1e-8;

/// One `R y ~ N(r, Omega)` block.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionBlock {
    pub r_mat: DMatrix<f64>,
    pub r: DVector<f64>,
    pub omega: DMatrix<f64>,
}

impl RestrictionBlock {
    pub fn new(r_mat: DMatrix<f64>, r: DVector<f64>, omega: DMatrix<f64>) -> Result<Self> {
        let m = r_mat.nrows();
        if r.len() != m || omega.shape() != (m, m) {
            return Err(Error::dimension(format!(
                "restriction block: R has {m} rows but r has {} and Omega is {}x{}",
                r.len(),
                omega.nrows(),
                omega.ncols()
            )));
        }
        if m == 0 {
            return Err(Error::config("restriction block has no rows"));
        }
        if r_mat
            .iter()
            .chain(r.iter())
            .chain(omega.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::config("restriction block has non-finite entries"));
        }
        if (&omega - omega.transpose()).amax() > 1e-12 * omega.amax().max(1.0) {
            return Err(Error::config("restriction covariance must be symmetric"));
        }
        psd_factor(&omega)
            .map_err(|_| Error::config("restriction covariance must be positive semidefinite"))?;
        if m > r_mat.ncols() || r_mat.rank(1e-10 * r_mat.amax().max(1e-300)) < m {
            return Err(Error::config("restriction matrix must have full row rank"));
        }
        Ok(Self { r_mat, r, omega })
    }

    /// Rows of `r_mat` pinned to `r` with variance `variance` each.
    pub fn diagonal(r_mat: DMatrix<f64>, r: DVector<f64>, variance: f64) -> Result<Self> {
        let m = r_mat.nrows();
        Self::new(r_mat, r, DMatrix::from_diagonal_element(m, m, variance))
    }

    /// Pins variable (or shock) `j` of `n` to `value`.
    pub fn pin(n: usize, j: usize, value: f64, variance: f64) -> Result<Self> {
        let mut r_mat = DMatrix::zeros(1, n);
        r_mat[(0, j)] = 1.0;
        Self::diagonal(r_mat, DVector::from_element(1, value), variance)
    }

    pub fn rows(&self) -> usize {
        self.r_mat.nrows()
    }

    /// Vertical stack of two independent blocks.
    pub fn append(&self, other: &RestrictionBlock) -> Result<Self> {
        let (m1, m2) = (self.rows(), other.rows());
        let n = self.r_mat.ncols();
        if other.r_mat.ncols() != n {
            return Err(Error::dimension("restriction blocks have different widths"));
        }
        let mut r_mat = DMatrix::zeros(m1 + m2, n);
        r_mat.rows_mut(0, m1).copy_from(&self.r_mat);
        r_mat.rows_mut(m1, m2).copy_from(&other.r_mat);
        let mut r = DVector::zeros(m1 + m2);
        r.rows_mut(0, m1).copy_from(&self.r);
        r.rows_mut(m1, m2).copy_from(&other.r);
        Self::new(r_mat, r, block_diag(&self.omega, &other.omega))
    }
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m1, m2) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(m1 + m2, m1 + m2);
    out.view_mut((0, 0), (m1, m1)).copy_from(a);
    out.view_mut((m1, m1), (m2, m2)).copy_from(b);
    out
}

/// Restrictions active at one horizon; both parts empty means no restriction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HorizonRestriction {
    pub obs: Option<RestrictionBlock>,
    pub shock: Option<RestrictionBlock>,
}

impl HorizonRestriction {
    pub fn is_empty(&self) -> bool {
        self.obs.is_none() && self.shock.is_none()
    }
}

/// Restrictions over horizons `1..=H` (stored 0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionSet {
    n: usize,
    horizons: Vec<HorizonRestriction>,
}

impl RestrictionSet {
    pub fn empty(n: usize, horizon: usize) -> Self {
        Self {
            n,
            horizons: vec![HorizonRestriction::default(); horizon],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizons.len()
    }

    /// Restrictions at 1-based horizon `h`.
    pub fn at(&self, h: usize) -> &HorizonRestriction {
        &self.horizons[h - 1]
    }

    pub fn is_unrestricted(&self) -> bool {
        self.horizons.iter().all(HorizonRestriction::is_empty)
    }

    fn check(&self, h: usize, block: &RestrictionBlock) -> Result<()> {
        if h == 0 || h > self.horizons.len() {
            return Err(Error::config(format!(
                "horizon {h} outside 1..={}",
                self.horizons.len()
            )));
        }
        if block.r_mat.ncols() != self.n {
            return Err(Error::dimension(format!(
                "restriction has {} columns, model has {} variables",
                block.r_mat.ncols(),
                self.n
            )));
        }
        Ok(())
    }

    /// Adds observable restrictions at 1-based horizon `h`, stacking with any already present.
    pub fn add_obs(&mut self, h: usize, block: RestrictionBlock) -> Result<()> {
        self.check(h, &block)?;
        let slot = &mut self.horizons[h - 1].obs;
        *slot = Some(match slot.take() {
            Some(old) => old.append(&block)?,
            None => block,
        });
        Ok(())
    }

    /// Adds structural-shock restrictions at 1-based horizon `h`.
    pub fn add_shock(&mut self, h: usize, block: RestrictionBlock) -> Result<()> {
        self.check(h, &block)?;
        let slot = &mut self.horizons[h - 1].shock;
        *slot = Some(match slot.take() {
            Some(old) => old.append(&block)?,
            None => block,
        });
        Ok(())
    }

    pub fn set_shock(&mut self, h: usize, block: Option<RestrictionBlock>) -> Result<()> {
        if let Some(b) = &block {
            self.check(h, b)?;
        }
        self.horizons[h - 1].shock = block;
        Ok(())
    }

    pub fn has_shock_restrictions(&self) -> bool {
        self.horizons.iter().any(|h| h.shock.is_some())
    }
}

/// Impact matrix `H^{-1}` and its inverse `H`, with `eps = H^{-1} u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralFactor {
    pub h_inv: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

impl StructuralFactor {
    pub fn from_impact(h_inv: DMatrix<f64>) -> Result<Self> {
        let h = h_inv
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::numerical("impact matrix is singular"))?;
        Ok(Self { h_inv, h })
    }

    /// Recursive identification: `H^{-1}` is the lower Cholesky factor of `Sigma`.
    pub fn recursive(sigma: &DMatrix<f64>) -> Result<Self> {
        let p = cholesky(sigma)?.l();
        let h = invert_lower(&p)?;
        Ok(Self { h_inv: p, h })
    }

    /// Column `j` of `H^{-1}`: the impact of a unit shock `j`.
    pub fn impact(&self, j: usize) -> DVector<f64> {
        self.h_inv.column(j).into_owned()
    }
}

/// The observable and shock parts stacked into one measurement `R y ~ N(r, Omega)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedRestriction {
    pub r_mat: DMatrix<f64>,
    pub r: DVector<f64>,
    pub omega: DMatrix<f64>,
}

/// Stacks `[R^y; R^u H]`, `[r^y; r^u + R^u H mu]`, `bdiag(Omega^y, Omega^u)`.
/// Returns `None` for an unrestricted horizon.
pub fn stack(
    set: &HorizonRestriction,
    factor: Option<&StructuralFactor>,
    mu: &DVector<f64>,
) -> Result<Option<StackedRestriction>> {
    let shock = match &set.shock {
        Some(b) => {
            let f = factor
                .ok_or_else(|| Error::config("shock restrictions need a structural factor"))?;
            let rh = &b.r_mat * &f.h;
            let r = &b.r + &rh * mu;
            Some((rh, r, b.omega.clone()))
        }
        None => None,
    };
    let out = match (&set.obs, shock) {
        (None, None) => None,
        (Some(o), None) => Some(StackedRestriction {
            r_mat: o.r_mat.clone(),
            r: o.r.clone(),
            omega: o.omega.clone(),
        }),
        (None, Some((r_mat, r, omega))) => Some(StackedRestriction { r_mat, r, omega }),
        (Some(o), Some((rh, r, omega))) => {
            let (m1, m2, n) = (o.rows(), rh.nrows(), rh.ncols());
            let mut r_mat = DMatrix::zeros(m1 + m2, n);
            r_mat.rows_mut(0, m1).copy_from(&o.r_mat);
            r_mat.rows_mut(m1, m2).copy_from(&rh);
            let mut rv = DVector::zeros(m1 + m2);
            rv.rows_mut(0, m1).copy_from(&o.r);
            rv.rows_mut(m1, m2).copy_from(&r);
            Some(StackedRestriction {
                r_mat,
                r: rv,
                omega: block_diag(&o.omega, &omega),
            })
        }
    };
    Ok(out)
}

/// Joint mean and covariance of `(y, r)` under `y ~ N(mu, Sigma)`, `r = R y + eta`.
pub fn joint_moments(
    stacked: &StackedRestriction,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = mu.len();
    let m = stacked.r.len();
    let mut mean = DVector::zeros(n + m);
    mean.rows_mut(0, n).copy_from(mu);
    mean.rows_mut(n, m).copy_from(&(&stacked.r_mat * mu));
    let cross = sigma * stacked.r_mat.transpose();
    let mut cov = DMatrix::zeros(n + m, n + m);
    cov.view_mut((0, 0), (n, n)).copy_from(sigma);
    cov.view_mut((0, n), (n, m)).copy_from(&cross);
    cov.view_mut((n, 0), (m, n)).copy_from(&cross.transpose());
    cov.view_mut((n, n), (m, m))
        .copy_from(&(&stacked.r_mat * &cross + &stacked.omega));
    (mean, cov)
}

/// Moments of `y | r`: `mu + K (r - R mu)` and `Sigma - K R Sigma`, with
/// `K = Sigma R' (R Sigma R' + Omega)^{-1}` applied through a Cholesky solve.
pub fn conditional_moments(
    stacked: &StackedRestriction,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let cross = sigma * stacked.r_mat.transpose();
    let s = &stacked.r_mat * &cross + &stacked.omega;
    let chol = cholesky(&s)?;
    // K' = S^{-1} R Sigma
    let k_t = chol.solve(&cross.transpose());
    let resid = &stacked.r - &stacked.r_mat * mu;
    let mean = mu + k_t.transpose() * resid;
    let cov = symmetrize(&(sigma - cross * k_t));
    Ok((mean, cov))
}

/// Precomputed optimal proposal for one horizon and one error covariance.
///
/// The innovation `r - R mu` equals `[r^y - R^y mu; r^u]`, so the gain and
/// the conditional covariance do not depend on the particle.
#[derive(Debug, Clone)]
pub struct HorizonProposal {
    /// Lower factor of the conditional covariance.
    factor: DMatrix<f64>,
    restricted: Option<Restricted>,
}

#[derive(Debug, Clone)]
struct Restricted {
    gain: DMatrix<f64>,
    r_const: DVector<f64>,
    obs_mat: DMatrix<f64>,
    innov_chol: DMatrix<f64>,
    shock: Option<ShockTerm>,
}

#[derive(Debug, Clone)]
struct ShockTerm {
    r: DVector<f64>,
    rh: DMatrix<f64>,
    omega_chol: DMatrix<f64>,
}

impl HorizonProposal {
    pub fn new(
        set: &HorizonRestriction,
        sigma: &DMatrix<f64>,
        factor: Option<&StructuralFactor>,
    ) -> Result<Self> {
        let n = sigma.nrows();
        let zero = DVector::zeros(n);
        let stacked = match stack(set, factor, &zero)? {
            None => {
                return Ok(Self {
                    factor: psd_factor(sigma)?,
                    restricted: None,
                })
            }
            Some(s) => s,
        };
        let m = stacked.r.len();
        let m_obs = set.obs.as_ref().map_or(0, RestrictionBlock::rows);
        let cross = sigma * stacked.r_mat.transpose();
        let s = symmetrize(&(&stacked.r_mat * &cross + &stacked.omega));
        let chol = cholesky(&s)?;
        let gain = chol.solve(&cross.transpose()).transpose();
        // Joseph form keeps the conditional covariance positive semidefinite
        let i_kr = DMatrix::identity(n, n) - &gain * &stacked.r_mat;
        let cond = symmetrize(
            &(&i_kr * sigma * i_kr.transpose() + &gain * &stacked.omega * gain.transpose()),
        );
        let mut obs_mat = DMatrix::zeros(m, n);
        if let Some(o) = &set.obs {
            obs_mat.rows_mut(0, m_obs).copy_from(&o.r_mat);
        }
        let shock = match (&set.shock, factor) {
            (Some(b), Some(f)) => Some(ShockTerm {
                r: b.r.clone(),
                rh: &b.r_mat * &f.h,
                omega_chol: cholesky(&b.omega)?.l(),
            }),
            _ => None,
        };
        Ok(Self {
            factor: psd_factor(&cond)?,
            restricted: Some(Restricted {
                gain,
                r_const: stacked.r,
                obs_mat,
                innov_chol: chol.l(),
                shock,
            }),
        })
    }

    pub fn is_restricted(&self) -> bool {
        self.restricted.is_some()
    }

    /// Conditional mean `r*` for a particle with one-step mean `mu`.
    pub fn conditional_mean(&self, mu: &DVector<f64>) -> DVector<f64> {
        match &self.restricted {
            None => mu.clone(),
            Some(r) => mu + &r.gain * (&r.r_const - &r.obs_mat * mu),
        }
    }

    /// Draws `y ~ N(r*, Omega*)`; always consumes `n` standard normals.
    pub fn draw<R: Rng + ?Sized>(&self, mu: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        sample_mvn(&self.conditional_mean(mu), &self.factor, rng)
    }

    /// `log N(r; R mu, R Sigma R' + Omega)`, or 0 when unrestricted.
    pub fn log_weight(&self, mu: &DVector<f64>) -> f64 {
        match &self.restricted {
            None => 0.0,
            Some(r) => {
                let innov = &r.r_const - &r.obs_mat * mu;
                let zero = vec![0.0; innov.len()];
                log_mvn_density_chol(innov.as_slice(), &zero, &r.innov_chol)
            }
        }
    }

    /// `log N(r^u; R^u H (y - mu), Omega^u)`: the part of the restriction
    /// density that depends on the parent through `mu`. Zero without shock restrictions.
    pub fn shock_log_density(&self, y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        match self.restricted.as_ref().and_then(|r| r.shock.as_ref()) {
            None => 0.0,
            Some(s) => {
                let u = &s.rh * (y - mu);
                log_mvn_density_chol(u.as_slice(), s.r.as_slice(), &s.omega_chol)
            }
        }
    }
}

/// Shocks restricted at horizon 1 with `R^u = I`: shock `j` pinned to
/// `level`, the others free (unit variance) or pinned to 0 when `pin_others`.
pub fn impact_shock_block(
    n: usize,
    j: usize,
    level: f64,
    pin_others: bool,
    hard_variance: f64,
) -> Result<RestrictionBlock> {
    if j >= n {
        return Err(Error::config(format!(
            "shock index {j} out of range for {n} variables"
        )));
    }
    let mut r = DVector::zeros(n);
    r[j] = level;
    let omega = DMatrix::from_fn(n, n, |a, b| match (a == b, a == j || pin_others) {
        (false, _) => 0.0,
        (true, true) => hard_variance,
        (true, false) => 1.0,
    });
    RestrictionBlock::new(DMatrix::identity(n, n), r, omega)
}

/// Impact-only structural scenario: shock `j` set to `level` at horizon 1 and
/// every structural shock at horizons `2..=H` held at zero with variance `future_variance`.
///
/// `future_variance = HARD_VARIANCE` pins future shocks; `1.0` leaves them at
/// their unconditional distribution.
pub fn lucas_robust(
    n: usize,
    horizon: usize,
    j: usize,
    level: f64,
    pin_others_on_impact: bool,
    future_variance: f64,
    hard_variance: f64,
) -> Result<RestrictionSet> {
    let mut set = RestrictionSet::empty(n, horizon);
    set.add_shock(
        1,
        impact_shock_block(n, j, level, pin_others_on_impact, hard_variance)?,
    )?;
    for h in 2..=horizon {
        set.add_shock(
            h,
            RestrictionBlock::diagonal(
                DMatrix::identity(n, n),
                DVector::zeros(n),
                future_variance,
            )?,
        )?;
    }
    Ok(set)
}

/// Supplies a restriction set for one parameter draw.
pub trait RestrictionSource: Send + Sync {
    fn resolve(&self, sigma: &DMatrix<f64>, horizon: usize) -> Result<RestrictionSet>;
}

impl RestrictionSource for RestrictionSet {
    fn resolve(&self, sigma: &DMatrix<f64>, horizon: usize) -> Result<RestrictionSet> {
        if self.horizon() != horizon || self.n != sigma.nrows() {
            return Err(Error::dimension(format!(
                "restriction set covers {} horizons and {} variables, expected {horizon} and {}",
                self.horizon(),
                self.n,
                sigma.nrows()
            )));
        }
        Ok(self.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RestrictionKind {
    Obs,
    Shock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hardness {
    /// Variance `hard_variance`.
    Hard,
    /// Variance given explicitly by `variance`.
    Soft,
    /// Variance `scale * w' Sigma w` (observables) or `scale * w' w` (shocks).
    SdScaled,
}

/// One entry of a restriction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestrictionEntry {
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub horizons: Option<Vec<usize>>,
    pub kind: RestrictionKind,
    pub weights: BTreeMap<String, f64>,
    pub value: f64,
    pub hardness: Hardness,
    #[serde(default)]
    pub variance: Option<f64>,
    #[serde(default)]
    pub scale: Option<f64>,
}

impl RestrictionEntry {
    fn horizon_list(&self) -> Result<Vec<usize>> {
        match (&self.horizon, &self.horizons) {
            (Some(h), None) => Ok(vec![*h]),
            (None, Some(hs)) if !hs.is_empty() => Ok(hs.clone()),
            _ => Err(Error::config(
                "each restriction needs exactly one of `horizon` or a non-empty `horizons`",
            )),
        }
    }
}

/// A restriction file: entries referring to variables (and their shocks) by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestrictionSpec {
    #[serde(default)]
    pub restriction: Vec<RestrictionEntry>,
    #[serde(skip)]
    pub names: Vec<String>,
    #[serde(skip)]
    pub hard_variance: Option<f64>,
}

impl RestrictionSpec {
    pub fn from_toml(text: &str, names: &[String]) -> Result<Self> {
        let mut spec: RestrictionSpec =
            toml::from_str(text).map_err(|e| Error::config(format!("restriction file: {e}")))?;
        spec.names = names.to_vec();
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.restriction.iter().enumerate() {
            let hs = e.horizon_list()?;
            if hs.contains(&0) {
                return Err(Error::config(format!(
                    "restriction {i}: horizons start at 1"
                )));
            }
            if e.weights.is_empty() {
                return Err(Error::config(format!("restriction {i}: no weights")));
            }
            for name in e.weights.keys() {
                if !self.names.iter().any(|n| n == name) {
                    return Err(Error::config(format!(
                        "restriction {i}: unknown variable `{name}` (known: {})",
                        self.names.join(", ")
                    )));
                }
            }
            match (e.hardness, e.variance) {
                (Hardness::Soft, None) => {
                    return Err(Error::config(format!(
                        "restriction {i}: soft restrictions need `variance`"
                    )))
                }
                (_, Some(v)) if !(v > 0.0) => {
                    return Err(Error::config(format!(
                        "restriction {i}: variance must be positive"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn max_horizon(&self) -> usize {
        self.restriction
            .iter()
            .filter_map(|e| e.horizon_list().ok())
            .flatten()
            .max()
            .unwrap_or(0)
    }
}

impl RestrictionSource for RestrictionSpec {
    fn resolve(&self, sigma: &DMatrix<f64>, horizon: usize) -> Result<RestrictionSet> {
        let n = self.names.len();
        if sigma.nrows() != n {
            return Err(Error::dimension("restriction names and Sigma disagree"));
        }
        let hard = self.hard_variance.unwrap_or(HARD_VARIANCE);
        let mut set = RestrictionSet::empty(n, horizon);
        for e in &self.restriction {
            let mut w = DMatrix::zeros(1, n);
            for (name, v) in &e.weights {
                let j = self
                    .names
                    .iter()
                    .position(|x| x == name)
                    .expect("validated");
                w[(0, j)] = *v;
            }
            let variance = match e.hardness {
                Hardness::Hard => e.variance.unwrap_or(hard),
                Hardness::Soft => e.variance.expect("validated"),
                Hardness::SdScaled => {
                    let c = e.scale.unwrap_or(1.0);
                    let q = match e.kind {
                        RestrictionKind::Obs => (&w * sigma * w.transpose())[(0, 0)],
                        RestrictionKind::Shock => w.norm_squared(),
                    };
                    c * q
                }
            };
            for h in e.horizon_list()? {
                if h > horizon {
                    return Err(Error::config(format!(
                        "restriction at horizon {h} beyond forecast horizon {horizon}"
                    )));
                }
                let block = RestrictionBlock::diagonal(
                    w.clone(),
                    DVector::from_element(1, e.value),
                    variance,
                )?;
                match e.kind {
                    RestrictionKind::Obs => set.add_obs(h, block)?,
                    RestrictionKind::Shock => set.add_shock(h, block)?,
                }
            }
        }
        Ok(set)
    }
}
