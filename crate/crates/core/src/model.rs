//! The conditional-mean abstraction and per-sweep model snapshots.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::lower_factor;
use crate::restrictions::StructuralFactor;

/// A conditional mean `F: R^k -> R^n`.
pub trait ConditionalMean: Send + Sync {
    /// Number of equations `n`.
    fn n_vars(&self) -> usize;

    /// Length `k` of the lag vector.
    fn n_inputs(&self) -> usize;

    fn predict_into(&self, x: &[f64], out: &mut [f64]);

    fn predict(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_vars());
        self.predict_into(x, out.as_mut_slice());
        out
    }
}

/// How future outlier scales are treated when simulating forecasts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierForecast {
    pub p_out: f64,
    pub s_bar: u32,
}

/// Everything a forecast or impulse-response routine needs from one parameter draw.
pub struct Snapshot<'a> {
    pub mean: &'a dyn ConditionalMean,
    pub sigma: DMatrix<f64>,
    pub sigma_chol: DMatrix<f64>,
    pub factor: StructuralFactor,
    /// `Some` when future outlier scales are drawn from their prior.
    pub future_outliers: Option<OutlierForecast>,
}

impl<'a> Snapshot<'a> {
    /// Builds a snapshot with recursive (Cholesky) identification.
    pub fn new(mean: &'a dyn ConditionalMean, sigma: DMatrix<f64>) -> Result<Self> {
        let sigma_chol = lower_factor(&sigma)?;
        let factor = StructuralFactor::from_impact(sigma_chol.clone())?;
        Ok(Self {
            mean,
            sigma,
            sigma_chol,
            factor,
            future_outliers: None,
        })
    }

    pub fn with_future_outliers(mut self, outliers: Option<OutlierForecast>) -> Self {
        self.future_outliers = outliers;
        self
    }

    pub fn n(&self) -> usize {
        self.mean.n_vars()
    }
}
