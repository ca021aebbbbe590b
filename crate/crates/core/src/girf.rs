//! Generalized impulse responses: scenario minus baseline forecast expectations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Panel;
use crate::error::{Error, Result};
use crate::gibbs::{ChainTask, ModelState};
use crate::linalg::standard_normal;
use crate::model::Snapshot;
use crate::pgas::{Forecaster, PgasConfig};
use crate::restrictions::{impact_shock_block, RestrictionBlock, RestrictionSet, HARD_VARIANCE};
use crate::sampling::{derive_seed, quantile, rng_from_seed, sample_categorical, ChainRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GirfVariant {
    /// Observable scenario against a baseline forecast.
    Ugirf,
    /// Structural shock `j` of size `d` on impact.
    Sgirf,
    /// Structural shock with selected observables matched to the baseline draw.
    Rgirf,
}

/// Treatment of the shocks that are not being studied in recursive simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecursiveNoise {
    /// Same random numbers for scenario and baseline.
    Shared,
    /// Separate random numbers.
    Independent,
    /// All other shocks at zero.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum GirfMode {
    Pgas,
    Recursive { noise: RecursiveNoise },
}

/// Forecast origins, as row indices of the panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origins {
    Last,
    All,
    List(Vec<usize>),
}

impl Origins {
    pub fn resolve(&self, t: usize) -> Result<Vec<usize>> {
        let out = match self {
            Origins::Last => vec![t - 1],
            Origins::All => (0..t).collect(),
            Origins::List(v) => v.clone(),
        };
        if out.is_empty() || out.iter().any(|&o| o >= t) {
            return Err(Error::config(format!(
                "origins must be non-empty rows below {t}"
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GirfSpec {
    pub variant: GirfVariant,
    /// Structural shock `j` (column of `H^{-1}`).
    pub shock: usize,
    pub sizes: Vec<f64>,
    /// `d_0`
    pub baseline_level: f64,
    pub horizon: usize,
    pub mode: GirfMode,
    /// Pin every shock other than `j` to zero on impact.
    pub pin_other_shocks: bool,
    /// Leave the other impact shocks out of the restriction so they keep their
    /// unconditional distribution. The default restricts them to zero with
    /// unit variance, which halves their impact variance.
    pub unrestricted_others: bool,
    /// Shocks held at their unconditional distribution at horizons `2..=H`.
    pub non_driving: Vec<usize>,
    /// UGIRF scenario.
    pub scenario: Option<RestrictionSet>,
    /// UGIRF baseline; unconditional when `None`.
    pub baseline: Option<RestrictionSet>,
    /// RGIRF selection matrices `R_h^(y)`, one entry per horizon.
    pub channels: Vec<Option<DMatrix<f64>>>,
    pub hard_variance: f64,
}

impl GirfSpec {
    pub fn sgirf(shock: usize, sizes: Vec<f64>, horizon: usize) -> Self {
        Self {
            variant: GirfVariant::Sgirf,
            shock,
            sizes,
            baseline_level: 0.0,
            horizon,
            mode: GirfMode::Pgas,
            pin_other_shocks: false,
            unrestricted_others: false,
            non_driving: Vec::new(),
            scenario: None,
            baseline: None,
            channels: Vec::new(),
            hard_variance: HARD_VARIANCE,
        }
    }

    pub fn ugirf(scenario: RestrictionSet, baseline: Option<RestrictionSet>) -> Self {
        let horizon = scenario.horizon();
        Self {
            variant: GirfVariant::Ugirf,
            scenario: Some(scenario),
            baseline,
            ..Self::sgirf(0, vec![1.0], horizon)
        }
    }

    /// RGIRF matching the listed variables to the baseline at every horizon.
    pub fn rgirf(
        shock: usize,
        sizes: Vec<f64>,
        horizon: usize,
        n: usize,
        matched: &[usize],
    ) -> Self {
        let channels = (0..horizon).map(|_| selection(n, matched)).collect();
        Self {
            variant: GirfVariant::Rgirf,
            channels,
            ..Self::sgirf(shock, sizes, horizon)
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("GIRF horizon must be positive"));
        }
        if self.variant != GirfVariant::Ugirf {
            if self.shock >= n {
                return Err(Error::config(format!(
                    "shock index {} out of range for {n} variables",
                    self.shock
                )));
            }
            if self.sizes.is_empty() || self.sizes.iter().any(|d| *d == 0.0 || !d.is_finite()) {
                return Err(Error::config("shock sizes must be finite and non-zero"));
            }
        }
        if let Some(j) = self.non_driving.iter().find(|&&j| j >= n) {
            return Err(Error::config(format!("non-driving shock {j} out of range")));
        }
        match self.variant {
            GirfVariant::Ugirf => {
                let s = self
                    .scenario
                    .as_ref()
                    .ok_or_else(|| Error::config("UGIRF needs a scenario"))?;
                if s.horizon() != self.horizon || s.n() != n {
                    return Err(Error::dimension(
                        "scenario restrictions do not match horizon or variables",
                    ));
                }
                if let Some(b) = &self.baseline {
                    if b.horizon() != self.horizon || b.n() != n {
                        return Err(Error::dimension(
                            "baseline restrictions do not match horizon or variables",
                        ));
                    }
                }
                if self.mode != GirfMode::Pgas {
                    return Err(Error::config("UGIRF requires the particle sampler"));
                }
            }
            GirfVariant::Rgirf => {
                if self.channels.len() != self.horizon {
                    return Err(Error::dimension(
                        "one channel entry per horizon is required",
                    ));
                }
                if self.channels.iter().flatten().any(|c| c.ncols() != n) {
                    return Err(Error::dimension("channel matrices need n columns"));
                }
                if self.mode != GirfMode::Pgas {
                    return Err(Error::config("RGIRF requires the particle sampler"));
                }
            }
            GirfVariant::Sgirf => {}
        }
        Ok(())
    }

    /// Sizes that index the output; UGIRF has a single unscaled slot.
    pub fn effective_sizes(&self) -> Vec<f64> {
        match self.variant {
            GirfVariant::Ugirf => vec![1.0],
            _ => self.sizes.clone(),
        }
    }

    /// Shock restrictions for a structural forecast with shock `j` at `level`.
    pub fn structural_set(&self, n: usize, level: f64) -> Result<RestrictionSet> {
        let mut set = RestrictionSet::empty(n, self.horizon);
        let impact = if self.unrestricted_others && !self.pin_other_shocks {
            let row = selection(n, &[self.shock]).expect("one row");
            RestrictionBlock::diagonal(row, DVector::from_element(1, level), self.hard_variance)?
        } else {
            impact_shock_block(
                n,
                self.shock,
                level,
                self.pin_other_shocks,
                self.hard_variance,
            )?
        };
        set.add_shock(1, impact)?;
        if !self.non_driving.is_empty() {
            let rows = selection(n, &self.non_driving).expect("non-empty");
            for h in 2..=self.horizon {
                let k = rows.nrows();
                set.add_shock(
                    h,
                    RestrictionBlock::diagonal(rows.clone(), DVector::zeros(k), 1.0)?,
                )?;
            }
        }
        Ok(set)
    }
}

/// Rows of the identity selecting `vars`.
pub fn selection(n: usize, vars: &[usize]) -> Option<DMatrix<f64>> {
    if vars.is_empty() {
        return None;
    }
    let mut m = DMatrix::zeros(vars.len(), n);
    for (r, &v) in vars.iter().enumerate() {
        m[(r, v)] = 1.0;
    }
    Some(m)
}

/// Per-draw responses, indexed `[draw][size][origin]`, each `H x n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GirfResult {
    pub sizes: Vec<f64>,
    pub origins: Vec<usize>,
    pub horizon: usize,
    pub n: usize,
    pub delta: Vec<Vec<Vec<DMatrix<f64>>>>,
    pub scaled: bool,
    pub cumulated: bool,
    pub averaged: bool,
    /// RGIRF: largest gap between scenario and baseline paths on matched rows, per draw.
    pub violations: Vec<f64>,
}

impl GirfResult {
    pub fn new(sizes: Vec<f64>, origins: Vec<usize>, horizon: usize, n: usize) -> Self {
        Self {
            sizes,
            origins,
            horizon,
            n,
            delta: Vec::new(),
            scaled: false,
            cumulated: false,
            averaged: false,
            violations: Vec::new(),
        }
    }

    pub fn draws(&self) -> usize {
        self.delta.len()
    }

    /// Divides each response by its shock size.
    pub fn scale(mut self) -> Self {
        if self.scaled {
            return self;
        }
        for draw in &mut self.delta {
            for (d, per_origin) in self.sizes.iter().zip(draw.iter_mut()) {
                for m in per_origin {
                    *m /= *d;
                }
            }
        }
        self.scaled = true;
        self
    }

    /// Partial sums over horizons for the flagged variables.
    pub fn cumulate(mut self, vars: &[bool]) -> Self {
        for m in self.delta.iter_mut().flatten().flatten() {
            for (i, _) in vars.iter().enumerate().filter(|(_, c)| **c) {
                for h in 1..m.nrows() {
                    m[(h, i)] += m[(h - 1, i)];
                }
            }
        }
        self.cumulated = true;
        self
    }

    /// Averages each draw's responses over origins.
    pub fn average_over_time(mut self) -> Self {
        if self.origins.len() == 1 {
            log::warn!("averaging over a single origin leaves the responses unchanged");
            self.averaged = true;
            return self;
        }
        let count = self.origins.len() as f64;
        for draw in &mut self.delta {
            for per_origin in draw.iter_mut() {
                let mut acc = DMatrix::zeros(self.horizon, self.n);
                for m in per_origin.iter() {
                    acc += m;
                }
                *per_origin = vec![acc / count];
            }
        }
        self.averaged = true;
        self
    }

    /// Across-draw mean for size index `s` and origin index `o`.
    pub fn mean(&self, s: usize, o: usize) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.horizon, self.n);
        for d in &self.delta {
            acc += &d[s][o];
        }
        acc / self.draws().max(1) as f64
    }

    /// Across-draw standard error of the mean for size `s`, origin `o`.
    pub fn mean_se(&self, s: usize, o: usize) -> DMatrix<f64> {
        let m = self.mean(s, o);
        let k = self.draws() as f64;
        let mut acc = DMatrix::zeros(self.horizon, self.n);
        for d in &self.delta {
            acc += (&d[s][o] - &m).map(|v| v * v);
        }
        acc.map(|v| (v / (k - 1.0)).sqrt() / k.sqrt())
    }

    /// Long-format rows `(size, origin, horizon, variable, quantile, value)`.
    pub fn summary(&self, quantiles: &[f64]) -> Vec<SummaryRow> {
        let mut out = Vec::new();
        let mut buf = vec![0.0; self.draws()];
        for (s, &size) in self.sizes.iter().enumerate() {
            let n_origins = self.delta.first().map(|d| d[s].len()).unwrap_or(0);
            for o in 0..n_origins {
                let origin = if self.averaged && self.origins.len() > 1 {
                    None
                } else {
                    Some(self.origins[o])
                };
                for h in 0..self.horizon {
                    for i in 0..self.n {
                        for (b, d) in buf.iter_mut().zip(&self.delta) {
                            *b = d[s][o][(h, i)];
                        }
                        for &q in quantiles {
                            out.push(SummaryRow {
                                size,
                                origin,
                                horizon: h + 1,
                                variable: i,
                                quantile: q,
                                value: quantile(&buf, q),
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryRow {
    pub size: f64,
    /// `None` after averaging over origins.
    pub origin: Option<usize>,
    pub horizon: usize,
    pub variable: usize,
    pub quantile: f64,
    pub value: f64,
}

/// Reference trajectories carried across draws for one origin.
#[derive(Debug, Clone, Default)]
pub struct GirfReferences {
    baseline: Forecaster,
    scenarios: Vec<Forecaster>,
}

impl GirfReferences {
    pub fn new(cfg: PgasConfig, sizes: usize) -> Self {
        Self {
            baseline: Forecaster::new(cfg),
            scenarios: vec![Forecaster::new(cfg); sizes],
        }
    }
}

/// Responses for every size at one origin, plus the RGIRF matching gap.
pub struct GirfDraw {
    pub delta: Vec<DMatrix<f64>>,
    pub violation: f64,
}

/// One draw of the responses at one origin for fixed parameters.
///
/// Scenario and baseline forecasts are all run from `seed`, so they share random numbers.
pub fn girf_draw(
    snap: &Snapshot,
    x_init: &DVector<f64>,
    spec: &GirfSpec,
    refs: &mut GirfReferences,
    seed: u64,
) -> Result<GirfDraw> {
    let n = snap.n();
    match spec.mode {
        GirfMode::Recursive { noise } => {
            let delta = spec
                .sizes
                .iter()
                .map(|&d| recursive_delta(snap, x_init, spec, d, noise, &mut rng_from_seed(seed)))
                .collect::<Result<Vec<_>>>()?;
            Ok(GirfDraw {
                delta,
                violation: 0.0,
            })
        }
        GirfMode::Pgas => {
            let base_set = match spec.variant {
                GirfVariant::Ugirf => spec
                    .baseline
                    .clone()
                    .unwrap_or_else(|| RestrictionSet::empty(n, spec.horizon)),
                _ => spec.structural_set(n, spec.baseline_level)?,
            };
            let base = refs
                .baseline
                .draw(x_init, &base_set, snap, &mut rng_from_seed(seed))?;
            let mut delta = Vec::with_capacity(refs.scenarios.len());
            let mut violation: f64 = 0.0;
            for (s, &d) in spec.effective_sizes().iter().enumerate() {
                let scen_set = match spec.variant {
                    GirfVariant::Ugirf => spec.scenario.clone().expect("validated"),
                    GirfVariant::Sgirf => spec.structural_set(n, spec.baseline_level + d)?,
                    GirfVariant::Rgirf => {
                        let mut set = spec.structural_set(n, spec.baseline_level + d)?;
                        for (h, c) in spec.channels.iter().enumerate() {
                            if let Some(c) = c {
                                let target = c * base.path.row(h).transpose();
                                set.add_obs(
                                    h + 1,
                                    RestrictionBlock::diagonal(
                                        c.clone(),
                                        target,
                                        spec.hard_variance,
                                    )?,
                                )?;
                            }
                        }
                        set
                    }
                };
                let scen =
                    refs.scenarios[s].draw(x_init, &scen_set, snap, &mut rng_from_seed(seed))?;
                for (h, c) in spec.channels.iter().enumerate() {
                    if let Some(c) = c {
                        let gap = c * (scen.path.row(h) - base.path.row(h)).transpose();
                        violation = violation.max(gap.amax());
                    }
                }
                delta.push(&scen.smoothed_mean - &base.smoothed_mean);
            }
            Ok(GirfDraw { delta, violation })
        }
    }
}

/// Scenario and baseline paths iterated forward from `x_init` by direct simulation.
fn recursive_delta<R: Rng + ?Sized>(
    snap: &Snapshot,
    x_init: &DVector<f64>,
    spec: &GirfSpec,
    d: f64,
    noise: RecursiveNoise,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = snap.n();
    let k = x_init.len();
    let j = spec.shock;
    let h_inv = &snap.factor.h_inv;
    let shocks = |rng: &mut R| -> DVector<f64> {
        match noise {
            RecursiveNoise::Zero => DVector::zeros(n),
            _ => standard_normal(n, rng),
        }
    };
    let draw_scale = |rng: &mut R| -> f64 {
        match snap.future_outliers {
            Some(o) if noise != RecursiveNoise::Zero => {
                let s_bar = o.s_bar as usize;
                let mut w = vec![o.p_out / (s_bar as f64 - 1.0); s_bar];
                w[0] = 1.0 - o.p_out;
                (sample_categorical(&w, rng) + 1) as f64
            }
            _ => 1.0,
        }
    };
    let mut out = DMatrix::zeros(spec.horizon, n);
    let mut xs = x_init.clone();
    let mut xb = x_init.clone();
    let mut fs = DVector::zeros(n);
    let mut fb = DVector::zeros(n);
    for h in 1..=spec.horizon {
        snap.mean.predict_into(xs.as_slice(), fs.as_mut_slice());
        snap.mean.predict_into(xb.as_slice(), fb.as_mut_slice());
        let (mut us, mut ub) = match noise {
            RecursiveNoise::Independent => (shocks(rng), shocks(rng)),
            _ => {
                let u = shocks(rng);
                (u.clone(), u)
            }
        };
        let (ss, sb) = if h == 1 {
            (1.0, 1.0)
        } else if noise == RecursiveNoise::Independent {
            (draw_scale(rng), draw_scale(rng))
        } else {
            let s = draw_scale(rng);
            (s, s)
        };
        if h == 1 {
            if spec.pin_other_shocks {
                us.fill(0.0);
                ub.fill(0.0);
            }
            us[j] = spec.baseline_level + d;
            ub[j] = spec.baseline_level;
            out.row_mut(0).copy_from(&(h_inv * (&us - &ub)).transpose());
        } else {
            out.row_mut(h - 1).copy_from(&(&fs - &fb).transpose());
        }
        let ys = &fs + h_inv * us * ss;
        let yb = &fb + h_inv * ub * sb;
        xs = shift(&xs, &ys, k);
        xb = shift(&xb, &yb, k);
    }
    Ok(out)
}

fn shift(x: &DVector<f64>, y: &DVector<f64>, k: usize) -> DVector<f64> {
    let n = y.len();
    let mut next = DVector::zeros(k);
    next.rows_mut(0, n).copy_from(y);
    next.rows_mut(n, k - n).copy_from(&x.rows(0, k - n));
    next
}

/// Responses for fixed parameters: `draws` repetitions at each origin's lag vector.
pub fn girf_fixed(
    snap: &Snapshot,
    x_inits: &[DVector<f64>],
    spec: &GirfSpec,
    cfg: &PgasConfig,
    draws: usize,
    seed: u64,
) -> Result<GirfResult> {
    let n = snap.n();
    spec.validate(n)?;
    let sizes = spec.effective_sizes();
    let mut refs: Vec<GirfReferences> = x_inits
        .iter()
        .map(|_| GirfReferences::new(*cfg, sizes.len()))
        .collect();
    let mut res = GirfResult::new(sizes, (0..x_inits.len()).collect(), spec.horizon, n);
    for m in 0..draws {
        let (per_origin, v) =
            one_draw(snap, x_inits, spec, &mut refs, derive_seed(seed, m as u64))?;
        res.delta.push(per_origin);
        res.violations.push(v);
    }
    Ok(res)
}

fn one_draw(
    snap: &Snapshot,
    x_inits: &[DVector<f64>],
    spec: &GirfSpec,
    refs: &mut [GirfReferences],
    seed: u64,
) -> Result<(Vec<Vec<DMatrix<f64>>>, f64)> {
    let sizes = spec.effective_sizes().len();
    let mut per_size: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(x_inits.len()); sizes];
    let mut violation: f64 = 0.0;
    for (o, (x, r)) in x_inits.iter().zip(refs.iter_mut()).enumerate() {
        let d = girf_draw(snap, x, spec, r, derive_seed(seed, o as u64))?;
        violation = violation.max(d.violation);
        for (s, m) in d.delta.into_iter().enumerate() {
            per_size[s].push(m);
        }
    }
    Ok((per_size, violation))
}

/// Computes responses at every retained sweep of a chain.
pub struct GirfTask {
    pub spec: GirfSpec,
    pub cfg: PgasConfig,
    pub origins: Vec<usize>,
    pub simulate_future_outliers: bool,
    refs: Vec<GirfReferences>,
    pub violations: Vec<f64>,
}

impl GirfTask {
    pub fn new(
        spec: GirfSpec,
        cfg: PgasConfig,
        origins: Vec<usize>,
        simulate_future_outliers: bool,
    ) -> Self {
        let sizes = spec.effective_sizes().len();
        let refs = origins
            .iter()
            .map(|_| GirfReferences::new(cfg, sizes))
            .collect();
        Self {
            spec,
            cfg,
            origins,
            simulate_future_outliers,
            refs,
            violations: Vec::new(),
        }
    }

    /// Assembles recorded draws into a result.
    pub fn collect(&self, n: usize, outputs: Vec<Vec<Vec<DMatrix<f64>>>>) -> GirfResult {
        let mut r = GirfResult::new(
            self.spec.effective_sizes(),
            self.origins.clone(),
            self.spec.horizon,
            n,
        );
        r.delta = outputs;
        r.violations = self.violations.clone();
        r
    }
}

impl ChainTask for GirfTask {
    type Output = Vec<Vec<DMatrix<f64>>>;

    fn record(
        &mut self,
        state: &ModelState,
        panel: &Panel,
        rng: &mut ChainRng,
    ) -> Result<Self::Output> {
        self.spec.validate(panel.n())?;
        let snap = state.snapshot(self.simulate_future_outliers)?;
        let x_inits: Vec<DVector<f64>> = self
            .origins
            .iter()
            .map(|&o| panel.lag_vector_after(o))
            .collect();
        let seed: u64 = rng.random();
        let (out, v) = one_draw(&snap, &x_inits, &self.spec, &mut self.refs, seed)?;
        self.violations.push(v);
        Ok(out)
    }
}
