use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use scenario_core::bart::{MoveKind, MoveStats};
use scenario_core::data::{load_csv, Panel, Quarter};
use scenario_core::gibbs::{
    outlier_frequency, run_chain, Backend, ChainSummary, ChainTask, ModelState, ParameterDraw,
    ParameterTask,
};
use scenario_core::girf::{GirfMode, GirfResult, GirfSpec, GirfTask, GirfVariant};
use scenario_core::pgas::{ForecastTask, Trajectory};
use scenario_core::restrictions::{Hardness, RestrictionSet, RestrictionSource, RestrictionSpec};
use scenario_core::sampling::{derive_seed, ChainRng};
use scenario_core::verify::{
    compare_irf, runtime_table, BenchmarkFixture, QuantileSource, BENCHMARK_NAMES,
};
use scenario_core::{Error, Result};

use crate::config::{GirfMethod, LoadedConfig, VerifyBlock};
use crate::output::{fmt, mean_and_quantiles, quantile_column, sha256_hex, Manifest, OutputDir};

/// Options shared by every subcommand.
pub struct RunOptions {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub out: Option<PathBuf>,
    pub dump_draws: bool,
}

struct Context<'a> {
    loaded: &'a LoadedConfig,
    seed: u64,
    chains: usize,
    out: OutputDir,
    dump_draws: bool,
}

impl<'a> Context<'a> {
    fn new(loaded: &'a LoadedConfig, opts: &RunOptions) -> Result<Self> {
        let cfg = &loaded.config;
        let out = match (&opts.out, &cfg.out) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => loaded.resolve(o),
            (None, None) => PathBuf::from("out"),
        };
        Ok(Self {
            loaded,
            seed: opts.seed.unwrap_or(cfg.sampler.seed),
            chains: opts.chains.unwrap_or(cfg.sampler.chains).max(1),
            out: OutputDir::create(&out)?,
            dump_draws: opts.dump_draws,
        })
    }

    fn panel(&self) -> Result<Panel> {
        let cfg = &self.loaded.config;
        let path = cfg
            .data
            .as_ref()
            .ok_or_else(|| Error::Config("`data` is required for this command".into()))?;
        let path = self.loaded.resolve(path);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "data file `{}` not found",
                path.display()
            )));
        }
        let transforms: Vec<_> = cfg
            .transforms
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        let panel = load_csv(&path, &transforms, cfg.model.p)?;
        log::info!(
            "loaded {} variables, {} usable periods from {}",
            panel.n(),
            panel.t(),
            path.display()
        );
        Ok(panel)
    }

    fn restriction_file(
        &self,
        path: &Path,
        names: &[String],
        hard_variance: Option<f64>,
    ) -> Result<RestrictionSpec> {
        let path = self.loaded.resolve(path);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!(
                "cannot read restriction file `{}`: {e}",
                path.display()
            ))
        })?;
        let mut spec = RestrictionSpec::from_toml(&text, names)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.hard_variance = hard_variance;
        Ok(spec)
    }

    /// Independent chains, seeded `(seed, c)`, run in parallel and returned in chain order.
    fn run_chains<T, F>(&self, panel: &Panel, make: F) -> Result<Vec<(T, ChainSummary<T::Output>)>>
    where
        T: ChainTask + Send,
        T::Output: Send,
        F: Fn() -> T + Sync,
    {
        let cfg = &self.loaded.config;
        (0..self.chains)
            .into_par_iter()
            .map(|c| {
                let sc = cfg.sampler_config(derive_seed(self.seed, c as u64));
                let mut task = make();
                let s = run_chain(&sc, panel, None, &mut task)?;
                log::info!("chain {c} finished in {:.1}s", s.seconds);
                Ok((task, s))
            })
            .collect()
    }

    fn finish(self, command: &'static str) -> Result<PathBuf> {
        let root = self.out.root.clone();
        self.out.finish(Manifest {
            command,
            config_sha256: Some(sha256_hex(&self.loaded.raw)),
            seed: self.seed,
            chains: self.chains,
        })?;
        Ok(root)
    }
}

fn header(first: &[&str], qs: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = first.iter().map(|s| s.to_string()).collect();
    h.push("mean".into());
    h.extend(qs.iter().map(|&q| quantile_column(q)));
    h
}

fn stat_row(mut lead: Vec<String>, values: &[f64], qs: &[f64]) -> Vec<String> {
    lead.extend(mean_and_quantiles(values, qs).into_iter().map(fmt));
    lead
}

fn forecast_dates(panel: &Panel, horizon: usize) -> Vec<Quarter> {
    let mut d = *panel.dates.last().expect("non-empty panel");
    (0..horizon)
        .map(|_| {
            d = d.next();
            d
        })
        .collect()
}

struct EstimateDraw {
    params: ParameterDraw,
    resid_mean: Vec<f64>,
    resid_sd: Vec<f64>,
}

struct EstimateTask;

impl ChainTask for EstimateTask {
    type Output = EstimateDraw;

    fn record(
        &mut self,
        state: &ModelState,
        panel: &Panel,
        rng: &mut ChainRng,
    ) -> Result<EstimateDraw> {
        let params = ParameterTask.record(state, panel, rng)?;
        let resid = &panel.y - state.fitted(&panel.x);
        let t = resid.nrows() as f64;
        let resid_mean: Vec<f64> = resid.column_iter().map(|c| c.sum() / t).collect();
        let resid_sd = resid
            .column_iter()
            .zip(&resid_mean)
            .map(|(c, m)| (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (t - 1.0)).sqrt())
            .collect();
        Ok(EstimateDraw {
            params,
            resid_mean,
            resid_sd,
        })
    }
}

#[derive(Serialize)]
struct FitSummary<'a> {
    backend: Backend,
    variables: &'a [String],
    p: usize,
    periods: usize,
    first_period: String,
    last_period: String,
    trees: Option<usize>,
    chains: usize,
    draws: usize,
    acceptance: Option<[(&'static str, Option<f64>); 4]>,
    p_out_mean: f64,
}

fn regressor_names(panel: &Panel, intercept: bool) -> Vec<String> {
    let mut out = Vec::with_capacity(panel.k() + 1);
    for lag in 1..=panel.p {
        for name in &panel.names {
            out.push(format!("{name}.l{lag}"));
        }
    }
    if intercept {
        out.push("intercept".into());
    }
    out
}

pub fn estimate(loaded: &LoadedConfig, opts: &RunOptions) -> Result<PathBuf> {
    let mut ctx = Context::new(loaded, opts)?;
    let cfg = &loaded.config;
    let panel = ctx.panel()?;
    let runs = ctx.run_chains(&panel, || EstimateTask)?;
    let qs = crate::config::DEFAULT_QUANTILES;
    let draws: Vec<&EstimateDraw> = runs.iter().flat_map(|(_, s)| &s.outputs).collect();
    let n = panel.n();

    let mut rows = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v: Vec<f64> = draws.iter().map(|d| d.params.sigma[(i, j)]).collect();
            rows.push(stat_row(
                vec![panel.names[i].clone(), panel.names[j].clone()],
                &v,
                &qs,
            ));
        }
    }
    ctx.out
        .write_csv("sigma.csv", &header(&["row", "column"], &qs), &rows)?;

    if cfg.model.backend == Backend::Linear {
        let names = regressor_names(&panel, cfg.model.priors.intercept);
        let mut rows = Vec::new();
        for i in 0..n {
            for (j, reg) in names.iter().enumerate() {
                let v: Vec<f64> = draws
                    .iter()
                    .map(|d| d.params.coefficients.as_ref().expect("linear backend")[(i, j)])
                    .collect();
                rows.push(stat_row(vec![panel.names[i].clone(), reg.clone()], &v, &qs));
            }
        }
        ctx.out.write_csv(
            "coefficients.csv",
            &header(&["equation", "regressor"], &qs),
            &rows,
        )?;
    }

    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            let m = draws.iter().map(|d| d.resid_mean[i]).sum::<f64>() / draws.len() as f64;
            let sd = draws.iter().map(|d| d.resid_sd[i]).sum::<f64>() / draws.len() as f64;
            vec![panel.names[i].clone(), fmt(m), fmt(sd)]
        })
        .collect();
    ctx.out.write_csv(
        "residuals.csv",
        &["variable".into(), "mean".into(), "sd".into()],
        &rows,
    )?;

    let params: Vec<ParameterDraw> = draws.iter().map(|d| d.params.clone()).collect();
    let freq = outlier_frequency(&params);
    let rows: Vec<Vec<String>> = panel
        .dates
        .iter()
        .zip(freq.iter())
        .map(|(d, f)| vec![d.to_string(), fmt(*f)])
        .collect();
    ctx.out.write_csv(
        "outliers.csv",
        &["date".into(), "prob_outlier".into()],
        &rows,
    )?;

    let mut stats = MoveStats::default();
    for (_, s) in &runs {
        if let Some(m) = s.state.move_stats() {
            stats.merge(m);
        }
    }
    let acceptance = (cfg.model.backend == Backend::Bart).then(|| {
        MoveKind::ALL.map(|k| {
            let name = match k {
                MoveKind::Grow => "grow",
                MoveKind::Prune => "prune",
                MoveKind::Change => "change",
                MoveKind::Swap => "swap",
            };
            (name, stats.acceptance_rate(k))
        })
    });
    let summary = FitSummary {
        backend: cfg.model.backend,
        variables: &panel.names,
        p: panel.p,
        periods: panel.t(),
        first_period: panel.dates[0].to_string(),
        last_period: panel.dates[panel.t() - 1].to_string(),
        trees: (cfg.model.backend == Backend::Bart).then_some(cfg.model.trees),
        chains: ctx.chains,
        draws: draws.len(),
        acceptance,
        p_out_mean: params.iter().map(|d| d.p_out).sum::<f64>() / params.len() as f64,
    };
    ctx.out.write_json("fit_summary.json", &summary)?;
    for (c, (_, s)) in runs.iter().enumerate() {
        ctx.out.write(
            &format!("checkpoint_chain{c}.json"),
            s.state.to_checkpoint_json()?.as_bytes(),
        )?;
    }
    if ctx.dump_draws {
        let mut rows = Vec::new();
        for (c, (_, s)) in runs.iter().enumerate() {
            for (m, d) in s.outputs.iter().enumerate() {
                for i in 0..n {
                    for j in 0..=i {
                        let name = format!("sigma[{},{}]", panel.names[i], panel.names[j]);
                        rows.push(vec![
                            c.to_string(),
                            m.to_string(),
                            name,
                            fmt(d.params.sigma[(i, j)]),
                        ]);
                    }
                }
            }
        }
        let h = ["chain", "draw", "parameter", "value"].map(String::from);
        ctx.out.write_csv("draws.csv", &h, &rows)?;
    }
    println!(
        "estimated {} draws over {} chain(s); sigma diagonal posterior means:",
        draws.len(),
        ctx.chains
    );
    for i in 0..n {
        let m = draws.iter().map(|d| d.params.sigma[(i, i)]).sum::<f64>() / draws.len() as f64;
        println!("  {:<12} {m:.4}", panel.names[i]);
    }
    ctx.finish("estimate")
}

fn path_rows(panel: &Panel, paths: &[&Trajectory], horizon: usize, qs: &[f64]) -> Vec<Vec<String>> {
    let dates = forecast_dates(panel, horizon);
    let mut rows = Vec::new();
    for h in 0..horizon {
        for (i, name) in panel.names.iter().enumerate() {
            let v: Vec<f64> = paths.iter().map(|t| t.path[(h, i)]).collect();
            rows.push(stat_row(
                vec![(h + 1).to_string(), dates[h].to_string(), name.clone()],
                &v,
                qs,
            ));
        }
    }
    rows
}

pub fn forecast(loaded: &LoadedConfig, opts: &RunOptions) -> Result<PathBuf> {
    let mut ctx = Context::new(loaded, opts)?;
    let cfg = &loaded.config;
    let fb = cfg
        .forecast
        .clone()
        .ok_or_else(|| Error::Config("the forecast command needs a [forecast] block".into()))?;
    let panel = ctx.panel()?;
    let spec = match &fb.restrictions {
        Some(p) => ctx.restriction_file(p, &panel.names, fb.hard_variance)?,
        None => RestrictionSpec {
            names: panel.names.clone(),
            hard_variance: fb.hard_variance,
            ..Default::default()
        },
    };
    if spec.max_horizon() > fb.horizon {
        return Err(Error::Config(format!(
            "restrictions reach horizon {} but [forecast] horizon is {}",
            spec.max_horizon(),
            fb.horizon
        )));
    }
    let pgas = cfg.pgas_config();
    let runs = ctx.run_chains(&panel, || {
        let mut t = ForecastTask::new(Box::new(spec.clone()), fb.horizon, pgas, fb.augment);
        t.simulate_future_outliers = cfg.sampler.simulate_future_outliers;
        t
    })?;
    let paths: Vec<&Trajectory> = runs.iter().flat_map(|(_, s)| &s.outputs).collect();
    let rows = path_rows(&panel, &paths, fb.horizon, &fb.quantiles);
    ctx.out.write_csv(
        "forecast.csv",
        &header(&["horizon", "date", "variable"], &fb.quantiles),
        &rows,
    )?;
    if ctx.dump_draws {
        let mut rows = Vec::new();
        for (c, (_, s)) in runs.iter().enumerate() {
            for (m, t) in s.outputs.iter().enumerate() {
                for h in 0..fb.horizon {
                    for (i, name) in panel.names.iter().enumerate() {
                        rows.push(vec![
                            c.to_string(),
                            m.to_string(),
                            (h + 1).to_string(),
                            name.clone(),
                            fmt(t.path[(h, i)]),
                        ]);
                    }
                }
            }
        }
        let h = ["chain", "draw", "horizon", "variable", "value"].map(String::from);
        ctx.out.write_csv("draws.csv", &h, &rows)?;
    }
    println!(
        "{} forecast draws, {} restriction(s), horizon {}",
        paths.len(),
        spec.restriction.len(),
        fb.horizon
    );
    ctx.finish("forecast")
}

fn indices(panel: &Panel, names: &[String], what: &str) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            panel.index_of(n).ok_or_else(|| {
                Error::Config(format!(
                    "{what} `{n}` not found (known: {})",
                    panel.names.join(", ")
                ))
            })
        })
        .collect()
}

fn fixed_set(
    ctx: &Context,
    path: &Path,
    panel: &Panel,
    horizon: usize,
    hard: f64,
) -> Result<RestrictionSet> {
    let mut spec = ctx.restriction_file(path, &panel.names, Some(hard))?;
    if spec
        .restriction
        .iter()
        .any(|e| e.hardness == Hardness::SdScaled)
    {
        return Err(Error::Config(format!(
            "{}: UGIRF scenarios need hard or soft restrictions; sd-scaled entries depend on the draw",
            path.display()
        )));
    }
    spec.hard_variance = Some(hard);
    spec.resolve(&DMatrix::identity(panel.n(), panel.n()), horizon)
}

#[derive(Serialize)]
struct GirfSummary {
    variant: GirfVariant,
    shock: Option<String>,
    draws: usize,
    scaled: bool,
    averaged: bool,
    max_violation: Option<f64>,
    mean_violation: Option<f64>,
}

pub fn girf(loaded: &LoadedConfig, opts: &RunOptions) -> Result<PathBuf> {
    let mut ctx = Context::new(loaded, opts)?;
    let cfg = &loaded.config;
    let gb = cfg
        .girf
        .clone()
        .ok_or_else(|| Error::Config("the girf command needs a [girf] block".into()))?;
    let panel = ctx.panel()?;
    let n = panel.n();
    let shock = match (&gb.shock, gb.variant) {
        (Some(s), _) => Some(indices(&panel, std::slice::from_ref(s), "shock")?[0]),
        (None, GirfVariant::Ugirf) => None,
        (None, _) => {
            return Err(Error::Config(
                "[girf] shock is required for SGIRF and RGIRF".into(),
            ))
        }
    };
    let mut spec = match gb.variant {
        GirfVariant::Sgirf => {
            GirfSpec::sgirf(shock.expect("checked"), gb.sizes.clone(), gb.horizon)
        }
        GirfVariant::Rgirf => {
            let matched = indices(&panel, &gb.matched, "matched variable")?;
            if matched.is_empty() {
                return Err(Error::Config(
                    "[girf] RGIRF needs at least one matched variable".into(),
                ));
            }
            GirfSpec::rgirf(
                shock.expect("checked"),
                gb.sizes.clone(),
                gb.horizon,
                n,
                &matched,
            )
        }
        GirfVariant::Ugirf => {
            let hard = scenario_core::restrictions::HARD_VARIANCE;
            let path = gb
                .scenario
                .as_ref()
                .ok_or_else(|| Error::Config("[girf] UGIRF needs a scenario file".into()))?;
            let scen = fixed_set(&ctx, path, &panel, gb.horizon, hard)?;
            let base = gb
                .baseline
                .as_ref()
                .map(|p| fixed_set(&ctx, p, &panel, gb.horizon, hard))
                .transpose()?;
            GirfSpec::ugirf(scen, base)
        }
    };
    spec.baseline_level = gb.baseline_level;
    spec.pin_other_shocks = gb.pin_other_shocks;
    spec.unrestricted_others = gb.unrestricted_others;
    spec.non_driving = indices(&panel, &gb.non_driving, "non-driving shock")?;
    if gb.method == GirfMethod::Recursive {
        spec.mode = GirfMode::Recursive { noise: gb.noise };
    }
    spec.validate(n)?;
    let origins = gb.origins.resolve(panel.t())?;
    let pgas = cfg.pgas_config();
    let runs = ctx.run_chains(&panel, || {
        GirfTask::new(
            spec.clone(),
            pgas,
            origins.clone(),
            cfg.sampler.simulate_future_outliers,
        )
    })?;

    let mut result: Option<GirfResult> = None;
    for (task, s) in runs {
        let r = task.collect(n, s.outputs);
        match &mut result {
            None => result = Some(r),
            Some(acc) => {
                acc.delta.extend(r.delta);
                acc.violations.extend(r.violations);
            }
        }
    }
    let mut result = result.expect("at least one chain");
    if gb.scale && gb.variant != GirfVariant::Ugirf {
        result = result.scale();
    }
    if !gb.cumulate.is_empty() {
        let idx = indices(&panel, &gb.cumulate, "cumulated variable")?;
        let flags: Vec<bool> = (0..n).map(|i| idx.contains(&i)).collect();
        result = result.cumulate(&flags);
    }
    if gb.average {
        result = result.average_over_time();
    }

    let qs = &gb.quantiles;
    let mut rows = Vec::new();
    let n_origins = result.delta.first().map(|d| d[0].len()).unwrap_or(0);
    for (s, &size) in result.sizes.iter().enumerate() {
        for o in 0..n_origins {
            let origin = if result.averaged && result.origins.len() > 1 {
                "average".to_string()
            } else {
                panel.dates[result.origins[o]].to_string()
            };
            for h in 0..result.horizon {
                for (i, name) in panel.names.iter().enumerate() {
                    let v: Vec<f64> = result.delta.iter().map(|d| d[s][o][(h, i)]).collect();
                    let lead = vec![fmt(size), origin.clone(), (h + 1).to_string(), name.clone()];
                    rows.push(stat_row(lead, &v, qs));
                }
            }
        }
    }
    ctx.out.write_csv(
        "girf.csv",
        &header(&["size", "origin", "horizon", "variable"], qs),
        &rows,
    )?;
    if ctx.dump_draws {
        let mut rows = Vec::new();
        for (m, d) in result.delta.iter().enumerate() {
            for (s, &size) in result.sizes.iter().enumerate() {
                for (o, resp) in d[s].iter().enumerate() {
                    for h in 0..result.horizon {
                        for (i, name) in panel.names.iter().enumerate() {
                            rows.push(vec![
                                m.to_string(),
                                fmt(size),
                                o.to_string(),
                                (h + 1).to_string(),
                                name.clone(),
                                fmt(resp[(h, i)]),
                            ]);
                        }
                    }
                }
            }
        }
        let h = [
            "draw",
            "size",
            "origin_index",
            "horizon",
            "variable",
            "value",
        ]
        .map(String::from);
        ctx.out.write_csv("girf_draws.csv", &h, &rows)?;
    }
    let rgirf = gb.variant == GirfVariant::Rgirf && !result.violations.is_empty();
    let summary = GirfSummary {
        variant: gb.variant,
        shock: gb.shock.clone(),
        draws: result.draws(),
        scaled: result.scaled,
        averaged: result.averaged,
        max_violation: rgirf.then(|| result.violations.iter().copied().fold(0.0, f64::max)),
        mean_violation: rgirf
            .then(|| result.violations.iter().sum::<f64>() / result.violations.len() as f64),
    };
    ctx.out.write_json("girf_summary.json", &summary)?;
    println!(
        "{} GIRF draws for {} size(s) at {} origin(s)",
        result.draws(),
        result.sizes.len(),
        result.origins.len()
    );
    ctx.finish("girf")
}

#[derive(Serialize)]
struct VerifyReport {
    seed: u64,
    draws: usize,
    max_deviation_paths: Vec<(usize, f64)>,
    max_deviation_ensemble: Vec<(usize, f64)>,
    max_restriction_gap: f64,
    irf_expectation_max_error: f64,
    irf_recursive_shared_max_error: f64,
}

pub fn verify(loaded: Option<&LoadedConfig>, opts: &RunOptions) -> Result<PathBuf> {
    let vb = loaded
        .and_then(|l| l.config.verify.clone())
        .unwrap_or_default();
    let seed = opts.seed.unwrap_or(vb.seed);
    let out = opts
        .out
        .clone()
        .or_else(|| loaded.and_then(|l| l.config.out.as_ref().map(|o| l.resolve(o))))
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut dir = OutputDir::create(&out)?;
    let report = run_verify(&vb, seed, &mut dir)?;
    dir.write_json("verify_report.json", &report)?;
    for (v, d) in &report.max_deviation_paths {
        println!("V={v:<3} max band deviation {d:.4} unconditional SDs");
    }
    println!(
        "IRF expectation mode max error {:.2e}",
        report.irf_expectation_max_error
    );
    println!(
        "IRF recursive shared-noise max error {:.2e}",
        report.irf_recursive_shared_max_error
    );
    dir.finish(Manifest {
        command: "verify",
        config_sha256: loaded.map(|l| sha256_hex(&l.raw)),
        seed,
        chains: 1,
    })?;
    Ok(out)
}

fn run_verify(vb: &VerifyBlock, seed: u64, dir: &mut OutputDir) -> Result<VerifyReport> {
    let fx = BenchmarkFixture::new(seed)?;
    let n = fx.system.n();
    let start = Quarter::new(1776, 1)?;
    let mut d = start;
    let mut rows = Vec::with_capacity(fx.data.nrows());
    for t in 0..fx.data.nrows() {
        let mut r = vec![d.to_string()];
        r.extend((0..n).map(|i| fmt(fx.data[(t, i)])));
        rows.push(r);
        d = d.next();
    }
    let mut h = vec!["date".to_string()];
    h.extend(BENCHMARK_NAMES.iter().map(|s| s.to_string()));
    dir.write_csv("fixture.csv", &h, &rows)?;

    let table = runtime_table(&fx, &vb.particles, vb.draws, seed)?;
    let mut bands = Vec::new();
    let mut runtime = Vec::new();
    for c in &table {
        runtime.push(vec![
            c.particles.to_string(),
            c.draws.to_string(),
            format!("{:.3}", c.seconds),
            fmt(c.max_deviation_paths),
            fmt(c.max_deviation_ensemble),
            fmt(c.median_deviation_paths),
            fmt(c.max_restriction_gap),
        ]);
        for (src, hz, i, q, est, truth, dev) in &c.rows {
            let src = match src {
                QuantileSource::Paths => "paths",
                QuantileSource::Ensemble => "ensemble",
            };
            bands.push(vec![
                c.particles.to_string(),
                src.to_string(),
                hz.to_string(),
                BENCHMARK_NAMES[*i].to_string(),
                quantile_column(*q),
                fmt(*est),
                fmt(*truth),
                fmt(*dev),
            ]);
        }
    }
    let h = [
        "particles",
        "source",
        "horizon",
        "variable",
        "quantile",
        "estimate",
        "oracle",
        "deviation_sd",
    ];
    dir.write_csv("verify_bands.csv", &h.map(String::from), &bands)?;
    let h = [
        "particles",
        "draws",
        "seconds",
        "max_dev_paths",
        "max_dev_ensemble",
        "median_dev_paths",
        "max_hard_gap",
    ];
    dir.write_csv("verify_runtime.csv", &h.map(String::from), &runtime)?;

    let mut irf_rows = Vec::new();
    let (mut exp_err, mut shared_err): (f64, f64) = (0.0, 0.0);
    for j in 0..n {
        let c = compare_irf(
            &fx.system,
            j,
            vb.irf_particles,
            vb.irf_draws,
            derive_seed(seed, j as u64),
        )?;
        exp_err = exp_err.max(c.pgas_expectation);
        shared_err = shared_err.max(c.recursive_shared);
        irf_rows.push(vec![
            BENCHMARK_NAMES[j].to_string(),
            fmt(c.pgas_expectation),
            fmt(c.pgas_simulation),
            fmt(c.recursive_shared),
            fmt(c.recursive_independent_z),
        ]);
    }
    let h = [
        "shock",
        "pgas_expectation_max_err",
        "pgas_simulation_max_err",
        "recursive_shared_max_err",
        "recursive_independent_max_z",
    ];
    dir.write_csv("verify_irf.csv", &h.map(String::from), &irf_rows)?;

    Ok(VerifyReport {
        seed,
        draws: vb.draws,
        max_deviation_paths: table
            .iter()
            .map(|c| (c.particles, c.max_deviation_paths))
            .collect(),
        max_deviation_ensemble: table
            .iter()
            .map(|c| (c.particles, c.max_deviation_ensemble))
            .collect(),
        max_restriction_gap: table
            .iter()
            .map(|c| c.max_restriction_gap)
            .fold(0.0, f64::max),
        irf_expectation_max_error: exp_err,
        irf_recursive_shared_max_error: shared_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use scenario_core::data::TransformCode;

    #[test]
    fn regressor_names_follow_lag_blocks() {
        let y = DMatrix::from_fn(10, 2, |t, i| (t + i) as f64);
        let dates = (0..10)
            .map(|i| Quarter::new(2000 + i / 4, (i % 4 + 1) as u8).unwrap())
            .collect();
        let panel = Panel::from_levels(
            &y,
            vec!["a".into(), "b".into()],
            2,
            dates,
            vec![TransformCode::Level; 2],
        )
        .unwrap();
        assert_eq!(
            regressor_names(&panel, true),
            vec!["a.l1", "b.l1", "a.l2", "b.l2", "intercept"]
        );
        let d = forecast_dates(&panel, 2);
        assert_eq!(d[0].to_string(), "2002Q3");
        assert_eq!(d[1].to_string(), "2002Q4");
    }
}
