use scenario_core::pgas::PgasConfig;
use scenario_core::restrictions::RestrictionSet;
use scenario_core::verify::{
    compare_conditional_forecast, BenchmarkFixture, QuantileSource, BENCHMARK_HORIZON,
};

// Quantile gaps shrink with the number of draws, so the sampler is unbiased
// for the closed form and the gap at 3000 draws is Monte Carlo error.
#[test]
fn conditional_forecast_converges_to_closed_form() {
    let fx = BenchmarkFixture::new(1).unwrap();
    let c = compare_conditional_forecast(&fx, PgasConfig::default(), 30_000, 100, 11).unwrap();
    assert!(
        c.max_deviation_paths <= 0.05,
        "paths {}",
        c.max_deviation_paths
    );
    assert!(
        c.max_deviation_ensemble <= 0.05,
        "ensemble {}",
        c.max_deviation_ensemble
    );
    assert!(c.max_restriction_gap <= 1e-3);
}

#[test]
fn unconditional_forecast_matches_closed_form() {
    let mut fx = BenchmarkFixture::new(2).unwrap();
    fx.restrictions = RestrictionSet::empty(fx.system.n(), BENCHMARK_HORIZON);
    let c = compare_conditional_forecast(&fx, PgasConfig::default(), 8000, 0, 3).unwrap();
    assert!(c.max_deviation_paths <= 0.1, "{}", c.max_deviation_paths);
    assert!(
        c.median_deviation_paths <= 0.03,
        "{}",
        c.median_deviation_paths
    );
    let signed: f64 = c
        .rows
        .iter()
        .filter(|r| r.0 == QuantileSource::Paths && r.3 == 0.5)
        .map(|r| (r.4 - r.5) / fx.unconditional_sd[r.2])
        .sum::<f64>()
        / (BENCHMARK_HORIZON * fx.system.n()) as f64;
    assert!(signed.abs() <= 0.02, "{signed}");
}
