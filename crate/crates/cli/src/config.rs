use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scenario_core::data::TransformCode;
use scenario_core::gibbs::{Backend, PriorConfig, SamplerConfig};
use scenario_core::girf::{GirfVariant, Origins, RecursiveNoise};
use scenario_core::pgas::{AncestorWeights, PgasConfig};
use scenario_core::{Error, Result};

pub const DEFAULT_QUANTILES: [f64; 5] = [0.16, 0.25, 0.5, 0.75, 0.84];

fn default_quantiles() -> Vec<f64> {
    DEFAULT_QUANTILES.to_vec()
}

/// A run configuration file. Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Transformation code per variable; unlisted variables enter in levels.
    #[serde(default)]
    pub transforms: BTreeMap<String, TransformCode>,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub sampler: SamplerBlock,
    pub forecast: Option<ForecastBlock>,
    pub girf: Option<GirfBlock>,
    pub verify: Option<VerifyBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub backend: Backend,
    pub p: usize,
    pub trees: usize,
    pub heteroskedastic: bool,
    pub priors: PriorConfig,
}

impl Default for ModelBlock {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            backend: s.backend,
            p: s.p,
            trees: s.trees,
            heteroskedastic: s.heteroskedastic,
            priors: s.priors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerBlock {
    pub n_burn: usize,
    pub n_save: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    /// Particles `V`.
    pub particles: usize,
    pub ancestor_weights: AncestorWeights,
    /// Draw future outlier scales from their prior in forecasts and GIRFs.
    pub simulate_future_outliers: bool,
}

impl Default for SamplerBlock {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            n_burn: s.n_burn,
            n_save: s.n_save,
            thin: s.thin,
            seed: s.seed,
            chains: 1,
            particles: PgasConfig::default().particles,
            ancestor_weights: AncestorWeights::default(),
            simulate_future_outliers: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastBlock {
    /// Restriction file; absent means an unconditional forecast.
    pub restrictions: Option<PathBuf>,
    pub horizon: usize,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
    /// Update the parameters given the restrictions by appending each drawn path to the data.
    #[serde(default)]
    pub augment: bool,
    pub hard_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GirfMethod {
    Pgas,
    Recursive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GirfBlock {
    pub variant: GirfVariant,
    /// Name of the variable whose structural shock is studied.
    pub shock: Option<String>,
    pub sizes: Vec<f64>,
    pub baseline_level: f64,
    pub horizon: usize,
    pub method: GirfMethod,
    pub noise: RecursiveNoise,
    pub origins: Origins,
    pub scale: bool,
    pub average: bool,
    /// Variables reported as cumulative sums over horizons.
    pub cumulate: Vec<String>,
    pub pin_other_shocks: bool,
    pub unrestricted_others: bool,
    /// RGIRF: variables matched to the baseline path.
    pub matched: Vec<String>,
    /// Shocks held at their unconditional distribution after impact.
    pub non_driving: Vec<String>,
    /// UGIRF scenario and optional baseline restriction files.
    pub scenario: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub quantiles: Vec<f64>,
}

impl Default for GirfBlock {
    fn default() -> Self {
        Self {
            variant: GirfVariant::Sgirf,
            shock: None,
            sizes: vec![1.0],
            baseline_level: 0.0,
            horizon: 20,
            method: GirfMethod::Pgas,
            noise: RecursiveNoise::Shared,
            origins: Origins::Last,
            scale: true,
            average: false,
            cumulate: Vec::new(),
            pin_other_shocks: false,
            unrestricted_others: false,
            matched: Vec::new(),
            non_driving: Vec::new(),
            scenario: None,
            baseline: None,
            quantiles: default_quantiles(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyBlock {
    pub seed: u64,
    pub particles: Vec<usize>,
    pub draws: usize,
    pub irf_draws: usize,
    pub irf_particles: usize,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            seed: 1,
            particles: vec![5, 10, 25, 50],
            draws: 3000,
            irf_draws: 200,
            irf_particles: 10,
        }
    }
}

/// A parsed configuration with the raw bytes it came from.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Vec<u8>,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        let text = std::str::from_utf8(&raw)
            .map_err(|_| Error::Config(format!("config `{}` is not UTF-8", path.display())))?;
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("config `{}`: {e}", path.display())))?;
        config.validate()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, raw, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

fn check_quantiles(qs: &[f64], block: &str) -> Result<()> {
    if qs.is_empty() || qs.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
        return Err(Error::Config(format!(
            "[{block}] quantiles must lie strictly between 0 and 1"
        )));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler_config(self.sampler.seed).validate()?;
        if self.sampler.chains == 0 {
            return Err(Error::Config("[sampler] chains must be at least 1".into()));
        }
        if self.sampler.particles < 2 {
            return Err(Error::Config(
                "[sampler] particles must be at least 2".into(),
            ));
        }
        if let Some(f) = &self.forecast {
            if f.horizon == 0 {
                return Err(Error::Config("[forecast] horizon must be positive".into()));
            }
            check_quantiles(&f.quantiles, "forecast")?;
        }
        if let Some(g) = &self.girf {
            check_quantiles(&g.quantiles, "girf")?;
        }
        if let Some(v) = &self.verify {
            if v.particles.iter().any(|&p| p < 2) || v.draws == 0 || v.irf_draws < 2 {
                return Err(Error::Config(
                    "[verify] needs particles >= 2, draws >= 1 and irf_draws >= 2".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn sampler_config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_burn: self.sampler.n_burn,
            n_save: self.sampler.n_save,
            thin: self.sampler.thin,
            seed,
            backend: self.model.backend,
            heteroskedastic: self.model.heteroskedastic,
            p: self.model.p,
            trees: self.model.trees,
            priors: self.model.priors.clone(),
        }
    }

    pub fn pgas_config(&self) -> PgasConfig {
        PgasConfig {
            particles: self.sampler.particles,
            ancestor_weights: self.sampler.ancestor_weights,
            keep_ensemble: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c: RunConfig = toml::from_str("data = \"d.csv\"\n[forecast]\nhorizon = 4\n").unwrap();
        c.validate().unwrap();
        assert_eq!(c.model.trees, 250);
        assert_eq!(c.sampler.particles, 10);
        assert_eq!(c.forecast.unwrap().quantiles, DEFAULT_QUANTILES.to_vec());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("dat = \"d.csv\"").is_err());
        assert!(toml::from_str::<RunConfig>("[model]\ntrees = 5\nlags = 2").is_err());
        assert!(toml::from_str::<RunConfig>("[model.priors]\nalpah = 0.9").is_err());
    }

    #[test]
    fn transform_codes_and_origins_parse() {
        let c: RunConfig = toml::from_str(
            "[transforms]\nGDP = 1\nRATE = 0\n[girf]\nshock = \"RATE\"\norigins = { list = [3, 4] }\n",
        )
        .unwrap();
        assert_eq!(c.transforms["GDP"], TransformCode::AnnLogDiff);
        assert_eq!(c.girf.unwrap().origins, Origins::List(vec![3, 4]));
        assert!(toml::from_str::<RunConfig>("[transforms]\nGDP = 7").is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let c: RunConfig = toml::from_str("[sampler]\nchains = 0").unwrap();
        assert!(c.validate().is_err());
        let c: RunConfig =
            toml::from_str("[forecast]\nhorizon = 4\nquantiles = [0.5, 1.2]").unwrap();
        assert!(c.validate().is_err());
    }
}
