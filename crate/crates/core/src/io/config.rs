use serde::{Deserialize, Serialize};

use crate::clustering::ClusterConfig;
use crate::error::{Error, Result};
use crate::grid::DEFAULT_DEGREE_EPS;
use crate::hgconv::{RefineOptions, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};

/// HG module hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModuleConfig {
    pub layers: usize,
    pub noise_cancel: bool,
    pub max_direction: bool,
    /// Lower clamp on degrees before inversion.
    pub degree_eps: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModuleConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            noise_cancel: true,
            max_direction: true,
            degree_eps: DEFAULT_DEGREE_EPS,
            bn_eps: DEFAULT_BN_EPS,
            bn_momentum: DEFAULT_BN_MOMENTUM,
        }
    }
}

impl ModuleConfig {
    pub fn refine_options(&self) -> RefineOptions {
        RefineOptions {
            noise_cancel: self.noise_cancel,
            max_direction: self.max_direction,
            eps: self.degree_eps,
        }
    }
}

/// Complete run configuration: `[cluster]` and `[module]` sections, every
/// field optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cluster: ClusterConfig,
    pub module: ModuleConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.cluster
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if i64::try_from(self.cluster.seed).is_err() {
            return Err(Error::Config(
                "seed must fit in a signed 64-bit integer".into(),
            ));
        }
        let m = &self.module;
        if !(m.degree_eps > 0.0 && m.degree_eps.is_finite()) {
            return Err(Error::Config("degree_eps must be positive".into()));
        }
        if !(m.bn_eps > 0.0 && m.bn_eps.is_finite()) {
            return Err(Error::Config("bn_eps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&m.bn_momentum) {
            return Err(Error::Config("bn_momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Parses and validates TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        self.validate()?;
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Sampler;
    use proptest::prelude::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_override_defaults() {
        let cfg = RunConfig::from_toml_str(
            "[cluster]\ndownsample_ratio = 0.0625\nsampler = \"importance\"\nseed = 9\n[module]\nlayers = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.cluster.downsample_ratio, 0.0625);
        assert_eq!(cfg.cluster.sampler, Sampler::Importance);
        assert_eq!(cfg.cluster.seed, 9);
        assert_eq!(cfg.cluster.iterations, 5);
        assert_eq!(cfg.module.layers, 3);
        assert!(cfg.module.noise_cancel);
    }

    #[test]
    fn bad_text_is_a_config_error() {
        for text in [
            "[cluster]\nunknown = 1\n",
            "[cluster]\ntemperature = \"hot\"\n",
            "[cluster\n",
            "[cluster]\ntemperature = -1.0\n",
            "[module]\nbn_momentum = 2.0\n",
            "[extra]\n",
        ] {
            assert!(
                matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    fn sampler() -> impl Strategy<Value = Sampler> {
        prop_oneof![
            Just(Sampler::UniformRandom),
            Just(Sampler::Importance),
            Just(Sampler::TopkRandom)
        ]
    }

    proptest! {
        #[test]
        fn parse_serialize_parse_is_identity(
            ratio in 1e-4f64..=1.0,
            iterations in 1usize..20,
            temperature in 1e-3f64..10.0,
            lambda in 0.0f64..5.0,
            k in 1usize..16,
            s in sampler(),
            kappa in 1usize..8,
            beta in 0.0f64..=1.0,
            alpha in 0.0f64..100.0,
            seed in 0u64..=i64::MAX as u64,
            layers in 0usize..6,
            flags in any::<(bool, bool)>(),
            momentum in 0.0f64..=1.0,
        ) {
            let cfg = RunConfig {
                cluster: ClusterConfig {
                    downsample_ratio: ratio,
                    iterations,
                    temperature,
                    position_weight: lambda,
                    candidates_per_pixel: k,
                    sampler: s,
                    oversample: kappa,
                    topk_fraction: beta,
                    focus_alpha: alpha,
                    seed,
                },
                module: ModuleConfig {
                    layers,
                    noise_cancel: flags.0,
                    max_direction: flags.1,
                    bn_momentum: momentum,
                    ..ModuleConfig::default()
                },
            };
            let text = cfg.to_toml_string().unwrap();
            let back = RunConfig::from_toml_str(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_toml_string().unwrap(), text);
        }
    }
}
