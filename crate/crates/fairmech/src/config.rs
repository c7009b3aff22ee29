//! TOML run configuration: an `[auction]` section with the model parameters
//! and per-group distribution blocks (`[group1.round3]`, or `[group1.all]`
//! as a fallback applied to every round without its own block).

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::dist::{DistError, GroupProfile, ValueDistribution};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid distribution: {0}")]
    Dist(#[from] DistError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    auction: RawAuction,
    group1: BTreeMap<String, RawDist>,
    group2: BTreeMap<String, RawDist>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAuction {
    #[serde(rename = "T", alias = "rounds")]
    rounds: usize,
    #[serde(rename = "n", alias = "buyers_per_group")]
    buyers_per_group: u32,
    delta: f64,
    alpha1: f64,
    alpha2: f64,
    seed: Option<u64>,
    replications: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawDist {
    Uniform { lo: f64, hi: f64 },
    ShiftedUniform { lo: f64, hi: f64, shift: f64 },
    TruncatedExponential { lo: f64, hi: f64, rate: f64 },
    Tabulated { points: Vec<(f64, f64)> },
}

impl RawDist {
    fn build(&self) -> Result<ValueDistribution, DistError> {
        match self {
            RawDist::Uniform { lo, hi } => ValueDistribution::uniform(*lo, *hi),
            RawDist::ShiftedUniform { lo, hi, shift } => {
                ValueDistribution::shifted_uniform(*lo, *hi, *shift)
            }
            RawDist::TruncatedExponential { lo, hi, rate } => {
                ValueDistribution::truncated_exponential(*lo, *hi, *rate)
            }
            RawDist::Tabulated { points } => ValueDistribution::tabulated(points.clone()),
        }
    }
}

/// Validated, ready-to-run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub profile: GroupProfile,
    pub delta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub seed: u64,
    pub replications: usize,
}

const DEFAULT_REPLICATIONS: usize = 10_000;

fn group_rounds(
    section: &str,
    blocks: &BTreeMap<String, RawDist>,
    horizon: usize,
) -> Result<Vec<ValueDistribution>, ConfigError> {
    let mut fallback: Option<ValueDistribution> = None;
    let mut per_round: Vec<Option<ValueDistribution>> = vec![None; horizon];
    for (key, raw) in blocks {
        let dist = raw.build()?;
        if key == "all" {
            fallback = Some(dist);
        } else if let Some(suffix) = key.strip_prefix("round") {
            let t: usize = suffix.parse().map_err(|_| {
                ConfigError::Invalid(format!(
                    "[{section}.{key}]: expected \"all\" or \"round<1..={horizon}>\""
                ))
            })?;
            if t == 0 || t > horizon {
                return Err(ConfigError::Invalid(format!(
                    "[{section}.{key}]: round index must lie in 1..={horizon}"
                )));
            }
            per_round[t - 1] = Some(dist);
        } else {
            return Err(ConfigError::Invalid(format!(
                "[{section}.{key}]: expected \"all\" or \"round<1..={horizon}>\""
            )));
        }
    }
    per_round
        .into_iter()
        .enumerate()
        .map(|(idx, slot)| {
            slot.or_else(|| fallback.clone()).ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "no distribution for [{section}.round{}] and no [{section}.all] fallback",
                    idx + 1
                ))
            })
        })
        .collect()
}

fn check_level(name: &str, alpha: f64) -> Result<(), ConfigError> {
    if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
        return Err(ConfigError::Invalid(format!(
            "{name} must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let a = &raw.auction;
        if a.rounds == 0 {
            return Err(ConfigError::Invalid("T must be at least 1".into()));
        }
        if a.buyers_per_group == 0 {
            return Err(ConfigError::Invalid("n must be at least 1".into()));
        }
        if !(a.delta > 0.0 && a.delta <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "delta must lie in (0, 1], got {}",
                a.delta
            )));
        }
        check_level("alpha1", a.alpha1)?;
        check_level("alpha2", a.alpha2)?;
        let group1 = group_rounds("group1", &raw.group1, a.rounds)?;
        let group2 = group_rounds("group2", &raw.group2, a.rounds)?;
        let profile = GroupProfile::new(group1, group2, a.buyers_per_group)?;
        Ok(RunConfig {
            profile,
            delta: a.delta,
            alpha1: a.alpha1,
            alpha2: a.alpha2,
            seed: a.seed.unwrap_or(0),
            replications: a.replications.unwrap_or(DEFAULT_REPLICATIONS),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANONICAL: &str = r#"
        [auction]
        T = 2
        n = 1
        delta = 0.5
        alpha1 = 0.2
        alpha2 = 0.2
        seed = 7
        replications = 500

        [group1.all]
        kind = "uniform"
        lo = 0.0
        hi = 1.0

        [group2.all]
        kind = "shifted_uniform"
        lo = 0.0
        hi = 1.0
        shift = -0.5
    "#;

    #[test]
    fn parses_canonical_config() {
        let cfg = RunConfig::from_toml_str(CANONICAL).unwrap();
        assert_eq!(cfg.profile.horizon(), 2);
        assert_eq!(cfg.profile.n(), 1);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.replications, 500);
        let (d1, d2) = cfg.profile.round(2);
        assert_eq!((d1.lo(), d1.hi()), (0.0, 1.0));
        assert_eq!((d2.lo(), d2.hi()), (-0.5, 0.5));
    }

    #[test]
    fn round_block_overrides_fallback() {
        let text = CANONICAL.replace(
            "[group1.all]",
            "[group1.round2]\nkind = \"truncated_exponential\"\nlo = 0.0\nhi = 2.0\nrate = 1.5\n\n[group1.all]",
        );
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        let (d1_r1, _) = cfg.profile.round(1);
        let (d1_r2, _) = cfg.profile.round(2);
        assert_eq!(d1_r1.hi(), 1.0);
        assert_eq!(d1_r2.hi(), 2.0);
    }

    #[test]
    fn defaults_apply_when_optional_keys_missing() {
        let text = CANONICAL
            .replace("seed = 7\n", "")
            .replace("replications = 500\n", "");
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.replications, DEFAULT_REPLICATIONS);
    }

    #[test]
    fn rejects_bad_inputs() {
        let missing_round = CANONICAL.replace("[group2.all]", "[group2.round1]");
        assert!(matches!(
            RunConfig::from_toml_str(&missing_round),
            Err(ConfigError::Invalid(msg)) if msg.contains("group2.round2")
        ));
        let bad_delta = CANONICAL.replace("delta = 0.5", "delta = 1.5");
        assert!(matches!(
            RunConfig::from_toml_str(&bad_delta),
            Err(ConfigError::Invalid(msg)) if msg.contains("delta")
        ));
        let bad_alpha = CANONICAL.replace("alpha2 = 0.2", "alpha2 = 1.2");
        assert!(matches!(
            RunConfig::from_toml_str(&bad_alpha),
            Err(ConfigError::Invalid(msg)) if msg.contains("alpha2")
        ));
        let bad_key = CANONICAL.replace("[group1.all]", "[group1.everywhere]");
        assert!(RunConfig::from_toml_str(&bad_key).is_err());
        let not_toml = "auction = nonsense";
        assert!(matches!(
            RunConfig::from_toml_str(not_toml),
            Err(ConfigError::Parse(_))
        ));
        let bad_dist = CANONICAL.replace("hi = 1.0", "hi = -1.0");
        assert!(matches!(
            RunConfig::from_toml_str(&bad_dist),
            Err(ConfigError::Dist(_))
        ));
    }

    #[test]
    fn tabulated_distribution_round_trips() {
        let text = CANONICAL.replace(
            "[group2.all]\n        kind = \"shifted_uniform\"\n        lo = 0.0\n        hi = 1.0\n        shift = -0.5",
            "[group2.all]\n        kind = \"tabulated\"\n        points = [[0.0, 0.0], [0.5, 0.4], [1.0, 1.0]]",
        );
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        let (_, d2) = cfg.profile.round(1);
        assert_eq!((d2.lo(), d2.hi()), (0.0, 1.0));
        assert!((d2.cdf(0.5).unwrap() - 0.4).abs() < 1e-12);
    }
}
