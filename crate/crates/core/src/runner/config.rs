//! Experiment configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dynamics::{StepsizeSchedule, StoppingCriterion};
use crate::error::{Error, Result};
use crate::lp::IsoPolicy;
use crate::network::{preset, preset_names, NetworkCase};
use crate::rng;
use crate::robustness::{DisturbanceModel, StrategySpec};

/// Where the network comes from. In JSON either a preset name, or an object
/// with exactly one of `preset`, `file` or `inline`.
#[derive(Debug, Clone, PartialEq)]
pub enum CaseSource {
    Preset(String),
    /// Relative paths resolve against the config file's directory.
    File(PathBuf),
    Inline(NetworkCase),
}

impl CaseSource {
    pub fn load(&self, base_dir: Option<&Path>) -> Result<NetworkCase> {
        match self {
            CaseSource::Preset(name) => preset(name).ok_or_else(|| {
                Error::config("case", format!("unknown preset `{name}`; expected one of {:?}", preset_names()))
            }),
            CaseSource::File(path) => {
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                NetworkCase::from_json_file(&path)
            }
            CaseSource::Inline(case) => Ok(case.clone()),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseTable {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inline: Option<NetworkCase>,
}

impl Serialize for CaseSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CaseSource::Preset(name) => s.serialize_str(name),
            CaseSource::File(path) => CaseTable {
                preset: None,
                file: Some(path.clone()),
                inline: None,
            }
            .serialize(s),
            CaseSource::Inline(case) => CaseTable {
                preset: None,
                file: None,
                inline: Some(case.clone()),
            }
            .serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for CaseSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct CaseVisitor;

        impl<'de> Visitor<'de> for CaseVisitor {
            type Value = CaseSource;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a preset name or an object with one of `preset`, `file`, `inline`")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<CaseSource, E> {
                Ok(CaseSource::Preset(v.to_owned()))
            }

            fn visit_map<A: MapAccess<'de>>(self, map: A) -> std::result::Result<CaseSource, A::Error> {
                let table = CaseTable::deserialize(de::value::MapAccessDeserializer::new(map))?;
                match (table.preset, table.file, table.inline) {
                    (Some(p), None, None) => Ok(CaseSource::Preset(p)),
                    (None, Some(f), None) => Ok(CaseSource::File(f)),
                    (None, None, Some(c)) => Ok(CaseSource::Inline(c)),
                    _ => Err(de::Error::custom("exactly one of `preset`, `file`, `inline` is required")),
                }
            }
        }

        d.deserialize_any(CaseVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baa,
    Perturbed,
    Deviation,
    Collusion,
    OpfOnly,
}

/// The ISO's vertex selection. Randomized pivoting draws from the `pivot`
/// stream of the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsoChoice {
    #[default]
    Deterministic,
    Randomized,
}

impl IsoChoice {
    pub fn policy(self, seed: u64) -> IsoPolicy {
        match self {
            IsoChoice::Deterministic => IsoPolicy::Deterministic,
            IsoChoice::Randomized => IsoPolicy::Randomized {
                seed: rng::substream_seed(seed, rng::PIVOT),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationConfig {
    /// Generator id of the deviant.
    #[serde(default)]
    pub generator: Option<u32>,
    #[serde(default)]
    pub strategy: Option<StrategySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollusionConfig {
    /// Generator ids of the colluders.
    #[serde(default)]
    pub members: Option<Vec<u32>>,
    /// One strategy per member, in the same order.
    #[serde(default)]
    pub strategies: Option<Vec<StrategySpec>>,
    /// Run even if some generating bus is left without a conforming generator.
    #[serde(default)]
    pub allow_uncovered_buses: bool,
}

/// Sampling of the best payoff near the equilibrium, used to judge whether
/// deviating or colluding paid off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UmaxConfig {
    #[serde(default = "default_umax_samples")]
    pub samples: usize,
    /// Power on `(1 + B(r)/(2 a_max))` in the ball radius.
    #[serde(default = "default_umax_exponent")]
    pub exponent: f64,
}

fn default_umax_samples() -> usize {
    2000
}

fn default_umax_exponent() -> f64 {
    1.0
}

impl Default for UmaxConfig {
    fn default() -> Self {
        UmaxConfig {
            samples: default_umax_samples(),
            exponent: default_umax_exponent(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Also write the plot CSVs.
    #[serde(default = "default_true")]
    pub plots: bool,
    /// Also render the plots as SVG line charts.
    #[serde(default)]
    pub svg: bool,
}

fn default_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            plots: true,
            svg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: CaseSource,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to uniform draws on `[c_n, c_n + 10]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_bids: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<StepsizeSchedule>,
    #[serde(default)]
    pub stop: StoppingCriterion,
    #[serde(default)]
    pub iso_policy: IsoChoice,
    /// Radius for the convergence bounds. Defaults to the smallest radius
    /// whose step bound admits the schedule's largest stepsize.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Disturbance-to-state ratio for the perturbed bounds. Defaults to just
    /// inside the range where the perturbed rate factor is below one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<DeviationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collusion: Option<CollusionConfig>,
    #[serde(default)]
    pub umax: UmaxConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory of the file this config was read from.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
        })?;
        config.check_complete()?;
        Ok(config)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Mode-specific completeness.
    pub fn check_complete(&self) -> Result<()> {
        let missing = |path: &str| Err(Error::config(path, format!("required in {:?} mode", self.mode)));
        if self.mode != Mode::OpfOnly && self.schedule.is_none() {
            return missing("schedule");
        }
        match self.mode {
            Mode::Perturbed if self.disturbance.is_none() => missing("disturbance"),
            Mode::Deviation => match &self.deviation {
                None => missing("deviation.generator"),
                Some(d) if d.generator.is_none() => missing("deviation.generator"),
                Some(d) if d.strategy.is_none() => missing("deviation.strategy"),
                _ => Ok(()),
            },
            Mode::Collusion => match &self.collusion {
                None => missing("collusion.members"),
                Some(c) => match (&c.members, &c.strategies) {
                    (None, _) => missing("collusion.members"),
                    (Some(_), None) => missing("collusion.strategies"),
                    (Some(m), Some(s)) if m.len() != s.len() => Err(Error::config(
                        "collusion.strategies",
                        format!("{} strategies for {} members", s.len(), m.len()),
                    )),
                    _ => Ok(()),
                },
            },
            _ => Ok(()),
        }
    }
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut config = ExperimentConfig::from_json_str(&text)?;
    config.base_dir = path.parent().map(Path::to_path_buf);
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ieee9_modified;

    #[test]
    fn preset_name_loads_reference_case() {
        let config = ExperimentConfig::from_json_str(r#"{"case": "ieee9-modified", "mode": "opf_only"}"#).unwrap();
        assert_eq!(config.case.load(None).unwrap(), ieee9_modified());
        let obj = ExperimentConfig::from_json_str(r#"{"case": {"preset": "ieee9-modified"}, "mode": "opf_only"}"#)
            .unwrap();
        assert_eq!(obj.case, config.case);
    }

    #[test]
    fn empty_document_is_a_schema_error() {
        assert!(matches!(ExperimentConfig::from_json_str(""), Err(Error::Config { .. })));
    }

    #[test]
    fn collusion_without_members_names_the_key() {
        let err = ExperimentConfig::from_json_str(
            r#"{"case": "ieee9-modified", "mode": "collusion", "schedule": {"kind": "constant", "beta": 0.01}}"#,
        )
        .unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "collusion.members"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_key_is_reported_with_its_path() {
        let err = ExperimentConfig::from_json_str(
            r#"{"case": "ieee9-modified", "mode": "baa", "schedule": {"kind": "constant", "beta": 0.01, "gamma": 1}}"#,
        )
        .unwrap_err();
        match err {
            Error::Config { path, message } => {
                assert_eq!(path, "schedule");
                assert!(message.contains("gamma"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn case_object_needs_exactly_one_source() {
        let err = ExperimentConfig::from_json_str(
            r#"{"case": {"preset": "ieee9-modified", "file": "x.json"}, "mode": "opf_only"}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("exactly one"), "{err}");
    }

    #[test]
    fn round_trip_preserves_semantics() {
        let text = r#"{
            "case": {"inline": {"buses": [{"id": 1, "load": 1.0}], "lines": [],
                                 "generators": [{"id": 1, "bus": 1, "a": 1.0, "c": 0.0},
                                                {"id": 2, "bus": 1, "a": 2.0, "c": 1.0}]}},
            "mode": "collusion", "seed": 42,
            "schedule": {"kind": "per_generator_random", "low": 0.001, "high": 0.1},
            "stop": {"epsilon": null, "max_iters": 50},
            "iso_policy": "randomized",
            "collusion": {"members": [1], "strategies": [{"kind": "uniform_above", "floor": 2.0, "width": 0.5}]},
            "output": {"dir": "out", "svg": true}
        }"#;
        let config = ExperimentConfig::from_json_str(text).unwrap();
        let again = ExperimentConfig::from_json_str(&config.to_json_string()).unwrap();
        assert_eq!(config, again);
    }
}
