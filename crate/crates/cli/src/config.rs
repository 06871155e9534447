//! Config files, flag overrides and seed resolution.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use subsample_core::adaptive::{AdaptiveConfig, DEFAULT_N_INIT, DEFAULT_N_MAX, DEFAULT_REPETITIONS};
use subsample_core::design::Protocol;
use subsample_core::harness::{RasterSource, DEFAULT_UNIT_SIDE};
use subsample_core::legend::Legend;

pub const SEED_ENV: &str = "SUBSAMPLE_LAB_SEED";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration. Exit code 2.
    Config(String),
    /// Failure while doing the work. Exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err(e: impl fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub fn runtime_err(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses a JSON config file; errors name the offending field path.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_json(&text).map_err(|m| CliError::Config(format!("{}: {m}", path.display())))
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            e.inner().to_string()
        } else {
            format!("{path}: {}", e.inner())
        }
    })
}

pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        Some(p) => load_json(p),
        None => Ok(T::default()),
    }
}

/// Seed precedence: flag, then config file, then the environment, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}: not an unsigned integer: {v:?}"))),
        Err(_) => Ok(0),
    }
}

/// `majority`, `binary:T` (target class 1) or `binary:T:C1+C2`.
pub fn parse_legend(s: &str) -> Result<Legend, String> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("majority") {
        return Ok(Legend::Majority);
    }
    let mut parts = s.split(':');
    if !parts.next().is_some_and(|p| p.eq_ignore_ascii_case("binary")) {
        return Err(format!("expected `majority` or `binary:T[:C1+C2]`, got {s:?}"));
    }
    let t: f64 = parts
        .next()
        .ok_or_else(|| format!("missing threshold in {s:?}"))?
        .parse()
        .map_err(|_| format!("bad threshold in {s:?}"))?;
    let classes = match parts.next() {
        None => vec![1],
        Some(list) => list
            .split('+')
            .map(|c| c.parse::<usize>().map_err(|_| format!("bad class index in {s:?}")))
            .collect::<Result<_, _>>()?,
    };
    if parts.next().is_some() {
        return Err(format!("too many fields in {s:?}"));
    }
    let legend = Legend::binary(classes, t);
    legend.validate(usize::MAX).map_err(|e| e.to_string())?;
    Ok(legend)
}

pub fn parse_protocol(s: &str) -> Result<Protocol, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "ttm" => Ok(Protocol::Ttm),
        "mtt" => Ok(Protocol::Mtt),
        "majority" | "twostagemajority" | "two-stage-majority" => Ok(Protocol::TwoStageMajority),
        _ => Err(format!("unknown protocol {s:?} (TTM, MTT or majority)")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum GeneratorKind {
    PatchMosaic,
    SmoothedBinary,
}

fn d_side() -> usize {
    DEFAULT_UNIT_SIDE * 11
}
fn d_classes() -> usize {
    4
}
fn d_density() -> f64 {
    2.0
}
fn d_radius() -> usize {
    30
}
fn d_cover() -> f64 {
    0.5
}

/// Synthetic raster recipe for `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub kind: GeneratorKind,
    #[serde(default = "d_side")]
    pub width: usize,
    #[serde(default = "d_side")]
    pub height: usize,
    #[serde(default = "d_classes")]
    pub class_count: usize,
    #[serde(default = "d_density")]
    pub patch_density: f64,
    /// Equal weights when absent.
    #[serde(default)]
    pub class_weights: Option<Vec<f64>>,
    #[serde(default = "d_radius")]
    pub smoothing_radius: usize,
    #[serde(default = "d_cover")]
    pub cover_fraction: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::PatchMosaic,
            width: d_side(),
            height: d_side(),
            class_count: d_classes(),
            patch_density: d_density(),
            class_weights: None,
            smoothing_radius: d_radius(),
            cover_fraction: d_cover(),
            seed: None,
        }
    }
}

impl GenerateConfig {
    pub fn source(&self) -> CliResult<RasterSource> {
        let seed = self.seed.unwrap_or(0);
        Ok(match self.kind {
            GeneratorKind::PatchMosaic => {
                let weights = self.class_weights.clone().unwrap_or_else(|| vec![1.0; self.class_count]);
                if weights.len() != self.class_count {
                    return Err(CliError::Config(format!(
                        "class_weights: {} weights for {} classes",
                        weights.len(),
                        self.class_count
                    )));
                }
                RasterSource::PatchMosaic {
                    width: self.width,
                    height: self.height,
                    class_count: self.class_count,
                    patch_density: self.patch_density,
                    class_weights: weights,
                    seed,
                }
            }
            GeneratorKind::SmoothedBinary => RasterSource::SmoothedBinary {
                width: self.width,
                height: self.height,
                smoothing_radius: self.smoothing_radius,
                cover_fraction: self.cover_fraction,
                seed,
            },
        })
    }
}

fn d_unit_side() -> usize {
    DEFAULT_UNIT_SIDE
}
fn d_alpha() -> f64 {
    0.001
}
fn d_legend() -> Legend {
    Legend::binary(vec![1], 0.5)
}
fn d_n_init() -> usize {
    DEFAULT_N_INIT
}
fn d_n_max() -> usize {
    DEFAULT_N_MAX
}
fn d_increment() -> usize {
    1
}
fn d_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

/// Adaptive-rule settings shared by `optimize` and `label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    #[serde(default = "d_legend")]
    pub legend: Legend,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_n_init")]
    pub n_init: usize,
    #[serde(default = "d_n_max")]
    pub n_max: usize,
    #[serde(default = "d_increment")]
    pub increment: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            legend: d_legend(),
            alpha: d_alpha(),
            n_init: d_n_init(),
            n_max: d_n_max(),
            increment: d_increment(),
        }
    }
}

impl RuleConfig {
    pub fn adaptive(&self) -> AdaptiveConfig {
        AdaptiveConfig {
            alpha: self.alpha,
            n_init: self.n_init,
            n_max: self.n_max,
            increment: self.increment,
            legend: self.legend.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    #[serde(default)]
    pub raster: Option<RasterSource>,
    #[serde(default = "d_unit_side")]
    pub unit_side: usize,
    #[serde(default)]
    pub rule: RuleConfig,
    #[serde(default = "d_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            raster: None,
            unit_side: d_unit_side(),
            rule: RuleConfig::default(),
            repetitions: d_repetitions(),
            master_seed: None,
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalogramConfig {
    #[serde(default)]
    pub raster: Option<RasterSource>,
    #[serde(default = "d_sides")]
    pub unit_sides: Vec<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn d_sides() -> Vec<usize> {
    vec![30, 60, 90, 180, 360]
}

impl Default for ScalogramConfig {
    fn default() -> Self {
        Self {
            raster: None,
            unit_sides: d_sides(),
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    #[serde(default)]
    pub raster: Option<RasterSource>,
    #[serde(default = "d_unit_side")]
    pub unit_side: usize,
    #[serde(default)]
    pub unit_row: usize,
    #[serde(default)]
    pub unit_col: usize,
    #[serde(default)]
    pub rule: RuleConfig,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            raster: None,
            unit_side: d_unit_side(),
            unit_row: 0,
            unit_col: 0,
            rule: RuleConfig::default(),
            seed: None,
        }
    }
}

pub fn require_raster(raster: &Option<RasterSource>) -> CliResult<&RasterSource> {
    raster
        .as_ref()
        .ok_or_else(|| CliError::Config("raster: give --raster or a raster entry in the config file".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legend_syntax() {
        assert_eq!(parse_legend("majority").unwrap(), Legend::Majority);
        assert_eq!(parse_legend("binary:0.1").unwrap(), Legend::binary(vec![1], 0.1));
        assert_eq!(parse_legend("binary:0.75:1+3").unwrap(), Legend::binary(vec![1, 3], 0.75));
        for bad in ["binary", "binary:x", "binary:1.5", "binary:0.5:a", "binary:0.5:1:2", "tree"] {
            assert!(parse_legend(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn protocol_names() {
        assert_eq!(parse_protocol("ttm").unwrap(), Protocol::Ttm);
        assert_eq!(parse_protocol("MTT").unwrap(), Protocol::Mtt);
        assert_eq!(parse_protocol("majority").unwrap(), Protocol::TwoStageMajority);
        assert!(parse_protocol("mean").is_err());
    }

    #[test]
    fn json_errors_carry_the_field_path() {
        let err = parse_json::<OptimizeConfig>(r#"{"rule": {"alpha": "high"}}"#).unwrap_err();
        assert!(err.starts_with("rule.alpha"), "{err}");
        let err = parse_json::<OptimizeConfig>(r#"{"repetition": 3}"#).unwrap_err();
        assert!(err.contains("repetition"), "{err}");
        let ok: OptimizeConfig = parse_json("{}").unwrap();
        assert_eq!(ok, OptimizeConfig::default());
    }

    #[test]
    fn flag_seed_wins_over_config() {
        assert_eq!(resolve_seed(Some(3), Some(4)).unwrap(), 3);
        assert_eq!(resolve_seed(None, Some(4)).unwrap(), 4);
    }

    #[test]
    fn generator_weights_must_match_classes() {
        let mut g = GenerateConfig {
            class_weights: Some(vec![1.0]),
            ..GenerateConfig::default()
        };
        assert!(g.source().is_err());
        g.class_weights = None;
        match g.source().unwrap() {
            RasterSource::PatchMosaic { class_weights, .. } => assert_eq!(class_weights, vec![1.0; 4]),
            other => panic!("{other:?}"),
        }
    }
}
