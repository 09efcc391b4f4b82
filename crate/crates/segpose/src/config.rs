//! Pipeline configuration: every tunable and every seed of a run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use segpose_core::fusion::{default_threshold, Strategy, DEFAULT_BEST_N, DEFAULT_MIN_CELLS};
use segpose_core::geometry::CameraIntrinsics;
use segpose_core::grid::{GridSpec, DEFAULT_GRID_SIZE, DEFAULT_NORM_SPAN};
use segpose_core::losses::LossConfig;
use segpose_core::pnp::RansacParams;
use segpose_core::simulator::{NoiseModel, SceneConfig};

use crate::error::{Error, Result};
use crate::formats::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_scene_count")]
    pub scenes: usize,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub camera: CameraSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub ransac: RansacSection,
    #[serde(default)]
    pub paths: Paths,
}

fn default_scene_count() -> usize {
    100
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seeds: Seeds::default(),
            scenes: default_scene_count(),
            scene: SceneSection::default(),
            camera: CameraSection::default(),
            grid: GridSection::default(),
            loss: LossSection::default(),
            noise: NoiseSection::default(),
            fusion: FusionSection::default(),
            ransac: RansacSection::default(),
            paths: Paths::default(),
        }
    }
}

/// Independent seeds for each stochastic stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub models: u64,
    pub scenes: u64,
    pub noise: u64,
    pub ransac: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_master(0)
    }
}

impl Seeds {
    /// Distinct per-stage seeds derived from one number.
    pub fn from_master(master: u64) -> Self {
        Self { models: 0, scenes: mix(master, 1), noise: mix(master, 2), ransac: mix(master, 3) }
    }
}

/// SplitMix64 finalizer over `a` and `b`.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_depth: f64,
    pub max_depth: f64,
    pub margin_px: f64,
    pub min_separation_px: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        let c = SceneConfig::default();
        Self {
            min_objects: c.min_objects,
            max_objects: c.max_objects,
            min_depth: c.min_depth,
            max_depth: c.max_depth,
            margin_px: c.margin_px,
            min_separation_px: c.min_separation_px,
        }
    }
}

impl SceneSection {
    pub fn to_core(&self) -> SceneConfig {
        SceneConfig {
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            min_depth: self.min_depth,
            max_depth: self.max_depth,
            margin_px: self.margin_px,
            min_separation_px: self.min_separation_px,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraSection {
    fn default() -> Self {
        Self { fx: 600.0, fy: 600.0, cx: 304.0, cy: 304.0, width: 608, height: 608 }
    }
}

impl CameraSection {
    pub fn to_core(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(|e| Error::Config(format!("camera: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub size: usize,
    pub norm_span: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { size: DEFAULT_GRID_SIZE, norm_span: DEFAULT_NORM_SPAN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub tau: f64,
    pub beta: f64,
    pub gamma_reg: f64,
    pub focal_gamma: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let c = LossConfig::with_defaults(1);
        Self { tau: c.tau, beta: c.beta, gamma_reg: c.gamma_reg, focal_gamma: c.focal_gamma }
    }
}

impl LossSection {
    pub fn to_core(&self, class_weights: Vec<f64>) -> LossConfig {
        LossConfig {
            tau: self.tau,
            beta: self.beta,
            gamma_reg: self.gamma_reg,
            focal_gamma: self.focal_gamma,
            class_weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub inlier_sigma_px: f64,
    pub outlier_rate: f64,
    pub outlier_sigma_px: f64,
    pub confidence_jitter: f64,
    pub label_flip_rate: f64,
    pub tau: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self::from_core(&NoiseModel::default())
    }
}

impl NoiseSection {
    pub fn from_core(n: &NoiseModel) -> Self {
        Self {
            inlier_sigma_px: n.inlier_sigma_px,
            outlier_rate: n.outlier_rate,
            outlier_sigma_px: n.outlier_sigma_px,
            confidence_jitter: n.confidence_jitter,
            label_flip_rate: n.label_flip_rate,
            tau: n.tau,
        }
    }

    /// `zero` or `default`.
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "zero" => Ok(Self::from_core(&NoiseModel::zero())),
            "default" => Ok(Self::default()),
            other => Err(Error::Config(format!("unknown noise profile `{other}` (expected zero or default)"))),
        }
    }

    pub fn to_core(&self) -> NoiseModel {
        NoiseModel {
            inlier_sigma_px: self.inlier_sigma_px,
            outlier_rate: self.outlier_rate,
            outlier_sigma_px: self.outlier_sigma_px,
            confidence_jitter: self.confidence_jitter,
            label_flip_rate: self.label_flip_rate,
            tau: self.tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    /// Any of `nf`, `hc`, `bn`, `oracle`.
    pub strategies: Vec<String>,
    pub best_n: usize,
    /// Clustering distance; scaled from 30 px at 608 px width when absent.
    pub threshold_px: Option<f64>,
    pub min_cells: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            strategies: ["nf", "hc", "bn", "oracle"].map(String::from).to_vec(),
            best_n: DEFAULT_BEST_N,
            threshold_px: None,
            min_cells: DEFAULT_MIN_CELLS,
        }
    }
}

impl FusionSection {
    pub fn parsed_strategies(&self) -> Result<Vec<Strategy>> {
        let mut out: Vec<Strategy> =
            self.strategies.iter().map(|s| parse_strategy(s, self.best_n)).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Config("fusion.strategies is empty".into()));
        }
        Ok(out)
    }

    pub fn threshold(&self, image_width: u32) -> f64 {
        self.threshold_px.unwrap_or_else(|| default_threshold(image_width))
    }
}

/// `nf`, `hc`, `oracle`, `bn` (with `best_n`) or `bn<n>`.
pub fn parse_strategy(s: &str, best_n: usize) -> Result<Strategy> {
    let strategy = match s {
        "nf" => Strategy::NoFusion,
        "hc" => Strategy::HighestConfidence,
        "oracle" => Strategy::Oracle,
        "bn" => Strategy::BestN(best_n),
        _ => match s.strip_prefix("bn").and_then(|n| n.parse().ok()) {
            Some(n) => Strategy::BestN(n),
            None => return Err(Error::Config(format!("unknown strategy `{s}` (expected nf, hc, bn or oracle)"))),
        },
    };
    if strategy == Strategy::BestN(0) {
        return Err(Error::Config("best-n needs n >= 1".into()));
    }
    Ok(strategy)
}

/// Inverse of [`parse_strategy`]; best-n carries its `n`.
pub fn strategy_label(s: Strategy) -> String {
    match s {
        Strategy::BestN(n) => format!("bn{n}"),
        other => other.name().to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacSection {
    pub max_iterations: usize,
    pub inlier_threshold_px: f64,
    pub min_sample_size: usize,
    pub confidence_stop: f64,
    pub refine: bool,
    pub refine_iterations: usize,
}

impl Default for RansacSection {
    fn default() -> Self {
        let p = RansacParams::default();
        Self {
            max_iterations: p.max_iterations,
            inlier_threshold_px: p.inlier_threshold_px,
            min_sample_size: p.min_sample_size,
            confidence_stop: p.confidence_stop,
            refine: p.refine,
            refine_iterations: p.refine_iterations,
        }
    }
}

impl RansacSection {
    pub fn to_core(&self, seed: u64) -> RansacParams {
        RansacParams {
            max_iterations: self.max_iterations,
            inlier_threshold_px: self.inlier_threshold_px,
            min_sample_size: self.min_sample_size,
            confidence_stop: self.confidence_stop,
            seed,
            refine: self.refine,
            refine_iterations: self.refine_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn zero_noise() -> Self {
        Self { noise: NoiseSection::profile("zero").expect("known profile"), ..Self::default() }
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.size, self.camera.width, self.camera.height, self.grid.norm_span)
            .map_err(|e| Error::Config(format!("grid: {e}")))
    }

    /// Checks every section against the invariants of the component it configures.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let config = |section: &'static str| move |e: segpose_core::Error| Error::Config(format!("{section}: {e}"));
        self.camera.to_core()?;
        self.grid_spec()?;
        self.scene.to_core().validate().map_err(config("scene"))?;
        self.noise.to_core().validate().map_err(config("noise"))?;
        self.loss.to_core(vec![1.0]).validate().map_err(config("loss"))?;
        self.ransac.to_core(0).validate().map_err(config("ransac"))?;
        self.fusion.parsed_strategies()?;
        if !(self.fusion.threshold(self.camera.width) > 0.0) {
            return Err(Error::Config("fusion.threshold_px must be positive".into()));
        }
        if self.fusion.min_cells == 0 {
            return Err(Error::Config("fusion.min_cells must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (sorted keys, no whitespace). Paths
    /// are left out: where a run is written does not change what it computes.
    pub fn hash(&self) -> String {
        let unplaced = Self { paths: Paths::default(), ..self.clone() };
        let value = serde_json::to_value(&unplaced).expect("config serializes");
        hex::encode(Sha256::digest(canonical_json(&value).as_bytes()))
    }
}

/// Serializes with object keys sorted at every level.
pub fn canonical_json(value: &serde_json::Value) -> String {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> =
                keys.iter().map(|k| format!("{}:{}", Value::String((*k).clone()), canonical_json(&map[*k]))).collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
        PipelineConfig::zero_noise().validate().unwrap();
    }

    #[test]
    fn strategy_labels_round_trip() {
        for s in [Strategy::NoFusion, Strategy::HighestConfidence, Strategy::BestN(7), Strategy::Oracle] {
            assert_eq!(parse_strategy(&strategy_label(s), 10).unwrap(), s);
        }
        assert_eq!(parse_strategy("bn", 10).unwrap(), Strategy::BestN(10));
        assert!(parse_strategy("bn0", 10).is_err());
        assert!(parse_strategy("wta", 10).is_err());
    }

    #[test]
    fn invalid_sections_are_config_errors() {
        let mut c = PipelineConfig::default();
        c.noise.outlier_rate = 1.5;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = PipelineConfig::default();
        c.grid.size = 7;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = PipelineConfig::default();
        c.fusion.strategies = vec!["nf".into(), "best".into()];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_field_order() {
        let a: PipelineConfig = serde_json::from_str(
            r#"{"schema_version":1,"scenes":5,"seeds":{"scenes":3,"noise":4,"ransac":5,"models":0}}"#,
        )
        .unwrap();
        let b: PipelineConfig = serde_json::from_str(
            r#"{"seeds":{"models":0,"ransac":5,"noise":4,"scenes":3},"scenes":5,"schema_version":1}"#,
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.scenes = 6;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
        let mut d = a.clone();
        d.paths.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), d.hash());
    }

    #[test]
    fn canonical_json_sorts_nested_keys() {
        let v: serde_json::Value = serde_json::from_str(r#"{"b":{"y":1,"x":[{"q":2,"p":1}]},"a":0.1}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":0.1,"b":{"x":[{"p":1,"q":2}],"y":1}}"#);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let e = serde_json::from_str::<PipelineConfig>(r#"{"schema_version":1,"noise":{"sigma":1}}"#);
        assert!(e.is_err());
    }

    #[test]
    fn seeds_differ_per_stage() {
        let s = Seeds::from_master(9);
        assert!(s.scenes != s.noise && s.noise != s.ransac);
        assert_ne!(Seeds::from_master(9), Seeds::from_master(10));
    }
}
