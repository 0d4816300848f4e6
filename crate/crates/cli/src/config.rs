//! Pipeline configuration: one TOML file whose sections mirror the library
//! configs. Relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zephyr::featurize::{FeaturizeConfig, OcclusionFilter, CHANNELS};
use zephyr::hypo::{FeatureConfig, HypoConfig};
use zephyr::metrics::MetricThresholds;
use zephyr::net::ArchSpec;
use zephyr::objmodel::PrepareConfig;
use zephyr::render::SceneConfig;
use zephyr::train::TrainConfig;

use crate::error::{CliError, CliResult};

/// The configuration shipped with the crate; every default is spelled out.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub models: PathBuf,
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Scorer weights for `score`; defaults to `<output>/train/best.zphw`.
    pub weights: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            models: "models".into(),
            dataset: "dataset".into(),
            output: "output".into(),
            weights: None,
        }
    }
}

/// Object ids for training (seen) and testing (unseen).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Split {
    pub seen: Vec<u32>,
    pub unseen: Vec<u32>,
}

impl Default for Split {
    fn default() -> Self {
        Self {
            seen: vec![1, 3, 5, 7],
            unseen: vec![2, 4, 6, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_scenes: u32,
    pub test_scenes: u32,
    /// Instances below this visible fraction are not targets.
    pub min_visible: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_scenes: 500,
            test_scenes: 100,
            min_visible: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypoSection {
    /// Append the ground-truth pose to every dumped set, tagged `gt`.
    pub inject_gt: bool,
    #[serde(flatten)]
    pub ppf: HypoConfig,
}

impl Default for HypoSection {
    fn default() -> Self {
        Self {
            inject_gt: false,
            ppf: HypoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub arch: String,
    pub inputs: Vec<String>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            arch: "pointnetpp".into(),
            inputs: CHANNELS.iter().map(|c| c.to_string()).collect(),
        }
    }
}

impl NetConfig {
    pub fn spec(&self) -> CliResult<ArchSpec> {
        let inputs: Vec<&str> = self.inputs.iter().map(String::as_str).collect();
        ArchSpec::by_kind(&self.arch)
            .and_then(|s| s.with_inputs(&inputs))
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMethod {
    /// Argmax of the scoring network.
    Network,
    /// Highest PPF vote count.
    PpfTop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub method: ScoreMethod,
    /// ICP-refine the selected hypothesis.
    pub icp: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            method: ScoreMethod::Network,
            icp: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub overlays: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { overlays: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub split: Split,
    pub data: DataConfig,
    pub scene: SceneConfig,
    pub prepare: PrepareConfig,
    pub hypo: HypoSection,
    pub pair: FeatureConfig,
    pub featurize: FeaturizeConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub score: ScoreConfig,
    pub metrics: MetricThresholds,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            split: Split::default(),
            data: DataConfig::default(),
            scene: SceneConfig::default(),
            prepare: PrepareConfig::default(),
            hypo: HypoSection::default(),
            pair: FeatureConfig::default(),
            featurize: FeaturizeConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            score: ScoreConfig::default(),
            metrics: MetricThresholds::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub icp: Option<bool>,
    pub inject_gt: Option<bool>,
    pub arch: Option<String>,
    pub occlusion_filter: Option<OcclusionFilter>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.models);
        fix(&mut self.paths.dataset);
        fix(&mut self.paths.output);
        if let Some(w) = self.paths.weights.as_mut() {
            fix(w);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(i) = o.icp {
            self.score.icp = i;
        }
        if let Some(g) = o.inject_gt {
            self.hypo.inject_gt = g;
            self.train.inject_gt = g;
        }
        if let Some(a) = &o.arch {
            self.net.arch = a.clone();
        }
        if let Some(f) = o.occlusion_filter {
            self.featurize.occlusion_filter = f;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let cfg_err = |e: zephyr::Error| CliError::Config(e.to_string());
        self.scene.validate().map_err(cfg_err)?;
        self.hypo.ppf.validate().map_err(cfg_err)?;
        self.train.validate().map_err(cfg_err)?;
        self.metrics.validate().map_err(cfg_err)?;
        self.net.spec()?;
        let s = &self.split;
        if s.seen.is_empty() || s.unseen.is_empty() {
            return Err(CliError::Config("split needs seen and unseen objects".into()));
        }
        if let Some(id) = s.seen.iter().find(|id| s.unseen.contains(id)) {
            return Err(CliError::Config(format!("object {id} is both seen and unseen")));
        }
        if !(0.0..=1.0).contains(&self.data.min_visible) {
            return Err(CliError::Config("data.min_visible must lie in [0, 1]".into()));
        }
        if self.prepare.leaf <= 0.0 || self.prepare.max_points == 0 {
            return Err(CliError::Config("prepare.leaf and prepare.max_points must be positive".into()));
        }
        Ok(())
    }

    pub fn weights_path(&self) -> PathBuf {
        self.paths.weights.clone().unwrap_or_else(|| self.train_dir().join("best.zphw"))
    }

    pub fn train_dir(&self) -> PathBuf {
        self.paths.output.join("train")
    }

    pub fn hypotheses_path(&self, split: &str) -> PathBuf {
        self.paths.output.join("hypotheses").join(format!("{split}.jsonl"))
    }

    pub fn estimates_path(&self) -> PathBuf {
        self.paths.output.join("estimates.jsonl")
    }
}
