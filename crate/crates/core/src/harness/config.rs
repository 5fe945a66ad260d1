use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{Category, CategorySpec, Split, TRAIN_FRACTION};
use super::{HarnessError, InitError};
use crate::diffsim::Perturbation;
use crate::ip::{OptConfig, SelectionPolicy};
use crate::manipulation::SolveConfig;
use crate::perception::{FlowMode, DEFAULT_FLOW_SIGMA};
use crate::residual::{NetConfig, TrainConfig};

/// Everything an experiment run depends on. Read from TOML; unknown keys
/// are errors and every section may be omitted to take its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub perception: PerceptionConfig,
    pub init: InitError,
    pub ip: IpSection,
    pub robustness: RobustnessConfig,
    pub manipulation: ManipulationConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dataset: DatasetConfig::default(),
            perception: PerceptionConfig::default(),
            init: InitError::default(),
            ip: IpSection::default(),
            robustness: RobustnessConfig::default(),
            manipulation: ManipulationConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub per_category: usize,
    /// Categories to generate with their default ranges.
    pub categories: Vec<Category>,
    /// Full replacements of the default ranges of some categories.
    pub specs: Vec<CategorySpec>,
    pub train_fraction: f64,
    /// Restrict evaluation to one split; all scenes when absent.
    pub split: Option<Split>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            per_category: 4,
            categories: Category::ALL.to_vec(),
            specs: Vec::new(),
            train_fraction: TRAIN_FRACTION,
            split: None,
        }
    }
}

impl DatasetConfig {
    pub fn category_specs(&self) -> Vec<CategorySpec> {
        self.categories
            .iter()
            .map(|&c| {
                self.specs
                    .iter()
                    .find(|s| s.category == c)
                    .cloned()
                    .unwrap_or_else(|| CategorySpec::default_for(c))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    /// Material points per scene.
    pub points: usize,
    /// `gt`, `gt+noise` or `nn`.
    pub flow: String,
    /// Bound of the per-point flow noise (m).
    pub noise_sigma: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            points: 200,
            flow: "gt".into(),
            noise_sigma: DEFAULT_FLOW_SIGMA,
        }
    }
}

impl PerceptionConfig {
    pub fn flow_mode(&self) -> Result<FlowMode, HarnessError> {
        flow_mode(&self.flow, self.noise_sigma)
    }
}

/// A flow mode by name, with the noise bound applied to `gt+noise`.
pub fn flow_mode(name: &str, sigma: f64) -> Result<FlowMode, HarnessError> {
    let m: FlowMode = name.parse().map_err(|e: crate::perception::PerceptionError| HarnessError::Config(e.to_string()))?;
    Ok(match m {
        FlowMode::GtNoise { .. } if !name.contains(':') => FlowMode::GtNoise { sigma },
        m => m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpSection {
    /// Actions per episode.
    pub actions: usize,
    pub policy: SelectionPolicy,
    pub opt: OptConfig,
}

impl Default for IpSection {
    fn default() -> Self {
        IpSection {
            actions: 5,
            policy: SelectionPolicy::default(),
            opt: OptConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    /// Single-part revolute scenes per revolute category.
    pub per_category: usize,
    /// The probe opens the joint by this share of its range.
    pub action_fraction: f64,
    /// Flow modes compared, by name.
    pub modes: Vec<String>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            per_category: 6,
            action_fraction: 0.5,
            modes: vec!["nn".into(), "gt+noise".into(), "gt".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManipulationConfig {
    /// Revolute target scenes.
    pub scenes: usize,
    pub horizon: usize,
    /// Goal opening drawn from this range (rad), capped below the limit.
    pub goal: [f64; 2],
    pub tolerance_deg: f64,
    pub dt: f64,
    pub solve: SolveConfig,
    /// Perturbed worlds for the closed-loop run.
    pub perturbation_seeds: usize,
    /// The perturbation at seed 0; later seeds scale each effect by a
    /// factor in [0.75, 1.25].
    pub perturbation: Perturbation,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub buffer: usize,
}

impl Default for ManipulationConfig {
    fn default() -> Self {
        ManipulationConfig {
            scenes: 20,
            horizon: 100,
            goal: [0.8, 1.2],
            tolerance_deg: 2.0,
            dt: 0.01,
            solve: SolveConfig::default(),
            perturbation_seeds: 5,
            perturbation: Perturbation::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            buffer: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Displacements of the starting gripper position (cm).
    pub magnitudes_cm: Vec<f64>,
    pub scenes: usize,
    /// Random directions tried per scene and magnitude.
    pub trials: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            magnitudes_cm: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            scenes: 10,
            trials: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// File name prefix; the experiment kind when empty.
    pub prefix: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            prefix: String::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let d = &self.dataset;
        if d.per_category < 2 {
            return bad(format!("dataset.per_category must be >= 2, got {}", d.per_category));
        }
        if d.categories.is_empty() {
            return bad("dataset.categories is empty".into());
        }
        if !(0.0..=1.0).contains(&d.train_fraction) {
            return bad(format!("dataset.train_fraction {} not in [0, 1]", d.train_fraction));
        }
        for s in &d.specs {
            s.validate()?;
        }
        if self.perception.points < 32 {
            return bad(format!("perception.points must be >= 32, got {}", self.perception.points));
        }
        if !(self.perception.noise_sigma >= 0.0 && self.perception.noise_sigma.is_finite()) {
            return bad("perception.noise_sigma must be >= 0".into());
        }
        self.perception.flow_mode()?;
        self.init.validate()?;
        let o = &self.ip.opt;
        if o.steps == 0 || !(o.lr >= 0.0) || !(0.0..1.0).contains(&o.momentum) {
            return bad("ip.opt needs steps >= 1, lr >= 0 and momentum in [0, 1)".into());
        }
        let r = &self.robustness;
        if r.per_category == 0 || !(r.action_fraction > 0.0 && r.action_fraction <= 1.0) {
            return bad("robustness needs per_category >= 1 and action_fraction in (0, 1]".into());
        }
        for m in &r.modes {
            flow_mode(m, self.perception.noise_sigma)?;
        }
        let m = &self.manipulation;
        if m.scenes == 0 || m.horizon == 0 || !(m.dt > 0.0) {
            return bad("manipulation needs scenes >= 1, horizon >= 1 and dt > 0".into());
        }
        if !(m.goal[0] > 0.0 && m.goal[0] <= m.goal[1]) || !(m.tolerance_deg > 0.0) {
            return bad("manipulation.goal must be a positive ordered range and tolerance > 0".into());
        }
        if m.buffer == 0 {
            return bad("manipulation.buffer must be >= 1".into());
        }
        let s = &self.sweep;
        if s.magnitudes_cm.is_empty() || s.magnitudes_cm.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return bad("sweep.magnitudes_cm must be non-empty and >= 0".into());
        }
        if s.scenes == 0 || s.trials == 0 {
            return bad("sweep needs scenes >= 1 and trials >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig::default();
        c.seed = 9;
        c.dataset.split = Some(Split::Test);
        c.ip.opt.steps = 40;
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_and_schema_errors() {
        let c = ExperimentConfig::from_toml(
            "seed = 3\n[perception]\nflow = \"gt+noise\"\nnoise_sigma = 0.02\n[ip.opt]\nsteps = 50\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.ip.opt.steps, 50);
        assert_eq!(c.ip.opt.lr, OptConfig::default().lr);
        assert_eq!(c.perception.flow_mode().unwrap(), FlowMode::GtNoise { sigma: 0.02 });
        for text in [
            "sed = 3",
            "[perception]\nflow = \"optical\"",
            "[dataset]\nper_category = 1",
            "[dataset]\ncategories = [\"sofa\"]",
            "[init]\nflip_rate = 0.7",
            "[sweep]\nmagnitudes_cm = []",
            "seed = \"x\"",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(HarnessError::Config(_))), "{text}");
        }
    }
}
