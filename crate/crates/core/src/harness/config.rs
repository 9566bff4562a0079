use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chan::{ArrayConfig, GridConfig, Noise};
use crate::error::{PemError, Result};
use crate::evolve::{AugmentConfig, KalmanConfig, TrainConfig};
use crate::extract::ExtractConfig;
use crate::mobility::MotionParams;
use crate::scene::Scene;
use crate::tracker::TrackerConfig;

fn default_snr() -> Option<f64> {
    Some(10.0)
}

fn default_periods() -> Vec<f64> {
    vec![10.0, 20.0, 30.0, 40.0, 50.0]
}

fn default_eval_step() -> f64 {
    1.0
}

fn default_runs() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorChoice {
    #[default]
    Kalman,
    Learned,
    Both,
}

impl PredictorChoice {
    pub fn wants_kalman(self) -> bool {
        matches!(self, PredictorChoice::Kalman | PredictorChoice::Both)
    }

    pub fn wants_learned(self) -> bool {
        matches!(self, PredictorChoice::Learned | PredictorChoice::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fig5,
    Generalization,
    Track,
}

/// How the learned predictor and the path map are trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSetup {
    pub dataset_size: usize,
    /// Number of env-1 runs harvested for training windows and map entries.
    pub runs: usize,
    pub augment: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub validation_frac: f64,
    pub augment_cfg: AugmentConfig,
    /// Features kept per path-map entry.
    pub map_paths: usize,
}

impl Default for TrainSetup {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSetup {
            dataset_size: 1600,
            runs: 2,
            augment: true,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            validation_frac: t.validation_frac,
            augment_cfg: t.augment_cfg,
            map_paths: 8,
        }
    }
}

impl TrainSetup {
    pub fn train_config(&self, seed: u64, augment: bool) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            augment,
            augment_cfg: self.augment_cfg,
            validation_frac: self.validation_frac,
        }
    }
}

/// One experiment, as read from JSON. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    pub scene: PathBuf,
    #[serde(default)]
    pub env2_scene: Option<PathBuf>,
    pub motion: MotionParams,
    #[serde(default)]
    pub array: ArrayConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub extract: ExtractConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub kalman: KalmanConfig,
    /// `null` for noiseless measurements.
    #[serde(default = "default_snr")]
    pub snr_db: Option<f64>,
    #[serde(default = "default_periods")]
    pub srs_periods_ms: Vec<f64>,
    #[serde(default = "default_eval_step")]
    pub eval_step_ms: f64,
    #[serde(default = "default_runs")]
    pub eval_runs: usize,
    #[serde(default)]
    pub predictor: PredictorChoice,
    /// Saved learned predictor; trained from `train` when absent.
    #[serde(default)]
    pub predictor_file: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainSetup,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(s)?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.scene);
        if let Some(p) = cfg.env2_scene.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.predictor_file.as_mut() {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        for p in std::iter::once(&self.scene).chain(&self.env2_scene).chain(&self.predictor_file) {
            if !p.is_file() {
                return Err(PemError::InvalidParameter(format!("referenced file {} does not exist", p.display())));
            }
        }
        self.array.validate()?;
        self.grid.validate()?;
        self.extract.validate()?;
        if self.srs_periods_ms.is_empty() {
            return Err(PemError::InvalidParameter("srs_periods_ms is empty".into()));
        }
        let base = self.base_period_ms();
        for &p in &self.srs_periods_ms {
            let k = p / base;
            if !(p > 0.0) || (k - k.round()).abs() > 1e-9 {
                return Err(PemError::InvalidParameter(format!("SRS period {p} ms is not a positive multiple of {base} ms")));
            }
        }
        if !(self.eval_step_ms > 0.0) {
            return Err(PemError::InvalidParameter("eval_step_ms must be > 0".into()));
        }
        if self.eval_runs == 0 {
            return Err(PemError::InvalidParameter("eval_runs must be >= 1".into()));
        }
        if !(self.motion.duration_s > 0.0) {
            return Err(PemError::InvalidParameter("motion.duration_s must be > 0".into()));
        }
        Ok(())
    }

    /// Smallest configured SRS period; every other period is a multiple.
    pub fn base_period_ms(&self) -> f64 {
        self.srs_periods_ms.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn stride(&self, period_ms: f64) -> usize {
        (period_ms / self.base_period_ms()).round() as usize
    }

    pub fn noise(&self) -> Noise {
        self.snr_db.map_or(Noise::None, Noise::SnrDb)
    }

    pub fn load_scene(&self) -> Result<Scene> {
        Scene::load(&self.scene)
    }

    pub fn load_env2_scene(&self) -> Result<Scene> {
        match &self.env2_scene {
            Some(p) => Scene::load(p),
            None => Err(PemError::InvalidParameter("this experiment needs env2_scene".into())),
        }
    }
}

/// Independent seed for `(stream, index)` under a base seed (splitmix64).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) mod stream {
    pub const EVAL: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const TRAJECTORY: u64 = 10;
    pub const NOISE: u64 = 11;
    pub const SUBSAMPLE: u64 = 12;
    pub const FIT: u64 = 13;
}
