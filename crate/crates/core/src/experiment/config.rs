use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{Head, MlpConfig};
use crate::prune::{FinetuneCadence, PruneConfig};
use crate::scene::SceneSpec;
use crate::sensor::SensorConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    MincamSweep,
    BaselineSweep,
    AblationNoSensor,
    Prune,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::MincamSweep => "mincam_sweep",
            ExperimentKind::BaselineSweep => "baseline_sweep",
            ExperimentKind::AblationNoSensor => "ablation_no_sensor",
            ExperimentKind::Prune => "prune",
        }
    }
}

/// Head layout shared by every run; the input width is set per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetTemplate {
    pub hidden: Vec<usize>,
    pub leak_slope: f64,
    pub head: Head,
    #[serde(default = "default_true")]
    pub standardize_inputs: bool,
}

fn default_true() -> bool {
    true
}

impl Default for NetTemplate {
    fn default() -> Self {
        let m = MlpConfig::counting(1);
        Self {
            hidden: m.hidden,
            leak_slope: m.leak_slope,
            head: m.head,
            standardize_inputs: m.standardize_inputs,
        }
    }
}

impl NetTemplate {
    pub fn for_inputs(&self, inputs: usize) -> MlpConfig {
        MlpConfig {
            inputs,
            hidden: self.hidden.clone(),
            leak_slope: self.leak_slope,
            head: self.head,
            standardize_inputs: self.standardize_inputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Where dataset files are cached. Defaults to `<out>/data`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Generate missing dataset files instead of failing.
    #[serde(default = "default_true")]
    pub generate: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: 100_000,
            val: 10_000,
            test: 25_000,
            dir: None,
            generate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneExperiment {
    /// Pixel count of the mincam run that is pruned.
    pub source_k: usize,
    pub target_k: usize,
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: usize,
    #[serde(default = "default_cadence")]
    pub cadence: FinetuneCadence,
}

fn default_finetune_epochs() -> usize {
    PruneConfig::new(1).finetune_epochs
}

fn default_cadence() -> FinetuneCadence {
    PruneConfig::new(1).cadence
}

impl Default for PruneExperiment {
    fn default() -> Self {
        Self {
            source_k: 16,
            target_k: 1,
            finetune_epochs: default_finetune_epochs(),
            cadence: default_cadence(),
        }
    }
}

impl PruneExperiment {
    pub fn config(&self) -> PruneConfig {
        PruneConfig {
            target_k: self.target_k,
            finetune_epochs: self.finetune_epochs,
            cadence: self.cadence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default)]
    pub scene: SceneSpec,
    /// A preset name or a full sensor configuration.
    #[serde(default = "SensorConfig::hardware", deserialize_with = "sensor_choice")]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub net: NetTemplate,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_pixel_counts")]
    pub pixel_counts: Vec<usize>,
    #[serde(default = "default_resolutions")]
    pub baseline_resolutions: Vec<usize>,
    #[serde(default = "default_ablation_k")]
    pub ablation_k: usize,
    #[serde(default)]
    pub prune: PruneExperiment,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_pixel_counts() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32, 64, 128]
}

fn default_resolutions() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32]
}

fn default_ablation_k() -> usize {
    4
}

fn sensor_choice<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<SensorConfig, D::Error> {
    use serde::de::Error as _;
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(name) => SensorConfig::preset(&name)
            .ok_or_else(|| D::Error::custom(format!("unknown sensor preset `{name}`"))),
        v => serde_json::from_value(v).map_err(D::Error::custom),
    }
}

/// Fields that determine the result of a single run.
#[derive(Serialize)]
struct RunIdentity<'a> {
    seed: u64,
    scene: &'a SceneSpec,
    sensor: &'a SensorConfig,
    net: &'a NetTemplate,
    train: &'a TrainConfig,
    data: [usize; 3],
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            scene: SceneSpec::default(),
            sensor: SensorConfig::hardware(),
            net: NetTemplate::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            pixel_counts: default_pixel_counts(),
            baseline_resolutions: default_resolutions(),
            ablation_k: default_ablation_k(),
            prune: PruneExperiment::default(),
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.sensor.validate()?;
        self.net.for_inputs(1).validate()?;
        self.train.validate(&self.sensor.mask_range)?;
        if self.data.train == 0 || self.data.val == 0 || self.data.test == 0 {
            return Err(Error::config("dataset sizes must be positive"));
        }
        if let Head::Classification { classes } = self.net.head {
            if classes < self.scene.classes() {
                return Err(Error::config(format!(
                    "{classes} classes cannot represent counts up to {}",
                    self.scene.count_range[1]
                )));
            }
        }
        match self.kind {
            ExperimentKind::MincamSweep if self.pixel_counts.is_empty() => {
                return Err(Error::config("pixel_counts must not be empty"))
            }
            ExperimentKind::BaselineSweep if self.baseline_resolutions.is_empty() => {
                return Err(Error::config("baseline_resolutions must not be empty"))
            }
            _ => {}
        }
        if self.pixel_counts.contains(&0) || self.ablation_k == 0 || self.prune.source_k == 0 {
            return Err(Error::config("pixel counts must be positive"));
        }
        for &r in &self.baseline_resolutions {
            if r == 0 || r > self.scene.height || r > self.scene.width {
                return Err(Error::config(format!(
                    "baseline resolution {r} does not fit a {}x{} grid",
                    self.scene.height, self.scene.width
                )));
            }
        }
        let p = &self.prune;
        if self.kind == ExperimentKind::Prune && (p.target_k == 0 || p.target_k >= p.source_k) {
            return Err(Error::config(format!(
                "prune target_k must be in [1, {}), got {}",
                p.source_k, p.target_k
            )));
        }
        Ok(())
    }

    /// Short hex digest of everything that affects a run's outcome.
    pub fn digest(&self) -> String {
        let id = RunIdentity {
            seed: self.seed,
            scene: &self.scene,
            sensor: &self.sensor,
            net: &self.net,
            train: &self.train,
            data: [self.data.train, self.data.val, self.data.test],
        };
        let json = serde_json::to_vec(&id).expect("identity serializes");
        Sha256::digest(&json)[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Output root: the config value, then `MINCAM_OUT`, then `./out`.
    pub fn out_root(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("MINCAM_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn run_root(&self) -> PathBuf {
        self.out_root().join(self.digest())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data
            .dir
            .clone()
            .unwrap_or_else(|| self.out_root().join("data"))
    }
}
