//! Config-driven sweeps, ablation and pruning studies.
//!
//! Runs land in `<out>/<config digest>/<kind>/<run>/`, each holding
//! `model.ckpt`, `row.json` and a `masks/` folder. A run whose checkpoint
//! and row already exist is not trained again.

mod config;
mod plot;

pub use config::{DataConfig, ExperimentConfig, ExperimentKind, NetTemplate, PruneExperiment};
pub use plot::{crossover, plot_data, read_results, PlotRow};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prune::{csv_error, greedy_prune};
use crate::rng::{self, tags};
use crate::scene::{generate_dataset, read_dataset, Dataset};
use crate::sensor::{box_mask_bank, export_masks, MaskBank};
use crate::train::{self, evaluate, train_with_masks, Checkpoint, Setup, TrainReport};

pub const CSV_HEADER: [&str; 7] = [
    "kind",
    "k_or_res",
    "pixel_count",
    "test_rmse",
    "test_acc",
    "seed",
    "checkpoint",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub kind: String,
    pub k_or_res: usize,
    pub pixel_count: usize,
    pub test_rmse: f64,
    pub test_acc: f64,
    pub seed: u64,
    pub checkpoint: PathBuf,
    /// Wall time of training; kept out of the CSV so reruns compare equal.
    pub train_seconds: f64,
}

impl ResultRow {
    fn record(&self) -> [String; 7] {
        [
            self.kind.clone(),
            self.k_or_res.to_string(),
            self.pixel_count.to_string(),
            self.test_rmse.to_string(),
            self.test_acc.to_string(),
            self.seed.to_string(),
            self.checkpoint.display().to_string(),
        ]
    }
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r.record()).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Train/validation/test splits of one configuration.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn split_path(cfg: &ExperimentConfig, name: &str, seed: u64, n: usize) -> PathBuf {
    let digest: String = cfg.scene.digest()[..6]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    cfg.data_dir()
        .join(format!("{name}-{digest}-s{seed}-n{n}.msyn"))
}

/// Loads the dataset file of one split, generating it when allowed.
pub fn ensure_split(cfg: &ExperimentConfig, name: &str, tag: &str, n: usize) -> Result<Dataset> {
    let seed = rng::derive_seed(cfg.seed, tag);
    let path = split_path(cfg, name, seed, n);
    if !path.exists() {
        if !cfg.data.generate {
            return Err(Error::Setup(format!(
                "dataset {} is missing and generation is disabled",
                path.display()
            )));
        }
        let dir = path.parent().expect("file has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        info!("generating {n} {name} scenes into {}", path.display());
        let tmp = path.with_extension("tmp");
        generate_dataset(&tmp, seed, n as u64, &cfg.scene)?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    }
    let header = read_dataset(&path)?.header().clone();
    if header.seed != seed || header.count != n as u64 || header.spec_digest != cfg.scene.digest() {
        return Err(Error::format(
            0,
            format!("{} does not match the configured split", path.display()),
        ));
    }
    Dataset::load(&path)
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    Ok(Splits {
        train: ensure_split(cfg, "train", tags::DATA_TRAIN, cfg.data.train)?,
        val: ensure_split(cfg, "val", tags::DATA_VAL, cfg.data.val)?,
        test: ensure_split(cfg, "test", tags::DATA_TEST, cfg.data.test)?,
    })
}

/// Seed of the test-set noise for a global seed.
pub fn test_noise_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, tags::EVAL_NOISE)
}

/// Rows plus how much training actually happened.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub csv: PathBuf,
    /// Optimizer steps taken in this invocation.
    pub steps: u64,
}

/// Runner for one configuration, with the splits loaded once.
#[derive(Debug)]
pub struct Runner {
    pub config: ExperimentConfig,
    pub splits: Splits,
    /// Parallel independent runs; 1 keeps everything sequential.
    pub threads: usize,
}

enum RunSpec {
    Mincam(usize),
    Baseline(usize),
}

impl Runner {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let splits = load_splits(&config)?;
        Ok(Self {
            config,
            splits,
            threads: 1,
        })
    }

    pub fn with_splits(config: ExperimentConfig, splits: Splits) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            splits,
            threads: 1,
        })
    }

    fn setup(&self, inputs: usize) -> Setup {
        let mut train = self.config.train.clone();
        train.seed = self.config.seed;
        Setup {
            scene: self.config.scene.clone(),
            sensor: self.config.sensor.clone(),
            mlp: self.config.net.for_inputs(inputs),
            train,
        }
    }

    fn kind_dir(&self, kind: &str) -> PathBuf {
        self.config.run_root().join(kind)
    }

    fn finish(
        &self,
        dir: &Path,
        kind: &str,
        k_or_res: usize,
        report: &TrainReport,
        seconds: f64,
    ) -> Result<ResultRow> {
        let ckpt_path = dir.join("model.ckpt");
        report.checkpoint.save(&ckpt_path)?;
        let m = evaluate(
            &report.checkpoint,
            &self.splits.test,
            test_noise_seed(self.config.seed),
        )?;
        export_masks(
            &report.checkpoint.model.masks,
            &dir.join("masks"),
            &format!("{kind}/{k_or_res}"),
            self.config.seed,
        )?;
        let row = ResultRow {
            kind: kind.to_string(),
            k_or_res,
            pixel_count: report.checkpoint.pixels(),
            test_rmse: m.rmse,
            test_acc: m.accuracy,
            seed: self.config.seed,
            checkpoint: ckpt_path,
            train_seconds: seconds,
        };
        let history = serde_json::to_string_pretty(&report.history).expect("serializes");
        write_file(&dir.join("history.json"), &history)?;
        write_file(
            &dir.join("row.json"),
            &serde_json::to_string_pretty(&row).expect("serializes"),
        )?;
        Ok(row)
    }

    fn cached(dir: &Path) -> Option<ResultRow> {
        if !dir.join("model.ckpt").exists() {
            return None;
        }
        let text = fs::read_to_string(dir.join("row.json")).ok()?;
        let mut row: ResultRow = serde_json::from_str(&text).ok()?;
        // the output tree may have been moved since the row was written
        row.checkpoint = dir.join("model.ckpt");
        Some(row)
    }

    fn run_one(&self, spec: &RunSpec) -> Result<(ResultRow, u64)> {
        let (kind, k_or_res) = match spec {
            RunSpec::Mincam(k) => ("mincam", *k),
            RunSpec::Baseline(r) => ("baseline", *r),
        };
        let dir = self.kind_dir(kind).join(format!("{k_or_res:03}"));
        if let Some(row) = Self::cached(&dir) {
            info!("{kind} {k_or_res}: reusing {}", dir.display());
            return Ok((row, 0));
        }
        info!("{kind} {k_or_res}: training");
        let started = Instant::now();
        let s = &self.config.scene;
        let report = match spec {
            RunSpec::Mincam(k) => {
                train::train(&self.setup(*k), &self.splits.train, &self.splits.val)
            }
            RunSpec::Baseline(r) => {
                let masks = box_mask_bank(*r, s.height, s.width, self.config.sensor.mask_range)?;
                train_with_masks(
                    &self.setup(r * r),
                    masks,
                    &self.splits.train,
                    &self.splits.val,
                )
            }
        }
        .map_err(|e| keep_diagnostic(&dir, e))?;
        let row = self.finish(
            &dir,
            kind,
            k_or_res,
            &report,
            started.elapsed().as_secs_f64(),
        )?;
        Ok((row, report.steps))
    }

    fn run_all(&self, specs: Vec<RunSpec>, csv_name: &str) -> Result<SweepOutcome> {
        let results: Vec<Result<(ResultRow, u64)>> = if self.threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.threads)
                .build()
                .map_err(|e| Error::Setup(e.to_string()))?;
            pool.install(|| specs.par_iter().map(|s| self.run_one(s)).collect())
        } else {
            specs.iter().map(|s| self.run_one(s)).collect()
        };
        let mut rows = Vec::with_capacity(results.len());
        let mut steps = 0;
        for r in results {
            let (row, n) = r?;
            rows.push(row);
            steps += n;
        }
        let csv = self.config.run_root().join(csv_name);
        write_results(&csv, &rows)?;
        Ok(SweepOutcome { rows, csv, steps })
    }

    /// Trains (or reuses) the mincam run with `k` pixels.
    pub fn mincam_run(&self, k: usize) -> Result<(ResultRow, u64)> {
        self.run_one(&RunSpec::Mincam(k))
    }

    /// One mincam per configured pixel count.
    pub fn mincam_sweep(&self) -> Result<SweepOutcome> {
        let specs = self
            .config
            .pixel_counts
            .iter()
            .map(|&k| RunSpec::Mincam(k))
            .collect();
        self.run_all(specs, "mincam.csv")
    }

    /// One frozen box-mask camera per configured resolution.
    pub fn baseline_sweep(&self) -> Result<SweepOutcome> {
        let specs = self
            .config
            .baseline_resolutions
            .iter()
            .map(|&r| RunSpec::Baseline(r))
            .collect();
        self.run_all(specs, "baseline.csv")
    }

    /// Arm A learns masks without the sensor model, then a head is retrained
    /// on the frozen masks with it; arm B learns everything with it.
    pub fn ablation(&self) -> Result<AblationOutcome> {
        let k = self.config.ablation_k;
        let root = self.kind_dir("ablation").join(format!("{k:03}"));
        let mut steps = 0;

        let arm_b = match Self::cached(&root.join("arm_b")) {
            Some(row) => row,
            None => {
                let started = Instant::now();
                let report = train::train(&self.setup(k), &self.splits.train, &self.splits.val)?;
                steps += report.steps;
                let secs = started.elapsed().as_secs_f64();
                self.finish(&root.join("arm_b"), "ablation_b", k, &report, secs)?
            }
        };

        let arm_a = match Self::cached(&root.join("arm_a")) {
            Some(row) => row,
            None => {
                let started = Instant::now();
                let proj_path = root.join("projection").join("model.ckpt");
                let masks: MaskBank = if proj_path.exists() {
                    Checkpoint::load(&proj_path)?.model.masks
                } else {
                    let mut setup = self.setup(k);
                    setup.train.sensor_model_in_training = false;
                    let report = train::train(&setup, &self.splits.train, &self.splits.val)?;
                    steps += report.steps;
                    report.checkpoint.save(&proj_path)?;
                    report.checkpoint.model.masks
                };
                let mut setup = self.setup(k);
                setup.train.freeze_masks = true;
                let report = train_with_masks(&setup, masks, &self.splits.train, &self.splits.val)?;
                steps += report.steps;
                let secs = started.elapsed().as_secs_f64();
                self.finish(&root.join("arm_a"), "ablation_a", k, &report, secs)?
            }
        };

        let ratio = arm_a.test_rmse / arm_b.test_rmse;
        let rows = vec![arm_a, arm_b];
        let csv = root.join("results.csv");
        write_results(&csv, &rows)?;
        write_file(&root.join("ratio.txt"), &format!("{ratio}\n"))?;
        Ok(AblationOutcome {
            ratio,
            rows,
            csv,
            steps,
        })
    }

    /// Greedy pruning of the configured mincam run, which is trained first
    /// if needed.
    pub fn prune(&self) -> Result<PruneOutcome> {
        let p = &self.config.prune;
        let (source, steps) = self.run_one(&RunSpec::Mincam(p.source_k))?;
        let ckpt = Checkpoint::load(&source.checkpoint)?;
        let cfg = p.config();
        let cadence = match cfg.cadence {
            crate::prune::FinetuneCadence::EveryRemoval => "every",
            crate::prune::FinetuneCadence::Never => "never",
        };
        let dir = self.kind_dir("prune").join(format!(
            "{:03}-to-{:03}-ft{}-{cadence}",
            p.source_k, cfg.target_k, cfg.finetune_epochs
        ));
        let trace = greedy_prune(&ckpt, &self.splits.train, &self.splits.val, &cfg)?;
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        trace.write_csv(dir.join("trace.csv"))?;
        let noise = test_noise_seed(self.config.seed);
        let mut rows = vec![source];
        for s in &trace.steps {
            let path = dir.join(format!("step_{:03}.ckpt", s.step));
            s.checkpoint.save(&path)?;
            let m = evaluate(&s.checkpoint, &self.splits.test, noise)?;
            let remaining = s.checkpoint.model.active.iter().filter(|&&a| a).count();
            rows.push(ResultRow {
                kind: "prune".into(),
                k_or_res: remaining,
                pixel_count: remaining,
                test_rmse: m.rmse,
                test_acc: m.accuracy,
                seed: self.config.seed,
                checkpoint: path,
                train_seconds: 0.0,
            });
        }
        let csv = dir.join("results.csv");
        write_results(&csv, &rows)?;
        Ok(PruneOutcome {
            removed: trace.removed(),
            rows,
            csv,
            steps,
        })
    }

    /// Runs whatever the config's kind asks for and returns the result CSV.
    pub fn run(&self) -> Result<PathBuf> {
        Ok(match self.config.kind {
            ExperimentKind::MincamSweep => self.mincam_sweep()?.csv,
            ExperimentKind::BaselineSweep => self.baseline_sweep()?.csv,
            ExperimentKind::AblationNoSensor => self.ablation()?.csv,
            ExperimentKind::Prune => self.prune()?.csv,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    /// `RMSE(arm A) / RMSE(arm B)`.
    pub ratio: f64,
    /// Arm A then arm B.
    pub rows: Vec<ResultRow>,
    pub csv: PathBuf,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub removed: Vec<usize>,
    /// The unpruned source run, then one row per removal.
    pub rows: Vec<ResultRow>,
    pub csv: PathBuf,
    pub steps: u64,
}

/// Saves the checkpoint carried by a divergence error next to the run.
fn keep_diagnostic(dir: &Path, e: Error) -> Error {
    if let Error::Divergence { checkpoint, .. } = &e {
        let path = dir.join("diverged.ckpt");
        match checkpoint.save(&path) {
            Ok(()) => log::error!("diagnostic checkpoint written to {}", path.display()),
            Err(save) => log::error!("could not save diagnostic checkpoint: {save}"),
        }
    }
    e
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Re-evaluates a checkpoint on the configured test split.
pub fn reevaluate(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<train::Metrics> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let test = ensure_split(cfg, "test", tags::DATA_TEST, cfg.data.test)?;
    evaluate(&ckpt, &test, test_noise_seed(cfg.seed))
}
