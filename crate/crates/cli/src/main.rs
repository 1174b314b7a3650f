use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use mincam::experiment::{
    crossover, ensure_split, plot_data, read_results, test_noise_seed, ExperimentConfig,
    ExperimentKind, ResultRow, Runner,
};
use mincam::rng::tags;
use mincam::scene::generate_dataset;
use mincam::sensor::export_masks;
use mincam::train::{evaluate, Checkpoint};
use mincam::Error;

#[derive(Parser, Debug)]
#[command(
    name = "mincam",
    version,
    about = "Freeform-pixel camera co-design experiments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long, global = true, env = "MINCAM_OUT")]
    out: Option<PathBuf>,
    /// Independent runs executed in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Single worker everywhere, for bit-reproducible output.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
    All,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SweepKind {
    Mincam,
    Baseline,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate dataset splits.
    GenData {
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
        /// Write a single split of `--count` scenes to this file instead of the cache.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        count: Option<u64>,
    },
    /// Train and evaluate one mincam with K pixels.
    Train {
        #[arg(long)]
        pixels: usize,
    },
    /// Run a mincam or baseline sweep.
    Sweep {
        #[arg(long, value_enum)]
        kind: Option<SweepKind>,
    },
    /// Sensor-model ablation at the configured pixel count.
    Ablation,
    /// Greedy pruning of a trained mincam.
    Prune,
    /// Evaluate a checkpoint on the configured test split.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        noise_seed: Option<u64>,
    },
    /// Write a checkpoint's masks as PGM images.
    ExportMasks {
        checkpoint: PathBuf,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Merge result CSVs into a plot-ready table.
    PlotData {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a config file without running anything.
    Validate,
    /// Print a checkpoint summary.
    Inspect { checkpoint: PathBuf },
    /// Print a complete default config for an experiment kind.
    InitConfig {
        #[arg(long, value_enum, default_value = "mincam-sweep")]
        kind: KindArg,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum KindArg {
    MincamSweep,
    BaselineSweep,
    AblationNoSensor,
    Prune,
}

impl From<KindArg> for ExperimentKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::MincamSweep => ExperimentKind::MincamSweep,
            KindArg::BaselineSweep => ExperimentKind::BaselineSweep,
            KindArg::AblationNoSensor => ExperimentKind::AblationNoSensor,
            KindArg::Prune => ExperimentKind::Prune,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence { .. } => 4,
        Error::Contract(_) => 1,
        _ => 3,
    }
}

fn load_config(g: &Global, kind: ExperimentKind) -> mincam::Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(kind, 0),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn runner(g: &Global, cfg: ExperimentConfig) -> mincam::Result<Runner> {
    let mut r = Runner::new(cfg)?;
    r.threads = if g.deterministic { 1 } else { g.threads.max(1) };
    Ok(r)
}

fn print_rows(rows: &[ResultRow]) {
    for r in rows {
        println!(
            "{} {:>4}  pixels {:>5}  rmse {:.4}  acc {:.4}  {}",
            r.kind,
            r.k_or_res,
            r.pixel_count,
            r.test_rmse,
            r.test_acc,
            r.checkpoint.display()
        );
    }
}

fn run(cli: Cli) -> mincam::Result<()> {
    let g = &cli.global;
    if g.deterministic || g.threads <= 1 {
        // errors only when a pool already exists, which is harmless here
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global();
    }
    match cli.command {
        Command::GenData {
            split,
            output,
            count,
        } => {
            let cfg = load_config(g, ExperimentKind::MincamSweep)?;
            let all = [
                ("train", tags::DATA_TRAIN, cfg.data.train),
                ("val", tags::DATA_VAL, cfg.data.val),
                ("test", tags::DATA_TEST, cfg.data.test),
            ];
            let chosen: Vec<_> = match split {
                Split::Train => vec![all[0]],
                Split::Val => vec![all[1]],
                Split::Test => vec![all[2]],
                Split::All => all.to_vec(),
            };
            if let Some(path) = output {
                let [(_, tag, n)] = chosen[..] else {
                    return Err(Error::config("--output needs a single --split"));
                };
                let n = count.unwrap_or(n as u64);
                let seed = mincam::rng::derive_seed(cfg.seed, tag);
                generate_dataset(&path, seed, n, &cfg.scene)?;
                println!("{}", path.display());
            } else {
                for (name, tag, n) in chosen {
                    let ds = ensure_split(&cfg, name, tag, n)?;
                    println!("{name}: {} scenes", ds.len());
                }
            }
        }
        Command::Train { pixels } => {
            if pixels == 0 {
                return Err(Error::config("--pixels must be positive"));
            }
            let cfg = load_config(g, ExperimentKind::MincamSweep)?;
            let (row, _) = runner(g, cfg)?.mincam_run(pixels)?;
            print_rows(&[row]);
        }
        Command::Sweep { kind } => {
            let mut cfg = load_config(g, ExperimentKind::MincamSweep)?;
            match kind {
                Some(SweepKind::Mincam) => cfg.kind = ExperimentKind::MincamSweep,
                Some(SweepKind::Baseline) => cfg.kind = ExperimentKind::BaselineSweep,
                None => {}
            }
            let r = runner(g, cfg)?;
            let out = match r.config.kind {
                ExperimentKind::BaselineSweep => r.baseline_sweep()?,
                ExperimentKind::MincamSweep => r.mincam_sweep()?,
                other => {
                    return Err(Error::config(format!(
                        "config kind {} is not a sweep",
                        other.as_str()
                    )))
                }
            };
            print_rows(&out.rows);
            println!("results: {}", out.csv.display());
        }
        Command::Ablation => {
            let mut cfg = load_config(g, ExperimentKind::AblationNoSensor)?;
            cfg.kind = ExperimentKind::AblationNoSensor;
            let out = runner(g, cfg)?.ablation()?;
            print_rows(&out.rows);
            println!("ratio {:.4}", out.ratio);
        }
        Command::Prune => {
            let mut cfg = load_config(g, ExperimentKind::Prune)?;
            cfg.kind = ExperimentKind::Prune;
            cfg.validate()?;
            let out = runner(g, cfg)?.prune()?;
            println!("removed {:?}", out.removed);
            print_rows(&out.rows);
        }
        Command::Eval {
            checkpoint,
            noise_seed,
        } => {
            let cfg = load_config(g, ExperimentKind::MincamSweep)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let test = ensure_split(&cfg, "test", tags::DATA_TEST, cfg.data.test)?;
            let m = evaluate(
                &ckpt,
                &test,
                noise_seed.unwrap_or(test_noise_seed(cfg.seed)),
            )?;
            println!("rmse {}", m.rmse);
            println!("accuracy {}", m.accuracy);
            println!("loss {}", m.loss);
            println!("confusion (rows: true count, columns: predicted)");
            for row in &m.confusion {
                let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
                println!("{}", cells.join(""));
            }
        }
        Command::ExportMasks { checkpoint, dir } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let id = checkpoint.display().to_string();
            for p in export_masks(&ckpt.model.masks, &dir, &id, ckpt.train.seed)? {
                println!("{}", p.display());
            }
        }
        Command::PlotData { results, output } => {
            let mut rows = Vec::new();
            for p in &results {
                rows.extend(read_results(p)?);
            }
            let table = plot_data(&rows)?;
            match output {
                Some(path) => write(&path, &table)?,
                None => print!("{table}"),
            }
            match crossover(&rows) {
                Some(k) => eprintln!("crossover: {k} mincam pixels match the reference baseline"),
                None => eprintln!("crossover: none"),
            }
        }
        Command::Validate => {
            let cfg = load_config(g, ExperimentKind::MincamSweep)?;
            println!("ok: {} (digest {})", cfg.kind.as_str(), cfg.digest());
        }
        Command::Inspect { checkpoint } => {
            print!("{}", Checkpoint::load(&checkpoint)?.summary());
        }
        Command::InitConfig { kind } => {
            println!("{}", ExperimentConfig::new(kind.into(), 0).to_json());
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> mincam::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
