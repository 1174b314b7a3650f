use std::fs;
use std::path::Path;

use mincam::experiment::{
    crossover, plot_data, read_results, reevaluate, ExperimentConfig, ExperimentKind, Runner,
};
use mincam::scene::SceneSpec;

fn tiny(kind: ExperimentKind, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind, 13);
    c.scene = SceneSpec {
        height: 8,
        width: 8,
        ..SceneSpec::default()
    };
    c.net.hidden = vec![16];
    c.train.max_epochs = 2;
    c.train.batch_size = 64;
    c.train.calibration_samples = 256;
    c.data.train = 400;
    c.data.val = 100;
    c.data.test = 150;
    c.pixel_counts = vec![1, 2];
    c.baseline_resolutions = vec![1, 2, 8];
    c.ablation_k = 2;
    c.prune.source_k = 3;
    c.prune.target_k = 1;
    c.prune.finetune_epochs = 1;
    c.out = Some(out.to_path_buf());
    c
}

#[test]
fn single_entry_sweep_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ExperimentKind::MincamSweep, dir.path());
    cfg.pixel_counts = vec![1];
    let out = Runner::new(cfg).unwrap().mincam_sweep().unwrap();
    assert_eq!(out.rows.len(), 1);
    let text = fs::read_to_string(&out.csv).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "kind,k_or_res,pixel_count,test_rmse,test_acc,seed,checkpoint"
    );
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn rerun_is_idempotent_and_rows_reevaluate_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(ExperimentKind::MincamSweep, dir.path());
    let runner = Runner::new(cfg.clone()).unwrap();
    let first = runner.mincam_sweep().unwrap();
    assert!(first.steps > 0);
    let csv = fs::read(&first.csv).unwrap();

    let again = Runner::new(cfg.clone()).unwrap().mincam_sweep().unwrap();
    assert_eq!(again.steps, 0);
    assert_eq!(fs::read(&again.csv).unwrap(), csv);

    for row in &first.rows {
        assert!(row.checkpoint.starts_with(cfg.run_root()));
        assert!(row
            .checkpoint
            .parent()
            .unwrap()
            .join("masks/manifest.txt")
            .exists());
        let m = reevaluate(&cfg, &row.checkpoint).unwrap();
        assert_eq!(m.rmse.to_bits(), row.test_rmse.to_bits());
    }
}

#[test]
fn moved_output_tree_is_reused_in_place() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ExperimentKind::MincamSweep, &dir.path().join("a"));
    cfg.pixel_counts = vec![1];
    Runner::new(cfg.clone()).unwrap().mincam_sweep().unwrap();
    fs::rename(dir.path().join("a"), dir.path().join("b")).unwrap();
    cfg.out = Some(dir.path().join("b"));
    let again = Runner::new(cfg.clone()).unwrap().mincam_sweep().unwrap();
    assert_eq!(again.steps, 0);
    assert_eq!(
        again.rows[0].checkpoint,
        cfg.run_root().join("mincam/001/model.ckpt")
    );
    assert!(again.rows[0].checkpoint.exists());
}

#[test]
fn differing_configs_never_share_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny(ExperimentKind::MincamSweep, dir.path());
    let mut b = a.clone();
    b.train.learning_rate = 2e-3;
    assert_ne!(a.run_root(), b.run_root());
    let mut c = a.clone();
    c.pixel_counts = vec![1];
    assert_eq!(a.run_root(), c.run_root());
}

#[test]
fn baseline_rows_report_squared_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(ExperimentKind::BaselineSweep, dir.path());
    let out = Runner::new(cfg).unwrap().baseline_sweep().unwrap();
    let counts: Vec<_> = out
        .rows
        .iter()
        .map(|r| (r.k_or_res, r.pixel_count))
        .collect();
    assert_eq!(counts, vec![(1, 1), (2, 4), (8, 64)]);
    assert!(out.rows.iter().all(|r| r.kind == "baseline"));
}

#[test]
fn ablation_reports_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(ExperimentKind::AblationNoSensor, dir.path());
    let out = Runner::new(cfg).unwrap().ablation().unwrap();
    assert_eq!(out.rows.len(), 2);
    assert_eq!(out.rows[0].kind, "ablation_a");
    assert_eq!(out.rows[1].kind, "ablation_b");
    assert_eq!(out.ratio, out.rows[0].test_rmse / out.rows[1].test_rmse);
}

#[test]
fn prune_experiment_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(ExperimentKind::Prune, dir.path());
    let out = Runner::new(cfg).unwrap().prune().unwrap();
    assert_eq!(out.removed.len(), 2);
    assert_eq!(out.rows.len(), 3);
    assert!(out.csv.parent().unwrap().join("trace.csv").exists());
}

#[test]
fn missing_data_without_generation_is_a_setup_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ExperimentKind::MincamSweep, dir.path());
    cfg.data.generate = false;
    assert!(matches!(Runner::new(cfg), Err(mincam::Error::Setup(_))));
}

#[test]
fn merged_plot_table_and_crossover() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    fs::write(
        &csv,
        "kind,k_or_res,pixel_count,test_rmse,test_acc,seed,checkpoint\n\
         baseline,32,1024,0.8,0.5,1,a\n\
         baseline,2,4,1.5,0.3,1,b\n\
         mincam,1,1,2.0,0.2,1,c\n\
         mincam,4,4,0.9,0.4,1,d\n\
         mincam,16,16,0.79,0.5,1,e\n\
         mincam,64,64,0.7,0.6,1,f\n",
    )
    .unwrap();
    let rows = read_results(&csv).unwrap();
    assert_eq!(crossover(&rows), Some(16));
    let table = plot_data(&rows).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[1], "baseline,4,2,1.5");
    assert_eq!(lines[3], "mincam,1,0,2");
}
