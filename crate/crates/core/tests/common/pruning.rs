//! A trained camera with one planted dead pixel, and the pruning checks
//! run against it.

use mincam::net::MlpConfig;
use mincam::prune::{greedy_prune, FinetuneCadence, PruneConfig};
use mincam::scene::{Dataset, SceneSpec};
use mincam::sensor::SensorConfig;
use mincam::train::{init_masks, train_with_masks, Checkpoint, Setup, TrainConfig};
use mincam::Error;

pub const DEAD: usize = 2;

pub struct Fixture {
    pub checkpoint: Checkpoint,
    pub train: Dataset,
    pub val: Dataset,
}

/// A trained 4-pixel camera whose pixel `DEAD` sits at the minimum
/// transmittance everywhere.
pub fn fixture() -> Fixture {
    let scene = SceneSpec {
        height: 16,
        width: 16,
        ..SceneSpec::default()
    };
    let mut mlp = MlpConfig::counting(4);
    mlp.hidden = vec![64, 64];
    let setup = Setup {
        scene: scene.clone(),
        sensor: SensorConfig::hardware(),
        mlp,
        train: TrainConfig {
            learning_rate: 3e-3,
            batch_size: 128,
            max_epochs: 8,
            calibration_samples: 2000,
            seed: 5,
            ..TrainConfig::default()
        },
    };
    let mut masks = init_masks(
        4,
        16,
        16,
        setup.sensor.mask_range,
        setup.train.init_range(),
        setup.train.seed,
    )
    .unwrap();
    let cells = masks.cells();
    // saturated sigmoid: the logits receive no usable gradient and stay put
    masks.logits_mut().unwrap().data_mut()[DEAD * cells..(DEAD + 1) * cells].fill(-60.0);
    let train = Dataset::generate(21, 6000, &scene).unwrap();
    let val = Dataset::generate(22, 1500, &scene).unwrap();
    let report = train_with_masks(&setup, masks, &train, &val).unwrap();
    Fixture {
        checkpoint: report.checkpoint,
        train,
        val,
    }
}

pub fn pruning_behaviour(f: &Fixture) {
    let original = f.checkpoint.model.masks.clone();
    let trace = greedy_prune(&f.checkpoint, &f.train, &f.val, &PruneConfig::new(1)).unwrap();

    assert_eq!(
        trace.steps[0].removed_index, DEAD,
        "candidates {:?}",
        trace.steps[0].candidates
    );

    let removed = trace.removed();
    let mut unique = removed.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), removed.len());
    assert_eq!(removed.len(), 3);

    let mut prev = trace.initial_loss;
    for (i, s) in trace.steps.iter().enumerate() {
        assert_eq!(s.candidates.len(), 4 - i);
        let live = s.checkpoint.model.active.iter().filter(|&&a| a).count();
        assert_eq!(live, 3 - i);
        assert_eq!(s.checkpoint.model.masks, original);
        assert!(
            s.post_finetune_loss >= prev * 0.95,
            "step {i}: loss {} after {prev}",
            s.post_finetune_loss
        );
        prev = s.post_finetune_loss;
    }

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    trace.write_csv(&csv).unwrap();
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("step,removed_index,pre_loss,post_finetune_loss,val_rmse")
    );
    assert_eq!(lines.count(), 3);

    // one removal, frozen head
    let cfg = PruneConfig {
        target_k: 3,
        finetune_epochs: 0,
        cadence: FinetuneCadence::Never,
    };
    let one = greedy_prune(&f.checkpoint, &f.train, &f.val, &cfg).unwrap();
    assert_eq!(one.steps.len(), 1);
    assert_eq!(one.steps[0].removed_index, DEAD);
    assert_eq!(
        one.steps[0].checkpoint.model.network,
        f.checkpoint.model.network
    );

    for bad in [0, 4, 9] {
        let r = greedy_prune(&f.checkpoint, &f.train, &f.val, &PruneConfig::new(bad));
        assert!(matches!(r, Err(Error::Config(_))), "target {bad}");
    }
}
