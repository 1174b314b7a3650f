//! Joint training of masks and inference head.

mod adam;
mod checkpoint;

pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::net::{predict_counts, Head, MlpConfig, Network};
use crate::rng::{self, tags};
use crate::scene::{Dataset, SceneSpec};
use crate::sensor::{sample_noise, Camera, MaskBank, SensorConfig, SensorMode, TransmittanceRange};

/// Batch size used for evaluation passes. Fixed so that evaluation never
/// depends on the caller.
pub const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a better validation RMSE.
    pub patience: usize,
    pub seed: u64,
    pub mask_init_range: [f64; 2],
    pub freeze_masks: bool,
    pub sensor_model_in_training: bool,
    /// Scenes used to fit the input standardization of a fresh network.
    #[serde(default = "default_calibration")]
    pub calibration_samples: usize,
}

fn default_calibration() -> usize {
    4096
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            max_epochs: 30,
            patience: 10,
            seed: 0,
            mask_init_range: [0.08, 0.12],
            freeze_masks: false,
            sensor_model_in_training: true,
            calibration_samples: default_calibration(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, range: &TransmittanceRange) -> Result<()> {
        let b_ok = |b: f64| b > 0.0 && b < 1.0;
        if !(b_ok(self.beta1) && b_ok(self.beta2)) {
            return Err(Error::config("Adam betas must be in (0, 1)"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be non-negative"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        let [lo, hi] = self.mask_init_range;
        if !(range.lo < lo && lo < hi && hi < range.hi) {
            return Err(Error::config(format!(
                "mask init range [{lo}, {hi}] must lie inside ({}, {})",
                range.lo, range.hi
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn init_range(&self) -> TransmittanceRange {
        TransmittanceRange {
            lo: self.mask_init_range[0],
            hi: self.mask_init_range[1],
        }
    }

    fn sensor_mode(&self) -> SensorMode {
        if self.sensor_model_in_training {
            SensorMode::Full
        } else {
            SensorMode::ProjectionOnly
        }
    }
}

/// Masks, head, and which pixels still contribute.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub masks: MaskBank,
    pub network: Network,
    /// Pixels whose measurement is forced to zero are `false`.
    pub active: Vec<bool>,
}

impl Model {
    pub fn new(masks: MaskBank, network: Network) -> Result<Self> {
        if masks.pixels != network.inputs() {
            return Err(Error::Dimension {
                op: "model",
                lhs: vec![masks.pixels],
                rhs: vec![network.inputs()],
            });
        }
        let active = vec![true; masks.pixels];
        Ok(Self {
            masks,
            network,
            active,
        })
    }
}

/// Draws a fresh mask bank with every transmittance in `init`.
pub fn init_masks(
    pixels: usize,
    height: usize,
    width: usize,
    range: TransmittanceRange,
    init: TransmittanceRange,
    seed: u64,
) -> Result<MaskBank> {
    let mut r = rng::stream(seed, tags::MASK_INIT, 0);
    MaskBank::random_init(pixels, height, width, range, init, &mut r)
}

/// Fresh head with seeded fan-based init.
pub fn init_network(mlp: &MlpConfig, seed: u64) -> Result<Network> {
    Network::init(mlp, &mut rng::stream(seed, tags::NET_INIT, 0))
}

/// Evaluation results of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub accuracy: f64,
    /// Mean training objective (cross-entropy or squared error).
    pub loss: f64,
    /// `confusion[label][prediction]`.
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Best-validation state.
    pub checkpoint: Checkpoint,
    /// State after the last epoch that ran.
    pub last: Model,
    pub last_val_rmse: f64,
    pub history: Vec<EpochStats>,
    pub steps: u64,
}

/// Everything needed to run a model on data.
#[derive(Debug, Clone)]
pub struct Setup {
    pub scene: SceneSpec,
    pub sensor: SensorConfig,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
}

impl Setup {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.sensor.validate()?;
        self.mlp.validate()?;
        self.train.validate(&self.sensor.mask_range)?;
        if let Head::Classification { classes } = self.mlp.head {
            if classes < self.scene.classes() {
                return Err(Error::config(format!(
                    "{classes} classes cannot represent counts up to {}",
                    self.scene.count_range[1]
                )));
            }
        }
        Ok(())
    }

    pub fn camera(&self) -> Result<Camera> {
        Camera::new(&self.sensor, self.scene.height, self.scene.width)
    }
}

fn check_data(ds: &Dataset, scene: &SceneSpec, what: &str) -> Result<()> {
    if ds.height != scene.height || ds.width != scene.width {
        return Err(Error::Dimension {
            op: "dataset resolution",
            lhs: vec![ds.height, ds.width],
            rhs: vec![scene.height, scene.width],
        });
    }
    if ds.is_empty() {
        return Err(Error::Setup(format!("{what} set is empty")));
    }
    Ok(())
}

fn scene_batch(ds: &Dataset, idx: &[usize]) -> Tensor {
    let c = ds.cells();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend(ds.image(i).iter().map(|&v| v as f64));
    }
    Tensor::new(vec![idx.len(), ds.height, ds.width], data).expect("shape")
}

/// Noise for one batch: `None` when the mode or config adds none.
pub(crate) struct NoiseSpec<'a> {
    pub seed: u64,
    pub tag: &'a str,
}

struct Forward {
    output: Var,
    logits: Option<Var>,
    net: crate::net::BoundNetwork,
}

#[allow(clippy::too_many_arguments)]
fn forward(
    g: &mut Graph,
    model: &Model,
    camera: &Camera,
    mode: SensorMode,
    scenes: Tensor,
    keys: &[u64],
    noise: Option<&NoiseSpec>,
    train_masks: bool,
    train_net: bool,
) -> Result<Forward> {
    let k = model.masks.pixels;
    let noise = match (mode, noise) {
        (SensorMode::Full, Some(n)) if camera.config().noise_enabled => {
            Some(sample_noise(camera.config(), k, n.seed, n.tag, keys))
        }
        _ => None,
    };
    let s = g.constant(scenes);
    let masks = model.masks.bind(g, train_masks);
    let mut x = camera.forward(g, s, masks.transmittance, mode, noise.as_ref())?;
    if model.active.iter().any(|a| !a) {
        let gate = Tensor::from_fn(vec![k], |j| if model.active[j] { 1.0 } else { 0.0 });
        let gate = g.constant(gate);
        x = g.mul_row(x, gate)?;
    }
    let net = model.network.bind(g, train_net);
    let output = model.network.forward(g, &net, x)?;
    Ok(Forward {
        output,
        logits: masks.logits,
        net,
    })
}

fn loss(g: &mut Graph, head: Head, output: Var, labels: &[u8]) -> Result<Var> {
    match head {
        Head::Classification { .. } => {
            let l: Vec<usize> = labels.iter().map(|&v| v as usize).collect();
            g.softmax_cross_entropy(output, &l)
        }
        Head::Regression => {
            let t = Tensor::new(
                vec![labels.len(), 1],
                labels.iter().map(|&v| v as f64).collect(),
            )?;
            let t = g.constant(t);
            g.mse_loss(output, t)
        }
    }
}

/// Raw measurements `[n, K]` of the first `n` scenes, as seen by the head.
pub fn measure(
    model: &Model,
    camera: &Camera,
    mode: SensorMode,
    ds: &Dataset,
    n: usize,
    noise_seed: u64,
) -> Result<Tensor> {
    let n = n.min(ds.len());
    let k = model.masks.pixels;
    let mut out = Vec::with_capacity(n * k);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let keys: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
        let mut g = Graph::new();
        let s = g.constant(scene_batch(ds, &idx));
        let masks = model.masks.bind(&mut g, false);
        let noise = (mode == SensorMode::Full && camera.config().noise_enabled)
            .then(|| sample_noise(camera.config(), k, noise_seed, tags::EVAL_NOISE, &keys));
        let x = camera.forward(&mut g, s, masks.transmittance, mode, noise.as_ref())?;
        out.extend_from_slice(g.value(x).data());
    }
    Tensor::new(vec![n, k], out)
}

/// Fits the head's input standardization on the first calibration scenes.
pub fn calibrate_inputs(
    model: &mut Model,
    camera: &Camera,
    train: &TrainConfig,
    ds: &Dataset,
) -> Result<()> {
    let seed = rng::derive_seed(train.seed, "calibration");
    let m = measure(
        model,
        camera,
        train.sensor_mode(),
        ds,
        train.calibration_samples.max(1),
        seed,
    )?;
    model.network.fit_input_standardization(&m)
}

/// Metrics of `model` on `ds` with per-scene noise from `noise_seed`.
pub fn evaluate_model(
    model: &Model,
    camera: &Camera,
    mode: SensorMode,
    scene: &SceneSpec,
    ds: &Dataset,
    noise_seed: u64,
) -> Result<Metrics> {
    check_data(ds, scene, "evaluation")?;
    let head = model.network.config.head;
    let classes = scene.classes();
    let mut confusion = vec![vec![0u64; classes]; classes];
    let (mut se, mut correct, mut loss_sum) = (0.0, 0u64, 0.0);
    let noise = NoiseSpec {
        seed: noise_seed,
        tag: tags::EVAL_NOISE,
    };
    for start in (0..ds.len()).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(ds.len())).collect();
        let keys: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
        let labels: Vec<u8> = idx.iter().map(|&i| ds.labels[i]).collect();
        let mut g = Graph::new();
        let f = forward(
            &mut g,
            model,
            camera,
            mode,
            scene_batch(ds, &idx),
            &keys,
            Some(&noise),
            false,
            false,
        )?;
        let l = loss(&mut g, head, f.output, &labels)?;
        loss_sum += g.value(l).item() * idx.len() as f64;
        let preds = predict_counts(g.value(f.output), head, scene.count_range);
        for (&p, &t) in preds.iter().zip(&labels) {
            let d = p as f64 - t as f64;
            se += d * d;
            correct += (p == t) as u64;
            confusion[t as usize][p as usize] += 1;
        }
    }
    let n = ds.len() as f64;
    Ok(Metrics {
        rmse: (se / n).sqrt(),
        accuracy: correct as f64 / n,
        loss: loss_sum / n,
        confusion,
    })
}

/// Evaluates a checkpoint with the full sensor model.
pub fn evaluate(checkpoint: &Checkpoint, test: &Dataset, noise_seed: u64) -> Result<Metrics> {
    let camera = Camera::new(
        &checkpoint.sensor,
        checkpoint.scene.height,
        checkpoint.scene.width,
    )?;
    evaluate_model(
        &checkpoint.model,
        &camera,
        SensorMode::Full,
        &checkpoint.scene,
        test,
        noise_seed,
    )
}

/// Seed of the fixed validation noise for a training seed.
pub fn validation_noise_seed(train_seed: u64) -> u64 {
    rng::derive_seed(train_seed, tags::VAL_NOISE)
}

/// Trains a fresh model: masks from `mask_init_range`, head from the
/// net-init stream.
pub fn train(setup: &Setup, train_set: &Dataset, val_set: &Dataset) -> Result<TrainReport> {
    setup.validate()?;
    let s = &setup.scene;
    let masks = init_masks(
        setup.mlp.inputs,
        s.height,
        s.width,
        setup.sensor.mask_range,
        setup.train.init_range(),
        setup.train.seed,
    )?;
    train_with_masks(setup, masks, train_set, val_set)
}

/// Trains a fresh head on top of the given masks (trained unless frozen).
pub fn train_with_masks(
    setup: &Setup,
    masks: MaskBank,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<TrainReport> {
    setup.validate()?;
    let network = init_network(&setup.mlp, setup.train.seed)?;
    let mut model = Model::new(masks, network)?;
    if setup.mlp.standardize_inputs {
        calibrate_inputs(&mut model, &setup.camera()?, &setup.train, train_set)?;
    }
    fit(setup, model, train_set, val_set)
}

/// Runs the training loop from an existing model.
pub fn fit(
    setup: &Setup,
    mut model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<TrainReport> {
    setup.validate()?;
    check_data(train_set, &setup.scene, "training")?;
    check_data(val_set, &setup.scene, "validation")?;
    let tc = &setup.train;
    let camera = setup.camera()?;
    let mode = tc.sensor_mode();
    let head = model.network.config.head;
    let train_masks = model.masks.is_trainable() && !tc.freeze_masks;
    let val_seed = validation_noise_seed(tc.seed);

    let mut sizes = Vec::new();
    if train_masks {
        sizes.push(model.masks.cells() * model.masks.pixels);
    }
    sizes.extend(model.network.params().iter().map(|t| t.len()));
    let mut opt = Adam::new(tc.adam(), sizes);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(Model, usize, Metrics)> = None;
    let mut since_best = 0;
    let mut last_val_rmse = f64::NAN;

    for epoch in 0..tc.max_epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut rng::stream(tc.seed, tags::SHUFFLE, epoch as u64));
        let noise_tag = format!("{}/{epoch}", tags::TRAIN_NOISE);
        let noise = NoiseSpec {
            seed: tc.seed,
            tag: &noise_tag,
        };
        let mut loss_sum = 0.0;
        for (step, idx) in order.chunks(tc.batch_size).enumerate() {
            let keys: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
            let labels: Vec<u8> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let mut g = Graph::new();
            let f = forward(
                &mut g,
                &model,
                &camera,
                mode,
                scene_batch(train_set, idx),
                &keys,
                Some(&noise),
                train_masks,
                true,
            )?;
            let l = loss(&mut g, head, f.output, &labels)?;
            let lv = g.value(l).item();
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: lv,
                    checkpoint: Box::new(Checkpoint::new(setup, model, epoch, f64::NAN, lv)),
                });
            }
            loss_sum += lv * idx.len() as f64;
            g.backward(l)?;

            let mut grads = Vec::with_capacity(f.net.params().len() + 1);
            if let Some(lg) = f.logits {
                grads.push(g.take_grad(lg).expect("trainable leaf has a gradient"));
            }
            for &p in f.net.params() {
                grads.push(g.take_grad(p).expect("trainable leaf has a gradient"));
            }
            let mut params: Vec<&mut Tensor> = Vec::with_capacity(grads.len());
            if train_masks {
                params.push(model.masks.logits_mut().expect("trainable bank"));
            }
            params.extend(model.network.params_mut());
            opt.update(params, &grads);
        }

        let val = evaluate_model(&model, &camera, mode, &setup.scene, val_set, val_seed)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_rmse: val.rmse,
            val_loss: val.loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        debug!("{stats:?}");
        history.push(stats);
        last_val_rmse = val.rmse;

        let improved = match &best {
            None => true,
            Some((_, _, b)) => val.rmse < b.rmse || (val.rmse == b.rmse && val.loss < b.loss),
        };
        if improved {
            best = Some((model.clone(), epoch, val));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let steps = opt.step;
    let checkpoint = match best {
        Some((m, epoch, val)) => Checkpoint::new(setup, m, epoch, val.rmse, val.loss),
        None => {
            let val = evaluate_model(&model, &camera, mode, &setup.scene, val_set, val_seed)?;
            last_val_rmse = val.rmse;
            Checkpoint::new(setup, model.clone(), 0, val.rmse, val.loss)
        }
    };
    Ok(TrainReport {
        checkpoint,
        last: model,
        last_val_rmse,
        history,
        steps,
    })
}
