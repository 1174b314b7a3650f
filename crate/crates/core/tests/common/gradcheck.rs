//! Analytic gradients against central differences on random configurations.

use super::{numeric_grad, relative_error, rng, uniform};
use mincam::autodiff::{Graph, Tensor, Var};
use mincam::net::{Head, MlpConfig, Network};
use mincam::sensor::{Camera, MaskBank, SensorConfig, SensorMode, TransmittanceRange};
use rand::Rng;

pub const TOL: f64 = 1e-4;
pub const CONFIGS: u64 = 24;

/// Reduces `out` to a scalar with fixed random weights so every output
/// entry contributes a distinct amount.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Var {
    let shape = g.value(out).shape().to_vec();
    let w = uniform(&mut rng(seed ^ 0xabcd), &shape, -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(out, w).unwrap();
    g.sum(p, None).unwrap()
}

/// Worst relative error over all inputs of `build`.
fn gradient_error(inputs: &[Tensor], build: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[i]).unwrap().data().to_vec();
        let numeric = numeric_grad(x, |p| {
            let mut h = Graph::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| h.param(if j == i { p.clone() } else { t.clone() }))
                .collect();
            let out = build(&mut h, &vs);
            h.value(out).item()
        });
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

fn check_all(
    name: &str,
    make: impl Fn(u64) -> (Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Var>),
) {
    for seed in 0..CONFIGS {
        let (inputs, build) = make(seed);
        let err = gradient_error(&inputs, &*build);
        assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

fn dims(seed: u64, n: usize) -> Vec<usize> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(1..6)).collect()
}

pub fn matmul_and_transpose() {
    check_all("matmul", |s| {
        let d = dims(s, 3);
        let mut r = rng(s + 100);
        let a = uniform(&mut r, &[d[0], d[1]], -1.0, 1.0);
        let b = uniform(&mut r, &[d[2], d[1]], -1.0, 1.0);
        (
            vec![a, b],
            Box::new(move |g: &mut Graph, v: &[Var]| {
                let bt = g.transpose(v[1]).unwrap();
                let p = g.matmul(v[0], bt).unwrap();
                weighted_sum(g, p, s)
            }),
        )
    });
}

pub fn elementwise_ops() {
    check_all("elementwise", |s| {
        let d = dims(s, 2);
        let mut r = rng(s + 200);
        let a = uniform(&mut r, &d, -2.0, 2.0);
        let b = uniform(&mut r, &d, -2.0, 2.0);
        let c: f64 = r.random_range(-3.0..3.0);
        (
            vec![a, b],
            Box::new(move |g: &mut Graph, v: &[Var]| {
                let sig = g.sigmoid(v[0]);
                let prod = g.mul(sig, v[1]).unwrap();
                let sc = g.scale(prod, c);
                let sh = g.add_scalar(sc, 0.3);
                let sum = g.add(sh, v[0]).unwrap();
                weighted_sum(g, sum, s)
            }),
        )
    });
}

pub fn leaky_relu_away_from_the_kink() {
    check_all("leaky_relu", |s| {
        let d = dims(s, 2);
        let mut r = rng(s + 300);
        let a = Tensor::from_fn(d.clone(), |_| {
            let m: f64 = r.random_range(0.05..2.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        });
        let slope: f64 = r.random_range(0.0..0.3);
        (
            vec![a],
            Box::new(move |g: &mut Graph, v: &[Var]| {
                let y = g.leaky_relu(v[0], slope);
                weighted_sum(g, y, s)
            }),
        )
    });
}

pub fn reductions_and_reshape() {
    check_all("reductions", |s| {
        let d = dims(s, 2);
        let mut r = rng(s + 400);
        let a = uniform(&mut r, &d, -1.0, 1.0);
        let axis = (s % 3) as usize;
        let (rows, cols) = (d[0], d[1]);
        (
            vec![a],
            Box::new(move |g: &mut Graph, v: &[Var]| {
                let flat = g.reshape(v[0], vec![rows * cols]).unwrap();
                let back = g.reshape(flat, vec![rows, cols]).unwrap();
                let red = match axis {
                    0 => g.sum(back, Some(0)).unwrap(),
                    1 => g.mean(back, Some(1)).unwrap(),
                    _ => {
                        let m = g.mean(back, None).unwrap();
                        let sq = g.mul(back, back).unwrap();
                        let t = g.sum(sq, None).unwrap();
                        g.mul(m, t).unwrap()
                    }
                };
                weighted_sum(g, red, s)
            }),
        )
    });
}

pub fn row_broadcasts() {
    check_all("row broadcast", |s| {
        let d = dims(s, 2);
        let mut r = rng(s + 500);
        let x = uniform(&mut r, &d, -1.0, 1.0);
        let a = uniform(&mut r, &[d[1]], -1.0, 1.0);
        let b = uniform(&mut r, &[d[1]], -1.0, 1.0);
        (
            vec![x, a, b],
            Box::new(move |g: &mut Graph, v: &[Var]| {
                let y = g.add_row(v[0], v[1]).unwrap();
                let z = g.mul_row(y, v[2]).unwrap();
                weighted_sum(g, z, s)
            }),
        )
    });
}

pub fn fixed_kernel_convolution() {
    check_all("conv2d", |s| {
        let mut r = rng(s + 600);
        let (b, h, w) = (
            r.random_range(1..3),
            r.random_range(2..7),
            r.random_range(2..7),
        );
        let k = [1usize, 3, 5][r.random_range(0..3)];
        let kernel = uniform(&mut r, &[k, k], 0.0, 1.0);
        let img = uniform(&mut r, &[b, h, w], 0.0, 1.0);
        (
            vec![img],
            Box::new(move |g: &mut Graph, v: &[Var]| {
                let c = g.conv2d_fixed(v[0], &kernel).unwrap();
                weighted_sum(g, c, s)
            }),
        )
    });
}

pub fn losses() {
    check_all("losses", |s| {
        let mut r = rng(s + 700);
        let (n, c) = (r.random_range(1..6), r.random_range(2..8));
        let logits = uniform(&mut r, &[n, c], -3.0, 3.0);
        let pred = uniform(&mut r, &[n, 1], -3.0, 3.0);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let target = uniform(&mut r, &[n, 1], -3.0, 3.0);
        (
            vec![logits, pred],
            Box::new(move |g: &mut Graph, v: &[Var]| {
                let ce = g.softmax_cross_entropy(v[0], &labels).unwrap();
                let t = g.constant(target.clone());
                let mse = g.mse_loss(v[1], t).unwrap();
                g.add(ce, mse).unwrap()
            }),
        )
    });
}

pub fn leaky_clip_both_branches() {
    check_all("leaky_clip", |s| {
        let d = dims(s, 2);
        let mut r = rng(s + 800);
        let max: f64 = r.random_range(0.5..3.0);
        let x = Tensor::from_fn(d.clone(), |_| {
            let off: f64 = r.random_range(0.01..1.0);
            if r.random_bool(0.5) {
                max + off
            } else {
                max - off
            }
        });
        let alpha: f64 = r.random_range(0.001..0.2);
        (
            vec![x],
            Box::new(move |g: &mut Graph, v: &[Var]| {
                let y = g.leaky_clip(v[0], max, alpha);
                weighted_sum(g, y, s)
            }),
        )
    });
}

struct Pipeline {
    camera: Camera,
    bank: MaskBank,
    net: Network,
    scenes: Tensor,
    labels: Vec<u8>,
}

impl Pipeline {
    fn random(seed: u64) -> Self {
        let mut r = rng(seed + 900);
        let (h, w) = (r.random_range(4..10), r.random_range(4..10));
        let k = r.random_range(1..5);
        let mut sensor = SensorConfig::hardware();
        sensor.noise_enabled = false;
        sensor.geometry.active_area_mm = None;
        sensor.blur_width = r.random_range(1.0..3.0);
        sensor.gain = r.random_range(0.5..5.0);
        let camera = Camera::new(&sensor, h, w).unwrap();
        let range = TransmittanceRange { lo: 0.01, hi: 0.67 };
        let logits = uniform(&mut r, &[k, h * w], -3.0, 3.0);
        let bank = MaskBank::from_logits(h, w, range, logits).unwrap();
        let head = if seed % 4 == 3 {
            Head::Regression
        } else {
            Head::Classification { classes: 11 }
        };
        let cfg = MlpConfig {
            inputs: k,
            hidden: vec![r.random_range(2..7); r.random_range(1..3)],
            leak_slope: 0.01,
            head,
            standardize_inputs: true,
        };
        let mut net = Network::init(&cfg, &mut r).unwrap();
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v += r.random_range(-0.1..0.1);
            }
        }
        net.input_shift = (0..k).map(|_| r.random_range(0.0..0.1)).collect();
        net.input_scale = (0..k).map(|_| r.random_range(5.0..50.0)).collect();
        let b = r.random_range(1..5);
        let scenes = uniform(&mut r, &[b, h, w], 0.0, 1.0);
        let labels = (0..b).map(|_| r.random_range(0..11u8)).collect();
        Self {
            camera,
            bank,
            net,
            scenes,
            labels,
        }
    }

    fn loss(
        &self,
        g: &mut Graph,
        bank: &MaskBank,
        net: &Network,
        train: bool,
    ) -> (Var, Option<Var>, Vec<Var>) {
        let s = g.constant(self.scenes.clone());
        let m = bank.bind(g, train);
        let x = self
            .camera
            .forward(g, s, m.transmittance, SensorMode::Full, None)
            .unwrap();
        let bound = net.bind(g, train);
        let out = net.forward(g, &bound, x).unwrap();
        let loss = match net.config.head {
            Head::Classification { .. } => {
                let l: Vec<usize> = self.labels.iter().map(|&v| v as usize).collect();
                g.softmax_cross_entropy(out, &l).unwrap()
            }
            Head::Regression => {
                let t = Tensor::new(
                    vec![self.labels.len(), 1],
                    self.labels.iter().map(|&v| v as f64).collect(),
                )
                .unwrap();
                let t = g.constant(t);
                g.mse_loss(out, t).unwrap()
            }
        };
        (loss, m.logits, bound.params().to_vec())
    }

    fn value(&self, bank: &MaskBank, net: &Network) -> f64 {
        let mut g = Graph::new();
        let (l, _, _) = self.loss(&mut g, bank, net, false);
        g.value(l).item()
    }
}

pub fn full_sensor_and_head_pipeline() {
    for seed in 0..CONFIGS {
        let p = Pipeline::random(seed);
        let mut g = Graph::new();
        let (loss, logits, params) = p.loss(&mut g, &p.bank, &p.net, true);
        g.backward(loss).unwrap();

        let analytic = g.grad(logits.unwrap()).unwrap().data().to_vec();
        let numeric = numeric_grad(p.bank.logits().unwrap(), |t| {
            let mut b = p.bank.clone();
            *b.logits_mut().unwrap() = t.clone();
            p.value(&b, &p.net)
        });
        let err = relative_error(&analytic, &numeric);
        assert!(err < TOL, "seed {seed} masks: relative error {err:e}");

        for (i, &v) in params.iter().enumerate() {
            let analytic = g.grad(v).unwrap().data().to_vec();
            let numeric = numeric_grad(p.net.params()[i], |t| {
                let mut n = p.net.clone();
                *n.params_mut()[i] = t.clone();
                p.value(&p.bank, &n)
            });
            let err = relative_error(&analytic, &numeric);
            assert!(err < TOL, "seed {seed} param {i}: relative error {err:e}");
        }
    }
}
