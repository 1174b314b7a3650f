//! Sensor-model properties: transmittance bounds, the leaky saturation law,
//! linearity, the box-mask pooling oracle and noise statistics.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use super::{average_pool, rng, uniform};
use mincam::autodiff::{leaky_clip, leaky_clip_slope, Graph, Tensor};
use mincam::rng::derive_seed;
use mincam::sensor::{
    box_mask_bank, pixel_forward, sample_noise, Camera, MaskBank, SensorConfig, SensorMode,
    TransmittanceRange,
};

pub const CASES: u32 = 256;
pub const LINEARITY_TOL: f64 = 1e-10;
pub const POOLING_TOL: f64 = 1e-9;

const RANGE: TransmittanceRange = TransmittanceRange { lo: 0.01, hi: 0.67 };

fn runner() -> TestRunner {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) {
    if let Err(e) = runner().run(&strategy, test) {
        panic!("{e}");
    }
}

fn measure(camera: &Camera, bank: &MaskBank, scenes: Tensor) -> Tensor {
    let mut g = Graph::new();
    let s = g.constant(scenes);
    let m = bank.bind(&mut g, false);
    let out = pixel_forward(&mut g, s, &m, camera, SensorMode::Full, None).unwrap();
    g.value(out).clone()
}

pub fn transmittance_stays_in_range() {
    check(
        (-1e6f64..1e6, 0.001f64..0.4, 0.01f64..0.59),
        |(logit, lo, span)| {
            let r = TransmittanceRange { lo, hi: lo + span };
            let t = r.from_logit(logit);
            prop_assert!(t >= r.lo && t <= r.hi, "{t} outside [{}, {}]", r.lo, r.hi);
            Ok(())
        },
    );
    for logit in [-1e300, -50.0, 50.0, 1e300] {
        let t = RANGE.from_logit(logit);
        assert!((RANGE.lo..=RANGE.hi).contains(&t), "{logit} -> {t}");
    }
    assert!((RANGE.from_logit(50.0) - RANGE.hi).abs() <= 1e-9);
}

pub fn leaky_clip_matches_the_piecewise_law() {
    check(
        (-10f64..10.0, 0.1f64..5.0, 1e-4f64..0.2),
        |(x, max, alpha)| {
            let y = leaky_clip(x, max, alpha);
            if x <= max {
                prop_assert_eq!(y, x);
                prop_assert_eq!(leaky_clip_slope(x, max, alpha), 1.0);
            } else {
                prop_assert_eq!(y, alpha * (x - max) + max);
                prop_assert_eq!(leaky_clip_slope(x, max, alpha), alpha);
            }
            Ok(())
        },
    );
}

pub fn leaky_clip_is_monotone_and_continuous() {
    check(
        (-10f64..10.0, -10f64..10.0, 0.1f64..5.0, 1e-4f64..0.2),
        |(a, b, max, alpha)| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(leaky_clip(lo, max, alpha) <= leaky_clip(hi, max, alpha));
            let eps = 1e-9;
            let gap = (leaky_clip(max + eps, max, alpha) - leaky_clip(max - eps, max, alpha)).abs();
            prop_assert!(gap <= 2.0 * eps);
            Ok(())
        },
    );
}

pub fn forward_is_linear_without_noise_or_clip() {
    check((0u64..10_000, -3f64..3.0, -3f64..3.0), |(seed, a, b)| {
        let mut r = rng(seed);
        let (h, w, k) = (8, 8, 3);
        let mut cfg = SensorConfig::hardware();
        cfg.noise_enabled = false;
        cfg.clip_enabled = false;
        cfg.geometry.active_area_mm = None;
        cfg.blur_width = 2.3;
        let camera = Camera::new(&cfg, h, w).unwrap();
        let bank =
            MaskBank::from_logits(h, w, RANGE, uniform(&mut r, &[k, h * w], -4.0, 4.0)).unwrap();
        let i1 = uniform(&mut r, &[2, h, w], 0.0, 1.0);
        let i2 = uniform(&mut r, &[2, h, w], 0.0, 1.0);
        let mix = Tensor::from_fn(vec![2, h, w], |i| a * i1.data()[i] + b * i2.data()[i]);
        let p1 = measure(&camera, &bank, i1);
        let p2 = measure(&camera, &bank, i2);
        let pm = measure(&camera, &bank, mix);
        for i in 0..pm.len() {
            let expect = a * p1.data()[i] + b * p2.data()[i];
            prop_assert!(
                (pm.data()[i] - expect).abs() <= LINEARITY_TOL,
                "{} vs {expect}",
                pm.data()[i]
            );
        }
        Ok(())
    });
}

pub fn box_masks_average_pool() {
    check((0u64..10_000, 0usize..4), |(seed, r_idx)| {
        let res = [1usize, 2, 4, 8][r_idx];
        let (h, w) = (16, 16);
        let camera = Camera::new(&SensorConfig::ideal(RANGE), h, w).unwrap();
        let bank = box_mask_bank(res, h, w, RANGE).unwrap();
        let scenes = uniform(&mut rng(seed), &[1, h, w], 0.0, 1.0);
        let pooled = average_pool(scenes.data(), h, w, res);
        let p = measure(&camera, &bank, scenes);
        // unit gain: p_j = t_hi · (block mean) / R²
        let constant = RANGE.hi / (res * res) as f64;
        for j in 0..res * res {
            prop_assert!((p.data()[j] - constant * pooled[j]).abs() <= POOLING_TOL);
        }
        Ok(())
    });
}

pub fn noise_moments_match_read_plus_quantization() {
    let cfg = SensorConfig::hardware();
    let n = 100_000;
    let keys: Vec<u64> = (0..n as u64).collect();
    let draws = sample_noise(&cfg, 1, derive_seed(7, "noise-test"), "eval-noise", &keys);
    let x = draws.data();

    let lsb = cfg.p_lsb();
    let sr = cfg.read_noise_std;
    let mean_true = lsb / 2.0;
    let var_true = sr * sr + lsb * lsb / 12.0;
    // fourth central moment of N(0, sr²) + U(0, lsb)
    let mu4_true = 3.0 * sr.powi(4) + 6.0 * sr * sr * lsb * lsb / 12.0 + lsb.powi(4) / 80.0;

    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let se_mean = (var_true / nf).sqrt();
    let se_var = ((mu4_true - var_true * var_true) / nf).sqrt();
    assert!(
        (mean - mean_true).abs() <= 5.0 * se_mean,
        "mean {mean:e} vs {mean_true:e} (se {se_mean:e})"
    );
    assert!(
        (var - var_true).abs() <= 5.0 * se_var,
        "var {var:e} vs {var_true:e} (se {se_var:e})"
    );
}

pub fn noise_rows_do_not_depend_on_batching() {
    let cfg = SensorConfig::hardware();
    let all = sample_noise(&cfg, 3, 1, "t", &[0, 1, 2, 3]);
    let tail = sample_noise(&cfg, 3, 1, "t", &[2, 3]);
    assert_eq!(&all.data()[6..], tail.data());
}

pub fn single_cell_indicators_at_full_resolution() {
    let bank = box_mask_bank(32, 32, 32, RANGE).unwrap();
    let t = bank.transmittance();
    for j in 0..1024 {
        let row = &t.data()[j * 1024..(j + 1) * 1024];
        assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(row[j], RANGE.hi);
    }
}
