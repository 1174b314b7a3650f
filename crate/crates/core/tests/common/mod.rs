#![allow(dead_code)]

pub mod gradcheck;
pub mod physics;
pub mod pruning;

use mincam::autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Central differences of a scalar function, one coordinate at a time,
/// with a step relative to each coordinate's magnitude.
pub fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * x.data()[i].abs().max(1.0);
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Block means of an `H×W` image over an `R×R` grid of equal blocks.
pub fn average_pool(image: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let (bh, bw) = (h / r, w / r);
    let mut out = vec![0.0; r * r];
    for by in 0..r {
        for bx in 0..r {
            let mut s = 0.0;
            for y in by * bh..(by + 1) * bh {
                for x in bx * bw..(bx + 1) * bw {
                    s += image[y * w + x];
                }
            }
            out[by * r + bx] = s / (bh * bw) as f64;
        }
    }
    out
}
