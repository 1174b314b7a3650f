//! Synthetic patch-counting scenes.
//!
//! Each scene is a dim background with `n` bright square patches at random
//! positions, sizes and brightnesses, multiplied by a smooth sinusoidal
//! illumination field and clipped to `[0, 1]`. The label is `n`.

mod dataset;

pub use dataset::{
    generate_dataset, read_dataset, Dataset, DatasetHeader, DatasetReader, HEADER_LEN, MAGIC,
    VERSION,
};

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Illumination {
    /// Range of the sinusoid amplitude `a` in `1 + a·sin(...)`.
    pub amplitude_range: [f64; 2],
    /// Range of the spatial frequency in cycles per image width.
    pub frequency_range: [f64; 2],
}

impl Default for Illumination {
    fn default() -> Self {
        Self {
            amplitude_range: [0.0, 0.5],
            frequency_range: [0.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of the patch count.
    pub count_range: [u8; 2],
    /// Patch side as a fraction of the image width.
    pub patch_size_range: [f64; 2],
    pub patch_brightness_range: [f64; 2],
    pub background: f64,
    pub illumination: Illumination,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            count_range: [0, 10],
            patch_size_range: [0.10, 0.25],
            patch_brightness_range: [0.3, 1.0],
            background: 0.05,
            illumination: Illumination::default(),
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= lo && r[1] <= hi) {
        return Err(Error::config(format!(
            "{name} must be an ordered range within [{lo}, {hi}], got {r:?}"
        )));
    }
    Ok(())
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("scene grid must be non-empty"));
        }
        let [lo, hi] = self.count_range;
        if lo > hi || hi > 10 {
            return Err(Error::config(format!(
                "count range must be ordered within [0, 10], got [{lo}, {hi}]"
            )));
        }
        check_range("patch_size_range", self.patch_size_range, 0.0, 1.0)?;
        if self.patch_size_range[0] <= 0.0 {
            return Err(Error::config("patch size must be positive"));
        }
        check_range(
            "patch_brightness_range",
            self.patch_brightness_range,
            0.0,
            1.0,
        )?;
        check_range("background", [self.background; 2], 0.0, 1.0)?;
        // amplitude below 1 keeps the illumination field strictly positive
        check_range(
            "illumination.amplitude_range",
            self.illumination.amplitude_range,
            0.0,
            0.999,
        )?;
        check_range(
            "illumination.frequency_range",
            self.illumination.frequency_range,
            0.0,
            f64::from(self.width.max(self.height) as u32),
        )?;
        Ok(())
    }

    /// Number of label classes, `max_count + 1`.
    pub fn classes(&self) -> usize {
        self.count_range[1] as usize + 1
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&json).into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// Row-major `H×W` brightness in `[0, 1]`.
    pub image: Vec<f32>,
    pub label: u8,
}

const TAG_COUNT: &str = "scene/count";
const TAG_PATCHES: &str = "scene/patches";
const TAG_ILLUM: &str = "scene/illumination";

fn sample(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Length of `[a, b) ∩ [i, i+1)`.
fn overlap(a: f64, b: f64, i: usize) -> f64 {
    let (lo, hi) = (i as f64, i as f64 + 1.0);
    (b.min(hi) - a.max(lo)).max(0.0)
}

/// Illumination field `1 + a·sin(2π f (x cos φ + y sin φ)/W + ψ)` of one scene.
pub fn illumination_field(seed: u64, index: u64, spec: &SceneSpec) -> Vec<f64> {
    let mut r = rng::stream(seed, TAG_ILLUM, index);
    let a = sample(&mut r, spec.illumination.amplitude_range);
    let f = sample(&mut r, spec.illumination.frequency_range);
    let phi = r.random_range(0.0..2.0 * PI);
    let psi = r.random_range(0.0..2.0 * PI);
    let (c, s) = (phi.cos(), phi.sin());
    let w = spec.width as f64;
    let mut field = Vec::with_capacity(spec.cells());
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (xc, yc) = (x as f64 + 0.5, y as f64 + 0.5);
            field.push(1.0 + a * (2.0 * PI * f * (xc * c + yc * s) / w + psi).sin());
        }
    }
    field
}

/// Deterministic scene `index` of the stream `seed`.
pub fn generate_scene(seed: u64, index: u64, spec: &SceneSpec) -> SceneSample {
    let [lo, hi] = spec.count_range;
    let n = rng::stream(seed, TAG_COUNT, index).random_range(lo..=hi);

    let (h, w) = (spec.height, spec.width);
    let mut img = vec![spec.background; h * w];
    let mut r = rng::stream(seed, TAG_PATCHES, index);
    for _ in 0..n {
        let side = (sample(&mut r, spec.patch_size_range) * w as f64).min(w.min(h) as f64);
        let brightness = sample(&mut r, spec.patch_brightness_range);
        let x0 = r.random_range(0.0..=(w as f64 - side));
        let y0 = r.random_range(0.0..=(h as f64 - side));
        let (x1, y1) = (x0 + side, y0 + side);
        let rows = (y0.floor() as usize)..(y1.ceil() as usize).min(h);
        let cols = (x0.floor() as usize)..(x1.ceil() as usize).min(w);
        for y in rows {
            let cy = overlap(y0, y1, y);
            for x in cols.clone() {
                let cover = cy * overlap(x0, x1, x);
                let p = &mut img[y * w + x];
                *p = cover * brightness + (1.0 - cover) * *p;
            }
        }
    }

    let field = illumination_field(seed, index, spec);
    let image = img
        .iter()
        .zip(&field)
        .map(|(v, l)| (v * l).clamp(0.0, 1.0) as f32)
        .collect();
    SceneSample { image, label: n }
}
