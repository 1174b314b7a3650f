use rand_distr::{Distribution, Normal, Uniform};

use super::config::SensorConfig;
use super::mask::BoundMasks;
use super::optics::{blur_kernel, BlurKernel, VignetteMap};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

/// Which parts of the sensor model a forward pass applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorMode {
    /// Blur, angular response, gain, noise and saturation as configured.
    Full,
    /// Only the mask-weighted integral of the scene.
    ProjectionOnly,
}

/// Precomputed optics for one sensor configuration and grid.
#[derive(Debug, Clone)]
pub struct Camera {
    cfg: SensorConfig,
    height: usize,
    width: usize,
    blur: BlurKernel,
    vignette: VignetteMap,
    /// `d(x,y)·ΔA` per cell.
    cell_weights: Vec<f64>,
}

impl Camera {
    pub fn new(cfg: &SensorConfig, height: usize, width: usize) -> Result<Self> {
        cfg.validate()?;
        if height == 0 || width == 0 {
            return Err(Error::config("grid must be non-empty"));
        }
        let vignette = VignetteMap::for_config(cfg, height, width);
        let area = 1.0 / (height * width) as f64;
        let cell_weights = vignette.weights().iter().map(|d| d * area).collect();
        Ok(Self {
            cfg: cfg.clone(),
            height,
            width,
            blur: blur_kernel(cfg.blur_width_cells(width)),
            vignette,
            cell_weights,
        })
    }

    pub fn config(&self) -> &SensorConfig {
        &self.cfg
    }

    pub fn vignette(&self) -> &VignetteMap {
        &self.vignette
    }

    pub fn blur(&self) -> &BlurKernel {
        &self.blur
    }

    pub fn cell_area(&self) -> f64 {
        1.0 / (self.height * self.width) as f64
    }

    /// Measurements `[batch, K]` for scenes `[batch, H, W]` seen through
    /// masks `[K, H·W]`. `noise`, when given, is added after the gain and is
    /// a constant for differentiation.
    pub fn forward(
        &self,
        g: &mut Graph,
        scenes: Var,
        masks: Var,
        mode: SensorMode,
        noise: Option<&Tensor>,
    ) -> Result<Var> {
        let shape = g.value(scenes).shape().to_vec();
        let batch = match shape.as_slice() {
            &[b, h, w] if h == self.height && w == self.width => b,
            _ => {
                return Err(Error::Dimension {
                    op: "pixel_forward scenes",
                    lhs: shape,
                    rhs: vec![self.height, self.width],
                })
            }
        };
        let (k, cells) = g.value(masks).dims2("pixel_forward masks")?;
        if cells != self.height * self.width {
            return Err(Error::Dimension {
                op: "pixel_forward masks",
                lhs: vec![k, cells],
                rhs: vec![self.height, self.width],
            });
        }

        let cells_total = self.height * self.width;
        match mode {
            SensorMode::ProjectionOnly => {
                let flat = g.reshape(scenes, vec![batch, cells_total])?;
                let weights = g.scale(masks, self.cell_area());
                let wt = g.transpose(weights)?;
                g.matmul(flat, wt)
            }
            SensorMode::Full => {
                let blurred = if self.blur.kernel.len() == 1 {
                    scenes
                } else {
                    g.conv2d_fixed(scenes, &self.blur.kernel)?
                };
                let flat = g.reshape(blurred, vec![batch, cells_total])?;
                let optics = g.constant(Tensor::from_fn(vec![k, cells_total], |i| {
                    self.cell_weights[i % cells_total]
                }));
                let weights = g.mul(masks, optics)?;
                let wt = g.transpose(weights)?;
                let energy = g.matmul(flat, wt)?;
                let mut out = g.scale(energy, self.cfg.gain);
                if self.cfg.noise_enabled {
                    if let Some(n) = noise {
                        let n = g.constant(n.clone());
                        out = g.add(out, n)?;
                    }
                }
                if self.cfg.clip_enabled {
                    out = g.leaky_clip(out, self.cfg.p_max, self.cfg.leak_slope);
                }
                Ok(out)
            }
        }
    }
}

/// Runs bound masks through the camera. See [`Camera::forward`].
pub fn pixel_forward(
    g: &mut Graph,
    scenes: Var,
    masks: &BoundMasks,
    camera: &Camera,
    mode: SensorMode,
    noise: Option<&Tensor>,
) -> Result<Var> {
    camera.forward(g, scenes, masks.transmittance, mode, noise)
}

/// Read plus quantization noise `[keys.len(), pixels]`. Row `i` comes from
/// the stream `(seed, tag, keys[i])`, so it does not depend on batching.
pub fn sample_noise(
    cfg: &SensorConfig,
    pixels: usize,
    seed: u64,
    tag: &str,
    keys: &[u64],
) -> Tensor {
    let normal = Normal::new(0.0, cfg.read_noise_std).expect("validated std");
    let lsb = cfg.p_lsb();
    let uniform = Uniform::new(0.0, lsb).expect("positive lsb");
    let mut data = Vec::with_capacity(keys.len() * pixels);
    for &key in keys {
        let mut r = rng::stream(seed, tag, key);
        for _ in 0..pixels {
            let read = normal.sample(&mut r);
            let quant = uniform.sample(&mut r);
            data.push(read + quant);
        }
    }
    Tensor::new(vec![keys.len(), pixels], data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{box_mask_bank, MaskBank, TransmittanceRange};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const RANGE: TransmittanceRange = TransmittanceRange { lo: 0.01, hi: 0.67 };

    fn scenes(g: &mut Graph, data: Tensor) -> Var {
        g.constant(data)
    }

    fn run(camera: &Camera, bank: &MaskBank, images: Tensor) -> Tensor {
        let mut g = Graph::new();
        let s = scenes(&mut g, images);
        let m = bank.bind(&mut g, false);
        let out = pixel_forward(&mut g, s, &m, camera, SensorMode::Full, None).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn all_ones_scene_through_open_mask_reads_t_hi() {
        let cfg = SensorConfig::ideal(RANGE);
        let camera = Camera::new(&cfg, 8, 8).unwrap();
        let bank = MaskBank::from_logits(8, 8, RANGE, Tensor::full([1, 64], 60.0)).unwrap();
        let out = run(&camera, &bank, Tensor::ones([1, 8, 8]));
        assert!((out.item() - 0.67).abs() < 1e-12);
    }

    #[test]
    fn dark_scene_reads_zero() {
        let cfg = SensorConfig::ideal(RANGE);
        let camera = Camera::new(&cfg, 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Tensor::from_fn([3, 64], |_| rng.random_range(-3.0..3.0));
        let bank = MaskBank::from_logits(8, 8, RANGE, logits).unwrap();
        let out = run(&camera, &bank, Tensor::zeros([2, 8, 8]));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_scene_doubles_reading() {
        let mut cfg = SensorConfig::hardware();
        cfg.noise_enabled = false;
        cfg.clip_enabled = false;
        let camera = Camera::new(&cfg, 16, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = Tensor::from_fn([3, 256], |_| rng.random_range(-3.0..3.0));
        let bank = MaskBank::from_logits(16, 16, cfg.mask_range, logits).unwrap();
        let img = Tensor::from_fn([2, 16, 16], |_| rng.random_range(0.0..1.0));
        let a = run(&camera, &bank, img.clone());
        let b = run(&camera, &bank, img.map(|v| 2.0 * v));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn resolution_mismatch_is_dimension_error() {
        let cfg = SensorConfig::ideal(RANGE);
        let camera = Camera::new(&cfg, 8, 8).unwrap();
        let bank = box_mask_bank(2, 8, 8, RANGE).unwrap();
        let mut g = Graph::new();
        let s = g.constant(Tensor::zeros([1, 4, 4]));
        let m = bank.bind(&mut g, false);
        assert!(matches!(
            pixel_forward(&mut g, s, &m, &camera, SensorMode::Full, None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn noise_rows_depend_only_on_key() {
        let cfg = SensorConfig::hardware();
        let a = sample_noise(&cfg, 4, 1, "t", &[5, 6, 7]);
        let b = sample_noise(&cfg, 4, 1, "t", &[7]);
        assert_eq!(&a.data()[8..12], b.data());
    }

    #[test]
    fn saturation_and_noise_apply_in_full_mode() {
        let mut cfg = SensorConfig::ideal(RANGE);
        cfg.clip_enabled = true;
        cfg.noise_enabled = true;
        cfg.p_max = 0.3;
        cfg.leak_slope = 0.01;
        let camera = Camera::new(&cfg, 4, 4).unwrap();
        let bank = MaskBank::from_logits(4, 4, RANGE, Tensor::full([1, 16], 60.0)).unwrap();
        let mut g = Graph::new();
        let s = g.constant(Tensor::ones([1, 4, 4]));
        let m = bank.bind(&mut g, false);
        let noise = Tensor::new([1, 1], vec![0.1]).unwrap();
        let out = pixel_forward(&mut g, s, &m, &camera, SensorMode::Full, Some(&noise)).unwrap();
        let expect = 0.01 * (0.67 + 0.1 - 0.3) + 0.3;
        assert!((g.value(out).item() - expect).abs() < 1e-12);
        let proj = pixel_forward(
            &mut g,
            s,
            &m,
            &camera,
            SensorMode::ProjectionOnly,
            Some(&noise),
        )
        .unwrap();
        assert!((g.value(proj).item() - 0.67).abs() < 1e-12);
    }
}
