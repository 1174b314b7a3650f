use crate::autodiff::Tensor;

use super::config::SensorConfig;

/// Angular response `d(x,y) = cos^k θ` sampled on the mask grid.
///
/// Grid nodes span the mask edge to edge, so the corner cells sit on the
/// mask corners and an odd grid has a cell exactly on the optical axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VignetteMap {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl VignetteMap {
    pub fn new(height: usize, width: usize, mask_size_mm: f64, standoff_mm: f64, k: f64) -> Self {
        let pitch = |n: usize| {
            if n > 1 {
                mask_size_mm / (n - 1) as f64
            } else {
                0.0
            }
        };
        let (py, px) = (pitch(height), pitch(width));
        let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
        let mut weights = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                let y = (i as f64 - cy) * py;
                let x = (j as f64 - cx) * px;
                let theta = (x.hypot(y) / standoff_mm).atan();
                weights.push(if k == 0.0 { 1.0 } else { theta.cos().powf(k) });
            }
        }
        Self {
            height,
            width,
            weights,
        }
    }

    pub fn for_config(cfg: &SensorConfig, height: usize, width: usize) -> Self {
        Self::new(
            height,
            width,
            cfg.geometry.mask_size_mm,
            cfg.geometry.standoff_mm,
            cfg.vignette_exponent,
        )
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.width + col]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Normalized box blur of (possibly fractional) width.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    pub width_cells: f64,
    pub kernel: Tensor,
}

/// Builds a separable box kernel of width `w ≥ 1` cells. The support is
/// the smallest odd size `r ≥ w`; the two outermost taps carry the
/// fractional remainder so the 1-D profile integrates to exactly `w`
/// before normalization.
pub fn blur_kernel(width_cells: f64) -> BlurKernel {
    let w = width_cells.max(1.0);
    let half = ((w - 1.0) / 2.0).ceil() as usize;
    let r = 2 * half + 1;
    let mut taps = vec![1.0; r];
    if r > 1 {
        let edge = (w - (r - 2) as f64) / 2.0;
        taps[0] = edge;
        taps[r - 1] = edge;
    }
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let kernel = Tensor::from_fn(vec![r, r], |i| taps[i / r] * taps[i % r]);
    BlurKernel {
        width_cells: w,
        kernel,
    }
}

impl SensorConfig {
    /// Blur width in cells for a mask sampled on `width` columns.
    pub fn blur_width_cells(&self, width: usize) -> f64 {
        match self.geometry.active_area_mm {
            Some(active) => active / (self.geometry.mask_size_mm / width as f64),
            None => self.blur_width,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vignette_disabled_is_all_ones() {
        let v = VignetteMap::new(8, 8, 16.0, 11.4, 0.0);
        assert!(v.weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn vignette_center_and_corner() {
        let v = VignetteMap::new(9, 9, 16.0, 11.4, 3.0);
        assert_eq!(v.get(4, 4), 1.0);
        let v = VignetteMap::new(32, 32, 16.0, 11.4, 1.0);
        let expect = (8.0 * 2f64.sqrt() / 11.4).atan().cos();
        assert!((v.get(0, 0) - expect).abs() < 1e-12);
        assert!((v.get(31, 31) - 0.710).abs() < 1e-3);
    }

    #[test]
    fn vignette_non_increasing_with_radius() {
        let v = VignetteMap::new(15, 15, 16.0, 11.4, 4.0);
        let mut by_r: Vec<(f64, f64)> = (0..15)
            .flat_map(|i| (0..15).map(move |j| (i, j)))
            .map(|(i, j)| {
                let r = ((i as f64 - 7.0).powi(2) + (j as f64 - 7.0).powi(2)).sqrt();
                (r, v.get(i, j))
            })
            .collect();
        by_r.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for pair in by_r.windows(2) {
            assert!(pair[1].1 <= pair[0].1 + 1e-15);
        }
        assert!(v.weights().iter().all(|&w| (0.0..=1.0).contains(&w)));
    }

    #[test]
    fn blur_kernels_are_normalized() {
        for w in [1.0, 1.76, 2.0, 3.0, 4.5] {
            let k = blur_kernel(w);
            let (r, c) = k.kernel.dims2("k").unwrap();
            assert_eq!(r, c);
            assert_eq!(r % 2, 1);
            let s: f64 = k.kernel.data().iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "w={w} sum={s}");
            assert!(k.kernel.data().iter().all(|&v| v >= 0.0));
        }
        assert_eq!(blur_kernel(1.0).kernel.shape(), &[1, 1]);
        assert_eq!(blur_kernel(3.0).kernel.data(), &[1.0 / 9.0; 9]);
    }

    #[test]
    fn hardware_blur_width_from_active_area() {
        let cfg = SensorConfig::hardware();
        assert!((cfg.blur_width_cells(32) - 1.76).abs() < 1e-12);
    }
}
