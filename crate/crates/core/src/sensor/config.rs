use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean brightness of a scene drawn from the default generator.
pub const TYPICAL_SCENE_MEAN: f64 = 0.135;

/// Gain at which a typical scene seen through a fully open mask
/// (transmittance `t_open`) reaches `fill * p_max`.
pub fn fill_gain(p_max: f64, t_open: f64, fill: f64) -> f64 {
    fill * p_max / (TYPICAL_SCENE_MEAN * t_open)
}

/// Fabricable transmittance interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmittanceRange {
    pub lo: f64,
    pub hi: f64,
}

impl TransmittanceRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let r = Self { lo, hi };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::config(format!(
                "transmittance range needs lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    /// `lo + (hi - lo) * sigmoid(logit)`.
    pub fn from_logit(&self, logit: f64) -> f64 {
        let s = if logit >= 0.0 {
            1.0 / (1.0 + (-logit).exp())
        } else {
            let e = logit.exp();
            e / (1.0 + e)
        };
        self.lo + self.span() * s
    }

    /// Inverse of [`Self::from_logit`] for `lo < t < hi`.
    pub fn to_logit(&self, t: f64) -> f64 {
        let q = (t - self.lo) / self.span();
        (q / (1.0 - q)).ln()
    }
}

/// Physical layout of one freeform pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    /// Side length of the square mask.
    pub mask_size_mm: f64,
    /// Distance between the mask plane and the detector.
    pub standoff_mm: f64,
    /// Side length of the detector's active area. When set, the blur
    /// width is derived from it instead of [`SensorConfig::blur_width`].
    #[serde(default)]
    pub active_area_mm: Option<f64>,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            mask_size_mm: 16.0,
            standoff_mm: 11.4,
            active_area_mm: None,
        }
    }
}

/// Every constant of the sensor model. Voltages are in volts; light is in
/// normalized units where an all-ones scene behind an all-ones mask
/// delivers 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    /// Volts per normalized light unit.
    pub gain: f64,
    /// Read-noise standard deviation (V).
    pub read_noise_std: f64,
    pub adc_bits: u32,
    /// Saturation level (V).
    pub p_max: f64,
    /// Slope of the response above `p_max`.
    pub leak_slope: f64,
    /// Active-area blur width in mask cells, used when the geometry has no
    /// active area.
    pub blur_width: f64,
    /// Exponent `k` of the `cos^k θ` angular response; 0 disables it.
    pub vignette_exponent: f64,
    pub mask_range: TransmittanceRange,
    pub geometry: Geometry,
    pub noise_enabled: bool,
    pub clip_enabled: bool,
}

impl SensorConfig {
    /// Parameters of the reference hardware: 400 µV read noise, a 16-bit
    /// converter saturating at 3.2 V, masks printable in `[0.01, 0.67]` and a
    /// 0.88 mm photodiode 11.4 mm behind a 16 mm mask. The gain puts a
    /// typical scene through a fully open mask at half of `p_max`.
    pub fn hardware() -> Self {
        Self {
            gain: fill_gain(3.2, 0.67, 0.5),
            read_noise_std: 400e-6,
            adc_bits: 16,
            p_max: 3.2,
            leak_slope: 0.01,
            blur_width: 3.0,
            vignette_exponent: 4.0,
            mask_range: TransmittanceRange { lo: 0.01, hi: 0.67 },
            geometry: Geometry {
                active_area_mm: Some(0.88),
                ..Geometry::default()
            },
            noise_enabled: true,
            clip_enabled: true,
        }
    }

    /// A generic photodetector: same converter and noise as
    /// [`Self::hardware`], nearly unconstrained masks and the same
    /// half-range gain convention.
    pub fn photodetector() -> Self {
        let range = TransmittanceRange {
            lo: 1e-3,
            hi: 0.999,
        };
        Self {
            gain: fill_gain(3.2, range.hi, 0.5),
            mask_range: range,
            blur_width: 3.0,
            geometry: Geometry::default(),
            ..Self::hardware()
        }
    }

    /// Noise-free, unsaturated, optics-free projection with unit gain.
    pub fn ideal(mask_range: TransmittanceRange) -> Self {
        Self {
            gain: 1.0,
            read_noise_std: 0.0,
            blur_width: 1.0,
            vignette_exponent: 0.0,
            mask_range,
            geometry: Geometry::default(),
            noise_enabled: false,
            clip_enabled: false,
            ..Self::hardware()
        }
    }

    /// Looks up a named preset.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "hardware" => Some(Self::hardware()),
            "photodetector" => Some(Self::photodetector()),
            _ => None,
        }
    }

    /// Brightness of one converter step.
    pub fn p_lsb(&self) -> f64 {
        self.p_max / ((1u64 << self.adc_bits) - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.mask_range.validate()?;
        let r = self.mask_range;
        if !(0.0 < r.lo && r.hi <= 1.0) {
            return Err(Error::config(format!(
                "mask range must satisfy 0 < lo < hi <= 1, got [{}, {}]",
                r.lo, r.hi
            )));
        }
        if !(self.leak_slope > 0.0 && self.leak_slope <= 0.2) {
            return Err(Error::config(format!(
                "leak slope must be in (0, 0.2], got {}",
                self.leak_slope
            )));
        }
        if !(self.read_noise_std >= 0.0) {
            return Err(Error::config("read noise std must be non-negative"));
        }
        if !(self.p_max > 0.0) {
            return Err(Error::config("p_max must be positive"));
        }
        if !(1..=24).contains(&self.adc_bits) {
            return Err(Error::config(format!(
                "adc bits must be in [1, 24], got {}",
                self.adc_bits
            )));
        }
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(Error::config("gain must be positive"));
        }
        if !(self.blur_width >= 1.0) {
            return Err(Error::config("blur width must be at least one cell"));
        }
        if !(self.vignette_exponent >= 0.0) {
            return Err(Error::config("vignette exponent must be non-negative"));
        }
        let g = &self.geometry;
        if !(g.mask_size_mm > 0.0 && g.standoff_mm > 0.0) {
            return Err(Error::config("mask size and standoff must be positive"));
        }
        if let Some(a) = g.active_area_mm {
            if !(a > 0.0) {
                return Err(Error::config("active area must be positive"));
            }
        }
        Ok(())
    }
}
