//! Freeform-pixel camera layer.
//!
//! A freeform pixel is a photodetector behind a mask with transmittance
//! `M(x,y)`. Its ideal reading is the mask-weighted integral of the scene;
//! the full model adds active-area blur, angular falloff, gain, read and
//! quantization noise, and leaky saturation.

mod camera;
mod config;
mod mask;
mod optics;

pub use camera::{pixel_forward, sample_noise, Camera, SensorMode};
pub use config::{fill_gain, Geometry, SensorConfig, TransmittanceRange, TYPICAL_SCENE_MEAN};
pub use mask::{box_mask_bank, export_masks, BoundMasks, MaskBank, MaskParams};
pub use optics::{blur_kernel, BlurKernel, VignetteMap};
