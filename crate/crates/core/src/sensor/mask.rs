use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::config::TransmittanceRange;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// How a bank's transmittances are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskParams {
    /// Unconstrained logits `M_t`, mapped through the range-scaled sigmoid.
    Logits(Tensor),
    /// Transmittances used as-is and never trained (baseline cameras).
    Fixed(Tensor),
}

/// Masks of `K` freeform pixels on an `H×W` grid, stored as a `K×(H·W)`
/// matrix with one flattened mask per row.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskBank {
    pub pixels: usize,
    pub height: usize,
    pub width: usize,
    pub range: TransmittanceRange,
    pub params: MaskParams,
}

/// Graph handles for a bank bound into one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BoundMasks {
    /// `K×(H·W)` transmittances.
    pub transmittance: Var,
    /// The trainable logits, when the bank has them and training is on.
    pub logits: Option<Var>,
}

impl MaskBank {
    pub fn from_logits(
        height: usize,
        width: usize,
        range: TransmittanceRange,
        logits: Tensor,
    ) -> Result<Self> {
        range.validate()?;
        let (k, cells) = logits.dims2("mask logits")?;
        if cells != height * width || k == 0 {
            return Err(Error::Dimension {
                op: "mask bank",
                lhs: logits.shape().to_vec(),
                rhs: vec![height, width],
            });
        }
        Ok(Self {
            pixels: k,
            height,
            width,
            range,
            params: MaskParams::Logits(logits),
        })
    }

    /// Draws every cell's transmittance from `U(init.lo, init.hi)` and
    /// stores the exact logit that reproduces it.
    pub fn random_init(
        pixels: usize,
        height: usize,
        width: usize,
        range: TransmittanceRange,
        init: TransmittanceRange,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        init.validate()?;
        if !(range.lo < init.lo && init.hi < range.hi) {
            return Err(Error::config(format!(
                "mask init range [{}, {}] must lie strictly inside [{}, {}]",
                init.lo, init.hi, range.lo, range.hi
            )));
        }
        if pixels == 0 {
            return Err(Error::config("a mask bank needs at least one pixel"));
        }
        let logits = Tensor::from_fn(vec![pixels, height * width], |_| {
            range.to_logit(rng.random_range(init.lo..init.hi))
        });
        Self::from_logits(height, width, range, logits)
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self.params, MaskParams::Logits(_))
    }

    pub fn logits(&self) -> Option<&Tensor> {
        match &self.params {
            MaskParams::Logits(t) => Some(t),
            MaskParams::Fixed(_) => None,
        }
    }

    pub fn logits_mut(&mut self) -> Option<&mut Tensor> {
        match &mut self.params {
            MaskParams::Logits(t) => Some(t),
            MaskParams::Fixed(_) => None,
        }
    }

    /// Derived `K×(H·W)` transmittances.
    pub fn transmittance(&self) -> Tensor {
        match &self.params {
            MaskParams::Logits(t) => t.map(|l| self.range.from_logit(l)),
            MaskParams::Fixed(t) => t.clone(),
        }
    }

    /// Adds the bank to `g`. Logits become a trainable leaf when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMasks {
        match &self.params {
            MaskParams::Logits(t) => {
                let logits = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                let s = g.sigmoid(logits);
                let scaled = g.scale(s, self.range.span());
                let transmittance = g.add_scalar(scaled, self.range.lo);
                BoundMasks {
                    transmittance,
                    logits: trainable.then_some(logits),
                }
            }
            MaskParams::Fixed(t) => BoundMasks {
                transmittance: g.constant(t.clone()),
                logits: None,
            },
        }
    }
}

/// Box masks of a traditional `R×R` camera: pixel `(i,j)` passes `t_hi` over
/// its `(H/R)×(W/R)` block and nothing elsewhere.
pub fn box_mask_bank(
    resolution: usize,
    height: usize,
    width: usize,
    range: TransmittanceRange,
) -> Result<MaskBank> {
    range.validate()?;
    if resolution == 0 || !height.is_multiple_of(resolution) || !width.is_multiple_of(resolution) {
        return Err(Error::config(format!(
            "baseline resolution {resolution} must divide the {height}x{width} grid"
        )));
    }
    let (bh, bw) = (height / resolution, width / resolution);
    let k = resolution * resolution;
    let cells = height * width;
    let t = Tensor::from_fn(vec![k, cells], |idx| {
        let (pixel, cell) = (idx / cells, idx % cells);
        let (bi, bj) = (pixel / resolution, pixel % resolution);
        let (y, x) = (cell / width, cell % width);
        if y / bh == bi && x / bw == bj {
            range.hi
        } else {
            0.0
        }
    });
    Ok(MaskBank {
        pixels: k,
        height,
        width,
        range,
        params: MaskParams::Fixed(t),
    })
}

/// Writes one 8-bit binary PGM per pixel plus `manifest.txt` into `dir`.
///
/// Gray levels are `round(255·(M − lo)/(hi − lo))`, clamped to `[0, 255]`.
pub fn export_masks(
    bank: &MaskBank,
    dir: &Path,
    experiment_id: &str,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let t = bank.transmittance();
    let cells = bank.cells();
    let mut written = Vec::with_capacity(bank.pixels + 1);
    for j in 0..bank.pixels {
        let path = dir.join(format!("pixel_{j:03}.pgm"));
        let mut bytes = format!("P5\n{} {}\n255\n", bank.width, bank.height).into_bytes();
        bytes.extend(t.data()[j * cells..(j + 1) * cells].iter().map(|&m| {
            (255.0 * (m - bank.range.lo) / bank.range.span())
                .round()
                .clamp(0.0, 255.0) as u8
        }));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    let mut manifest = String::new();
    let _ = writeln!(manifest, "pixels {}", bank.pixels);
    let _ = writeln!(manifest, "grid {} {}", bank.height, bank.width);
    let _ = writeln!(manifest, "range {} {}", bank.range.lo, bank.range.hi);
    let _ = writeln!(
        manifest,
        "kind {}",
        if bank.is_trainable() {
            "learned"
        } else {
            "fixed"
        }
    );
    let _ = writeln!(manifest, "experiment {experiment_id}");
    let _ = writeln!(manifest, "seed {seed}");
    for p in &written {
        let _ = writeln!(
            manifest,
            "file {}",
            p.file_name().unwrap_or_default().to_string_lossy()
        );
    }
    let path = dir.join("manifest.txt");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(manifest.as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
