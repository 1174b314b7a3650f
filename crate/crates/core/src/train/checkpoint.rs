//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "MCKP" | version u32
//! u64 len | canonical JSON of configs and meta
//! u32 n   | n × (u16 len | name | f64)                 metrics
//! u32 n   | n × (u16 len | name | u32 ndim | ndim × u64 | f64 data)   blobs
//! ```
//!
//! Floats are stored as raw `f64` bits so a save/load round trip is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{validation_noise_seed, Model, Setup, TrainConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::net::{Dense, MlpConfig, Network};
use crate::scene::SceneSpec;
use crate::sensor::{MaskBank, MaskParams, SensorConfig, TransmittanceRange};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Epoch whose end state this is.
    pub epoch: usize,
    pub validation_noise_seed: u64,
    /// Hex SHA-256 over the seeds every stochastic stage derives from.
    pub rng_digest: String,
    pub mask_range: TransmittanceRange,
    pub masks_trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub scene: SceneSpec,
    pub sensor: SensorConfig,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    pub model: Model,
    pub meta: CheckpointMeta,
    pub val_rmse: f64,
    pub val_loss: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    scene: SceneSpec,
    sensor: SensorConfig,
    mlp: MlpConfig,
    train: TrainConfig,
    meta: CheckpointMeta,
}

fn rng_digest(seed: u64, val_seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(val_seed.to_le_bytes());
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl Checkpoint {
    pub fn new(setup: &Setup, model: Model, epoch: usize, val_rmse: f64, val_loss: f64) -> Self {
        let val_seed = validation_noise_seed(setup.train.seed);
        let meta = CheckpointMeta {
            epoch,
            validation_noise_seed: val_seed,
            rng_digest: rng_digest(setup.train.seed, val_seed),
            mask_range: model.masks.range,
            masks_trainable: model.masks.is_trainable(),
        };
        Self {
            scene: setup.scene.clone(),
            sensor: setup.sensor.clone(),
            mlp: model.network.config.clone(),
            train: setup.train.clone(),
            model,
            meta,
            val_rmse,
            val_loss,
        }
    }

    pub fn setup(&self) -> Setup {
        Setup {
            scene: self.scene.clone(),
            sensor: self.sensor.clone(),
            mlp: self.mlp.clone(),
            train: self.train.clone(),
        }
    }

    pub fn pixels(&self) -> usize {
        self.model.masks.pixels
    }

    fn blobs(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        match &self.model.masks.params {
            MaskParams::Logits(t) => out.push(("masks/logits".to_string(), t)),
            MaskParams::Fixed(t) => out.push(("masks/fixed".to_string(), t)),
        }
        for (i, l) in self.model.network.layers.iter().enumerate() {
            out.push((format!("net/{i}/weight"), &l.weight));
            out.push((format!("net/{i}/bias"), &l.bias));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

        let header = Header {
            scene: self.scene.clone(),
            sensor: self.sensor.clone(),
            mlp: self.mlp.clone(),
            train: self.train.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("configs serialize");
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);

        let metrics = [("val_rmse", self.val_rmse), ("val_loss", self.val_loss)];
        buf.extend_from_slice(&(metrics.len() as u32).to_le_bytes());
        for (name, v) in metrics {
            put_name(&mut buf, name);
            buf.extend_from_slice(&v.to_le_bytes());
        }

        let net = &self.model.network;
        let k = self.model.masks.pixels;
        let shift = Tensor::new(vec![k], net.input_shift.clone()).expect("shape");
        let scale = Tensor::new(vec![k], net.input_scale.clone()).expect("shape");
        let active = Tensor::from_fn(vec![k], |j| self.model.active[j] as u8 as f64);
        let mut blobs = self.blobs();
        blobs.push(("net/input_shift".into(), &shift));
        blobs.push(("net/input_scale".into(), &scale));
        blobs.push(("active".into(), &active));
        buf.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
        for (name, t) in blobs {
            put_name(&mut buf, &name);
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let len = r.u64()? as usize;
        let at = r.pos as u64;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::format(at, format!("bad config text: {e}")))?;

        let (mut val_rmse, mut val_loss) = (f64::NAN, f64::NAN);
        for _ in 0..r.u32()? {
            let name = r.name()?;
            let v = r.f64()?;
            match name.as_str() {
                "val_rmse" => val_rmse = v,
                "val_loss" => val_loss = v,
                _ => {}
            }
        }

        let mut blobs = std::collections::BTreeMap::new();
        for _ in 0..r.u32()? {
            let at = r.pos as u64;
            let name = r.name()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if n > r.remaining() / 8 {
                return Err(Error::format(at, format!("blob {name} is truncated")));
            }
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            blobs.insert(name, Tensor::new(shape, data)?);
        }
        if r.remaining() != 0 {
            return Err(Error::format(r.pos as u64, "trailing bytes"));
        }

        let end = bytes.len() as u64;
        let mut blob = |name: &str| {
            blobs
                .remove(name)
                .ok_or_else(|| Error::format(end, format!("missing blob {name}")))
        };
        let (h, w) = (header.scene.height, header.scene.width);
        let range = header.meta.mask_range;
        let masks = if header.meta.masks_trainable {
            MaskBank::from_logits(h, w, range, blob("masks/logits")?)?
        } else {
            let t = blob("masks/fixed")?;
            let (k, _) = t.dims2("fixed masks")?;
            MaskBank {
                pixels: k,
                height: h,
                width: w,
                range,
                params: MaskParams::Fixed(t),
            }
        };
        let depth = header.mlp.hidden.len() + 1;
        let layers = (0..depth)
            .map(|i| {
                Ok(Dense {
                    weight: blob(&format!("net/{i}/weight"))?,
                    bias: blob(&format!("net/{i}/bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let network = Network {
            config: header.mlp.clone(),
            layers,
            input_shift: blob("net/input_shift")?.into_data(),
            input_scale: blob("net/input_scale")?.into_data(),
        };
        network.check_shapes()?;
        let active: Vec<bool> = blob("active")?.data().iter().map(|&v| v != 0.0).collect();
        let mut model = Model::new(masks, network)?;
        if active.len() != model.active.len() {
            return Err(Error::format(
                end,
                "active mask length disagrees with pixel count",
            ));
        }
        model.active = active;

        Ok(Self {
            scene: header.scene,
            sensor: header.sensor,
            mlp: header.mlp,
            train: header.train,
            model,
            meta: header.meta,
            val_rmse,
            val_loss,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // write-then-rename so an interrupted run never leaves a partial file
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Human-readable description for the `inspect` command.
    pub fn summary(&self) -> String {
        let m = &self.model;
        let active = m.active.iter().filter(|&&a| a).count();
        let mut s = String::new();
        let _ = writeln!(s, "format      MCKP v{CHECKPOINT_VERSION}");
        let _ = writeln!(s, "pixels      {} ({active} active)", m.masks.pixels);
        let _ = writeln!(s, "grid        {}x{}", m.masks.height, m.masks.width);
        let kind = if m.masks.is_trainable() {
            "learned"
        } else {
            "fixed"
        };
        let _ = writeln!(
            s,
            "masks       {kind}, range [{}, {}]",
            m.masks.range.lo, m.masks.range.hi
        );
        let _ = writeln!(s, "hidden      {:?}", self.mlp.hidden);
        let _ = writeln!(s, "head        {:?}", self.mlp.head);
        let _ = writeln!(s, "epoch       {}", self.meta.epoch);
        let _ = writeln!(s, "val_rmse    {}", self.val_rmse);
        let _ = writeln!(s, "val_loss    {}", self.val_loss);
        let _ = writeln!(s, "seed        {}", self.train.seed);
        let _ = writeln!(s, "rng_digest  {}", self.meta.rng_digest);
        s
    }
}

fn put_name(buf: &mut Vec<u8>, name: &str) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::format(self.pos as u64, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    fn name(&mut self) -> Result<String> {
        let at = self.pos as u64;
        let len = u16::from_le_bytes(self.array()?) as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::format(at, "blob name is not UTF-8"))
    }
}
