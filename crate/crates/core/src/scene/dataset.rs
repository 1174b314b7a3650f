//! Scene dataset container.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                         |
//! |-------:|-----:|-------------------------------|
//! |      0 |    4 | magic `MSYN`                  |
//! |      4 |    4 | version (`u32`, currently 1)  |
//! |      8 |    4 | height `H` (`u32`)            |
//! |     12 |    4 | width `W` (`u32`)             |
//! |     16 |    8 | record count `n` (`u64`)      |
//! |     24 |    8 | generator seed (`u64`)        |
//! |     32 |   32 | SHA-256 of the scene spec     |
//! |     64 |    … | `n` records                   |
//!
//! Each record is one label byte followed by `H·W` `f32` pixels in
//! row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{generate_scene, SceneSample, SceneSpec};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MSYN";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 64;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub height: usize,
    pub width: usize,
    pub count: u64,
    pub seed: u64,
    pub spec_digest: [u8; 32],
}

impl DatasetHeader {
    pub fn record_len(&self) -> u64 {
        1 + 4 * (self.height * self.width) as u64
    }

    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..8].copy_from_slice(&VERSION.to_le_bytes());
        b[8..12].copy_from_slice(&(self.height as u32).to_le_bytes());
        b[12..16].copy_from_slice(&(self.width as u32).to_le_bytes());
        b[16..24].copy_from_slice(&self.count.to_le_bytes());
        b[24..32].copy_from_slice(&self.seed.to_le_bytes());
        b[32..64].copy_from_slice(&self.spec_digest);
        b
    }

    fn decode(b: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        if b[0..4] != MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}", &b[0..4])));
        }
        let version = u32::from_le_bytes(b[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let height = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(b[12..16].try_into().unwrap()) as usize;
        if height == 0 || width == 0 {
            return Err(Error::format(8, "empty image grid"));
        }
        Ok(Self {
            height,
            width,
            count: u64::from_le_bytes(b[16..24].try_into().unwrap()),
            seed: u64::from_le_bytes(b[24..32].try_into().unwrap()),
            spec_digest: b[32..64].try_into().unwrap(),
        })
    }
}

/// Streams scenes `0..n` of `seed` into `path`. Memory use is bounded by
/// one chunk of scenes regardless of `n`.
pub fn generate_dataset(path: &Path, seed: u64, n: u64, spec: &SceneSpec) -> Result<DatasetHeader> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::config("a dataset needs at least one scene"));
    }
    let header = DatasetHeader {
        height: spec.height,
        width: spec.width,
        count: n,
        seed,
        spec_digest: spec.digest(),
    };
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    out.write_all(&header.encode()).map_err(io)?;
    let mut start = 0u64;
    while start < n {
        let end = (start + CHUNK as u64).min(n);
        let chunk: Vec<SceneSample> = (start..end)
            .into_par_iter()
            .map(|i| generate_scene(seed, i, spec))
            .collect();
        for s in &chunk {
            write_record(&mut out, s).map_err(io)?;
        }
        start = end;
    }
    out.flush().map_err(io)?;
    Ok(header)
}

fn write_record(out: &mut impl Write, s: &SceneSample) -> std::io::Result<()> {
    out.write_all(&[s.label])?;
    let mut buf = Vec::with_capacity(4 * s.image.len());
    for v in &s.image {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

/// Sequential reader over a dataset file.
pub struct DatasetReader {
    path: PathBuf,
    inner: BufReader<File>,
    header: DatasetHeader,
    next: u64,
    buf: Vec<u8>,
}

impl std::fmt::Debug for DatasetReader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DatasetReader")
            .field("path", &self.path)
            .field("header", &self.header)
            .field("next", &self.next)
            .finish()
    }
}

/// Opens `path`, checks the header and that the file length matches the
/// record count.
pub fn read_dataset(path: &Path) -> Result<DatasetReader> {
    let io = |e| Error::io(path, e);
    let file = File::open(path).map_err(io)?;
    let len = file.metadata().map_err(io)?.len();
    if len < HEADER_LEN {
        return Err(Error::format(
            len,
            format!("file is {len} bytes, shorter than the {HEADER_LEN}-byte header"),
        ));
    }
    let mut inner = BufReader::new(file);
    let mut hb = [0u8; HEADER_LEN as usize];
    inner.read_exact(&mut hb).map_err(io)?;
    let header = DatasetHeader::decode(&hb)?;
    let expected = header
        .count
        .checked_mul(header.record_len())
        .and_then(|b| b.checked_add(HEADER_LEN));
    if expected != Some(len) {
        return Err(Error::format(
            16,
            format!(
                "record count {} implies {} bytes but the file has {len}",
                header.count,
                expected.map_or_else(|| "an overflowing number of".into(), |e| e.to_string())
            ),
        ));
    }
    let buf = vec![0u8; header.record_len() as usize];
    Ok(DatasetReader {
        path: path.to_path_buf(),
        inner,
        header,
        next: 0,
        buf,
    })
}

impl DatasetReader {
    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }
}

impl Iterator for DatasetReader {
    type Item = Result<SceneSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.header.count {
            return None;
        }
        let offset = HEADER_LEN + self.next * self.header.record_len();
        self.next += 1;
        if let Err(e) = self.inner.read_exact(&mut self.buf) {
            self.next = self.header.count;
            return Some(Err(match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::format(offset, "truncated record"),
                _ => Error::io(&self.path, e),
            }));
        }
        let image = self.buf[1..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Some(Ok(SceneSample {
            image,
            label: self.buf[0],
        }))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.header.count - self.next) as usize;
        (left, Some(left))
    }
}

/// A whole split held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    /// `len·H·W` pixels, one scene after another.
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn generate(seed: u64, n: usize, spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let samples: Vec<SceneSample> = (0..n as u64)
            .into_par_iter()
            .map(|i| generate_scene(seed, i, spec))
            .collect();
        Ok(Self::from_samples(spec.height, spec.width, samples))
    }

    pub fn from_samples(
        height: usize,
        width: usize,
        samples: impl IntoIterator<Item = SceneSample>,
    ) -> Self {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for s in samples {
            debug_assert_eq!(s.image.len(), height * width);
            images.extend_from_slice(&s.image);
            labels.push(s.label);
        }
        Self {
            height,
            width,
            images,
            labels,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = read_dataset(path)?;
        let (h, w) = (reader.header().height, reader.header().width);
        let samples = reader.collect::<Result<Vec<_>>>()?;
        Ok(Self::from_samples(h, w, samples))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let c = self.cells();
        &self.images[i * c..(i + 1) * c]
    }

    /// The first `n` scenes.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            height: self.height,
            width: self.width,
            images: self.images[..n * self.cells()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}
