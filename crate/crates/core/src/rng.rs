//! Named, counter-based random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(seed, tag, index)`. The tag separates purposes (scene layout, mask
//! init, training noise, ...) and the index selects a sample, so any sample
//! can be regenerated alone without replaying the ones before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub mod tags {
    pub const DATA_TRAIN: &str = "data/train";
    pub const DATA_VAL: &str = "data/val";
    pub const DATA_TEST: &str = "data/test";
    pub const MASK_INIT: &str = "mask-init";
    pub const NET_INIT: &str = "net-init";
    pub const TRAIN_NOISE: &str = "train-noise";
    pub const EVAL_NOISE: &str = "eval-noise";
    pub const VAL_NOISE: &str = "val-noise";
    pub const SHUFFLE: &str = "shuffle";
}

/// Derives a child seed from a parent seed and a tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Independent stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag));
    rng.set_stream(index);
    rng
}
