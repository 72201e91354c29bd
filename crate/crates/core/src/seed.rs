//! Named sub-streams derived from one root seed.

use sha2::{Digest, Sha256};

pub const SPLIT_STREAM: &str = "split";
pub const INIT_STREAM: &str = "init";
pub const BATCHING_STREAM: &str = "batching";

/// Derive an independent 64-bit seed for `stream` from `root`.
pub fn derive_seed(root: u64, stream: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(root.to_le_bytes())
        .chain_update(stream.as_bytes())
        .finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
