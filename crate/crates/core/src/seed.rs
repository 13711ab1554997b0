//! Deterministic sub-seed derivation.
//!
//! One user-facing seed drives backend weights, vocabulary, projection, data
//! generation and batch order. Each consumer derives its own stream with a
//! distinct tag so adding a consumer never shifts the others.

use sha2::{Digest, Sha256};

/// Derives a sub-seed from `(base, tag)` via SHA-256.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Formats a byte digest as lowercase hex.
pub fn hex_digest(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SHA-256 of a byte slice as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex_digest(&Sha256::digest(bytes))
}
