//! Content hashing for stable ids, cache keys, and artifact fingerprints.

use sha2::{Digest, Sha256};

/// SHA-256 of the input, lowercase hex.
pub fn sha_hex(input: impl AsRef<[u8]>) -> String {
    let mut h = Sha256::new();
    h.update(input.as_ref());
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        use std::fmt::Write;
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// First 16 hex chars of [`sha_hex`]; enough id space for corpus-scale sets.
pub fn short_hash(input: impl AsRef<[u8]>) -> String {
    sha_hex(input)[..16].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        // sha256("abc"), a fixed reference value.
        assert_eq!(
            sha_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn short_hash_is_prefix() {
        assert!(sha_hex("xyz").starts_with(&short_hash("xyz")));
        assert_eq!(short_hash("xyz").len(), 16);
    }
}
