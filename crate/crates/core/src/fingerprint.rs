//! Content fingerprints used to tie stage artifacts together.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Incremental SHA-256 fingerprint builder.
#[derive(Default, Clone)]
pub struct Fingerprinter {
    hasher: Sha256,
}

impl Fingerprinter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds a length-prefixed byte string so that field boundaries cannot alias.
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.hasher.update(v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, values: &[f64]) -> &mut Self {
        self.u64(values.len() as u64);
        for v in values {
            self.hasher.update(v.to_bits().to_le_bytes());
        }
        self
    }

    /// Feeds the compact JSON form of a value.
    pub fn json<T: Serialize + ?Sized>(&mut self, value: &T) -> &mut Self {
        let s = serde_json::to_string(value).expect("fingerprinted values serialize");
        self.str(&s)
    }

    pub fn finish(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

/// SHA-256 of raw bytes, hex encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fingerprint of a serializable value's compact JSON form.
pub fn of_json<T: Serialize + ?Sized>(value: &T) -> String {
    Fingerprinter::new().json(value).finish()
}
