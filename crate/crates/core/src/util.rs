//! Small shared helpers: checksums and deterministic seed derivation.

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Incremental FNV-1a, for hashing streams without buffering.
#[derive(Debug, Clone)]
pub struct Fnv1a64(u64);

impl Fnv1a64 {
    pub fn new() -> Self {
        Fnv1a64(0xcbf2_9ce4_8422_2325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self::new()
    }
}

/// Derive a child seed from a master seed and a label.
///
/// Used everywhere a component needs its own deterministic RNG stream that
/// must not depend on call order (speakers, recordings, parameters, epochs).
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Fnv1a64::new();
    h.update(&master.to_le_bytes());
    h.update(label.as_bytes());
    // xor-fold once so short labels still move the high bits
    let v = h.finish();
    v ^ v.rotate_left(31)
}
