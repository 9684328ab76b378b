//! FNV-1a 64-bit, used for pseudonyms, blob checksums and derived identifiers.
//!
//! Not a cryptographic hash.

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(input: &[u8]) -> u64 {
    let mut hasher = Fnv1a64::new();
    hasher.update(input);
    hasher.finish()
}

/// Incremental form of [`fnv1a64`], for data that arrives in chunks.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a64 {
    state: u64,
}

impl Fnv1a64 {
    pub fn new() -> Self {
        Self {
            state: FNV_OFFSET_BASIS,
        }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self::new()
    }
}

/// 16-char lowercase hex rendering of a 64-bit value.
pub fn hex64(value: u64) -> String {
    format!("{value:016x}")
}

/// `hex64(fnv1a64(bytes))`, the checksum format used by storage and catalog.
pub fn checksum_hex(bytes: &[u8]) -> String {
    hex64(fnv1a64(bytes))
}

pub fn is_hex16(s: &str) -> bool {
    s.len() == 16 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference loop, kept separate from the implementation above.
    fn reference(input: &[u8]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in input {
            h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
        }
        h
    }

    #[test]
    fn empty_input_is_offset_basis() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(checksum_hex(b""), "cbf29ce484222325");
    }

    #[test]
    fn single_byte_matches_reference_loop() {
        // Frozen from the reference loop.
        assert_eq!(reference(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn incremental_equals_one_shot() {
        let data: Vec<u8> = (0..=255u8).cycle().take(1000).collect();
        let mut h = Fnv1a64::new();
        for chunk in data.chunks(7) {
            h.update(chunk);
        }
        assert_eq!(h.finish(), fnv1a64(&data));
        assert_eq!(h.finish(), reference(&data));
    }

    #[test]
    fn hex_is_fixed_width() {
        assert_eq!(hex64(1), "0000000000000001");
        assert!(is_hex16(&hex64(u64::MAX)));
        assert!(!is_hex16("ABCDEF0123456789"));
    }
}
