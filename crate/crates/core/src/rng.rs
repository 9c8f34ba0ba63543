//! Counter-based splittable random streams.
//!
//! Every output is a pure function of `(key, counter)`, and child streams are
//! derived from the parent key plus an index. Work that is scheduled on
//! `root.split(i)` therefore draws the same numbers no matter which thread
//! runs it or in what order.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLIT_TAG: u64 = 0xD1B5_4A32_D192_ED03;
const FORK_TAG: u64 = 0x8CB9_2BA7_2F3D_8DD7;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { key: mix64(seed.wrapping_add(GOLDEN)), counter: 0 }
    }

    /// Child stream `index`; does not advance `self`.
    pub fn split(&self, index: u64) -> Stream {
        let key = mix64(self.key ^ mix64(index.wrapping_mul(GOLDEN) ^ SPLIT_TAG));
        Stream { key, counter: 0 }
    }

    /// Fresh child stream keyed on the next counter value of `self`.
    pub fn fork(&mut self) -> Stream {
        let c = self.counter;
        self.counter += 1;
        let key = mix64(self.key ^ mix64(c.wrapping_mul(GOLDEN) ^ FORK_TAG));
        Stream { key, counter: 0 }
    }

    #[inline]
    fn next(&mut self) -> u64 {
        let c = self.counter;
        self.counter += 1;
        mix64(mix64(self.key ^ c.wrapping_mul(GOLDEN)) ^ self.key.rotate_left(29))
    }

    /// Uniform in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
