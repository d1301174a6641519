use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag of an independent random substream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Stream {
    Channel = 1,
    Noise = 2,
    Bits = 3,
    Weights = 4,
    LlrSynthesis = 5,
    Interleaver = 6,
    Shuffle = 7,
    Pilots = 8,
    Misc = 15,
}

/// Root of a family of counter-based ChaCha substreams.
///
/// Every `(stream, index)` pair addresses its own ChaCha stream, so trial `i`
/// draws the same numbers no matter which worker thread runs it or in which
/// order trials are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `(stream, index)`. `index` uses the low 56 bits.
    pub fn substream(&self, stream: Stream, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((stream as u64) << 56) | (index & ((1 << 56) - 1)));
        rng
    }

    /// Derives a child root, e.g. one per SNR point.
    pub fn child(&self, tag: u64) -> Self {
        // splitmix64 finalizer
        let mut z = self.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Self::new(z ^ (z >> 31))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(9).substream(Stream::Noise, 4);
        let mut b = SeededRng::new(9).substream(Stream::Noise, 4);
        for _ in 0..8 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn substreams_differ() {
        let root = SeededRng::new(1);
        let x: u64 = root.substream(Stream::Noise, 0).random();
        let y: u64 = root.substream(Stream::Noise, 1).random();
        let z: u64 = root.substream(Stream::Channel, 0).random();
        assert_ne!(x, y);
        assert_ne!(x, z);
        assert_ne!(root.child(1), root.child(2));
    }
}
