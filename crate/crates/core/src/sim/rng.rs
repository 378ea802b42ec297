use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NodeId;

/// Layers that draw their own random stream so that adding draws in one
/// layer never perturbs another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Layer {
    Csma = 1,
    Retry = 2,
    Channel = 3,
    Queue = 4,
    Transport = 5,
    App = 6,
    Injected = 7,
    Duty = 8,
}

/// ChaCha8 keyed by the scenario seed, with the 64-bit ChaCha stream
/// selector used to split it per (node, layer).
#[derive(Clone, Debug)]
pub struct SimRng(ChaCha8Rng);

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SimRng {
    /// Stream `stream` of the generator keyed by `seed`.
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        let mut st = seed;
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut st).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        SimRng(rng)
    }

    pub fn for_node(seed: u64, node: NodeId, layer: Layer) -> Self {
        Self::new(seed, ((node as u64) << 8) | layer as u64)
    }

    /// Uniform integer in `[0, hi]`.
    pub fn upto(&mut self, hi: u64) -> u64 {
        if hi == 0 {
            0
        } else {
            self.0.gen_range(0..=hi)
        }
    }

    /// Uniform float in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.0.gen::<f64>()
    }

    /// True with probability `p` (clamped to [0, 1]).
    pub fn chance(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.unit() < p
        }
    }
}

impl RngCore for SimRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_repeat() {
        let mut a = SimRng::new(7, 3);
        let mut b = SimRng::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = SimRng::new(7, 3);
        let mut b = SimRng::new(7, 4);
        let va: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let vb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(va, vb);
    }

    #[test]
    fn known_first_draw() {
        // pinned so an accidental change of algorithm or key schedule shows up
        let mut r = SimRng::new(1, 0);
        assert_eq!(r.next_u64(), FIRST_DRAW_SEED1);
    }

    const FIRST_DRAW_SEED1: u64 = 17_254_111_457_321_727_320;

    #[test]
    fn upto_bounds() {
        let mut r = SimRng::new(9, 9);
        assert_eq!(r.upto(0), 0);
        for _ in 0..1000 {
            assert!(r.upto(7) <= 7);
        }
        assert!(!r.chance(0.0));
        assert!(r.chance(1.0));
    }
}
