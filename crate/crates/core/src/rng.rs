//! The seeded random stream used everywhere randomness is needed.
//!
//! ChaCha8 seeded through `seed_from_u64`; independent sub-streams of one
//! seed are selected with the ChaCha stream id.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    // Pinned so a dependency bump that changes the stream is caught.
    #[test]
    fn stream_test_vectors() {
        let mut rng = seeded(7);
        let got: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        assert_eq!(got, PINNED_SEED7.to_vec());
        let mut a = substream(7, 1);
        let mut b = substream(7, 2);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    const PINNED_SEED7: [u64; 3] = [2910824217569608635, 3098856782162503994, 12991601491111613745];
}
