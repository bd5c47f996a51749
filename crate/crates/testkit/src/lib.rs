//! Brute-force reference implementations and synthetic inputs shared by the
//! integration and acceptance tests.

pub mod attention;
pub mod cleaning;
pub mod gradcheck;
pub mod scenes;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
