//! Pixel toy games, an actor-critic learner with value rescaling and
//! self-imitation, and pre-training from demonstrations.

pub mod a3c;
pub mod archive;
pub mod env;
mod error;
pub mod gradcheck;
pub mod net;
pub mod pretrain;
pub mod scripted;
pub mod sil;
pub mod transform;

pub use error::{Error, Result};

/// Independent stream seed for `(base, stream)` (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
