//! Counter-based random streams.
//!
//! A stream is addressed by `(master_seed, stream_id)`. The seed is expanded
//! into a ChaCha key and the id selects the ChaCha stream, so two addresses
//! never share keystream and the draws for an address never depend on the
//! order in which tasks run. Nested work (replicate -> trajectory) uses
//! [`RngStream::child`], which hashes the parent address into a fresh seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

pub fn derive_stream(master_seed: u64, stream_id: u64) -> RngStream {
    RngStream {
        master_seed,
        stream_id,
    }
}

impl RngStream {
    pub fn rng(&self) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Stream for sub-task `id` of this stream.
    pub fn child(&self, id: u64) -> RngStream {
        let seed = splitmix64(splitmix64(self.master_seed) ^ splitmix64(self.stream_id ^ 0xA076_1D64_78BD_642F));
        RngStream {
            master_seed: seed,
            stream_id: id,
        }
    }
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
