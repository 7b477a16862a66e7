use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Generator handed out by [`RngStream::rng`].
pub type StreamRng = ChaCha8Rng;

/// Number of paths simulated from one substream. Fixed so that results do
/// not depend on how many worker threads rayon happens to use.
pub const PATH_CHUNK: usize = 1024;

/// Addressable random stream.
///
/// A stream is a value: `(seed, stream_id, counter)` names a position in the
/// ChaCha8 keystream keyed by `seed` on the 64-bit stream `stream_id`. Two
/// equal values always produce the same draws, and distinct stream ids never
/// overlap because ChaCha streams are disjoint by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
    pub counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self {
            seed,
            stream_id,
            counter: 0,
        }
    }

    /// Deterministically derive a child stream. Children of distinct `id`s
    /// (and of distinct parents) land on distinct ChaCha streams with
    /// overwhelming probability.
    pub fn substream(&self, id: u64) -> Self {
        let mixed = splitmix64(self.stream_id ^ splitmix64(id.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self {
            seed: self.seed,
            stream_id: mixed,
            counter: 0,
        }
    }

    /// Materialize the generator at this stream's position.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng.set_word_pos(u128::from(self.counter));
        rng
    }

    /// Stream positioned where `rng` currently is.
    pub fn advanced_to(&self, rng: &StreamRng) -> Self {
        Self {
            counter: rng.get_word_pos() as u64,
            ..*self
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fill `n_paths * dim` values by running `path` once per path.
///
/// Paths are grouped in chunks of [`PATH_CHUNK`]; chunk `c` draws from
/// `stream.substream(c)`, so the output is identical for any thread count.
pub fn simulate_paths<F>(stream: &RngStream, n_paths: usize, dim: usize, path: F) -> Vec<f64>
where
    F: Fn(&mut StreamRng, &mut [f64]) + Sync,
{
    let mut out = vec![0.0; n_paths * dim];
    if dim == 0 {
        return out;
    }
    out.par_chunks_mut(PATH_CHUNK * dim)
        .enumerate()
        .for_each(|(chunk, buf)| {
            let mut rng = stream.substream(chunk as u64).rng();
            for p in buf.chunks_mut(dim) {
                path(&mut rng, p);
            }
        });
    out
}
