//! Pseudo-encoder: a stand-in for real frozen-encoder exports.
//!
//! Projects log-mel frames through a fixed random orthonormal basis to the
//! external encoder's 1536-dim embedding space, keyed by layer index. The
//! output is non-semantic by construction — it exercises the wide-embedding
//! path and the per-layer plumbing without running any actual encoder.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::MelSpec;
use crate::embedding::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::util::derive_seed;

pub const PSEUDO_DIM: usize = 1536;
pub const NUM_PSEUDO_LAYERS: i32 = 32;

/// Map [T, 128] log-mel frames to [T, 1536] pseudo-embeddings for `layer`.
pub fn pseudo_encode(mel: &MelSpec, layer: i32) -> Result<EmbeddingSequence> {
    if !(0..NUM_PSEUDO_LAYERS).contains(&layer) {
        return Err(Error::Config(format!(
            "pseudo-encoder layer must be in 0..{NUM_PSEUDO_LAYERS}, got {layer}"
        )));
    }
    let t_len = mel.frames.shape()[0];
    let d_in = mel.frames.shape()[1];
    let basis = orthonormal_columns(PSEUDO_DIM, d_in, derive_seed(0x5eed, &format!("pseudo-layer/{layer}")));
    // emb[t] = basis * mel[t]; basis columns are orthonormal so norms carry over
    let mut data = vec![0.0f32; t_len * PSEUDO_DIM];
    for t in 0..t_len {
        let row = &mel.frames.data()[t * d_in..(t + 1) * d_in];
        for (j, &x) in row.iter().enumerate() {
            let col = &basis[j];
            let out = &mut data[t * PSEUDO_DIM..(t + 1) * PSEUDO_DIM];
            for (o, &b) in out.iter_mut().zip(col) {
                *o += (x * b) as f32;
            }
        }
    }
    EmbeddingSequence::new(
        Tensor::new(vec![t_len, PSEUDO_DIM], data)?,
        layer,
        (1000 / mel.frame_rate_hz.max(1)) as u32,
    )
}

/// Gram-Schmidt over seeded Gaussian vectors: `cols` orthonormal columns of
/// length `rows`, stored column-major.
fn orthonormal_columns(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(cols <= rows);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    basis
}
