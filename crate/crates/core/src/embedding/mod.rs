//! Binary container for precomputed frozen-encoder embeddings.
//!
//! One file holds one (recording, layer) pair. Layer index -1 is reserved
//! for the log-mel front-end; 0..31 mirror the blocks of an external frozen
//! encoder. The byte layout is normative and bit-exact:
//!
//! ```text
//! magic(8) "SEQEMB01" | layer_index(i32) | T(u32) | D(u32) |
//! frame_period_ms(u32) | payload T*D f32 row-major | checksum(u64)
//! ```
//!
//! All integers and floats little-endian; the checksum is 64-bit FNV-1a over
//! the payload bytes.

pub mod file;
pub mod pseudo;

pub use file::{read_embeddings, write_embeddings, LOGMEL_LAYER_INDEX, MAGIC};
pub use pseudo::pseudo_encode;

use crate::error::{Error, Result};
use crate::nn::tensor::{AttentionMask, Tensor};

/// A [T, D] frame matrix from one encoder layer (or the log-mel front-end),
/// with a validity mask. Masks are all-true on load; padding appears only
/// through [`batch_pad`].
#[derive(Debug, Clone)]
pub struct EmbeddingSequence {
    pub frames: Tensor<f32>,
    pub mask: AttentionMask,
    pub source_layer: i32,
    pub frame_period_ms: u32,
}

impl EmbeddingSequence {
    pub fn new(frames: Tensor<f32>, source_layer: i32, frame_period_ms: u32) -> Result<Self> {
        if frames.shape().len() != 2 || frames.shape()[0] == 0 {
            return Err(Error::InvalidInput(format!(
                "embedding sequence must be [T, D] with T >= 1, got {:?}",
                frames.shape()
            )));
        }
        frames.check_finite("embedding sequence")?;
        let t_len = frames.shape()[0];
        Ok(EmbeddingSequence {
            frames,
            mask: AttentionMask::all_true(t_len),
            source_layer,
            frame_period_ms,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }
}

/// Zero-pad sequences to a common length, returning the padded [B, T_max, D]
/// block and one mask per sequence marking real frames.
///
/// Mixing feature dims or source layers in one batch is rejected, mirroring
/// the one-layer-at-a-time experimental protocol.
pub fn batch_pad(seqs: &[EmbeddingSequence]) -> Result<(Tensor<f32>, Vec<AttentionMask>)> {
    if seqs.is_empty() {
        return Err(Error::InvalidInput("batch_pad of empty batch".into()));
    }
    let d = seqs[0].dim();
    let layer = seqs[0].source_layer;
    for s in seqs {
        if s.dim() != d {
            return Err(Error::shape("batch_pad dims", &[d], &[s.dim()]));
        }
        if s.source_layer != layer {
            return Err(Error::InvalidInput(format!(
                "cannot batch layers {layer} and {} together",
                s.source_layer
            )));
        }
    }
    let t_max = seqs.iter().map(|s| s.len()).max().unwrap();
    let b = seqs.len();
    let mut data = vec![0.0f32; b * t_max * d];
    let mut masks = Vec::with_capacity(b);
    for (i, s) in seqs.iter().enumerate() {
        let t = s.len();
        data[i * t_max * d..i * t_max * d + t * d].copy_from_slice(s.frames.data());
        let mut valid = vec![false; t_max];
        valid[..t].fill(true);
        masks.push(AttentionMask::new(valid)?);
    }
    Ok((Tensor::new(vec![b, t_max, d], data)?, masks))
}
