//! Reader/writer for the embedding container format.

use std::fs;
use std::path::Path;

use crate::embedding::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::util::fnv1a64;

pub const MAGIC: &[u8; 8] = b"SEQEMB01";

/// Layer index reserved for the log-mel front-end.
pub const LOGMEL_LAYER_INDEX: i32 = -1;

const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 4;

/// Serialize a sequence; the written file round-trips byte-exactly.
pub fn write_embeddings(seq: &EmbeddingSequence, path: &Path) -> Result<()> {
    let t = seq.len() as u32;
    let d = seq.dim() as u32;
    let mut bytes = Vec::with_capacity(HEADER_LEN + seq.frames.numel() * 4 + 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&seq.source_layer.to_le_bytes());
    bytes.extend_from_slice(&t.to_le_bytes());
    bytes.extend_from_slice(&d.to_le_bytes());
    bytes.extend_from_slice(&seq.frame_period_ms.to_le_bytes());
    for &v in seq.frames.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let checksum = fnv1a64(&bytes[HEADER_LEN..]);
    bytes.extend_from_slice(&checksum.to_le_bytes());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read and validate a sequence: magic, declared sizes, checksum,
/// finiteness, and (when given) the expected layer index. Malformed input
/// yields typed errors, never a panic.
pub fn read_embeddings(path: &Path, expected_layer: Option<i32>) -> Result<EmbeddingSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN + 8 {
        return Err(Error::format(path, "too short to hold a header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not an embedding file (bad magic)"));
    }
    let layer = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let t = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let frame_period_ms = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
    if t == 0 || d == 0 {
        return Err(Error::format(path, format!("degenerate dimensions {t}x{d}")));
    }
    let payload_len = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "dimension overflow"))?;
    if bytes.len() != HEADER_LEN + payload_len + 8 {
        return Err(Error::format(
            path,
            format!(
                "payload truncated or oversized: header declares {t}x{d}, file has {} payload bytes",
                bytes.len().saturating_sub(HEADER_LEN + 8)
            ),
        ));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = u64::from_le_bytes(bytes[HEADER_LEN + payload_len..].try_into().unwrap());
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(Error::format(
            path,
            format!("checksum mismatch: stored {stored:016x}, computed {computed:016x}"),
        ));
    }
    if let Some(expected) = expected_layer {
        if layer != expected {
            return Err(Error::Config(format!(
                "{}: expected layer {expected}, file holds layer {layer}",
                path.display()
            )));
        }
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let frames = Tensor::new(vec![t, d], data)?;
    frames
        .check_finite("embedding payload")
        .map_err(|_| Error::format(path, "payload contains non-finite values"))?;
    EmbeddingSequence::new(frames, layer, frame_period_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn random_seq(t: usize, d: usize, layer: i32, seed: u64) -> EmbeddingSequence {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        EmbeddingSequence::new(
            Tensor::from_fn(vec![t, d], |_| rng.gen_range(-1.0f32..1.0)),
            layer,
            10,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.emb");
        let seq = random_seq(5, 8, 11, 1);
        write_embeddings(&seq, &path).unwrap();
        let back = read_embeddings(&path, Some(11)).unwrap();
        assert_eq!(back.frames.data(), seq.frames.data());
        assert_eq!(back.source_layer, 11);
        assert_eq!(back.frame_period_ms, 10);
        assert_eq!(back.mask.count_valid(), 5);
        // write again: identical bytes
        let path2 = dir.path().join("e2.emb");
        write_embeddings(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn minimal_file_size_follows_the_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.emb");
        let seq = EmbeddingSequence::new(Tensor::new(vec![1, 1], vec![0.5]).unwrap(), 0, 10).unwrap();
        write_embeddings(&seq, &path).unwrap();
        // magic(8) + layer(4) + T(4) + D(4) + period(4) + one f32 + checksum(8)
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 + 16 + 4 + 8);
    }

    #[test]
    fn corrupt_payload_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.emb");
        write_embeddings(&random_seq(4, 4, 3, 2), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let payload_off = 24 + 7;
        bytes[payload_off] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        match read_embeddings(&path, None) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("checksum")),
            other => panic!("expected checksum failure, got {other:?}"),
        }
    }

    #[test]
    fn layer_mismatch_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.emb");
        write_embeddings(&random_seq(2, 2, 11, 3), &path).unwrap();
        assert!(read_embeddings(&path, Some(11)).is_ok());
        assert!(matches!(
            read_embeddings(&path, Some(31)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn truncation_and_bad_magic_are_typed_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        write_embeddings(&random_seq(4, 4, 0, 4), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 13]).unwrap();
        assert!(matches!(read_embeddings(&path, None), Err(Error::Format { .. })));

        let path2 = dir.path().join("n.emb");
        std::fs::write(&path2, b"NOTEMB00everything else padded past the header").unwrap();
        match read_embeddings(&path2, None) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("magic")),
            other => panic!("expected magic failure, got {other:?}"),
        }
    }
}
