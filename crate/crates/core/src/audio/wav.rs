//! Minimal 16-bit PCM mono WAV reader/writer.

use std::fs;
use std::path::Path;

use crate::audio::Waveform;
use crate::error::{Error, Result};

fn u32le(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn u16le(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

/// Read a mono 16-bit PCM RIFF/WAVE file. Any other encoding is rejected
/// with a format error naming the path.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::format(path, "not a RIFF/WAVE file"));
    }
    let mut off = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // codec, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = u32le(&bytes, off + 4) as usize;
        let body_end = off + 8 + size;
        if body_end > bytes.len() {
            return Err(Error::format(path, "truncated chunk"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::format(path, "fmt chunk too short"));
                }
                fmt = Some((
                    u16le(&bytes, off + 8),
                    u16le(&bytes, off + 10),
                    u32le(&bytes, off + 12),
                    u16le(&bytes, off + 22),
                ));
            }
            b"data" => data = Some(&bytes[off + 8..body_end]),
            _ => {}
        }
        off = body_end + (size & 1); // chunks are word-aligned
    }
    let (codec, channels, rate, bits) =
        fmt.ok_or_else(|| Error::format(path, "missing fmt chunk"))?;
    if codec != 1 || bits != 16 {
        return Err(Error::format(
            path,
            format!("unsupported encoding: codec {codec}, {bits}-bit"),
        ));
    }
    if channels != 1 {
        return Err(Error::format(path, format!("expected mono, got {channels} channels")));
    }
    let data = data.ok_or_else(|| Error::format(path, "missing data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(Error::format(path, "odd-length sample data"));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Waveform::new(samples, rate)
}

/// Write a mono 16-bit PCM WAV; samples are clamped to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let n = w.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate_hz * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f64> = (0..1600)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
            .collect();
        let w = Waveform::new(samples.clone(), 16000).unwrap();
        write_wav(&path, &w).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate_hz, 16000);
        assert_eq!(r.samples.len(), samples.len());
        for (a, b) in r.samples.iter().zip(&samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn garbage_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"definitely not a wav").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Format { .. })));
    }
}
