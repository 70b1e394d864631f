//! Signal framing and windowing.

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Number of frames for a given signal length: floor((n - window) / hop) + 1.
pub fn frame_count(num_samples: usize, window: usize, hop: usize) -> Option<usize> {
    if num_samples < window {
        None
    } else {
        Some((num_samples - window) / hop + 1)
    }
}

/// Slice a waveform into overlapping frames. Frame i starts at sample
/// i * hop; a trailing partial window is dropped, never padded.
pub fn frame_signal(w: &Waveform, window_ms: f64, hop_ms: f64) -> Result<Vec<Vec<f64>>> {
    let sr = w.sample_rate_hz as f64;
    let window = (window_ms * sr / 1000.0).round() as usize;
    let hop = (hop_ms * sr / 1000.0).round() as usize;
    let n = w.samples.len();
    let count = frame_count(n, window, hop).ok_or_else(|| {
        Error::InvalidInput(format!(
            "signal shorter than one window ({n} samples < {window})"
        ))
    })?;
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * hop;
        frames.push(w.samples[start..start + window].to_vec());
    }
    Ok(frames)
}

/// Periodic Hann window: w[k] = 0.5 - 0.5 cos(2 pi k / n).
pub fn hann_window(n: usize) -> Vec<f64> {
    assert!(n >= 2, "hann window needs n >= 2");
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect()
}
