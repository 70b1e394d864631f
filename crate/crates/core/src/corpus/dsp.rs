//! Shared DSP primitives for synthesis, injection, and measurement.
//!
//! Both the attribute injectors and the verification analyzers build on
//! these; nothing above this layer is shared between them.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::Waveform;

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((v.len() - 1) as f64 * p).round() as usize;
    v[idx]
}

/// Least-squares line fit; returns (intercept, slope).
pub fn linear_fit(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return (ys.first().copied().unwrap_or(0.0), 0.0);
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    let slope = if den > 0.0 { num / den } else { 0.0 };
    (mean_y - slope * mean_x, slope)
}

/// Short-time RMS envelope.
pub fn envelope(samples: &[f64], sr: u32, win_ms: f64, hop_ms: f64) -> Vec<f64> {
    let win = ((win_ms * sr as f64 / 1000.0) as usize).max(1);
    let hop = ((hop_ms * sr as f64 / 1000.0) as usize).max(1);
    if samples.len() < win {
        return vec![rms(samples)];
    }
    let count = (samples.len() - win) / hop + 1;
    (0..count)
        .map(|i| rms(&samples[i * hop..i * hop + win]))
        .collect()
}

/// Amplitude of sinusoidal components of a (windowed) series via direct DFT
/// at the requested frequencies. `rate_hz` is the series' sample rate.
pub fn tone_amplitudes(series: &[f64], rate_hz: f64, freqs: &[f64]) -> Vec<f64> {
    let n = series.len();
    if n < 8 {
        return vec![0.0; freqs.len()];
    }
    // Hann window; coherent gain 0.5, so scale amplitudes by 2/(N*0.5).
    let windowed: Vec<f64> = series
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            x * w
        })
        .collect();
    freqs
        .iter()
        .map(|&f| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, &x) in windowed.iter().enumerate() {
                let ang = 2.0 * std::f64::consts::PI * f * i as f64 / rate_hz;
                re += x * ang.cos();
                im -= x * ang.sin();
            }
            2.0 * (re * re + im * im).sqrt() / (0.5 * n as f64)
        })
        .collect()
}

/// Peak amplitude over a frequency band, scanned on a fixed grid.
pub fn band_peak(series: &[f64], rate_hz: f64, f_lo: f64, f_hi: f64, step: f64) -> f64 {
    let mut freqs = Vec::new();
    let mut f = f_lo;
    while f <= f_hi + 1e-9 {
        freqs.push(f);
        f += step;
    }
    tone_amplitudes(series, rate_hz, &freqs)
        .into_iter()
        .fold(0.0, f64::max)
}

/// Welch-style averaged power spectrum: 512-point Hann frames, 50% overlap.
/// Returns 257 bins spanning 0..sr/2.
pub fn avg_power_spectrum(samples: &[f64], _sr: u32) -> Vec<f64> {
    const NFFT: usize = 512;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(NFFT);
    let window: Vec<f64> = (0..NFFT)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / NFFT as f64).cos())
        .collect();
    let mut acc = vec![0.0f64; NFFT / 2 + 1];
    let mut count = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    let mut pos = 0;
    while pos + NFFT <= samples.len() {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(samples[pos + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (i, a) in acc.iter_mut().enumerate() {
            *a += buf[i].norm_sqr();
        }
        count += 1;
        pos += NFFT / 2;
    }
    if count > 0 {
        for a in acc.iter_mut() {
            *a /= count as f64;
        }
    }
    acc
}

/// Total power over [f_lo, f_hi] of a 257-bin spectrum at `sr`.
pub fn band_power(spectrum: &[f64], sr: u32, f_lo: f64, f_hi: f64) -> f64 {
    let bin_width = sr as f64 / ((spectrum.len() - 1) as f64 * 2.0);
    spectrum
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let f = *i as f64 * bin_width;
            f >= f_lo && f <= f_hi
        })
        .map(|(_, &p)| p)
        .sum()
}

/// Normalized-autocorrelation pitch estimate over one frame.
/// Returns (f0_hz, clarity) where clarity is the normalized peak in [0, 1].
pub fn autocorr_f0(frame: &[f64], sr: u32, f_min: f64, f_max: f64) -> Option<(f64, f64)> {
    let n = frame.len();
    let lag_min = (sr as f64 / f_max).floor() as usize;
    let lag_max = (sr as f64 / f_min).ceil() as usize;
    if lag_max + 8 >= n || lag_min < 2 {
        return None;
    }
    let mean = frame.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = frame.iter().map(|&v| v - mean).collect();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy < 1e-12 {
        return None;
    }
    let mut best_lag = 0usize;
    let mut best_val = -1.0f64;
    let mut vals = vec![0.0f64; lag_max + 2];
    for lag in lag_min..=lag_max {
        let m = n - lag;
        let mut num = 0.0;
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        for i in 0..m {
            num += x[i] * x[i + lag];
            e1 += x[i] * x[i];
            e2 += x[i + lag] * x[i + lag];
        }
        let denom = (e1 * e2).sqrt();
        let v = if denom > 1e-12 { num / denom } else { 0.0 };
        vals[lag] = v;
        if v > best_val {
            best_val = v;
            best_lag = lag;
        }
    }
    if best_lag == 0 {
        return None;
    }
    // parabolic refinement around the peak
    let lag = if best_lag > lag_min && best_lag < lag_max {
        let (a, b, c) = (vals[best_lag - 1], vals[best_lag], vals[best_lag + 1]);
        let denom = a - 2.0 * b + c;
        let delta = if denom.abs() > 1e-12 {
            0.5 * (a - c) / denom
        } else {
            0.0
        };
        best_lag as f64 + delta.clamp(-0.5, 0.5)
    } else {
        best_lag as f64
    };
    Some((sr as f64 / lag, best_val))
}

/// Frame-wise f0 track over voiced frames (clarity and energy gated).
/// Returns (time_s, f0_hz, clarity) triples.
pub fn track_f0(
    samples: &[f64],
    sr: u32,
    win_ms: f64,
    hop_ms: f64,
    f_min: f64,
    f_max: f64,
    min_clarity: f64,
) -> Vec<(f64, f64, f64)> {
    let win = (win_ms * sr as f64 / 1000.0) as usize;
    let hop = (hop_ms * sr as f64 / 1000.0) as usize;
    if samples.len() < win {
        return Vec::new();
    }
    let env = envelope(samples, sr, win_ms, hop_ms);
    let gate = 0.25 * percentile(&env, 0.95);
    let count = (samples.len() - win) / hop + 1;
    let mut out = Vec::new();
    for i in 0..count {
        if env.get(i).copied().unwrap_or(0.0) < gate {
            continue;
        }
        let frame = &samples[i * hop..i * hop + win];
        if let Some((f0, clarity)) = autocorr_f0(frame, sr, f_min, f_max) {
            if clarity >= min_clarity {
                out.push((i as f64 * hop as f64 / sr as f64, f0, clarity));
            }
        }
    }
    out
}

/// Median smooth with window `w` (odd).
pub fn median_smooth(values: &[f64], w: usize) -> Vec<f64> {
    let half = w / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            median(&values[lo..hi])
        })
        .collect()
}

/// Filter a whole signal in the frequency domain with a smooth gain curve.
/// Zero-padded to avoid circular wrap; output has the input's length.
pub fn fft_filter(samples: &[f64], sr: u32, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = samples.len();
    let padded = (n + 8192).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(padded);
    let inv = planner.plan_fft_inverse(padded);
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(padded)
        .collect();
    fwd.process(&mut buf);
    for (i, b) in buf.iter_mut().enumerate() {
        // symmetric gain: bin i and padded-i share a frequency
        let f = if i <= padded / 2 {
            i as f64 * sr as f64 / padded as f64
        } else {
            (padded - i) as f64 * sr as f64 / padded as f64
        };
        let g = gain(f);
        *b = Complex::new(b.re * g, b.im * g);
    }
    inv.process(&mut buf);
    buf[..n].iter().map(|c| c.re / padded as f64).collect()
}

/// Smooth band gate rising over `edge` Hz on each side of [f_lo, f_hi].
pub fn smooth_band(f: f64, f_lo: f64, f_hi: f64, edge: f64) -> f64 {
    let up = ((f - (f_lo - edge)) / edge).clamp(0.0, 1.0);
    let down = (((f_hi + edge) - f) / edge).clamp(0.0, 1.0);
    let s = |x: f64| x * x * (3.0 - 2.0 * x);
    s(up) * s(down)
}

/// Band-limited Gaussian noise with unit RMS.
pub fn shaped_noise(
    n: usize,
    sr: u32,
    f_lo: f64,
    f_hi: f64,
    rng: &mut impl rand::Rng,
) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let white: Vec<f64> = (0..n)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let shaped = fft_filter(&white, sr, |f| smooth_band(f, f_lo, f_hi, 120.0));
    let r = rms(&shaped);
    if r > 0.0 {
        shaped.iter().map(|&v| v / r).collect()
    } else {
        shaped
    }
}

/// Variable-rate resampling: output m advances through the input at
/// `rate(t)` input-samples per output-sample (linear interpolation).
pub fn time_warp(samples: &[f64], sr: u32, rate: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = samples.len();
    let mut out = Vec::with_capacity(n);
    let mut pos = 0.0f64;
    while (pos as usize) + 1 < n && out.len() < 2 * n {
        let i = pos as usize;
        let frac = pos - i as f64;
        out.push(samples[i] * (1.0 - frac) + samples[i + 1] * frac);
        let t = out.len() as f64 / sr as f64;
        pos += rate(t).max(0.1);
    }
    out
}

/// Contiguous high-energy spans (sample ranges) found by envelope gating.
/// Spans closer than `min_gap_s` are merged; spans shorter than
/// `min_len_s` are dropped.
pub fn active_spans(w: &Waveform, gate_frac: f64, min_gap_s: f64, min_len_s: f64) -> Vec<(usize, usize)> {
    let sr = w.sample_rate_hz;
    let hop_ms = 5.0;
    let env = envelope(&w.samples, sr, 10.0, hop_ms);
    let gate = gate_frac * percentile(&env, 0.95);
    let hop = (hop_ms / 1000.0 * sr as f64) as usize;
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &e) in env.iter().enumerate() {
        if e >= gate {
            if start.is_none() {
                start = Some(i * hop);
            }
        } else if let Some(s) = start.take() {
            spans.push((s, i * hop));
        }
    }
    if let Some(s) = start {
        spans.push((s, w.samples.len()));
    }
    // merge close spans
    let min_gap = (min_gap_s * sr as f64) as usize;
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in spans {
        if let Some(last) = merged.last_mut() {
            if s.saturating_sub(last.1) < min_gap {
                last.1 = e;
                continue;
            }
        }
        merged.push((s, e));
    }
    let min_len = (min_len_s * sr as f64) as usize;
    merged.retain(|(s, e)| e - s >= min_len);
    merged
}

/// Raised-cosine fade applied in place over `len` samples at the start or
/// end of a slice.
pub fn fade(samples: &mut [f64], len: usize, fade_in: bool) {
    let len = len.min(samples.len());
    for i in 0..len {
        let x = i as f64 / len as f64;
        let g = 0.5 - 0.5 * (std::f64::consts::PI * x).cos();
        if fade_in {
            samples[i] *= g;
        } else {
            let n = samples.len();
            samples[n - 1 - i] *= g;
        }
    }
}
