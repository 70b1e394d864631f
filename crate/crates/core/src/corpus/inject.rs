//! Waveform-domain attribute injection.
//!
//! Every attribute maps to a measurable signal transform; the analyzers in
//! [`crate::corpus::analyze`] certify each one independently. Amplitude
//! attributes multiply in the time domain; timing attributes restructure
//! syllables in place, preserving the clip duration.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::Waveform;
use crate::corpus::attributes::Attribute;
use crate::corpus::dsp;
use crate::corpus::synth::SYLLABLE_FILL;
use crate::corpus::TaskKind;
use crate::error::{Error, Result};

/// Order in which co-occurring attributes are applied. Structural timing
/// edits come first so later edits see the final syllable layout; additive
/// and spectral edits precede amplitude contours so the contours shape the
/// noise as well.
pub fn composition_order(task: TaskKind) -> Vec<Attribute> {
    use Attribute::*;
    let order: &[Attribute] = match task {
        TaskKind::Vp => &[
            Breathy,
            Strained,
            PitchVariability,
            HoarseHarsh,
            LoudnessDecay,
            Tremor,
            Flutter,
            Unsteady,
            LoudnessVariability,
        ],
        TaskKind::Amr | TaskKind::Smr => &[
            RapidRate,
            SlowRate,
            SyllableSegmentation,
            IrregularBreakdowns,
            Distortions,
            Breathy,
            Strained,
        ],
    };
    order.to_vec()
}

/// Apply one attribute's transform. Inapplicable (attribute, task) pairs
/// are an error.
pub fn inject_attribute(
    w: &Waveform,
    attr: Attribute,
    task: TaskKind,
    seed: u64,
) -> Result<Waveform> {
    if !attr.applies_to(task) {
        return Err(Error::InvalidInput(format!(
            "attribute {} does not apply to task {}",
            attr.name(),
            task.as_str()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match attr {
        Attribute::LoudnessDecay => loudness_decay(w, &mut rng),
        Attribute::Tremor => amplitude_modulation(w, rng.gen_range(4.8..6.4), 0.45, &mut rng),
        Attribute::Flutter => amplitude_modulation(w, rng.gen_range(8.6..11.4), 0.32, &mut rng),
        Attribute::Unsteady => unsteady_wander(w, &mut rng),
        Attribute::LoudnessVariability => segment_loudness_jitter(w, &mut rng),
        Attribute::PitchVariability => pitch_random_walk(w, &mut rng),
        Attribute::HoarseHarsh => jitter_shimmer(w, &mut rng),
        Attribute::Breathy => aspiration_noise(w, &mut rng),
        Attribute::Strained => spectral_press(w),
        Attribute::RapidRate => respace_syllables(w, 1.5, &mut rng)?,
        Attribute::SlowRate => respace_syllables(w, 0.6, &mut rng)?,
        Attribute::SyllableSegmentation => segment_syllables(w)?,
        Attribute::IrregularBreakdowns => corrupt_syllables(w, &mut rng)?,
        Attribute::Distortions => smear_vowels(w, &mut rng)?,
    };
    Waveform::new(samples, w.sample_rate_hz)
}

// ── amplitude-contour attributes (VP) ───────────────────────────────

/// Exponential amplitude ramp: 12-15 dB drop over the clip.
fn loudness_decay(w: &Waveform, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let drop_db = rng.gen_range(12.0..15.0);
    let n = w.samples.len() as f64;
    w.samples
        .iter()
        .enumerate()
        .map(|(i, &s)| s * 10f64.powf(-drop_db * (i as f64 / n) / 20.0))
        .collect()
}

/// Sinusoidal AM at `freq` with the given depth.
fn amplitude_modulation(w: &Waveform, freq: f64, depth: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let sr = w.sample_rate_hz as f64;
    w.samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let t = i as f64 / sr;
            s * (1.0 + depth * (std::f64::consts::TAU * freq * t + phase).sin())
        })
        .collect()
}

/// Slow two-component amplitude wander below 1 Hz.
fn unsteady_wander(w: &Waveform, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f1 = rng.gen_range(0.3..0.48);
    let f2 = rng.gen_range(0.55..0.8);
    let p1 = rng.gen_range(0.0..std::f64::consts::TAU);
    let p2 = rng.gen_range(0.0..std::f64::consts::TAU);
    let sr = w.sample_rate_hz as f64;
    w.samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let t = i as f64 / sr;
            let g = 1.0
                + 0.17 * (std::f64::consts::TAU * f1 * t + p1).sin()
                + 0.12 * (std::f64::consts::TAU * f2 * t + p2).sin();
            s * g.max(0.25)
        })
        .collect()
}

/// Stepped per-segment gains (~0.45 s segments, +-5 dB) with short
/// crossfades; lands in the 1.3-3 Hz envelope band.
fn segment_loudness_jitter(w: &Waveform, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = w.sample_rate_hz as f64;
    let n = w.samples.len();
    let mut gains: Vec<(usize, f64)> = Vec::new();
    let mut pos = 0usize;
    let mut flip = 1.0;
    while pos < n {
        let seg = (rng.gen_range(0.38..0.52) * sr) as usize;
        // alternate the sign of the gain draw so consecutive segments
        // genuinely differ
        let db = flip * rng.gen_range(2.5..5.0);
        flip = -flip;
        gains.push((pos, 10f64.powf(db / 20.0)));
        pos += seg.max(1);
    }
    let xfade = (0.06 * sr) as usize;
    let mut gain = vec![1.0f64; n];
    for (k, &(start, g)) in gains.iter().enumerate() {
        let end = gains.get(k + 1).map(|&(s, _)| s).unwrap_or(n);
        for i in start..end.min(n) {
            gain[i] = g;
        }
        // smooth the step edge
        if start > 0 && start + xfade < n {
            let prev = gain[start - 1];
            for i in 0..xfade {
                let x = i as f64 / xfade as f64;
                let s = 0.5 - 0.5 * (std::f64::consts::PI * x).cos();
                gain[start + i] = prev * (1.0 - s) + g * s;
            }
        }
    }
    w.samples.iter().zip(&gain).map(|(&s, &g)| s * g).collect()
}

/// Build a smooth control curve at 100 Hz: white noise through a one-pole
/// lowpass, normalized to `target_std`, zero mean.
fn smooth_walk(n_points: usize, alpha: f64, target_std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut curve = Vec::with_capacity(n_points);
    let mut state = 0.0f64;
    for _ in 0..n_points {
        let white: f64 = StandardNormal.sample(rng);
        state = alpha * state + (1.0 - alpha) * white;
        curve.push(state);
    }
    let mean = curve.iter().sum::<f64>() / n_points as f64;
    let std = (curve.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_points as f64)
        .sqrt()
        .max(1e-9);
    curve
        .iter()
        .map(|v| ((v - mean) / std * target_std).clamp(-3.5 * target_std, 3.5 * target_std))
        .collect()
}

fn curve_at(curve: &[f64], rate_hz: f64, t: f64) -> f64 {
    let x = t * rate_hz;
    let i = (x as usize).min(curve.len().saturating_sub(1));
    let j = (i + 1).min(curve.len() - 1);
    let frac = (x - i as f64).clamp(0.0, 1.0);
    curve[i] * (1.0 - frac) + curve[j] * frac
}

/// Low-rate random-walk f0 deviation (sigma ~6% of f0) via variable-rate
/// resampling.
fn pitch_random_walk(w: &Waveform, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dur = w.duration_s();
    let points = (dur * 100.0) as usize + 2;
    // one-pole at ~1 Hz on a 100 Hz grid keeps frame-to-frame steps tiny
    let curve = smooth_walk(points, 0.94, 0.065, rng);
    dsp::time_warp(&w.samples, w.sample_rate_hz, |t| {
        1.0 + curve_at(&curve, 100.0, t)
    })
}

/// Fast cycle-scale pitch perturbation plus 20-40 Hz shimmer.
fn jitter_shimmer(w: &Waveform, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dur = w.duration_s();
    // jitter: near-white rate perturbation on a 200 Hz grid
    let points = (dur * 200.0) as usize + 2;
    let jitter = smooth_walk(points, 0.25, 0.021, rng);
    let warped = dsp::time_warp(&w.samples, w.sample_rate_hz, |t| {
        1.0 + curve_at(&jitter, 200.0, t)
    });
    // shimmer: 20-40 Hz band amplitude noise
    let env_points = (dur * 100.0) as usize + 2;
    let white: Vec<f64> = (0..env_points)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let band = dsp::fft_filter(&white, 100, |f| dsp::smooth_band(f, 20.0, 40.0, 5.0));
    let std = (band.iter().map(|v| v * v).sum::<f64>() / band.len() as f64)
        .sqrt()
        .max(1e-9);
    let shimmer: Vec<f64> = band.iter().map(|v| v / std * 0.12).collect();
    let sr = w.sample_rate_hz as f64;
    warped
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let t = i as f64 / sr;
            s * (1.0 + curve_at(&shimmer, 100.0, t)).max(0.4)
        })
        .collect()
}

// ── additive / spectral attributes ──────────────────────────────────

/// Aspiration-noise mix: band noise 400-7300 Hz at -22 dB relative to the
/// clip RMS; drops the harmonics-band SNR by well over 10 dB against the
/// clean -55 dB floor.
fn aspiration_noise(w: &Waveform, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = dsp::shaped_noise(w.samples.len(), w.sample_rate_hz, 400.0, 7300.0, rng);
    let level = dsp::rms(&w.samples) * 10f64.powf(-22.0 / 20.0);
    w.samples
        .iter()
        .zip(&noise)
        .map(|(&s, &n)| s + level * n)
        .collect()
}

/// Pressed-phonation proxy: +10 dB peaking boost over 1.2-3.8 kHz, shifting
/// the harmonic tilt toward the mid band.
fn spectral_press(w: &Waveform) -> Vec<f64> {
    let boost = 10f64.powf(10.0 / 20.0) - 1.0;
    dsp::fft_filter(&w.samples, w.sample_rate_hz, |f| {
        1.0 + boost * dsp::smooth_band(f, 1200.0, 3800.0, 250.0)
    })
}

// ── syllable-structure attributes (AMR/SMR) ─────────────────────────

fn spans_of(w: &Waveform) -> Vec<(usize, usize)> {
    dsp::active_spans(w, 0.15, 0.05, 0.04)
}

fn median_ioi_samples(spans: &[(usize, usize)]) -> Option<f64> {
    if spans.len() < 3 {
        return None;
    }
    let iois: Vec<f64> = spans.windows(2).map(|p| (p[1].0 - p[0].0) as f64).collect();
    Some(dsp::median(&iois))
}

fn crossfade_concat(head: &[f64], tail: &[f64], xfade: usize) -> Vec<f64> {
    let xfade = xfade.min(head.len()).min(tail.len());
    let mut out = head[..head.len() - xfade].to_vec();
    for i in 0..xfade {
        let x = i as f64 / xfade as f64;
        let s = 0.5 - 0.5 * (std::f64::consts::PI * x).cos();
        out.push(head[head.len() - xfade + i] * (1.0 - s) + tail[i] * s);
    }
    out.extend_from_slice(&tail[xfade..]);
    out
}

/// Shorten a snippet by removing a chunk from its middle.
fn cut_middle(snippet: &[f64], target_len: usize, sr: f64) -> Vec<f64> {
    if snippet.len() <= target_len {
        return snippet.to_vec();
    }
    let xfade = (0.006 * sr) as usize;
    let head_len = (target_len / 2).max(xfade + 1);
    let tail_len = target_len.saturating_sub(head_len).max(xfade + 1);
    let head = &snippet[..head_len.min(snippet.len())];
    let tail = &snippet[snippet.len() - tail_len.min(snippet.len())..];
    crossfade_concat(head, tail, xfade)
}

/// Lengthen a snippet by looping a mid-vowel chunk.
fn stretch_loop(snippet: &[f64], target_len: usize, sr: f64) -> Vec<f64> {
    if snippet.len() >= target_len {
        return snippet.to_vec();
    }
    let xfade = (0.006 * sr) as usize;
    let split = snippet.len() * 2 / 3;
    let chunk_len = ((0.06 * sr) as usize).min(split / 2).max(xfade + 1);
    let chunk = &snippet[split - chunk_len..split];
    let mut out = snippet[..split].to_vec();
    while out.len() + (snippet.len() - split) < target_len {
        out = crossfade_concat(&out, chunk, xfade);
    }
    crossfade_concat(&out, &snippet[split..], xfade)
}

/// Change the syllable rate by a factor, preserving clip duration: snippets
/// are shortened/stretched to keep the fill fraction and re-placed on the
/// new period grid, cycling through the available snippets.
fn respace_syllables(w: &Waveform, rate_mult: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let sr = w.sample_rate_hz as f64;
    let spans = spans_of(w);
    let period = match median_ioi_samples(&spans) {
        Some(p) => p,
        None => return Ok(w.samples.to_vec()),
    };
    let new_period = period / rate_mult;
    let target_len = (new_period * SYLLABLE_FILL) as usize;
    let snippets: Vec<Vec<f64>> = spans
        .iter()
        .map(|&(s, e)| {
            let snip = &w.samples[s..e];
            if rate_mult > 1.0 {
                cut_middle(snip, target_len, sr)
            } else {
                stretch_loop(snip, target_len, sr)
            }
        })
        .collect();
    let n = w.samples.len();
    let mut out = vec![0.0f64; n];
    let mut onset = spans[0].0 as f64;
    let mut k = 0usize;
    while (onset as usize) + target_len < n {
        let snip = &snippets[k % snippets.len()];
        let start = onset as usize;
        for (i, &v) in snip.iter().enumerate() {
            if start + i < n {
                out[start + i] += v;
            }
        }
        onset += new_period * (1.0 + rng.gen_range(-0.012..0.012));
        k += 1;
    }
    Ok(out)
}

/// Insert clear silent gaps: truncate each syllable so the gap to the next
/// onset is at least 125 ms and at least 55% of the period. Onsets stay
/// put, so the rate is unchanged.
fn segment_syllables(w: &Waveform) -> Result<Vec<f64>> {
    let sr = w.sample_rate_hz as f64;
    let spans = spans_of(w);
    let period = match median_ioi_samples(&spans) {
        Some(p) => p,
        None => return Ok(w.samples.to_vec()),
    };
    let gap_target = (0.55 * period).max(0.125 * sr);
    let keep = ((period - gap_target) as usize).max((0.042 * sr) as usize);
    let mut out = w.samples.to_vec();
    let fade_len = (0.008 * sr) as usize;
    for &(s, e) in &spans {
        let cut_from = (s + keep).min(e);
        if cut_from < e {
            dsp::fade(&mut out[s..cut_from], fade_len, false);
            out[cut_from..e].fill(0.0);
        }
    }
    Ok(out)
}

/// Random per-syllable timing and energy corruption: onset jitter up to
/// +-30% of the period, sporadic weak syllables, occasionally a dropped
/// one.
fn corrupt_syllables(w: &Waveform, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let spans = spans_of(w);
    let period = match median_ioi_samples(&spans) {
        Some(p) => p,
        None => return Ok(w.samples.to_vec()),
    };
    let n = w.samples.len();
    let mut out = vec![0.0f64; n];
    let drop_idx = if spans.len() > 4 && rng.gen_bool(0.3) {
        Some(rng.gen_range(1..spans.len() - 1))
    } else {
        None
    };
    let min_sep = (0.03 * w.sample_rate_hz as f64) as i64;
    let mut prev_start: i64 = i64::MIN / 2;
    for (k, &(s, e)) in spans.iter().enumerate() {
        if Some(k) == drop_idx {
            continue;
        }
        let jitter = rng.gen_range(-0.3..0.3) * period;
        let mut start = s as i64 + jitter as i64;
        if start < prev_start + min_sep {
            start = prev_start + min_sep;
        }
        prev_start = start;
        let gain = if rng.gen_bool(0.45) {
            rng.gen_range(0.35..0.85)
        } else {
            1.0
        };
        for i in 0..(e - s) {
            let idx = start + i as i64;
            if idx >= 0 && (idx as usize) < n {
                out[idx as usize] += gain * w.samples[s + i];
            }
        }
    }
    Ok(out)
}

/// Per-syllable spectral smearing: the vowel body of each syllable is
/// blended with band noise matched to its level.
fn smear_vowels(w: &Waveform, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let sr = w.sample_rate_hz as f64;
    let spans = spans_of(w);
    let mut out = w.samples.to_vec();
    let burst_skip = (0.03 * sr) as usize;
    let edge = (0.01 * sr) as usize;
    for &(s, e) in &spans {
        let v0 = s + burst_skip;
        if v0 + (0.04 * sr) as usize >= e {
            continue;
        }
        let seg_len = e - v0;
        let seg_rms = dsp::rms(&w.samples[v0..e]);
        let noise = dsp::shaped_noise(seg_len, w.sample_rate_hz, 800.0, 3500.0, rng);
        for i in 0..seg_len {
            // taper the blend at segment edges
            let widx = i.min(seg_len - 1 - i);
            let wedge = (widx as f64 / edge as f64).min(1.0);
            let b = 0.55 * wedge;
            out[v0 + i] = (1.0 - b) * w.samples[v0 + i] + b * noise[i] * seg_rms;
        }
    }
    Ok(out)
}
