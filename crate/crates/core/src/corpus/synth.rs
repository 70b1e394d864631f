//! Base rendering of the three clinical-task signals.
//!
//! VP is a sustained harmonic vowel with slow mild vibrato and a
//! formant-shaped envelope; AMR is a train of plosive-burst+vowel syllables
//! near 4 Hz; SMR alternates three burst spectra near 3.5 Hz. Everything is
//! seeded and bit-deterministic.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::Waveform;
use crate::corpus::dsp;
use crate::corpus::{SpeakerProfile, TaskKind};
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16000;

/// Highest harmonic rendered; keeps the 5-7.8 kHz band free for the
/// aspiration-noise detector.
const MAX_HARMONIC_HZ: f64 = 3800.0;

/// Syllable fill fraction of one period (the rest is the inter-syllable
/// gap).
pub const SYLLABLE_FILL: f64 = 0.68;

pub fn base_syllable_rate(task: TaskKind) -> f64 {
    match task {
        TaskKind::Amr => 4.0,
        TaskKind::Smr => 3.5,
        TaskKind::Vp => 0.0,
    }
}

/// Deterministic base rendering for (task, profile, duration, seed).
pub fn render_base(
    task: TaskKind,
    profile: &SpeakerProfile,
    duration_s: f64,
    seed: u64,
) -> Result<Waveform> {
    if !(1.0..=20.0).contains(&duration_s) {
        return Err(Error::InvalidInput(format!(
            "duration {duration_s} s out of range"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match task {
        TaskKind::Vp => render_vowel_segment(
            profile,
            duration_s,
            profile.base_f0_hz,
            true,
            &mut rng,
        ),
        TaskKind::Amr | TaskKind::Smr => render_syllable_train(task, profile, duration_s, &mut rng),
    };
    let mut samples = samples;
    // low noise floor so spectra are never exactly empty
    let floor = 10f64.powf(-55.0 / 20.0) * dsp::rms(&samples).max(1e-3);
    for s in samples.iter_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *s += floor * n;
    }
    let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.95 {
        for s in samples.iter_mut() {
            *s *= 0.95 / peak;
        }
    }
    Waveform::new(samples, SAMPLE_RATE)
}

/// Harmonic stack with per-speaker tilt and two formant bumps; vibrato
/// optional. Length is `duration_s`, edges get raised-cosine ramps.
fn render_vowel_segment(
    profile: &SpeakerProfile,
    duration_s: f64,
    f0: f64,
    vibrato: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let n = (duration_s * sr) as usize;
    let num_harmonics = ((MAX_HARMONIC_HZ / f0).floor() as usize).max(3);
    let vib_rate = rng.gen_range(4.6..5.4);
    let vib_depth = if vibrato {
        rng.gen_range(0.004..0.007)
    } else {
        0.0
    };
    let vib_phase = rng.gen_range(0.0..std::f64::consts::TAU);

    // harmonic amplitudes: spectral tilt plus formant bumps, in dB
    let amp_db = |f: f64| -> f64 {
        let tilt = profile.tilt_db_per_oct * (f / f0).log2();
        let f1 = profile.formant1_hz;
        let f2 = profile.formant2_hz;
        let b1 = 8.0 * (-0.5 * ((f - f1) / 130.0).powi(2)).exp();
        let b2 = 6.0 * (-0.5 * ((f - f2) / 190.0).powi(2)).exp();
        tilt + b1 + b2
    };
    let amps: Vec<f64> = (1..=num_harmonics)
        .map(|h| 10f64.powf(amp_db(h as f64 * f0) / 20.0))
        .collect();
    let mut phases: Vec<f64> = (0..num_harmonics)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();

    let mut out = vec![0.0f64; n];
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let f_inst = f0 * (1.0 + vib_depth * (std::f64::consts::TAU * vib_rate * t + vib_phase).sin());
        let mut acc = 0.0;
        for (h, &a) in amps.iter().enumerate() {
            phases[h] += std::f64::consts::TAU * (h + 1) as f64 * f_inst / sr;
            acc += a * phases[h].sin();
        }
        *o = acc;
    }
    let r = dsp::rms(&out);
    let target = 0.18 * profile.base_loudness;
    if r > 0.0 {
        for o in out.iter_mut() {
            *o *= target / r;
        }
    }
    let ramp = (0.05 * sr) as usize;
    dsp::fade(&mut out, ramp.min(n / 4), true);
    dsp::fade(&mut out, ramp.min(n / 4), false);
    out
}

/// Plosive burst: band-shaped noise click.
fn render_burst(center_hz: f64, dur_s: f64, amp: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (dur_s * SAMPLE_RATE as f64) as usize;
    let mut noise = dsp::shaped_noise(n, SAMPLE_RATE, center_hz - 250.0, center_hz + 250.0, rng);
    dsp::fade(&mut noise, n / 4, true);
    dsp::fade(&mut noise, n / 2, false);
    let r = dsp::rms(&noise);
    if r > 0.0 {
        for v in noise.iter_mut() {
            *v *= amp / r;
        }
    }
    noise
}

/// Burst centers per task; SMR cycles through three articulation places.
fn burst_center(task: TaskKind, k: usize) -> f64 {
    match task {
        TaskKind::Amr => 850.0,
        TaskKind::Smr => [850.0, 2400.0, 1400.0][k % 3],
        TaskKind::Vp => 0.0,
    }
}

fn render_syllable_train(
    task: TaskKind,
    profile: &SpeakerProfile,
    duration_s: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let n = (duration_s * sr) as usize;
    let period = 1.0 / (base_syllable_rate(task) * profile.rate_factor);
    let burst_dur = 0.025;
    let mut out = vec![0.0f64; n];
    let mut onset = 0.04 * sr;
    let mut k = 0usize;
    while onset / sr + period * SYLLABLE_FILL < duration_s - 0.05 {
        let jitter = rng.gen_range(-0.015..0.015) * period * sr;
        let start = (onset + jitter).max(0.0) as usize;
        let burst = render_burst(
            burst_center(task, k),
            burst_dur,
            0.15 * profile.base_loudness,
            rng,
        );
        let vowel_dur = period * SYLLABLE_FILL - burst_dur;
        let f0 = profile.base_f0_hz * rng.gen_range(0.99..1.01);
        let mut vowel = render_vowel_segment(profile, vowel_dur.max(0.05), f0, false, rng);
        let vramp = (0.012 * sr) as usize;
        dsp::fade(&mut vowel, vramp.min(vowel.len() / 3), true);
        dsp::fade(&mut vowel, (2 * vramp).min(vowel.len() / 3), false);
        for (i, &b) in burst.iter().enumerate() {
            if start + i < n {
                out[start + i] += b;
            }
        }
        let vstart = start + burst.len();
        for (i, &v) in vowel.iter().enumerate() {
            if vstart + i < n {
                out[vstart + i] += v;
            }
        }
        onset += period * sr;
        k += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dsp::{active_spans, envelope, percentile};

    fn profile(id: u32) -> SpeakerProfile {
        SpeakerProfile::from_id(id, 42)
    }

    #[test]
    fn rendering_is_bit_deterministic() {
        let p = profile(3);
        let a = render_base(TaskKind::Vp, &p, 5.0, 77).unwrap();
        let b = render_base(TaskKind::Vp, &p, 5.0, 77).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = render_base(TaskKind::Vp, &p, 5.0, 78).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn vp_is_steadily_voiced() {
        for id in 0..4 {
            let p = profile(id);
            let w = render_base(TaskKind::Vp, &p, 6.0, id as u64).unwrap();
            // trim the attack/release ramps before measuring steadiness
            let inner = &w.samples[8000..w.samples.len() - 8000];
            let env = envelope(inner, SAMPLE_RATE, 25.0, 10.0);
            let mean = env.iter().sum::<f64>() / env.len() as f64;
            let var = env.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / env.len() as f64;
            let cv = var.sqrt() / mean;
            assert!(cv < 0.2, "speaker {id}: envelope CV {cv}");
        }
    }

    #[test]
    fn amr_syllable_count_tracks_rate() {
        for id in 0..4 {
            let p = profile(id);
            let dur = 6.0;
            let w = render_base(TaskKind::Amr, &p, dur, 1000 + id as u64).unwrap();
            let spans = active_spans(&w, 0.15, 0.05, 0.04);
            let expected = 4.0 * p.rate_factor * dur;
            assert!(
                (spans.len() as f64 - expected).abs() <= 2.0,
                "speaker {id}: {} syllables, expected about {expected}",
                spans.len()
            );
        }
    }

    #[test]
    fn smr_has_comparable_structure() {
        let p = profile(9);
        let w = render_base(TaskKind::Smr, &p, 6.0, 5).unwrap();
        let spans = active_spans(&w, 0.15, 0.05, 0.04);
        let expected = 3.5 * p.rate_factor * 6.0;
        assert!((spans.len() as f64 - expected).abs() <= 2.0, "{}", spans.len());
    }

    #[test]
    fn amr_gaps_sit_well_below_the_segmentation_range() {
        let p = profile(2);
        let w = render_base(TaskKind::Amr, &p, 6.0, 8).unwrap();
        let env = envelope(&w.samples, SAMPLE_RATE, 10.0, 5.0);
        let gate = 0.1 * percentile(&env, 0.95);
        // longest silent run
        let mut longest = 0usize;
        let mut run = 0usize;
        for &e in &env {
            if e < gate {
                run += 1;
                longest = longest.max(run);
            } else {
                run = 0;
            }
        }
        let longest_s = longest as f64 * 0.005;
        assert!(longest_s < 0.11, "longest gap {longest_s} s");
    }
}
