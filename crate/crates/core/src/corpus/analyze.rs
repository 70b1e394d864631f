//! Independent signal-analysis oracle for the injected attributes.
//!
//! Pure measurement: shares only the DSP primitives with the injectors,
//! never their parameters or code paths. Each analyzer reduces the signal
//! to one scalar and compares against a frozen threshold; the thresholds
//! were calibrated on clean/injected/co-injected sweeps and sit near the
//! geometric middle of the two observed distributions.

use crate::audio::Waveform;
use crate::corpus::attributes::Attribute;
use crate::corpus::dsp;
use crate::corpus::TaskKind;

/// Envelope series (100 Hz) with attack/release trimmed, normalized to
/// mean 1, log-linear-detrended. The detrend removes exponential decay
/// exactly, so band analyzers see only oscillatory structure.
fn residual_envelope(w: &Waveform) -> Vec<f64> {
    let env = dsp::envelope(&w.samples, w.sample_rate_hz, 25.0, 10.0);
    let trim = 30.min(env.len() / 5);
    let inner = &env[trim..env.len() - trim];
    let mean = inner.iter().sum::<f64>() / inner.len() as f64;
    let le: Vec<f64> = inner
        .iter()
        .map(|&e| (e / mean).max(1e-3).ln())
        .collect();
    let (a, b) = dsp::linear_fit(&le);
    le.iter()
        .enumerate()
        .map(|(i, &v)| v - (a + b * i as f64))
        .collect()
}

/// Modulation-band peak of the residual envelope, in depth units.
fn envelope_band_peak(w: &Waveform, f_lo: f64, f_hi: f64) -> f64 {
    let r = residual_envelope(w);
    dsp::band_peak(&r, 100.0, f_lo, f_hi, 0.05)
}

fn decay_ratio(w: &Waveform) -> f64 {
    let sr = w.sample_rate_hz as usize;
    let n = w.samples.len();
    if n < 3 * sr {
        return 1.0;
    }
    let lead = sr / 5;
    let first = dsp::rms(&w.samples[lead..lead + sr]);
    let last = dsp::rms(&w.samples[n - sr - lead..n - lead]);
    if first > 0.0 {
        last / first
    } else {
        1.0
    }
}

fn spectral_band_ratio(w: &Waveform, num: (f64, f64), den: (f64, f64)) -> f64 {
    let spec = dsp::avg_power_spectrum(&w.samples, w.sample_rate_hz);
    let n = dsp::band_power(&spec, w.sample_rate_hz, num.0, num.1);
    let d = dsp::band_power(&spec, w.sample_rate_hz, den.0, den.1).max(1e-30);
    n / d
}

/// Smoothed f0 track statistics: (coefficient of variation, mean absolute
/// frame-to-frame relative step).
fn f0_statistics(w: &Waveform) -> Option<(f64, f64)> {
    let track = dsp::track_f0(&w.samples, w.sample_rate_hz, 40.0, 10.0, 70.0, 320.0, 0.6);
    if track.len() < 30 {
        return None;
    }
    let raw: Vec<f64> = track.iter().map(|&(_, f, _)| f).collect();
    let smooth = dsp::median_smooth(&raw, 5);
    let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
    let var = smooth.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / smooth.len() as f64;
    let cv = var.sqrt() / mean;
    // jitter statistic from the unsmoothed track, adjacent frames only
    let mut steps = Vec::new();
    for pair in track.windows(2) {
        let dt = pair[1].0 - pair[0].0;
        if dt < 0.015 {
            steps.push((pair[1].1 - pair[0].1).abs() / mean);
        }
    }
    if steps.len() < 10 {
        return None;
    }
    let jitter = steps.iter().sum::<f64>() / steps.len() as f64;
    Some((cv, jitter))
}

/// Syllable timing statistics: (rate_hz, ioi_cv, median_gap_s, gap_ratio).
fn syllable_statistics(w: &Waveform) -> Option<(f64, f64, f64, f64)> {
    let spans = dsp::active_spans(w, 0.15, 0.05, 0.04);
    if spans.len() < 4 {
        return None;
    }
    let sr = w.sample_rate_hz as f64;
    let iois: Vec<f64> = spans
        .windows(2)
        .map(|p| (p[1].0 - p[0].0) as f64 / sr)
        .collect();
    let med_ioi = dsp::median(&iois);
    let rate = 1.0 / med_ioi;
    let mean = iois.iter().sum::<f64>() / iois.len() as f64;
    let var = iois.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / iois.len() as f64;
    let cv = var.sqrt() / mean;
    let gaps: Vec<f64> = spans
        .windows(2)
        .map(|p| (p[1].0.saturating_sub(p[0].1)) as f64 / sr)
        .collect();
    let med_gap = dsp::median(&gaps);
    Some((rate, cv, med_gap, med_gap / med_ioi))
}

/// Median voiced-frame periodicity (normalized autocorrelation peak).
fn voiced_clarity(w: &Waveform) -> Option<f64> {
    let track = dsp::track_f0(&w.samples, w.sample_rate_hz, 40.0, 10.0, 70.0, 320.0, 0.0);
    if track.len() < 20 {
        return None;
    }
    let clarities: Vec<f64> = track.iter().map(|&(_, _, c)| c).collect();
    Some(dsp::median(&clarities))
}

// Frozen decision thresholds. Naming: T_<attr>[_<task>].
const T_DECAY_RATIO: f64 = 0.5;
const T_TREMOR: f64 = 0.15;
const T_FLUTTER: f64 = 0.11;
const T_UNSTEADY: f64 = 0.09;
const T_ALV: f64 = 0.10;
const T_BREATHY: f64 = 0.004;
const T_STRAINED_VP: f64 = 0.8;
const T_STRAINED_SYL: f64 = 1.2;
const T_APV_CV: f64 = 0.035;
const T_HOARSE_JITTER: f64 = 0.011;
const T_RAPID_AMR: f64 = 4.9;
const T_SLOW_AMR: f64 = 3.1;
const T_RAPID_SMR: f64 = 4.3;
const T_SLOW_SMR: f64 = 2.75;
const T_SEG_GAP_S: f64 = 0.11;
const T_SEG_RATIO: f64 = 0.42;
const T_BREAKDOWN_CV: f64 = 0.13;
const T_DISTORT_CLARITY: f64 = 0.70;

/// Decide whether the acoustic signature of `attr` is present.
///
/// Returns false for (attribute, task) pairs that never apply.
pub fn verify_attribute(w: &Waveform, attr: Attribute, task: TaskKind) -> bool {
    if !attr.applies_to(task) {
        return false;
    }
    match attr {
        Attribute::LoudnessDecay => decay_ratio(w) <= T_DECAY_RATIO,
        Attribute::Tremor => envelope_band_peak(w, 4.2, 7.0) >= T_TREMOR,
        Attribute::Flutter => envelope_band_peak(w, 7.9, 12.3) >= T_FLUTTER,
        Attribute::Unsteady => envelope_band_peak(w, 0.25, 0.95) >= T_UNSTEADY,
        Attribute::LoudnessVariability => envelope_band_peak(w, 1.3, 3.2) >= T_ALV,
        Attribute::Breathy => {
            spectral_band_ratio(w, (4900.0, 7400.0), (100.0, 1000.0)) >= T_BREATHY
        }
        Attribute::Strained => {
            let r = spectral_band_ratio(w, (1500.0, 3800.0), (150.0, 1000.0));
            let t = if task == TaskKind::Vp {
                T_STRAINED_VP
            } else {
                T_STRAINED_SYL
            };
            r >= t
        }
        Attribute::PitchVariability => {
            f0_statistics(w).map_or(false, |(cv, _)| cv >= T_APV_CV)
        }
        Attribute::HoarseHarsh => {
            f0_statistics(w).map_or(false, |(_, jitter)| jitter >= T_HOARSE_JITTER)
        }
        Attribute::RapidRate => syllable_statistics(w).map_or(false, |(rate, _, _, _)| {
            rate >= if task == TaskKind::Amr { T_RAPID_AMR } else { T_RAPID_SMR }
        }),
        Attribute::SlowRate => syllable_statistics(w).map_or(false, |(rate, _, _, _)| {
            rate <= if task == TaskKind::Amr { T_SLOW_AMR } else { T_SLOW_SMR }
        }),
        Attribute::SyllableSegmentation => syllable_statistics(w)
            .map_or(false, |(_, _, gap, ratio)| {
                gap >= T_SEG_GAP_S && ratio >= T_SEG_RATIO
            }),
        Attribute::IrregularBreakdowns => {
            syllable_statistics(w).map_or(false, |(_, cv, _, _)| cv >= T_BREAKDOWN_CV)
        }
        Attribute::Distortions => {
            voiced_clarity(w).map_or(false, |c| c <= T_DISTORT_CLARITY)
        }
    }
}

/// Raw analyzer measurements, for calibration sweeps and diagnostics.
pub fn measure(w: &Waveform, attr: Attribute) -> f64 {
    match attr {
        Attribute::LoudnessDecay => decay_ratio(w),
        Attribute::Tremor => envelope_band_peak(w, 4.2, 7.0),
        Attribute::Flutter => envelope_band_peak(w, 7.9, 12.3),
        Attribute::Unsteady => envelope_band_peak(w, 0.25, 0.95),
        Attribute::LoudnessVariability => envelope_band_peak(w, 1.3, 3.2),
        Attribute::Breathy => spectral_band_ratio(w, (4900.0, 7400.0), (100.0, 1000.0)),
        Attribute::Strained => spectral_band_ratio(w, (1500.0, 3800.0), (150.0, 1000.0)),
        Attribute::PitchVariability => f0_statistics(w).map_or(f64::NAN, |(cv, _)| cv),
        Attribute::HoarseHarsh => f0_statistics(w).map_or(f64::NAN, |(_, j)| j),
        Attribute::RapidRate | Attribute::SlowRate => {
            syllable_statistics(w).map_or(f64::NAN, |(r, _, _, _)| r)
        }
        Attribute::SyllableSegmentation => {
            syllable_statistics(w).map_or(f64::NAN, |(_, _, g, _)| g)
        }
        Attribute::IrregularBreakdowns => {
            syllable_statistics(w).map_or(f64::NAN, |(_, cv, _, _)| cv)
        }
        Attribute::Distortions => voiced_clarity(w).unwrap_or(f64::NAN),
    }
}
