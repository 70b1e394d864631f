//! Triangular mel filterbank.
//!
//! Filters are equally spaced on the mel scale m = 2595 log10(1 + f/700),
//! triangular in Hz between their mel-spaced edges. Each FFT bin's weight is
//! the triangle averaged over that bin's frequency band (analytic
//! integration) rather than sampled at the bin center, so narrow
//! low-frequency filters still collect the energy of the band they overlap.

use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Sparse row: weights for bins `start..start + weights.len()`.
#[derive(Debug, Clone)]
struct FilterRow {
    start: usize,
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MelFilterbank {
    rows: Vec<FilterRow>,
    centers_hz: Vec<f64>,
    num_bins: usize,
}

impl MelFilterbank {
    pub fn new(num_mels: usize, nfft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
            return Err(Error::Config(format!(
                "mel band edges must satisfy 0 <= fmin < fmax <= {nyquist}, got [{fmin}, {fmax}]"
            )));
        }
        if num_mels == 0 {
            return Err(Error::Config("num_mels must be positive".into()));
        }
        let num_bins = nfft / 2 + 1;
        let bin_width = sample_rate as f64 / nfft as f64;

        let mel_lo = hz_to_mel(fmin);
        let mel_hi = hz_to_mel(fmax);
        let edges_hz: Vec<f64> = (0..num_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (num_mels + 1) as f64))
            .collect();

        let mut rows = Vec::with_capacity(num_mels);
        for k in 0..num_mels {
            let (lo, peak, hi) = (edges_hz[k], edges_hz[k + 1], edges_hz[k + 2]);
            let first_bin = ((lo - bin_width / 2.0) / bin_width).ceil().max(0.0) as usize;
            let mut weights = Vec::new();
            let mut start = first_bin;
            let mut started = false;
            for j in first_bin..num_bins {
                let band_lo = j as f64 * bin_width - bin_width / 2.0;
                let band_hi = band_lo + bin_width;
                if band_lo >= hi {
                    break;
                }
                let w = (triangle_integral(band_lo.max(lo), band_hi.min(peak), lo, peak, true)
                    + triangle_integral(band_lo.max(peak), band_hi.min(hi), peak, hi, false))
                    / bin_width;
                if !started {
                    if w > 0.0 {
                        started = true;
                        start = j;
                        weights.push(w);
                    }
                } else {
                    weights.push(w);
                }
            }
            while weights.last() == Some(&0.0) {
                weights.pop();
            }
            if weights.is_empty() || weights.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config(format!(
                    "mel filter {k} is all-zero: {num_mels} filters exceed the resolution of a {nfft}-point FFT"
                )));
            }
            rows.push(FilterRow { start, weights });
        }
        Ok(MelFilterbank {
            rows,
            centers_hz: edges_hz[1..=num_mels].to_vec(),
            num_bins,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.rows.len()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Designed peak frequency of each filter, strictly increasing.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Apply to one power spectrum (length num_bins).
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        debug_assert_eq!(power.len(), self.num_bins);
        self.rows
            .iter()
            .map(|row| {
                row.weights
                    .iter()
                    .zip(&power[row.start..row.start + row.weights.len()])
                    .map(|(&w, &p)| w * p)
                    .sum()
            })
            .collect()
    }

    /// Dense [num_mels, num_bins] matrix view.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; self.num_bins];
                dense[row.start..row.start + row.weights.len()].copy_from_slice(&row.weights);
                dense
            })
            .collect()
    }
}

/// Integral of the rising (or falling) ramp of a unit triangle over [a, b].
fn triangle_integral(a: f64, b: f64, e0: f64, e1: f64, rising: bool) -> f64 {
    if b <= a || e1 <= e0 {
        return 0.0;
    }
    let span = e1 - e0;
    if rising {
        // ramp (f - e0) / span
        (((b - e0) * (b - e0)) - ((a - e0) * (a - e0))) / (2.0 * span)
    } else {
        // ramp (e1 - f) / span
        (((e1 - a) * (e1 - a)) - ((e1 - b) * (e1 - b))) / (2.0 * span)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_of_700_hz() {
        let m = hz_to_mel(700.0);
        assert!((m - 781.17).abs() < 0.01, "mel(700) = {m}");
    }

    #[test]
    fn mel_hz_round_trip() {
        for f in [20.0, 150.0, 700.0, 3200.0, 7600.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn default_bank_has_positive_rows_and_monotone_centers() {
        let fb = MelFilterbank::new(128, 512, 16000, 20.0, 7600.0).unwrap();
        assert_eq!(fb.num_filters(), 128);
        let m = fb.matrix();
        for (k, row) in m.iter().enumerate() {
            assert_eq!(row.len(), 257);
            let sum: f64 = row.iter().sum();
            assert!(sum > 0.0, "filter {k} sums to {sum}");
            assert!(row.iter().all(|&w| w >= 0.0));
        }
        for pair in fb.centers_hz().windows(2) {
            assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn sparse_apply_matches_dense_matrix() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let fb = MelFilterbank::new(128, 512, 16000, 20.0, 7600.0).unwrap();
        let power: Vec<f64> = (0..257).map(|_| rng.gen_range(0.0..2.0)).collect();
        let sparse = fb.apply(&power);
        let dense = fb.matrix();
        for (k, &s) in sparse.iter().enumerate() {
            let d: f64 = dense[k].iter().zip(&power).map(|(w, p)| w * p).sum();
            assert!((s - d).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_band_edges_rejected() {
        assert!(MelFilterbank::new(128, 512, 16000, 7600.0, 20.0).is_err());
        assert!(MelFilterbank::new(128, 512, 16000, 20.0, 9000.0).is_err());
    }
}
