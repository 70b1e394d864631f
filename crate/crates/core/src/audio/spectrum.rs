//! Power spectra of windowed frames.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// FFT-backed power-spectrum computer for fixed-size frames.
pub struct SpectrumAnalyzer {
    nfft: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(nfft: usize) -> Self {
        let mut planner = FftPlanner::new();
        SpectrumAnalyzer {
            nfft,
            fft: planner.plan_fft_forward(nfft),
        }
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    pub fn num_bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    /// |DFT|^2 of a frame zero-padded to nfft; returns nfft/2 + 1 bins.
    pub fn power_spectrum(&self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() > self.nfft {
            return Err(Error::InvalidInput(format!(
                "frame length {} exceeds nfft {}",
                frame.len(),
                self.nfft
            )));
        }
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.nfft)
            .collect();
        self.fft.process(&mut buf);
        Ok(buf[..self.num_bins()].iter().map(|c| c.norm_sqr()).collect())
    }
}
