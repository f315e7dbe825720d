//! Averaged, tapered periodograms with the resolution bandwidth defined as
//! the taper's equivalent noise bandwidth.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{SpectrumBin, SpectrumSegment};

pub const DEFAULT_OVERLAP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Taper {
    #[default]
    Hann,
    Rectangular,
}

impl Taper {
    /// ENBW in units of the bin spacing `fs / N`.
    pub fn enbw_factor(self) -> f64 {
        match self {
            Taper::Hann => 1.5,
            Taper::Rectangular => 1.0,
        }
    }

    /// Periodic form, so the ENBW factor is exact for every `N`.
    pub fn coefficients<T: Real>(self, n: usize) -> Vec<T> {
        match self {
            Taper::Hann => (0..n)
                .map(|i| {
                    let x = T::TAU() * T::from_count(i) / T::from_count(n);
                    T::lit(0.5) * (T::one() - x.cos())
                })
                .collect(),
            Taper::Rectangular => vec![T::one(); n],
        }
    }
}

/// Segment length whose Hann ENBW equals `rbw_hz`: `round(1.5 fs / rbw)`.
pub fn segment_length_for_rbw<T: Real>(rbw_hz: T, fs: T) -> Result<usize> {
    segment_length_with(Taper::Hann, rbw_hz, fs)
}

pub fn segment_length_with<T: Real>(taper: Taper, rbw_hz: T, fs: T) -> Result<usize> {
    if !(rbw_hz > T::zero()) || !(fs > T::lit(2.0) * rbw_hz) {
        return Err(Error::Domain(format!(
            "resolution bandwidth {rbw_hz} Hz needs 0 < rbw < fs/2 (fs = {fs} Hz)"
        )));
    }
    let n = (T::lit(taper.enbw_factor()) * fs / rbw_hz).round();
    n.to_usize()
        .filter(|&n| n >= 2)
        .ok_or_else(|| Error::Domain(format!("segment length {n} not representable")))
}

/// Hop between successive segment starts.
pub fn hop_length(segment_len: usize, overlap_fraction: f64) -> usize {
    let overlap = (overlap_fraction * segment_len as f64).round() as usize;
    (segment_len - overlap.min(segment_len - 1)).max(1)
}

/// Samples consumed by `n_averages` segments.
pub fn samples_needed(segment_len: usize, n_averages: usize, overlap_fraction: f64) -> usize {
    segment_len + (n_averages.saturating_sub(1)) * hop_length(segment_len, overlap_fraction)
}

#[derive(Debug, Clone, Copy)]
pub struct WelchParams {
    pub taper: Taper,
    pub overlap_fraction: f64,
}

impl Default for WelchParams {
    fn default() -> Self {
        WelchParams {
            taper: Taper::Hann,
            overlap_fraction: DEFAULT_OVERLAP,
        }
    }
}

struct Periodogram<'a, T: Real> {
    samples: &'a [T],
    window: Vec<T>,
    hop: usize,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Real> Periodogram<'_, T> {
    fn one(&self, index: usize) -> Vec<T> {
        let n = self.window.len();
        let start = index * self.hop;
        let mut buf: Vec<Complex<T>> = self.samples[start..start + n]
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex::new(x * w, T::zero()))
            .collect();
        self.fft.process(&mut buf);
        buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Sum over segments `[lo, hi)` by a fixed pairwise tree, so the result
    /// does not depend on scheduling.
    fn tree_sum(&self, lo: usize, hi: usize) -> Vec<T> {
        if hi - lo == 1 {
            return self.one(lo);
        }
        let mid = lo + (hi - lo) / 2;
        let (mut left, right) = rayon::join(|| self.tree_sum(lo, mid), || self.tree_sum(mid, hi));
        for (a, b) in left.iter_mut().zip(&right) {
            *a = *a + *b;
        }
        left
    }
}

/// Mean of `n_averages` tapered periodograms, as one-sided power per Hz.
/// The segment spans `[0, fs/2]`.
pub fn averaged_psd<T: Real>(
    samples: &[T],
    fs: T,
    rbw_hz: T,
    n_averages: usize,
    overlap_fraction: f64,
) -> Result<SpectrumSegment<T>> {
    averaged_psd_with(
        samples,
        fs,
        rbw_hz,
        n_averages,
        WelchParams {
            taper: Taper::Hann,
            overlap_fraction,
        },
    )
}

pub fn averaged_psd_with<T: Real>(
    samples: &[T],
    fs: T,
    rbw_hz: T,
    n_averages: usize,
    params: WelchParams,
) -> Result<SpectrumSegment<T>> {
    if n_averages < 1 {
        return Err(Error::Domain("n_averages must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&params.overlap_fraction) {
        return Err(Error::Domain(format!(
            "overlap fraction {} outside [0, 1)",
            params.overlap_fraction
        )));
    }
    let n = segment_length_with(params.taper, rbw_hz, fs)?;
    let needed = samples_needed(n, n_averages, params.overlap_fraction);
    if samples.len() < needed {
        return Err(Error::InsufficientData {
            band: None,
            needed,
            available: samples.len(),
        });
    }

    let window = params.taper.coefficients::<T>(n);
    let window_power: T = window.iter().map(|&w| w * w).sum();
    let fft = FftPlanner::<T>::new().plan_fft_forward(n);
    let pg = Periodogram {
        samples,
        window,
        hop: hop_length(n, params.overlap_fraction),
        fft,
    };
    let sum = pg.tree_sum(0, n_averages);

    let spacing = fs / T::from_count(n);
    let base = T::one() / (fs * window_power * T::from_count(n_averages));
    let two = T::lit(2.0);
    let bins = sum
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let edge = k == 0 || (n % 2 == 0 && k == n / 2);
            let scale = if edge { base } else { two * base };
            SpectrumBin {
                frequency: spacing * T::from_count(k),
                psd: p * scale,
                floored: false,
            }
        })
        .collect();

    Ok(SpectrumSegment {
        f_lo: T::zero(),
        f_hi: fs / two,
        rbw_hz: T::lit(params.taper.enbw_factor()) * spacing,
        bin_spacing_hz: spacing,
        n_averages,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_stream;

    #[test]
    fn segment_length_examples() {
        assert_eq!(
            segment_length_for_rbw(0.015625, 16384.0).unwrap(),
            1_572_864
        );
        assert_eq!(segment_length_for_rbw(4.0, 16384.0).unwrap(), 6144);
        let n = 5000usize;
        let fs = 16384.0;
        assert_eq!(segment_length_for_rbw(1.5 * fs / n as f64, fs).unwrap(), n);
        assert!(segment_length_for_rbw(0.0, 16384.0).is_err());
        assert!(segment_length_for_rbw(9000.0, 16384.0).is_err());
    }

    #[test]
    fn hann_enbw_from_coefficients() {
        for n in [64usize, 1000, 6144] {
            let w = Taper::Hann.coefficients::<f64>(n);
            let s1: f64 = w.iter().sum();
            let s2: f64 = w.iter().map(|v| v * v).sum();
            let enbw_bins = n as f64 * s2 / (s1 * s1);
            assert!((enbw_bins - 1.5).abs() < 1e-12, "{n}: {enbw_bins}");
        }
    }

    // Amplitude-calibrated Hann periodogram of white noise, divided by the
    // true density, gives the ENBW.
    #[test]
    fn hann_enbw_from_white_noise() {
        let fs = 1000.0;
        let n = 500;
        let sigma2: f64 = 4.0;
        let x: Vec<f64> = gaussian_stream(9, "enbw", n * 400, sigma2.sqrt());
        let w = Taper::Hann.coefficients::<f64>(n);
        let s1: f64 = w.iter().sum();
        let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
        let mut acc = 0.0;
        let mut count = 0usize;
        for seg in x.chunks_exact(n) {
            let mut buf: Vec<Complex<f64>> = seg
                .iter()
                .zip(&w)
                .map(|(a, b)| Complex::new(a * b, 0.0))
                .collect();
            fft.process(&mut buf);
            for c in &buf[1..n / 2] {
                acc += 2.0 * c.norm_sqr() / (s1 * s1);
                count += 1;
            }
        }
        let density = 2.0 * sigma2 / fs;
        let enbw = acc / count as f64 / density;
        let expected = 1.5 * fs / n as f64;
        assert!((enbw / expected - 1.0).abs() < 0.01, "{enbw} vs {expected}");
    }

    #[test]
    fn zero_input_gives_zero_bins() {
        let x = vec![0.0f64; 4096];
        let seg = averaged_psd(&x, 1024.0, 4.0, 5, 0.5).unwrap();
        assert!(seg.bins.iter().all(|b| b.psd == 0.0));
    }

    #[test]
    fn errors() {
        let x = vec![0.0f64; 100];
        assert!(matches!(
            averaged_psd(&x, 1024.0, 4.0, 5, 0.5),
            Err(Error::InsufficientData { .. })
        ));
        assert!(averaged_psd(&x, 1024.0, 4.0, 0, 0.5).is_err());
        assert!(averaged_psd(&x, 1024.0, 4.0, 1, 1.0).is_err());
    }

    #[test]
    fn samples_needed_at_half_overlap() {
        assert_eq!(samples_needed(100, 1, 0.5), 100);
        assert_eq!(samples_needed(100, 3, 0.5), 200);
        assert_eq!(samples_needed(1_572_864, 75, 0.5), 38 * 1_572_864);
        assert_eq!(samples_needed(101, 2, 0.0), 202);
    }

    #[test]
    fn white_noise_level_and_scatter() {
        let fs = 1024.0;
        let x: Vec<f64> = gaussian_stream(1, "w", 1 << 20, (fs / 2.0f64).sqrt());
        let seg = averaged_psd(&x, fs, 4.0, 400, 0.5).unwrap();
        let inner = &seg.bins[1..seg.bins.len() - 1];
        let mean = inner.iter().map(|b| b.psd).sum::<f64>() / inner.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(inner.iter().all(|b| (b.psd - 1.0).abs() < 0.25));
    }
}
