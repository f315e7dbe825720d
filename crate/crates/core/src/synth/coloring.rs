//! Colored Gaussian noise by FFT-domain shaping.
//!
//! A zero-phase FIR kernel is built from the square root of the target
//! one-sided PSD on an `M`-point grid, then applied to a white stream with
//! overlap-save convolution over `2M`-sample blocks. The first `M - 1`
//! outputs of every block are wrapped-around circular convolution and are
//! discarded, so the output is a linear (stationary) filtering of the white
//! stream with `|H(f)|^2` equal to the target at every grid frequency.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::rng::gaussian_stream;
use crate::scalar::Real;

/// Default frequency spacing of the kernel grid (Hz).
pub const DEFAULT_RESOLUTION_HZ: f64 = 1.0 / 32.0;

const MIN_KERNEL_LEN: usize = 64;

pub struct ColoringFilter<T: Real> {
    kernel_len: usize,
    block_len: usize,
    kernel_spectrum: Vec<Complex<T>>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> ColoringFilter<T> {
    /// Kernel length for a sample rate, grid resolution and run length.
    /// Never longer than needed to cover the run.
    pub fn kernel_len_for(fs: T, resolution_hz: T, n_samples: usize) -> usize {
        let wanted = (fs / resolution_hz)
            .ceil()
            .to_usize()
            .unwrap_or(MIN_KERNEL_LEN);
        let cap = n_samples.next_power_of_two();
        wanted.next_power_of_two().min(cap).max(MIN_KERNEL_LEN)
    }

    /// Designs the filter for a one-sided PSD `psd(f)`, in units per Hz. The
    /// DC bin takes the value at the first grid frequency.
    pub fn design(psd: impl Fn(T) -> T, fs: T, kernel_len: usize) -> Self {
        assert!(
            kernel_len >= 2 && kernel_len.is_multiple_of(2),
            "kernel length must be even"
        );
        let m = kernel_len;
        let df = fs / T::from_count(m);
        let half_fs = fs / T::lit(2.0);

        let mut spectrum: Vec<Complex<T>> = (0..m)
            .map(|k| {
                let folded = k.min(m - k);
                let f = if folded == 0 {
                    df
                } else {
                    df * T::from_count(folded)
                };
                let s = psd(f).max(T::zero());
                Complex::new((s * half_fs).sqrt(), T::zero())
            })
            .collect();

        let mut planner = FftPlanner::<T>::new();
        planner.plan_fft_inverse(m).process(&mut spectrum);
        let scale = T::one() / T::from_count(m);
        // Centre the zero-phase response to make it causal.
        let mut padded = vec![Complex::new(T::zero(), T::zero()); 2 * m];
        for (i, c) in spectrum.iter().enumerate() {
            padded[(i + m / 2) % m] = Complex::new(c.re * scale, T::zero());
        }

        let block_len = 2 * m;
        let forward = planner.plan_fft_forward(block_len);
        let inverse = planner.plan_fft_inverse(block_len);
        forward.process(&mut padded);

        ColoringFilter {
            kernel_len: m,
            block_len,
            kernel_spectrum: padded,
            forward,
            inverse,
        }
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    /// Valid outputs produced per block.
    fn step(&self) -> usize {
        self.block_len - (self.kernel_len - 1)
    }

    /// White samples consumed to produce `n` outputs.
    pub fn input_len(&self, n: usize) -> usize {
        let blocks = n.div_ceil(self.step());
        blocks * self.step() + self.kernel_len - 1
    }

    /// Filters a unit-variance white stream. `white.len()` must be
    /// `self.input_len(n)`.
    pub fn apply(&self, white: &[T], n: usize) -> Vec<T> {
        assert_eq!(white.len(), self.input_len(n), "white stream length");
        let step = self.step();
        let discard = self.kernel_len - 1;
        let norm = T::one() / T::from_count(self.block_len);
        let blocks = n.div_ceil(step);

        let pieces: Vec<Vec<T>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let start = b * step;
                let mut buf: Vec<Complex<T>> = white[start..start + self.block_len]
                    .iter()
                    .map(|&x| Complex::new(x, T::zero()))
                    .collect();
                self.forward.process(&mut buf);
                for (x, h) in buf.iter_mut().zip(&self.kernel_spectrum) {
                    *x = *x * *h;
                }
                self.inverse.process(&mut buf);
                buf[discard..].iter().map(|c| c.re * norm).collect()
            })
            .collect();

        let mut out = Vec::with_capacity(blocks * step);
        for p in pieces {
            out.extend(p);
        }
        out.truncate(n);
        out
    }
}

/// `n` samples of zero-mean Gaussian noise with one-sided PSD `psd(f)`.
pub fn colored_noise<T: Real>(
    psd: impl Fn(T) -> T,
    fs: T,
    n: usize,
    resolution_hz: T,
    seed: u64,
    tag: &str,
) -> Vec<T> {
    if n == 0 {
        return Vec::new();
    }
    let m = ColoringFilter::<T>::kernel_len_for(fs, resolution_hz, n);
    let filter = ColoringFilter::design(psd, fs, m);
    let white = gaussian_stream(seed, tag, filter.input_len(n), T::one());
    filter.apply(&white, n)
}
