//! Multi-band spectrum measurement: averaged PSD estimation at fixed
//! resolution bandwidths, band stitching, vacuum-relative dB conversion and
//! dark-noise subtraction.

pub mod welch;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use welch::{
    averaged_psd, averaged_psd_with, hop_length, samples_needed, segment_length_for_rbw,
    segment_length_with, Taper, WelchParams, DEFAULT_OVERLAP,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band<T> {
    pub f_lo: T,
    pub f_hi: T,
    pub rbw_hz: T,
    pub n_averages: usize,
}

/// Ordered, non-overlapping analysis bands.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan<T> {
    pub bands: Vec<Band<T>>,
}

impl<T: Real> WindowPlan<T> {
    pub fn new(bands: Vec<Band<T>>) -> Result<Self> {
        let plan = WindowPlan { bands };
        plan.validate()?;
        Ok(plan)
    }

    pub fn single(f_lo: T, f_hi: T, rbw_hz: T, n_averages: usize) -> Result<Self> {
        Self::new(vec![Band {
            f_lo,
            f_hi,
            rbw_hz,
            n_averages,
        }])
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::Config("window plan has no bands".into()));
        }
        for (i, b) in self.bands.iter().enumerate() {
            if !(b.rbw_hz > T::zero()) {
                return Err(Error::Config(format!("band {i}: rbw must be positive")));
            }
            if !(b.f_lo >= b.rbw_hz) || !(b.f_hi > b.f_lo) {
                return Err(Error::Config(format!(
                    "band {i}: need rbw <= f_lo < f_hi, got rbw {} f_lo {} f_hi {}",
                    b.rbw_hz, b.f_lo, b.f_hi
                )));
            }
            if b.n_averages < 1 {
                return Err(Error::Config(format!("band {i}: n_averages must be >= 1")));
            }
        }
        for (i, pair) in self.bands.windows(2).enumerate() {
            if pair[1].f_lo < pair[0].f_hi {
                return Err(Error::Config(format!(
                    "bands {i} and {} overlap or are out of order",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn highest_frequency(&self) -> T {
        self.bands.iter().map(|b| b.f_hi).fold(T::zero(), T::max)
    }

    /// Same bands with every average count divided by `divisor`, rounded up.
    pub fn with_averages_divided(&self, divisor: usize) -> Self {
        WindowPlan {
            bands: self
                .bands
                .iter()
                .map(|b| Band {
                    n_averages: b.n_averages.div_ceil(divisor).max(1),
                    ..*b
                })
                .collect(),
        }
    }

    /// Samples needed by the most demanding band.
    pub fn required_samples(&self, fs: T, overlap_fraction: f64) -> Result<usize> {
        let mut most = 0;
        for b in &self.bands {
            let n = segment_length_for_rbw(b.rbw_hz, fs)?;
            most = most.max(samples_needed(n, b.n_averages, overlap_fraction));
        }
        Ok(most)
    }

    /// Checks the plan can be analyzed at sample rate `fs`.
    pub fn check_sample_rate(&self, fs: T) -> Result<()> {
        let top = self.highest_frequency();
        if fs < T::lit(2.0) * top {
            return Err(Error::Config(format!(
                "sample rate {fs} Hz is below twice the highest analysis frequency {top} Hz"
            )));
        }
        Ok(())
    }
}

fn band<T: Real>(f_lo: f64, f_hi: f64, rbw_hz: f64, n_averages: usize) -> Band<T> {
    Band {
        f_lo: T::lit(f_lo),
        f_hi: T::lit(f_hi),
        rbw_hz: T::lit(rbw_hz),
        n_averages,
    }
}

/// Vacuum-spectrum measurement plan. There is no band between 3.2 Hz and
/// 10 Hz.
pub fn fig2_plan<T: Real>() -> WindowPlan<T> {
    WindowPlan {
        bands: vec![
            band(0.8, 3.2, 0.015625, 75),
            band(10.0, 50.0, 0.25, 100),
            band(50.0, 200.0, 1.0, 100),
            band(200.0, 800.0, 2.0, 400),
            band(800.0, 3200.0, 4.0, 400),
        ],
    }
}

/// Squeezed-spectrum measurement plan.
pub fn fig3_plan<T: Real>() -> WindowPlan<T> {
    WindowPlan {
        bands: vec![
            band(1.0, 10.0, 0.0625, 30),
            band(10.0, 50.0, 0.25, 100),
            band(50.0, 200.0, 1.0, 100),
            band(200.0, 800.0, 2.0, 400),
            band(800.0, 3200.0, 4.0, 400),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumBin<T> {
    pub frequency: T,
    /// One-sided power per Hz, vacuum-relative.
    pub psd: T,
    /// Set when dark subtraction clamped this bin to the floor.
    pub floored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSegment<T> {
    pub f_lo: T,
    pub f_hi: T,
    pub rbw_hz: T,
    pub bin_spacing_hz: T,
    pub n_averages: usize,
    pub bins: Vec<SpectrumBin<T>>,
}

impl<T: Real> SpectrumSegment<T> {
    /// Bins with `f_lo <= f <= f_hi`.
    pub fn band_select(&self, f_lo: T, f_hi: T) -> SpectrumSegment<T> {
        SpectrumSegment {
            f_lo,
            f_hi,
            bins: self
                .bins
                .iter()
                .filter(|b| b.frequency >= f_lo && b.frequency <= f_hi)
                .copied()
                .collect(),
            ..*self
        }
    }

    pub fn floored_count(&self) -> usize {
        self.bins.iter().filter(|b| b.floored).count()
    }

    /// Index of the bin nearest `f`, if the grid is non-empty.
    pub fn nearest_bin(&self, f: T) -> Option<usize> {
        let first = self.bins.first()?.frequency;
        let k = ((f - first) / self.bin_spacing_hz).round().to_isize()?;
        usize::try_from(k).ok().filter(|&k| k < self.bins.len())
    }

    fn check_grid(&self, other: &Self) -> Result<()> {
        let tol = self.bin_spacing_hz * T::lit(1e-6);
        let same = self.bins.len() == other.bins.len()
            && (self.rbw_hz - other.rbw_hz).abs() <= tol
            && self
                .bins
                .iter()
                .zip(&other.bins)
                .all(|(a, b)| (a.frequency - b.frequency).abs() <= tol);
        if !same {
            return Err(Error::GridMismatch(format!(
                "segments [{}, {}] Hz at rbw {} vs [{}, {}] Hz at rbw {} do not share a bin grid",
                self.f_lo, self.f_hi, self.rbw_hz, other.f_lo, other.f_hi, other.rbw_hz
            )));
        }
        Ok(())
    }
}

/// Segments measured band by band and kept in plan order.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchedSpectrum<T> {
    pub segments: Vec<SpectrumSegment<T>>,
    /// Digest of the scenario that produced the data.
    pub provenance: String,
}

impl<T: Real> StitchedSpectrum<T> {
    pub fn bins(&self) -> impl Iterator<Item = (usize, &SpectrumBin<T>)> {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.bins.iter().map(move |b| (i, b)))
    }

    pub fn floored_count(&self) -> usize {
        self.segments.iter().map(|s| s.floored_count()).sum()
    }

    pub fn check_grid(&self, other: &Self) -> Result<()> {
        if self.segments.len() != other.segments.len() {
            return Err(Error::GridMismatch(format!(
                "{} segments vs {}",
                self.segments.len(),
                other.segments.len()
            )));
        }
        self.segments
            .iter()
            .zip(&other.segments)
            .try_for_each(|(a, b)| a.check_grid(b))
    }
}

/// One averaged PSD per band, restricted to the band.
pub fn run_plan<T: Real>(
    samples: &[T],
    fs: T,
    plan: &WindowPlan<T>,
) -> Result<StitchedSpectrum<T>> {
    run_plan_with(samples, fs, plan, WelchParams::default())
}

pub fn run_plan_with<T: Real>(
    samples: &[T],
    fs: T,
    plan: &WindowPlan<T>,
    params: WelchParams,
) -> Result<StitchedSpectrum<T>> {
    plan.validate()?;
    plan.check_sample_rate(fs)?;
    let segments = plan
        .bands
        .iter()
        .enumerate()
        .map(|(i, b)| {
            averaged_psd_with(samples, fs, b.rbw_hz, b.n_averages, params)
                .map(|seg| seg.band_select(b.f_lo, b.f_hi))
                .map_err(|e| match e {
                    Error::InsufficientData {
                        needed, available, ..
                    } => Error::InsufficientData {
                        band: Some(i),
                        needed,
                        available,
                    },
                    other => other,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StitchedSpectrum {
        segments,
        provenance: String::new(),
    })
}

/// Vacuum level a spectrum is referred to.
#[derive(Debug, Clone, Copy)]
pub enum VacuumReference<'a, T> {
    /// Analytic flat level (per Hz).
    Flat(T),
    /// Measured vacuum spectrum on the same grid.
    Measured(&'a StitchedSpectrum<T>),
}

impl<T: Real> VacuumReference<'_, T> {
    pub fn level(&self, segment: usize, bin: usize) -> T {
        match self {
            VacuumReference::Flat(v) => *v,
            VacuumReference::Measured(s) => s.segments[segment].bins[bin].psd,
        }
    }

    pub fn check_against(&self, spectrum: &StitchedSpectrum<T>) -> Result<()> {
        match self {
            VacuumReference::Flat(v) if !(*v > T::zero()) => Err(Error::Domain(format!(
                "vacuum reference level {v} must be positive"
            ))),
            VacuumReference::Flat(_) => Ok(()),
            VacuumReference::Measured(r) => {
                spectrum.check_grid(r)?;
                if r.bins().any(|(_, b)| !(b.psd > T::zero())) {
                    return Err(Error::Domain(
                        "vacuum reference spectrum has a non-positive bin".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbSegment<T> {
    pub f_lo: T,
    pub f_hi: T,
    pub rbw_hz: T,
    pub n_averages: usize,
    /// `(frequency, dB relative to vacuum)`.
    pub bins: Vec<(T, T)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbSpectrum<T> {
    pub segments: Vec<DbSegment<T>>,
}

/// Per-bin `10 log10(psd / reference)`.
pub fn to_db_rel_vacuum<T: Real>(
    spectrum: &StitchedSpectrum<T>,
    reference: VacuumReference<'_, T>,
) -> Result<DbSpectrum<T>> {
    reference.check_against(spectrum)?;
    let ten = T::lit(10.0);
    let segments = spectrum
        .segments
        .iter()
        .enumerate()
        .map(|(si, seg)| DbSegment {
            f_lo: seg.f_lo,
            f_hi: seg.f_hi,
            rbw_hz: seg.rbw_hz,
            n_averages: seg.n_averages,
            bins: seg
                .bins
                .iter()
                .enumerate()
                .map(|(bi, b)| (b.frequency, ten * (b.psd / reference.level(si, bi)).log10()))
                .collect(),
        })
        .collect();
    Ok(DbSpectrum { segments })
}

/// Per-bin `signal - dark`. Results at or below zero are clamped to `floor`
/// (default: the smallest positive difference times 1e-3) and flagged.
pub fn subtract_dark<T: Real>(
    signal: &SpectrumSegment<T>,
    dark: &SpectrumSegment<T>,
    floor: Option<T>,
) -> Result<SpectrumSegment<T>> {
    signal.check_grid(dark)?;
    let diffs: Vec<T> = signal
        .bins
        .iter()
        .zip(&dark.bins)
        .map(|(s, d)| s.psd - d.psd)
        .collect();
    let floor = floor.unwrap_or_else(|| default_floor(&diffs, signal));
    let bins = signal
        .bins
        .iter()
        .zip(diffs)
        .map(|(s, diff)| {
            if diff > T::zero() {
                SpectrumBin {
                    psd: diff,
                    floored: false,
                    ..*s
                }
            } else {
                SpectrumBin {
                    psd: floor,
                    floored: true,
                    ..*s
                }
            }
        })
        .collect();
    Ok(SpectrumSegment { bins, ..*signal })
}

fn default_floor<T: Real>(diffs: &[T], signal: &SpectrumSegment<T>) -> T {
    let min_pos = |it: &mut dyn Iterator<Item = T>| {
        it.filter(|v| *v > T::zero())
            .fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.min(v))))
    };
    let smallest = min_pos(&mut diffs.iter().copied())
        .or_else(|| min_pos(&mut signal.bins.iter().map(|b| b.psd)))
        .unwrap_or_else(T::min_positive_value);
    smallest * T::lit(1e-3)
}

pub fn subtract_dark_stitched<T: Real>(
    signal: &StitchedSpectrum<T>,
    dark: &StitchedSpectrum<T>,
    floor: Option<T>,
) -> Result<StitchedSpectrum<T>> {
    signal.check_grid(dark)?;
    let segments = signal
        .segments
        .iter()
        .zip(&dark.segments)
        .map(|(s, d)| subtract_dark(s, d, floor))
        .collect::<Result<Vec<_>>>()?;
    Ok(StitchedSpectrum {
        segments,
        provenance: signal.provenance.clone(),
    })
}
