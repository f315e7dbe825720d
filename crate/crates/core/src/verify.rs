//! Targeted checks of simulated spectra: LO-power linearity, whiteness,
//! squeezing level, and calibration of the dark and parasitic models from
//! anchor levels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_models::db_to_variance;
use crate::scalar::Real;
use crate::spectral::{segment_length_for_rbw, StitchedSpectrum, VacuumReference, WindowPlan};
use crate::synth::{DarkNoiseModel, ParasiticModel, DEFAULT_PARASITIC_F_MIN_HZ};

/// Instrument uncertainty used as the default dB tolerance.
pub const DEFAULT_TOLERANCE_DB: f64 = 0.5;
pub const DEFAULT_SLOPE_TOLERANCE_DB_PER_DECADE: f64 = 0.2;
pub const DEFAULT_MASK_HALF_WIDTH_BINS: usize = 2;
/// Log-spaced cells per decade used by the slope fit.
pub const CELLS_PER_DECADE: f64 = 10.0;

const DB_PER_NEPER: f64 = 4.342_944_819_032_518;

/// Variance inflation of a mean of Hann periodograms at 50% overlap
/// relative to independent segments: adjacent-segment correlation 1/9.
const OVERLAP_INFLATION: f64 = 1.0 + 2.0 / 9.0;
/// Variance inflation of a mean over adjacent Hann bins: bin correlations
/// 4/9 and 1/36 at lags one and two.
const BIN_INFLATION: f64 = 1.0 + 2.0 * (4.0 / 9.0) + 2.0 / 36.0;

/// Relative standard deviation of a single bin of an averaged estimate.
pub fn bin_relative_sd(n_averages: usize) -> f64 {
    (OVERLAP_INFLATION / n_averages as f64).sqrt()
}

/// Relative standard deviation of a mean over `n_bins` adjacent bins of a
/// flat spectrum.
pub fn band_mean_relative_sd(n_bins: usize, n_averages: usize) -> f64 {
    let eff = (n_bins as f64 / BIN_INFLATION).max(1.0);
    bin_relative_sd(n_averages) / eff.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub units: String,
}

impl Quantity {
    pub fn new(value: f64, units: &str) -> Self {
        Quantity {
            value,
            units: units.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckDetail {
    pub label: String,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Informational details do not gate the check.
    #[serde(default)]
    pub gating: bool,
}

impl CheckDetail {
    fn new(label: String, measured: f64, expected: f64, tolerance: f64, gating: bool) -> Self {
        CheckDetail {
            label,
            measured,
            expected,
            tolerance,
            passed: within(measured, expected, tolerance),
            gating,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub measured: Quantity,
    pub expected: Quantity,
    pub tolerance: Quantity,
    pub details: Vec<CheckDetail>,
    #[serde(default)]
    pub info: BTreeMap<String, f64>,
}

impl CheckReport {
    /// Report for a scalar comparison plus gating details.
    pub fn build(
        name: &str,
        measured: f64,
        expected: f64,
        tolerance: f64,
        units: &str,
        details: Vec<CheckDetail>,
    ) -> Self {
        let passed = within(measured, expected, tolerance)
            && details.iter().filter(|d| d.gating).all(|d| d.passed);
        CheckReport {
            name: name.to_string(),
            passed,
            measured: Quantity::new(measured, units),
            expected: Quantity::new(expected, units),
            tolerance: Quantity::new(tolerance, units),
            details,
            info: BTreeMap::new(),
        }
    }

    pub fn with_info(mut self, key: &str, value: f64) -> Self {
        self.info.insert(key.to_string(), value);
        self
    }

    pub fn summary_line(&self) -> String {
        format!(
            "[{}] {}: measured {:.4} {} expected {:.4} +- {:.4}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured.value,
            self.measured.units,
            self.expected.value,
            self.tolerance.value
        )
    }
}

fn within(measured: f64, expected: f64, tolerance: f64) -> bool {
    (measured - expected).abs() <= tolerance
}

/// Per-segment, per-bin exclusion flags aligned with a stitched spectrum.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BinMask {
    pub masked: Vec<Vec<bool>>,
}

impl BinMask {
    pub fn is_masked(&self, segment: usize, bin: usize) -> bool {
        self.masked
            .get(segment)
            .and_then(|s| s.get(bin))
            .copied()
            .unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.masked.iter().flatten().filter(|m| **m).count()
    }
}

/// Bin frequencies of each plan band at sample rate `fs`, exactly as
/// [`crate::spectral::run_plan`] lays them out.
pub fn plan_grid<T: Real>(plan: &WindowPlan<T>, fs: T) -> Result<Vec<Vec<T>>> {
    plan.bands
        .iter()
        .map(|b| {
            let n = segment_length_for_rbw(b.rbw_hz, fs)?;
            let spacing = fs / T::from_count(n);
            Ok((0..=n / 2)
                .map(|k| spacing * T::from_count(k))
                .filter(|f| *f >= b.f_lo && *f <= b.f_hi)
                .collect())
        })
        .collect()
}

/// Masks `half_width_bins` on either side of the bin nearest each of the
/// first `n_harmonics` multiples of `fundamental_hz`.
pub fn mains_mask<T: Real>(
    plan: &WindowPlan<T>,
    fs: T,
    fundamental_hz: T,
    n_harmonics: u32,
    half_width_bins: usize,
) -> Result<BinMask> {
    let grids = plan_grid(plan, fs)?;
    let masked = grids
        .iter()
        .map(|grid| {
            let mut m = vec![false; grid.len()];
            if grid.len() < 2 {
                return m;
            }
            let first = grid[0];
            let spacing = grid[1] - grid[0];
            for h in 1..=n_harmonics {
                let line = fundamental_hz * T::lit(f64::from(h));
                let k0 = ((line - first) / spacing)
                    .round()
                    .to_i64()
                    .unwrap_or(i64::MIN);
                let hw = half_width_bins as i64;
                for k in (k0 - hw)..=(k0 + hw) {
                    if let Ok(k) = usize::try_from(k) {
                        if k < m.len() {
                            m[k] = true;
                        }
                    }
                }
            }
            m
        })
        .collect();
    Ok(BinMask { masked })
}

struct Selected {
    segment: usize,
    frequency: f64,
    psd: f64,
    reference: f64,
}

fn select_bins<T: Real>(
    spectrum: &StitchedSpectrum<T>,
    reference: Option<&VacuumReference<'_, T>>,
    f_lo: f64,
    f_hi: f64,
    mask: Option<&BinMask>,
) -> Vec<Selected> {
    let mut out = Vec::new();
    for (si, seg) in spectrum.segments.iter().enumerate() {
        for (bi, b) in seg.bins.iter().enumerate() {
            let f = b.frequency.as_f64();
            if f < f_lo || f > f_hi || mask.is_some_and(|m| m.is_masked(si, bi)) {
                continue;
            }
            out.push(Selected {
                segment: si,
                frequency: f,
                psd: b.psd.as_f64(),
                reference: reference.map_or(1.0, |r| r.level(si, bi).as_f64()),
            });
        }
    }
    out
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<(f64, usize)> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| (s / n as f64, n))
}

/// Power-domain mean PSD over unmasked bins in `[f_lo, f_hi]`.
pub fn band_mean_psd<T: Real>(
    spectrum: &StitchedSpectrum<T>,
    f_lo: f64,
    f_hi: f64,
    mask: Option<&BinMask>,
) -> Option<(f64, usize)> {
    mean(
        select_bins(spectrum, None, f_lo, f_hi, mask)
            .iter()
            .map(|b| b.psd),
    )
}

fn fmt_uw(p: f64) -> String {
    format!("{:.0}uW", p * 1e6)
}

/// Pairwise band-mean offsets against `10 log10(P_a / P_b)`.
///
/// The gating offset of each pair pools every unmasked bin of the spectrum;
/// per-segment offsets are reported alongside without gating.
pub fn check_linearity<T: Real>(
    spectra: &[(f64, StitchedSpectrum<T>)],
    mask: Option<&BinMask>,
    tolerance_db: f64,
) -> Result<CheckReport> {
    if spectra.len() < 2 {
        return Err(Error::Domain(format!(
            "linearity needs at least two LO powers, got {}",
            spectra.len()
        )));
    }
    for (_, s) in &spectra[1..] {
        spectra[0].1.check_grid(s)?;
    }
    let n_seg = spectra[0].1.segments.len();
    // Per spectrum: pooled mean, then one mean per segment.
    let means: Vec<(Option<f64>, Vec<Option<f64>>)> = spectra
        .iter()
        .map(|(_, s)| {
            let bins = select_bins(s, None, f64::NEG_INFINITY, f64::INFINITY, mask);
            let pooled = mean(bins.iter().map(|b| b.psd)).map(|(m, _)| m);
            let per_seg = (0..n_seg)
                .map(|si| {
                    mean(bins.iter().filter(|b| b.segment == si).map(|b| b.psd)).map(|(m, _)| m)
                })
                .collect();
            (pooled, per_seg)
        })
        .collect();
    if means[0].0.is_none() {
        return Err(Error::Domain("linearity: every bin is masked".into()));
    }
    let offset = |a: f64, b: f64| {
        if a > 0.0 && b > 0.0 {
            10.0 * (a / b).log10()
        } else {
            f64::NAN
        }
    };

    let mut details = Vec::new();
    for i in 0..spectra.len() {
        for j in (i + 1)..spectra.len() {
            let (pa, pb) = (spectra[i].0, spectra[j].0);
            let expected = 10.0 * (pa / pb).log10();
            let pair = format!("{}/{}", fmt_uw(pa), fmt_uw(pb));
            if let (Some(a), Some(b)) = (means[i].0, means[j].0) {
                details.push(CheckDetail::new(
                    pair.clone(),
                    offset(a, b),
                    expected,
                    tolerance_db,
                    true,
                ));
            }
            for si in 0..n_seg {
                if let (Some(a), Some(b)) = (means[i].1[si], means[j].1[si]) {
                    details.push(CheckDetail::new(
                        format!("{pair} segment {si}"),
                        offset(a, b),
                        expected,
                        tolerance_db,
                        false,
                    ));
                }
            }
        }
    }
    // Headline: the gating pair that strays furthest.
    let worst = details
        .iter()
        .filter(|d| d.gating)
        .max_by(|a, b| {
            let da = (a.measured - a.expected).abs();
            let db = (b.measured - b.expected).abs();
            da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Greater)
        })
        .expect("at least one pair")
        .clone();
    Ok(CheckReport::build(
        "lo_power_linearity",
        worst.measured,
        worst.expected,
        tolerance_db,
        "dB",
        details,
    ))
}

/// Weighted least-squares slope of `y` against `x`. `y` is taken relative
/// to its first entry so a constant input gives exactly zero.
fn weighted_slope(points: &[(f64, f64, f64)]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let y0 = points[0].1;
    let sw: f64 = points.iter().map(|p| p.2).sum();
    let xm = points.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ym = points.iter().map(|p| p.2 * (p.1 - y0)).sum::<f64>() / sw;
    let sxy: f64 = points
        .iter()
        .map(|p| p.2 * (p.0 - xm) * ((p.1 - y0) - ym))
        .sum();
    let sxx: f64 = points.iter().map(|p| p.2 * (p.0 - xm).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Slope of dB against `log10 f` over unmasked bins, plus per-segment
/// deviations from the band mean.
///
/// Bins are first pooled into log-spaced cells and averaged in power, so the
/// fit does not inherit the downward bias of the log of a chi-squared
/// estimate, which differs between segments with different averaging.
pub fn check_whiteness<T: Real>(
    spectrum: &StitchedSpectrum<T>,
    band: (f64, f64),
    mask: Option<&BinMask>,
    slope_tolerance_db_per_decade: f64,
) -> Result<CheckReport> {
    let bins = select_bins(spectrum, None, band.0, band.1, mask);
    if bins.is_empty() {
        return Err(Error::Domain(format!(
            "whiteness: no unmasked bins in [{}, {}] Hz",
            band.0, band.1
        )));
    }
    if bins.iter().any(|b| !(b.psd > 0.0)) {
        return Err(Error::Domain("whiteness: non-positive bin in band".into()));
    }

    let mut cells: BTreeMap<i64, (f64, f64, usize, usize)> = BTreeMap::new();
    for b in &bins {
        let key = (CELLS_PER_DECADE * b.frequency.log10()).floor() as i64;
        let k = spectrum.segments[b.segment].n_averages;
        let e = cells.entry(key).or_insert((0.0, 0.0, 0, 0));
        e.0 += b.psd;
        e.1 += b.frequency.log10();
        e.2 += 1;
        e.3 += k;
    }
    let points: Vec<(f64, f64, f64)> = cells
        .values()
        .map(|&(sum, logf, n, ksum)| {
            let n_f = n as f64;
            let avg_k = ksum as f64 / n_f;
            (logf / n_f, 10.0 * (sum / n_f).log10(), n_f * avg_k)
        })
        .collect();
    let slope = weighted_slope(&points);

    let (band_mean, band_n) = mean(bins.iter().map(|b| b.psd)).expect("non-empty");
    let mut details = Vec::new();
    for si in 0..spectrum.segments.len() {
        let Some((m, n)) = mean(bins.iter().filter(|b| b.segment == si).map(|b| b.psd)) else {
            continue;
        };
        let k = spectrum.segments[si].n_averages;
        let rel_seg = band_mean_relative_sd(n, k);
        let rel_band = band_mean_relative_sd(band_n, k);
        let sd_db = DB_PER_NEPER * (rel_seg.powi(2) + rel_band.powi(2)).sqrt();
        details.push(CheckDetail::new(
            format!("segment {si} deviation from band mean"),
            10.0 * (m / band_mean).log10(),
            0.0,
            3.0 * sd_db,
            true,
        ));
    }

    Ok(CheckReport::build(
        "whiteness",
        slope,
        0.0,
        slope_tolerance_db_per_decade,
        "dB/decade",
        details,
    )
    .with_info("band_mean_psd", band_mean)
    .with_info("unmasked_bins", band_n as f64))
}

/// Squeezing in dB below the vacuum reference, from power-domain band means
/// over unmasked bins.
pub fn measured_squeezing<T: Real>(
    squeezed: &StitchedSpectrum<T>,
    reference: VacuumReference<'_, T>,
    band: (f64, f64),
    mask: Option<&BinMask>,
    expected_db: f64,
    tolerance_db: f64,
) -> Result<CheckReport> {
    reference.check_against(squeezed)?;
    let bins = select_bins(squeezed, Some(&reference), band.0, band.1, mask);
    if bins.is_empty() {
        return Err(Error::Domain(format!(
            "squeezing: no unmasked bins in [{}, {}] Hz",
            band.0, band.1
        )));
    }
    let sum_sq: f64 = bins.iter().map(|b| b.psd).sum();
    let sum_ref: f64 = bins.iter().map(|b| b.reference).sum();
    if !(sum_sq > 0.0) {
        return Err(Error::Domain(
            "squeezing: zero measured power in band".into(),
        ));
    }
    let measured = 10.0 * (sum_ref / sum_sq).log10();

    // Estimator spread of the measured band mean (and of a measured
    // reference), bin-correlation corrected.
    let measured_ref = matches!(reference, VacuumReference::Measured(_));
    let rel_var = |vals: &mut dyn Iterator<Item = (f64, usize)>, total: f64| -> f64 {
        vals.map(|(p, k)| p * p * bin_relative_sd(k).powi(2))
            .sum::<f64>()
            * BIN_INFLATION
            / (total * total)
    };
    let k_of = |b: &Selected| squeezed.segments[b.segment].n_averages;
    let mut var = rel_var(&mut bins.iter().map(|b| (b.psd, k_of(b))), sum_sq);
    if measured_ref {
        var += rel_var(&mut bins.iter().map(|b| (b.reference, k_of(b))), sum_ref);
    }
    let uncertainty_db = DB_PER_NEPER * var.sqrt();

    let mut details = Vec::new();
    for si in 0..squeezed.segments.len() {
        let seg: Vec<&Selected> = bins.iter().filter(|b| b.segment == si).collect();
        if seg.is_empty() {
            continue;
        }
        let s: f64 = seg.iter().map(|b| b.psd).sum();
        let r: f64 = seg.iter().map(|b| b.reference).sum();
        details.push(CheckDetail::new(
            format!("segment {si}"),
            10.0 * (r / s).log10(),
            expected_db,
            tolerance_db,
            false,
        ));
    }
    let best_bin = bins
        .iter()
        .map(|b| 10.0 * (b.reference / b.psd).log10())
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(CheckReport::build(
        "squeezing_level",
        measured,
        expected_db,
        tolerance_db,
        "dB",
        details,
    )
    .with_info("estimator_uncertainty_db", uncertainty_db)
    .with_info("max_single_bin_db", best_bin)
    .with_info("unmasked_bins", bins.len() as f64))
}

/// Dark-noise model solved from two levels at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkCalibration<T> {
    pub model: DarkNoiseModel<T>,
    /// Dark PSD at the calibration frequency.
    pub dark_at_f: T,
    /// The two levels coincide: no dark noise, knee undefined.
    pub degenerate: bool,
}

/// Dark noise from an observed level and the level recovered after dark
/// subtraction at `f`, with the flat floor set to `midband_floor_db`.
pub fn calibrate_dark<T: Real>(
    observed_db_at_f: T,
    recovered_db_at_f: T,
    f: T,
    midband_floor_db: T,
) -> Result<DarkCalibration<T>> {
    if !(f > T::zero()) {
        return Err(Error::Calibration(
            "calibration frequency must be positive".into(),
        ));
    }
    let observed = db_to_variance(observed_db_at_f);
    let recovered = db_to_variance(recovered_db_at_f);
    if recovered > observed || observed.is_nan() || recovered.is_nan() {
        return Err(Error::Calibration(format!(
            "recovered level {recovered_db_at_f} dB lies above observed {observed_db_at_f} dB"
        )));
    }
    let dark_at_f = observed - recovered;
    if dark_at_f == T::zero() {
        return Ok(DarkCalibration {
            model: DarkNoiseModel {
                floor_rel_vacuum: T::zero(),
                knee_hz: T::zero(),
            },
            dark_at_f,
            degenerate: true,
        });
    }
    let floor = db_to_variance(midband_floor_db);
    if dark_at_f < floor {
        return Err(Error::Calibration(format!(
            "dark level {dark_at_f} at {f} Hz is below the mid-band floor {floor}"
        )));
    }
    Ok(DarkCalibration {
        model: DarkNoiseModel {
            floor_rel_vacuum: floor,
            knee_hz: f * (dark_at_f / floor - T::one()),
        },
        dark_at_f,
        degenerate: false,
    })
}

/// Power-law parasitic model whose excess over the intrinsic squeezed level
/// at `f` accounts for the recovered level.
pub fn calibrate_parasitic<T: Real>(
    recovered_db_at_f: T,
    intrinsic_db: T,
    f: T,
    alpha: T,
) -> Result<ParasiticModel<T>> {
    if !(f > T::zero()) || !(alpha >= T::zero()) {
        return Err(Error::Calibration("need f > 0 and alpha >= 0".into()));
    }
    let excess = db_to_variance(recovered_db_at_f) - db_to_variance(intrinsic_db);
    if excess < T::zero() || excess.is_nan() {
        return Err(Error::Calibration(format!(
            "recovered level {recovered_db_at_f} dB lies below intrinsic {intrinsic_db} dB"
        )));
    }
    Ok(ParasiticModel {
        psd_at_1hz_rel_vacuum: excess * f.powf(alpha),
        exponent_alpha: alpha,
        f_min_hz: T::lit(DEFAULT_PARASITIC_F_MIN_HZ).min(f),
    })
}
