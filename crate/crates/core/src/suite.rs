//! Reproduction pipeline: named simulation runs, their analysis, and the
//! check bundle that verifies them.
//!
//! A [`Suite`] holds up to three studies:
//!
//! * vacuum: vacuum runs at several LO powers plus a dark run, checked for
//!   LO-power linearity and whiteness;
//! * squeezing: a squeezed run plus a dark run, checked for the squeezing
//!   level below the analytic vacuum;
//! * closure: a low-rate run around 1 Hz checked against the two calibration
//!   anchors, raw and after dark subtraction.
//!
//! Each run has a name; its seed is derived from the suite seed and that
//! name, so runs are independent and individually reproducible.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::noise_models::{quadrature_variance, variance_to_db, LossBudget, OpoParams};
use crate::rng::derive_seed;
use crate::spectral::{
    fig2_plan, fig3_plan, run_plan_with, subtract_dark_stitched, StitchedSpectrum, WelchParams,
    WindowPlan,
};
use crate::synth::{
    compose_scenario, MainsModel, SimScenario, Squeezer, DEFAULT_LO_REF_W, DEFAULT_SAMPLE_RATE_HZ,
};
use crate::verify::{
    band_mean_psd, calibrate_dark, calibrate_parasitic, check_linearity, check_whiteness,
    mains_mask, measured_squeezing, BinMask, CheckReport, DEFAULT_MASK_HALF_WIDTH_BINS,
    DEFAULT_SLOPE_TOLERANCE_DB_PER_DECADE, DEFAULT_TOLERANCE_DB,
};

pub const DEFAULT_SEED: u64 = 1;
/// Divisor applied to every average count by the fast presets.
pub const FAST_DIVISOR: usize = 10;

/// Levels at 1 Hz used to calibrate the dark and parasitic defaults (dB
/// relative to vacuum): observed, and recovered after dark subtraction.
pub const ANCHOR_OBSERVED_DB: f64 = -1.5;
pub const ANCHOR_RECOVERED_DB: f64 = -3.5;
pub const ANCHOR_FREQUENCY_HZ: f64 = 1.0;
/// Mid-band dark floor at the reference LO power (dB relative to vacuum).
pub const DEFAULT_DARK_FLOOR_DB: f64 = -15.0;
pub const DEFAULT_PARASITIC_ALPHA: f64 = 2.0;
pub const DEFAULT_GAIN: f64 = 12.0;
pub const DEFAULT_LOSS: f64 = 0.15;
pub const DEFAULT_LO_POWERS_UW: [f64; 3] = [232.0, 464.0, 928.0];
pub const DEFAULT_BAND_HZ: (f64, f64) = (10.0, 3200.0);

/// Sample rate of the closure run; 1 Hz sits far below Nyquist and the
/// needed averages stay cheap.
pub const CLOSURE_SAMPLE_RATE_HZ: f64 = 32.0;
pub const CLOSURE_BAND_HZ: (f64, f64) = (0.9, 1.1);
pub const CLOSURE_RBW_HZ: f64 = 0.0625;
pub const CLOSURE_AVERAGES: usize = 2700;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub linearity_db: f64,
    pub slope_db_per_decade: f64,
    pub squeezing_db: f64,
    pub closure_db: f64,
}

impl Tolerances {
    /// Instrument-level defaults, widened by `sqrt(FAST_DIVISOR)` for the
    /// fast presets.
    pub fn defaults(fast: bool) -> Self {
        let k = if fast {
            (FAST_DIVISOR as f64).sqrt()
        } else {
            1.0
        };
        Tolerances {
            linearity_db: DEFAULT_TOLERANCE_DB * k,
            slope_db_per_decade: DEFAULT_SLOPE_TOLERANCE_DB_PER_DECADE * k,
            squeezing_db: DEFAULT_TOLERANCE_DB * k,
            closure_db: DEFAULT_TOLERANCE_DB * k,
        }
    }

    pub fn uniform(db: f64) -> Self {
        Tolerances {
            linearity_db: db,
            slope_db_per_decade: db,
            squeezing_db: db,
            closure_db: db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub subtract_dark: bool,
    pub overlap_fraction: f64,
    pub mask_half_width_bins: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            subtract_dark: true,
            overlap_fraction: crate::spectral::DEFAULT_OVERLAP,
            mask_half_width_bins: DEFAULT_MASK_HALF_WIDTH_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VacuumStudy {
    /// Vacuum scenario at the reference power; only the LO power varies.
    pub base: SimScenario<f64>,
    pub lo_powers_w: Vec<f64>,
    pub plan: WindowPlan<f64>,
    pub linearity: bool,
    pub whiteness: bool,
    pub whiteness_band_hz: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqueezingStudy {
    pub scenario: SimScenario<f64>,
    pub plan: WindowPlan<f64>,
    pub band_hz: (f64, f64),
}

impl SqueezingStudy {
    /// Analytic squeezing in dB below vacuum at the configured angle.
    pub fn expected_db(&self) -> Result<f64> {
        let pair = self.scenario.quadrature_pair()?;
        Ok(-variance_to_db(quadrature_variance(
            &pair,
            self.scenario.homodyne.theta,
        ))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosureStudy {
    pub scenario: SimScenario<f64>,
    pub plan: WindowPlan<f64>,
    pub band_hz: (f64, f64),
    pub observed_db: f64,
    pub recovered_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub name: String,
    pub seed: u64,
    pub vacuum: Option<VacuumStudy>,
    pub squeezing: Option<SqueezingStudy>,
    pub closure: Option<ClosureStudy>,
    pub analysis: AnalysisOptions,
    pub tolerances: Tolerances,
    /// Fixed run length; `None` sizes each run to its plan.
    pub duration_s: Option<f64>,
}

/// A named run with its fully resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub name: String,
    pub scenario: SimScenario<f64>,
    pub plan: WindowPlan<f64>,
}

/// Dark and parasitic models calibrated from the 1 Hz anchors.
pub fn calibrated_defaults(
    gain: f64,
    loss: f64,
) -> Result<(
    crate::synth::DarkNoiseModel<f64>,
    crate::synth::ParasiticModel<f64>,
)> {
    let dark = calibrate_dark(
        ANCHOR_OBSERVED_DB,
        ANCHOR_RECOVERED_DB,
        ANCHOR_FREQUENCY_HZ,
        DEFAULT_DARK_FLOOR_DB,
    )?;
    let intrinsic = variance_to_db(crate::noise_models::squeezed_variance(
        &OpoParams::with_gain(gain)?,
        loss,
    )?)?;
    let parasitic = calibrate_parasitic(
        ANCHOR_RECOVERED_DB,
        intrinsic,
        ANCHOR_FREQUENCY_HZ,
        DEFAULT_PARASITIC_ALPHA,
    )?;
    Ok((dark.model, parasitic))
}

fn vacuum_base() -> Result<SimScenario<f64>> {
    let (dark, _) = calibrated_defaults(DEFAULT_GAIN, DEFAULT_LOSS)?;
    let mut s = SimScenario::vacuum(DEFAULT_LO_REF_W, DEFAULT_SAMPLE_RATE_HZ, 1.0, DEFAULT_SEED);
    s.dark = Some(dark);
    s.mains = Some(MainsModel::default_preset());
    Ok(s)
}

/// Squeezed scenario with the calibrated dark, mains and parasitic defaults.
pub fn squeezed_scenario(gain: f64, loss: f64) -> Result<SimScenario<f64>> {
    let (dark, parasitic) = calibrated_defaults(gain, loss)?;
    let mut s = SimScenario::vacuum(DEFAULT_LO_REF_W, DEFAULT_SAMPLE_RATE_HZ, 1.0, DEFAULT_SEED);
    s.squeezer = Some(Squeezer {
        opo: OpoParams::with_gain(gain)?,
        losses: LossBudget::lumped(loss),
    });
    s.dark = Some(dark);
    s.mains = Some(MainsModel::default_preset());
    s.parasitic = Some(parasitic);
    Ok(s)
}

/// Closure study derived from a squeezed scenario: same models, no mains,
/// low sample rate.
pub fn closure_study(squeezed: &SimScenario<f64>) -> Result<ClosureStudy> {
    let mut scenario = squeezed.clone();
    scenario.sample_rate_hz = CLOSURE_SAMPLE_RATE_HZ;
    scenario.mains = None;
    Ok(ClosureStudy {
        scenario,
        plan: WindowPlan::single(
            CLOSURE_BAND_HZ.0,
            CLOSURE_BAND_HZ.1,
            CLOSURE_RBW_HZ,
            CLOSURE_AVERAGES,
        )?,
        band_hz: CLOSURE_BAND_HZ,
        observed_db: ANCHOR_OBSERVED_DB,
        recovered_db: ANCHOR_RECOVERED_DB,
    })
}

fn divided(plan: WindowPlan<f64>, fast: bool) -> WindowPlan<f64> {
    if fast {
        plan.with_averages_divided(FAST_DIVISOR)
    } else {
        plan
    }
}

impl Suite {
    /// Vacuum study: three LO powers, linearity and whiteness.
    pub fn fig2(fast: bool) -> Result<Self> {
        Ok(Suite {
            name: if fast { "fig2-fast" } else { "fig2" }.into(),
            seed: DEFAULT_SEED,
            vacuum: Some(VacuumStudy {
                base: vacuum_base()?,
                lo_powers_w: DEFAULT_LO_POWERS_UW.iter().map(|p| p * 1e-6).collect(),
                plan: divided(fig2_plan(), fast),
                linearity: true,
                whiteness: true,
                whiteness_band_hz: DEFAULT_BAND_HZ,
            }),
            squeezing: None,
            closure: None,
            analysis: AnalysisOptions::default(),
            tolerances: Tolerances::defaults(fast),
            duration_s: None,
        })
    }

    /// Squeezing study at the default OPO settings plus the 1 Hz closure.
    /// The closure run is cheap and keeps its full average count.
    pub fn fig3(fast: bool) -> Result<Self> {
        let scenario = squeezed_scenario(DEFAULT_GAIN, DEFAULT_LOSS)?;
        Ok(Suite {
            name: if fast { "fig3-fast" } else { "fig3" }.into(),
            seed: DEFAULT_SEED,
            vacuum: None,
            closure: Some(closure_study(&scenario)?),
            squeezing: Some(SqueezingStudy {
                scenario,
                plan: divided(fig3_plan(), fast),
                band_hz: DEFAULT_BAND_HZ,
            }),
            analysis: AnalysisOptions::default(),
            tolerances: Tolerances::defaults(fast),
            duration_s: None,
        })
    }

    /// Both studies with averages divided by [`FAST_DIVISOR`].
    pub fn fast() -> Result<Self> {
        let fig2 = Suite::fig2(true)?;
        let fig3 = Suite::fig3(true)?;
        Ok(Suite {
            name: "fast".into(),
            vacuum: fig2.vacuum,
            ..fig3
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "fig2" => Suite::fig2(false),
            "fig3" => Suite::fig3(false),
            "fast" => Suite::fast(),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected fig2, fig3 or fast)"
            ))),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Scenario the analytic spectrum table describes.
    pub fn primary_scenario(&self) -> Option<&SimScenario<f64>> {
        self.squeezing
            .as_ref()
            .map(|s| &s.scenario)
            .or(self.vacuum.as_ref().map(|v| &v.base))
            .or(self.closure.as_ref().map(|c| &c.scenario))
    }

    fn resolve(
        &self,
        name: String,
        mut scenario: SimScenario<f64>,
        plan: &WindowPlan<f64>,
    ) -> Result<RunSpec> {
        let fs = scenario.sample_rate_hz;
        plan.validate()?;
        plan.check_sample_rate(fs)?;
        scenario.duration_s = match self.duration_s {
            Some(d) => d,
            None => plan.required_samples(fs, self.analysis.overlap_fraction)? as f64 / fs,
        };
        scenario.seed = derive_seed(self.seed, &name, 0);
        scenario.validate()?;
        Ok(RunSpec {
            name,
            scenario,
            plan: plan.clone(),
        })
    }

    fn dark_of(
        &self,
        name: &str,
        scenario: &SimScenario<f64>,
        plan: &WindowPlan<f64>,
    ) -> Result<RunSpec> {
        let mut dark = scenario.clone();
        dark.lo_blocked = true;
        self.resolve(format!("{name}_dark"), dark, plan)
    }

    fn vacuum_run_name(power_w: f64) -> String {
        format!("vacuum_{:.0}uw", power_w * 1e6)
    }

    /// Every run the suite needs, in a fixed order.
    pub fn runs(&self) -> Result<Vec<RunSpec>> {
        let mut runs = Vec::new();
        if let Some(v) = &self.vacuum {
            for &p in &v.lo_powers_w {
                let mut s = v.base.clone();
                s.homodyne.lo_power_w = p;
                runs.push(self.resolve(Self::vacuum_run_name(p), s, &v.plan)?);
            }
            if self.analysis.subtract_dark {
                runs.push(self.dark_of("vacuum", &v.base, &v.plan)?);
            }
        }
        if let Some(sq) = &self.squeezing {
            runs.push(self.resolve("squeezed".into(), sq.scenario.clone(), &sq.plan)?);
            if self.analysis.subtract_dark {
                runs.push(self.dark_of("squeezed", &sq.scenario, &sq.plan)?);
            }
        }
        if let Some(c) = &self.closure {
            runs.push(self.resolve("closure".into(), c.scenario.clone(), &c.plan)?);
            // The closure check always needs its dark run.
            runs.push(self.dark_of("closure", &c.scenario, &c.plan)?);
        }
        Ok(runs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vacuum.is_none() && self.squeezing.is_none() && self.closure.is_none() {
            return Err(Error::Config("suite requests no checks".into()));
        }
        if let Some(v) = &self.vacuum {
            if v.linearity && v.lo_powers_w.len() < 2 {
                return Err(Error::Config(
                    "linearity needs at least two LO powers".into(),
                ));
            }
            if v.lo_powers_w.iter().any(|p| !(*p > 0.0)) {
                return Err(Error::Config("LO powers must be positive".into()));
            }
        }
        self.runs().map(|_| ())
    }

    /// Runs every check, obtaining each run's spectrum from `spectrum_of`.
    pub fn verify_with(
        &self,
        mut spectrum_of: impl FnMut(&RunSpec) -> Result<StitchedSpectrum<f64>>,
    ) -> Result<Vec<CheckReport>> {
        let runs = self.runs()?;
        let find = |name: &str| runs.iter().find(|r| r.name == name).expect("run listed");
        let mut reports = Vec::new();

        if let Some(v) = &self.vacuum {
            let dark = self
                .analysis
                .subtract_dark
                .then(|| spectrum_of(find("vacuum_dark")))
                .transpose()?;
            let mask = self.mask_for(&v.base, &v.plan)?;
            let mut spectra = Vec::new();
            for &p in &v.lo_powers_w {
                let raw = spectrum_of(find(&Self::vacuum_run_name(p)))?;
                spectra.push((p, self.maybe_subtract(raw, dark.as_ref())?));
            }
            if v.linearity {
                reports.push(check_linearity(
                    &spectra,
                    Some(&mask),
                    self.tolerances.linearity_db,
                )?);
            }
            if v.whiteness {
                // The power nearest the reference one.
                let reference = v.base.homodyne.lo_power_ref_w;
                let (_, s) = spectra
                    .iter()
                    .min_by(|a, b| {
                        (a.0 / reference)
                            .ln()
                            .abs()
                            .total_cmp(&(b.0 / reference).ln().abs())
                    })
                    .expect("at least one power");
                reports.push(check_whiteness(
                    s,
                    v.whiteness_band_hz,
                    Some(&mask),
                    self.tolerances.slope_db_per_decade,
                )?);
            }
        }

        if let Some(sq) = &self.squeezing {
            let raw = spectrum_of(find("squeezed"))?;
            let dark = self
                .analysis
                .subtract_dark
                .then(|| spectrum_of(find("squeezed_dark")))
                .transpose()?;
            let s = self.maybe_subtract(raw, dark.as_ref())?;
            let mask = self.mask_for(&sq.scenario, &sq.plan)?;
            reports.push(measured_squeezing(
                &s,
                crate::spectral::VacuumReference::Flat(sq.scenario.homodyne.lo_scale()),
                sq.band_hz,
                Some(&mask),
                sq.expected_db()?,
                self.tolerances.squeezing_db,
            )?);
        }

        if let Some(c) = &self.closure {
            let raw = spectrum_of(find("closure"))?;
            let dark = spectrum_of(find("closure_dark"))?;
            let recovered = subtract_dark_stitched(&raw, &dark, None)?;
            let vacuum = c.scenario.homodyne.lo_scale();
            let level_db = |s: &StitchedSpectrum<f64>| -> Result<(f64, usize)> {
                let (m, n) = band_mean_psd(s, c.band_hz.0, c.band_hz.1, None).ok_or_else(|| {
                    Error::Domain(format!(
                        "closure: no bins in [{}, {}] Hz",
                        c.band_hz.0, c.band_hz.1
                    ))
                })?;
                Ok((variance_to_db(m / vacuum)?, n))
            };
            let (obs, n) = level_db(&raw)?;
            let (rec, _) = level_db(&recovered)?;
            reports.push(
                CheckReport::build(
                    "closure_observed",
                    obs,
                    c.observed_db,
                    self.tolerances.closure_db,
                    "dB",
                    vec![],
                )
                .with_info("bins", n as f64),
            );
            reports.push(
                CheckReport::build(
                    "closure_recovered",
                    rec,
                    c.recovered_db,
                    self.tolerances.closure_db,
                    "dB",
                    vec![],
                )
                .with_info("bins", n as f64)
                .with_info("floored_bins", recovered.floored_count() as f64),
            );
        }
        Ok(reports)
    }

    fn maybe_subtract(
        &self,
        raw: StitchedSpectrum<f64>,
        dark: Option<&StitchedSpectrum<f64>>,
    ) -> Result<StitchedSpectrum<f64>> {
        match dark {
            Some(d) => subtract_dark_stitched(&raw, d, None),
            None => Ok(raw),
        }
    }

    fn mask_for(&self, scenario: &SimScenario<f64>, plan: &WindowPlan<f64>) -> Result<BinMask> {
        match &scenario.mains {
            Some(m) => mains_mask(
                plan,
                scenario.sample_rate_hz,
                m.fundamental_hz,
                m.max_order(),
                self.analysis.mask_half_width_bins,
            ),
            None => Ok(BinMask::default()),
        }
    }

    /// Simulates and analyzes every run in memory.
    pub fn verify_simulated(&self) -> Result<Vec<CheckReport>> {
        let params = self.welch_params();
        self.verify_with(|run| simulate_and_analyze(run, params))
    }

    /// Analyzes runs previously written by [`write_runs`](Self::write_runs).
    /// Missing runs are listed together in one error.
    pub fn verify_from_dir(&self, dir: &Path) -> Result<Vec<CheckReport>> {
        let missing: Vec<String> = self
            .runs()?
            .iter()
            .map(|r| io::raw_path(dir, &r.name))
            .filter(|p| !p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::io(
                dir,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("missing runs: {}", missing.join(", ")),
                ),
            ));
        }
        let params = self.welch_params();
        self.verify_with(|run| {
            let (meta, samples) = io::read_stream(&io::raw_path(dir, &run.name))?;
            if meta.sample_rate_hz != run.scenario.sample_rate_hz {
                return Err(Error::Config(format!(
                    "run {}: sample rate {} Hz, expected {} Hz",
                    run.name, meta.sample_rate_hz, run.scenario.sample_rate_hz
                )));
            }
            analyze_samples(
                &samples,
                meta.sample_rate_hz,
                &run.plan,
                params,
                meta.scenario_digest,
            )
        })
    }

    /// Simulates every run and writes it to `dir`; returns the metadata.
    pub fn write_runs(&self, dir: &Path, force: bool) -> Result<Vec<io::StreamMetadata>> {
        let runs = self.runs()?;
        for r in &runs {
            let raw = io::raw_path(dir, &r.name);
            io::ensure_writable(&raw, force)?;
            io::ensure_writable(&io::meta_path_for(&raw), force)?;
        }
        runs.iter()
            .map(|r| {
                let samples = compose_scenario(&r.scenario)?;
                let meta = io::StreamMetadata::for_run(&r.name, &r.scenario, &samples);
                io::write_stream(dir, &meta, &samples, force)
            })
            .collect()
    }

    pub fn welch_params(&self) -> WelchParams {
        WelchParams {
            overlap_fraction: self.analysis.overlap_fraction,
            ..WelchParams::default()
        }
    }
}

/// Stitched spectrum of `samples` tagged with `provenance`.
pub fn analyze_samples(
    samples: &[f64],
    fs: f64,
    plan: &WindowPlan<f64>,
    params: WelchParams,
    provenance: String,
) -> Result<StitchedSpectrum<f64>> {
    let mut s = run_plan_with(samples, fs, plan, params)?;
    s.provenance = provenance;
    Ok(s)
}

pub fn simulate_and_analyze(run: &RunSpec, params: WelchParams) -> Result<StitchedSpectrum<f64>> {
    let samples = compose_scenario(&run.scenario)?;
    analyze_samples(
        &samples,
        run.scenario.sample_rate_hz,
        &run.plan,
        params,
        run.scenario.digest(),
    )
}

/// True when every report passed.
pub fn all_passed(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}
