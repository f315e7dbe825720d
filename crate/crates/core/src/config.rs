//! TOML run configuration.
//!
//! Every physical quantity carries its unit in the key name. Example:
//!
//! ```toml
//! seed = 7
//! fast = false               # divide plan averages by 10, widen tolerances
//!
//! [scenario]
//! lo_power_uw = 464.0
//! lo_power_ref_uw = 464.0
//! theta_rad = 0.0
//! visibility = 1.0
//! sample_rate_hz = 16384.0
//!
//! [scenario.opo]             # omit for vacuum at the signal port
//! gain = 12.0
//!
//! [[scenario.loss]]
//! name = "lumped"
//! efficiency = 0.85
//!
//! [scenario.dark]
//! floor_rel_vacuum = 0.0316
//! knee_hz = 7.26
//!
//! [scenario.mains]
//! fundamental_hz = 50.0
//! harmonics = [{ order = 1, amplitude_rel = 4.0, phase_rad = 0.0 }]
//!
//! [scenario.parasitic]
//! psd_at_1hz_rel_vacuum = 0.226
//! exponent_alpha = 2.0
//!
//! [plan]
//! preset = "fig3"            # or a list of [[plan.band]] tables
//!
//! [verify]
//! checks = ["squeezing", "closure"]
//! squeezing_tolerance_db = 0.5
//! ```
//!
//! PSD levels are relative to vacuum at the reference LO power. Mains
//! amplitudes are sinusoid amplitudes in the same units times √Hz.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_models::{LossBudget, OpoParams, REFERENCE_LINEWIDTH_HZ};
use crate::spectral::{fig2_plan, fig3_plan, Band, WindowPlan, DEFAULT_OVERLAP};
use crate::suite::{
    closure_study, AnalysisOptions, SqueezingStudy, Suite, Tolerances, VacuumStudy,
    DEFAULT_BAND_HZ, DEFAULT_LO_POWERS_UW, DEFAULT_SEED, FAST_DIVISOR,
};
use crate::synth::{
    DarkNoiseModel, Harmonic, HomodyneConfig, MainsModel, ParasiticModel, SimScenario, Squeezer,
    DEFAULT_LO_REF_W, DEFAULT_PARASITIC_F_MIN_HZ, DEFAULT_RESOLUTION_HZ, DEFAULT_SAMPLE_RATE_HZ,
};
use crate::verify::DEFAULT_MASK_HALF_WIDTH_BINS;

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_lo_uw() -> f64 {
    DEFAULT_LO_REF_W * 1e6
}
fn default_one() -> f64 {
    1.0
}
fn default_fs() -> f64 {
    DEFAULT_SAMPLE_RATE_HZ
}
fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION_HZ
}
fn default_linewidth() -> f64 {
    REFERENCE_LINEWIDTH_HZ
}
fn default_f_min() -> f64 {
    DEFAULT_PARASITIC_F_MIN_HZ
}
fn default_mains_hz() -> f64 {
    crate::synth::DEFAULT_MAINS_HZ
}
fn default_overlap() -> f64 {
    DEFAULT_OVERLAP
}
fn default_true() -> bool {
    true
}
fn default_powers() -> Vec<f64> {
    DEFAULT_LO_POWERS_UW.to_vec()
}
fn default_band() -> [f64; 2] {
    [DEFAULT_BAND_HZ.0, DEFAULT_BAND_HZ.1]
}
fn default_half_width() -> usize {
    DEFAULT_MASK_HALF_WIDTH_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub fast: bool,
    /// Default output directory; `--out` takes precedence.
    #[serde(default)]
    pub output_dir: Option<String>,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_lo_uw")]
    pub lo_power_uw: f64,
    #[serde(default = "default_lo_uw")]
    pub lo_power_ref_uw: f64,
    #[serde(default)]
    pub theta_rad: f64,
    #[serde(default = "default_one")]
    pub visibility: f64,
    #[serde(default = "default_fs")]
    pub sample_rate_hz: f64,
    /// Fixed length of every run; by default each run covers its plan.
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default = "default_resolution")]
    pub coloring_resolution_hz: f64,
    #[serde(default)]
    pub opo: Option<OpoConfig>,
    #[serde(default)]
    pub loss: Vec<LossConfig>,
    #[serde(default)]
    pub dark: Option<DarkConfig>,
    #[serde(default)]
    pub mains: Option<MainsConfig>,
    #[serde(default)]
    pub parasitic: Option<ParasiticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpoConfig {
    pub gain: f64,
    #[serde(default = "default_linewidth")]
    pub cavity_linewidth_hz: f64,
    #[serde(default)]
    pub pump_power_mw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub name: String,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarkConfig {
    pub floor_rel_vacuum: f64,
    pub knee_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicConfig {
    pub order: u32,
    pub amplitude_rel: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MainsConfig {
    #[serde(default = "default_mains_hz")]
    pub fundamental_hz: f64,
    /// Empty selects the default harmonic set.
    #[serde(default)]
    pub harmonics: Vec<HarmonicConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParasiticConfig {
    pub psd_at_1hz_rel_vacuum: f64,
    pub exponent_alpha: f64,
    #[serde(default = "default_f_min")]
    pub f_min_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub rbw_hz: f64,
    pub n_averages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    /// `fig2` or `fig3`; exclusive with `band`.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub band: Vec<BandConfig>,
    #[serde(default = "default_overlap")]
    pub overlap_fraction: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            preset: None,
            band: Vec::new(),
            overlap_fraction: DEFAULT_OVERLAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Subset of `linearity`, `whiteness`, `squeezing`, `closure`. Empty
    /// selects `squeezing` with an OPO and `linearity` + `whiteness` without.
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default = "default_powers")]
    pub lo_powers_uw: Vec<f64>,
    #[serde(default = "default_true")]
    pub subtract_dark: bool,
    #[serde(default = "default_half_width")]
    pub mask_half_width_bins: usize,
    #[serde(default = "default_band")]
    pub whiteness_band_hz: [f64; 2],
    #[serde(default = "default_band")]
    pub squeezing_band_hz: [f64; 2],
    /// Overrides every dB tolerance below that is unset.
    #[serde(default)]
    pub tolerance_db: Option<f64>,
    #[serde(default)]
    pub linearity_tolerance_db: Option<f64>,
    #[serde(default)]
    pub squeezing_tolerance_db: Option<f64>,
    #[serde(default)]
    pub closure_tolerance_db: Option<f64>,
    #[serde(default)]
    pub slope_tolerance_db_per_decade: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        toml::from_str("").expect("every field has a default")
    }
}

const CHECK_NAMES: [&str; 4] = ["linearity", "whiteness", "squeezing", "closure"];

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn scenario(&self) -> Result<SimScenario<f64>> {
        let c = &self.scenario;
        let squeezer = match &c.opo {
            Some(o) => {
                let mut opo = OpoParams::new(o.gain, o.cavity_linewidth_hz)?;
                if let Some(mw) = o.pump_power_mw {
                    opo = opo.with_pump_power_mw(mw);
                }
                Some(Squeezer {
                    opo,
                    losses: LossBudget::from_entries(
                        c.loss.iter().map(|l| (l.name.clone(), l.efficiency)),
                    ),
                })
            }
            None if !c.loss.is_empty() => {
                return Err(Error::Config(
                    "loss entries given without [scenario.opo]".into(),
                ))
            }
            None => None,
        };
        let mains = c.mains.as_ref().map(|m| {
            if m.harmonics.is_empty() {
                MainsModel {
                    fundamental_hz: m.fundamental_hz,
                    ..MainsModel::default_preset()
                }
            } else {
                MainsModel {
                    fundamental_hz: m.fundamental_hz,
                    harmonics: m
                        .harmonics
                        .iter()
                        .map(|h| Harmonic {
                            order: h.order,
                            amplitude: h.amplitude_rel,
                            phase: h.phase_rad,
                        })
                        .collect(),
                }
            }
        });
        let scenario = SimScenario {
            homodyne: HomodyneConfig {
                lo_power_w: c.lo_power_uw * 1e-6,
                lo_power_ref_w: c.lo_power_ref_uw * 1e-6,
                theta: c.theta_rad,
                visibility: c.visibility,
            },
            squeezer,
            dark: c.dark.as_ref().map(|d| DarkNoiseModel {
                floor_rel_vacuum: d.floor_rel_vacuum,
                knee_hz: d.knee_hz,
            }),
            mains,
            parasitic: c.parasitic.as_ref().map(|p| ParasiticModel {
                psd_at_1hz_rel_vacuum: p.psd_at_1hz_rel_vacuum,
                exponent_alpha: p.exponent_alpha,
                f_min_hz: p.f_min_hz,
            }),
            lo_blocked: false,
            sample_rate_hz: c.sample_rate_hz,
            duration_s: 1.0,
            seed: self.seed,
            coloring_resolution_hz: c.coloring_resolution_hz,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn plan(&self) -> Result<WindowPlan<f64>> {
        let p = &self.plan;
        let plan = match (&p.preset, p.band.is_empty()) {
            (Some(_), false) => {
                return Err(Error::Config(
                    "[plan] takes either preset or band, not both".into(),
                ))
            }
            (Some(name), true) => match name.as_str() {
                "fig2" => fig2_plan(),
                "fig3" => fig3_plan(),
                other => {
                    return Err(Error::Config(format!(
                        "unknown plan preset '{other}' (expected fig2 or fig3)"
                    )))
                }
            },
            (None, false) => WindowPlan::new(
                p.band
                    .iter()
                    .map(|b| Band {
                        f_lo: b.f_lo_hz,
                        f_hi: b.f_hi_hz,
                        rbw_hz: b.rbw_hz,
                        n_averages: b.n_averages,
                    })
                    .collect(),
            )?,
            (None, true) if self.scenario.opo.is_some() => fig3_plan(),
            (None, true) => fig2_plan(),
        };
        let plan = if self.fast {
            plan.with_averages_divided(FAST_DIVISOR)
        } else {
            plan
        };
        plan.validate()?;
        plan.check_sample_rate(self.scenario.sample_rate_hz)?;
        Ok(plan)
    }

    fn checks(&self) -> Result<Vec<&str>> {
        if let Some(bad) = self
            .verify
            .checks
            .iter()
            .find(|c| !CHECK_NAMES.contains(&c.as_str()))
        {
            return Err(Error::Config(format!(
                "unknown check '{bad}' (expected one of {})",
                CHECK_NAMES.join(", ")
            )));
        }
        Ok(if !self.verify.checks.is_empty() {
            self.verify.checks.iter().map(String::as_str).collect()
        } else if self.scenario.opo.is_some() {
            vec!["squeezing"]
        } else {
            vec!["linearity", "whiteness"]
        })
    }

    fn tolerances(&self) -> Tolerances {
        let v = &self.verify;
        let base = v.tolerance_db.map_or_else(
            || Tolerances::defaults(self.fast),
            |t| Tolerances {
                slope_db_per_decade: Tolerances::defaults(self.fast).slope_db_per_decade,
                ..Tolerances::uniform(t)
            },
        );
        Tolerances {
            linearity_db: v.linearity_tolerance_db.unwrap_or(base.linearity_db),
            squeezing_db: v.squeezing_tolerance_db.unwrap_or(base.squeezing_db),
            closure_db: v.closure_tolerance_db.unwrap_or(base.closure_db),
            slope_db_per_decade: v
                .slope_tolerance_db_per_decade
                .unwrap_or(base.slope_db_per_decade),
        }
    }

    /// The check suite this configuration describes.
    pub fn to_suite(&self) -> Result<Suite> {
        let scenario = self.scenario()?;
        let plan = self.plan()?;
        let checks = self.checks()?;
        let has = |c: &str| checks.contains(&c);
        let band = |b: [f64; 2]| -> Result<(f64, f64)> {
            if !(b[0] > 0.0 && b[1] > b[0]) {
                return Err(Error::Config(format!(
                    "invalid band [{}, {}] Hz",
                    b[0], b[1]
                )));
            }
            Ok((b[0], b[1]))
        };

        let vacuum = (has("linearity") || has("whiteness"))
            .then(|| -> Result<VacuumStudy> {
                // Blocked signal port: neither squeezing nor scattered light.
                let mut base = scenario.clone();
                base.squeezer = None;
                base.parasitic = None;
                Ok(VacuumStudy {
                    base,
                    lo_powers_w: self.verify.lo_powers_uw.iter().map(|p| p * 1e-6).collect(),
                    plan: plan.clone(),
                    linearity: has("linearity"),
                    whiteness: has("whiteness"),
                    whiteness_band_hz: band(self.verify.whiteness_band_hz)?,
                })
            })
            .transpose()?;
        let squeezing = has("squeezing")
            .then(|| -> Result<SqueezingStudy> {
                Ok(SqueezingStudy {
                    scenario: scenario.clone(),
                    plan: plan.clone(),
                    band_hz: band(self.verify.squeezing_band_hz)?,
                })
            })
            .transpose()?;
        let closure = has("closure")
            .then(|| closure_study(&scenario))
            .transpose()?;

        let suite = Suite {
            name: "config".into(),
            seed: self.seed,
            vacuum,
            squeezing,
            closure,
            analysis: AnalysisOptions {
                subtract_dark: self.verify.subtract_dark,
                overlap_fraction: self.plan.overlap_fraction,
                mask_half_width_bins: self.verify.mask_half_width_bins,
            },
            tolerances: self.tolerances(),
            duration_s: self.scenario.duration_s,
        };
        suite.validate()?;
        Ok(suite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUEEZED: &str = r#"
        seed = 5
        fast = true
        [scenario]
        [scenario.opo]
        gain = 12.0
        [[scenario.loss]]
        name = "lumped"
        efficiency = 0.85
        [scenario.dark]
        floor_rel_vacuum = 0.0316
        knee_hz = 7.26
        [scenario.mains]
        [verify]
        checks = ["squeezing", "linearity"]
        squeezing_tolerance_db = 0.3
    "#;

    #[test]
    fn parses_and_builds_suite() {
        let cfg = RunConfig::from_toml_str(SQUEEZED).unwrap();
        let suite = cfg.to_suite().unwrap();
        assert_eq!(suite.seed, 5);
        let sq = suite.squeezing.as_ref().unwrap();
        assert!((sq.expected_db().unwrap() - 6.5594).abs() < 1e-3);
        assert_eq!(sq.plan.bands[0].n_averages, 3);
        assert_eq!(suite.tolerances.squeezing_db, 0.3);
        assert!((suite.tolerances.linearity_db - 0.5 * 10f64.sqrt()).abs() < 1e-12);
        let v = suite.vacuum.as_ref().unwrap();
        assert!(v.base.squeezer.is_none() && v.base.dark.is_some());
        assert_eq!(v.base.mains.as_ref().unwrap().harmonics.len(), 4);
        assert!(suite.closure.is_none());
    }

    #[test]
    fn vacuum_defaults() {
        let cfg = RunConfig::from_toml_str("[scenario]").unwrap();
        let suite = cfg.to_suite().unwrap();
        assert!(suite.squeezing.is_none());
        assert_eq!(suite.vacuum.unwrap().plan, fig2_plan());
        assert_eq!(cfg.verify.lo_powers_uw, vec![232.0, 464.0, 928.0]);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "",
            "[scenario]\nlo_power_w = 1.0",
            "[scenario]\n[plan]\npreset = \"fig9\"",
            "[scenario]\n[verify]\nchecks = [\"nope\"]",
            "[scenario]\nsample_rate_hz = 4000.0",
            "[scenario]\n[[scenario.loss]]\nname = \"a\"\nefficiency = 0.9",
            "[scenario]\n[plan]\npreset = \"fig2\"\n[[plan.band]]\nf_lo_hz = 1\nf_hi_hz = 2\nrbw_hz = 0.5\nn_averages = 1",
            "[scenario]\n[verify]\nlo_powers_uw = [464.0]",
            "[scenario]\nduration_s = 0.0",
        ] {
            assert!(
                RunConfig::from_toml_str(text).and_then(|c| c.to_suite()).is_err(),
                "accepted: {text}"
            );
        }
    }

    #[test]
    fn uniform_tolerance_override() {
        let cfg = RunConfig::from_toml_str("[scenario]\n[verify]\ntolerance_db = 0.0").unwrap();
        let t = cfg.to_suite().unwrap().tolerances;
        assert_eq!(
            (t.linearity_db, t.squeezing_db, t.closure_db),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(t.slope_db_per_decade, 0.2);
    }
}
