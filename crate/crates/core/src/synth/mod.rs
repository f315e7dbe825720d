//! Seeded synthesis of the balanced-homodyne difference photocurrent.
//!
//! Units are vacuum-relative: with the LO at its reference power and the
//! signal port in vacuum, the one-sided PSD of the quantum component is 1 per
//! Hz. Every stochastic component draws from its own sub-seed derived from
//! the scenario seed, so components are independent and any run is
//! reproducible bit for bit.

pub mod coloring;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::noise_models::{quadrature_variance, LossBudget, OpoParams, QuadraturePair};
use crate::rng::gaussian_stream;
use crate::scalar::Real;

pub use coloring::{colored_noise, ColoringFilter, DEFAULT_RESOLUTION_HZ};

/// Reference LO power at which vacuum noise is 0 dB (W).
pub const DEFAULT_LO_REF_W: f64 = 464e-6;
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 16384.0;
pub const DEFAULT_MAINS_HZ: f64 = 50.0;
/// Upper bound on samples per run.
pub const MAX_SAMPLES: usize = 1 << 31;

pub const TAG_QUANTUM: &str = "quantum";
pub const TAG_DARK: &str = "dark";
pub const TAG_PARASITIC: &str = "parasitic";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomodyneConfig<T> {
    pub lo_power_w: T,
    pub lo_power_ref_w: T,
    /// LO phase; 0 reads out the squeezed quadrature.
    pub theta: T,
    /// LO/signal fringe visibility. Enters the loss budget squared.
    pub visibility: T,
}

impl<T: Real> HomodyneConfig<T> {
    pub fn at_power(lo_power_w: T) -> Self {
        HomodyneConfig {
            lo_power_w,
            lo_power_ref_w: T::lit(DEFAULT_LO_REF_W),
            theta: T::zero(),
            visibility: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo_power_w > T::zero()) || !(self.lo_power_ref_w > T::zero()) {
            return Err(Error::Config("LO powers must be positive".into()));
        }
        if !(self.visibility > T::zero() && self.visibility <= T::one()) {
            return Err(Error::Config(format!(
                "visibility {} outside (0, 1]",
                self.visibility
            )));
        }
        if !self.theta.is_finite() {
            return Err(Error::Config("LO phase must be finite".into()));
        }
        Ok(())
    }

    /// Vacuum noise power relative to the reference LO power.
    pub fn lo_scale(&self) -> T {
        self.lo_power_w / self.lo_power_ref_w
    }
}

/// Electronic dark noise: `floor * (1 + knee / f)`, independent of LO power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkNoiseModel<T> {
    pub floor_rel_vacuum: T,
    pub knee_hz: T,
}

impl<T: Real> DarkNoiseModel<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor_rel_vacuum >= T::zero()) || !(self.knee_hz >= T::zero()) {
            return Err(Error::Config(
                "dark noise floor and knee must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn psd(&self, f: T) -> T {
        self.floor_rel_vacuum * (T::one() + self.knee_hz / f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic<T> {
    pub order: u32,
    pub amplitude: T,
    pub phase: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MainsModel<T> {
    pub fundamental_hz: T,
    pub harmonics: Vec<Harmonic<T>>,
}

impl<T: Real> MainsModel<T> {
    /// 50 Hz with orders 1, 2, 3, 5 and amplitudes halving per entry.
    pub fn default_preset() -> Self {
        let harmonics = [1u32, 2, 3, 5]
            .iter()
            .enumerate()
            .map(|(i, &order)| Harmonic {
                order,
                amplitude: T::lit(4.0 * 0.5f64.powi(i as i32)),
                phase: T::lit(0.7 * i as f64),
            })
            .collect();
        MainsModel {
            fundamental_hz: T::lit(DEFAULT_MAINS_HZ),
            harmonics,
        }
    }

    pub fn validate(&self, fs: T) -> Result<()> {
        if !(self.fundamental_hz > T::zero()) {
            return Err(Error::Config("mains fundamental must be positive".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for h in &self.harmonics {
            if h.order == 0 || !seen.insert(h.order) {
                return Err(Error::Config(format!(
                    "mains harmonic orders must be distinct and positive (got {})",
                    h.order
                )));
            }
            let f = self.fundamental_hz * T::lit(f64::from(h.order));
            if f >= fs / T::lit(2.0) {
                return Err(Error::Config(format!(
                    "mains harmonic {} at {f} Hz aliases at sample rate {fs} Hz",
                    h.order
                )));
            }
        }
        Ok(())
    }

    pub fn max_order(&self) -> u32 {
        self.harmonics.iter().map(|h| h.order).max().unwrap_or(0)
    }
}

/// Scattered light beating with the LO: `c * max(f, f_min)^-alpha` relative
/// to vacuum at the reference LO power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParasiticModel<T> {
    pub psd_at_1hz_rel_vacuum: T,
    pub exponent_alpha: T,
    pub f_min_hz: T,
}

pub const DEFAULT_PARASITIC_F_MIN_HZ: f64 = 0.1;

impl<T: Real> ParasiticModel<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.psd_at_1hz_rel_vacuum >= T::zero())
            || !(self.exponent_alpha >= T::zero())
            || !(self.f_min_hz > T::zero())
        {
            return Err(Error::Config(
                "parasitic model needs psd >= 0, alpha >= 0 and f_min > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn psd(&self, f: T) -> T {
        self.psd_at_1hz_rel_vacuum * f.max(self.f_min_hz).powf(-self.exponent_alpha)
    }

    pub fn scaled(&self, k: T) -> Self {
        ParasiticModel {
            psd_at_1hz_rel_vacuum: self.psd_at_1hz_rel_vacuum * k,
            ..*self
        }
    }
}

/// A squeezed-vacuum source and the losses behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Squeezer<T> {
    pub opo: OpoParams<T>,
    pub losses: LossBudget<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario<T> {
    pub homodyne: HomodyneConfig<T>,
    /// `None` leaves the signal port in vacuum.
    pub squeezer: Option<Squeezer<T>>,
    pub dark: Option<DarkNoiseModel<T>>,
    pub mains: Option<MainsModel<T>>,
    pub parasitic: Option<ParasiticModel<T>>,
    /// Dark-measurement run: the LO is blocked, so neither quantum noise nor
    /// the LO-beating parasitic term is present.
    pub lo_blocked: bool,
    pub sample_rate_hz: T,
    pub duration_s: T,
    pub seed: u64,
    pub coloring_resolution_hz: T,
}

impl<T: Real> SimScenario<T> {
    /// Vacuum at the signal port, nothing else.
    pub fn vacuum(lo_power_w: T, sample_rate_hz: T, duration_s: T, seed: u64) -> Self {
        SimScenario {
            homodyne: HomodyneConfig::at_power(lo_power_w),
            squeezer: None,
            dark: None,
            mains: None,
            parasitic: None,
            lo_blocked: false,
            sample_rate_hz,
            duration_s,
            seed,
            coloring_resolution_hz: T::lit(DEFAULT_RESOLUTION_HZ),
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz)
            .round()
            .to_usize()
            .unwrap_or(0)
    }

    pub fn nyquist_hz(&self) -> T {
        self.sample_rate_hz / T::lit(2.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.homodyne.validate()?;
        if !(self.sample_rate_hz > T::zero()) || !self.sample_rate_hz.is_finite() {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if !(self.duration_s > T::zero()) || !self.duration_s.is_finite() {
            return Err(Error::Config("duration must be positive".into()));
        }
        if !(self.coloring_resolution_hz > T::zero()) {
            return Err(Error::Config("coloring resolution must be positive".into()));
        }
        let n = self.n_samples();
        if n == 0 {
            return Err(Error::Config("run contains no samples".into()));
        }
        if n > MAX_SAMPLES {
            return Err(Error::Config(format!(
                "{n} samples exceed the per-run budget of {MAX_SAMPLES}"
            )));
        }
        if let Some(sq) = &self.squeezer {
            sq.opo.validate()?;
            sq.losses.validate()?;
            // The simulated flat spectrum extends to Nyquist.
            sq.opo.check_band(self.nyquist_hz())?;
        }
        if let Some(d) = &self.dark {
            d.validate()?;
        }
        if let Some(m) = &self.mains {
            m.validate(self.sample_rate_hz)?;
        }
        if let Some(p) = &self.parasitic {
            p.validate()?;
        }
        Ok(())
    }

    /// Loss budget including the fringe-visibility entry.
    pub fn effective_losses(&self) -> Option<LossBudget<T>> {
        self.squeezer.as_ref().map(|sq| {
            if self.homodyne.visibility < T::one() {
                sq.losses.clone().with_visibility(self.homodyne.visibility)
            } else {
                sq.losses.clone()
            }
        })
    }

    pub fn quadrature_pair(&self) -> Result<QuadraturePair<T>> {
        match (&self.squeezer, self.effective_losses()) {
            (Some(sq), Some(budget)) => {
                let loss = crate::noise_models::total_loss(&budget)?;
                QuadraturePair::from_opo(&sq.opo, loss)
            }
            _ => Ok(QuadraturePair::vacuum()),
        }
    }

    /// Expected one-sided PSD of the quantum component.
    pub fn quantum_psd(&self) -> Result<T> {
        if self.lo_blocked {
            return Ok(T::zero());
        }
        let v = quadrature_variance(&self.quadrature_pair()?, self.homodyne.theta);
        Ok(self.homodyne.lo_scale() * v)
    }

    /// Expected one-sided PSD of the full composed signal at `f > 0`,
    /// excluding the mains lines.
    pub fn expected_psd(&self, f: T) -> Result<T> {
        let mut s = self.quantum_psd()?;
        if let Some(d) = &self.dark {
            s = s + d.psd(f);
        }
        if let (Some(p), false) = (&self.parasitic, self.lo_blocked) {
            s = s + p.scaled(self.homodyne.lo_scale()).psd(f);
        }
        Ok(s)
    }

    /// Short hex digest of every generative parameter.
    pub fn digest(&self) -> String {
        let canonical = format!("{self:?}");
        let hash = Sha256::digest(canonical.as_bytes());
        hex::encode(&hash[..8])
    }
}

/// White Gaussian quantum noise with one-sided PSD
/// `(P_LO / P_ref) * V(theta)`.
pub fn synth_quantum_noise<T: Real>(scenario: &SimScenario<T>, n_samples: usize) -> Result<Vec<T>> {
    scenario.validate()?;
    let psd = scenario.quantum_psd()?;
    let sigma = (psd * scenario.sample_rate_hz / T::lit(2.0)).sqrt();
    Ok(gaussian_stream(
        scenario.seed,
        TAG_QUANTUM,
        n_samples,
        sigma,
    ))
}

pub fn synth_dark<T: Real>(
    model: &DarkNoiseModel<T>,
    fs: T,
    n: usize,
    seed: u64,
    resolution_hz: T,
) -> Result<Vec<T>> {
    model.validate()?;
    if model.floor_rel_vacuum == T::zero() {
        return Ok(vec![T::zero(); n]);
    }
    Ok(colored_noise(
        |f| model.psd(f),
        fs,
        n,
        resolution_hz,
        seed,
        TAG_DARK,
    ))
}

/// Deterministic sum of `a_n cos(2 pi n f0 t + phi_n)`.
pub fn synth_mains<T: Real>(model: &MainsModel<T>, fs: T, n: usize) -> Result<Vec<T>> {
    model.validate(fs)?;
    let fs64 = fs.as_f64();
    let tau = std::f64::consts::TAU;
    let lines: Vec<(f64, f64, f64)> = model
        .harmonics
        .iter()
        .map(|h| {
            let cycles_per_sample = model.fundamental_hz.as_f64() * f64::from(h.order) / fs64;
            (cycles_per_sample, h.amplitude.as_f64(), h.phase.as_f64())
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let v: f64 = lines
                .iter()
                .map(|&(c, a, phi)| {
                    // Reduce the cycle count before scaling by 2 pi.
                    let cycles = (c * i as f64).fract();
                    a * (tau * cycles + phi).cos()
                })
                .sum();
            T::lit(v)
        })
        .collect())
}

pub fn synth_parasitic<T: Real>(
    model: &ParasiticModel<T>,
    fs: T,
    n: usize,
    seed: u64,
    resolution_hz: T,
) -> Result<Vec<T>> {
    model.validate()?;
    if model.psd_at_1hz_rel_vacuum == T::zero() {
        return Ok(vec![T::zero(); n]);
    }
    Ok(colored_noise(
        |f| model.psd(f),
        fs,
        n,
        resolution_hz,
        seed,
        TAG_PARASITIC,
    ))
}

fn accumulate<T: Real>(acc: &mut [T], part: &[T]) {
    for (a, p) in acc.iter_mut().zip(part) {
        *a = *a + *p;
    }
}

/// Sum of the configured components: quantum + dark + mains + parasitic.
pub fn compose_scenario<T: Real>(scenario: &SimScenario<T>) -> Result<Vec<T>> {
    scenario.validate()?;
    let n = scenario.n_samples();
    let fs = scenario.sample_rate_hz;
    let res = scenario.coloring_resolution_hz;

    let mut out = if scenario.lo_blocked {
        vec![T::zero(); n]
    } else {
        synth_quantum_noise(scenario, n)?
    };
    if let Some(d) = &scenario.dark {
        accumulate(&mut out, &synth_dark(d, fs, n, scenario.seed, res)?);
    }
    if let Some(m) = &scenario.mains {
        accumulate(&mut out, &synth_mains(m, fs, n)?);
    }
    if let (Some(p), false) = (&scenario.parasitic, scenario.lo_blocked) {
        let scaled = p.scaled(scenario.homodyne.lo_scale());
        accumulate(
            &mut out,
            &synth_parasitic(&scaled, fs, n, scenario.seed, res)?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vac(seconds: f64) -> SimScenario<f64> {
        SimScenario::vacuum(464e-6, 1024.0, seconds, 42)
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut s = vac(1.0);
        s.duration_s = 0.0;
        assert!(matches!(s.validate(), Err(Error::Config(_))));

        let mut s = vac(1.0);
        s.homodyne.lo_power_w = 0.0;
        assert!(s.validate().is_err());

        let mut s = vac(1.0);
        s.mains = Some(MainsModel {
            fundamental_hz: 50.0,
            harmonics: vec![Harmonic {
                order: 11,
                amplitude: 1.0,
                phase: 0.0,
            }],
        });
        assert!(s.validate().is_err(), "550 Hz aliases at 1024 Hz");

        let mut s = vac(1.0);
        s.mains = Some(MainsModel {
            fundamental_hz: 50.0,
            harmonics: vec![
                Harmonic {
                    order: 1,
                    amplitude: 1.0,
                    phase: 0.0,
                },
                Harmonic {
                    order: 1,
                    amplitude: 2.0,
                    phase: 0.0,
                },
            ],
        });
        assert!(s.validate().is_err(), "duplicate order");

        let mut s = vac(1.0);
        s.squeezer = Some(Squeezer {
            opo: OpoParams::new(12.0, 100e3).unwrap(),
            losses: LossBudget::lumped(0.15),
        });
        assert!(s.validate().is_err(), "Nyquist 512 Hz above 1e-3 x 100 kHz");
    }

    #[test]
    fn quantum_psd_follows_lo_and_quadrature() {
        let mut s = vac(1.0);
        assert_eq!(s.quantum_psd().unwrap(), 1.0);
        s.homodyne.lo_power_w = 928e-6;
        assert!((s.quantum_psd().unwrap() - 2.0).abs() < 1e-12);
        s.homodyne.lo_power_w = 464e-6;
        s.squeezer = Some(Squeezer {
            opo: OpoParams::with_gain(12.0).unwrap(),
            losses: LossBudget::lumped(0.15),
        });
        assert!((s.quantum_psd().unwrap() - 0.220_833_333).abs() < 1e-8);
        s.homodyne.theta = std::f64::consts::FRAC_PI_2;
        assert!((s.quantum_psd().unwrap() - 10.35).abs() < 1e-9);
        s.lo_blocked = true;
        assert_eq!(s.quantum_psd().unwrap(), 0.0);
    }

    #[test]
    fn visibility_joins_the_budget() {
        let mut s = vac(1.0);
        s.squeezer = Some(Squeezer {
            opo: OpoParams::with_gain(1e9).unwrap(),
            losses: LossBudget::new(),
        });
        s.homodyne.visibility = 0.9;
        let pair = s.quadrature_pair().unwrap();
        // Infinite gain leaves only the loss: l = 1 - 0.81.
        assert!((pair.v_squeezed - 0.19).abs() < 1e-6);
    }

    #[test]
    fn quantum_variance_matches_psd() {
        let s = vac(64.0);
        let x = synth_quantum_noise(&s, s.n_samples()).unwrap();
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        // PSD 1 per Hz over 512 Hz of bandwidth.
        let expected = 512.0;
        let se = expected * (2.0 / x.len() as f64).sqrt();
        assert!((var - expected).abs() < 4.0 * se, "{var}");
    }

    #[test]
    fn zero_models_give_zero() {
        let d = DarkNoiseModel {
            floor_rel_vacuum: 0.0,
            knee_hz: 5.0,
        };
        assert!(synth_dark(&d, 1024.0, 100, 1, 0.5)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let p = ParasiticModel {
            psd_at_1hz_rel_vacuum: 0.0,
            exponent_alpha: 2.0,
            f_min_hz: 0.1,
        };
        assert!(synth_parasitic(&p, 1024.0, 100, 1, 0.5)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let m = MainsModel::<f64> {
            fundamental_hz: 50.0,
            harmonics: vec![],
        };
        assert!(synth_mains(&m, 1024.0, 100)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn mains_mean_square() {
        let a = 3.0;
        let m = MainsModel {
            fundamental_hz: 50.0,
            harmonics: vec![Harmonic {
                order: 1,
                amplitude: a,
                phase: 0.3,
            }],
        };
        // Whole number of cycles.
        let x = synth_mains(&m, 1000.0, 1000).unwrap();
        let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((ms - a * a / 2.0).abs() < 1e-9);
    }

    #[test]
    fn model_psd_values() {
        let d = DarkNoiseModel::<f64> {
            floor_rel_vacuum: 0.0316,
            knee_hz: 7.3,
        };
        assert!((d.psd(1.0) - 0.262_28).abs() < 1e-5);
        assert!((d.psd(3200.0) - 0.031_672).abs() < 1e-5);
        let p = ParasiticModel::<f64> {
            psd_at_1hz_rel_vacuum: 0.223,
            exponent_alpha: 2.0,
            f_min_hz: 0.1,
        };
        assert!((p.psd(10.0) - 2.23e-3).abs() < 1e-12);
        assert_eq!(p.psd(0.01), p.psd(0.1));
        let white = ParasiticModel {
            exponent_alpha: 0.0,
            ..p
        };
        assert_eq!(white.psd(1.0), white.psd(1000.0));
    }

    #[test]
    fn vacuum_only_composition_is_quantum_noise() {
        let s = vac(2.0);
        let a = compose_scenario(&s).unwrap();
        let b = synth_quantum_noise(&s, s.n_samples()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_same_bits() {
        let mut s = vac(4.0);
        s.dark = Some(DarkNoiseModel {
            floor_rel_vacuum: 0.03,
            knee_hz: 7.0,
        });
        s.parasitic = Some(ParasiticModel {
            psd_at_1hz_rel_vacuum: 0.2,
            exponent_alpha: 2.0,
            f_min_hz: 0.1,
        });
        s.mains = Some(MainsModel::default_preset());
        let a = compose_scenario(&s).unwrap();
        let b = compose_scenario(&s).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        s.seed += 1;
        assert_ne!(a, compose_scenario(&s).unwrap());
    }

    #[test]
    fn digest_tracks_parameters() {
        let a = vac(1.0);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.homodyne.theta = 0.1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 16);
    }
}
