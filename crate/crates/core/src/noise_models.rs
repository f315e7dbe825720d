//! Closed-form quadrature variances of a sub-threshold OPO seen through an
//! optical loss channel.
//!
//! All variances are dimensionless and normalized so that the vacuum state
//! has variance 1 (0 dB). The model is frequency-flat: it holds for Fourier
//! frequencies far below the OPO cavity linewidth, and bands reaching above
//! [`FLAT_REGIME_FRACTION`] of the linewidth are rejected.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest analysis frequency, as a fraction of the cavity linewidth, for
/// which the flat model is accepted.
pub const FLAT_REGIME_FRACTION: f64 = 1e-3;

/// Cavity linewidth of the reference squeezer (Hz).
pub const REFERENCE_LINEWIDTH_HZ: f64 = 27e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpoParams<T> {
    /// Classical parametric gain, `g >= 1`.
    pub gain: T,
    pub cavity_linewidth_hz: T,
    /// Pump power annotation in mW. Not consumed by any formula.
    pub pump_power_mw: Option<T>,
}

impl<T: Real> OpoParams<T> {
    pub fn new(gain: T, cavity_linewidth_hz: T) -> Result<Self> {
        let opo = OpoParams {
            gain,
            cavity_linewidth_hz,
            pump_power_mw: None,
        };
        opo.validate()?;
        Ok(opo)
    }

    /// OPO with the reference 27 MHz linewidth.
    pub fn with_gain(gain: T) -> Result<Self> {
        Self::new(gain, T::lit(REFERENCE_LINEWIDTH_HZ))
    }

    pub fn with_pump_power_mw(mut self, mw: T) -> Self {
        self.pump_power_mw = Some(mw);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= T::one()) {
            return Err(Error::Domain(format!("parametric gain {} < 1", self.gain)));
        }
        if !(self.cavity_linewidth_hz > T::zero()) || !self.cavity_linewidth_hz.is_finite() {
            return Err(Error::Domain(format!(
                "cavity linewidth {} Hz must be positive",
                self.cavity_linewidth_hz
            )));
        }
        Ok(())
    }

    /// Highest frequency at which the flat-spectrum model is trusted.
    pub fn max_flat_frequency_hz(&self) -> T {
        T::lit(FLAT_REGIME_FRACTION) * self.cavity_linewidth_hz
    }

    /// Rejects an analysis band whose upper edge leaves the flat regime.
    pub fn check_band(&self, f_hi_hz: T) -> Result<()> {
        let limit = self.max_flat_frequency_hz();
        if f_hi_hz > limit {
            return Err(Error::Config(format!(
                "band edge {f_hi_hz} Hz exceeds flat-regime limit {limit} Hz \
                 ({FLAT_REGIME_FRACTION} x cavity linewidth)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEntry<T> {
    pub name: String,
    pub efficiency: T,
}

/// Ordered chain of detection efficiencies. The total loss is
/// `1 - prod(efficiency)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBudget<T> {
    entries: Vec<LossEntry<T>>,
}

impl<T: Real> LossBudget<T> {
    pub fn new() -> Self {
        LossBudget {
            entries: Vec::new(),
        }
    }

    /// Budget with a single lumped entry of the given total loss.
    pub fn lumped(loss: T) -> Self {
        Self::new().with_entry("total", T::one() - loss)
    }

    pub fn from_entries<S: Into<String>>(entries: impl IntoIterator<Item = (S, T)>) -> Self {
        LossBudget {
            entries: entries
                .into_iter()
                .map(|(name, efficiency)| LossEntry {
                    name: name.into(),
                    efficiency,
                })
                .collect(),
        }
    }

    pub fn with_entry(mut self, name: impl Into<String>, efficiency: T) -> Self {
        self.push(name, efficiency);
        self
    }

    pub fn push(&mut self, name: impl Into<String>, efficiency: T) {
        self.entries.push(LossEntry {
            name: name.into(),
            efficiency,
        });
    }

    /// Appends the mode-overlap efficiency for a fringe visibility, stored as
    /// `visibility^2` under the name `visibility`.
    pub fn with_visibility(self, visibility: T) -> Self {
        self.with_entry("visibility", visibility * visibility)
    }

    pub fn entries(&self) -> &[LossEntry<T>] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !(e.efficiency > T::zero() && e.efficiency <= T::one()) {
                return Err(Error::InvalidBudget(format!(
                    "efficiency of '{}' is {}, expected (0, 1]",
                    e.name, e.efficiency
                )));
            }
        }
        Ok(())
    }

    pub fn total_efficiency(&self) -> Result<T> {
        self.validate()?;
        Ok(self
            .entries
            .iter()
            .fold(T::one(), |acc, e| acc * e.efficiency))
    }
}

/// Total optical loss `l = 1 - prod(eta_i)` of a budget.
pub fn total_loss<T: Real>(budget: &LossBudget<T>) -> Result<T> {
    Ok(T::one() - budget.total_efficiency()?)
}

/// Variances of the deamplified (`v_squeezed`) and amplified
/// (`v_antisqueezed`) quadratures, relative to vacuum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraturePair<T> {
    pub v_squeezed: T,
    pub v_antisqueezed: T,
}

impl<T: Real> QuadraturePair<T> {
    pub const fn vacuum_of(one: T) -> Self {
        QuadraturePair {
            v_squeezed: one,
            v_antisqueezed: one,
        }
    }

    pub fn vacuum() -> Self {
        Self::vacuum_of(T::one())
    }

    pub fn from_opo(opo: &OpoParams<T>, loss: T) -> Result<Self> {
        Ok(QuadraturePair {
            v_squeezed: squeezed_variance(opo, loss)?,
            v_antisqueezed: antisqueezed_variance(opo, loss)?,
        })
    }

    pub fn variance_at(&self, theta: T) -> T {
        quadrature_variance(self, theta)
    }

    pub fn uncertainty_product(&self) -> T {
        self.v_squeezed * self.v_antisqueezed
    }
}

fn check_domain<T: Real>(opo: &OpoParams<T>, loss: T) -> Result<()> {
    opo.validate()?;
    // l = 1 is admitted: everything is lost and the vacuum comes back.
    if !(loss >= T::zero() && loss <= T::one()) {
        return Err(Error::Domain(format!("loss {loss} outside [0, 1]")));
    }
    Ok(())
}

/// `V1 = l + (1 - l) / g`.
pub fn squeezed_variance<T: Real>(opo: &OpoParams<T>, loss: T) -> Result<T> {
    check_domain(opo, loss)?;
    Ok(loss + (T::one() - loss) / opo.gain)
}

/// `V2 = l + (1 - l) * g`.
pub fn antisqueezed_variance<T: Real>(opo: &OpoParams<T>, loss: T) -> Result<T> {
    check_domain(opo, loss)?;
    Ok(loss + (T::one() - loss) * opo.gain)
}

/// Variance of the quadrature selected by LO phase `theta`:
/// `V1 cos^2(theta) + V2 sin^2(theta)`.
pub fn quadrature_variance<T: Real>(pair: &QuadraturePair<T>, theta: T) -> T {
    let (s, c) = theta.sin_cos();
    pair.v_squeezed * c * c + pair.v_antisqueezed * s * s
}

pub fn variance_to_db<T: Real>(v: T) -> Result<T> {
    if !(v > T::zero()) {
        return Err(Error::Domain(format!(
            "variance {v} must be positive for dB"
        )));
    }
    Ok(T::lit(10.0) * v.log10())
}

pub fn db_to_variance<T: Real>(db: T) -> T {
    T::lit(10.0).powf(db / T::lit(10.0))
}

/// Squeezing strength in dB below vacuum, `-10 log10(l + (1-l)/g)`.
pub fn squeezing_strength_db<T: Real>(opo: &OpoParams<T>, loss: T) -> Result<T> {
    Ok(-variance_to_db(squeezed_variance(opo, loss)?)?)
}

/// Closed interval with a nominal point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueInterval<T> {
    pub lo: T,
    pub nominal: T,
    pub hi: T,
}

impl<T: Real> ValueInterval<T> {
    pub fn new(lo: T, nominal: T, hi: T) -> Result<Self> {
        if !(lo <= nominal && nominal <= hi) {
            return Err(Error::Domain(format!(
                "interval requires lo <= nominal <= hi, got [{lo}, {nominal}, {hi}]"
            )));
        }
        Ok(ValueInterval { lo, nominal, hi })
    }

    pub fn exact(x: T) -> Self {
        ValueInterval {
            lo: x,
            nominal: x,
            hi: x,
        }
    }

    /// `nominal +- half_width`.
    pub fn symmetric(nominal: T, half_width: T) -> Result<Self> {
        Self::new(nominal - half_width, nominal, nominal + half_width)
    }

    pub fn contains(&self, x: T) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Squeezing strength (dB below vacuum) over a rectangle of gain and loss
/// bounds. The strength is monotone in each argument, so the extremes sit on
/// the four corners.
pub fn squeezing_interval<T: Real>(
    gain: ValueInterval<T>,
    loss: ValueInterval<T>,
) -> Result<ValueInterval<T>> {
    let strength = |g: T, l: T| -> Result<T> {
        let opo = OpoParams::with_gain(g)?;
        squeezing_strength_db(&opo, l)
    };
    let nominal = strength(gain.nominal, loss.nominal)?;
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for g in [gain.lo, gain.hi] {
        for l in [loss.lo, loss.hi] {
            let s = strength(g, l)?;
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    ValueInterval::new(lo, nominal, hi)
}
