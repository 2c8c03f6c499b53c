//! Market and preference parameters, utility evaluation and the regime map.
//!
//! Every closed form in this crate depends on the pair `(R, γ)` only, where `R`
//! is the coefficient of relative risk aversion and `γ = 2μ/σ²` is the drift
//! ratio of the asset price. Volatility only sets the clock for path
//! simulation, so [`MarketParams`] stores `γ` and `σ` and derives `μ`.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{domain, Error, Result};
use crate::thresholds;

/// Absolute tolerance used when comparing a user supplied `γ` with the solved
/// critical drift ratio `γ₋(R)`. Values within this distance are treated as
/// lying on the threshold side (`γ ≤ γ₋`).
pub const GAMMA_MINUS_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    Power,
    Logarithmic,
}

/// Constant relative risk aversion preferences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preferences {
    risk_aversion: f64,
    utility_kind: UtilityKind,
}

impl Preferences {
    /// Power utility for `R ≠ 1`, logarithmic utility for `R = 1`.
    pub fn new(risk_aversion: f64) -> Result<Self> {
        if !(risk_aversion.is_finite() && risk_aversion > 0.0) {
            return domain(format!("risk aversion must be positive, got {risk_aversion}"));
        }
        let utility_kind = if risk_aversion == 1.0 {
            UtilityKind::Logarithmic
        } else {
            UtilityKind::Power
        };
        Ok(Self {
            risk_aversion,
            utility_kind,
        })
    }

    pub fn power(risk_aversion: f64) -> Result<Self> {
        if risk_aversion == 1.0 {
            return domain("power utility requires R != 1; use Preferences::log()");
        }
        Self::new(risk_aversion)
    }

    pub fn log() -> Self {
        Self {
            risk_aversion: 1.0,
            utility_kind: UtilityKind::Logarithmic,
        }
    }

    pub fn risk_aversion(&self) -> f64 {
        self.risk_aversion
    }

    pub fn utility_kind(&self) -> UtilityKind {
        self.utility_kind
    }

    pub fn is_log(&self) -> bool {
        self.utility_kind == UtilityKind::Logarithmic
    }
}

/// Asset price dynamics `dY = Y(σ dW + μ dt)` with `μ = γσ²/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarketParams {
    gamma: f64,
    sigma: f64,
}

impl MarketParams {
    pub fn new(gamma: f64, sigma: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return domain(format!("gamma must be finite, got {gamma}"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return domain(format!("sigma must be positive, got {sigma}"));
        }
        Ok(Self { gamma, sigma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mu(&self) -> f64 {
        self.gamma * self.sigma * self.sigma / 2.0
    }
}

/// Other wealth `x` and asset price `y`, with `y > 0` and `x + y ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
}

impl State {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(y.is_finite() && y > 0.0) {
            return domain(format!("asset price must be positive, got y = {y}"));
        }
        if !x.is_finite() || x + y < 0.0 {
            return domain(format!("total wealth must be nonnegative, got x + y = {}", x + y));
        }
        Ok(Self { x, y })
    }

    /// Re-checks the invariants of [`State::new`]; the fields are public.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.x, self.y).map(|_| ())
    }

    pub fn total(&self) -> f64 {
        self.x + self.y
    }

    pub fn ratio(&self) -> f64 {
        self.x / self.y
    }
}

/// A value in the extended reals.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum ExtendedValue {
    MinusInfinity,
    Finite(f64),
    PlusInfinity,
}

impl ExtendedValue {
    pub fn finite(&self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Self::Finite(_))
    }

    /// Collapses to an `f64`, mapping the infinities to `±∞`.
    pub fn to_f64(&self) -> f64 {
        match self {
            Self::MinusInfinity => f64::NEG_INFINITY,
            Self::Finite(v) => *v,
            Self::PlusInfinity => f64::INFINITY,
        }
    }

    pub fn from_f64(v: f64) -> Self {
        if v == f64::INFINITY {
            Self::PlusInfinity
        } else if v == f64::NEG_INFINITY {
            Self::MinusInfinity
        } else {
            Self::Finite(v)
        }
    }
}

impl fmt::Display for ExtendedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MinusInfinity => f.write_str("-inf"),
            Self::PlusInfinity => f.write_str("+inf"),
            Self::Finite(v) => write!(f, "{v:.16e}"),
        }
    }
}

impl Serialize for ExtendedValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::MinusInfinity => s.serialize_str("-inf"),
            Self::PlusInfinity => s.serialize_str("+inf"),
            Self::Finite(v) => s.serialize_f64(*v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// Wealth held constant; only the sale time is chosen.
    NoGamble,
    /// Wealth may follow any fair martingale independent of the asset.
    Gamble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeVariant {
    StopImmediately,
    ThresholdOnly,
    GambleBand,
    BoundaryGammaEqualsR,
    InfiniteValue,
    HighGammaHighR,
    Unsupported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Regime {
    pub problem: Problem,
    pub variant: RegimeVariant,
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NoGamble => "no_gamble",
            Self::Gamble => "gamble",
        })
    }
}

impl fmt::Display for RegimeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::StopImmediately => "stop_immediately",
            Self::ThresholdOnly => "threshold_only",
            Self::GambleBand => "gamble_band",
            Self::BoundaryGammaEqualsR => "boundary_gamma_equals_r",
            Self::InfiniteValue => "infinite_value",
            Self::HighGammaHighR => "high_gamma_high_r",
            Self::Unsupported => "unsupported",
        })
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.problem, self.variant)
    }
}

/// `(a^{1-R} - 1)/(1 - R)`, continuous through `R = 1` where it equals `ln a`.
///
/// Evaluated as `expm1((1-R) ln a)/(1-R)` so that nothing cancels for `R`
/// close to one. `a = 0` gives `-1/(1-R)` for `R < 1` and `-∞` otherwise.
pub fn crra_log(a: f64, r: f64) -> f64 {
    let ln_a = a.ln();
    let one_minus_r = 1.0 - r;
    if one_minus_r == 0.0 {
        return ln_a;
    }
    (one_minus_r * ln_a).exp_m1() / one_minus_r
}

/// CRRA utility of total wealth `u`.
pub fn utility(prefs: &Preferences, u: f64) -> Result<ExtendedValue> {
    if !(u >= 0.0) {
        return domain(format!("utility is defined for nonnegative wealth, got {u}"));
    }
    Ok(ExtendedValue::from_f64(utility_unchecked(prefs.risk_aversion, u)))
}

/// Utility as a raw `f64` (`-∞` at zero for `R ≥ 1`); `u` must be `≥ 0`.
pub(crate) fn utility_unchecked(r: f64, u: f64) -> f64 {
    crra_log(u, r)
}

/// Maps `(R, γ, problem)` onto the piece of the solution that applies.
pub fn classify_regime(prefs: &Preferences, market: &MarketParams, problem: Problem) -> Regime {
    let variant = classify_variant(prefs.risk_aversion(), market.gamma(), problem);
    Regime { problem, variant }
}

fn classify_variant(r: f64, gamma: f64, problem: Problem) -> RegimeVariant {
    use RegimeVariant::*;
    if gamma <= 0.0 {
        return StopImmediately;
    }
    let upper = r.min(1.0);
    if gamma < upper {
        let gm = thresholds::gamma_minus(r).expect("gamma_minus brackets for every R > 0");
        if gamma <= gm + GAMMA_MINUS_TIE_TOL {
            return ThresholdOnly;
        }
        return match problem {
            Problem::NoGamble => ThresholdOnly,
            Problem::Gamble => GambleBand,
        };
    }
    // γ ≥ min(R, 1) from here on.
    if r < 1.0 {
        if gamma == r {
            return match problem {
                Problem::NoGamble => BoundaryGammaEqualsR,
                Problem::Gamble => InfiniteValue,
            };
        }
        if gamma == 1.0 {
            return match problem {
                Problem::NoGamble => InfiniteValue,
                Problem::Gamble => Unsupported,
            };
        }
        return InfiniteValue;
    }
    if r == 1.0 {
        return match problem {
            Problem::NoGamble => InfiniteValue,
            Problem::Gamble => Unsupported,
        };
    }
    match problem {
        Problem::NoGamble if gamma > r => HighGammaHighR,
        _ => Unsupported,
    }
}

impl Regime {
    pub fn is_finite(&self) -> bool {
        !matches!(self.variant, RegimeVariant::InfiniteValue | RegimeVariant::Unsupported)
    }

    pub fn require_supported(self) -> Result<Self> {
        match self.variant {
            RegimeVariant::Unsupported => Err(Error::Unsupported(self)),
            _ => Ok(self),
        }
    }
}
