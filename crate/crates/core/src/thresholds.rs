//! Critical drift ratio, optimal sale ratio, optimal gambling band and the
//! objective `Θ` whose maximiser defines that band.
//!
//! Ratios are wealth-to-price ratios `x/y`. The sale ratio `w*` is the root of
//! `Λ`; the band `(ξ*, η*)` maximises `Θ_R(η, ξ)`; `γ₋(R)` is the drift ratio
//! at which the band opens up, i.e. where `(w*, w*)` stops being a local
//! maximum of `Θ`.
//!
//! Every formula here is written in terms of [`crra_log`], so `R = 1`
//! (logarithmic utility) is handled by the same code path as power utility.

use serde::Serialize;

use crate::error::{domain, precondition, Result};
use crate::model::{crra_log, MarketParams, Preferences, GAMMA_MINUS_TIE_TOL};
use crate::roots::bisect;

/// `Γ_R(γ) = (R-γ)^R (R+1-γ) - (2R-γ)^R (1-γ)` for `0 ≤ γ ≤ min(R, 1)`.
pub fn big_gamma(r: f64, gamma: f64) -> Result<f64> {
    check_r(r)?;
    if !(0.0..=r.min(1.0)).contains(&gamma) {
        return domain(format!("big_gamma needs 0 <= gamma <= min(R, 1), got gamma = {gamma}"));
    }
    Ok((r - gamma).powf(r) * (r + 1.0 - gamma) - (2.0 * r - gamma).powf(r) * (1.0 - gamma))
}

/// Log-ratio of the two terms of `Γ_R`; same sign as `Γ_R` but free of
/// overflow for large `R`. Equals `±∞` at the ends of `[0, min(R, 1)]`.
fn big_gamma_sign(r: f64, gamma: f64) -> f64 {
    r * ((r - gamma) / (2.0 * r - gamma)).ln() + (r + 1.0 - gamma).ln() - (1.0 - gamma).ln()
}

/// Limit of `Γ_R = 0` as `R → 1`: `ln((2-γ)/(1-γ)) - 1/((1-γ)(2-γ))`.
pub fn log_gamma_minus_equation(gamma: f64) -> f64 {
    if gamma >= 1.0 {
        return f64::NEG_INFINITY;
    }
    ((2.0 - gamma) / (1.0 - gamma)).ln() - 1.0 / ((1.0 - gamma) * (2.0 - gamma))
}

/// Critical drift ratio `γ₋(R) ∈ (0, min(R, 1))`.
pub fn gamma_minus(r: f64) -> Result<f64> {
    check_r(r)?;
    if r == 1.0 {
        return bisect(log_gamma_minus_equation, 0.0, 1.0);
    }
    bisect(|g| big_gamma_sign(r, g), 0.0, r.min(1.0))
}

/// `Λ(w) = (1-γ)((1+1/w)^{1-R} - 1)/(1-R) - (1+1/w)^{-R}/w`.
pub fn lambda_fn(r: f64, gamma: f64, w: f64) -> Result<f64> {
    check_r(r)?;
    if !(w > 0.0) {
        return domain(format!("lambda_fn needs w > 0, got {w}"));
    }
    let a = 1.0 + 1.0 / w;
    Ok((1.0 - gamma) * crra_log(a, r) - a.powf(-r) / w)
}

/// Optimal sale ratio `w*`: the unique positive root of `Λ`, which lies below
/// `(R-γ)/γ`. Requires `0 < γ < min(R, 1)`.
pub fn w_star(r: f64, gamma: f64) -> Result<f64> {
    check_r(r)?;
    if !(gamma > 0.0 && gamma < r.min(1.0)) {
        return precondition(format!(
            "w_star needs 0 < gamma < min(R, 1), got R = {r}, gamma = {gamma}"
        ));
    }
    let lam = |w: f64| lambda_fn(r, gamma, w).unwrap_or(f64::NAN);
    let hi = (r - gamma) / gamma;
    let mut lo = 1e-10;
    while !(lam(lo) > 0.0) {
        lo *= 0.5;
        if lo < f64::MIN_POSITIVE {
            return precondition(format!("no positive lambda near zero for R = {r}, gamma = {gamma}"));
        }
    }
    bisect(lam, lo, hi)
}

fn check_band_params(r: f64, gamma: f64) -> Result<()> {
    check_r(r)?;
    let gm = gamma_minus(r)?;
    if !(gamma > gm + GAMMA_MINUS_TIE_TOL && gamma < r.min(1.0)) {
        return precondition(format!(
            "gambling band needs gamma_minus(R) < gamma < min(R, 1); R = {r}, gamma = {gamma}, gamma_minus = {gm}"
        ));
    }
    Ok(())
}

/// Upper edge `η*` of the optimal gambling band.
///
/// Evaluates `η* = (1-R) / (R [a - b^{1/R}])` with `a = (1+R-γ)/(R-γ)` and
/// `b = (1+R-γ)/(1-γ)`, after factoring the common `(1-R)` out of the bracket,
/// so the expression stays well conditioned at and around `R = 1`.
pub fn eta_star(r: f64, gamma: f64) -> Result<f64> {
    check_band_params(r, gamma)?;
    Ok(eta_star_unchecked(r, gamma))
}

pub(crate) fn eta_star_unchecked(r: f64, gamma: f64) -> f64 {
    let b = (1.0 + r - gamma) / (1.0 - gamma);
    let ln_b = b.ln();
    let s = (1.0 - r) / r * ln_b;
    let expm1_ratio = if s == 0.0 { 1.0 } else { s.exp_m1() / s };
    let bracket = (1.0 + r - gamma) / ((r - gamma) * (1.0 - gamma)) - b * ln_b / r * expm1_ratio;
    1.0 / (r * bracket)
}

/// Lower edge `ξ* = ((R+1-γ)/(R-γ)) η* - 1/R` of the optimal gambling band.
pub fn xi_star(r: f64, gamma: f64) -> Result<f64> {
    let eta = eta_star(r, gamma)?;
    Ok(xi_from_eta(r, gamma, eta))
}

fn xi_from_eta(r: f64, gamma: f64, eta: f64) -> f64 {
    (r + 1.0 - gamma) / (r - gamma) * eta - 1.0 / r
}

fn check_spec(eta: f64, xi: f64) -> Result<()> {
    if !(eta > 0.0 && xi > -1.0 && xi <= eta) {
        return domain(format!(
            "band needs eta > 0 and -1 < xi <= eta, got eta = {eta}, xi = {xi}"
        ));
    }
    Ok(())
}

/// `Θ_R(η, ξ)`, the coefficient of `y^{1-γ} x^{γ-R}` in the value of the band
/// strategy with edges `ξ ≤ η`.
///
/// Fails when `γ ≥ R + η/(η-ξ)`: the strategy then has infinite value.
pub fn theta(r: f64, gamma: f64, eta: f64, xi: f64) -> Result<f64> {
    check_r(r)?;
    check_spec(eta, xi)?;
    if xi == eta {
        return Ok(eta.powf(1.0 - gamma) * crra_log(1.0 + 1.0 / eta, r));
    }
    let width = eta - xi;
    let denom = eta + width * (r - gamma);
    if !(denom > 0.0) {
        return domain(format!(
            "theta is infinite for gamma >= R + eta/(eta - xi) (R = {r}, gamma = {gamma}, eta = {eta}, xi = {xi})"
        ));
    }
    let num = width + eta * crra_log((1.0 + xi) / eta, r);
    Ok(eta.powf(1.0 - gamma) * num / denom)
}

/// `Θ` in the coordinates `(η, δ)` with `δ = (η-ξ)/η ∈ [0, 1+1/η)`.
pub fn phi_reparam(r: f64, gamma: f64, eta: f64, delta: f64) -> Result<f64> {
    check_r(r)?;
    if !(eta > 0.0) || !(delta >= 0.0 && delta < 1.0 + 1.0 / eta) {
        return domain(format!(
            "phi_reparam needs eta > 0 and 0 <= delta < 1 + 1/eta, got ({eta}, {delta})"
        ));
    }
    let denom = 1.0 + delta * (r - gamma);
    if !(denom > 0.0) {
        return domain("phi_reparam: 1 + delta (R - gamma) must be positive");
    }
    Ok(eta.powf(1.0 - gamma) / denom * (delta + crra_log(1.0 - delta + 1.0 / eta, r)))
}

/// Band strategy with edges `ξ ≤ η` on the wealth-to-price ratio. `ξ = η`
/// is the pure threshold rule that sells when `Y` first reaches `x/η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrategySpec {
    pub eta: f64,
    pub xi: f64,
}

impl StrategySpec {
    pub fn new(eta: f64, xi: f64) -> Result<Self> {
        check_spec(eta, xi)?;
        Ok(Self { eta, xi })
    }

    pub fn threshold(w: f64) -> Result<Self> {
        Self::new(w, w)
    }

    /// The optimal band for `γ₋ < γ < min(R, 1)`.
    pub fn optimal(r: f64, gamma: f64) -> Result<Self> {
        let eta = eta_star(r, gamma)?;
        Ok(Self {
            eta,
            xi: xi_from_eta(r, gamma, eta),
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_spec(self.eta, self.xi)
    }

    pub fn is_threshold(&self) -> bool {
        self.xi == self.eta
    }

    /// `η/(η-ξ)`: rate of the sale hazard per unit of `ln` running maximum.
    pub fn hazard_rate(&self) -> f64 {
        self.eta / (self.eta - self.xi)
    }
}

/// Interior turning point of `δ ↦ Φ(η, δ)`: `δ₂ = (R-γ-ηR)/(η(R-γ)R)`.
pub fn delta_two(r: f64, gamma: f64, eta: f64) -> f64 {
    (r - gamma - eta * r) / (eta * (r - gamma) * r)
}

/// Grid for the brute-force maximisation of `Θ`.
///
/// Uniform in `η` over `(0, eta_max]` and in `ξ` over `(-1, eta_max]`. Nodes
/// with `ξ > η` are clamped onto the diagonal `ξ = η` (that is `δ = 0`), so
/// the boundary of the admissible set is always part of the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaGrid {
    pub eta_max: f64,
    pub n_eta: usize,
    pub n_xi: usize,
}

impl ThetaGrid {
    /// 200 × 200 with `eta_max = 2(R-γ)/max(γ, R/4)`.
    pub fn default_for(r: f64, gamma: f64) -> Self {
        Self {
            eta_max: 2.0 * (r - gamma) / gamma.max(r / 4.0),
            n_eta: 200,
            n_xi: 200,
        }
    }

    pub fn eta_step(&self) -> f64 {
        self.eta_max / self.n_eta as f64
    }

    pub fn xi_step(&self) -> f64 {
        (1.0 + self.eta_max) / self.n_xi as f64
    }

    pub fn eta_at(&self, i: usize) -> f64 {
        self.eta_max * (i + 1) as f64 / self.n_eta as f64
    }

    pub fn xi_at(&self, j: usize) -> f64 {
        -1.0 + (1.0 + self.eta_max) * (j + 1) as f64 / self.n_xi as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaArgmax {
    pub eta: f64,
    pub xi: f64,
    /// `(η-ξ)/η`; zero when the maximiser sits on the diagonal.
    pub delta: f64,
    pub theta: f64,
}

/// Grid maximiser of `Φ(η, δ)`. Independent of the closed forms for `η*, ξ*`.
pub fn brute_force_theta_argmax(r: f64, gamma: f64, grid: &ThetaGrid) -> Result<ThetaArgmax> {
    check_r(r)?;
    if !(grid.eta_max > 0.0) || grid.n_eta == 0 || grid.n_xi == 0 {
        return precondition("theta grid needs eta_max > 0 and nonempty axes");
    }
    let mut best: Option<ThetaArgmax> = None;
    for i in 0..grid.n_eta {
        let eta = grid.eta_at(i);
        for j in 0..grid.n_xi {
            let xi = grid.xi_at(j).min(eta);
            let delta = (eta - xi) / eta;
            let Ok(value) = phi_reparam(r, gamma, eta, delta) else {
                continue;
            };
            if best.is_none_or(|b| value > b.theta) {
                best = Some(ThetaArgmax {
                    eta,
                    xi,
                    delta,
                    theta: value,
                });
            }
        }
    }
    best.ok_or_else(|| crate::error::Error::Precondition("theta is infinite on the whole grid".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianClass {
    LocalMax,
    Saddle,
}

/// Second-order test at the boundary turning point `(η, δ) = (w*, 0)` of `Φ`:
/// local maximum iff `R - γ(w*+1) < R(w*)²`.
pub fn hessian_classifier(r: f64, gamma: f64) -> Result<HessianClass> {
    let margin = hessian_margin(r, gamma)?;
    Ok(if margin > 0.0 {
        HessianClass::LocalMax
    } else {
        HessianClass::Saddle
    })
}

/// `R(w*)² - (R - γ(w*+1))`; positive where `(w*, 0)` is a local maximum.
pub fn hessian_margin(r: f64, gamma: f64) -> Result<f64> {
    let w = w_star(r, gamma)?;
    Ok(r * w * w - (r - gamma * (w + 1.0)))
}

/// Ruin-avoiding sale multiple `z* = (γ-1)/(γ-R)` for `γ > R > 1`.
pub fn z_star(r: f64, gamma: f64) -> Result<f64> {
    if !(r > 1.0 && gamma > r) {
        return precondition(format!("z_star needs gamma > R > 1, got R = {r}, gamma = {gamma}"));
    }
    Ok((gamma - 1.0) / (gamma - r))
}

/// Tail exponent `φ = (1-γ) + η/(η-ξ)` of the running maximum at the sale time.
pub fn phi_exponent(gamma: f64, eta: f64, xi: f64) -> Result<f64> {
    if !(eta > xi) || !(gamma < 1.0) {
        return precondition(format!(
            "phi_exponent needs eta > xi and gamma < 1, got ({gamma}, {eta}, {xi})"
        ));
    }
    Ok((1.0 - gamma) + eta / (eta - xi))
}

fn check_r(r: f64) -> Result<()> {
    if !(r.is_finite() && r > 0.0) {
        return domain(format!("risk aversion must be positive, got {r}"));
    }
    Ok(())
}

/// Every critical quantity that applies at `(R, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub risk_aversion: f64,
    pub gamma: f64,
    pub gamma_minus: f64,
    /// Present for `0 < γ < min(R, 1)`.
    pub w_star: Option<f64>,
    /// `Λ(w*)`, reported so callers can see the solver residual.
    pub lambda_residual: Option<f64>,
    /// Band edges, present for `γ₋ < γ < min(R, 1)`.
    pub eta_star: Option<f64>,
    pub xi_star: Option<f64>,
    /// `Θ` at the maximiser: `Θ(η*, ξ*)` in the band regime, `Θ(w*, w*)` below it.
    pub theta_star: Option<f64>,
    pub phi: Option<f64>,
    /// Present for `γ > R > 1`.
    pub z_star: Option<f64>,
}

impl Thresholds {
    pub fn solve(prefs: &Preferences, market: &MarketParams) -> Result<Self> {
        let r = prefs.risk_aversion();
        let gamma = market.gamma();
        let gm = gamma_minus(r)?;
        let mut t = Thresholds {
            risk_aversion: r,
            gamma,
            gamma_minus: gm,
            w_star: None,
            lambda_residual: None,
            eta_star: None,
            xi_star: None,
            theta_star: None,
            phi: None,
            z_star: None,
        };
        if gamma > 0.0 && gamma < r.min(1.0) {
            let w = w_star(r, gamma)?;
            t.w_star = Some(w);
            t.lambda_residual = Some(lambda_fn(r, gamma, w)?);
            if gamma > gm + GAMMA_MINUS_TIE_TOL {
                let eta = eta_star_unchecked(r, gamma);
                let xi = xi_from_eta(r, gamma, eta);
                t.eta_star = Some(eta);
                t.xi_star = Some(xi);
                t.theta_star = Some(theta(r, gamma, eta, xi)?);
                t.phi = Some(phi_exponent(gamma, eta, xi)?);
            } else {
                t.theta_star = Some(theta(r, gamma, w, w)?);
            }
        }
        if r > 1.0 && gamma > r {
            t.z_star = Some(z_star(r, gamma)?);
        }
        Ok(t)
    }

    /// Whether the optimal strategy with gambling uses a nondegenerate band.
    pub fn has_band(&self) -> bool {
        self.eta_star.is_some()
    }
}
