//! Closed-form value functions and the regime dispatch for the problems with
//! and without gambling.
//!
//! All formulas are written through [`crra_log`], so they hold unchanged for
//! logarithmic utility.

use std::fmt;

use serde::Serialize;

use crate::error::{precondition, Error, Result};
use crate::model::{
    classify_regime, crra_log, utility_unchecked, ExtendedValue, MarketParams, Preferences, Problem, Regime,
    RegimeVariant, State,
};
use crate::thresholds::{theta, z_star, StrategySpec, Thresholds};

/// Which part of the state space a point lies in under the optimal strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Sell,
    GambleBand,
    Wait,
    NotApplicable,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sell => "sell",
            Self::GambleBand => "gamble_band",
            Self::Wait => "wait",
            Self::NotApplicable => "not_applicable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueResult {
    pub value: ExtendedValue,
    pub regime: Regime,
    pub region: Region,
}

fn u(r: f64, w: f64) -> f64 {
    utility_unchecked(r, w)
}

/// Value of selling the first time `Y` reaches `x/w`, or at once if
/// `y ≥ x/w`. Requires `γ < 1` when the sale is deferred.
///
/// Returns `-∞` at `x + y = 0` for `R ≥ 1`.
pub fn v_threshold(prefs: &Preferences, market: &MarketParams, w: f64, state: &State) -> Result<f64> {
    state.validate()?;
    if !(w > 0.0 && w.is_finite()) {
        return precondition(format!("threshold ratio must be positive, got {w}"));
    }
    let r = prefs.risk_aversion();
    let (x, y) = (state.x, state.y);
    if x <= w * y {
        return Ok(u(r, x + y));
    }
    let gamma = market.gamma();
    if !(gamma < 1.0) {
        return precondition(format!("deferred sale needs gamma < 1, got {gamma}"));
    }
    Ok(u(r, x) + (y * w / x).powf(1.0 - gamma) * x.powf(1.0 - r) * crra_log(1.0 + 1.0 / w, r))
}

/// Value of the band strategy `spec`: sell below `ξy`, gamble to the edges
/// inside `(ξy, ηy)`, wait above `ηy` and push wealth up along `x = ηY`.
pub fn v_band(prefs: &Preferences, market: &MarketParams, spec: &StrategySpec, state: &State) -> Result<ExtendedValue> {
    state.validate()?;
    spec.validate()?;
    let gamma = market.gamma();
    if !(gamma < 1.0) {
        return precondition(format!("band strategy needs gamma < 1, got {gamma}"));
    }
    let r = prefs.risk_aversion();
    let (x, y) = (state.x, state.y);
    let (eta, xi) = (spec.eta, spec.xi);
    if x <= xi * y {
        return Ok(ExtendedValue::from_f64(u(r, x + y)));
    }
    if spec.is_threshold() {
        return v_threshold(prefs, market, eta, state).map(ExtendedValue::from_f64);
    }
    if !(gamma < r + spec.hazard_rate()) {
        return Ok(ExtendedValue::PlusInfinity);
    }
    let th = theta(r, gamma, eta, xi)?;
    if x >= eta * y {
        return Ok(ExtendedValue::Finite(k_value(r, gamma, th, x, y)));
    }
    // Fair gamble to ηy with probability p, to ξy otherwise.
    let p = (x - xi * y) / ((eta - xi) * y);
    let k_top = u(r, eta * y) + y.powf(1.0 - r) * eta.powf(gamma - r) * th;
    Ok(ExtendedValue::Finite(p * k_top + (1.0 - p) * u(r, (1.0 + xi) * y)))
}

/// `K(x, y) = U(x) + y^{1-γ} x^{γ-R} Θ`, the value in the waiting region.
fn k_value(r: f64, gamma: f64, th: f64, x: f64, y: f64) -> f64 {
    u(r, x) + y.powf(1.0 - gamma) * x.powf(gamma - r) * th
}

/// Value under the optimal band written out explicitly with the optimal
/// `Θ*`. Power utility only; kept as an independent cross-check of
/// [`v_band`] at the optimum.
pub fn v_band_optimal_explicit(r: f64, gamma: f64, eta: f64, xi: f64, state: &State) -> Result<f64> {
    state.validate()?;
    if r == 1.0 {
        return precondition("explicit band display is written for R != 1");
    }
    let (x, y) = (state.x, state.y);
    if x <= xi * y {
        return Ok(u(r, x + y));
    }
    let q = x / y;
    if q <= eta {
        let c = (2.0 * r - gamma) * (1.0 - gamma) / ((r - gamma) * (1.0 + r - gamma));
        let brace = (q - xi) * eta.powf(1.0 - r) * c + (eta - q) * (1.0 + xi).powf(1.0 - r);
        return Ok((y.powf(1.0 - r) / (eta - xi) * brace - 1.0) / (1.0 - r));
    }
    let theta_star = eta.powf(1.0 - gamma) * r / ((r - gamma) * (1.0 + r - gamma));
    Ok(k_value(r, gamma, theta_star, x, y))
}

/// Value for `γ > R > 1` without gambling: sell as soon as `Y` reaches
/// `|x| z*` when `x < 0`; the supremum `1/(R-1)` for `x ≥ 0` is not attained.
///
/// `x + y = 0` gives `-∞`: the only admissible action is an immediate sale.
pub fn v_zstar(prefs: &Preferences, market: &MarketParams, state: &State) -> Result<ExtendedValue> {
    state.validate()?;
    let r = prefs.risk_aversion();
    let gamma = market.gamma();
    let z = z_star(r, gamma)?;
    let (x, y) = (state.x, state.y);
    if x >= 0.0 {
        return Ok(ExtendedValue::Finite(1.0 / (r - 1.0)));
    }
    if x + y == 0.0 {
        return Ok(ExtendedValue::MinusInfinity);
    }
    let ax = -x;
    if y < ax * z {
        return Ok(ExtendedValue::Finite((1.0 - (x + y).powf(1.0 - r)) / (r - 1.0)));
    }
    let ln_c = (gamma - 1.0) * (gamma - 1.0).ln() - (r - 1.0) * (r - 1.0).ln() - (gamma - r) * (gamma - r).ln();
    let term = (ln_c + (gamma - r) * ax.ln() - (gamma - 1.0) * y.ln()).exp();
    Ok(ExtendedValue::Finite((1.0 - term) / (r - 1.0)))
}

/// Regime, thresholds and strategy for one `(R, γ, problem)`, solved once so
/// that many states can be evaluated cheaply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Solution {
    pub prefs: Preferences,
    pub market: MarketParams,
    pub regime: Regime,
    pub thresholds: Thresholds,
}

impl Solution {
    pub fn new(prefs: &Preferences, market: &MarketParams, problem: Problem) -> Result<Self> {
        let regime = classify_regime(prefs, market, problem);
        let thresholds = Thresholds::solve(prefs, market)?;
        Ok(Self {
            prefs: *prefs,
            market: *market,
            regime,
            thresholds,
        })
    }

    /// Optimal band strategy, when the optimal strategy is of band or
    /// threshold form.
    pub fn strategy(&self) -> Option<StrategySpec> {
        match self.regime.variant {
            RegimeVariant::ThresholdOnly => self.thresholds.w_star.map(|w| StrategySpec { eta: w, xi: w }),
            RegimeVariant::GambleBand => Some(StrategySpec {
                eta: self.thresholds.eta_star?,
                xi: self.thresholds.xi_star?,
            }),
            _ => None,
        }
    }

    pub fn value(&self, state: &State) -> Result<ValueResult> {
        state.validate()?;
        let r = self.prefs.risk_aversion();
        let (x, y) = (state.x, state.y);
        let sell = |value: f64| ValueResult {
            value: ExtendedValue::from_f64(value),
            regime: self.regime,
            region: Region::Sell,
        };
        let labelled = |value: ExtendedValue, region: Region| ValueResult {
            value,
            regime: self.regime,
            region,
        };
        use RegimeVariant::*;
        match self.regime.variant {
            StopImmediately => Ok(sell(u(r, x + y))),
            ThresholdOnly => {
                let w = self.thresholds.w_star.expect("threshold regime has w*");
                if x <= w * y {
                    return Ok(sell(u(r, x + y)));
                }
                let v = v_threshold(&self.prefs, &self.market, w, state)?;
                Ok(labelled(ExtendedValue::Finite(v), Region::Wait))
            }
            GambleBand => {
                let spec = self.strategy().expect("band regime has a band");
                if x <= spec.xi * y {
                    return Ok(sell(u(r, x + y)));
                }
                let v = v_band(&self.prefs, &self.market, &spec, state)?;
                let region = if x < spec.eta * y {
                    Region::GambleBand
                } else {
                    Region::Wait
                };
                Ok(labelled(v, region))
            }
            BoundaryGammaEqualsR => {
                if x <= 0.0 {
                    return Ok(sell(u(r, x + y)));
                }
                let v = (x.powf(1.0 - r) + y.powf(1.0 - r) - 1.0) / (1.0 - r);
                Ok(labelled(ExtendedValue::Finite(v), Region::Wait))
            }
            InfiniteValue => {
                if x + y == 0.0 {
                    // Waiting or gambling would breach the wealth floor.
                    return Ok(sell(u(r, 0.0)));
                }
                Ok(labelled(ExtendedValue::PlusInfinity, Region::NotApplicable))
            }
            HighGammaHighR => {
                let v = v_zstar(&self.prefs, &self.market, state)?;
                let z = self.thresholds.z_star.expect("high gamma regime has z*");
                let region = if x < 0.0 && y < -x * z {
                    Region::Sell
                } else {
                    Region::Wait
                };
                Ok(labelled(v, region))
            }
            Unsupported => Err(Error::Unsupported(self.regime)),
        }
    }
}

/// Optimal value when wealth must be held constant.
pub fn value_no_gamble(prefs: &Preferences, market: &MarketParams, state: &State) -> Result<ValueResult> {
    Solution::new(prefs, market, Problem::NoGamble)?.value(state)
}

/// Optimal value when fair gambles on wealth are allowed.
pub fn value_gamble(prefs: &Preferences, market: &MarketParams, state: &State) -> Result<ValueResult> {
    Solution::new(prefs, market, Problem::Gamble)?.value(state)
}

/// Discounted log-utility example `sup E[e^{-ρτ} ln X_τ]`, whose answer does
/// not depend on `ρ > 0`.
pub fn kw_discounted_log(x: f64, problem: Problem) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("wealth must be positive, got {x}")));
    }
    Ok(match problem {
        Problem::NoGamble => x.ln().max(0.0),
        Problem::Gamble => {
            let e = std::f64::consts::E;
            if x > e {
                x.ln()
            } else {
                x / e
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thresholds::{eta_star, gamma_minus, w_star, xi_star};

    fn prefs(r: f64) -> Preferences {
        Preferences::new(r).unwrap()
    }

    fn market(g: f64) -> MarketParams {
        MarketParams::new(g, 0.2).unwrap()
    }

    fn st(x: f64, y: f64) -> State {
        State::new(x, y).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn fin(v: ValueResult) -> f64 {
        v.value.finite().unwrap()
    }

    /// Expected utility from the band edge `(ηy, y)` by quadrature of the
    /// stopped-maximum law, substituting `z = y e^t`.
    fn band_edge_by_quadrature(r: f64, g: f64, eta: f64, xi: f64, y: f64) -> f64 {
        let k = eta / (eta - xi);
        let phi = 1.0 - g + k;
        let f = |t: f64| {
            let z = y * t.exp();
            (-phi * t).exp() * ((1.0 - g) * crra_log(eta * z, r) + k * crra_log((1.0 + xi) * z, r))
        };
        let decay = phi + r - 1.0;
        let t_max = 60.0 / decay.min(phi);
        let n = 400_000;
        let h = t_max / n as f64;
        let mut acc = f(0.0) + f(t_max);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn threshold_examples_and_seam() {
        let (p, m) = (prefs(0.5), market(0.2));
        assert_eq!(v_threshold(&p, &m, 0.5, &st(0.5, 2.0)).unwrap(), crra_log(2.5, 0.5));
        for (r, g, w) in [(0.5, 0.2, 0.7), (2.0, 0.6, 0.3), (1.0, 0.4, 1.1)] {
            let (p, m) = (prefs(r), market(g));
            let y = 1.3;
            let x = w * y;
            let at = v_threshold(&p, &m, w, &st(x, y)).unwrap();
            let above = v_threshold(&p, &m, w, &st(x * (1.0 + 1e-13), y)).unwrap();
            assert!(rel(above, at) < 1e-12, "R={r}");
        }
        assert!(v_threshold(&p, &m, 0.0, &st(1.0, 1.0)).is_err());
        assert!(v_threshold(&p, &market(1.2), 0.5, &st(2.0, 1.0)).is_err());
    }

    #[test]
    fn no_gamble_examples() {
        for r in [0.5, 2.0] {
            let v = value_no_gamble(&prefs(r), &market(-0.5), &st(1.0, 2.0)).unwrap();
            assert_eq!(fin(v), crra_log(3.0, r));
            assert_eq!(v.region, Region::Sell);
        }
        let v = value_no_gamble(&prefs(0.5), &market(0.5), &st(1.0, 1.0)).unwrap();
        assert!((fin(v) - 2.0).abs() < 1e-15);
        let v = value_no_gamble(&prefs(0.5), &market(0.5), &st(-0.5, 1.0)).unwrap();
        assert_eq!(fin(v), crra_log(0.5, 0.5));
        let v = value_no_gamble(&prefs(0.5), &market(0.6), &st(1.0, 1.0)).unwrap();
        assert_eq!(v.value, ExtendedValue::PlusInfinity);
        assert_eq!(v.region, Region::NotApplicable);
        let err = value_gamble(&prefs(2.0), &market(1.5), &st(1.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn zstar_examples_and_seam() {
        let (p, m) = (prefs(2.0), market(3.0));
        assert_eq!(v_zstar(&p, &m, &st(5.0, 1.0)).unwrap(), ExtendedValue::Finite(1.0));
        let v = v_zstar(&p, &m, &st(-1.0, 1.5)).unwrap().finite().unwrap();
        assert!((v + 1.0).abs() < 1e-15);
        for (r, g, x) in [(2.0, 3.0, -1.0), (1.5, 4.0, -0.7), (3.0, 3.5, -2.0)] {
            let (p, m) = (prefs(r), market(g));
            let y = -x * z_star(r, g).unwrap();
            let at = v_zstar(&p, &m, &st(x, y)).unwrap().finite().unwrap();
            let below = v_zstar(&p, &m, &st(x, y * (1.0 - 1e-14))).unwrap().finite().unwrap();
            assert!((below - at).abs() < 1e-10 * at.abs().max(1.0), "R={r}: {below} {at}");
        }
        assert_eq!(v_zstar(&p, &m, &st(-1.0, 1.0)).unwrap(), ExtendedValue::MinusInfinity);
        assert!(v_zstar(&prefs(0.5), &m, &st(1.0, 1.0)).is_err());
    }

    #[test]
    fn band_regions_and_seams() {
        for (r, g) in [(0.5, 0.45), (2.0, 0.9), (1.0, 0.6), (0.3, 0.25)] {
            let (p, m) = (prefs(r), market(g));
            let spec = StrategySpec::optimal(r, g).unwrap();
            let y = 0.8;
            let low = st(spec.xi * y, y);
            assert_eq!(
                v_band(&p, &m, &spec, &low).unwrap().finite().unwrap(),
                crra_log((1.0 + spec.xi) * y, r)
            );
            let x = spec.eta * y;
            let k = v_band(&p, &m, &spec, &st(x, y)).unwrap().finite().unwrap();
            let j = v_band(&p, &m, &spec, &st(x * (1.0 - 1e-12), y))
                .unwrap()
                .finite()
                .unwrap();
            assert!(rel(j, k) < 1e-10, "R={r}: {j} {k}");
            let just_above_low = v_band(&p, &m, &spec, &st(spec.xi * y + 1e-13, y))
                .unwrap()
                .finite()
                .unwrap();
            assert!((just_above_low - crra_log((1.0 + spec.xi) * y, r)).abs() < 1e-10);

            let sol = Solution::new(&p, &m, Problem::Gamble).unwrap();
            assert_eq!(sol.value(&st(spec.xi * y - 0.01, y)).unwrap().region, Region::Sell);
            assert_eq!(
                sol.value(&st(0.5 * (spec.xi + spec.eta) * y, y)).unwrap().region,
                Region::GambleBand
            );
            assert_eq!(sol.value(&st(spec.eta * y, y)).unwrap().region, Region::Wait);
        }
    }

    #[test]
    fn band_edge_matches_quadrature_of_stopped_maximum_law() {
        for (r, g, eta, xi) in [
            (0.5, 0.45, 0.3, -0.4),
            (2.0, 0.9, 0.2, -0.1),
            (0.7, 0.2, 0.5, 0.1),
            (1.0, 0.5, 0.4, -0.2),
        ] {
            let (p, m) = (prefs(r), market(g));
            let spec = StrategySpec::new(eta, xi).unwrap();
            let y = 1.7;
            let v = v_band(&p, &m, &spec, &st(eta * y, y)).unwrap().finite().unwrap();
            let q = band_edge_by_quadrature(r, g, eta, xi, y);
            assert!((v - q).abs() < 1e-8 * v.abs().max(1.0), "R={r}: {v} vs {q}");
        }
    }

    #[test]
    fn band_infinite_beyond_integrability() {
        let (p, m) = (prefs(0.2), market(0.9));
        let spec = StrategySpec::new(0.1, -0.5).unwrap();
        assert_eq!(
            v_band(&p, &m, &spec, &st(0.5, 1.0)).unwrap(),
            ExtendedValue::PlusInfinity
        );
        assert!(v_band(&p, &m, &spec, &st(-0.6, 1.0)).unwrap().is_finite());
    }

    #[test]
    fn explicit_display_cross_check() {
        for (r, g) in [(0.5, 0.45), (2.0, 0.9), (0.3, 0.25), (1.5, 0.8), (0.9, 0.7)] {
            let (p, m) = (prefs(r), market(g));
            let (eta, xi) = (eta_star(r, g).unwrap(), xi_star(r, g).unwrap());
            let spec = StrategySpec::new(eta, xi).unwrap();
            for q in [xi - 0.1, 0.5 * (xi + eta), eta, 2.0 * eta, 5.0] {
                let s = st(q * 1.3, 1.3);
                let a = v_band(&p, &m, &spec, &s).unwrap().finite().unwrap();
                let b = v_band_optimal_explicit(r, g, eta, xi, &s).unwrap();
                assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "R={r} q={q}: {a} {b}");
            }
        }
    }

    #[test]
    fn closed_form_examples() {
        for r in [0.5, 2.0] {
            let gm = gamma_minus(r).unwrap();
            let (p, m) = (prefs(r), market(0.5 * gm));
            for i in 0..50 {
                let s = st(-0.5 + 0.1 * i as f64, 0.5 + 0.03 * i as f64);
                assert_eq!(
                    value_gamble(&p, &m, &s).unwrap().value,
                    value_no_gamble(&p, &m, &s).unwrap().value
                );
            }
        }
        let (p, m) = (prefs(0.5), market(0.45));
        let s = st(2.0 * eta_star(0.5, 0.45).unwrap(), 1.0);
        assert!(fin(value_gamble(&p, &m, &s).unwrap()) > fin(value_no_gamble(&p, &m, &s).unwrap()) + 1e-8);
    }

    #[test]
    fn kw_examples() {
        let e = std::f64::consts::E;
        assert_eq!(kw_discounted_log(1.0, Problem::NoGamble).unwrap(), 0.0);
        assert!((kw_discounted_log(e * e, Problem::Gamble).unwrap() - 2.0).abs() < 1e-15);
        assert!((kw_discounted_log(1.0, Problem::Gamble).unwrap() - 1.0 / e).abs() < 1e-16);
        assert!(kw_discounted_log(0.0, Problem::Gamble).is_err());
    }

    fn grid_states() -> Vec<State> {
        let mut out = Vec::new();
        for i in 0..25 {
            for j in 0..8 {
                let y = 0.5 + 0.2 * j as f64;
                let q = -0.95 + 0.2 * i as f64;
                out.push(st(q * y, y));
            }
        }
        out
    }

    const MATRIX: [(f64, f64); 12] = [
        (0.5, 0.1),
        (0.5, 0.45),
        (0.3, 0.25),
        (0.9, 0.7),
        (1.0, 0.2),
        (1.0, 0.6),
        (1.5, 0.8),
        (2.0, 0.9),
        (2.0, 0.3),
        (3.0, 0.95),
        (0.5, -0.3),
        (0.5, 0.5),
    ];

    #[test]
    fn dominance() {
        for (r, g) in MATRIX {
            let (p, m) = (prefs(r), market(g));
            let sn = Solution::new(&p, &m, Problem::NoGamble).unwrap();
            let sg = Solution::new(&p, &m, Problem::Gamble).unwrap();
            for s in grid_states() {
                let (vn, vg) = (sn.value(&s).unwrap().value, sg.value(&s).unwrap().value);
                let uu = crra_log(s.total(), r);
                if let (Some(a), Some(b)) = (vn.finite(), vg.finite()) {
                    assert!(b >= a - 1e-12 && a >= uu - 1e-12, "R={r} g={g} {s:?}");
                }
            }
        }
    }

    #[test]
    fn monotone_along_grid_lines() {
        for (r, g) in MATRIX {
            let (p, m) = (prefs(r), market(g));
            for problem in [Problem::NoGamble, Problem::Gamble] {
                let sol = Solution::new(&p, &m, problem).unwrap();
                if !sol.regime.is_finite() {
                    continue;
                }
                let v = |x: f64, y: f64| sol.value(&st(x, y)).unwrap().value.to_f64();
                for j in 0..10 {
                    let y = 0.5 + 0.15 * j as f64;
                    let xs: Vec<f64> = (0..60).map(|i| -0.45 + 0.05 * i as f64).collect();
                    for w in xs.windows(2) {
                        assert!(v(w[1], y) >= v(w[0], y) - 1e-13, "x-monotone R={r} g={g}");
                    }
                }
                for i in 0..10 {
                    let x = -0.4 + 0.3 * i as f64;
                    let ys: Vec<f64> = (0..60).map(|j| 0.45 + 0.05 * j as f64).collect();
                    for w in ys.windows(2) {
                        assert!(v(x, w[1]) >= v(x, w[0]) - 1e-13, "y-monotone R={r} g={g}");
                    }
                }
            }
        }
    }

    #[test]
    fn continuity_in_gamma_across_gamma_minus() {
        for r in [0.5, 2.0] {
            let gm = gamma_minus(r).unwrap();
            let p = prefs(r);
            let s = st(1.5, 1.0);
            let gap = |h: f64| {
                let a = fin(value_gamble(&p, &market(gm - h), &s).unwrap());
                let b = fin(value_gamble(&p, &market(gm + h), &s).unwrap());
                (a - b).abs()
            };
            let (g3, g4) = (gap(1e-3), gap(1e-4));
            assert!(g4 < g3 && g4 < 1e-3, "R={r}: {g3} {g4}");
        }
    }

    #[test]
    fn sigma_invariance_is_exact() {
        for (r, g) in MATRIX {
            let p = prefs(r);
            for s in grid_states().into_iter().step_by(7) {
                let base = value_gamble(&p, &MarketParams::new(g, 0.2).unwrap(), &s).map(|v| v.value);
                for sigma in [0.1, 0.4] {
                    let other = value_gamble(&p, &MarketParams::new(g, sigma).unwrap(), &s).map(|v| v.value);
                    assert_eq!(base, other);
                }
            }
        }
    }

    #[test]
    fn log_bracketed_by_nearby_power() {
        for g in [0.2, 0.6] {
            let m = market(g);
            for s in [st(2.0, 1.0), st(0.3, 1.0), st(5.0, 0.7)] {
                let vl = fin(value_gamble(&prefs(1.0), &m, &s).unwrap());
                let lo = fin(value_gamble(&prefs(1.0 + 1e-4), &m, &s).unwrap());
                let hi = fin(value_gamble(&prefs(1.0 - 1e-4), &m, &s).unwrap());
                assert!(lo <= vl && vl <= hi, "{lo} {vl} {hi}");
                assert!((hi - lo) <= 1e-3 * vl.abs().max(1.0));
            }
        }
    }

    #[test]
    fn w_star_threshold_matches_band_threshold() {
        let (r, g) = (0.5, 0.2);
        let w = w_star(r, g).unwrap();
        let (p, m) = (prefs(r), market(g));
        let s = st(3.0, 1.0);
        let a = v_threshold(&p, &m, w, &s).unwrap();
        let b = v_band(&p, &m, &StrategySpec::threshold(w).unwrap(), &s)
            .unwrap()
            .finite()
            .unwrap();
        assert_eq!(a, b);
        let c = u(r, s.x) + s.y.powf(1.0 - g) * s.x.powf(g - r) * theta(r, g, w, w).unwrap();
        assert!(rel(a, c) < 1e-13);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn scaled(v: f64, r: f64, lambda: f64) -> f64 {
            lambda.powf(1.0 - r) * v + crra_log(lambda, r)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(256))]
            #[test]
            fn homogeneity(
                idx in 0usize..10,
                q in -0.9f64..4.0,
                y in 0.2f64..3.0,
                lambda in 0.05f64..20.0,
            ) {
                let (r, g) = MATRIX[idx];
                let (p, m) = (prefs(r), market(g));
                let s = st(q * y, y);
                let sl = st(lambda * q * y, lambda * y);
                for problem in [Problem::NoGamble, Problem::Gamble] {
                    let sol = Solution::new(&p, &m, problem).unwrap();
                    let (a, b) = (sol.value(&s).unwrap().value, sol.value(&sl).unwrap().value);
                    if let (Some(a), Some(b)) = (a.finite(), b.finite()) {
                        let want = scaled(a, r, lambda);
                        prop_assert!((b - want).abs() <= 1e-10 * want.abs().max(1.0), "{} vs {}", b, want);
                    }
                }
            }
        }
    }
}
