//! Finite-difference checks of the variational inequalities the value
//! functions must satisfy, plus brute-force oracles for the closed forms.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{precondition, Error, Result};
use crate::model::{crra_log, utility_unchecked, MarketParams, Preferences, Problem, RegimeVariant, State};
use crate::thresholds::{gamma_minus, w_star, Thresholds};
use crate::valuefn::{v_threshold, Region, Solution};

/// How the first grid coordinate is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridAxis {
    /// `x_range` holds wealth values.
    Wealth,
    /// `x_range` holds wealth-to-price ratios `x/y`.
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    /// Finite-difference step, relative to the coordinate it perturbs.
    pub h: f64,
    pub axis: GridAxis,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        if !(x0 < x1 && y0 < y1 && y0 > 0.0) {
            return Err(Error::Config("grid ranges need lo < hi and positive prices".into()));
        }
        if self.nx < 16 || self.ny < 16 {
            return Err(Error::Config("grid needs at least 16 points per axis".into()));
        }
        if !(self.h > 0.0 && self.h <= 1e-4 * (x1 - x0).min(y1 - y0)) {
            return Err(Error::Config(format!(
                "step h = {} must lie in (0, 1e-4 x range width]",
                self.h
            )));
        }
        Ok(())
    }

    /// Ratio grid over `y ∈ [0.5, 2]` covering every region of the optimal
    /// strategy with margin, 200 × 200.
    pub fn default_for(th: &Thresholds) -> Self {
        let x_range = match (th.eta_star, th.xi_star, th.w_star, th.z_star) {
            (Some(eta), Some(xi), _, _) => (-1.0 + 0.5 * (1.0 + xi), 4.0 * eta),
            (_, _, Some(w), _) => (-0.5, 4.0 * w),
            (_, _, _, Some(_)) => (-0.95, 1.0),
            _ => (-0.5, 2.0),
        };
        Self {
            x_range,
            y_range: (0.5, 2.0),
            nx: 200,
            ny: 200,
            h: 1e-4,
            axis: GridAxis::Ratio,
        }
    }

    fn row(&self, j: usize) -> Vec<State> {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        // Offset off the nodes so no point sits exactly on a seam.
        let off = self.h / 3.0;
        let y = y0 + (y1 - y0) * j as f64 / (self.ny - 1) as f64 + off;
        (0..self.nx)
            .map(|i| {
                let c = x0 + (x1 - x0) * i as f64 / (self.nx - 1) as f64 + off;
                match self.axis {
                    GridAxis::Wealth => State { x: c, y },
                    GridAxis::Ratio => State { x: c * y, y },
                }
            })
            .filter(|s| s.validate().is_ok() && s.x + s.y > 0.0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub region: String,
    pub worst_violation: f64,
    pub tolerance: f64,
    pub points: usize,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, region: &str, worst_violation: f64, tolerance: f64, points: usize) -> Self {
        Self {
            name: name.into(),
            region: region.into(),
            worst_violation,
            tolerance,
            points,
            pass: worst_violation <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn extend(&mut self, other: VerifyReport) {
        self.checks.extend(other.checks);
    }
}

/// Running worst value and point count for one check.
#[derive(Debug, Clone, Copy)]
struct Worst {
    value: f64,
    points: usize,
}

impl Worst {
    const NONE: Self = Self {
        value: f64::NEG_INFINITY,
        points: 0,
    };

    fn add(&mut self, v: f64) {
        self.value = self.value.max(v);
        self.points += 1;
    }

    fn merge(self, o: Self) -> Self {
        Self {
            value: self.value.max(o.value),
            points: self.points + o.points,
        }
    }

    fn or_zero(self) -> f64 {
        if self.points == 0 {
            0.0
        } else {
            self.value
        }
    }
}

pub const UTILITY_TOL: f64 = 1e-12;
pub const OPERATOR_TOL: f64 = 1e-6;
pub const CONCAVITY_TOL: f64 = 1e-10;

const N_VAR: usize = 6;

/// Step of the price stencils behind the operator check, relative to
/// `min(y, x+y)`. Steps near `1e-4` leave rounding noise of order
/// `eps·|V|/h²`, which the `(x+y)^{R+1}` normalisation inflates past the
/// tolerance for large `R`.
pub const OPERATOR_STEP: f64 = 1e-2;

type Eval<'a> = dyn Fn(f64, f64) -> Option<(f64, Region)> + 'a;

/// `(V_y, V_yy)` at `(x, y)` from stencils that stay inside `region`:
/// Richardson-extrapolated central differences where they fit, fourth-order
/// one-sided differences next to a seam.
fn y_derivatives(value: &Eval, x: f64, y: f64, v0: f64, region: Region) -> Option<(f64, f64)> {
    let k = OPERATOR_STEP * y.min(x + y);
    let at = |t: f64| value(x, y + t).filter(|(_, reg)| *reg == region).map(|(v, _)| v);
    let central = || -> Option<(f64, f64)> {
        let (p1, m1, p2, m2) = (at(0.5 * k)?, at(-0.5 * k)?, at(k)?, at(-k)?);
        let d1 = |p: f64, m: f64, s: f64| (p - m) / (2.0 * s);
        let d2 = |p: f64, m: f64, s: f64| (p - 2.0 * v0 + m) / (s * s);
        let vy = (4.0 * d1(p1, m1, 0.5 * k) - d1(p2, m2, k)) / 3.0;
        let vyy = (4.0 * d2(p1, m1, 0.5 * k) - d2(p2, m2, k)) / 3.0;
        Some((vy, vyy))
    };
    let one_sided = |s: f64| -> Option<(f64, f64)> {
        let k = 0.5 * s * k;
        let f: Vec<f64> = (1..=5).map(|i| at(k * i as f64)).collect::<Option<_>>()?;
        let d1 = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
        let d2 = [15.0 / 4.0, -77.0 / 6.0, 107.0 / 6.0, -13.0, 61.0 / 12.0, -5.0 / 6.0];
        let vals = std::iter::once(v0).chain(f);
        let (mut a, mut b) = (0.0, 0.0);
        for (i, v) in vals.enumerate() {
            a += d1.get(i).copied().unwrap_or(0.0) * v;
            b += d2[i] * v;
        }
        Some((a / k, b / (k * k)))
    };
    central().or_else(|| one_sided(1.0)).or_else(|| one_sided(-1.0))
}

fn finite_solution(prefs: &Preferences, market: &MarketParams, which: Problem) -> Result<Solution> {
    let sol = Solution::new(prefs, market, which)?;
    sol.regime.require_supported()?;
    if !sol.regime.is_finite() {
        return Err(Error::InfiniteValue(sol.regime));
    }
    Ok(sol)
}

/// Grid check of `V ≥ U(x+y)`, of the sign of the normalised generator
/// `γyV_y + y²V_yy` (zero where waiting is optimal) and, with gambling, of
/// concavity in `x`.
pub fn check_variational(
    prefs: &Preferences,
    market: &MarketParams,
    which: Problem,
    grid: &GridSpec,
) -> Result<VerifyReport> {
    grid.validate()?;
    let sol = finite_solution(prefs, market, which)?;
    let r = prefs.risk_aversion();
    let gamma = market.gamma();
    let h = grid.h;
    let value = |x: f64, y: f64| sol.value(&State { x, y }).ok().map(|v| (v.value.to_f64(), v.region));

    let rows: Vec<[Worst; N_VAR]> = (0..grid.ny)
        .into_par_iter()
        .map(|j| {
            let mut w = [Worst::NONE; N_VAR];
            for s in grid.row(j) {
                let (x, y) = (s.x, s.y);
                let Some((v0, region)) = value(x, y) else { continue };
                if !v0.is_finite() {
                    continue;
                }
                let u = utility_unchecked(r, x + y);
                let scale = u.abs().max(1.0);
                w[0].add((u - v0) / scale);
                if region == Region::Sell {
                    w[1].add((v0 - u).abs() / scale);
                }

                if let Some((vy, vyy)) = y_derivatives(&value, x, y, v0, region) {
                    let norm = (gamma * y * vy + y * y * vyy) * (x + y).powf(r + 1.0) / (y * y);
                    if norm.is_finite() {
                        w[2].add(norm);
                        if region == Region::Wait {
                            w[3].add(norm.abs());
                        }
                        if region == Region::Sell {
                            w[4].add((norm - (gamma * x / y - (r - gamma))).abs());
                        }
                    }
                }

                if which == Problem::Gamble {
                    let hx = h * x.abs().max(y);
                    if let (Some((vp, _)), Some((vm, _))) = (value(x + hx, y), value(x - hx, y)) {
                        let d2 = vp - 2.0 * v0 + vm;
                        if d2.is_finite() {
                            w[5].add(d2);
                        }
                    }
                }
            }
            w
        })
        .collect();
    let w = rows.into_iter().fold([Worst::NONE; N_VAR], |mut acc, row| {
        for (a, b) in acc.iter_mut().zip(row) {
            *a = a.merge(b);
        }
        acc
    });

    let mut checks = vec![
        Check::new(
            "value_dominates_utility",
            "all",
            w[0].or_zero().max(0.0),
            UTILITY_TOL,
            w[0].points,
        ),
        Check::new("value_equals_utility", "sell", w[1].or_zero(), UTILITY_TOL, w[1].points),
        Check::new(
            "operator_nonpositive",
            "all",
            w[2].or_zero().max(0.0),
            OPERATOR_TOL,
            w[2].points,
        ),
        Check::new("operator_vanishes", "wait", w[3].or_zero(), OPERATOR_TOL, w[3].points),
        Check::new(
            "operator_matches_utility_generator",
            "sell",
            w[4].or_zero(),
            OPERATOR_TOL,
            w[4].points,
        ),
    ];
    if which == Problem::Gamble {
        checks.push(Check::new(
            "concave_in_x",
            "all",
            w[5].or_zero().max(0.0),
            CONCAVITY_TOL,
            w[5].points,
        ));
    }
    Ok(VerifyReport { checks })
}

/// Seams of the optimal strategy as wealth-to-price ratios.
fn seams(sol: &Solution) -> Vec<(&'static str, f64)> {
    let th = &sol.thresholds;
    match sol.regime.variant {
        RegimeVariant::ThresholdOnly => vec![("sale_ratio", th.w_star.unwrap())],
        RegimeVariant::GambleBand => vec![
            ("band_lower", th.xi_star.unwrap()),
            ("band_upper", th.eta_star.unwrap()),
        ],
        RegimeVariant::HighGammaHighR => vec![("ruin_ratio", -1.0 / th.z_star.unwrap())],
        _ => Vec::new(),
    }
}

pub const SMOOTH_FIT_STEPS: (f64, f64) = (1e-5, 1e-6);
/// Largest acceptable ratio of derivative mismatches at the two steps;
/// first-order convergence gives 0.1.
pub const SMOOTH_FIT_RATIO_TOL: f64 = 0.2;
pub const SEAM_VALUE_TOL: f64 = 1e-10;
pub const DERIVATIVE_VALUE_TOL: f64 = 1e-6;

/// Mismatch of one-sided difference quotients of `f` at `c` with step `h`.
fn one_sided_mismatch(f: &dyn Fn(f64) -> f64, c: f64, h: f64) -> f64 {
    let f0 = f(c);
    ((f(c + h) - f0) / h - (f0 - f(c - h)) / h).abs()
}

/// One-sided derivative from below, Richardson-extrapolated.
fn left_derivative(f: &dyn Fn(f64) -> f64, c: f64, h: f64) -> f64 {
    let d = |h: f64| (f(c) - f(c - h)) / h;
    2.0 * d(0.5 * h) - d(h)
}

/// Smooth fit at every free boundary: values agree across the seam and the
/// one-sided difference quotients in `x` and `y` converge to each other at
/// first order in the step. `boundary_points` are the prices at which each
/// seam is probed.
pub fn check_smooth_fit(
    prefs: &Preferences,
    market: &MarketParams,
    which: Problem,
    boundary_points: &[f64],
) -> Result<VerifyReport> {
    let sol = finite_solution(prefs, market, which)?;
    if boundary_points.iter().any(|y| !(*y > 0.0 && y.is_finite())) {
        return precondition("boundary points are prices and must be positive");
    }
    let r = prefs.risk_aversion();
    let v = |x: f64, y: f64| sol.value(&State { x, y }).map(|v| v.value.to_f64()).unwrap_or(f64::NAN);
    let (h1, h2) = SMOOTH_FIT_STEPS;
    let mut checks = Vec::new();
    for (name, q) in seams(&sol) {
        let mut value_gap = Worst::NONE;
        let mut order = Worst::NONE;
        for &y in boundary_points {
            let x = q * y;
            let scale = x.abs().max(y);
            let eps = 1e-12 * scale;
            let v0 = v(x, y);
            value_gap.add((v(x + eps, y) - v(x - eps, y)).abs() / v0.abs().max(1.0));
            let along_x = |t: f64| v(t, y);
            let along_y = |t: f64| v(x, t);
            for (f, c) in [(&along_x as &dyn Fn(f64) -> f64, x), (&along_y, y)] {
                let m1 = one_sided_mismatch(f, c, h1 * scale);
                let m2 = one_sided_mismatch(f, c, h2 * scale);
                // Below this the mismatch is rounding noise, not a kink.
                let floor = 1e-7 * (v0.abs().max(1.0) / scale);
                order.add(if m1 <= floor { 0.0 } else { m2 / m1 });
            }
        }
        checks.push(Check::new(
            "value_continuous",
            name,
            value_gap.or_zero(),
            SEAM_VALUE_TOL,
            value_gap.points,
        ));
        checks.push(Check::new(
            "derivative_mismatch_first_order",
            name,
            order.or_zero(),
            SMOOTH_FIT_RATIO_TOL,
            order.points,
        ));
        if name == "sale_ratio" {
            let w = q;
            let mut dv = Worst::NONE;
            for &y in boundary_points {
                let x = w * y;
                let want = x.powf(-r) * (1.0 + 1.0 / w).powf(-r);
                let got = left_derivative(&|t: f64| v(x, t), y, 1e-4 * y);
                dv.add((got - want).abs());
            }
            checks.push(Check::new(
                "price_derivative_at_sale",
                name,
                dv.or_zero(),
                DERIVATIVE_VALUE_TOL,
                dv.points,
            ));
        }
    }
    Ok(VerifyReport { checks })
}

pub const IDENTITY_TOL: f64 = 1e-8;

/// The algebraic identities behind smooth fit at the optimal band, the
/// closed form of `Θ` at its maximiser and the collapse of the band onto the
/// sale ratio at `γ₋`.
pub fn check_identities(prefs: &Preferences, market: &MarketParams) -> Result<VerifyReport> {
    let r = prefs.risk_aversion();
    let gamma = market.gamma();
    let th = Thresholds::solve(prefs, market)?;
    let (Some(eta), Some(xi), Some(theta_star)) = (th.eta_star, th.xi_star, th.theta_star) else {
        return precondition(format!(
            "identities need gamma_minus(R) < gamma < min(R, 1); R = {r}, gamma = {gamma}"
        ));
    };
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    // Matching V_x across x = η*y; the exponent on η* is -R.
    let lhs1 = (1.0 - gamma) / (1.0 + r - gamma) * eta.powf(-r);
    let rhs1 = (1.0 + xi).powf(-r);
    // Second identity multiplied through by (η - ξ) and written with
    // `crra_log` so it also holds at R = 1:
    // (1+ξ)^{-R}(η-ξ) = c·L(η) - L(1+ξ) + R/((R-γ)(1+R-γ)), L = crra_log.
    let c = (2.0 * r - gamma) * (1.0 - gamma) / ((r - gamma) * (1.0 + r - gamma));
    let lhs2 = (1.0 + xi).powf(-r) * (eta - xi);
    let rhs2 = c * crra_log(eta, r) - crra_log(1.0 + xi, r) + r / ((r - gamma) * (1.0 + r - gamma));
    let closed = eta.powf(1.0 - gamma) * r / ((r - gamma) * (1.0 + r - gamma));
    let gm = gamma_minus(r)?;
    let w_at = w_star(r, gm)?;
    Ok(VerifyReport {
        checks: vec![
            Check::new("smooth_fit_identity_1", "band", rel(lhs1, rhs1), IDENTITY_TOL, 1),
            Check::new("smooth_fit_identity_2", "band", rel(lhs2, rhs2), IDENTITY_TOL, 1),
            Check::new(
                "theta_star_closed_form",
                "band",
                rel(theta_star, closed),
                IDENTITY_TOL,
                1,
            ),
            Check::new(
                "sale_ratio_at_gamma_minus",
                "threshold",
                rel(w_at, (r - gm) / r),
                IDENTITY_TOL,
                1,
            ),
        ],
    })
}

/// Expected utility `F(w)` of selling when the price first reaches `x/w`,
/// for `x > 0` and `y < x/w`.
pub fn threshold_objective(prefs: &Preferences, market: &MarketParams, state: &State, w: f64) -> Result<f64> {
    if !(state.x > 0.0 && state.y < state.x / w) {
        return precondition(format!(
            "F(w) needs x > 0 and y < x/w; x = {}, y = {}, w = {w}",
            state.x, state.y
        ));
    }
    v_threshold(prefs, market, w, state)
}

/// Grid maximiser `(ŵ, F(ŵ))` of the threshold objective over `w_grid`.
pub fn brute_force_f_max(
    prefs: &Preferences,
    market: &MarketParams,
    state: &State,
    w_grid: &[f64],
) -> Result<(f64, f64)> {
    let gamma = market.gamma();
    if !(gamma > 0.0 && gamma < 1.0) {
        return precondition(format!("threshold objective needs 0 < gamma < 1, got {gamma}"));
    }
    let mut best: Option<(f64, f64)> = None;
    for &w in w_grid {
        let f = threshold_objective(prefs, market, state, w)?;
        if best.is_none_or(|(_, b)| f > b) {
            best = Some((w, f));
        }
    }
    best.ok_or_else(|| Error::Config("empty w grid".into()))
}

pub const GAP_TOL: f64 = 1e-12;
pub const EQUALITY_TOL: f64 = 1e-10;
pub const STRICT_GAP: f64 = 1e-8;

/// Compares the optimal values with and without gambling on `grid`:
/// gambling never hurts, and it helps strictly somewhere exactly when
/// `γ > γ₋(R)`.
pub fn theorem_gap(prefs: &Preferences, market: &MarketParams, grid: &GridSpec) -> Result<VerifyReport> {
    grid.validate()?;
    let sn = finite_solution(prefs, market, Problem::NoGamble)?;
    let sg = finite_solution(prefs, market, Problem::Gamble)?;
    let rows: Vec<(Worst, Worst, usize)> = (0..grid.ny)
        .into_par_iter()
        .map(|j| {
            let (mut below, mut gap, mut n) = (Worst::NONE, Worst::NONE, 0);
            for s in grid.row(j) {
                let (Ok(a), Ok(b)) = (sn.value(&s), sg.value(&s)) else {
                    continue;
                };
                let (Some(vn), Some(vg)) = (a.value.finite(), b.value.finite()) else {
                    continue;
                };
                below.add((vn - vg) / vn.abs().max(1.0));
                gap.add((vg - vn).abs());
                n += 1;
            }
            (below, gap, n)
        })
        .collect();
    let (below, gap, n) = rows
        .into_iter()
        .fold((Worst::NONE, Worst::NONE, 0), |(a, b, n), (c, d, m)| {
            (a.merge(c), b.merge(d), n + m)
        });
    if n == 0 {
        return precondition("no grid point has finite values for both problems");
    }
    let mut checks = vec![Check::new(
        "no_gamble_below_gamble",
        "all",
        below.value.max(0.0),
        GAP_TOL,
        n,
    )];
    if sg.regime.variant == RegimeVariant::GambleBand {
        // Pass iff the largest gap exceeds STRICT_GAP.
        checks.push(Check::new("strict_gap_somewhere", "all", -gap.value, -STRICT_GAP, n));
    } else {
        checks.push(Check::new("values_coincide", "all", gap.value, EQUALITY_TOL, n));
    }
    Ok(VerifyReport { checks })
}
