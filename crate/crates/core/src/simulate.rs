//! Monte Carlo simulation of band strategies.
//!
//! Two samplers are provided. [`sample_outcome_exact`] draws from the exact
//! law of the running maximum at the sale time: the maximum is Pareto from
//! the boundary level and, independently, the strategy either sells there or
//! never does. [`simulate_path`] steps the price through time, keeps wealth on
//! the ray `x = ηY` while the price makes new highs, and sells at the first
//! point of a Poisson clock run at rate `η/(η-ξ)` per unit of `ln max Y`.
//!
//! Every path `i` draws from its own ChaCha stream `(seed, i)`, so results do
//! not depend on how paths are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{precondition, Error, Result};
use crate::model::{utility_unchecked, MarketParams, Preferences, Problem, RegimeVariant, State};
use crate::thresholds::StrategySpec;
use crate::valuefn::Solution;

pub type PathRng = ChaCha8Rng;

/// Random stream for path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// What to do with a path that is still waiting when the price has fallen
/// far below the boundary or the time horizon runs out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Declare `τ = ∞` and pay `U(X + Y)`.
    Conservative,
    /// Finish the path with the exact sampler from the current state.
    ExactTail,
}

/// How the running maximum is tracked between grid times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitoring {
    /// Sample the maximum of the Brownian bridge in `ln Y` over each step.
    Bridge,
    /// Use the grid values only.
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
    pub t_max: f64,
    pub y_floor_ratio: f64,
    pub truncation: Truncation,
    pub monitoring: Monitoring,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            seed: 0,
            dt: 1e-3,
            t_max: 50.0,
            y_floor_ratio: 1e-4,
            truncation: Truncation::Conservative,
            monitoring: Monitoring::Bridge,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::Config(format!("need at least 2 paths, got {}", self.n_paths)));
        }
        if !(self.dt > 0.0 && self.t_max.is_finite() && self.dt < self.t_max) {
            return Err(Error::Config(format!(
                "need 0 < dt < t_max, got dt = {}, t_max = {}",
                self.dt, self.t_max
            )));
        }
        if !(self.y_floor_ratio > 0.0 && self.y_floor_ratio < 1.0) {
            return Err(Error::Config(format!(
                "y_floor_ratio must lie in (0, 1), got {}",
                self.y_floor_ratio
            )));
        }
        Ok(())
    }
}

/// One realised outcome of a band strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimOutcome {
    /// The asset was sold (`τ < ∞`).
    pub stopped: bool,
    /// Running maximum of the price up to the sale (or over all time).
    pub z_max: f64,
    pub terminal_wealth: f64,
    /// Sale price, or `0` when the asset is never sold. A path cut off by
    /// [`Truncation::Conservative`] reports the price at the cut.
    pub terminal_price: f64,
    pub payoff: f64,
    /// The path was cut off by [`Truncation::Conservative`].
    pub truncated: bool,
}

/// Whether the payoff has a finite mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrability {
    FiniteVariance,
    /// The mean is finite but the standard error is not a reliable yardstick.
    InfiniteVariance,
    /// `R + φ ≤ 1`: the expected utility is `+∞`.
    InfiniteMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub integrability: Integrability,
}

/// Payoff tail classification for the band strategy `spec`. The maximum at
/// the sale has tail `z^{-φ}` and the payoff grows like `z^{1-R}`.
pub fn integrability(r: f64, gamma: f64, spec: &StrategySpec) -> Integrability {
    if spec.is_threshold() || r >= 1.0 {
        return Integrability::FiniteVariance;
    }
    let phi = (1.0 - gamma) + spec.hazard_rate();
    if phi <= 1.0 - r {
        Integrability::InfiniteMean
    } else if phi <= 2.0 * (1.0 - r) {
        Integrability::InfiniteVariance
    } else {
        Integrability::FiniteVariance
    }
}

fn check_inputs(market: &MarketParams, spec: &StrategySpec, state: &State) -> Result<()> {
    state.validate()?;
    spec.validate()?;
    if !(market.gamma() < 1.0) {
        return precondition(format!("simulation needs gamma < 1, got {}", market.gamma()));
    }
    Ok(())
}

fn uniform_open(rng: &mut PathRng) -> f64 {
    // (0, 1]; safe under ln.
    1.0 - rng.random::<f64>()
}

fn sold(r: f64, xi: f64, z: f64) -> SimOutcome {
    SimOutcome {
        stopped: true,
        z_max: z,
        terminal_wealth: xi * z,
        terminal_price: z,
        payoff: utility_unchecked(r, (1.0 + xi) * z),
        truncated: false,
    }
}

fn immediate(r: f64, x: f64, y: f64) -> SimOutcome {
    SimOutcome {
        stopped: true,
        z_max: y,
        terminal_wealth: x,
        terminal_price: y,
        payoff: utility_unchecked(r, x + y),
        truncated: false,
    }
}

/// Resolves the time-zero position: immediate sale below the band, a fair
/// gamble to one of its edges inside it. Returns the sale or the waiting
/// wealth.
fn initial_position(
    r: f64,
    spec: &StrategySpec,
    x: f64,
    y: f64,
    rng: &mut PathRng,
) -> std::result::Result<f64, SimOutcome> {
    if x <= spec.xi * y {
        return Err(immediate(r, x, y));
    }
    if x < spec.eta * y {
        let p = (x - spec.xi * y) / ((spec.eta - spec.xi) * y);
        if rng.random::<f64>() < p {
            return Ok(spec.eta * y);
        }
        return Err(sold(r, spec.xi, y));
    }
    Ok(x)
}

/// One draw from the exact law of the strategy outcome.
pub fn sample_outcome_exact(
    prefs: &Preferences,
    market: &MarketParams,
    spec: &StrategySpec,
    state: &State,
    rng: &mut PathRng,
) -> Result<SimOutcome> {
    check_inputs(market, spec, state)?;
    Ok(exact_unchecked(
        prefs.risk_aversion(),
        market.gamma(),
        spec,
        state.x,
        state.y,
        rng,
    ))
}

fn exact_unchecked(r: f64, gamma: f64, spec: &StrategySpec, x: f64, y: f64, rng: &mut PathRng) -> SimOutcome {
    let x = match initial_position(r, spec, x, y, rng) {
        Ok(x) => x,
        Err(done) => return done,
    };
    exact_from_wait(r, gamma, spec, x, y, rng)
}

/// Exact outcome from a waiting state `x ≥ ηy`.
fn exact_from_wait(r: f64, gamma: f64, spec: &StrategySpec, x: f64, y: f64, rng: &mut PathRng) -> SimOutcome {
    let level = x / spec.eta;
    // All-time maximum of the price: P(max > z) = (y/z)^{1-γ}.
    let overall_max = y * uniform_open(rng).powf(-1.0 / (1.0 - gamma));
    if overall_max < level {
        return SimOutcome {
            stopped: false,
            z_max: overall_max,
            terminal_wealth: x,
            terminal_price: 0.0,
            payoff: utility_unchecked(r, x),
            truncated: false,
        };
    }
    if spec.is_threshold() {
        return sold(r, spec.xi, level);
    }
    let k = spec.hazard_rate();
    let phi = (1.0 - gamma) + k;
    let z = level * uniform_open(rng).powf(-1.0 / phi);
    if rng.random::<f64>() * phi < k {
        sold(r, spec.xi, z)
    } else {
        SimOutcome {
            stopped: false,
            z_max: z,
            terminal_wealth: spec.eta * z,
            terminal_price: 0.0,
            payoff: utility_unchecked(r, spec.eta * z),
            truncated: false,
        }
    }
}

/// Events reported to an observer of [`simulate_path_observed`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathEvent {
    /// Time-zero fair gamble from `from` to `to` with price `y`.
    InitialGamble { from: f64, to: f64, y: f64 },
    /// State at the end of a step that did not end in a sale.
    Step { t: f64, x: f64, y: f64, running_max: f64 },
    /// Sale: wealth jumps from `from` to `to` while the price is `y`.
    Jump { t: f64, from: f64, to: f64, y: f64 },
}

enum PathEnd {
    Done(SimOutcome),
    Horizon { x: f64, y: f64 },
}

struct Stepper<'a> {
    r: f64,
    gamma: f64,
    sigma: f64,
    spec: &'a StrategySpec,
    cfg: &'a SimConfig,
}

impl Stepper<'_> {
    fn run(
        &self,
        x0: f64,
        y0: f64,
        horizon: Option<f64>,
        rng: &mut PathRng,
        obs: &mut dyn FnMut(PathEvent),
    ) -> PathEnd {
        let (r, spec, cfg) = (self.r, self.spec, self.cfg);
        let x = match initial_position(r, spec, x0, y0, rng) {
            Ok(x) => x,
            Err(done) => {
                if done.terminal_wealth != x0 {
                    obs(PathEvent::InitialGamble {
                        from: x0,
                        to: done.terminal_wealth,
                        y: y0,
                    });
                }
                return PathEnd::Done(done);
            }
        };
        if x != x0 {
            obs(PathEvent::InitialGamble { from: x0, to: x, y: y0 });
        }
        let mut x = x;
        let k = if spec.is_threshold() {
            f64::INFINITY
        } else {
            spec.hazard_rate()
        };
        let ln_floor = cfg.y_floor_ratio.ln();
        let s = self.sigma * cfg.dt.sqrt();
        let drift = -0.5 * self.sigma * self.sigma * (1.0 - self.gamma) * cfg.dt;
        // Log-level of the boundary: max(ln(X0/η), ln running max).
        let mut level = (x / spec.eta).ln();
        let mut ly = y0.ln();
        let mut lm = ly;
        let n_steps = horizon.map(|h| (h / cfg.dt).round() as u64);
        let mut step: u64 = 0;
        loop {
            if n_steps.is_some_and(|n| step >= n) {
                return PathEnd::Horizon { x, y: ly.exp() };
            }
            let normal: f64 = StandardNormal.sample(rng);
            let ly1 = ly + drift + s * normal;
            step += 1;
            let t = step as f64 * cfg.dt;
            let top = match cfg.monitoring {
                Monitoring::Discrete => ly1,
                Monitoring::Bridge => {
                    let exponent = 2.0 * (level - ly) * (level - ly1) / (s * s);
                    if ly1 < level && exponent > 100.0 {
                        ly1
                    } else {
                        let d = ly1 - ly;
                        0.5 * (ly + ly1 + (d * d - 2.0 * s * s * uniform_open(rng).ln()).sqrt())
                    }
                }
            };
            lm = lm.max(top);
            if top > level {
                let jump_level = if k.is_infinite() {
                    Some(level)
                } else {
                    let q = -(-k * (top - level)).exp_m1();
                    let v = rng.random::<f64>();
                    (v < q).then(|| level - (-v).ln_1p() / k)
                };
                if let Some(lz) = jump_level {
                    let z = lz.exp();
                    obs(PathEvent::Jump {
                        t,
                        from: spec.eta * z,
                        to: spec.xi * z,
                        y: z,
                    });
                    return PathEnd::Done(sold(r, spec.xi, z));
                }
                level = top;
                x = spec.eta * level.exp();
            }
            ly = ly1;
            obs(PathEvent::Step {
                t,
                x,
                y: ly.exp(),
                running_max: lm.exp(),
            });
            if horizon.is_none() && (ly - level < ln_floor || t >= cfg.t_max) {
                let y = ly.exp();
                return PathEnd::Done(match cfg.truncation {
                    Truncation::Conservative => SimOutcome {
                        stopped: false,
                        z_max: lm.exp(),
                        terminal_wealth: x,
                        terminal_price: y,
                        payoff: utility_unchecked(r, x + y),
                        truncated: true,
                    },
                    Truncation::ExactTail => {
                        let mut tail = exact_from_wait(r, self.gamma, spec, x, y, rng);
                        tail.z_max = tail.z_max.max(lm.exp());
                        tail
                    }
                });
            }
        }
    }
}

/// One time-stepped path of the band strategy.
pub fn simulate_path(
    prefs: &Preferences,
    market: &MarketParams,
    spec: &StrategySpec,
    state: &State,
    cfg: &SimConfig,
    rng: &mut PathRng,
) -> Result<SimOutcome> {
    simulate_path_observed(prefs, market, spec, state, cfg, rng, &mut |_| {})
}

/// [`simulate_path`] with a callback on every step, jump and initial gamble.
pub fn simulate_path_observed(
    prefs: &Preferences,
    market: &MarketParams,
    spec: &StrategySpec,
    state: &State,
    cfg: &SimConfig,
    rng: &mut PathRng,
    obs: &mut dyn FnMut(PathEvent),
) -> Result<SimOutcome> {
    check_inputs(market, spec, state)?;
    cfg.validate()?;
    let stepper = Stepper {
        r: prefs.risk_aversion(),
        gamma: market.gamma(),
        sigma: market.sigma(),
        spec,
        cfg,
    };
    match stepper.run(state.x, state.y, None, rng, obs) {
        PathEnd::Done(outcome) => Ok(outcome),
        PathEnd::Horizon { .. } => unreachable!("no horizon was set"),
    }
}

/// Wealth and price at `horizon ∧ τ`. After a sale the state is frozen at
/// the sale (wealth `ξZ`, price `Z`). `t_max` and the price floor are not
/// applied.
pub fn simulate_to_horizon(
    prefs: &Preferences,
    market: &MarketParams,
    spec: &StrategySpec,
    state: &State,
    cfg: &SimConfig,
    horizon: f64,
    rng: &mut PathRng,
) -> Result<State> {
    check_inputs(market, spec, state)?;
    cfg.validate()?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!(
            "horizon must be finite and nonnegative, got {horizon}"
        )));
    }
    let stepper = Stepper {
        r: prefs.risk_aversion(),
        gamma: market.gamma(),
        sigma: market.sigma(),
        spec,
        cfg,
    };
    Ok(match stepper.run(state.x, state.y, Some(horizon), rng, &mut |_| {}) {
        PathEnd::Done(o) => State {
            x: o.terminal_wealth,
            y: o.terminal_price,
        },
        PathEnd::Horizon { x, y } => State { x, y },
    })
}

/// Source of independent payoff draws.
pub trait Sampler: Sync {
    fn payoff(&self, rng: &mut PathRng) -> f64;

    fn integrability(&self) -> Integrability {
        Integrability::FiniteVariance
    }
}

impl<F> Sampler for F
where
    F: Fn(&mut PathRng) -> f64 + Sync,
{
    fn payoff(&self, rng: &mut PathRng) -> f64 {
        self(rng)
    }
}

/// Payoff of the exact sampler for a fixed strategy and start.
#[derive(Debug, Clone, Copy)]
pub struct ExactSampler {
    r: f64,
    gamma: f64,
    spec: StrategySpec,
    state: State,
}

impl ExactSampler {
    pub fn new(prefs: &Preferences, market: &MarketParams, spec: &StrategySpec, state: &State) -> Result<Self> {
        check_inputs(market, spec, state)?;
        Ok(Self {
            r: prefs.risk_aversion(),
            gamma: market.gamma(),
            spec: *spec,
            state: *state,
        })
    }

    pub fn outcome(&self, rng: &mut PathRng) -> SimOutcome {
        exact_unchecked(self.r, self.gamma, &self.spec, self.state.x, self.state.y, rng)
    }
}

impl Sampler for ExactSampler {
    fn payoff(&self, rng: &mut PathRng) -> f64 {
        self.outcome(rng).payoff
    }

    fn integrability(&self) -> Integrability {
        integrability(self.r, self.gamma, &self.spec)
    }
}

/// Payoff of the time-stepped path simulator.
#[derive(Debug, Clone, Copy)]
pub struct PathSampler {
    prefs: Preferences,
    market: MarketParams,
    spec: StrategySpec,
    state: State,
    cfg: SimConfig,
}

impl PathSampler {
    pub fn new(
        prefs: &Preferences,
        market: &MarketParams,
        spec: &StrategySpec,
        state: &State,
        cfg: &SimConfig,
    ) -> Result<Self> {
        check_inputs(market, spec, state)?;
        cfg.validate()?;
        Ok(Self {
            prefs: *prefs,
            market: *market,
            spec: *spec,
            state: *state,
            cfg: *cfg,
        })
    }

    pub fn outcome(&self, rng: &mut PathRng) -> SimOutcome {
        simulate_path(&self.prefs, &self.market, &self.spec, &self.state, &self.cfg, rng)
            .expect("inputs validated at construction")
    }
}

impl Sampler for PathSampler {
    fn payoff(&self, rng: &mut PathRng) -> f64 {
        self.outcome(rng).payoff
    }

    fn integrability(&self) -> Integrability {
        integrability(self.prefs.risk_aversion(), self.market.gamma(), &self.spec)
    }
}

/// Paths per work unit. Fixed so that reductions do not depend on the
/// number of worker threads.
const CHUNK: usize = 1024;

/// `f(rng_i)` for paths `i = 0..n`, in path order.
pub fn draw_many<T, F>(n: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut PathRng) -> T + Sync,
{
    (0..n)
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|i| f(&mut path_rng(seed, i as u64)))
        .collect()
}

#[derive(Clone, Copy)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    const EMPTY: Self = Self {
        n: 0,
        mean: 0.0,
        m2: 0.0,
    };

    fn push(mut self, v: f64) -> Self {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
        self
    }

    fn merge(self, o: Self) -> Self {
        if self.n == 0 {
            return o;
        }
        if o.n == 0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        let mean = self.mean + d * o.n as f64 / n as f64;
        let m2 = self.m2 + o.m2 + d * d * self.n as f64 * o.n as f64 / n as f64;
        Self { n, mean, m2 }
    }
}

/// Mean and standard error of `n_paths` payoffs drawn on streams
/// `(seed, 0..n_paths)`. Bit-identical for a given seed whatever the thread
/// count. Returns `+∞` without sampling when the mean is infinite.
pub fn estimate_value<S: Sampler + ?Sized>(sampler: &S, n_paths: usize, seed: u64) -> Result<Estimate> {
    if n_paths < 2 {
        return Err(Error::Config(format!("need at least 2 paths, got {n_paths}")));
    }
    let integrability = sampler.integrability();
    if integrability == Integrability::InfiniteMean {
        return Ok(Estimate {
            mean: f64::INFINITY,
            stderr: f64::INFINITY,
            n: n_paths,
            integrability,
        });
    }
    let n_chunks = n_paths.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_paths);
            (lo..hi).fold(Moments::EMPTY, |m, i| {
                m.push(sampler.payoff(&mut path_rng(seed, i as u64)))
            })
        })
        .collect();
    let m = parts.into_iter().fold(Moments::EMPTY, Moments::merge);
    let var = m.m2 / (m.n - 1) as f64;
    Ok(Estimate {
        mean: m.mean,
        stderr: (var / m.n as f64).sqrt(),
        n: m.n,
        integrability,
    })
}

/// Estimates `E[V*(X_{t∧τ}, Y_{t∧τ})]` at `t = horizon` for the band strategy
/// `spec`, where `V*` is the optimal value with gambling. The optimal value
/// process is a supermartingale under any admissible strategy, so the
/// estimate should not exceed `V*(x, y)` beyond Monte Carlo error.
pub fn supermartingale_probe(
    prefs: &Preferences,
    market: &MarketParams,
    spec: &StrategySpec,
    state: &State,
    horizon: f64,
    cfg: &SimConfig,
) -> Result<Estimate> {
    check_inputs(market, spec, state)?;
    cfg.validate()?;
    let sol = Solution::new(prefs, market, Problem::Gamble)?;
    if sol.regime.variant != RegimeVariant::GambleBand {
        return precondition(format!(
            "supermartingale probe needs the gambling-band regime, got {}",
            sol.regime
        ));
    }
    let value = |s: &State| sol.value(s).map(|v| v.value.to_f64()).unwrap_or(f64::NAN);
    if horizon == 0.0 {
        return Ok(Estimate {
            mean: value(state),
            stderr: 0.0,
            n: cfg.n_paths,
            integrability: Integrability::FiniteVariance,
        });
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!(
            "horizon must be finite and nonnegative, got {horizon}"
        )));
    }
    let sampler = |rng: &mut PathRng| {
        let end = simulate_to_horizon(prefs, market, spec, state, cfg, horizon, rng).expect("inputs validated");
        value(&end)
    };
    estimate_value(&sampler, cfg.n_paths, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuefn::v_band;

    fn prefs(r: f64) -> Preferences {
        Preferences::new(r).unwrap()
    }

    fn market(g: f64, sigma: f64) -> MarketParams {
        MarketParams::new(g, sigma).unwrap()
    }

    fn st(x: f64, y: f64) -> State {
        State::new(x, y).unwrap()
    }

    fn cfg(dt: f64) -> SimConfig {
        SimConfig {
            dt,
            truncation: Truncation::ExactTail,
            ..SimConfig::default()
        }
    }

    #[test]
    fn immediate_stop_below_band() {
        let spec = StrategySpec::new(0.3, -0.2).unwrap();
        let mut rng = path_rng(1, 0);
        let o = sample_outcome_exact(&prefs(0.5), &market(0.45, 0.2), &spec, &st(-0.5, 1.0), &mut rng).unwrap();
        assert!(o.stopped);
        assert_eq!(o.z_max, 1.0);
        assert_eq!(o.payoff, utility_unchecked(0.5, 0.5));
        let o = simulate_path(
            &prefs(0.5),
            &market(0.45, 0.2),
            &spec,
            &st(-0.5, 1.0),
            &cfg(1e-3),
            &mut rng,
        )
        .unwrap();
        assert_eq!(o.payoff, utility_unchecked(0.5, 0.5));
    }

    #[test]
    fn branch_probabilities_sum_to_one() {
        let (g, eta, xi): (f64, f64, f64) = (0.45, 0.3, -0.4);
        let k = eta / (eta - xi);
        let phi = 1.0 - g + k;
        assert!(((1.0 - g) / phi + k / phi - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_outcome_invariants() {
        let (p, m) = (prefs(2.0), market(0.9, 0.2));
        let spec = StrategySpec::optimal(2.0, 0.9).unwrap();
        let sampler = ExactSampler::new(&p, &m, &spec, &st(spec.eta * 1.5, 1.0)).unwrap();
        for i in 0..2000 {
            let o = sampler.outcome(&mut path_rng(3, i));
            if o.stopped {
                assert_eq!(o.terminal_wealth, spec.xi * o.z_max);
                assert_eq!(o.terminal_price, o.z_max);
            } else {
                assert_eq!(o.terminal_price, 0.0);
                assert!(o.terminal_wealth == spec.eta * o.z_max || o.terminal_wealth == spec.eta * 1.5);
            }
        }
    }

    #[test]
    fn exact_mean_matches_closed_form() {
        for (r, g, x) in [(2.0, 0.9, 0.05), (2.0, 0.9, 0.5), (1.0, 0.6, 0.3)] {
            let (p, m) = (prefs(r), market(g, 0.2));
            let spec = StrategySpec::optimal(r, g).unwrap();
            let s = st(x, 1.0);
            let e = estimate_value(&ExactSampler::new(&p, &m, &spec, &s).unwrap(), 200_000, 11).unwrap();
            let v = v_band(&p, &m, &spec, &s).unwrap().finite().unwrap();
            assert_eq!(e.integrability, Integrability::FiniteVariance);
            assert!(
                (e.mean - v).abs() <= 3.0 * e.stderr,
                "R={r} x={x}: {} ± {} vs {v}",
                e.mean,
                e.stderr
            );
        }
    }

    #[test]
    fn integrability_flags() {
        let spec = StrategySpec::new(0.1, -0.5).unwrap();
        assert_eq!(integrability(0.2, 0.9, &spec), Integrability::InfiniteMean);
        let sampler = ExactSampler::new(&prefs(0.2), &market(0.9, 0.2), &spec, &st(1.0, 1.0)).unwrap();
        let e = estimate_value(&sampler, 100, 0).unwrap();
        assert_eq!(e.mean, f64::INFINITY);
        let opt = StrategySpec::optimal(0.5, 0.45).unwrap();
        assert_eq!(integrability(0.5, 0.45, &opt), Integrability::InfiniteVariance);
        assert_eq!(
            integrability(2.0, 0.9, &StrategySpec::optimal(2.0, 0.9).unwrap()),
            Integrability::FiniteVariance
        );
    }

    #[test]
    fn estimate_basics() {
        let e = estimate_value(&|_: &mut PathRng| 2.5, 1000, 0).unwrap();
        assert_eq!((e.mean, e.stderr, e.n), (2.5, 0.0, 1000));
        assert!(estimate_value(&|_: &mut PathRng| 1.0, 1, 0).is_err());

        let normal = |rng: &mut PathRng| -> f64 { StandardNormal.sample(rng) };
        let a = estimate_value(&normal, 50_000, 9).unwrap();
        let b = estimate_value(&normal, 50_000, 9).unwrap();
        assert_eq!(a, b);
        let mut ratios = Vec::new();
        for seed in 0..5 {
            let s1 = estimate_value(&normal, 20_000, seed).unwrap().stderr;
            let s2 = estimate_value(&normal, 40_000, seed + 100).unwrap().stderr;
            ratios.push(s2 / s1);
        }
        for ratio in ratios {
            assert!((ratio * 2f64.sqrt() - 1.0).abs() < 0.2, "{ratio}");
        }
    }

    #[test]
    fn estimate_independent_of_thread_count() {
        let (p, m) = (prefs(2.0), market(0.9, 0.2));
        let spec = StrategySpec::optimal(2.0, 0.9).unwrap();
        let sampler = ExactSampler::new(&p, &m, &spec, &st(0.5, 1.0)).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| estimate_value(&sampler, 10_000, 5).unwrap());
        let b = three.install(|| estimate_value(&sampler, 10_000, 5).unwrap());
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn exact_law_is_sigma_free() {
        let spec = StrategySpec::optimal(2.0, 0.9).unwrap();
        let s = st(0.4, 1.0);
        let a = ExactSampler::new(&prefs(2.0), &market(0.9, 0.2), &spec, &s).unwrap();
        let b = ExactSampler::new(&prefs(2.0), &market(0.9, 0.7), &spec, &s).unwrap();
        for i in 0..100 {
            assert_eq!(a.outcome(&mut path_rng(4, i)), b.outcome(&mut path_rng(4, i)));
        }
    }

    #[test]
    fn threshold_spec_hits_with_scale_function_probability() {
        let (r, g) = (0.5, 0.3);
        let w = 0.5;
        let spec = StrategySpec::threshold(w).unwrap();
        let (x, y) = (2.0, 1.0);
        let (p, m) = (prefs(r), market(g, 2.0));
        let c = SimConfig { dt: 1e-3, ..cfg(1e-3) };
        let hits: Vec<f64> = draw_many(4000, 21, |rng| {
            let o = simulate_path(&p, &m, &spec, &st(x, y), &c, rng).unwrap();
            if o.stopped {
                1.0
            } else {
                0.0
            }
        });
        let n = hits.len() as f64;
        let mean = hits.iter().sum::<f64>() / n;
        let want = (w * y / x).powf(1.0 - g);
        let se = (want * (1.0 - want) / n).sqrt();
        assert!((mean - want).abs() <= 3.0 * se, "{mean} vs {want}");
    }

    #[test]
    fn path_invariants_hold_along_paths() {
        let (r, g) = (0.5, 0.45);
        let (p, m) = (prefs(r), market(g, 1.0));
        let spec = StrategySpec::optimal(r, g).unwrap();
        let c = cfg(1e-3);
        let mut jumps = 0;
        for i in 0..300 {
            let start = st(
                if i % 2 == 0 {
                    0.5 * (spec.xi + spec.eta)
                } else {
                    2.0 * spec.eta
                },
                1.0,
            );
            let mut rng = path_rng(8, i);
            let mut ok = true;
            let out = simulate_path_observed(&p, &m, &spec, &start, &c, &mut rng, &mut |e| match e {
                PathEvent::Step { x, y, .. } => {
                    ok &= x + y >= (1.0 + spec.xi) * y * (1.0 - 1e-12) && x >= spec.eta * y * (1.0 - 1e-12);
                }
                PathEvent::Jump { from, to, y, .. } => {
                    jumps += 1;
                    ok &= (from - spec.eta * y).abs() <= 1e-12 * from.abs() && (to - spec.xi * y).abs() <= 1e-12 * y;
                }
                PathEvent::InitialGamble { to, y, .. } => {
                    ok &= to == spec.eta * y || to == spec.xi * y;
                }
            })
            .unwrap();
            assert!(ok, "path {i}");
            assert!(out.payoff.is_finite());
        }
        assert!(jumps > 0);
    }

    #[test]
    fn wealth_is_a_martingale() {
        let (r, g) = (2.0, 0.9);
        let (p, m) = (prefs(r), market(g, 1.0));
        let spec = StrategySpec::optimal(r, g).unwrap();
        let s = st(0.5 * (spec.xi + spec.eta), 1.0);
        let c = SimConfig {
            n_paths: 4000,
            ..cfg(1e-2)
        };
        for t in [0.5, 1.0, 2.0] {
            let e = estimate_value(
                &|rng: &mut PathRng| simulate_to_horizon(&p, &m, &spec, &s, &c, t, rng).unwrap().x,
                c.n_paths,
                13,
            )
            .unwrap();
            assert!(
                (e.mean - s.x).abs() <= 3.0 * e.stderr,
                "t={t}: {} ± {} vs {}",
                e.mean,
                e.stderr,
                s.x
            );
        }
    }

    #[test]
    fn path_means_are_sigma_invariant() {
        let (r, g) = (2.0, 0.9);
        let spec = StrategySpec::optimal(r, g).unwrap();
        let s = st(spec.eta, 1.0);
        let est = |sigma: f64| {
            let c = SimConfig {
                dt: 4e-4 / (sigma * sigma),
                ..cfg(1e-2)
            };
            let sampler = PathSampler::new(&prefs(r), &market(g, sigma), &spec, &s, &c).unwrap();
            estimate_value(&sampler, 3000, 17).unwrap()
        };
        let (a, b) = (est(0.2), est(0.4));
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() <= 3.0 * se, "{} {} {se}", a.mean, b.mean);
    }

    #[test]
    fn conservative_truncation_bias_shrinks_with_floor() {
        let (r, g) = (2.0, 0.9);
        let (p, m) = (prefs(r), market(g, 3.0));
        let spec = StrategySpec::optimal(r, g).unwrap();
        let s = st(spec.eta, 1.0);
        let v = v_band(&p, &m, &spec, &s).unwrap().finite().unwrap();
        let bias = |floor: f64| {
            let c = SimConfig {
                y_floor_ratio: floor,
                truncation: Truncation::Conservative,
                ..cfg(1e-3)
            };
            let e = estimate_value(&PathSampler::new(&p, &m, &spec, &s, &c).unwrap(), 4000, 2).unwrap();
            e.mean - v
        };
        // Cutting paths off forfeits the chance of a later return to the
        // boundary, which is worth a lot when γ is close to one.
        let (b1, b2) = (bias(1e-1), bias(1e-3));
        assert!(b1 < b2 && b2 < 0.0, "{b1} {b2}");
    }

    #[test]
    fn probe_at_time_zero_is_the_value() {
        let (p, m) = (prefs(0.5), market(0.45, 1.0));
        let spec = StrategySpec::optimal(0.5, 0.45).unwrap();
        let s = st(0.1, 1.0);
        let e = supermartingale_probe(&p, &m, &spec, &s, 0.0, &cfg(1e-3)).unwrap();
        let v = Solution::new(&p, &m, Problem::Gamble)
            .unwrap()
            .value(&s)
            .unwrap()
            .value
            .to_f64();
        assert_eq!(e.mean, v);
        assert_eq!(e.stderr, 0.0);
        assert!(supermartingale_probe(&p, &market(0.1, 1.0), &spec, &s, 1.0, &cfg(1e-3)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig {
            dt: 0.0,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            dt: 100.0,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            y_floor_ratio: 1.0,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            n_paths: 1,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        let spec = StrategySpec::new(0.3, -0.2).unwrap();
        let mut rng = path_rng(0, 0);
        assert!(sample_outcome_exact(&prefs(0.5), &market(1.0, 0.2), &spec, &st(1.0, 1.0), &mut rng).is_err());
    }
}
