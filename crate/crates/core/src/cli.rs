//! Command-line front end. Every command prints one table as CSV or as a
//! single JSON object.

use std::io::Write;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use crate::error::Error;
use crate::model::{ExtendedValue, MarketParams, Preferences, Problem, State};
use crate::simulate::{estimate_value, ExactSampler, Integrability, Monitoring, PathSampler, SimConfig, Truncation};
use crate::thresholds::{StrategySpec, Thresholds};
use crate::valuefn::{v_band, Solution};
use crate::verify::{
    check_identities, check_smooth_fit, check_variational, theorem_gap, GridAxis, GridSpec, VerifyReport,
};

pub const SCHEMA_VERSION: u64 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_UNSUPPORTED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "asset-sale", version, about = "Optimal sale of an asset with fair gambles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify the parameters for both problems.
    Regime(Common),
    /// Critical ratios and exponents.
    Thresholds(Common),
    /// Optimal values with and without gambling at one state.
    Value {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        state: StateArgs,
    },
    /// Monte Carlo estimate of the value of a band strategy.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        state: StateArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Finite-difference and identity checks of the value functions.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = ProblemArg::Gamble)]
        problem: ProblemArg,
        #[arg(long, value_enum, default_value_t = CheckArg::All)]
        check: CheckArg,
    },
    /// Critical quantities and values over a range of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        state: StateArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, allow_negative_numbers = true)]
        to: f64,
        #[arg(long, default_value_t = 11)]
        steps: usize,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long)]
    risk_aversion: f64,
    #[arg(long, allow_negative_numbers = true)]
    gamma: f64,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug, Clone, Copy)]
struct StateArgs {
    #[arg(short = 'x', long = "x", default_value_t = 1.0, allow_negative_numbers = true)]
    x: f64,
    #[arg(short = 'y', long = "y", default_value_t = 1.0)]
    y: f64,
}

#[derive(Args, Debug, Clone, Copy)]
struct SimArgs {
    #[arg(long, value_enum, default_value_t = ProblemArg::Gamble)]
    problem: ProblemArg,
    #[arg(long, value_enum, default_value_t = Method::Exact)]
    method: Method,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 50.0)]
    t_max: f64,
    #[arg(long, default_value_t = 1e-4)]
    y_floor_ratio: f64,
    #[arg(long, value_enum, default_value_t = TruncationArg::Conservative)]
    truncation: TruncationArg,
    /// Upper band edge; defaults to the optimal one.
    #[arg(long, requires = "xi")]
    eta: Option<f64>,
    /// Lower band edge; defaults to the optimal one.
    #[arg(long, requires = "eta", allow_negative_numbers = true)]
    xi: Option<f64>,
}

#[derive(Args, Debug, Clone, Copy)]
struct GridArgs {
    #[arg(long, allow_negative_numbers = true)]
    x_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    x_max: Option<f64>,
    #[arg(long)]
    y_min: Option<f64>,
    #[arg(long)]
    y_max: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, value_enum)]
    axis: Option<AxisArg>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ProblemArg {
    Gamble,
    NoGamble,
}

impl From<ProblemArg> for Problem {
    fn from(p: ProblemArg) -> Self {
        match p {
            ProblemArg::Gamble => Problem::Gamble,
            ProblemArg::NoGamble => Problem::NoGamble,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Exact,
    Path,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum TruncationArg {
    Conservative,
    ExactTail,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum AxisArg {
    Wealth,
    Ratio,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum CheckArg {
    All,
    Variational,
    SmoothFit,
    Identities,
    Gap,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SweepParam {
    RiskAversion,
    Gamma,
    Sigma,
    X,
    Y,
}

impl SweepParam {
    fn key(self) -> &'static str {
        match self {
            Self::RiskAversion => "risk_aversion",
            Self::Gamma => "gamma",
            Self::Sigma => "sigma",
            Self::X => "x",
            Self::Y => "y",
        }
    }
}

/// One output cell.
#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Real(f64),
    Ext(ExtendedValue),
    Int(u64),
    Bool(bool),
    Text(String),
    Missing,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Real)
    }
}

impl From<ExtendedValue> for Cell {
    fn from(v: ExtendedValue) -> Self {
        Cell::Ext(v)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

fn real_token(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Real(v) => real_token(*v),
            Cell::Ext(v) => real_token(v.to_f64()),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> Value {
        let real = |v: f64| {
            if v.is_finite() {
                Value::from(v)
            } else if v.is_nan() {
                Value::Null
            } else {
                Value::from(real_token(v))
            }
        };
        match self {
            Cell::Real(v) => real(*v),
            Cell::Ext(v) => real(v.to_f64()),
            Cell::Int(v) => Value::from(*v),
            Cell::Bool(v) => Value::from(*v),
            Cell::Text(s) => Value::from(s.as_str()),
            Cell::Missing => Value::Null,
        }
    }
}

type Row = Vec<(&'static str, Cell)>;

struct Table {
    command: &'static str,
    rows: Vec<Row>,
    /// Set by `verify`; `false` turns into a nonzero exit code.
    passed: Option<bool>,
}

impl Table {
    fn new(command: &'static str, rows: Vec<Row>) -> Self {
        Self {
            command,
            rows,
            passed: None,
        }
    }

    fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut w = csv::WriterBuilder::new()
                    .terminator(csv::Terminator::Any(b'\n'))
                    .from_writer(Vec::new());
                let header: Vec<&str> = self
                    .rows
                    .first()
                    .map(|r| r.iter().map(|(k, _)| *k).collect())
                    .unwrap_or_default();
                let write =
                    |w: &mut csv::Writer<Vec<u8>>, rec: Vec<String>| w.write_record(rec).expect("in-memory write");
                write(
                    &mut w,
                    std::iter::once("schema_version")
                        .chain(header)
                        .map(String::from)
                        .collect(),
                );
                for row in &self.rows {
                    let cells = row.iter().map(|(_, c)| c.csv());
                    write(
                        &mut w,
                        std::iter::once(SCHEMA_VERSION.to_string()).chain(cells).collect(),
                    );
                }
                String::from_utf8(w.into_inner().expect("in-memory flush")).expect("cells are UTF-8")
            }
            Format::Json => {
                let mut obj = Map::new();
                obj.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
                obj.insert("command".into(), Value::from(self.command));
                if let Some(p) = self.passed {
                    obj.insert("passed".into(), Value::from(p));
                }
                let rows = self
                    .rows
                    .iter()
                    .map(|r| Value::Object(r.iter().map(|(k, c)| ((*k).to_string(), c.json())).collect()))
                    .collect();
                obj.insert("rows".into(), Value::Array(rows));
                let mut s = serde_json::to_string_pretty(&Value::Object(obj)).expect("values serialise");
                s.push('\n');
                s
            }
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Unsupported(_) => EXIT_UNSUPPORTED,
        _ => EXIT_USAGE,
    }
}

fn inputs(c: &Common) -> crate::Result<(Preferences, MarketParams)> {
    Ok((Preferences::new(c.risk_aversion)?, MarketParams::new(c.gamma, c.sigma)?))
}

fn thresholds_row(th: &Thresholds) -> Row {
    vec![
        ("risk_aversion", th.risk_aversion.into()),
        ("gamma", th.gamma.into()),
        ("gamma_minus", th.gamma_minus.into()),
        ("w_star", th.w_star.into()),
        ("lambda_residual", th.lambda_residual.into()),
        ("eta_star", th.eta_star.into()),
        ("xi_star", th.xi_star.into()),
        ("theta_star", th.theta_star.into()),
        ("phi", th.phi.into()),
        ("z_star", th.z_star.into()),
    ]
}

fn regime_rows(prefs: &Preferences, market: &MarketParams) -> crate::Result<Vec<Row>> {
    [Problem::NoGamble, Problem::Gamble]
        .into_iter()
        .map(|p| {
            let sol = Solution::new(prefs, market, p)?;
            Ok(vec![
                ("problem", p.to_string().into()),
                ("regime", sol.regime.to_string().into()),
                ("variant", sol.regime.variant.to_string().into()),
                ("finite", sol.regime.is_finite().into()),
            ])
        })
        .collect()
}

fn value_rows(prefs: &Preferences, market: &MarketParams, state: &State) -> crate::Result<Vec<Row>> {
    [Problem::NoGamble, Problem::Gamble]
        .into_iter()
        .map(|p| {
            let v = Solution::new(prefs, market, p)?.value(state)?;
            Ok(vec![
                ("problem", p.to_string().into()),
                ("x", state.x.into()),
                ("y", state.y.into()),
                ("regime", v.regime.to_string().into()),
                ("value", v.value.into()),
                ("region", v.region.to_string().into()),
            ])
        })
        .collect()
}

fn simulate_table(common: &Common, state: &StateArgs, sim: &SimArgs) -> crate::Result<Table> {
    let (prefs, market) = inputs(common)?;
    let state = State::new(state.x, state.y)?;
    let problem = Problem::from(sim.problem);
    let sol = Solution::new(&prefs, &market, problem)?;
    sol.regime.require_supported()?;
    let spec = match (sim.eta, sim.xi) {
        (Some(eta), Some(xi)) => StrategySpec::new(eta, xi)?,
        _ => sol.strategy().ok_or_else(|| {
            Error::Precondition(format!(
                "regime {} has no band strategy to simulate; pass --eta and --xi",
                sol.regime
            ))
        })?,
    };
    if problem == Problem::NoGamble && !spec.is_threshold() {
        return Err(Error::Precondition(
            "without gambling the strategy must have eta = xi".into(),
        ));
    }
    let estimate = match sim.method {
        Method::Exact => estimate_value(&ExactSampler::new(&prefs, &market, &spec, &state)?, sim.paths, sim.seed)?,
        Method::Path => {
            let cfg = SimConfig {
                n_paths: sim.paths,
                seed: sim.seed,
                dt: sim.dt,
                t_max: sim.t_max,
                y_floor_ratio: sim.y_floor_ratio,
                truncation: match sim.truncation {
                    TruncationArg::Conservative => Truncation::Conservative,
                    TruncationArg::ExactTail => Truncation::ExactTail,
                },
                monitoring: Monitoring::Bridge,
            };
            estimate_value(
                &PathSampler::new(&prefs, &market, &spec, &state, &cfg)?,
                sim.paths,
                sim.seed,
            )?
        }
    };
    let target = v_band(&prefs, &market, &spec, &state)?;
    let z = match target {
        ExtendedValue::Finite(t) if estimate.stderr > 0.0 => (estimate.mean - t) / estimate.stderr,
        ExtendedValue::Finite(t) if estimate.mean == t => 0.0,
        _ => f64::NAN,
    };
    let integrability = match estimate.integrability {
        Integrability::FiniteVariance => "finite_variance",
        Integrability::InfiniteVariance => "infinite_variance",
        Integrability::InfiniteMean => "infinite_mean",
    };
    Ok(Table::new(
        "simulate",
        vec![vec![
            ("problem", problem.to_string().into()),
            (
                "method",
                if sim.method == Method::Exact { "exact" } else { "path" }.into(),
            ),
            ("eta", spec.eta.into()),
            ("xi", spec.xi.into()),
            ("x", state.x.into()),
            ("y", state.y.into()),
            ("paths", estimate.n.into()),
            ("seed", Cell::Int(sim.seed)),
            ("mean", estimate.mean.into()),
            ("stderr", estimate.stderr.into()),
            ("integrability", integrability.into()),
            ("target", target.into()),
            ("z_score", z.into()),
        ]],
    ))
}

fn grid_for(th: &Thresholds, g: &GridArgs) -> GridSpec {
    let d = GridSpec::default_for(th);
    GridSpec {
        x_range: (g.x_min.unwrap_or(d.x_range.0), g.x_max.unwrap_or(d.x_range.1)),
        y_range: (g.y_min.unwrap_or(d.y_range.0), g.y_max.unwrap_or(d.y_range.1)),
        nx: g.nx.unwrap_or(d.nx),
        ny: g.ny.unwrap_or(d.ny),
        h: g.h.unwrap_or(d.h),
        axis: match g.axis {
            Some(AxisArg::Wealth) => GridAxis::Wealth,
            Some(AxisArg::Ratio) => GridAxis::Ratio,
            None => d.axis,
        },
    }
}

/// Prices at which the smooth-fit check probes each seam.
const SEAM_PRICES: [f64; 3] = [0.5, 1.0, 2.0];

fn verify_table(common: &Common, grid: &GridArgs, problem: ProblemArg, check: CheckArg) -> crate::Result<Table> {
    let (prefs, market) = inputs(common)?;
    let th = Thresholds::solve(&prefs, &market)?;
    let grid = grid_for(&th, grid);
    let which = Problem::from(problem);
    let mut report = VerifyReport::default();
    let all = check == CheckArg::All;
    if all || check == CheckArg::Variational {
        report.extend(check_variational(&prefs, &market, which, &grid)?);
    }
    if all || check == CheckArg::SmoothFit {
        report.extend(check_smooth_fit(&prefs, &market, which, &SEAM_PRICES)?);
    }
    if (all && th.has_band()) || check == CheckArg::Identities {
        report.extend(check_identities(&prefs, &market)?);
    }
    let both_finite = [Problem::NoGamble, Problem::Gamble]
        .into_iter()
        .all(|p| Solution::new(&prefs, &market, p).is_ok_and(|s| s.regime.is_finite()));
    if (all && both_finite) || check == CheckArg::Gap {
        report.extend(theorem_gap(&prefs, &market, &grid)?);
    }
    let rows = report
        .checks
        .iter()
        .map(|c| {
            vec![
                ("name", c.name.clone().into()),
                ("region", c.region.clone().into()),
                ("worst_violation", c.worst_violation.into()),
                ("tolerance", c.tolerance.into()),
                ("points", c.points.into()),
                ("pass", c.pass.into()),
            ]
        })
        .collect();
    Ok(Table {
        command: "verify",
        rows,
        passed: Some(report.passed()),
    })
}

fn sweep_table(
    common: &Common,
    state: &StateArgs,
    param: SweepParam,
    from: f64,
    to: f64,
    steps: usize,
) -> crate::Result<Table> {
    if steps < 2 || !from.is_finite() || !to.is_finite() {
        return Err(Error::Config(
            "sweep needs finite endpoints and at least 2 steps".into(),
        ));
    }
    let mut rows = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = from + (to - from) * i as f64 / (steps - 1) as f64;
        let (mut c, mut s) = (common.clone(), *state);
        match param {
            SweepParam::RiskAversion => c.risk_aversion = t,
            SweepParam::Gamma => c.gamma = t,
            SweepParam::Sigma => c.sigma = t,
            SweepParam::X => s.x = t,
            SweepParam::Y => s.y = t,
        }
        let (prefs, market) = inputs(&c)?;
        let st = State::new(s.x, s.y)?;
        let th = Thresholds::solve(&prefs, &market)?;
        let mut row: Row = vec![
            (param.key(), t.into()),
            ("gamma_minus", th.gamma_minus.into()),
            ("w_star", th.w_star.into()),
            ("eta_star", th.eta_star.into()),
            ("xi_star", th.xi_star.into()),
            ("theta_star", th.theta_star.into()),
        ];
        for (p, key, regime_key) in [
            (Problem::NoGamble, "v_no_gamble", "regime_no_gamble"),
            (Problem::Gamble, "v_gamble", "regime_gamble"),
        ] {
            let sol = Solution::new(&prefs, &market, p)?;
            let value = match sol.value(&st) {
                Ok(v) => v.value.into(),
                Err(Error::Unsupported(_)) => Cell::Missing,
                Err(e) => return Err(e),
            };
            row.push((key, value));
            row.push((regime_key, sol.regime.variant.to_string().into()));
        }
        rows.push(row);
    }
    Ok(Table::new("sweep", rows))
}

fn dispatch(cmd: &Command) -> crate::Result<(Table, Format)> {
    Ok(match cmd {
        Command::Regime(c) => {
            let (p, m) = inputs(c)?;
            (Table::new("regime", regime_rows(&p, &m)?), c.format)
        }
        Command::Thresholds(c) => {
            let (p, m) = inputs(c)?;
            (
                Table::new("thresholds", vec![thresholds_row(&Thresholds::solve(&p, &m)?)]),
                c.format,
            )
        }
        Command::Value { common, state } => {
            let (p, m) = inputs(common)?;
            let s = State::new(state.x, state.y)?;
            (Table::new("value", value_rows(&p, &m, &s)?), common.format)
        }
        Command::Simulate { common, state, sim } => (simulate_table(common, state, sim)?, common.format),
        Command::Verify {
            common,
            grid,
            problem,
            check,
        } => (verify_table(common, grid, *problem, *check)?, common.format),
        Command::Sweep {
            common,
            state,
            param,
            from,
            to,
            steps,
        } => (sweep_table(common, state, *param, *from, *to, *steps)?, common.format),
    })
}

/// Runs the command line `args` (program name first), writing results to
/// `out` and diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok((table, format)) => {
            if out.write_all(table.render(format).as_bytes()).is_err() {
                return EXIT_USAGE;
            }
            match table.passed {
                Some(false) => EXIT_CHECK_FAILED,
                _ => EXIT_OK,
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
