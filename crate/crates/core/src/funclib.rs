//! Comparison-function algebra: scalar gains of class K / K∞ / L /
//! positive-definite, KL functions, numerical inversion, positive-definite
//! factorization, and settling-time maps.
//!
//! Membership in a comparison class is undecidable from a black-box
//! function, so every check here certifies behaviour on a declared range
//! `[0, domain_cap]` sampled on a dense grid (log-spaced with a linear
//! refinement near zero). The grid defaults to 10^4 points.

use crate::dsl::{EvalContext, Expression, Scope};
use crate::error::{Error, Result};
use std::fmt;
use std::sync::Arc;

/// Default number of grid points for kind verification.
pub const DEFAULT_GRID_POINTS: usize = 10_000;
/// Default declared range for scalar gains.
pub const DEFAULT_DOMAIN_CAP: f64 = 1e6;
/// Default declared range for KL functions (a time horizon this long is
/// enough for every decay test shipped here; `exp(-cap)` must not underflow
/// the increasing-in-s checks).
pub const DEFAULT_KL_CAP: f64 = 20.0;
/// Absolute tolerance for `g(0) = 0` style checks.
pub const ZERO_TOL: f64 = 1e-9;
/// An L gain must drop below this fraction of its initial value at the cap.
pub const DECAY_FRACTION: f64 = 1e-2;
/// A K∞ gain must still be growing by this relative amount over the last
/// decade of the grid; bounded gains flatten out and fail this clause.
pub const KINF_TAIL_FRACTION: f64 = 1e-3;
/// Default relative tolerance for [`ScalarGain::invert`].
pub const DEFAULT_INVERT_TOL: f64 = 1e-10;
/// Bisection iteration cap for inversion and settling-time queries.
pub const MAX_BISECT_ITER: usize = 200;

/// Declared comparison class of a scalar gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainKind {
    /// Continuous, zero at zero, strictly increasing.
    K,
    /// Class K and unbounded.
    Kinf,
    /// Continuous, nonincreasing, decaying to zero.
    L,
    /// Continuous, zero at zero, strictly positive away from zero.
    PositiveDefinite,
}

impl fmt::Display for GainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            GainKind::K => "K",
            GainKind::Kinf => "Kinf",
            GainKind::L => "L",
            GainKind::PositiveDefinite => "PositiveDefinite",
        };
        f.write_str(name)
    }
}

/// Outcome of one membership clause.
#[derive(Debug, Clone, PartialEq)]
pub struct ClauseResult {
    pub clause: &'static str,
    pub passed: bool,
    /// First violating grid point, when the clause failed.
    pub violation_at: Option<f64>,
    pub detail: Option<String>,
}

impl ClauseResult {
    fn pass(clause: &'static str) -> Self {
        ClauseResult {
            clause,
            passed: true,
            violation_at: None,
            detail: None,
        }
    }

    fn fail(clause: &'static str, at: Option<f64>, detail: String) -> Self {
        ClauseResult {
            clause,
            passed: false,
            violation_at: at,
            detail: Some(detail),
        }
    }
}

/// Per-clause verdicts of a kind verification.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipReport {
    pub kind: GainKind,
    pub passed: bool,
    pub clauses: Vec<ClauseResult>,
}

impl MembershipReport {
    fn from_clauses(kind: GainKind, clauses: Vec<ClauseResult>) -> Self {
        let passed = clauses.iter().all(|c| c.passed);
        MembershipReport {
            kind,
            passed,
            clauses,
        }
    }

    pub fn first_violation(&self) -> Option<&ClauseResult> {
        self.clauses.iter().find(|c| !c.passed)
    }

    pub fn summary(&self) -> String {
        match self.first_violation() {
            None => format!("{}: pass", self.kind),
            Some(c) => format!(
                "{}: fail [{}]{}{}",
                self.kind,
                c.clause,
                c.violation_at
                    .map(|s| format!(" at s={s}"))
                    .unwrap_or_default(),
                c.detail
                    .as_ref()
                    .map(|d| format!(" ({d})"))
                    .unwrap_or_default()
            ),
        }
    }
}

/// Monotone piecewise-linear interpolation table.
#[derive(Debug, Clone)]
pub struct InterpTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl InterpTable {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::argument(
                "interpolation table needs >= 2 matching points",
            ));
        }
        if !xs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::argument(
                "interpolation abscissae must be strictly increasing",
            ));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::argument(
                "interpolation table contains non-finite values",
            ));
        }
        Ok(InterpTable { xs, ys })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let lo = self.xs[0];
        let hi = *self.xs.last().unwrap();
        if x < lo - 1e-12 || x > hi * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::argument(format!(
                "table query {x} outside [{lo}, {hi}]"
            )));
        }
        let x = x.clamp(lo, hi);
        let idx = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return Ok(self.ys[i]),
            Err(i) => i.clamp(1, self.xs.len() - 1),
        };
        let (x0, x1) = (self.xs[idx - 1], self.xs[idx]);
        let (y0, y1) = (self.ys[idx - 1], self.ys[idx]);
        Ok(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
    }
}

#[derive(Clone)]
enum GainForm {
    Expr(Expression),
    Table(Arc<InterpTable>),
    Func(Arc<dyn Fn(f64) -> Result<f64> + Send + Sync>),
}

/// A scalar gain: one nonnegative real argument, declared kind, declared
/// verification range.
#[derive(Clone)]
pub struct ScalarGain {
    form: GainForm,
    kind: GainKind,
    domain_cap: f64,
    label: String,
}

impl fmt::Debug for ScalarGain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarGain")
            .field("label", &self.label)
            .field("kind", &self.kind)
            .field("domain_cap", &self.domain_cap)
            .finish()
    }
}

impl ScalarGain {
    pub fn from_expr(expr: Expression, kind: GainKind, domain_cap: f64) -> Result<Self> {
        let use_ = expr.var_use();
        if use_.states || use_.inputs || use_.t {
            return Err(Error::argument(format!(
                "gain `{}` may only reference the scalar s",
                expr.unparse()
            )));
        }
        if !(domain_cap > 0.0) {
            return Err(Error::argument("domain_cap must be positive"));
        }
        let label = expr.unparse();
        Ok(ScalarGain {
            form: GainForm::Expr(expr),
            kind,
            domain_cap,
            label,
        })
    }

    /// Parse a DSL expression in `s`.
    pub fn parse(src: &str, kind: GainKind, domain_cap: f64) -> Result<Self> {
        Self::from_expr(crate::dsl::parse(src, Scope::scalar())?, kind, domain_cap)
    }

    pub fn from_fn<F>(label: &str, f: F, kind: GainKind, domain_cap: f64) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let owned = label.to_string();
        let l2 = owned.clone();
        ScalarGain {
            form: GainForm::Func(Arc::new(move |s| {
                let v = f(s);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Evaluation {
                        location: s,
                        fault: crate::error::DomainFault {
                            op: "gain",
                            operand: s,
                        },
                    })
                }
            })),
            kind,
            domain_cap,
            label: l2,
        }
    }

    /// Wrap a fallible closure (used for compositions that invert other gains).
    pub fn from_fn_result<F>(label: &str, f: F, kind: GainKind, domain_cap: f64) -> Self
    where
        F: Fn(f64) -> Result<f64> + Send + Sync + 'static,
    {
        ScalarGain {
            form: GainForm::Func(Arc::new(f)),
            kind,
            domain_cap,
            label: label.to_string(),
        }
    }

    pub fn from_table(label: &str, table: InterpTable, kind: GainKind, domain_cap: f64) -> Self {
        ScalarGain {
            form: GainForm::Table(Arc::new(table)),
            kind,
            domain_cap,
            label: label.to_string(),
        }
    }

    /// The identically-zero gain. Not a class-K function; admitted by checks
    /// that explicitly tolerate an absent gain channel.
    pub fn zero(domain_cap: f64) -> Self {
        ScalarGain::from_fn("0", |_| 0.0, GainKind::K, domain_cap)
    }

    /// The identity gain `s`, class K∞.
    pub fn identity(domain_cap: f64) -> Self {
        ScalarGain::from_fn("s", |s| s, GainKind::Kinf, domain_cap)
    }

    pub fn kind(&self) -> GainKind {
        self.kind
    }

    /// The same gain under a different declared kind (for probing, e.g.
    /// whether a positive-definite decrease rate also verifies as K∞).
    pub fn reinterpret(&self, kind: GainKind) -> ScalarGain {
        ScalarGain {
            form: self.form.clone(),
            kind,
            domain_cap: self.domain_cap,
            label: self.label.clone(),
        }
    }

    /// Sample onto a dense linear grid over `[0, cap]` and interpolate.
    /// Trades exactness for cheap evaluation in inner solver loops; any
    /// construction that relies on it is still gated by an independent
    /// verification pass downstream.
    pub fn tabulated(&self, points: usize, cap: f64) -> Result<ScalarGain> {
        let n = points.max(2);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let s = cap * i as f64 / (n - 1) as f64;
            xs.push(s);
            ys.push(self.eval(s)?);
        }
        Ok(ScalarGain::from_table(
            &format!("table({})", self.label),
            InterpTable::new(xs, ys)?,
            self.kind,
            cap,
        ))
    }

    pub fn domain_cap(&self) -> f64 {
        self.domain_cap
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        if s < 0.0 {
            return Err(Error::argument(format!(
                "gain `{}` evaluated at negative argument {s}",
                self.label
            )));
        }
        match &self.form {
            GainForm::Expr(e) => e
                .eval(&EvalContext::scalar_s(s))
                .map_err(|fault| Error::Evaluation { location: s, fault }),
            GainForm::Table(t) => t.eval(s),
            GainForm::Func(f) => f(s),
        }
    }

    /// True when the gain vanishes identically on a coarse grid. Zero gains
    /// are admitted in places where a bound simply does not use a channel.
    pub fn is_zero_gain(&self) -> bool {
        verification_grid(self.domain_cap, 64)
            .into_iter()
            .all(|s| matches!(self.eval(s), Ok(v) if v.abs() <= 1e-15))
    }

    /// Grid-certify the declared kind. Each clause is reported separately
    /// with the first violating grid point.
    pub fn verify_kind(&self, grid_points: usize) -> Result<MembershipReport> {
        if grid_points < 2 {
            return Err(Error::argument("grid_points must be >= 2"));
        }
        let grid = verification_grid(self.domain_cap, grid_points);
        let mut values = Vec::with_capacity(grid.len());
        for &s in &grid {
            values.push(self.eval(s)?);
        }
        let mut clauses = Vec::new();
        match self.kind {
            GainKind::K => {
                clauses.push(zero_at_zero(&grid, &values));
                clauses.push(strictly_increasing(&grid, &values));
            }
            GainKind::Kinf => {
                clauses.push(zero_at_zero(&grid, &values));
                clauses.push(strictly_increasing(&grid, &values));
                clauses.push(unbounded_growth(&grid, &values));
            }
            GainKind::L => {
                clauses.push(nonnegative(&grid, &values));
                clauses.push(nonincreasing(&grid, &values));
                clauses.push(decays(&grid, &values));
            }
            GainKind::PositiveDefinite => {
                clauses.push(zero_at_zero(&grid, &values));
                clauses.push(positive_away_from_zero(&grid, &values));
            }
        }
        Ok(MembershipReport::from_clauses(self.kind, clauses))
    }

    /// Shorthand: verify on the default grid and fail with a kind error.
    pub fn require_kind(&self, grid_points: usize) -> Result<()> {
        let report = self.verify_kind(grid_points)?;
        if report.passed {
            Ok(())
        } else {
            Err(Error::Kind {
                gain: self.label.clone(),
                detail: report.summary(),
            })
        }
    }

    /// Numerically invert a (verifiedK) gain by bracketed bisection.
    ///
    /// `tol` is relative with an absolute floor of itself; the result `s`
    /// satisfies `|g(s) - y| <= tol * max(1, |y|)`.
    pub fn invert(&self, y: f64, tol: f64) -> Result<f64> {
        if y < 0.0 {
            return Err(Error::argument(format!(
                "cannot invert `{}` at negative {y}",
                self.label
            )));
        }
        let reachable = self.eval(self.domain_cap)?;
        let eff_tol = tol * y.abs().max(1.0);
        if y > reachable + eff_tol {
            return Err(Error::Saturation {
                gain: self.label.clone(),
                target: y,
                reachable,
            });
        }
        let mut lo = 0.0_f64;
        let mut hi = self.domain_cap;
        if (self.eval(lo)? - y).abs() <= eff_tol {
            return Ok(lo);
        }
        if (reachable - y).abs() <= eff_tol {
            return Ok(hi);
        }
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..MAX_BISECT_ITER {
            mid = 0.5 * (lo + hi);
            let v = self.eval(mid)?;
            if (v - y).abs() <= eff_tol {
                return Ok(mid);
            }
            if v < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
                break;
            }
        }
        Ok(mid)
    }
}

/// Verification grid on `[0, cap]`: half the points linear on the first
/// thousandth of the range (resolves behaviour near zero), half log-spaced
/// up to the cap. Always contains 0 and `cap`.
pub fn verification_grid(cap: f64, n: usize) -> Vec<f64> {
    let n = n.max(4);
    let split = cap * 1e-3;
    let half = n / 2;
    let mut grid = Vec::with_capacity(n + 1);
    for i in 0..half {
        grid.push(split * i as f64 / half as f64);
    }
    let log_lo = split.ln();
    let log_hi = cap.ln();
    let m = n - half;
    for i in 0..m {
        grid.push((log_lo + (log_hi - log_lo) * i as f64 / (m - 1) as f64).exp());
    }
    grid.push(cap);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // drop near-duplicates: strict-monotonicity clauses need spacings that
    // survive rounding of the evaluated values
    grid.dedup_by(|a, b| *a - *b <= 1e-9 * b.abs().max(1e-300));
    *grid.last_mut().unwrap() = cap;
    grid
}

fn zero_at_zero(grid: &[f64], values: &[f64]) -> ClauseResult {
    debug_assert_eq!(grid[0], 0.0);
    if values[0].abs() <= ZERO_TOL {
        ClauseResult::pass("zero_at_zero")
    } else {
        ClauseResult::fail(
            "zero_at_zero",
            Some(0.0),
            format!("g(0) = {} exceeds {ZERO_TOL}", values[0]),
        )
    }
}

fn strictly_increasing(grid: &[f64], values: &[f64]) -> ClauseResult {
    for i in 0..values.len() - 1 {
        if values[i + 1] <= values[i] {
            return ClauseResult::fail(
                "strictly_increasing",
                Some(grid[i + 1]),
                format!(
                    "g({}) = {} <= g({}) = {}",
                    grid[i + 1],
                    values[i + 1],
                    grid[i],
                    values[i]
                ),
            );
        }
    }
    ClauseResult::pass("strictly_increasing")
}

fn unbounded_growth(grid: &[f64], values: &[f64]) -> ClauseResult {
    let cap = *grid.last().unwrap();
    let decade = cap / 10.0;
    let idx = grid.partition_point(|&s| s <= decade).saturating_sub(1);
    let g_cap = *values.last().unwrap();
    let g_dec = values[idx];
    let growth = (g_cap - g_dec) / g_cap.abs().max(f64::MIN_POSITIVE);
    if growth >= KINF_TAIL_FRACTION {
        ClauseResult::pass("unbounded_growth")
    } else {
        ClauseResult::fail(
            "unbounded_growth",
            Some(cap),
            format!(
                "relative growth {growth:.3e} over the last decade is below {KINF_TAIL_FRACTION:.0e}; saturation detected"
            ),
        )
    }
}

fn nonnegative(grid: &[f64], values: &[f64]) -> ClauseResult {
    for (s, v) in grid.iter().zip(values) {
        if *v < -ZERO_TOL {
            return ClauseResult::fail("nonnegative", Some(*s), format!("g({s}) = {v}"));
        }
    }
    ClauseResult::pass("nonnegative")
}

fn nonincreasing(grid: &[f64], values: &[f64]) -> ClauseResult {
    for i in 0..values.len() - 1 {
        let slack = 1e-12 * values[i].abs().max(1e-300);
        if values[i + 1] > values[i] + slack {
            return ClauseResult::fail(
                "nonincreasing",
                Some(grid[i + 1]),
                format!(
                    "g({}) = {} > g({}) = {}",
                    grid[i + 1],
                    values[i + 1],
                    grid[i],
                    values[i]
                ),
            );
        }
    }
    ClauseResult::pass("nonincreasing")
}

fn decays(grid: &[f64], values: &[f64]) -> ClauseResult {
    let g0 = values[0];
    let g_cap = *values.last().unwrap();
    if g_cap <= DECAY_FRACTION * g0 + ZERO_TOL {
        ClauseResult::pass("decays_to_zero")
    } else {
        ClauseResult::fail(
            "decays_to_zero",
            Some(*grid.last().unwrap()),
            format!(
                "g(cap) = {g_cap} above {DECAY_FRACTION} * g(0) = {}",
                DECAY_FRACTION * g0
            ),
        )
    }
}

fn positive_away_from_zero(grid: &[f64], values: &[f64]) -> ClauseResult {
    for (s, v) in grid.iter().zip(values) {
        if *s > 0.0 && *v <= 0.0 {
            return ClauseResult::fail(
                "positive_on_positive",
                Some(*s),
                format!("g({s}) = {v} is not strictly positive"),
            );
        }
    }
    ClauseResult::pass("positive_on_positive")
}

/// Factorization of a continuous positive-definite function into a K∞ and an
/// L part whose product it dominates on the verification grid.
#[derive(Debug, Clone)]
pub struct FactorizationResult {
    pub rho1: ScalarGain,
    pub rho2: ScalarGain,
}

impl FactorizationResult {
    /// Verify the pair: `rho1` K∞, `rho2` L, and `rho1 * rho2 <= kappa` on
    /// the grid. Returns the worst dominance margin (positive = violated).
    pub fn verify(&self, kappa: &ScalarGain, grid_points: usize) -> Result<f64> {
        self.rho1.require_kind(grid_points)?;
        self.rho2.require_kind(grid_points)?;
        let grid = verification_grid(kappa.domain_cap(), grid_points);
        let mut worst = f64::MIN;
        for s in grid {
            let product = self.rho1.eval(s)? * self.rho2.eval(s)?;
            let margin = product - kappa.eval(s)?;
            if margin > worst {
                worst = margin;
            }
        }
        Ok(worst)
    }
}

/// Knot count of the factorization minorant.
const FACTORIZE_KNOTS: usize = 4096;
/// Safety factor keeping the minorant strictly inside `kappa` at knots.
const FACTORIZE_SAFETY: f64 = 0.999;

/// Split a positive-definite `kappa` into `rho1` (K∞) and `rho2` (L) with
/// `rho1(s) * rho2(s) <= kappa(s)` on the verification grid.
///
/// Construction: `rho2(s) = 1/(1+s)` and `rho1(s) = G(s) * (1+s)`, where
/// `G` interpolates a shifted suffix minorant of `kappa` (per-cell minima
/// scanned from the cap downward, each knot dominated by the minimum of
/// every cell at or beyond its left neighbour, scaled by a safety factor).
/// The product is then `G(s) <= kappa(s)` not just at knots but across
/// whole cells, up to variation of `kappa` below the knot resolution and a
/// sub-tolerance sliver inside the first cell. A plain `rho1(s) = c*s`
/// cannot do this: against a superlinear `kappa` its product genuinely
/// escapes between the origin and the first knot, which surfaced as false
/// violations in the trajectory-bound pipeline.
pub fn factorize_positive_definite(kappa: &ScalarGain) -> Result<FactorizationResult> {
    let report = {
        let probe = ScalarGain {
            form: kappa.form.clone(),
            kind: GainKind::PositiveDefinite,
            domain_cap: kappa.domain_cap(),
            label: kappa.label().to_string(),
        };
        probe.verify_kind(DEFAULT_GRID_POINTS)?
    };
    if !report.passed {
        return Err(Error::Kind {
            gain: kappa.label().to_string(),
            detail: report.summary(),
        });
    }

    let cap = kappa.domain_cap();
    // geometric knots down to a tiny positive floor so the first cell's
    // interpolation sliver stays far below every working tolerance
    let mut knots = Vec::with_capacity(FACTORIZE_KNOTS + 1);
    knots.push(0.0);
    let lo = (cap * 1e-12).ln();
    let hi = cap.ln();
    for i in 0..FACTORIZE_KNOTS {
        knots.push((lo + (hi - lo) * i as f64 / (FACTORIZE_KNOTS - 1) as f64).exp());
    }
    knots.dedup_by(|a, b| *a - *b <= 1e-12 * b.abs().max(1e-300));
    *knots.last_mut().unwrap() = cap;

    // per-cell minima of kappa (endpoints away from zero, plus midpoint)
    let cells = knots.len() - 1;
    let mut cell_min = vec![0.0; cells];
    for i in 0..cells {
        let (a, b) = (knots[i], knots[i + 1]);
        let mut m = kappa.eval(b)?;
        m = m.min(kappa.eval(0.5 * (a + b))?);
        if a > 0.0 {
            m = m.min(kappa.eval(a)?);
        }
        cell_min[i] = m;
    }
    // suffix minima, nondecreasing in the knot index
    let mut suffix = vec![0.0; cells];
    let mut running = f64::INFINITY;
    for i in (0..cells).rev() {
        running = running.min(cell_min[i]);
        suffix[i] = running;
    }
    // shifted minorant: the knot at the right edge of cell i carries the
    // suffix minimum starting at cell i, so interpolation over any cell
    // stays below that cell's own minimum
    let mut g = Vec::with_capacity(knots.len());
    g.push(0.0);
    g.extend(suffix.iter().map(|m| FACTORIZE_SAFETY * m));
    let minorant = std::sync::Arc::new(InterpTable::new(knots, g)?);

    let table = minorant.clone();
    let rho1 = ScalarGain::from_fn_result(
        &format!("minorant({})*(1+s)", kappa.label()),
        move |s| Ok(table.eval(s)? * (1.0 + s)),
        GainKind::Kinf,
        cap,
    );
    let rho2 = ScalarGain::parse("1/(1+s)", GainKind::L, cap)?;

    let result = FactorizationResult { rho1, rho2 };
    let worst = result.verify(kappa, DEFAULT_GRID_POINTS)?;
    if worst > ZERO_TOL {
        return Err(Error::Kind {
            gain: kappa.label().to_string(),
            detail: format!("factorization dominance violated by {worst}"),
        });
    }
    Ok(result)
}

/// Bilinear interpolation over an (s, t) grid.
#[derive(Debug, Clone)]
pub struct Table2D {
    s_grid: Vec<f64>,
    t_grid: Vec<f64>,
    /// `values[i][j] = f(s_grid[i], t_grid[j])`
    values: Vec<Vec<f64>>,
}

impl Table2D {
    pub fn new(s_grid: Vec<f64>, t_grid: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if s_grid.len() < 2 || t_grid.len() < 2 {
            return Err(Error::argument("2-D table needs >= 2 points per axis"));
        }
        if values.len() != s_grid.len() || values.iter().any(|row| row.len() != t_grid.len()) {
            return Err(Error::argument("2-D table shape mismatch"));
        }
        if !s_grid.windows(2).all(|w| w[0] < w[1]) || !t_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::argument(
                "2-D table axes must be strictly increasing",
            ));
        }
        Ok(Table2D {
            s_grid,
            t_grid,
            values,
        })
    }

    fn bracket(grid: &[f64], x: f64) -> (usize, f64) {
        let idx = match grid.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => {
                return (
                    i.min(grid.len() - 2),
                    if i == grid.len() - 1 { 1.0 } else { 0.0 },
                )
            }
            Err(i) => i.clamp(1, grid.len() - 1),
        };
        let lam = (x - grid[idx - 1]) / (grid[idx] - grid[idx - 1]);
        (idx - 1, lam)
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        let s_hi = *self.s_grid.last().unwrap();
        let t_hi = *self.t_grid.last().unwrap();
        if s < self.s_grid[0] - 1e-12 || s > s_hi * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::argument(format!(
                "table s-query {s} outside [0, {s_hi}]"
            )));
        }
        if t < self.t_grid[0] - 1e-12 || t > t_hi * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::argument(format!(
                "table t-query {t} outside [0, {t_hi}]"
            )));
        }
        let s = s.clamp(self.s_grid[0], s_hi);
        let t = t.clamp(self.t_grid[0], t_hi);
        let (i, a) = Self::bracket(&self.s_grid, s);
        let (j, b) = Self::bracket(&self.t_grid, t);
        let v00 = self.values[i][j];
        let v01 = self.values[i][j + 1];
        let v10 = self.values[i + 1][j];
        let v11 = self.values[i + 1][j + 1];
        Ok(v00 * (1.0 - a) * (1.0 - b) + v10 * a * (1.0 - b) + v01 * (1.0 - a) * b + v11 * a * b)
    }

    pub fn s_grid(&self) -> &[f64] {
        &self.s_grid
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }
}

#[derive(Clone)]
enum KLForm {
    Expr(Expression),
    Table(Arc<Table2D>),
    Func(Arc<dyn Fn(f64, f64) -> Result<f64> + Send + Sync>),
}

/// A candidate KL function `beta(s, t)`: class K in the size argument for
/// each fixed time, nonincreasing and decaying in time for each fixed size.
#[derive(Clone)]
pub struct KLFunction {
    form: KLForm,
    s_cap: f64,
    t_cap: f64,
    label: String,
}

impl fmt::Debug for KLFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KLFunction")
            .field("label", &self.label)
            .field("s_cap", &self.s_cap)
            .field("t_cap", &self.t_cap)
            .finish()
    }
}

impl KLFunction {
    pub fn from_expr(expr: Expression, domain_cap: f64) -> Result<Self> {
        let use_ = expr.var_use();
        if use_.states || use_.inputs {
            return Err(Error::argument(format!(
                "KL function `{}` may only reference s and t",
                expr.unparse()
            )));
        }
        let label = expr.unparse();
        Ok(KLFunction {
            form: KLForm::Expr(expr),
            s_cap: domain_cap,
            t_cap: domain_cap,
            label,
        })
    }

    pub fn parse(src: &str, domain_cap: f64) -> Result<Self> {
        Self::from_expr(crate::dsl::parse(src, Scope::scalar())?, domain_cap)
    }

    pub fn from_table(label: &str, table: Table2D) -> Self {
        let s_cap = *table.s_grid().last().unwrap();
        let t_cap = *table.t_grid().last().unwrap();
        KLFunction {
            form: KLForm::Table(Arc::new(table)),
            s_cap,
            t_cap,
            label: label.to_string(),
        }
    }

    pub fn from_fn_result<F>(label: &str, f: F, s_cap: f64, t_cap: f64) -> Self
    where
        F: Fn(f64, f64) -> Result<f64> + Send + Sync + 'static,
    {
        KLFunction {
            form: KLForm::Func(Arc::new(f)),
            s_cap,
            t_cap,
            label: label.to_string(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn s_cap(&self) -> f64 {
        self.s_cap
    }

    pub fn t_cap(&self) -> f64 {
        self.t_cap
    }

    /// Access to the tabulated form, when there is one.
    pub fn table(&self) -> Option<&Table2D> {
        match &self.form {
            KLForm::Table(t) => Some(t),
            _ => None,
        }
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        if s < 0.0 || t < 0.0 {
            return Err(Error::argument(format!(
                "KL function `{}` evaluated at ({s}, {t})",
                self.label
            )));
        }
        match &self.form {
            KLForm::Expr(e) => e
                .eval(&EvalContext::scalar_st(s, t))
                .map_err(|fault| Error::Evaluation { location: s, fault }),
            KLForm::Table(table) => table.eval(s, t),
            KLForm::Func(f) => f(s, t),
        }
    }

    /// Grid-certify KL membership: K clauses in `s` on a handful of time
    /// slices, nonincreasing-and-decaying clauses in `t` on size slices.
    pub fn verify_kind(&self, grid_points: usize) -> Result<MembershipReport> {
        let (s_grid, t_grid): (Vec<f64>, Vec<f64>) = match &self.form {
            KLForm::Table(table) => (table.s_grid().to_vec(), table.t_grid().to_vec()),
            _ => (
                verification_grid(self.s_cap, grid_points),
                verification_grid(self.t_cap, grid_points),
            ),
        };
        let mut clauses = Vec::new();
        for frac in [0.0, 0.25, 0.5, 1.0] {
            let t = nearest(&t_grid, frac * self.t_cap);
            let mut values = Vec::with_capacity(s_grid.len());
            for &s in &s_grid {
                values.push(self.eval(s, t)?);
            }
            let mut z = zero_at_zero(&s_grid, &values);
            z.clause = "k_in_s_zero_at_zero";
            if !z.passed {
                z.detail = Some(format!("{} (t = {t})", z.detail.unwrap_or_default()));
            }
            clauses.push(z);
            let mut inc = strictly_increasing(&s_grid, &values);
            inc.clause = "k_in_s_strictly_increasing";
            if !inc.passed {
                inc.detail = Some(format!("{} (t = {t})", inc.detail.unwrap_or_default()));
            }
            clauses.push(inc);
        }
        for frac in [0.25, 0.5, 1.0] {
            let s = nearest(&s_grid, frac * self.s_cap);
            if s == 0.0 {
                continue;
            }
            let mut values = Vec::with_capacity(t_grid.len());
            for &t in &t_grid {
                values.push(self.eval(s, t)?);
            }
            let mut dec = nonincreasing(&t_grid, &values);
            dec.clause = "l_in_t_nonincreasing";
            if !dec.passed {
                dec.detail = Some(format!("{} (s = {s})", dec.detail.unwrap_or_default()));
            }
            clauses.push(dec);
            let mut decay = decays(&t_grid, &values);
            decay.clause = "l_in_t_decays";
            if !decay.passed {
                decay.detail = Some(format!("{} (s = {s})", decay.detail.unwrap_or_default()));
            }
            clauses.push(decay);
        }
        Ok(MembershipReport::from_clauses(GainKind::K, clauses))
    }

    pub fn require_kl(&self, grid_points: usize) -> Result<()> {
        let report = self.verify_kind(grid_points)?;
        if report.passed {
            Ok(())
        } else {
            Err(Error::Kind {
                gain: self.label.clone(),
                detail: report.summary(),
            })
        }
    }
}

fn nearest(grid: &[f64], x: f64) -> f64 {
    let mut best = grid[0];
    let mut dist = (best - x).abs();
    for &g in grid {
        let d = (g - x).abs();
        if d < dist {
            dist = d;
            best = g;
        }
    }
    best
}

/// Settling-time family `T_r(eps)`: smallest time after which `beta(s, .)`
/// stays below `eps` for every size `s <= r`.
#[derive(Debug, Clone)]
pub struct SettlingTimeMap {
    beta: KLFunction,
    r_grid: Vec<f64>,
    eps_grid: Vec<f64>,
    /// `table[i][j] = T_{r_grid[i]}(eps_grid[j])`
    table: Vec<Vec<f64>>,
    t_max: f64,
    /// (r, eps) entries where the settle time is 0; the map is not onto
    /// the positive reals there, which downstream uses tolerate.
    zero_time_entries: Vec<(f64, f64)>,
}

/// Smallest grid time `T` with `max_{s <= r} beta(s, T) <= eps`, by
/// bracketed bisection in `t`.
pub fn settle_time(beta: &KLFunction, r: f64, eps: f64, t_max: f64) -> Result<f64> {
    if r < 0.0 || eps <= 0.0 {
        return Err(Error::argument(format!(
            "settle_time needs r >= 0 and eps > 0, got ({r}, {eps})"
        )));
    }
    const S_PROBES: usize = 32;
    let worst = |t: f64| -> Result<f64> {
        let mut m = beta.eval(r, t)?;
        for i in 1..S_PROBES {
            let s = r * i as f64 / S_PROBES as f64;
            m = m.max(beta.eval(s, t)?);
        }
        Ok(m)
    };
    if worst(0.0)? <= eps {
        return Ok(0.0);
    }
    if worst(t_max)? > eps {
        return Err(Error::Horizon {
            what: format!("settling time of `{}`", beta.label()),
            detail: format!("beta({r}, {t_max}) still above eps = {eps}"),
        });
    }
    let mut lo = 0.0_f64;
    let mut hi = t_max;
    for _ in 0..MAX_BISECT_ITER {
        let mid = 0.5 * (lo + hi);
        if worst(mid)? <= eps {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-9 * hi.max(1.0) {
            break;
        }
    }
    Ok(hi)
}

/// Tabulate `T_r(eps)` over the requested grids.
pub fn settling_time_map(
    beta: &KLFunction,
    r_grid: &[f64],
    eps_grid: &[f64],
    t_max: f64,
) -> Result<SettlingTimeMap> {
    if r_grid.is_empty() || eps_grid.is_empty() {
        return Err(Error::argument("settling map needs nonempty grids"));
    }
    let mut table = Vec::with_capacity(r_grid.len());
    let mut zero_time_entries = Vec::new();
    for &r in r_grid {
        let mut row = Vec::with_capacity(eps_grid.len());
        for &eps in eps_grid {
            let t = settle_time(beta, r, eps, t_max)?;
            if t == 0.0 {
                zero_time_entries.push((r, eps));
            }
            row.push(t);
        }
        table.push(row);
    }
    Ok(SettlingTimeMap {
        beta: beta.clone(),
        r_grid: r_grid.to_vec(),
        eps_grid: eps_grid.to_vec(),
        table,
        t_max,
        zero_time_entries,
    })
}

impl SettlingTimeMap {
    /// Exact (bisection) query, independent of the tabulated grid.
    pub fn query(&self, r: f64, eps: f64) -> Result<f64> {
        settle_time(&self.beta, r, eps, self.t_max)
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn r_grid(&self) -> &[f64] {
        &self.r_grid
    }

    pub fn eps_grid(&self) -> &[f64] {
        &self.eps_grid
    }

    pub fn zero_time_entries(&self) -> &[(f64, f64)] {
        &self.zero_time_entries
    }

    /// Monotonicity and bounded-jump (grid continuity) checks over the table.
    pub fn check_table(&self) -> Vec<ClauseResult> {
        let mut clauses = Vec::new();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &self.table {
            for &v in row {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let range = (hi - lo).max(1e-12);

        let mut eps_mono = ClauseResult::pass("nonincreasing_in_eps");
        'outer_eps: for (i, row) in self.table.iter().enumerate() {
            for j in 0..row.len() - 1 {
                if row[j + 1] > row[j] + 1e-9 {
                    eps_mono = ClauseResult::fail(
                        "nonincreasing_in_eps",
                        Some(self.eps_grid[j + 1]),
                        format!("T_r(eps) rises at r = {}", self.r_grid[i]),
                    );
                    break 'outer_eps;
                }
            }
        }
        clauses.push(eps_mono);

        let mut r_mono = ClauseResult::pass("nondecreasing_in_r");
        'outer_r: for j in 0..self.eps_grid.len() {
            for i in 0..self.table.len() - 1 {
                if self.table[i + 1][j] < self.table[i][j] - 1e-9 {
                    r_mono = ClauseResult::fail(
                        "nondecreasing_in_r",
                        Some(self.r_grid[i + 1]),
                        format!("T_r(eps) drops at eps = {}", self.eps_grid[j]),
                    );
                    break 'outer_r;
                }
            }
        }
        clauses.push(r_mono);

        // grid continuity: adjacent-cell jumps bounded relative to the
        // table's range and resolution
        let n = self.r_grid.len().min(self.eps_grid.len()) as f64;
        let jump_tol = 8.0 * range / n;
        let mut cont = ClauseResult::pass("bounded_jumps");
        'outer_c: for i in 0..self.table.len() {
            for j in 0..self.eps_grid.len() {
                let here = self.table[i][j];
                if i + 1 < self.table.len() && (self.table[i + 1][j] - here).abs() > jump_tol {
                    cont = ClauseResult::fail(
                        "bounded_jumps",
                        Some(self.r_grid[i + 1]),
                        format!(
                            "jump {} exceeds {jump_tol}",
                            (self.table[i + 1][j] - here).abs()
                        ),
                    );
                    break 'outer_c;
                }
                if j + 1 < self.eps_grid.len() && (self.table[i][j + 1] - here).abs() > jump_tol {
                    cont = ClauseResult::fail(
                        "bounded_jumps",
                        Some(self.eps_grid[j + 1]),
                        format!(
                            "jump {} exceeds {jump_tol}",
                            (self.table[i][j + 1] - here).abs()
                        ),
                    );
                    break 'outer_c;
                }
            }
        }
        clauses.push(cont);
        clauses
    }

    /// CSV export, header `r,eps,T`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,eps,T\n");
        for (i, &r) in self.r_grid.iter().enumerate() {
            for (j, &eps) in self.eps_grid.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", r, eps, self.table[i][j]));
            }
        }
        out
    }
}
