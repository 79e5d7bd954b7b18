//! Control systems, piecewise-constant input signals, and a fixed-step RK4
//! integrator.
//!
//! Inputs are piecewise constant: dense enough for every check in this
//! toolkit (suprema are approximated from below) and they make energy
//! integrals exact. The integrator is deliberately fixed-step so that
//! certificate margins are deterministic and reproducible.

use crate::dsl::{EvalContext, Expression, Scope};
use crate::error::{DomainFault, Error, Result};
use crate::funclib::{ScalarGain, DEFAULT_GRID_POINTS};
use crate::report::{CertificateReport, MarginTracker, Tolerances, Witness};
use serde::{Deserialize, Serialize};

/// States whose norm exceeds this are treated as diverged. Divergence is a
/// first-class result, not an error: falsification deliberately drives it.
pub const BLOWUP_CAP: f64 = 1e12;

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Admissible input values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSet {
    All,
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl InputSet {
    pub fn admits(&self, u: &[f64]) -> bool {
        match self {
            InputSet::All => true,
            InputSet::Box { lo, hi } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h),
        }
    }
}

/// A system `x' = f(x, u), y = h(x)` with `f(0,0) = 0` and `h(0) = 0`.
#[derive(Debug, Clone)]
pub struct ControlSystem {
    name: String,
    n: usize,
    m: usize,
    p: usize,
    f: Vec<Expression>,
    h: Vec<Expression>,
    input_set: InputSet,
}

impl ControlSystem {
    pub fn new(
        name: &str,
        n: usize,
        m: usize,
        p: usize,
        f: Vec<Expression>,
        h: Vec<Expression>,
        input_set: InputSet,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::argument("state dimension must be positive"));
        }
        if f.len() != n {
            return Err(Error::argument(format!(
                "expected {n} dynamics expressions, got {}",
                f.len()
            )));
        }
        if h.len() != p {
            return Err(Error::argument(format!(
                "expected {p} output expressions, got {}",
                h.len()
            )));
        }
        for e in &f {
            let use_ = e.var_use();
            if use_.s || use_.t {
                return Err(Error::argument(format!(
                    "dynamics `{}` may not reference s or t",
                    e.unparse()
                )));
            }
        }
        for e in &h {
            let use_ = e.var_use();
            if use_.inputs || use_.s || use_.t {
                return Err(Error::argument(format!(
                    "output `{}` may only reference the state",
                    e.unparse()
                )));
            }
        }
        let sys = ControlSystem {
            name: name.to_string(),
            n,
            m,
            p,
            f,
            h,
            input_set,
        };

        // equilibrium at the origin
        let x0 = vec![0.0; n];
        let u0 = vec![0.0; m];
        let mut buf = vec![0.0; n.max(p)];
        sys.eval_dynamics(&x0, &u0, &mut buf[..n])?;
        if buf[..n].iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::argument(format!("system `{name}`: f(0,0) != 0")));
        }
        if p > 0 {
            sys.eval_output(&x0, &mut buf[..p])?;
            if buf[..p].iter().any(|v| v.abs() > 1e-12) {
                return Err(Error::argument(format!("system `{name}`: h(0) != 0")));
            }
        }

        // finite on the verification box
        let mut state = 0x9e3779b97f4a7c15_u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..32 {
            let x: Vec<f64> = (0..n).map(|_| 10.0 * next()).collect();
            let u: Vec<f64> = (0..m).map(|_| 10.0 * next()).collect();
            sys.eval_dynamics(&x, &u, &mut buf[..n]).map_err(|e| {
                Error::argument(format!(
                    "system `{name}`: dynamics fault on the verification box: {e}"
                ))
            })?;
        }
        Ok(sys)
    }

    /// Build from expression strings.
    pub fn from_strs(
        name: &str,
        n: usize,
        m: usize,
        p: usize,
        dynamics: &[&str],
        outputs: &[&str],
        input_set: InputSet,
    ) -> Result<Self> {
        let scope = Scope::new(n, m);
        let f = dynamics
            .iter()
            .map(|s| crate::dsl::parse(s, scope))
            .collect::<Result<Vec<_>>>()?;
        let out_scope = Scope::new(n, m);
        let h = outputs
            .iter()
            .map(|s| crate::dsl::parse(s, out_scope))
            .collect::<Result<Vec<_>>>()?;
        ControlSystem::new(name, n, m, p, f, h, input_set)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.m, self.p)
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn output_dim(&self) -> usize {
        self.p
    }

    pub fn input_set(&self) -> &InputSet {
        &self.input_set
    }

    pub fn dynamics(&self) -> &[Expression] {
        &self.f
    }

    pub fn output_exprs(&self) -> &[Expression] {
        &self.h
    }

    pub fn eval_dynamics(
        &self,
        x: &[f64],
        u: &[f64],
        out: &mut [f64],
    ) -> std::result::Result<(), DomainFault> {
        let ctx = EvalContext::state_input(x, u);
        for (o, e) in out.iter_mut().zip(&self.f) {
            *o = e.eval(&ctx)?;
        }
        Ok(())
    }

    pub fn eval_output(&self, x: &[f64], out: &mut [f64]) -> std::result::Result<(), DomainFault> {
        let ctx = EvalContext::state(x);
        for (o, e) in out.iter_mut().zip(&self.h) {
            *o = e.eval(&ctx)?;
        }
        Ok(())
    }
}

/// Piecewise-constant input on `[0, horizon]`, zero after the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSignal {
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
    horizon: f64,
}

impl InputSignal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>, horizon: f64) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints[0] != 0.0 {
            return Err(Error::argument("breakpoints must start at 0"));
        }
        if !breakpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::argument("breakpoints must be strictly increasing"));
        }
        if values.len() != breakpoints.len() {
            return Err(Error::argument("one value vector per interval required"));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::argument("input value dimensions differ"));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::argument("input values must be finite"));
        }
        if horizon < *breakpoints.last().unwrap() {
            return Err(Error::argument("horizon before the last breakpoint"));
        }
        Ok(InputSignal {
            breakpoints,
            values,
            horizon,
        })
    }

    pub fn constant(value: Vec<f64>, horizon: f64) -> Self {
        InputSignal {
            breakpoints: vec![0.0],
            values: vec![value],
            horizon,
        }
    }

    pub fn zero(dim: usize, horizon: f64) -> Self {
        Self::constant(vec![0.0; dim], horizon)
    }

    /// `value` on `[0, support)`, zero afterwards.
    pub fn impulse(value: Vec<f64>, support: f64, horizon: f64) -> Result<Self> {
        if !(support > 0.0) || support > horizon {
            return Err(Error::argument("impulse support must lie in (0, horizon]"));
        }
        let dim = value.len();
        if support == horizon {
            return InputSignal::new(vec![0.0], vec![value], horizon);
        }
        InputSignal::new(vec![0.0, support], vec![value, vec![0.0; dim]], horizon)
    }

    /// The scalar family `u_k`: amplitude `k` on `[0, 1/k]`, zero afterwards.
    pub fn u_k(k: f64, horizon: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::argument("u_k needs k > 0"));
        }
        Self::impulse(vec![k], (1.0 / k).min(horizon), horizon)
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Value at time `t` (zero beyond the horizon).
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.write_value(t, &mut out);
        out
    }

    pub fn write_value(&self, t: f64, out: &mut [f64]) {
        if t < 0.0 || t > self.horizon {
            out.fill(0.0);
            return;
        }
        let idx = match self
            .breakpoints
            .binary_search_by(|b| b.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        out.copy_from_slice(&self.values[idx]);
    }

    /// Concatenation: this signal on `[0, tau]`, then `u` time-shifted by
    /// `tau`.
    pub fn concatenate(&self, u: &InputSignal, tau: f64) -> Result<InputSignal> {
        if tau < 0.0 {
            return Err(Error::argument(format!(
                "concatenation time {tau} is negative"
            )));
        }
        if tau > self.horizon {
            return Err(Error::argument(format!(
                "concatenation time {tau} exceeds the first signal's horizon {}",
                self.horizon
            )));
        }
        if u.dim() != self.dim() {
            return Err(Error::argument(
                "concatenated signals must share a dimension",
            ));
        }
        if tau == 0.0 {
            return Ok(u.clone());
        }
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        for (b, v) in self.breakpoints.iter().zip(&self.values) {
            if *b < tau {
                breakpoints.push(*b);
                values.push(v.clone());
            }
        }
        for (b, v) in u.breakpoints.iter().zip(&u.values) {
            let shifted = tau + b;
            if shifted > *breakpoints.last().unwrap() {
                breakpoints.push(shifted);
                values.push(v.clone());
            } else {
                // u starts exactly where the prefix ends; overwrite
                *values.last_mut().unwrap() = v.clone();
            }
        }
        InputSignal::new(breakpoints, values, tau + u.horizon)
    }
}

/// Exact piecewise-constant quadrature of `gamma(|u(s)|)` over the signal's
/// support.
pub fn input_energy(u: &InputSignal, gamma: &ScalarGain) -> Result<f64> {
    let mut total = 0.0;
    for (i, value) in u.values.iter().enumerate() {
        let start = u.breakpoints[i];
        let end = if i + 1 < u.breakpoints.len() {
            u.breakpoints[i + 1]
        } else {
            u.horizon
        };
        total += gamma.eval(norm(value))? * (end - start);
    }
    Ok(total)
}

/// A sampled solution on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// Set when the state norm exceeded [`BLOWUP_CAP`]; samples stop there.
    pub diverged_at: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_norm(&self, k: usize) -> f64 {
        norm(&self.states[k])
    }

    pub fn output_norm(&self, k: usize) -> f64 {
        norm(&self.outputs[k])
    }

    pub fn input_norm(&self, k: usize) -> f64 {
        norm(&self.inputs[k])
    }

    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory has at least the initial sample")
    }

    /// CSV export with header `t,x1..xn,y1..yp,u1..um`.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let n = self.states[0].len();
        let p = self.outputs[0].len();
        let m = self.inputs[0].len();
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        for i in 1..=p {
            let _ = write!(out, ",y{i}");
        }
        for i in 1..=m {
            let _ = write!(out, ",u{i}");
        }
        out.push('\n');
        for k in 0..self.len() {
            let _ = write!(out, "{}", self.times[k]);
            for v in &self.states[k] {
                let _ = write!(out, ",{v}");
            }
            for v in &self.outputs[k] {
                let _ = write!(out, ",{v}");
            }
            for v in &self.inputs[k] {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Classical fixed-step RK4 on `[0, horizon]`, input held constant within
/// each step (sampled at the step start). Halts early with `diverged_at`
/// set once the state norm exceeds the blow-up cap.
pub fn integrate(
    sys: &ControlSystem,
    xi: &[f64],
    u: &InputSignal,
    dt: f64,
    horizon: f64,
) -> Result<Trajectory> {
    integrate_with_cap(sys, xi, u, dt, horizon, BLOWUP_CAP)
}

pub fn integrate_with_cap(
    sys: &ControlSystem,
    xi: &[f64],
    u: &InputSignal,
    dt: f64,
    horizon: f64,
    blowup_cap: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::argument("dt must be positive"));
    }
    if horizon < 0.0 {
        return Err(Error::argument("horizon must be nonnegative"));
    }
    let (n, m, p) = sys.dims();
    if xi.len() != n {
        return Err(Error::argument(format!(
            "initial state has {} entries, system needs {n}",
            xi.len()
        )));
    }
    if u.dim() != m {
        return Err(Error::argument(format!(
            "input has dimension {}, system needs {m}",
            u.dim()
        )));
    }
    for v in u.values() {
        if !sys.input_set().admits(v) {
            return Err(Error::argument(
                "input value outside the system's input set",
            ));
        }
    }

    let steps = (horizon / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut outputs = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut diverged_at = None;

    let mut x = xi.to_vec();
    let mut u_val = vec![0.0; m];
    let mut y = vec![0.0; p];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut xs = vec![0.0; n];

    let record = |t: f64,
                  x: &[f64],
                  u_val: &[f64],
                  y: &mut [f64],
                  times: &mut Vec<f64>,
                  states: &mut Vec<Vec<f64>>,
                  outputs: &mut Vec<Vec<f64>>,
                  inputs: &mut Vec<Vec<f64>>|
     -> Result<()> {
        sys.eval_output(x, y)
            .map_err(|fault| Error::Integration { time: t, fault })?;
        times.push(t);
        states.push(x.to_vec());
        outputs.push(y.to_vec());
        inputs.push(u_val.to_vec());
        Ok(())
    };

    u.write_value(0.0, &mut u_val);
    record(
        0.0,
        &x,
        &u_val,
        &mut y,
        &mut times,
        &mut states,
        &mut outputs,
        &mut inputs,
    )?;
    if norm(&x) > blowup_cap {
        return Ok(Trajectory {
            dt,
            times,
            states,
            outputs,
            inputs,
            diverged_at: Some(0.0),
        });
    }

    for step in 0..steps {
        let t = step as f64 * dt;
        u.write_value(t, &mut u_val);
        // inputs[step] must be the value actually used during the step
        inputs[step].copy_from_slice(&u_val);

        let stage = |xin: &[f64], out: &mut [f64]| -> Result<()> {
            sys.eval_dynamics(xin, &u_val, out)
                .map_err(|fault| Error::Integration { time: t, fault })
        };
        stage(&x, &mut k1)?;
        for i in 0..n {
            xs[i] = x[i] + 0.5 * dt * k1[i];
        }
        stage(&xs, &mut k2)?;
        for i in 0..n {
            xs[i] = x[i] + 0.5 * dt * k2[i];
        }
        stage(&xs, &mut k3)?;
        for i in 0..n {
            xs[i] = x[i] + dt * k3[i];
        }
        stage(&xs, &mut k4)?;
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }

        let t_next = (step + 1) as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            diverged_at = Some(t_next);
            break;
        }
        u.write_value(t_next, &mut u_val);
        record(
            t_next,
            &x,
            &u_val,
            &mut y,
            &mut times,
            &mut states,
            &mut outputs,
            &mut inputs,
        )?;
        if norm(&x) > blowup_cap {
            diverged_at = Some(t_next);
            break;
        }
    }

    Ok(Trajectory {
        dt,
        times,
        states,
        outputs,
        inputs,
        diverged_at,
    })
}

/// The gains of a reachable-set envelope
/// `|x(t)| <= chi1(t) + chi2(|xi|) + chi3(int_0^t sigma(|u|)) + c`.
///
/// `chi1: None` folds the time term away (contributes zero). Envelopes are
/// user-supplied per system; built-in benchmarks ship with derived ones.
#[derive(Debug, Clone)]
pub struct ReachabilityEnvelope {
    pub chi1: Option<ScalarGain>,
    pub chi2: ScalarGain,
    pub chi3: ScalarGain,
    pub sigma: ScalarGain,
    pub c: f64,
}

impl ReachabilityEnvelope {
    pub fn verify_kinds(&self) -> Result<()> {
        if let Some(chi1) = &self.chi1 {
            chi1.require_kind(DEFAULT_GRID_POINTS)?;
        }
        self.chi2.require_kind(DEFAULT_GRID_POINTS)?;
        self.chi3.require_kind(DEFAULT_GRID_POINTS)?;
        self.sigma.require_kind(DEFAULT_GRID_POINTS)?;
        if self.c < 0.0 {
            return Err(Error::argument("envelope constant must be nonnegative"));
        }
        Ok(())
    }
}

/// Evaluate the envelope inequality along sampled trajectories; the report
/// carries the worst margin and its witness. A diverged trajectory counts
/// as a violation.
pub fn check_reachability_envelope(
    sys: &ControlSystem,
    env: &ReachabilityEnvelope,
    samples: &[(Vec<f64>, InputSignal)],
    dt: f64,
    horizon: f64,
) -> Result<CertificateReport> {
    env.verify_kinds()?;
    let mut tracker = MarginTracker::new();
    for (xi, u) in samples {
        let traj = integrate(sys, xi, u, dt, horizon)?;
        let xi_norm = norm(xi);
        let chi2_xi = env.chi2.eval(xi_norm)?;
        let mut sigma_int = 0.0;
        for k in 0..traj.len() {
            if k > 0 {
                sigma_int += dt * env.sigma.eval(traj.input_norm(k - 1))?;
            }
            let t = traj.times[k];
            let chi1_t = match &env.chi1 {
                Some(g) => g.eval(t)?,
                None => 0.0,
            };
            let rhs = chi1_t + chi2_xi + env.chi3.eval(sigma_int)? + env.c;
            let lhs = traj.state_norm(k);
            tracker.observe(lhs - rhs, || Witness {
                xi: xi.clone(),
                input: Some(u.clone()),
                time: t,
                lhs,
                rhs,
            });
        }
        tracker.samples += 1;
        if let Some(t_div) = traj.diverged_at {
            let lhs = traj.state_norm(traj.len() - 1).max(BLOWUP_CAP);
            tracker.observe(lhs, || Witness {
                xi: xi.clone(),
                input: Some(u.clone()),
                time: t_div,
                lhs,
                rhs: 0.0,
            });
        }
    }
    let mut report = tracker.into_report("reachability_envelope", Tolerances::for_dt(dt), false);
    report.notes.push(format!(
        "{} trajectories on horizon {horizon}",
        samples.len()
    ));
    Ok(report)
}
