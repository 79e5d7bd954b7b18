//! Scalar comparison-principle engine: solve the comparison ODE, verify
//! dominance of integral-inequality traces, construct and gate a KL decay
//! bound from the half-speed flow, and run the full sufficiency pipeline
//! that turns a passing Lyapunov certificate into a trajectory bound.

use crate::error::{Error, Result};
use crate::funclib::{
    GainKind, KLFunction, ScalarGain, Table2D, DEFAULT_GRID_POINTS, DEFAULT_INVERT_TOL,
};
use crate::lyap::{check_decrease_integral, check_sandwich, LyapunovCandidate};
use crate::report::{CertificateReport, MarginTracker, Tolerances, Verdict, Witness};
use crate::sampling;
use crate::sim::{integrate, norm, ControlSystem, InputSignal};
use rayon::prelude::*;

/// Step size for the internal scalar flows.
const FLOW_DT: f64 = 1e-2;
/// Additive term baked into tabulated KL candidates so strict monotonicity
/// in the size argument survives flow extinction; vanishes at the 1e-12
/// level and is absorbed by every downstream tolerance.
const KL_STRICTNESS: f64 = 1e-12;
/// Hard cap on the decay extension of tabulated flows. Extension segments
/// grow geometrically and coarsen their step, so reaching the cap stays
/// cheap even for very slow rates.
const FLOW_T_HARD: f64 = 5000.0;
/// Step-count ceiling per extension segment.
const FLOW_SEGMENT_STEPS: f64 = 4096.0;
/// Dense sampling used for the comparison rate inside flow loops.
const ALPHA_TABLE_POINTS: usize = 16_384;
/// Internal size-knot count for tabulated KL candidates.
const S_REFINEMENT: usize = 1024;

/// One instance of the comparison problem `w' = -alpha(w) + v, w(0) = y0`.
#[derive(Debug, Clone)]
pub struct ComparisonInstance {
    pub alpha: ScalarGain,
    /// Declared by the user; when false, `alpha` is replaced by a grid
    /// minorant so dominance conclusions stay conservative.
    pub alpha_locally_lipschitz: bool,
    /// Scalar nonnegative forcing, piecewise constant.
    pub v: InputSignal,
    pub y0: f64,
    pub horizon: f64,
    pub dt: f64,
}

impl ComparisonInstance {
    pub fn new(alpha: ScalarGain, v: InputSignal, y0: f64, horizon: f64, dt: f64) -> Result<Self> {
        if v.dim() != 1 {
            return Err(Error::argument("comparison forcing must be scalar"));
        }
        if v.values().iter().any(|val| val[0] < 0.0) {
            return Err(Error::argument("comparison forcing must be nonnegative"));
        }
        if y0 < 0.0 {
            return Err(Error::argument(
                "comparison initial value must be nonnegative",
            ));
        }
        if !(dt > 0.0) || horizon < 0.0 {
            return Err(Error::argument(
                "comparison instance needs dt > 0 and horizon >= 0",
            ));
        }
        Ok(ComparisonInstance {
            alpha,
            alpha_locally_lipschitz: true,
            v,
            y0,
            horizon,
            dt,
        })
    }

    pub fn grid_len(&self) -> usize {
        (self.horizon / self.dt).round() as usize + 1
    }

    /// The rate actually used by the solver: `alpha` itself when declared
    /// locally Lipschitz, otherwise a per-interval minorant step function
    /// (smaller rate means a larger dominating solution).
    fn effective_alpha(&self) -> Result<ScalarGain> {
        if self.alpha_locally_lipschitz {
            return Ok(self.alpha.clone());
        }
        let grid = crate::funclib::verification_grid(self.alpha.domain_cap(), DEFAULT_GRID_POINTS);
        let mut values = Vec::with_capacity(grid.len());
        for &s in &grid {
            values.push(self.alpha.eval(s)?);
        }
        let mins: Vec<f64> = (0..grid.len())
            .map(|i| {
                if i + 1 < grid.len() {
                    values[i].min(values[i + 1])
                } else {
                    values[i]
                }
            })
            .collect();
        let grid_arc = std::sync::Arc::new((grid, mins));
        let label = format!("minorant({})", self.alpha.label());
        let cap = self.alpha.domain_cap();
        let g = grid_arc;
        Ok(ScalarGain::from_fn_result(
            &label,
            move |s| {
                let (xs, ys) = &*g;
                let idx = xs.partition_point(|&x| x <= s).saturating_sub(1);
                Ok(ys[idx.min(ys.len() - 1)])
            },
            GainKind::PositiveDefinite,
            cap,
        ))
    }
}

/// RK4 on `w' = -alpha(w) + v(t) + extra`, clamped at zero from below (the
/// comparison state is nonnegative analytically; clamping removes integrator
/// undershoot).
fn solve_scalar_flow(
    alpha: &ScalarGain,
    v: &InputSignal,
    y0: f64,
    dt: f64,
    horizon: f64,
    extra: f64,
) -> Result<Vec<f64>> {
    let steps = (horizon / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut w = y0.max(0.0);
    out.push(w);
    let mut vbuf = [0.0];
    for step in 0..steps {
        let t = step as f64 * dt;
        v.write_value(t, &mut vbuf);
        let forcing = vbuf[0] + extra;
        let f = |w: f64| -> Result<f64> { Ok(-alpha.eval(w.max(0.0))? + forcing) };
        let k1 = f(w)?;
        let k2 = f(w + 0.5 * dt * k1)?;
        let k3 = f(w + 0.5 * dt * k2)?;
        let k4 = f(w + dt * k3)?;
        w += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        w = w.max(0.0);
        out.push(w);
    }
    Ok(out)
}

/// Solve the comparison problem on its grid.
pub fn solve_comparison(inst: &ComparisonInstance) -> Result<Vec<f64>> {
    let alpha = inst.effective_alpha()?;
    solve_scalar_flow(&alpha, &inst.v, inst.y0, inst.dt, inst.horizon, 0.0)
}

/// Solve the `+1/n`-perturbed comparison problem; its solution dominates
/// the unperturbed one pointwise.
pub fn solve_perturbed(inst: &ComparisonInstance, n: u32) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::argument("perturbation index must be >= 1"));
    }
    let alpha = inst.effective_alpha()?;
    solve_scalar_flow(
        &alpha,
        &inst.v,
        inst.y0,
        inst.dt,
        inst.horizon,
        1.0 / n as f64,
    )
}

/// Check `y(t) <= w(t)` pointwise on the common grid, where `w` solves the
/// comparison problem. The caller certifies that `y` satisfies the integral
/// inequality feeding the comparison principle (e.g. it is `V` along a
/// trajectory of a passing certificate). The trace may start below the
/// instance's initial value: solutions are ordered in the initial
/// condition, so dominance from a higher start is only easier.
pub fn verify_dominance(y_trace: &[f64], inst: &ComparisonInstance) -> Result<CertificateReport> {
    let w = solve_comparison(inst)?;
    if y_trace.len() != w.len() {
        return Err(Error::argument(format!(
            "trace has {} samples, comparison grid has {}",
            y_trace.len(),
            w.len()
        )));
    }
    if y_trace[0] > inst.y0 + 1e-9 {
        return Err(Error::argument(format!(
            "trace starts at {}, above the instance's initial value {}",
            y_trace[0], inst.y0
        )));
    }
    let mut tracker = MarginTracker::new();
    tracker.samples = 1;
    for (k, (&y, &wk)) in y_trace.iter().zip(&w).enumerate() {
        let t = k as f64 * inst.dt;
        tracker.observe(y - wk, || Witness {
            xi: vec![inst.y0],
            input: Some(inst.v.clone()),
            time: t,
            lhs: y,
            rhs: wk,
        });
    }
    Ok(tracker.into_report("comparison_dominance", Tolerances::for_dt(inst.dt), false))
}

/// Tabulate the flow of `w' = -speed * alpha(w)` from each size-grid value
/// and wrap it as a KL candidate. The time grid is extended past the
/// requested horizon until the checked size slices have decayed, so the
/// KL decay clause can be certified on the table itself.
///
/// The rate is sampled onto a dense interpolation table before flowing;
/// the mandatory gate ([`verify_kl_bound`]) checks the finished candidate
/// against exact-rate instances, so interpolation slack cannot leak into a
/// final verdict.
pub fn kl_bound_with_speed(
    alpha: &ScalarGain,
    s_grid: &[f64],
    t_grid: &[f64],
    speed: f64,
) -> Result<KLFunction> {
    if !(speed > 0.0 && speed <= 1.0) {
        return Err(Error::argument("flow speed must lie in (0, 1]"));
    }
    let mut s_knots: Vec<f64> = s_grid.to_vec();
    if s_knots.iter().any(|&s| s < 0.0) {
        return Err(Error::argument("size grid must be nonnegative"));
    }
    let s_req_max = s_knots.iter().copied().fold(0.0, f64::max);
    if !(s_req_max > 0.0) {
        return Err(Error::argument(
            "size grid needs at least one positive value",
        ));
    }
    // refine internally: linear interpolation between size knots reads the
    // flow low wherever it is concave in the start value, so the knots must
    // be dense enough for that slack to stay inside the gate tolerance
    s_knots.extend(crate::funclib::verification_grid(s_req_max, S_REFINEMENT));
    s_knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s_knots.dedup_by(|a, b| *a - *b <= 1e-12 * b.abs().max(1e-300));
    if s_knots.first().copied() != Some(0.0) {
        s_knots.insert(0, 0.0);
    }
    let mut t_knots: Vec<f64> = t_grid.to_vec();
    t_knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    t_knots.dedup();
    if t_knots.first().copied() != Some(0.0) {
        t_knots.insert(0, 0.0);
    }
    if t_knots.len() < 2 {
        return Err(Error::argument(
            "time grid needs at least one positive value",
        ));
    }

    let s_max = *s_knots.last().unwrap();
    let rate = alpha.tabulated(ALPHA_TABLE_POINTS, s_max * 1.000001)?;

    // advance every row knot to knot; extend until the decay-checked rows
    // (sizes >= 0.2 * s_max) fall below half the decay fraction
    let decay_target = 0.5 * crate::funclib::DECAY_FRACTION;
    let t_req_max = *t_knots.last().unwrap();
    let mut ext_step = (t_req_max / 4.0).max(1.0);
    let mut w_rows: Vec<f64> = s_knots.clone();
    let mut values: Vec<Vec<f64>> = s_knots.iter().map(|&s| vec![s]).collect();
    let mut knots_done = vec![t_knots[0]];
    let mut pending: Vec<f64> = t_knots[1..].to_vec();
    loop {
        let next_t = match pending.first() {
            Some(&t) => t,
            None => {
                let decayed = s_knots
                    .iter()
                    .zip(&w_rows)
                    .filter(|(&s, _)| s >= 0.2 * s_max && s > 0.0)
                    .all(|(&s, &w)| w <= decay_target * s);
                let t_now = *knots_done.last().unwrap();
                if decayed || t_now >= FLOW_T_HARD {
                    break;
                }
                let t = t_now + ext_step;
                ext_step *= 1.5;
                t
            }
        };
        if !pending.is_empty() {
            pending.remove(0);
        }
        let t_prev = *knots_done.last().unwrap();
        let span = next_t - t_prev;
        let n_steps = (span / FLOW_DT).ceil().clamp(1.0, FLOW_SEGMENT_STEPS);
        let h = span / n_steps;
        let advanced: Result<Vec<f64>> = w_rows
            .par_iter()
            .map(|&w0| {
                let mut w = w0;
                for _ in 0..n_steps as usize {
                    let f = |w: f64| -> Result<f64> { Ok(-speed * rate.eval(w.max(0.0))?) };
                    let k1 = f(w)?;
                    let k2 = f(w + 0.5 * h * k1)?;
                    let k3 = f(w + 0.5 * h * k2)?;
                    let k4 = f(w + h * k3)?;
                    w += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                    w = w.max(0.0);
                }
                Ok(w)
            })
            .collect();
        w_rows = advanced?;
        knots_done.push(next_t);
        for (row, &w) in values.iter_mut().zip(&w_rows) {
            row.push(w);
        }
    }

    // bake in the vanishing strictness term
    for (i, row) in values.iter_mut().enumerate() {
        let s = s_knots[i];
        for (j, v) in row.iter_mut().enumerate() {
            *v += KL_STRICTNESS * s / (1.0 + knots_done[j]);
        }
    }
    let table = Table2D::new(s_knots, knots_done, values)?;
    let beta = KLFunction::from_table(&format!("flow({}, speed {speed})", alpha.label()), table);
    beta.require_kl(DEFAULT_GRID_POINTS)?;
    Ok(beta)
}

/// The half-speed-flow KL candidate.
pub fn kl_bound(alpha: &ScalarGain, s_grid: &[f64], t_grid: &[f64]) -> Result<KLFunction> {
    kl_bound_with_speed(alpha, s_grid, t_grid, 0.5)
}

/// Gate a KL candidate: on randomized comparison instances (solved with the
/// exact rate), check `w(t) <= beta(w(0), t) + 2 * int_0^t v`. Candidates
/// are only trusted downstream after this passes.
pub fn verify_kl_bound(
    beta_candidate: &KLFunction,
    alpha: &ScalarGain,
    random_instances: usize,
    seed: u64,
    s_max: f64,
    horizon: f64,
    dt: f64,
) -> Result<CertificateReport> {
    let mut rng = sampling::rng_from_seed(seed);
    let mut instances = Vec::with_capacity(random_instances);
    for i in 0..random_instances {
        use rand::Rng;
        let y0 = match i {
            0 => 0.0,
            1 => s_max,
            _ => rng.gen::<f64>() * s_max,
        };
        let v = match i % 3 {
            0 => InputSignal::zero(1, horizon),
            1 => InputSignal::constant(vec![rng.gen::<f64>() * 0.5], horizon),
            _ => {
                let segments = 4;
                let seg = horizon / segments as f64;
                let bps: Vec<f64> = (0..segments).map(|k| k as f64 * seg).collect();
                let vals: Vec<Vec<f64>> = (0..segments)
                    .map(|_| vec![rng.gen::<f64>() * 0.8])
                    .collect();
                InputSignal::new(bps, vals, horizon)?
            }
        };
        instances.push(ComparisonInstance::new(alpha.clone(), v, y0, horizon, dt)?);
    }
    let mut tracker = MarginTracker::new();
    for inst in &instances {
        let w = solve_comparison(inst)?;
        let mut vbuf = [0.0];
        let mut v_int = 0.0;
        for (k, &wk) in w.iter().enumerate() {
            let t = k as f64 * dt;
            if k > 0 {
                inst.v.write_value(t - dt, &mut vbuf);
                v_int += dt * vbuf[0];
            }
            let rhs = beta_candidate.eval(w[0], t)? + 2.0 * v_int;
            tracker.observe(wk - rhs, || Witness {
                xi: vec![inst.y0],
                input: Some(inst.v.clone()),
                time: t,
                lhs: wk,
                rhs,
            });
        }
        tracker.samples += 1;
    }
    let mut report = tracker.into_report("kl_bound_gate", Tolerances::for_dt(dt), false);
    report.seed = Some(seed);
    Ok(report)
}

/// The data produced by the sufficiency pipeline.
#[derive(Debug, Clone)]
pub struct SufficiencyBound {
    pub rho_tilde: ScalarGain,
    pub beta_out: KLFunction,
    pub doubled_sigma1: ScalarGain,
    pub doubled_sigma2: ScalarGain,
    /// Flow speed that passed the KL gate (1/2, then slower on retry).
    pub flow_speed: f64,
}

impl SufficiencyBound {
    /// Assemble trajectory gains: `alpha = alpha_lower`,
    /// `beta(s, t) = beta_out(alpha_upper(s), t)`, doubled sigmas as the
    /// integral gains.
    pub fn to_iioss_gains(
        &self,
        alpha_lower: &ScalarGain,
        alpha_upper: &ScalarGain,
    ) -> Result<crate::bounds::IIOSSGains> {
        let beta_inner = self.beta_out.clone();
        let upper = alpha_upper.clone();
        let s_cap = alpha_upper.invert(self.beta_out.s_cap(), DEFAULT_INVERT_TOL)?;
        let beta = KLFunction::from_fn_result(
            &format!("{}(alpha_upper(s), t)", self.beta_out.label()),
            move |s, t| beta_inner.eval(upper.eval(s)?.min(beta_inner.s_cap()), t),
            s_cap,
            self.beta_out.t_cap(),
        );
        Ok(crate::bounds::IIOSSGains {
            alpha: alpha_lower.clone(),
            beta,
            gamma1: self.doubled_sigma1.clone(),
            gamma2: self.doubled_sigma2.clone(),
        })
    }
}

fn doubled(gain: &ScalarGain, label: &str) -> ScalarGain {
    let inner = gain.clone();
    ScalarGain::from_fn_result(
        label,
        move |s| Ok(2.0 * inner.eval(s)?),
        gain.kind(),
        gain.domain_cap(),
    )
}

/// Turn a passing Lyapunov certificate into a trajectory bound and verify
/// it end to end on the samples:
///
/// 1. factor the decrease rate into a K∞ and an L part,
/// 2. compose the comparison rate through the sandwich inversions,
/// 3. build and gate a KL decay candidate from the slowed flow,
/// 4. check `alpha_lower(|x(t)|) <= beta(alpha_upper(|xi|), t) +
///    int 2 sigma1(|y|) + 2 sigma2(|u|)` on every sampled trajectory.
pub fn sufficiency_pipeline(
    cand: &LyapunovCandidate,
    sys: &ControlSystem,
    samples: &[(Vec<f64>, InputSignal)],
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<(SufficiencyBound, CertificateReport)> {
    if samples.is_empty() {
        return Err(Error::argument("at least one (xi, u) sample is required"));
    }
    // preconditions: the certificate must pass on these samples
    let radius = samples
        .iter()
        .map(|(xi, _)| norm(xi))
        .fold(0.0, f64::max)
        .max(1.0);
    let sandwich = check_sandwich(cand, radius, 2000)?;
    if sandwich.verdict != Verdict::Holds {
        return Err(Error::argument(format!(
            "candidate fails the sandwich bound (margin {}); run check-lyapunov first",
            sandwich.margin
        )));
    }
    let decrease = check_decrease_integral(cand, sys, samples, dt, horizon)?;
    if decrease.verdict != Verdict::Holds {
        return Err(Error::argument(format!(
            "candidate fails the integral decrease (margin {}); run check-lyapunov first",
            decrease.margin
        )));
    }

    let factorization = crate::funclib::factorize_positive_definite(&cand.kappa)?;
    let rho1 = factorization.rho1.clone();
    let rho2 = factorization.rho2.clone();
    let alpha_upper = cand.alpha_upper.clone();
    let alpha_lower = cand.alpha_lower.clone();

    let s_kl_max = samples
        .iter()
        .map(|(xi, _)| alpha_upper.eval(norm(xi)))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max)
        .max(1e-6)
        * 1.01;

    let rho_tilde = {
        let up = alpha_upper.clone();
        let lo = alpha_lower.clone();
        let r1 = rho1.clone();
        let r2 = rho2.clone();
        ScalarGain::from_fn_result(
            "rho1(alpha_upper^-1(s)) * rho2(alpha_lower^-1(s))",
            move |s| {
                let a = up.invert(s, DEFAULT_INVERT_TOL)?;
                let b = lo.invert(s, DEFAULT_INVERT_TOL)?;
                Ok(r1.eval(a)? * r2.eval(b)?)
            },
            GainKind::PositiveDefinite,
            s_kl_max,
        )
    };

    // KL candidate from the slowed flow; slow down further if the gate
    // rejects one
    let s_grid: Vec<f64> = (0..=128).map(|i| s_kl_max * i as f64 / 128.0).collect();
    let t_grid: Vec<f64> = (0..=64).map(|i| horizon * i as f64 / 64.0).collect();
    let mut chosen: Option<(KLFunction, f64)> = None;
    let mut gate_note = String::new();
    for speed in [0.5, 0.25, 0.125] {
        let beta = kl_bound_with_speed(&rho_tilde, &s_grid, &t_grid, speed)?;
        let gate = verify_kl_bound(&beta, &rho_tilde, 50, seed, s_kl_max, horizon, 1e-2)?;
        if gate.verdict == Verdict::Holds {
            gate_note = format!(
                "KL gate passed at flow speed {speed} with margin {}",
                gate.margin
            );
            chosen = Some((beta, speed));
            break;
        }
        gate_note = format!(
            "KL gate rejected flow speed {speed} (margin {})",
            gate.margin
        );
    }
    let (beta_out, flow_speed) = chosen.ok_or_else(|| Error::Horizon {
        what: "KL bound construction".into(),
        detail: format!("no flow speed passed the gate; last: {gate_note}"),
    })?;

    let bound = SufficiencyBound {
        rho_tilde,
        beta_out: beta_out.clone(),
        doubled_sigma1: doubled(&cand.sigma1, "2*sigma1"),
        doubled_sigma2: doubled(&cand.sigma2, "2*sigma2"),
        flow_speed,
    };

    // final trajectory bound on every sample
    struct Outcome {
        margin: f64,
        time: f64,
        lhs: f64,
        rhs: f64,
        diverged: bool,
    }
    let outcomes: Result<Vec<Outcome>> = samples
        .par_iter()
        .map(|(xi, u)| {
            let traj = integrate(sys, xi, u, dt, horizon)?;
            let beta_start = alpha_upper.eval(norm(xi))?.min(beta_out.s_cap());
            let mut best = Outcome {
                margin: f64::MIN,
                time: 0.0,
                lhs: 0.0,
                rhs: 0.0,
                diverged: traj.diverged_at.is_some(),
            };
            let mut acc = 0.0;
            let mut prev_s1 = cand.sigma1.eval(traj.output_norm(0))?;
            for k in 0..traj.len() {
                if k > 0 {
                    let s1 = cand.sigma1.eval(traj.output_norm(k))?;
                    acc += 0.5 * dt * 2.0 * (prev_s1 + s1);
                    prev_s1 = s1;
                    acc += dt * 2.0 * cand.sigma2.eval(traj.input_norm(k - 1))?;
                }
                let t = traj.times[k];
                let lhs = alpha_lower.eval(traj.state_norm(k))?;
                let rhs = beta_out.eval(beta_start, t)? + acc;
                if lhs - rhs > best.margin {
                    best.margin = lhs - rhs;
                    best.time = t;
                    best.lhs = lhs;
                    best.rhs = rhs;
                }
            }
            Ok(best)
        })
        .collect();
    let outcomes = outcomes?;
    let mut tracker = MarginTracker::new();
    let mut any_diverged = false;
    for ((xi, u), out) in samples.iter().zip(&outcomes) {
        tracker.samples += 1;
        any_diverged |= out.diverged;
        tracker.observe(out.margin, || Witness {
            xi: xi.clone(),
            input: Some(u.clone()),
            time: out.time,
            lhs: out.lhs,
            rhs: out.rhs,
        });
    }
    let mut report = tracker.into_report("sufficiency_bound", Tolerances::for_dt(dt), false);
    if any_diverged && report.verdict != Verdict::Violated {
        report.verdict = Verdict::Violated;
        report.notes.push("a trajectory diverged".into());
    }
    report.seed = Some(seed);
    report.notes.push(gate_note);
    Ok((bound, report))
}
