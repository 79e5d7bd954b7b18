//! Trajectory-bound checks for the iIOSS property, randomized
//! falsification, and the norm observer.
//!
//! The bound under test is
//! `alpha(|x(t)|) <= beta(|xi|, t) + int_0^t gamma1(|y|) + gamma2(|u|) ds`,
//! evaluated on every grid time of every sampled `(xi, u)` pair. The
//! alternate form moves the input integral to the whole horizon; with
//! compactly supported piecewise-constant inputs the truncation is exact.
//!
//! Quadrature conventions, shared by every check in this module so that
//! rearranged forms of the same inequality produce bit-identical margins:
//! trapezoid for the output term (the output varies continuously), exact
//! left rule for the input term (inputs are piecewise constant on the grid).

use crate::error::{Error, Result};
use crate::funclib::{KLFunction, ScalarGain, DEFAULT_GRID_POINTS};
use crate::report::{CertificateReport, MarginTracker, Tolerances, Verdict, Witness};
use crate::sampling::{self, InputFamily};
use crate::sim::{input_energy, integrate, norm, ControlSystem, InputSignal, Trajectory};
use rayon::prelude::*;

/// The four comparison functions of an iIOSS bound.
///
/// `gamma1` and `gamma2` may be identically zero (a bound that does not use
/// that channel); otherwise they must verify as class K.
#[derive(Debug, Clone)]
pub struct IIOSSGains {
    pub alpha: ScalarGain,
    pub beta: KLFunction,
    pub gamma1: ScalarGain,
    pub gamma2: ScalarGain,
}

impl IIOSSGains {
    pub fn verify(&self, grid_points: usize) -> Result<()> {
        self.alpha.require_kind(grid_points)?;
        self.beta.require_kl(grid_points.min(2000))?;
        require_k_or_zero(&self.gamma1, grid_points)?;
        require_k_or_zero(&self.gamma2, grid_points)?;
        Ok(())
    }
}

pub(crate) fn require_k_or_zero(gain: &ScalarGain, grid_points: usize) -> Result<()> {
    if gain.is_zero_gain() {
        return Ok(());
    }
    gain.require_kind(grid_points)
}

/// The scalar norm-observer state `p` with `p' = gamma1(|y|) + gamma2(|u|)`,
/// `p(0) = 0`, on the trajectory grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NormObserverState {
    pub times: Vec<f64>,
    pub p: Vec<f64>,
}

/// Cumulative `int_0^{t_k}` of the output and input gain terms along a
/// trajectory: trapezoid in the output term, left rule in the input term.
pub(crate) fn cumulative_gain_integrals(
    traj: &Trajectory,
    gamma1: &ScalarGain,
    gamma2: &ScalarGain,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = traj.len();
    let dt = traj.dt;
    let mut g1 = Vec::with_capacity(len);
    let mut g2 = Vec::with_capacity(len);
    let mut g1_prev = gamma1.eval(traj.output_norm(0))?;
    let mut acc1 = 0.0;
    let mut acc2 = 0.0;
    g1.push(0.0);
    g2.push(0.0);
    for k in 1..len {
        let g1_here = gamma1.eval(traj.output_norm(k))?;
        acc1 += 0.5 * dt * (g1_prev + g1_here);
        g1_prev = g1_here;
        acc2 += dt * gamma2.eval(traj.input_norm(k - 1))?;
        g1.push(acc1);
        g2.push(acc2);
    }
    Ok((g1, g2))
}

struct PairOutcome {
    margin: f64,
    time: f64,
    lhs: f64,
    rhs: f64,
    diverged: Option<f64>,
}

fn eval_pair(
    sys: &ControlSystem,
    gains: &IIOSSGains,
    xi: &[f64],
    u: &InputSignal,
    dt: f64,
    horizon: f64,
    whole_horizon_input_integral: bool,
) -> Result<PairOutcome> {
    let traj = integrate(sys, xi, u, dt, horizon)?;
    let xi_norm = norm(xi);
    let (g1, g2) = cumulative_gain_integrals(&traj, &gains.gamma1, &gains.gamma2)?;
    let g2_total = if whole_horizon_input_integral {
        Some(input_energy(u, &gains.gamma2)?)
    } else {
        None
    };
    let mut best = PairOutcome {
        margin: f64::MIN,
        time: 0.0,
        lhs: 0.0,
        rhs: 0.0,
        diverged: traj.diverged_at,
    };
    for k in 0..traj.len() {
        let t = traj.times[k];
        let lhs = gains.alpha.eval(traj.state_norm(k))?;
        let input_term = match g2_total {
            Some(total) => total,
            None => g2[k],
        };
        let rhs = gains.beta.eval(xi_norm, t)? + g1[k] + input_term;
        let margin = lhs - rhs;
        if margin > best.margin {
            best.margin = margin;
            best.time = t;
            best.lhs = lhs;
            best.rhs = rhs;
        }
    }
    Ok(best)
}

fn verdict_with_divergence(
    check: &str,
    tracker: MarginTracker,
    tolerances: Tolerances,
    searched: bool,
    any_diverged: bool,
) -> CertificateReport {
    let mut report = tracker.into_report(check, tolerances, searched);
    if any_diverged && report.verdict != Verdict::Violated {
        report.verdict = Verdict::Violated;
        report.notes.push(
            "a trajectory diverged: the bound cannot hold (forward completeness fails)".into(),
        );
    } else if any_diverged {
        report.notes.push("at least one trajectory diverged".into());
    }
    report
}

fn run_bound_check(
    check: &str,
    sys: &ControlSystem,
    gains: &IIOSSGains,
    samples: &[(Vec<f64>, InputSignal)],
    dt: f64,
    horizon: f64,
    whole_horizon_input_integral: bool,
) -> Result<CertificateReport> {
    if samples.is_empty() {
        return Err(Error::argument("at least one (xi, u) sample is required"));
    }
    gains.verify(DEFAULT_GRID_POINTS)?;
    let outcomes: Result<Vec<PairOutcome>> = samples
        .par_iter()
        .map(|(xi, u)| eval_pair(sys, gains, xi, u, dt, horizon, whole_horizon_input_integral))
        .collect();
    let outcomes = outcomes?;
    let mut tracker = MarginTracker::new();
    let mut any_diverged = false;
    for ((xi, u), out) in samples.iter().zip(&outcomes) {
        tracker.samples += 1;
        any_diverged |= out.diverged.is_some();
        tracker.observe(out.margin, || Witness {
            xi: xi.clone(),
            input: Some(u.clone()),
            time: out.time,
            lhs: out.lhs,
            rhs: out.rhs,
        });
    }
    let mut report =
        verdict_with_divergence(check, tracker, Tolerances::for_dt(dt), false, any_diverged);
    if whole_horizon_input_integral {
        report.notes.push(
            "input integral taken over the whole horizon: this right-hand side dominates the running form pointwise"
                .into(),
        );
    }
    Ok(report)
}

/// Check the running-integral form of the iIOSS bound on every sample.
pub fn check_iioss(
    sys: &ControlSystem,
    gains: &IIOSSGains,
    samples: &[(Vec<f64>, InputSignal)],
    dt: f64,
    horizon: f64,
) -> Result<CertificateReport> {
    run_bound_check("check_iioss", sys, gains, samples, dt, horizon, false)
}

/// Check the equivalent form with the input integral over the whole run.
/// Inputs here have compact support, so truncating the infinite integral at
/// the horizon is exact.
pub fn check_iioss_alternate(
    sys: &ControlSystem,
    gains: &IIOSSGains,
    samples: &[(Vec<f64>, InputSignal)],
    dt: f64,
    horizon: f64,
) -> Result<CertificateReport> {
    run_bound_check(
        "check_iioss_alternate",
        sys,
        gains,
        samples,
        dt,
        horizon,
        true,
    )
}

/// Integrate the norm observer alongside the plant and verify
/// `alpha(|x(t)|) <= beta(|xi|, t) + p(t)` at every grid time.
pub fn run_norm_observer(
    sys: &ControlSystem,
    gains: &IIOSSGains,
    xi: &[f64],
    u: &InputSignal,
    dt: f64,
    horizon: f64,
) -> Result<(NormObserverState, CertificateReport)> {
    gains.verify(DEFAULT_GRID_POINTS)?;
    let traj = integrate(sys, xi, u, dt, horizon)?;
    let xi_norm = norm(xi);
    let (g1, g2) = cumulative_gain_integrals(&traj, &gains.gamma1, &gains.gamma2)?;
    let p: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
    let mut tracker = MarginTracker::new();
    tracker.samples = 1;
    #[allow(clippy::needless_range_loop)]
    for k in 0..traj.len() {
        let t = traj.times[k];
        let lhs = gains.alpha.eval(traj.state_norm(k))?;
        let rhs = gains.beta.eval(xi_norm, t)? + p[k];
        tracker.observe(lhs - rhs, || Witness {
            xi: xi.to_vec(),
            input: Some(u.clone()),
            time: t,
            lhs,
            rhs,
        });
    }
    let report = verdict_with_divergence(
        "norm_observer",
        tracker,
        Tolerances::for_dt(dt),
        false,
        traj.diverged_at.is_some(),
    );
    let state = NormObserverState {
        times: traj.times.clone(),
        p,
    };
    Ok((state, report))
}

/// Knobs for the randomized falsifier.
#[derive(Debug, Clone)]
pub struct FalsifyOptions {
    pub budget: usize,
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
    pub xi_radius: f64,
    pub amp_max: f64,
    /// When set, every candidate input is scaled so its `gamma2` energy
    /// stays within this budget.
    pub energy_cap: Option<f64>,
    pub segments: usize,
}

impl Default for FalsifyOptions {
    fn default() -> Self {
        FalsifyOptions {
            budget: 1000,
            seed: 0,
            dt: 1e-3,
            horizon: 1.0,
            xi_radius: 2.0,
            amp_max: 100.0,
            energy_cap: None,
            segments: 8,
        }
    }
}

const FALSIFY_CHUNK: usize = 64;

/// Scale a signal down until its `gamma` energy fits the budget. The scale
/// acts on amplitudes, so monotonicity of K gains makes bisection exact
/// enough after 60 halvings.
fn scale_to_energy_budget(u: &InputSignal, gamma: &ScalarGain, cap: f64) -> Result<InputSignal> {
    let energy = input_energy(u, gamma)?;
    if energy <= cap {
        return Ok(u.clone());
    }
    let scaled = |c: f64| -> InputSignal {
        let values = u
            .values()
            .iter()
            .map(|v| v.iter().map(|x| x * c).collect())
            .collect();
        InputSignal::new(u.breakpoints().to_vec(), values, u.horizon())
            .expect("scaling preserves signal validity")
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if input_energy(&scaled(mid), gamma)? <= cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(scaled(lo))
}

/// Deterministic candidates evaluated before any randomized ones, for every
/// seed: the rest state, sign-symmetric corner states with no input, an
/// impulse ladder, and a budget-fitting constant.
fn prelude_candidates(n: usize, m: usize, opts: &FalsifyOptions) -> Vec<(Vec<f64>, InputSignal)> {
    let mut out = Vec::new();
    let zero_u = InputSignal::zero(m, opts.horizon);
    out.push((vec![0.0; n], zero_u.clone()));
    let corner: Vec<f64> = vec![opts.xi_radius / (n as f64).sqrt(); n];
    out.push((corner.clone(), zero_u.clone()));
    out.push((corner.iter().map(|v| -v).collect(), zero_u.clone()));
    if m > 0 {
        let mut e1 = vec![0.0; m];
        e1[0] = 1.0;
        for k in [1.0, 2.0, 5.0, 10.0, 100.0, 1000.0] {
            if k * opts.dt > 1.0 + 1e-12 {
                // support would collapse below one step and overshoot a budget
                continue;
            }
            out.push((
                vec![0.0; n],
                sampling::snapped_impulse(&e1, k, opts.dt, opts.horizon),
            ));
        }
        let amp = opts.amp_max / 10.0;
        out.push((
            vec![0.0; n],
            InputSignal::constant(e1.iter().map(|v| v * amp).collect(), opts.horizon),
        ));
    }
    out
}

/// Randomized search for a violation of the iIOSS bound. Candidates come
/// from structured families (constants, impulses, random piecewise) plus
/// random initial states in a ball. Deterministic given the seed; the best
/// witness is returned even when no violation is found. Reports never claim
/// `holds`: a search can only exhaust its budget.
pub fn falsify(
    sys: &ControlSystem,
    gains: &IIOSSGains,
    opts: &FalsifyOptions,
) -> Result<CertificateReport> {
    if opts.budget < 1 {
        return Err(Error::argument("falsification budget must be >= 1"));
    }
    gains.verify(DEFAULT_GRID_POINTS)?;
    let (n, m, _) = sys.dims();
    let mut rng = sampling::rng_from_seed(opts.seed);
    let families = [
        InputFamily::Impulse,
        InputFamily::Constant,
        InputFamily::Piecewise,
    ];

    let mut candidates = prelude_candidates(n, m, opts);
    candidates.truncate(opts.budget);
    let mut i = 0usize;
    while candidates.len() < opts.budget {
        let xi = sampling::sample_ball(&mut rng, n, opts.xi_radius);
        let u = sampling::sample_input(
            &mut rng,
            families[i % 3],
            m,
            opts.horizon,
            opts.dt,
            opts.amp_max,
            opts.segments,
        );
        candidates.push((xi, u));
        i += 1;
    }
    if let Some(cap) = opts.energy_cap {
        for (_, u) in candidates.iter_mut() {
            *u = scale_to_energy_budget(u, &gains.gamma2, cap)?;
        }
    }

    let tolerances = Tolerances::for_dt(opts.dt);
    let mut tracker = MarginTracker::new();
    let mut any_diverged = false;
    let mut skipped = 0usize;
    'chunks: for chunk in candidates.chunks(FALSIFY_CHUNK) {
        let outcomes: Vec<Result<PairOutcome>> = chunk
            .par_iter()
            .map(|(xi, u)| eval_pair(sys, gains, xi, u, opts.dt, opts.horizon, false))
            .collect();
        for ((xi, u), outcome) in chunk.iter().zip(outcomes) {
            tracker.samples += 1;
            match outcome {
                Ok(out) => {
                    any_diverged |= out.diverged.is_some();
                    tracker.observe(out.margin, || Witness {
                        xi: xi.clone(),
                        input: Some(u.clone()),
                        time: out.time,
                        lhs: out.lhs,
                        rhs: out.rhs,
                    });
                }
                Err(Error::Integration { .. }) => {
                    // a candidate that overflows machine range proves nothing
                    // by itself; skip it and keep searching
                    skipped += 1;
                }
                Err(other) => return Err(other),
            }
        }
        if tracker.margin() > tolerances.total() || any_diverged {
            break 'chunks;
        }
    }

    let mut report = verdict_with_divergence("falsify", tracker, tolerances, true, any_diverged);
    report.seed = Some(opts.seed);
    if skipped > 0 {
        report.notes.push(format!(
            "{skipped} candidates skipped after arithmetic overflow"
        ));
    }
    if report.verdict == Verdict::NoViolationFound {
        report.notes.push(format!(
            "no violation found at budget {}",
            report.samples_evaluated
        ));
    }
    Ok(report)
}
