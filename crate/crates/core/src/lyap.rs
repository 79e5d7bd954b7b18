//! Lyapunov certificate checks: the two-sided sandwich bound, the pointwise
//! differential decrease, the trajectory integral decrease, and the
//! cross-check that the two decrease routes agree.
//!
//! For nonsmooth candidates the integral form is the authoritative check:
//! subdifferentials are not computable from a black-box function, so the
//! differential check marks kink-adjacent points inconclusive instead of
//! violated.

use crate::bounds::require_k_or_zero;
use crate::dsl::{default_fd_step, EvalContext, Expression};
use crate::error::{Error, Result};
use crate::funclib::{GainKind, ScalarGain, DEFAULT_GRID_POINTS};
use crate::report::{
    CertificateReport, ComparisonReport, MarginTracker, Quantity, Tolerances, Verdict, Witness,
};
use crate::sampling::halton_cube;
use crate::sim::{integrate, norm, ControlSystem, InputSignal};
use rayon::prelude::*;

/// Default sample box half-width for state and input points.
pub const DEFAULT_BOX_RADIUS: f64 = 10.0;
/// Default number of quasi-random sample points.
pub const DEFAULT_BOX_SAMPLES: usize = 10_000;
/// A finite-difference gradient whose half-step refinement moves by more
/// than this relative amount marks the point kink-adjacent.
const KINK_REL_TOL: f64 = 1e-3;

/// A candidate `V` with its five comparison functions.
#[derive(Debug, Clone)]
pub struct LyapunovCandidate {
    v: Expression,
    grad_v: Option<Vec<Expression>>,
    pub alpha_lower: ScalarGain,
    pub alpha_upper: ScalarGain,
    pub sigma1: ScalarGain,
    pub sigma2: ScalarGain,
    pub kappa: ScalarGain,
    ioss_flavor: bool,
}

impl LyapunovCandidate {
    pub fn new(
        v: Expression,
        grad_v: Option<Vec<Expression>>,
        alpha_lower: ScalarGain,
        alpha_upper: ScalarGain,
        sigma1: ScalarGain,
        sigma2: ScalarGain,
        kappa: ScalarGain,
    ) -> Result<Self> {
        let use_ = v.var_use();
        if use_.inputs || use_.s || use_.t {
            return Err(Error::argument("V may only depend on the state"));
        }
        let n = v.scope().n_states;
        if let Some(grad) = &grad_v {
            if grad.len() != n {
                return Err(Error::argument(format!(
                    "gradient has {} entries for an {n}-dimensional state",
                    grad.len()
                )));
            }
            for g in grad {
                let gu = g.var_use();
                if gu.inputs || gu.s || gu.t {
                    return Err(Error::argument("grad V may only depend on the state"));
                }
            }
        }
        let v0 = v
            .eval(&EvalContext::state(&vec![0.0; n]))
            .map_err(|fault| Error::Evaluation {
                location: 0.0,
                fault,
            })?;
        if v0.abs() > 1e-12 {
            return Err(Error::argument(format!("V(0) = {v0}, expected 0")));
        }
        alpha_lower.require_kind(DEFAULT_GRID_POINTS)?;
        alpha_upper.require_kind(DEFAULT_GRID_POINTS)?;
        require_k_or_zero(&sigma1, DEFAULT_GRID_POINTS)?;
        require_k_or_zero(&sigma2, DEFAULT_GRID_POINTS)?;
        kappa.require_kind(DEFAULT_GRID_POINTS)?;
        let ioss_flavor = kappa
            .reinterpret(GainKind::Kinf)
            .verify_kind(DEFAULT_GRID_POINTS)
            .map(|r| r.passed)
            .unwrap_or(false);
        Ok(LyapunovCandidate {
            v,
            grad_v,
            alpha_lower,
            alpha_upper,
            sigma1,
            sigma2,
            kappa,
            ioss_flavor,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.v.scope().n_states
    }

    pub fn v(&self) -> &Expression {
        &self.v
    }

    pub fn has_gradient(&self) -> bool {
        self.grad_v.is_some()
    }

    /// The decrease rate additionally verifies as K∞, so the candidate also
    /// certifies the supremum-norm (IOSS-style) variant of the property.
    pub fn is_ioss_flavor(&self) -> bool {
        self.ioss_flavor
    }

    pub fn eval_v(&self, x: &[f64]) -> Result<f64> {
        self.v
            .eval(&EvalContext::state(x))
            .map_err(|fault| Error::Evaluation {
                location: norm(x),
                fault,
            })
    }

    /// Analytic gradient when supplied, otherwise central finite differences.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.grad_v {
            Some(grad) => {
                let ctx = EvalContext::state(x);
                grad.iter()
                    .map(|g| {
                        g.eval(&ctx).map_err(|fault| Error::Evaluation {
                            location: norm(x),
                            fault,
                        })
                    })
                    .collect()
            }
            None => self.v.fd_gradient(x, default_fd_step(x)),
        }
    }

    /// Finite-difference gradient plus a kink flag: true when halving the
    /// step moves some component by more than a relative tolerance.
    fn fd_gradient_with_kink_flag(&self, x: &[f64]) -> Result<(Vec<f64>, bool)> {
        let h = default_fd_step(x);
        let g1 = self.v.fd_gradient(x, h)?;
        let g2 = self.v.fd_gradient(x, 0.5 * h)?;
        let kinky = g1
            .iter()
            .zip(&g2)
            .any(|(a, b)| (a - b).abs() > KINK_REL_TOL * (1.0 + a.abs()));
        Ok((g2, kinky))
    }
}

fn note_ioss(report: &mut CertificateReport, cand: &LyapunovCandidate) {
    if cand.is_ioss_flavor() {
        report.notes.push(
            "decrease rate verifies as Kinf: candidate also certifies the supremum-norm variant"
                .into(),
        );
    }
}

/// Check `alpha_lower(|xi|) <= V(xi) <= alpha_upper(|xi|)` on quasi-random
/// points in the centered box of the given half-width, plus the origin.
pub fn check_sandwich(
    cand: &LyapunovCandidate,
    box_radius: f64,
    samples: usize,
) -> Result<CertificateReport> {
    let n = cand.state_dim();
    let mut points = vec![vec![0.0; n]];
    points.extend(halton_cube(samples.saturating_sub(1), n, box_radius));
    let mut lower = MarginTracker::new();
    let mut upper = MarginTracker::new();
    for x in &points {
        let r = norm(x);
        let v = cand.eval_v(x)?;
        let lo = cand.alpha_lower.eval(r)?;
        let hi = cand.alpha_upper.eval(r)?;
        lower.samples += 1;
        upper.samples += 1;
        lower.observe(lo - v, || Witness {
            xi: x.clone(),
            input: None,
            time: 0.0,
            lhs: lo,
            rhs: v,
        });
        upper.observe(v - hi, || Witness {
            xi: x.clone(),
            input: None,
            time: 0.0,
            lhs: v,
            rhs: hi,
        });
    }
    let tol = Tolerances::pointwise(crate::DEFAULT_ABS_TOL);
    let lower_margin = lower.margin();
    let upper_margin = upper.margin();
    let mut tracker = if lower_margin >= upper_margin {
        lower
    } else {
        upper
    };
    tracker.samples = points.len();
    let mut report = tracker.into_report("sandwich", tol, false);
    report.notes.push(format!(
        "worst lower-side margin {lower_margin:.6e}, worst upper-side margin {upper_margin:.6e}"
    ));
    note_ioss(&mut report, cand);
    Ok(report)
}

/// Pointwise differential decrease at `(xi, mu)` samples:
/// `grad V . f + kappa(|xi|) - sigma1(|h(xi)|) - sigma2(|mu|) <= 0`.
pub fn check_decrease_differential(
    cand: &LyapunovCandidate,
    sys: &ControlSystem,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<CertificateReport> {
    if samples.is_empty() {
        return Err(Error::argument(
            "at least one (state, input) sample is required",
        ));
    }
    let (n, m, p) = sys.dims();
    if cand.state_dim() != n {
        return Err(Error::argument(
            "candidate dimension does not match the system",
        ));
    }
    struct PointOutcome {
        margin: f64,
        lhs: f64,
        rhs: f64,
        inconclusive: bool,
    }
    let outcomes: Result<Vec<PointOutcome>> = samples
        .par_iter()
        .map(|(x, mu)| {
            if mu.len() != m {
                return Err(Error::argument("input sample dimension mismatch"));
            }
            let (grad, kinky) = if cand.has_gradient() {
                (cand.gradient(x)?, false)
            } else {
                cand.fd_gradient_with_kink_flag(x)?
            };
            let mut f = vec![0.0; n];
            sys.eval_dynamics(x, mu, &mut f)
                .map_err(|fault| Error::Evaluation {
                    location: norm(x),
                    fault,
                })?;
            let mut y = vec![0.0; p];
            sys.eval_output(x, &mut y)
                .map_err(|fault| Error::Evaluation {
                    location: norm(x),
                    fault,
                })?;
            let directional: f64 = grad.iter().zip(&f).map(|(g, fi)| g * fi).sum();
            let lhs = directional + cand.kappa.eval(norm(x))?;
            let rhs = cand.sigma1.eval(norm(&y))? + cand.sigma2.eval(norm(mu))?;
            Ok(PointOutcome {
                margin: lhs - rhs,
                lhs,
                rhs,
                inconclusive: kinky,
            })
        })
        .collect();
    let outcomes = outcomes?;
    let mut tracker = MarginTracker::new();
    let mut inconclusive = 0usize;
    for ((x, mu), out) in samples.iter().zip(&outcomes) {
        tracker.samples += 1;
        if out.inconclusive {
            inconclusive += 1;
            continue;
        }
        let mu = mu.clone();
        tracker.observe(out.margin, || Witness {
            xi: x.clone(),
            input: Some(InputSignal::constant(mu, 0.0)),
            time: 0.0,
            lhs: out.lhs,
            rhs: out.rhs,
        });
    }
    let mut report = tracker.into_report(
        "decrease_differential",
        Tolerances::pointwise(crate::DEFAULT_ABS_TOL),
        false,
    );
    if inconclusive == samples.len() {
        report.verdict = Verdict::Inconclusive;
    }
    if inconclusive > 0 {
        report.notes.push(format!(
            "{inconclusive} kink-adjacent points marked inconclusive (finite differences unstable); the integral check is authoritative there"
        ));
    }
    note_ioss(&mut report, cand);
    Ok(report)
}

/// Trajectory integral decrease: along each sampled `(xi, u)`,
/// `V(x(t2)) - V(x(t1)) <= int_{t1}^{t2} -kappa(|x|) + sigma1(|h|) + sigma2(|u|)`
/// for every grid pair `t1 <= t2`, checked in O(grid) per trajectory via the
/// running minimum of `V(x(t)) - I(t)`.
pub fn check_decrease_integral(
    cand: &LyapunovCandidate,
    sys: &ControlSystem,
    samples: &[(Vec<f64>, InputSignal)],
    dt: f64,
    horizon: f64,
) -> Result<CertificateReport> {
    if samples.is_empty() {
        return Err(Error::argument("at least one (xi, u) sample is required"));
    }
    struct TrajOutcome {
        margin: f64,
        t1: f64,
        t2: f64,
        lhs: f64,
        rhs: f64,
        diverged: bool,
    }
    let outcomes: Result<Vec<TrajOutcome>> = samples
        .par_iter()
        .map(|(xi, u)| {
            let traj = integrate(sys, xi, u, dt, horizon)?;
            // I(t): trapezoid for the state terms, exact left rule for the
            // piecewise-constant input term
            let len = traj.len();
            let mut d = Vec::with_capacity(len);
            let mut acc = 0.0;
            let mut prev_state_term =
                -cand.kappa.eval(traj.state_norm(0))? + cand.sigma1.eval(traj.output_norm(0))?;
            d.push(cand.eval_v(&traj.states[0])?);
            for k in 1..len {
                let state_term = -cand.kappa.eval(traj.state_norm(k))?
                    + cand.sigma1.eval(traj.output_norm(k))?;
                acc += 0.5 * dt * (prev_state_term + state_term);
                prev_state_term = state_term;
                acc += dt * cand.sigma2.eval(traj.input_norm(k - 1))?;
                d.push(cand.eval_v(&traj.states[k])? - acc);
            }
            let mut best = TrajOutcome {
                margin: f64::MIN,
                t1: 0.0,
                t2: 0.0,
                lhs: 0.0,
                rhs: 0.0,
                diverged: traj.diverged_at.is_some(),
            };
            let mut run_min = d[0];
            let mut run_min_t = traj.times[0];
            #[allow(clippy::needless_range_loop)]
            for k in 0..len {
                if d[k] < run_min {
                    run_min = d[k];
                    run_min_t = traj.times[k];
                }
                let margin = d[k] - run_min;
                if margin > best.margin {
                    best.margin = margin;
                    best.t1 = run_min_t;
                    best.t2 = traj.times[k];
                    best.lhs = d[k];
                    best.rhs = run_min;
                }
            }
            Ok(best)
        })
        .collect();
    let outcomes = outcomes?;
    let mut tracker = MarginTracker::new();
    let mut any_diverged = false;
    let mut worst_t1 = 0.0;
    for ((xi, u), out) in samples.iter().zip(&outcomes) {
        tracker.samples += 1;
        any_diverged |= out.diverged;
        let before = tracker.margin();
        tracker.observe(out.margin, || Witness {
            xi: xi.clone(),
            input: Some(u.clone()),
            time: out.t2,
            lhs: out.lhs,
            rhs: out.rhs,
        });
        if tracker.margin() > before {
            worst_t1 = out.t1;
        }
    }
    let mut report = tracker.into_report("decrease_integral", Tolerances::for_dt(dt), false);
    if any_diverged && report.verdict != Verdict::Violated {
        report.verdict = Verdict::Violated;
        report
            .notes
            .push("a trajectory diverged during the integral decrease check".into());
    }
    if report.witness.is_some() {
        report
            .notes
            .push(format!("witness segment starts at t1 = {worst_t1}"));
    }
    note_ioss(&mut report, cand);
    Ok(report)
}

/// Run the differential and integral decrease checks on common samples and
/// report whether their verdicts agree. Pointwise samples for the
/// differential route are drawn from the integral route's trajectories.
pub fn cross_check_prop26(
    cand: &LyapunovCandidate,
    sys: &ControlSystem,
    samples: &[(Vec<f64>, InputSignal)],
    dt: f64,
    horizon: f64,
) -> Result<ComparisonReport> {
    let integral = check_decrease_integral(cand, sys, samples, dt, horizon)?;
    // subsample trajectory points as the differential sample set
    let mut points = Vec::new();
    for (xi, u) in samples {
        let traj = integrate(sys, xi, u, dt, horizon)?;
        let stride = (traj.len() / 32).max(1);
        for k in (0..traj.len()).step_by(stride) {
            points.push((traj.states[k].clone(), traj.inputs[k].clone()));
        }
    }
    let differential = check_decrease_differential(cand, sys, &points)?;
    let agree = matches!(
        (differential.verdict, integral.verdict),
        (Verdict::Holds, Verdict::Holds) | (Verdict::Violated, Verdict::Violated)
    );
    let mut notes = Vec::new();
    if !agree {
        notes.push(format!(
            "differential ({:?}) and integral ({:?}) verdicts disagree: likely a step-size artefact; retry with dt = {}",
            differential.verdict,
            integral.verdict,
            dt / 10.0
        ));
    }
    Ok(ComparisonReport {
        check: "prop26_cross_check".into(),
        agree: Some(agree),
        quantities: vec![
            Quantity {
                name: "differential_margin".into(),
                value: differential.margin,
            },
            Quantity {
                name: "integral_margin".into(),
                value: integral.margin,
            },
        ],
        notes,
        sub_reports: vec![differential, integral],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse, Scope};
    use crate::funclib::GainKind;
    use crate::sampling::sample_pairs;
    use crate::sim::InputSet;

    fn gain(src: &str, kind: GainKind) -> ScalarGain {
        ScalarGain::parse(src, kind, 1e6).unwrap()
    }

    /// x' = -x + u, y = x with V = ln(1 + x^2).
    fn log_candidate() -> LyapunovCandidate {
        LyapunovCandidate::new(
            parse("ln(1 + x1^2)", Scope::new(1, 0)).unwrap(),
            Some(vec![parse("2*x1/(1 + x1^2)", Scope::new(1, 0)).unwrap()]),
            gain("ln(1 + s^2)", GainKind::Kinf),
            gain("ln(1 + s^2)", GainKind::Kinf),
            ScalarGain::zero(1e6),
            gain("2*s", GainKind::K),
            gain("2*s^2/(1 + s^2)", GainKind::PositiveDefinite),
        )
        .unwrap()
    }

    fn forced_decay() -> ControlSystem {
        ControlSystem::from_strs("forced", 1, 1, 1, &["-x1 + u1"], &["x1"], InputSet::All).unwrap()
    }

    fn unstable() -> ControlSystem {
        ControlSystem::from_strs("unstable", 1, 1, 1, &["x1"], &["0"], InputSet::All).unwrap()
    }

    fn quadratic_candidate() -> LyapunovCandidate {
        LyapunovCandidate::new(
            parse("x1^2/2", Scope::new(1, 0)).unwrap(),
            Some(vec![parse("x1", Scope::new(1, 0)).unwrap()]),
            gain("s^2/4", GainKind::Kinf),
            gain("s^2", GainKind::Kinf),
            ScalarGain::zero(1e6),
            gain("2*s", GainKind::K),
            gain("s^2/2", GainKind::PositiveDefinite),
        )
        .unwrap()
    }

    #[test]
    fn sandwich_equality_for_radial_candidate() {
        let report = check_sandwich(&log_candidate(), 10.0, 2000).unwrap();
        assert_eq!(report.verdict, Verdict::Holds);
        // V depends only on |x|: both sides tie everywhere
        assert!(report.margin.abs() <= 1e-9, "margin {}", report.margin);
    }

    #[test]
    fn sandwich_holds_with_slack() {
        let report = check_sandwich(&quadratic_candidate(), 10.0, 2000).unwrap();
        assert_eq!(report.verdict, Verdict::Holds);
        assert!(report.margin <= 0.0);
    }

    #[test]
    fn sandwich_violated_by_tight_lower_bound() {
        let cand = LyapunovCandidate::new(
            parse("x1^2", Scope::new(1, 0)).unwrap(),
            None,
            gain("2*s^2", GainKind::Kinf),
            gain("4*s^2", GainKind::Kinf),
            ScalarGain::zero(1e6),
            gain("s", GainKind::K),
            gain("s^2", GainKind::PositiveDefinite),
        )
        .unwrap();
        let report = check_sandwich(&cand, 10.0, 500).unwrap();
        assert_eq!(report.verdict, Verdict::Violated);
    }

    #[test]
    fn differential_decrease_holds_for_log_candidate() {
        // (2x/(1+x^2))(-x+u) <= -2x^2/(1+x^2) + 2|u| since |2x/(1+x^2)| <= 1
        let cand = log_candidate();
        let sys = forced_decay();
        let pts = crate::sampling::halton_cube(2000, 2, 10.0);
        let samples: Vec<(Vec<f64>, Vec<f64>)> =
            pts.into_iter().map(|p| (vec![p[0]], vec![p[1]])).collect();
        let report = check_decrease_differential(&cand, &sys, &samples).unwrap();
        assert_eq!(report.verdict, Verdict::Holds, "margin {}", report.margin);
    }

    #[test]
    fn differential_margin_zero_at_unit_state() {
        // at (xi, mu) = (1, 0): grad V . f = -1 and -kappa(1) = -1 exactly
        let cand = log_candidate();
        let sys = forced_decay();
        let samples = vec![(vec![1.0], vec![0.0])];
        let report = check_decrease_differential(&cand, &sys, &samples).unwrap();
        assert!(report.margin.abs() <= 1e-12, "margin {}", report.margin);
    }

    #[test]
    fn differential_rejects_unstable_system() {
        let cand = quadratic_candidate();
        let sys = unstable();
        let samples = vec![(vec![1.0], vec![0.0])];
        let report = check_decrease_differential(&cand, &sys, &samples).unwrap();
        // grad V . f = 1 > -kappa(1)
        assert_eq!(report.verdict, Verdict::Violated);
    }

    #[test]
    fn integral_decrease_holds_on_random_runs() {
        let cand = log_candidate();
        let sys = forced_decay();
        let samples = sample_pairs(3, 100, 1, 1, 5.0, 5.0, 5.0, 1e-3, 8);
        let report = check_decrease_integral(&cand, &sys, &samples, 1e-3, 5.0).unwrap();
        assert_eq!(report.verdict, Verdict::Holds, "margin {}", report.margin);
    }

    #[test]
    fn integral_decrease_trivial_run() {
        let cand = log_candidate();
        let sys = forced_decay();
        let samples = vec![(vec![0.0], InputSignal::zero(1, 2.0))];
        let report = check_decrease_integral(&cand, &sys, &samples, 1e-3, 2.0).unwrap();
        assert!(report.margin.abs() <= 1e-12);
    }

    #[test]
    fn integral_decrease_rejects_doubled_kappa() {
        // doubling kappa overdraws the decrease: -grad V . f < kappa(|x|)
        let cand = LyapunovCandidate::new(
            parse("ln(1 + x1^2)", Scope::new(1, 0)).unwrap(),
            Some(vec![parse("2*x1/(1 + x1^2)", Scope::new(1, 0)).unwrap()]),
            gain("ln(1 + s^2)", GainKind::Kinf),
            gain("ln(1 + s^2)", GainKind::Kinf),
            ScalarGain::zero(1e6),
            gain("2*s", GainKind::K),
            gain("4*s^2/(1 + s^2)", GainKind::PositiveDefinite),
        )
        .unwrap();
        let sys = forced_decay();
        let samples = vec![(vec![2.0], InputSignal::zero(1, 3.0))];
        let report = check_decrease_integral(&cand, &sys, &samples, 1e-3, 3.0).unwrap();
        assert_eq!(report.verdict, Verdict::Violated);
        let w = report.witness.unwrap();
        assert!(w.time > 0.0, "violation needs a nontrivial segment");
    }

    #[test]
    fn cross_check_agreement_both_ways() {
        let sys = forced_decay();
        let samples = sample_pairs(5, 20, 1, 1, 5.0, 5.0, 3.0, 1e-3, 8);
        let good = cross_check_prop26(&log_candidate(), &sys, &samples, 1e-3, 3.0).unwrap();
        assert_eq!(good.agree, Some(true));

        let bad_sys = unstable();
        let bad =
            cross_check_prop26(&quadratic_candidate(), &bad_sys, &samples, 1e-3, 3.0).unwrap();
        assert_eq!(
            bad.agree,
            Some(true),
            "both routes reject the unstable pair"
        );
        assert!(bad
            .sub_reports
            .iter()
            .all(|r| r.verdict == Verdict::Violated));
    }

    #[test]
    fn kinf_kappa_flags_supremum_variant() {
        let cand = quadratic_candidate();
        assert!(cand.is_ioss_flavor());
        let log = log_candidate();
        assert!(!log.is_ioss_flavor(), "saturating kappa is not Kinf");
    }

    #[test]
    fn nonsmooth_candidate_marks_kinks_inconclusive() {
        // V = |x| has a kink at the origin
        let cand = LyapunovCandidate::new(
            parse("abs(x1)", Scope::new(1, 0)).unwrap(),
            None,
            gain("s/2", GainKind::Kinf),
            gain("2*s", GainKind::Kinf),
            ScalarGain::zero(1e6),
            gain("s", GainKind::K),
            gain("s/(1+s)", GainKind::PositiveDefinite),
        )
        .unwrap();
        let sys = forced_decay();
        // first point sits half a finite-difference step from the kink
        let samples = vec![(vec![5e-6], vec![0.0]), (vec![1.0], vec![0.0])];
        let report = check_decrease_differential(&cand, &sys, &samples).unwrap();
        assert!(report.notes.iter().any(|n| n.contains("inconclusive")));
        assert_ne!(report.verdict, Verdict::Violated);
    }
}
