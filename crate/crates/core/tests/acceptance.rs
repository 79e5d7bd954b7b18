//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its headline numbers (visible under `--nocapture`). The final test
//! re-runs every criterion with identical seeds and demands byte-identical
//! reports.

use iioss_core::benchmarks;
use iioss_core::bounds::{check_iioss, falsify, run_norm_observer, FalsifyOptions};
use iioss_core::compare::{
    kl_bound, solve_comparison, sufficiency_pipeline, verify_dominance, verify_kl_bound,
    ComparisonInstance,
};
use iioss_core::funclib::{settling_time_map, GainKind, KLFunction, ScalarGain, DEFAULT_KL_CAP};
use iioss_core::lyap::{check_decrease_differential, check_decrease_integral, cross_check_prop26};
use iioss_core::report::Verdict;
use iioss_core::sampling;
use iioss_core::sim::{integrate, ControlSystem, InputSet, InputSignal};
use iioss_core::valfun::{estimate_v0, WeightFunction};
use std::time::Instant;

type Artifacts = Vec<(String, String)>;

fn elapsed_under(start: Instant, cap_secs: f64, what: &str) {
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < cap_secs, "{what} took {secs:.1} s, cap {cap_secs} s");
}

/// Unit-energy escape: the impulse family breaks an identity input gain on
/// the square integrator within a small budget.
fn criterion_1() -> Artifacts {
    let start = Instant::now();
    let bench = benchmarks::get("xdot_u2").unwrap();
    let gains = bench.gains.as_ref().unwrap();
    let opts = FalsifyOptions {
        budget: 1000,
        seed: 424_242,
        dt: 1e-3,
        horizon: 1.0,
        energy_cap: Some(1.0),
        ..FalsifyOptions::default()
    };
    let report = falsify(&bench.system, gains, &opts).unwrap();
    assert_eq!(report.verdict, Verdict::Violated);
    assert!(report.margin >= 9.0, "margin {}", report.margin);
    let witness = report.witness.as_ref().unwrap();
    let traj = integrate(
        &bench.system,
        &witness.xi,
        witness.input.as_ref().unwrap(),
        1e-3,
        1.0,
    )
    .unwrap();
    let x1 = traj.final_state()[0].abs();
    assert!(x1 >= 10.0 - 1e-6, "witness reaches only {x1}");
    elapsed_under(start, 5.0, "criterion 1");
    println!("PASS criterion 1: unit-energy falsification of x' = u^2 (witness x(1) = {x1:.3e}, margin {:.3e})", report.margin);
    vec![("falsify_xdot_u2".into(), report.to_json())]
}

/// Comparison-principle dominance: shrunk exact solutions stay dominated;
/// unshrunk ones track the solver to integration accuracy.
fn criterion_2() -> Artifacts {
    let start = Instant::now();
    let dt = 1e-2;
    let horizon = 5.0;
    let rates = [
        ScalarGain::identity(1e6),
        ScalarGain::parse("s/2", GainKind::PositiveDefinite, 1e6).unwrap(),
        ScalarGain::parse("s^2", GainKind::PositiveDefinite, 1e6).unwrap(),
        ScalarGain::parse("s/(1+s)", GainKind::PositiveDefinite, 1e6).unwrap(),
    ];
    let mut rng = sampling::rng_from_seed(2024);
    let mut artifacts = Artifacts::new();
    let mut worst_shrunk = f64::MIN;
    let mut worst_unshrunk = 0.0_f64;
    for case in 0..50 {
        use rand::Rng;
        let alpha = rates[case % rates.len()].clone();
        let y0 = rng.gen::<f64>() * 3.0;
        let v = if case % 2 == 0 {
            InputSignal::zero(1, horizon)
        } else {
            InputSignal::constant(vec![rng.gen::<f64>()], horizon)
        };
        let inst = ComparisonInstance::new(alpha, v, y0, horizon, dt).unwrap();
        // independent route: solve at dt/2 and restrict to the coarse grid
        let fine = ComparisonInstance {
            dt: dt / 2.0,
            ..inst.clone()
        };
        let w_fine = solve_comparison(&fine).unwrap();
        let exact: Vec<f64> = w_fine.iter().copied().step_by(2).collect();

        let shrunk: Vec<f64> = exact.iter().map(|v| 0.9 * v).collect();
        let report_shrunk = verify_dominance(&shrunk, &inst).unwrap();
        assert_eq!(report_shrunk.verdict, Verdict::Holds, "case {case}");
        assert!(
            report_shrunk.margin <= 1e-6,
            "case {case}: shrunk margin {}",
            report_shrunk.margin
        );
        worst_shrunk = worst_shrunk.max(report_shrunk.margin);

        let report_exact = verify_dominance(&exact, &inst).unwrap();
        assert!(
            report_exact.margin.abs() <= 10.0 * dt.powi(4),
            "case {case}: unshrunk margin {}",
            report_exact.margin
        );
        worst_unshrunk = worst_unshrunk.max(report_exact.margin.abs());
        if case < 2 {
            artifacts.push((format!("dominance_shrunk_{case}"), report_shrunk.to_json()));
            artifacts.push((format!("dominance_exact_{case}"), report_exact.to_json()));
        }
    }
    elapsed_under(start, 10.0, "criterion 2");
    println!("PASS criterion 2: dominance on 50 shrunk (worst margin {worst_shrunk:.3e}) and 50 unshrunk (worst |margin| {worst_unshrunk:.3e}) instances");
    artifacts
}

/// KL-bound gate: the half-speed-flow candidate passes for the three
/// standard rates; the overconfident candidate is rejected.
fn criterion_3() -> Artifacts {
    let start = Instant::now();
    let mut artifacts = Artifacts::new();
    for (label, alpha) in [
        ("w", ScalarGain::identity(1e6)),
        (
            "w^2",
            ScalarGain::parse("s^2", GainKind::PositiveDefinite, 1e6).unwrap(),
        ),
        (
            "w_over_1pw",
            ScalarGain::parse("s/(1+s)", GainKind::PositiveDefinite, 1e6).unwrap(),
        ),
    ] {
        let s_grid: Vec<f64> = (0..=32).map(|i| 10.0 * i as f64 / 32.0).collect();
        let t_grid: Vec<f64> = (0..=32).map(|i| 10.0 * i as f64 / 32.0).collect();
        let beta = kl_bound(&alpha, &s_grid, &t_grid).unwrap();
        let gate = verify_kl_bound(&beta, &alpha, 50, 33, 10.0, 10.0, 1e-2).unwrap();
        assert_eq!(
            gate.verdict,
            Verdict::Holds,
            "{label}: margin {}",
            gate.margin
        );
        assert!(gate.margin <= 1e-4, "{label}: margin {}", gate.margin);
        artifacts.push((format!("kl_gate_{label}"), gate.to_json()));
    }
    let alpha = ScalarGain::parse("s/10", GainKind::PositiveDefinite, 1e6).unwrap();
    let wrong = KLFunction::parse("s*exp(-10*t)", DEFAULT_KL_CAP).unwrap();
    let rejected = verify_kl_bound(&wrong, &alpha, 50, 33, 5.0, 10.0, 1e-2).unwrap();
    assert_eq!(rejected.verdict, Verdict::Violated);
    artifacts.push(("kl_gate_rejected".into(), rejected.to_json()));
    elapsed_under(start, 30.0, "criterion 3");
    println!("PASS criterion 3: KL gate accepts the slowed flow for w, w^2, w/(1+w) and rejects the overconfident candidate");
    artifacts
}

/// Sufficiency pipeline end to end on the scalar benchmark.
fn criterion_4() -> Artifacts {
    let start = Instant::now();
    let bench = benchmarks::get("scalar_iiss").unwrap();
    let cand = bench.candidate.as_ref().unwrap();
    let samples = sampling::sample_pairs(77, 100, 1, 1, 5.0, 3.0, 10.0, 1e-3, 8);
    let (bound, report) =
        sufficiency_pipeline(cand, &bench.system, &samples, 1e-3, 10.0, 77).unwrap();
    assert_eq!(report.verdict, Verdict::Holds, "margin {}", report.margin);
    assert!(report.margin <= 1e-4, "margin {}", report.margin);

    // the produced gains, reassembled, pass the plain bound check on the
    // same samples
    let gains = bound
        .to_iioss_gains(&cand.alpha_lower, &cand.alpha_upper)
        .unwrap();
    let cross = check_iioss(&bench.system, &gains, &samples, 1e-3, 10.0).unwrap();
    assert_eq!(
        cross.verdict,
        Verdict::Holds,
        "cross-module margin {}",
        cross.margin
    );

    elapsed_under(start, 60.0, "criterion 4");
    println!(
        "PASS criterion 4: sufficiency pipeline bound holds on 100 runs (margin {:.3e}; flow speed {}), reassembled gains pass the bound check",
        report.margin, bound.flow_speed
    );
    vec![
        ("sufficiency_scalar_iiss".into(), report.to_json()),
        ("sufficiency_cross_check".into(), cross.to_json()),
    ]
}

/// Value-function sandwich at 20 sampled states on the linear benchmark.
fn criterion_5() -> Artifacts {
    let start = Instant::now();
    let bench = benchmarks::get("scalar_linear").unwrap();
    let gains = bench.gains.as_ref().unwrap();
    let sigma = bench.sigma.as_ref().unwrap();
    let weight = WeightFunction::default_weight();
    let mut rng = sampling::rng_from_seed(5);
    let mut artifacts = Artifacts::new();
    for i in 0..20 {
        let xi = loop {
            let cand = sampling::sample_ball(&mut rng, 1, 5.0);
            if iioss_core::sim::norm(&cand) > 1e-3 {
                break cand;
            }
        };
        let est = estimate_v0(
            &bench.system,
            gains,
            sigma,
            &weight,
            &xi,
            500,
            500 + i,
            1e-3,
        )
        .unwrap();
        assert!(
            est.value >= est.lower_bound,
            "xi {:?}: estimate {} below alpha(|xi|) = {}",
            xi,
            est.value,
            est.lower_bound
        );
        assert!(
            est.value <= est.upper_bound * (1.0 + 1e-6),
            "xi {:?}: estimate {} above 2 beta(|xi|, 0) = {}",
            xi,
            est.value,
            est.upper_bound
        );
        // the rest candidate attains the lower end exactly
        assert_eq!(
            est.lower_bound.to_bits(),
            (weight.c1 * gains.alpha.eval(iioss_core::sim::norm(&xi)).unwrap()).to_bits()
        );
        assert_eq!(
            est.value.to_bits(),
            est.lower_bound.to_bits(),
            "rest candidate is optimal here"
        );
        if i < 2 {
            artifacts.push((
                format!("v0_estimate_{i}"),
                format!(
                    "{{\"xi\":{},\"value\":{},\"lower\":{},\"upper\":{},\"witness_time\":{}}}",
                    xi[0], est.value, est.lower_bound, est.upper_bound, est.witness_time
                ),
            ));
        }
    }
    elapsed_under(start, 120.0, "criterion 5");
    println!("PASS criterion 5: value-function sandwich holds at 20 states (budget 500, lower end attained exactly)");
    artifacts
}

/// The Lyapunov checkers accept the scalar benchmark certificate and reject
/// the unstable system, with agreeing differential/integral verdicts.
fn criterion_6() -> Artifacts {
    let start = Instant::now();
    let bench = benchmarks::get("scalar_iiss").unwrap();
    let cand = bench.candidate.as_ref().unwrap();

    let points: Vec<(Vec<f64>, Vec<f64>)> = sampling::halton_cube(10_000, 2, 10.0)
        .into_iter()
        .map(|p| (vec![p[0]], vec![p[1]]))
        .collect();
    let diff = check_decrease_differential(cand, &bench.system, &points).unwrap();
    assert_eq!(
        diff.verdict,
        Verdict::Holds,
        "differential margin {}",
        diff.margin
    );
    assert!(diff.margin <= 1e-6);

    let pairs = sampling::sample_pairs(6, 10_000, 1, 1, 5.0, 5.0, 2.0, 1e-3, 8);
    let integral = check_decrease_integral(cand, &bench.system, &pairs, 1e-3, 2.0).unwrap();
    assert_eq!(
        integral.verdict,
        Verdict::Holds,
        "integral margin {}",
        integral.margin
    );
    assert!(integral.margin <= 1e-6);

    // unstable twin: x' = +x with V = x^2/2 must fail both routes
    let unstable =
        ControlSystem::from_strs("unstable", 1, 1, 1, &["x1"], &["0"], InputSet::All).unwrap();
    let bad_cand = iioss_core::lyap::LyapunovCandidate::new(
        iioss_core::dsl::parse("x1^2/2", iioss_core::dsl::Scope::new(1, 0)).unwrap(),
        Some(vec![iioss_core::dsl::parse(
            "x1",
            iioss_core::dsl::Scope::new(1, 0),
        )
        .unwrap()]),
        ScalarGain::parse("s^2/4", GainKind::Kinf, 1e6).unwrap(),
        ScalarGain::parse("s^2", GainKind::Kinf, 1e6).unwrap(),
        ScalarGain::zero(1e6),
        ScalarGain::parse("2*s", GainKind::K, 1e6).unwrap(),
        ScalarGain::parse("s^2/2", GainKind::PositiveDefinite, 1e6).unwrap(),
    )
    .unwrap();
    let cross_bad = cross_check_prop26(&bad_cand, &unstable, &pairs[..50], 1e-3, 2.0).unwrap();
    assert_eq!(
        cross_bad.agree,
        Some(true),
        "routes disagree on the unstable pair"
    );
    assert!(cross_bad
        .sub_reports
        .iter()
        .all(|r| r.verdict == Verdict::Violated));

    let cross_good = cross_check_prop26(cand, &bench.system, &pairs[..50], 1e-3, 2.0).unwrap();
    assert_eq!(cross_good.agree, Some(true));
    assert!(cross_good
        .sub_reports
        .iter()
        .all(|r| r.verdict == Verdict::Holds));

    elapsed_under(start, 20.0, "criterion 6");
    println!(
        "PASS criterion 6: certificate accepted (diff margin {:.3e}, integral margin {:.3e}); unstable pair rejected by both routes",
        diff.margin, integral.margin
    );
    vec![
        ("lyap_differential".into(), diff.to_json()),
        ("lyap_integral".into(), integral.to_json()),
        ("lyap_cross_bad".into(), cross_bad.to_json()),
    ]
}

/// Norm observer bound on 50 random runs.
fn criterion_7() -> Artifacts {
    let start = Instant::now();
    let bench = benchmarks::get("scalar_iiss").unwrap();
    let gains = bench.gains.as_ref().unwrap();
    let dt = 1e-3;
    let pairs = sampling::sample_pairs(7, 50, 1, 1, 3.0, 3.0, 5.0, dt, 8);
    let tol = 1e-6 + 10.0 * dt.powi(4);
    let mut worst = f64::MIN;
    let mut first_json = None;
    for (xi, u) in &pairs {
        let (state, report) = run_norm_observer(&bench.system, gains, xi, u, dt, 5.0).unwrap();
        assert_eq!(report.verdict, Verdict::Holds);
        assert!(report.margin <= tol, "margin {}", report.margin);
        assert_eq!(state.p[0], 0.0);
        assert!(
            state.p.windows(2).all(|w| w[1] >= w[0]),
            "p must be nondecreasing exactly"
        );
        worst = worst.max(report.margin);
        if first_json.is_none() {
            first_json = Some(report.to_json());
        }
    }
    elapsed_under(start, 10.0, "criterion 7");
    println!("PASS criterion 7: norm-observer bound holds on 50 runs (worst margin {worst:.3e}), p nondecreasing exactly");
    vec![("norm_observer".into(), first_json.unwrap())]
}

/// Settling-time map: closed form at one point, monotone and continuous on
/// a 50 x 50 table.
fn criterion_8() -> Artifacts {
    let start = Instant::now();
    let beta = KLFunction::parse("s*exp(-t)", DEFAULT_KL_CAP).unwrap();
    let r_grid: Vec<f64> = (1..=50)
        .map(|i| 0.1 + 3.9 * (i - 1) as f64 / 49.0)
        .collect();
    let eps_grid: Vec<f64> = (1..=50)
        .map(|i| 0.05 + 0.95 * (i - 1) as f64 / 49.0)
        .collect();
    let map = settling_time_map(&beta, &r_grid, &eps_grid, 60.0).unwrap();
    let t = map.query(1.0, 0.5).unwrap();
    assert!((t - 2f64.ln()).abs() < 1e-6, "T_1(0.5) = {t}");
    for clause in map.check_table() {
        assert!(clause.passed, "{clause:?}");
    }
    elapsed_under(start, 5.0, "criterion 8");
    println!(
        "PASS criterion 8: T_1(0.5) = ln 2 within 1e-6; 50x50 table monotone with bounded jumps"
    );
    vec![("settling_csv".into(), map.to_csv())]
}

/// The detectable linear pair survives both the sampled bound check and a
/// 10^4 falsification budget; the undetectable twin is falsified.
fn criterion_9() -> Artifacts {
    let start = Instant::now();
    let det = benchmarks::get("linear_detectable_2d").unwrap();
    let gains = det.gains.as_ref().unwrap();
    let pairs = sampling::sample_pairs(9, 100, 2, 2, 3.0, 3.0, 5.0, 1e-3, 8);
    let bound = check_iioss(&det.system, gains, &pairs, 1e-3, 5.0).unwrap();
    assert_eq!(bound.verdict, Verdict::Holds, "margin {}", bound.margin);

    let opts = FalsifyOptions {
        budget: 10_000,
        seed: 99,
        dt: 1e-2,
        horizon: 3.0,
        xi_radius: 3.0,
        amp_max: 10.0,
        ..FalsifyOptions::default()
    };
    let clean = falsify(&det.system, gains, &opts).unwrap();
    assert_eq!(clean.verdict, Verdict::NoViolationFound);
    assert_eq!(clean.samples_evaluated, 10_000);

    let undet = benchmarks::get("linear_undetectable_2d").unwrap();
    let caught = falsify(&undet.system, undet.gains.as_ref().unwrap(), &opts).unwrap();
    assert_eq!(caught.verdict, Verdict::Violated);
    assert!(caught.samples_evaluated <= 10_000);

    elapsed_under(start, 60.0, "criterion 9");
    println!(
        "PASS criterion 9: detectable pair clean at budget 10^4 (worst margin {:.3e}); undetectable twin falsified after {} candidates",
        clean.margin, caught.samples_evaluated
    );
    vec![
        ("detectable_bound".into(), bound.to_json()),
        ("detectable_falsify".into(), clean.to_json()),
        ("undetectable_falsify".into(), caught.to_json()),
    ]
}

#[test]
fn criterion_1_unit_energy_falsification() {
    criterion_1();
}

#[test]
fn criterion_2_comparison_dominance() {
    criterion_2();
}

#[test]
fn criterion_3_kl_bound_gate() {
    criterion_3();
}

#[test]
fn criterion_4_sufficiency_pipeline() {
    criterion_4();
}

#[test]
fn criterion_5_value_function_sandwich() {
    criterion_5();
}

#[test]
fn criterion_6_lyapunov_discrimination() {
    criterion_6();
}

#[test]
fn criterion_7_norm_observer() {
    criterion_7();
}

#[test]
fn criterion_8_settling_time_map() {
    criterion_8();
}

#[test]
fn criterion_9_linear_detectability() {
    criterion_9();
}

#[test]
fn criterion_10_determinism() {
    type Runner = fn() -> Artifacts;
    let runners: Vec<(&str, Runner)> = vec![
        ("criterion 1", criterion_1),
        ("criterion 2", criterion_2),
        ("criterion 3", criterion_3),
        ("criterion 4", criterion_4),
        ("criterion 5", criterion_5),
        ("criterion 6", criterion_6),
        ("criterion 7", criterion_7),
        ("criterion 8", criterion_8),
        ("criterion 9", criterion_9),
    ];
    for (name, run) in runners {
        let first = run();
        let second = run();
        assert_eq!(first.len(), second.len(), "{name}: artifact count changed");
        for ((label_a, a), (label_b, b)) in first.iter().zip(&second) {
            assert_eq!(label_a, label_b);
            assert_eq!(
                a, b,
                "{name}/{label_a}: reports differ between identical runs"
            );
        }
    }
    println!(
        "PASS criterion 10: criteria 1-9 byte-identical under repeated runs with the same seeds"
    );
}
