//! Property tests: parser totality on random token soup, inversion as a
//! one-sided inverse, settling-time upper bounds, and energy additivity
//! under concatenation.

use iioss_core::dsl::{parse, EvalContext, Scope};
use iioss_core::funclib::{
    settle_time, GainKind, KLFunction, ScalarGain, DEFAULT_INVERT_TOL, DEFAULT_KL_CAP,
};
use iioss_core::sim::{input_energy, InputSignal};
use proptest::prelude::*;
use rand::Rng;

/// 10^5 random token strings: the parser must return a value or an error,
/// never panic.
#[test]
fn parser_total_on_token_soup() {
    let tokens = [
        "x1", "x2", "u1", "s", "t", "1", "2.5", "1e3", "+", "-", "*", "/", "^", "(", ")", ",",
        "min", "max", "abs", "exp", "ln", "sqrt", "sin", "cos", "tanh", "foo", "x99", ".",
    ];
    let mut rng = iioss_core::sampling::rng_from_seed(0xF00D);
    let scope = Scope::new(2, 1);
    let mut ok = 0usize;
    for _ in 0..100_000 {
        let len = rng.gen_range(1..=12);
        let mut src = String::new();
        for i in 0..len {
            if i > 0 && rng.gen_bool(0.3) {
                src.push(' ');
            }
            src.push_str(tokens[rng.gen_range(0..tokens.len())]);
        }
        if parse(&src, scope).is_ok() {
            ok += 1;
        }
    }
    assert!(ok > 0, "the soup should contain some valid expressions");
}

/// Random byte strings too (not just token-aligned garbage).
#[test]
fn parser_total_on_random_bytes() {
    let mut rng = iioss_core::sampling::rng_from_seed(0xBEEF);
    let scope = Scope::new(2, 1);
    for _ in 0..20_000 {
        let len = rng.gen_range(0..24);
        let src: String = (0..len)
            .map(|_| (rng.gen_range(0x20..0x7f_u8)) as char)
            .collect();
        let _ = parse(&src, scope);
    }
}

fn gain_family(idx: usize, cap: f64) -> ScalarGain {
    match idx % 4 {
        0 => ScalarGain::identity(cap),
        1 => ScalarGain::parse("s^2", GainKind::Kinf, cap).unwrap(),
        2 => ScalarGain::parse("ln(1+s)", GainKind::K, cap).unwrap(),
        _ => ScalarGain::parse("s/(1+s)", GainKind::K, cap).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// invert is a one-sided inverse: |g(invert(g, g(s))) - g(s)| stays
    /// within twice the inversion tolerance.
    #[test]
    fn invert_then_evaluate_is_identity(idx in 0usize..4, s in 0.0_f64..900.0) {
        let g = gain_family(idx, 1e3);
        let y = g.eval(s).unwrap();
        let back = g.invert(y, DEFAULT_INVERT_TOL).unwrap();
        let y2 = g.eval(back).unwrap();
        prop_assert!((y2 - y).abs() <= 2.0 * DEFAULT_INVERT_TOL * y.max(1.0));
    }

    /// After the settling time, the decay envelope stays below eps for
    /// every smaller size and any later time.
    #[test]
    fn settling_time_upper_bound(r in 0.05_f64..5.0, eps in 0.05_f64..2.0,
                                 frac in 0.0_f64..1.0, extra in 0.0_f64..10.0) {
        let beta = KLFunction::parse("s*exp(-t)", DEFAULT_KL_CAP).unwrap();
        let t_settle = settle_time(&beta, r, eps, 60.0).unwrap();
        let s = frac * r;
        let v = beta.eval(s, t_settle + extra).unwrap();
        prop_assert!(v <= eps + 1e-6, "beta({s}, {}) = {v} > {eps}", t_settle + extra);
    }

    /// Energy is additive under concatenation: the prefix of the first
    /// signal plus the whole second signal.
    #[test]
    fn concatenation_energy_additivity(
        amp_a in -3.0_f64..3.0, amp_b in -3.0_f64..3.0,
        tau_frac in 0.1_f64..1.0, idx in 0usize..4,
    ) {
        let gamma = gain_family(idx, 1e3);
        let v = InputSignal::new(
            vec![0.0, 0.7, 1.3],
            vec![vec![amp_a], vec![amp_b], vec![0.5 * amp_a]],
            2.0,
        ).unwrap();
        let u = InputSignal::new(vec![0.0, 0.4], vec![vec![amp_b], vec![0.0]], 1.5).unwrap();
        let tau = tau_frac * 2.0;
        let c = v.concatenate(&u, tau).unwrap();
        let total = input_energy(&c, &gamma).unwrap();

        // prefix energy of v over [0, tau], computed independently
        let mut prefix = 0.0;
        let bps = v.breakpoints();
        for (i, val) in v.values().iter().enumerate() {
            let start = bps[i];
            let end = if i + 1 < bps.len() { bps[i + 1] } else { v.horizon() };
            let clipped = end.min(tau) - start.min(tau);
            prefix += gamma.eval(val[0].abs()).unwrap() * clipped;
        }
        let rest = input_energy(&u, &gamma).unwrap();
        prop_assert!((total - prefix - rest).abs() < 1e-10,
            "tau {tau}: {total} != {prefix} + {rest}");
    }

    /// Repeated evaluation is bit-identical (pure evaluation).
    #[test]
    fn evaluation_is_pure(x in -10.0_f64..10.0, u in -10.0_f64..10.0) {
        let e = parse("sin(x1)*exp(min(u1, 2)) + x1^2/(1 + abs(u1))", Scope::new(1, 1)).unwrap();
        let xs = [x];
        let us = [u];
        let ctx = EvalContext::state_input(&xs, &us);
        let a = e.eval(&ctx).unwrap();
        let b = e.eval(&ctx).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}
