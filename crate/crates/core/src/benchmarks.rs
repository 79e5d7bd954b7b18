//! Built-in benchmark systems with their shipped gains, certificates, and
//! reachability envelopes.
//!
//! The linear 2-D pair is derived by eigen-analysis: with `A = diag(-1, -2)`,
//! `B = I`, `C = [1  0]`, the Lyapunov equation `A'P + PA = -C'C - I` gives
//! `P = diag(1, 1/4)`, so `V = x'Px` obeys
//! `V' <= -|x|^2 + 2|Px||u| <= -|x|^2/2 + 2|u|^2 <= -V/2 + 2|u|^2`,
//! which yields the shipped trajectory gains
//! `|x|^2/4 <= |xi|^2 e^{-t/2} + int 2|u|^2`. Flipping the sign of the
//! unobserved stable mode produces the undetectable twin, shipped with the
//! same (now wrong) gains.

use crate::bounds::IIOSSGains;
use crate::dsl::{parse, Scope};
use crate::error::{Error, Result};
use crate::funclib::{GainKind, KLFunction, ScalarGain, DEFAULT_KL_CAP};
use crate::lyap::LyapunovCandidate;
use crate::sim::{ControlSystem, InputSet, ReachabilityEnvelope};

/// A registry entry: system plus whatever certificates ship with it.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: &'static str,
    pub system: ControlSystem,
    pub gains: Option<IIOSSGains>,
    pub candidate: Option<LyapunovCandidate>,
    pub envelope: Option<ReachabilityEnvelope>,
    /// The envelope gain admissible for value-function estimation.
    pub sigma: Option<ScalarGain>,
    pub provenance: &'static str,
}

fn gain(src: &str, kind: GainKind) -> ScalarGain {
    ScalarGain::parse(src, kind, 1e6).expect("registry gain parses")
}

fn big_gain(src: &str, kind: GainKind) -> ScalarGain {
    // for alpha gains that get evaluated at diverged states
    ScalarGain::parse(src, kind, 1e14).expect("registry gain parses")
}

fn kl(src: &str) -> KLFunction {
    KLFunction::parse(src, DEFAULT_KL_CAP).expect("registry KL function parses")
}

fn identity_envelope() -> ReachabilityEnvelope {
    ReachabilityEnvelope {
        chi1: None,
        chi2: ScalarGain::identity(1e6),
        chi3: ScalarGain::identity(1e6),
        sigma: ScalarGain::identity(1e6),
        c: 0.0,
    }
}

fn xdot_u2() -> Result<Benchmark> {
    let system = ControlSystem::from_strs("xdot_u2", 1, 1, 1, &["u1^2"], &["0"], InputSet::All)?;
    // gains that an identity input gain cannot support: the impulse family
    // keeps unit energy while reaching arbitrarily far
    let gains = IIOSSGains {
        alpha: big_gain("s", GainKind::Kinf),
        beta: kl("s*exp(-t)"),
        gamma1: ScalarGain::zero(1e6),
        gamma2: ScalarGain::identity(1e6),
    };
    // a square input gain does bound the reachable set
    let envelope = ReachabilityEnvelope {
        chi1: None,
        chi2: ScalarGain::identity(1e6),
        chi3: ScalarGain::identity(1e6),
        sigma: gain("s^2", GainKind::Kinf),
        c: 0.0,
    };
    Ok(Benchmark {
        name: "xdot_u2",
        system,
        gains: Some(gains),
        candidate: None,
        envelope: Some(envelope),
        sigma: Some(gain("s^2", GainKind::Kinf)),
        provenance:
            "canonical energy-budget escape example: unit-energy impulses reach arbitrarily far",
    })
}

fn scalar_linear() -> Result<Benchmark> {
    let system =
        ControlSystem::from_strs("scalar_linear", 1, 1, 1, &["-x1"], &["x1"], InputSet::All)?;
    let gains = IIOSSGains {
        alpha: big_gain("s", GainKind::Kinf),
        beta: kl("s*exp(-t)"),
        gamma1: ScalarGain::identity(1e6),
        gamma2: ScalarGain::identity(1e6),
    };
    let candidate = LyapunovCandidate::new(
        parse("x1^2/2", Scope::new(1, 0))?,
        Some(vec![parse("x1", Scope::new(1, 0))?]),
        gain("s^2/2", GainKind::Kinf),
        gain("s^2/2", GainKind::Kinf),
        ScalarGain::zero(1e6),
        ScalarGain::zero(1e6),
        gain("s^2", GainKind::PositiveDefinite),
    )?;
    Ok(Benchmark {
        name: "scalar_linear",
        system,
        gains: Some(gains),
        candidate: Some(candidate),
        envelope: Some(identity_envelope()),
        sigma: Some(ScalarGain::identity(1e6)),
        provenance: "scalar exponential decay; the input channel is present but inert",
    })
}

fn scalar_iiss() -> Result<Benchmark> {
    let system = ControlSystem::from_strs(
        "scalar_iiss",
        1,
        1,
        1,
        &["-x1 + u1"],
        &["x1"],
        InputSet::All,
    )?;
    // |x(t)| <= e^{-t}|xi| + int |u| by variation of constants
    let gains = IIOSSGains {
        alpha: big_gain("s", GainKind::Kinf),
        beta: kl("s*exp(-t)"),
        gamma1: ScalarGain::zero(1e6),
        gamma2: ScalarGain::identity(1e6),
    };
    let candidate = LyapunovCandidate::new(
        parse("ln(1 + x1^2)", Scope::new(1, 0))?,
        Some(vec![parse("2*x1/(1 + x1^2)", Scope::new(1, 0))?]),
        gain("ln(1 + s^2)", GainKind::Kinf),
        gain("ln(1 + s^2)", GainKind::Kinf),
        ScalarGain::zero(1e6),
        gain("2*s", GainKind::K),
        gain("2*s^2/(1 + s^2)", GainKind::PositiveDefinite),
    )?;
    Ok(Benchmark {
        name: "scalar_iiss",
        system,
        gains: Some(gains),
        candidate: Some(candidate),
        envelope: Some(identity_envelope()),
        sigma: Some(ScalarGain::identity(1e6)),
        provenance:
            "worked scalar example with a logarithmic certificate and saturating decrease rate",
    })
}

fn detectable_candidate() -> Result<LyapunovCandidate> {
    // V = x1^2 + x2^2/4 from the Lyapunov equation; see the module docs
    LyapunovCandidate::new(
        parse("x1^2 + x2^2/4", Scope::new(2, 0))?,
        Some(vec![
            parse("2*x1", Scope::new(2, 0))?,
            parse("x2/2", Scope::new(2, 0))?,
        ]),
        gain("s^2/4", GainKind::Kinf),
        gain("s^2", GainKind::Kinf),
        ScalarGain::zero(1e6),
        gain("2*s^2", GainKind::K),
        gain("s^2/2", GainKind::PositiveDefinite),
    )
}

fn detectable_gains() -> IIOSSGains {
    IIOSSGains {
        alpha: big_gain("s^2/4", GainKind::Kinf),
        beta: kl("s^2*exp(-t/2)"),
        gamma1: ScalarGain::zero(1e6),
        gamma2: gain("2*s^2", GainKind::K),
    }
}

fn linear_detectable_2d() -> Result<Benchmark> {
    let system = ControlSystem::from_strs(
        "linear_detectable_2d",
        2,
        2,
        1,
        &["-x1 + u1", "-2*x2 + u2"],
        &["x1"],
        InputSet::All,
    )?;
    Ok(Benchmark {
        name: "linear_detectable_2d",
        system,
        gains: Some(detectable_gains()),
        candidate: Some(detectable_candidate()?),
        envelope: Some(identity_envelope()),
        sigma: Some(ScalarGain::identity(1e6)),
        provenance: "observed mode -1, unobserved stable mode -2; gains from the Lyapunov equation",
    })
}

fn linear_undetectable_2d() -> Result<Benchmark> {
    let system = ControlSystem::from_strs(
        "linear_undetectable_2d",
        2,
        2,
        1,
        &["-x1 + u1", "2*x2 + u2"],
        &["x1"],
        InputSet::All,
    )?;
    Ok(Benchmark {
        name: "linear_undetectable_2d",
        system,
        // the detectable pair's gains, now wrong: the unobserved mode grows
        gains: Some(detectable_gains()),
        candidate: Some(detectable_candidate()?),
        envelope: None,
        sigma: None,
        provenance: "sign-flipped unobserved mode: the shipped gains must be falsified",
    })
}

fn passive_scalar() -> Result<Benchmark> {
    let system = ControlSystem::from_strs(
        "passive_scalar",
        1,
        1,
        1,
        &["-x1^3 + u1"],
        &["x1"],
        InputSet::All,
    )?;
    // storage V = x^2/2: V' = -x^4 + x u <= -x^4 + |y|^2 + |u|^2/2
    let candidate = LyapunovCandidate::new(
        parse("x1^2/2", Scope::new(1, 0))?,
        Some(vec![parse("x1", Scope::new(1, 0))?]),
        gain("s^2/2", GainKind::Kinf),
        gain("s^2/2", GainKind::Kinf),
        gain("s^2", GainKind::K),
        gain("s^2/2", GainKind::K),
        gain("s^4", GainKind::PositiveDefinite),
    )?;
    Ok(Benchmark {
        name: "passive_scalar",
        system,
        gains: None,
        candidate: Some(candidate),
        envelope: Some(identity_envelope()),
        sigma: Some(ScalarGain::identity(1e6)),
        provenance: "passive polynomial system; its storage function is the certificate",
    })
}

pub fn names() -> &'static [&'static str] {
    &[
        "xdot_u2",
        "scalar_linear",
        "scalar_iiss",
        "linear_detectable_2d",
        "linear_undetectable_2d",
        "passive_scalar",
    ]
}

pub fn get(name: &str) -> Result<Benchmark> {
    match name {
        "xdot_u2" => xdot_u2(),
        "scalar_linear" | "linear" => scalar_linear(),
        "scalar_iiss" => scalar_iiss(),
        "linear_detectable_2d" => linear_detectable_2d(),
        "linear_undetectable_2d" => linear_undetectable_2d(),
        "passive_scalar" => passive_scalar(),
        other => Err(Error::config(format!(
            "unknown benchmark `{other}`; known: {}",
            names().join(", ")
        ))),
    }
}

pub fn registry() -> Result<Vec<Benchmark>> {
    names().iter().map(|n| get(n)).collect()
}
