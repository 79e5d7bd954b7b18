//! Run configuration: JSON with DSL expression strings, resolved against
//! the built-in benchmark registry when a benchmark name is given.

use anyhow::{anyhow, bail, Context, Result};
use iioss_core::benchmarks;
use iioss_core::bounds::IIOSSGains;
use iioss_core::dsl::{parse, Scope};
use iioss_core::funclib::{GainKind, KLFunction, ScalarGain};
use iioss_core::lyap::LyapunovCandidate;
use iioss_core::sim::{ControlSystem, InputSet};
use iioss_core::valfun::WeightFunction;
use serde::Deserialize;

pub const DEFAULT_DOMAIN_CAP: f64 = 1e6;
pub const DEFAULT_KL_CAP: f64 = 20.0;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    pub expr: String,
    pub kind: String,
    #[serde(default)]
    pub domain_cap: Option<f64>,
}

impl GainSpec {
    pub fn build(&self) -> Result<ScalarGain> {
        let kind = match self.kind.as_str() {
            "k" | "K" => GainKind::K,
            "kinf" | "Kinf" | "k_inf" => GainKind::Kinf,
            "l" | "L" => GainKind::L,
            "positive_definite" | "pd" => GainKind::PositiveDefinite,
            other => bail!("unknown gain kind `{other}` (use k, kinf, l, positive_definite)"),
        };
        let cap = self.domain_cap.unwrap_or(DEFAULT_DOMAIN_CAP);
        ScalarGain::parse(&self.expr, kind, cap).with_context(|| format!("gain `{}`", self.expr))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KLSpec {
    pub expr: String,
    #[serde(default)]
    pub domain_cap: Option<f64>,
}

impl KLSpec {
    pub fn build(&self) -> Result<KLFunction> {
        KLFunction::parse(&self.expr, self.domain_cap.unwrap_or(DEFAULT_KL_CAP))
            .with_context(|| format!("KL function `{}`", self.expr))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default)]
    pub benchmark: Option<String>,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub p: Option<usize>,
    #[serde(default)]
    pub dynamics: Vec<String>,
    #[serde(default)]
    pub output: Vec<String>,
    #[serde(default)]
    pub input_box: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    pub alpha: GainSpec,
    pub beta: KLSpec,
    pub gamma1: GainSpec,
    pub gamma2: GainSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub v: String,
    #[serde(default)]
    pub grad_v: Option<Vec<String>>,
    pub alpha_lower: GainSpec,
    pub alpha_upper: GainSpec,
    pub sigma1: GainSpec,
    pub sigma2: GainSpec,
    pub kappa: GainSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub k: String,
    pub lambda: String,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub alpha: GainSpec,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
}

fn default_instances() -> usize {
    50
}

fn default_s_max() -> f64 {
    10.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettleSpec {
    #[serde(default)]
    pub beta: Option<KLSpec>,
    pub r_min: f64,
    pub r_max: f64,
    pub r_count: usize,
    pub eps_min: f64,
    pub eps_max: f64,
    pub eps_count: usize,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn default_t_max() -> f64 {
    60.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSpec {
    pub seed: u64,
    pub budget: usize,
    pub dt: f64,
    pub horizon: f64,
    pub xi_radius: f64,
    pub sample_count: usize,
    pub amp_max: f64,
    pub segments: usize,
    pub energy_cap: Option<f64>,
    pub xi: Option<Vec<f64>>,
    pub xi_list: Option<Vec<Vec<f64>>>,
    pub tau: f64,
    pub box_radius: f64,
    pub box_samples: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            seed: 0,
            budget: 1000,
            dt: 1e-3,
            horizon: 5.0,
            xi_radius: 3.0,
            sample_count: 50,
            amp_max: 5.0,
            segments: 8,
            energy_cap: None,
            xi: None,
            xi_list: None,
            tau: 0.05,
            box_radius: 10.0,
            box_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub out_dir: String,
    pub format: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            out_dir: "out".into(),
            format: "json".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    #[serde(default)]
    pub gains: Option<GainsSpec>,
    #[serde(default)]
    pub sigma: Option<GainSpec>,
    #[serde(default)]
    pub candidate: Option<CandidateSpec>,
    #[serde(default)]
    pub weight: Option<WeightSpec>,
    #[serde(default)]
    pub comparison: Option<ComparisonSpec>,
    #[serde(default)]
    pub settle: Option<SettleSpec>,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
    /// `--gain NAME=EXPR` command-line overrides, applied after the named
    /// gain is built so kind and range are inherited.
    #[serde(skip)]
    pub gain_overrides: Vec<(String, String)>,
}

/// Everything a subcommand might need, resolved.
pub struct Resolved {
    pub system: ControlSystem,
    pub gains: Option<IIOSSGains>,
    pub sigma: Option<ScalarGain>,
    pub candidate: Option<LyapunovCandidate>,
    pub weight: WeightFunction,
    pub config: RunConfig,
}

impl RunConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).context("config does not parse")?;
        if !(cfg.sampling.dt > 0.0) {
            bail!("sampling.dt must be positive");
        }
        if cfg.sampling.budget < 1 {
            bail!("sampling.budget must be >= 1");
        }
        Ok(cfg)
    }

    pub fn resolve(self) -> Result<Resolved> {
        let bench = match &self.system.benchmark {
            Some(name) => Some(benchmarks::get(name).map_err(|e| anyhow!("{e}"))?),
            None => None,
        };
        let dyn_given = !self.system.dynamics.is_empty();
        let out_given = !self.system.output.is_empty();
        let system = match &bench {
            Some(b) if !dyn_given && !out_given => b.system.clone(),
            _ => {
                let (n, m, bench_p) = match (self.system.n, &bench) {
                    (Some(n), _) => (n, self.system.m.unwrap_or(0), self.system.p),
                    (None, Some(b)) => {
                        let (n, m, p) = b.system.dims();
                        (n, m, Some(p))
                    }
                    (None, None) => bail!("system.n missing"),
                };
                let scope = Scope::new(n, m);
                let f = if dyn_given {
                    self.system
                        .dynamics
                        .iter()
                        .map(|s| parse(s, scope).map_err(|e| anyhow!("dynamics `{s}`: {e}")))
                        .collect::<Result<Vec<_>>>()?
                } else if let Some(b) = &bench {
                    b.system.dynamics().to_vec()
                } else {
                    bail!("system.dynamics missing");
                };
                let h = if out_given {
                    self.system
                        .output
                        .iter()
                        .map(|s| parse(s, scope).map_err(|e| anyhow!("output `{s}`: {e}")))
                        .collect::<Result<Vec<_>>>()?
                } else if let Some(b) = &bench {
                    b.system.output_exprs().to_vec()
                } else {
                    Vec::new()
                };
                let p = if out_given {
                    h.len()
                } else {
                    bench_p.unwrap_or(h.len())
                };
                let input_set = match &self.system.input_box {
                    Some((lo, hi)) => InputSet::Box {
                        lo: lo.clone(),
                        hi: hi.clone(),
                    },
                    None => InputSet::All,
                };
                let name = self.system.name.clone().unwrap_or_else(|| "system".into());
                ControlSystem::new(&name, n, m, p, f, h, input_set)
                    .map_err(|e| anyhow!("system: {e}"))?
            }
        };
        let mut gains = match &self.gains {
            Some(g) => Some(IIOSSGains {
                alpha: g.alpha.build()?,
                beta: g.beta.build()?,
                gamma1: g.gamma1.build()?,
                gamma2: g.gamma2.build()?,
            }),
            None => bench.as_ref().and_then(|b| b.gains.clone()),
        };
        let mut sigma = match &self.sigma {
            Some(s) => Some(s.build()?),
            None => bench.as_ref().and_then(|b| b.sigma.clone()),
        };
        for (name, expr) in &self.gain_overrides {
            let replace = |old: &ScalarGain| -> Result<ScalarGain> {
                ScalarGain::parse(expr, old.kind(), old.domain_cap())
                    .with_context(|| format!("--gain {name}={expr}"))
            };
            match name.as_str() {
                "sigma" => {
                    sigma = Some(match &sigma {
                        Some(old) => replace(old)?,
                        None => ScalarGain::parse(expr, GainKind::Kinf, DEFAULT_DOMAIN_CAP)
                            .with_context(|| format!("--gain {name}={expr}"))?,
                    });
                }
                "alpha" | "beta" | "gamma1" | "gamma2" => {
                    let g = gains.as_mut().ok_or_else(|| {
                        anyhow!("--gain {name} needs an existing gains section or benchmark")
                    })?;
                    match name.as_str() {
                        "alpha" => g.alpha = replace(&g.alpha)?,
                        "gamma1" => g.gamma1 = replace(&g.gamma1)?,
                        "gamma2" => g.gamma2 = replace(&g.gamma2)?,
                        _ => {
                            g.beta = KLFunction::parse(expr, g.beta.t_cap())
                                .with_context(|| format!("--gain {name}={expr}"))?
                        }
                    }
                }
                other => {
                    bail!("--gain names one of alpha, beta, gamma1, gamma2, sigma; got `{other}`")
                }
            }
        }
        let candidate = match &self.candidate {
            Some(c) => {
                let n = system.state_dim();
                let scope = Scope::new(n, 0);
                let v = parse(&c.v, scope).map_err(|e| anyhow!("candidate V `{}`: {e}", c.v))?;
                let grad = match &c.grad_v {
                    Some(list) => Some(
                        list.iter()
                            .map(|s| parse(s, scope).map_err(|e| anyhow!("grad `{s}`: {e}")))
                            .collect::<Result<Vec<_>>>()?,
                    ),
                    None => None,
                };
                Some(
                    LyapunovCandidate::new(
                        v,
                        grad,
                        c.alpha_lower.build()?,
                        c.alpha_upper.build()?,
                        c.sigma1.build()?,
                        c.sigma2.build()?,
                        c.kappa.build()?,
                    )
                    .map_err(|e| anyhow!("candidate: {e}"))?,
                )
            }
            None => bench.as_ref().and_then(|b| b.candidate.clone()),
        };
        let weight = match &self.weight {
            Some(w) => WeightFunction::new(
                parse(&w.k, Scope::scalar()).map_err(|e| anyhow!("weight k: {e}"))?,
                parse(&w.lambda, Scope::scalar()).map_err(|e| anyhow!("weight lambda: {e}"))?,
                w.c1,
                w.c2,
            )
            .map_err(|e| anyhow!("weight: {e}"))?,
            None => WeightFunction::default_weight(),
        };
        Ok(Resolved {
            system,
            gains,
            sigma,
            candidate,
            weight,
            config: self,
        })
    }
}
