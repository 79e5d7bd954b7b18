//! Subcommand implementations. Every command writes a run report (JSON)
//! into the output directory and returns whether a violation was found;
//! configuration and evaluation failures surface as errors.

use crate::config::Resolved;
use anyhow::{anyhow, bail, Context, Result};
use iioss_core::bounds::{self, FalsifyOptions};
use iioss_core::compare;
use iioss_core::funclib::{settling_time_map, KLFunction};
use iioss_core::lyap;
use iioss_core::report::Verdict;
use iioss_core::sampling;
use iioss_core::sim::{self, InputSignal};
use iioss_core::valfun;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub struct RunMeta {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub overrides: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct RunReport<'a> {
    tool: &'static str,
    version: &'a str,
    subcommand: &'a str,
    config_hash: &'a str,
    seed: u64,
    overrides: &'a BTreeMap<String, String>,
    reports: Vec<serde_json::Value>,
}

pub struct Outcome {
    pub violation: bool,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn finish(
    resolved: &Resolved,
    meta: &RunMeta,
    subcommand: &str,
    out_dir: &Path,
    reports: Vec<serde_json::Value>,
) -> Result<Outcome> {
    let violation = reports.iter().any(|r| {
        r.get("verdict").and_then(|v| v.as_str()) == Some("violated")
            || r.get("agree").and_then(|v| v.as_bool()) == Some(false)
    });
    let run = RunReport {
        tool: "iioss-lab",
        version: &meta.version,
        subcommand,
        config_hash: &meta.config_hash,
        seed: meta.seed,
        overrides: &meta.overrides,
        reports,
    };
    let json = serde_json::to_string_pretty(&run)?;
    write_file(&out_dir.join(format!("{subcommand}_report.json")), &json)?;
    let _ = resolved;
    Ok(Outcome { violation })
}

fn to_value<T: Serialize>(report: &T) -> serde_json::Value {
    serde_json::to_value(report).expect("reports serialize")
}

fn require_gains(resolved: &Resolved) -> Result<&iioss_core::bounds::IIOSSGains> {
    resolved.gains.as_ref().ok_or_else(|| {
        anyhow!("this subcommand needs a `gains` section (or a benchmark that ships one)")
    })
}

fn sampled_pairs(resolved: &Resolved) -> Vec<(Vec<f64>, InputSignal)> {
    let s = &resolved.config.sampling;
    let (n, m, _) = resolved.system.dims();
    sampling::sample_pairs(
        s.seed,
        s.sample_count,
        n,
        m,
        s.xi_radius,
        s.amp_max,
        s.horizon,
        s.dt,
        s.segments,
    )
}

pub fn simulate(resolved: &Resolved, meta: &RunMeta, out_dir: &Path) -> Result<Outcome> {
    let s = &resolved.config.sampling;
    let (n, m, _) = resolved.system.dims();
    let xi = s.xi.clone().unwrap_or_else(|| {
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        v
    });
    if xi.len() != n {
        bail!("--xi has {} entries, system needs {n}", xi.len());
    }
    let u = InputSignal::zero(m, s.horizon);
    let traj = sim::integrate(&resolved.system, &xi, &u, s.dt, s.horizon)?;
    write_file(&out_dir.join("trajectory.csv"), &traj.to_csv())?;
    let mut notes = Vec::new();
    if let Some(t) = traj.diverged_at {
        notes.push(format!("trajectory diverged at t = {t}"));
    }
    let summary = serde_json::json!({
        "check": "simulate",
        "verdict": if traj.diverged_at.is_some() { "violated" } else { "holds" },
        "samples": traj.len(),
        "final_state": traj.final_state(),
        "notes": notes,
    });
    finish(resolved, meta, "simulate", out_dir, vec![summary])
}

pub fn check_iioss(resolved: &Resolved, meta: &RunMeta, out_dir: &Path) -> Result<Outcome> {
    let gains = require_gains(resolved)?;
    let s = &resolved.config.sampling;
    let pairs = sampled_pairs(resolved);
    let running = bounds::check_iioss(&resolved.system, gains, &pairs, s.dt, s.horizon)?;
    let whole = bounds::check_iioss_alternate(&resolved.system, gains, &pairs, s.dt, s.horizon)?;
    println!(
        "check_iioss: {:?} (margin {:.6e})",
        running.verdict, running.margin
    );
    println!(
        "check_iioss_alternate: {:?} (margin {:.6e})",
        whole.verdict, whole.margin
    );
    finish(
        resolved,
        meta,
        "check-iioss",
        out_dir,
        vec![to_value(&running), to_value(&whole)],
    )
}

pub fn falsify(resolved: &Resolved, meta: &RunMeta, out_dir: &Path) -> Result<Outcome> {
    let gains = require_gains(resolved)?;
    let s = &resolved.config.sampling;
    let opts = FalsifyOptions {
        budget: s.budget,
        seed: s.seed,
        dt: s.dt,
        horizon: s.horizon,
        xi_radius: s.xi_radius,
        amp_max: s.amp_max,
        energy_cap: s.energy_cap,
        segments: s.segments,
    };
    let report = bounds::falsify(&resolved.system, gains, &opts)?;
    println!(
        "falsify: {:?} after {} candidates (margin {:.6e})",
        report.verdict, report.samples_evaluated, report.margin
    );
    if report.verdict == Verdict::Violated {
        if let Some(witness) = &report.witness {
            if let Some(input) = &witness.input {
                write_file(
                    &out_dir.join("witness_input.json"),
                    &serde_json::to_string_pretty(input)?,
                )?;
            }
        }
    }
    finish(resolved, meta, "falsify", out_dir, vec![to_value(&report)])
}

pub fn observe(resolved: &Resolved, meta: &RunMeta, out_dir: &Path) -> Result<Outcome> {
    let gains = require_gains(resolved)?;
    let s = &resolved.config.sampling;
    let pairs = sampled_pairs(resolved);
    let mut reports = Vec::new();
    let mut worst = f64::MIN;
    for (i, (xi, u)) in pairs.iter().enumerate() {
        let (state, report) =
            bounds::run_norm_observer(&resolved.system, gains, xi, u, s.dt, s.horizon)?;
        if i == 0 {
            let mut csv = String::from("t,p\n");
            for (t, p) in state.times.iter().zip(&state.p) {
                csv.push_str(&format!("{t},{p}\n"));
            }
            write_file(&out_dir.join("observer.csv"), &csv)?;
        }
        worst = worst.max(report.margin);
        reports.push(to_value(&report));
    }
    println!("observe: {} runs, worst margin {worst:.6e}", pairs.len());
    finish(resolved, meta, "observe", out_dir, reports)
}

pub fn check_lyapunov(resolved: &Resolved, meta: &RunMeta, out_dir: &Path) -> Result<Outcome> {
    let cand = resolved
        .candidate
        .as_ref()
        .ok_or_else(|| anyhow!("this subcommand needs a `candidate` section"))?;
    let s = &resolved.config.sampling;
    let (n, m, _) = resolved.system.dims();
    let sandwich = lyap::check_sandwich(cand, s.box_radius, s.box_samples)?;

    let points: Vec<(Vec<f64>, Vec<f64>)> = if n + m <= 8 {
        sampling::halton_cube(s.box_samples, n + m, s.box_radius)
            .into_iter()
            .map(|p| (p[..n].to_vec(), p[n..].to_vec()))
            .collect()
    } else {
        let mut rng = sampling::rng_from_seed(s.seed);
        (0..s.box_samples)
            .map(|_| {
                (
                    sampling::sample_ball(&mut rng, n, s.box_radius),
                    sampling::sample_ball(&mut rng, m, s.box_radius),
                )
            })
            .collect()
    };
    let differential = lyap::check_decrease_differential(cand, &resolved.system, &points)?;
    let pairs = sampled_pairs(resolved);
    let integral = lyap::check_decrease_integral(cand, &resolved.system, &pairs, s.dt, s.horizon)?;
    let cross = lyap::cross_check_prop26(cand, &resolved.system, &pairs, s.dt, s.horizon)?;
    for (name, r) in [
        ("sandwich", &sandwich),
        ("differential", &differential),
        ("integral", &integral),
    ] {
        println!("{name}: {:?} (margin {:.6e})", r.verdict, r.margin);
    }
    println!("cross-check agreement: {:?}", cross.agree);
    finish(
        resolved,
        meta,
        "check-lyapunov",
        out_dir,
        vec![
            to_value(&sandwich),
            to_value(&differential),
            to_value(&integral),
            to_value(&cross),
        ],
    )
}

fn beta_table_csv(beta: &KLFunction) -> Option<String> {
    let table = beta.table()?;
    let mut csv = String::from("s,t,beta\n");
    for (i, s) in table.s_grid().iter().enumerate() {
        for (j, t) in table.t_grid().iter().enumerate() {
            csv.push_str(&format!("{s},{t},{}\n", table.values()[i][j]));
        }
    }
    Some(csv)
}

pub fn sufficiency(resolved: &Resolved, meta: &RunMeta, out_dir: &Path) -> Result<Outcome> {
    let cand = resolved
        .candidate
        .as_ref()
        .ok_or_else(|| anyhow!("this subcommand needs a `candidate` section"))?;
    let s = &resolved.config.sampling;
    let pairs = sampled_pairs(resolved);
    let (bound, report) =
        compare::sufficiency_pipeline(cand, &resolved.system, &pairs, s.dt, s.horizon, s.seed)?;
    println!(
        "sufficiency: {:?} (margin {:.6e}, flow speed {})",
        report.verdict, report.margin, bound.flow_speed
    );
    if let Some(csv) = beta_table_csv(&bound.beta_out) {
        write_file(&out_dir.join("beta_table.csv"), &csv)?;
    }
    finish(
        resolved,
        meta,
        "sufficiency",
        out_dir,
        vec![to_value(&report)],
    )
}

pub fn compare_cmd(resolved: &Resolved, meta: &RunMeta, out_dir: &Path) -> Result<Outcome> {
    let spec = resolved
        .config
        .comparison
        .as_ref()
        .ok_or_else(|| anyhow!("this subcommand needs a `comparison` section"))?;
    let s = &resolved.config.sampling;
    let alpha = spec.alpha.build()?;
    let s_grid: Vec<f64> = (0..=32).map(|i| spec.s_max * i as f64 / 32.0).collect();
    let t_grid: Vec<f64> = (0..=32).map(|i| s.horizon * i as f64 / 32.0).collect();
    let beta = compare::kl_bound(&alpha, &s_grid, &t_grid).map_err(|e| anyhow!("{e}"))?;
    let gate = compare::verify_kl_bound(
        &beta,
        &alpha,
        spec.instances,
        s.seed,
        spec.s_max,
        s.horizon,
        s.dt,
    )?;
    println!("kl gate: {:?} (margin {:.6e})", gate.verdict, gate.margin);
    if let Some(csv) = beta_table_csv(&beta) {
        write_file(&out_dir.join("beta_table.csv"), &csv)?;
    }
    finish(resolved, meta, "compare", out_dir, vec![to_value(&gate)])
}

pub fn estimate_v0(resolved: &Resolved, meta: &RunMeta, out_dir: &Path) -> Result<Outcome> {
    let gains = require_gains(resolved)?;
    let sigma = resolved
        .sigma
        .as_ref()
        .ok_or_else(|| anyhow!("this subcommand needs a `sigma` envelope gain"))?;
    let s = &resolved.config.sampling;
    let (n, _, _) = resolved.system.dims();
    let states: Vec<Vec<f64>> = if let Some(list) = &s.xi_list {
        list.clone()
    } else if let Some(xi) = &s.xi {
        vec![xi.clone()]
    } else {
        let mut rng = sampling::rng_from_seed(s.seed);
        (0..s.sample_count.min(20))
            .map(|_| sampling::sample_ball(&mut rng, n, s.xi_radius))
            .collect()
    };
    let mut csv = String::new();
    for i in 1..=n {
        csv.push_str(&format!("xi{i},"));
    }
    csv.push_str("V0,lower,upper,witness_time\n");
    let mut reports = Vec::new();
    let mut sandwich_broken = false;
    for (i, xi) in states.iter().enumerate() {
        if xi.len() != n {
            bail!("state {i} has {} entries, system needs {n}", xi.len());
        }
        let est = valfun::estimate_v0(
            &resolved.system,
            gains,
            sigma,
            &resolved.weight,
            xi,
            s.budget,
            s.seed.wrapping_add(i as u64),
            s.dt,
        )?;
        for v in xi {
            csv.push_str(&format!("{v},"));
        }
        csv.push_str(&format!(
            "{},{},{},{}\n",
            est.value, est.lower_bound, est.upper_bound, est.witness_time
        ));
        if est.value > est.upper_bound * (1.0 + 1e-6) {
            sandwich_broken = true;
        }
        write_file(
            &out_dir.join(format!("v0_witness_{i}.json")),
            &serde_json::to_string_pretty(&est.witness_input)?,
        )?;
        reports.push(serde_json::json!({
            "check": "estimate_v0",
            "verdict": if est.value > est.upper_bound * (1.0 + 1e-6) { "violated" } else { "holds" },
            "xi": xi,
            "value": est.value,
            "lower_bound": est.lower_bound,
            "upper_bound": est.upper_bound,
            "witness_time": est.witness_time,
            "sample_budget": est.sample_budget,
        }));
    }
    write_file(&out_dir.join("v0_estimates.csv"), &csv)?;
    println!(
        "estimate-v0: {} states, sandwich {}",
        states.len(),
        if sandwich_broken {
            "VIOLATED"
        } else {
            "respected"
        }
    );
    finish(resolved, meta, "estimate-v0", out_dir, reports)
}

pub fn settle(resolved: &Resolved, meta: &RunMeta, out_dir: &Path) -> Result<Outcome> {
    let spec = resolved
        .config
        .settle
        .as_ref()
        .ok_or_else(|| anyhow!("this subcommand needs a `settle` section"))?;
    let beta = match &spec.beta {
        Some(b) => b.build()?,
        None => require_gains(resolved)?.beta.clone(),
    };
    let lin = |lo: f64, hi: f64, count: usize| -> Vec<f64> {
        (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count.max(2) - 1) as f64)
            .collect()
    };
    let r_grid = lin(spec.r_min, spec.r_max, spec.r_count);
    let eps_grid = lin(spec.eps_min, spec.eps_max, spec.eps_count);
    let map = settling_time_map(&beta, &r_grid, &eps_grid, spec.t_max)?;
    write_file(&out_dir.join("settling.csv"), &map.to_csv())?;
    let clauses = map.check_table();
    let all_pass = clauses.iter().all(|c| c.passed);
    for c in &clauses {
        println!(
            "settle {}: {}",
            c.clause,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    let report = serde_json::json!({
        "check": "settling_time_map",
        "verdict": if all_pass { "holds" } else { "violated" },
        "zero_time_entries": map.zero_time_entries().len(),
        "clauses": clauses.iter().map(|c| serde_json::json!({
            "clause": c.clause,
            "passed": c.passed,
            "violation_at": c.violation_at,
        })).collect::<Vec<_>>(),
    });
    finish(resolved, meta, "settle", out_dir, vec![report])
}

pub fn list_benchmarks() -> Result<()> {
    println!(
        "{:<24} {:>5} {:>5} {:>5}  {:<28} provenance",
        "name", "n", "m", "p", "ships"
    );
    for bench in iioss_core::benchmarks::registry().map_err(|e| anyhow!("{e}"))? {
        let (n, m, p) = bench.system.dims();
        let mut ships = Vec::new();
        if bench.gains.is_some() {
            ships.push("gains");
        }
        if bench.candidate.is_some() {
            ships.push("candidate");
        }
        if bench.envelope.is_some() {
            ships.push("envelope");
        }
        println!(
            "{:<24} {:>5} {:>5} {:>5}  {:<28} {}",
            bench.name,
            n,
            m,
            p,
            ships.join("+"),
            bench.provenance
        );
    }
    Ok(())
}

pub fn ensure_out_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(path.to_path_buf())
}
