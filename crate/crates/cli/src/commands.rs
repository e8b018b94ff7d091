use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use sfl_core::latency::breakdown_piecewise;
use sfl_core::optimizer::fedavg_objective;
use sfl_core::scenario::{
    load_profile, load_timing, pick_clients, read_json, synthesize_clients, write_json,
    ClientEntry, ClientPool, ScenarioOptions, ServerEntry, SweepParameter, SweepSpec, GIGA,
};
use sfl_core::sim::{write_summary_csv, write_trace_csv};
use sfl_core::tolerances::rel_close;
use sfl_core::{
    fit_curves, objective, optimize, simulate_campaign, synthesize_profile, synthesize_timing,
    LoadedScenario, OptimizerOptions, Plan, Scenario, ServerSpec, SimOptions, SynthesisSpec,
};

use crate::exit::Inconsistency;
use crate::output::{write_budget_sweep, write_layer_sweep, write_plan_csv, BudgetRow};
use crate::OptimizerFlags;

pub const PROFILE_SEED: u64 = 2024;
pub const CLIENT_SEED: u64 = 144;
const TIMING_SAMPLES: usize = 1500;
const TIMING_MEAN_FP_S: f64 = 0.05;
const TIMING_NOISE: f64 = 0.1;
/// Tolerance between simulated and analytic round latency.
const REPLAY_REL: f64 = 1e-9;

fn optimizer_options(loaded: &LoadedScenario, flags: &OptimizerFlags) -> OptimizerOptions {
    let mut opts = if flags.strict_paper_mode {
        OptimizerOptions {
            max_iters: loaded.options.max_iters,
            conv_tol: loaded.options.conv_tol,
            ..OptimizerOptions::strict()
        }
    } else {
        loaded.options.clone()
    };
    if let Some(n) = flags.max_iters {
        opts.max_iters = n;
    }
    if let Some(t) = flags.conv_tol {
        opts.conv_tol = t;
    }
    opts
}

pub fn fit(profile: &Path, timing: &Path, out: &Path) -> Result<()> {
    let p = load_profile(profile)?;
    let t = load_timing(timing)?;
    let c = fit_curves(&p, &t)?;
    write_json(out, &c)?;
    let r2 = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("model size    alpha={:.6e}  r2={}", c.alpha, r2(c.r2_size));
    println!(
        "training      beta={:.6e}  kappa={:.4}  r2={}",
        c.beta,
        c.kappa,
        r2(c.r2_flops)
    );
    println!(
        "smashed data  gamma1={:.6e}  gamma2={:.4}  r2={}",
        c.gamma1,
        c.gamma2,
        r2(c.r2_smashed)
    );
    Ok(())
}

pub fn plan(scenario: &Path, out: &Path, csv: Option<&Path>, flags: &OptimizerFlags) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let opts = optimizer_options(&s, flags);
    let plan = optimize(&s.clients, &s.curves, &s.profile, &s.server, &opts)?;
    write_json(out, &plan)?;
    let csv_path = csv
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("csv"));
    write_plan_csv(&csv_path, &plan, &s.clients, &s.profile)?;
    let served = plan.clients.iter().filter(|c| c.served).count();
    println!(
        "round latency {:.3} s ({} of {} clients served, theta {}), all-local {:.3} s",
        plan.objective,
        served,
        plan.clients.len(),
        plan.theta,
        fedavg_objective(&s.clients, &s.profile)
    );
    println!(
        "{} iterations, {}",
        plan.iterations.len() - 1,
        if plan.converged {
            "converged"
        } else {
            "iteration cap reached"
        }
    );
    Ok(())
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());
    out.with_file_name(format!("{stem}_summary.csv"))
}

pub fn simulate(
    scenario: &Path,
    plan_path: &Path,
    out: &Path,
    summary: Option<&Path>,
    rounds: usize,
    expanded: bool,
) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let plan: Plan = read_json(plan_path)?;
    let analytic = objective(&plan, &s.clients, &s.curves, &s.profile)?;
    if !rel_close(analytic, plan.objective, REPLAY_REL) {
        return Err(Inconsistency(format!(
            "plan records round latency {} s but the scenario gives {analytic} s",
            plan.objective
        ))
        .into());
    }
    let campaign = simulate_campaign(
        &plan,
        &s.clients,
        &s.curves,
        &s.profile,
        rounds,
        SimOptions { expanded },
    )?;
    let trace = &campaign.rounds[0];
    if !rel_close(trace.round_latency_s, analytic, REPLAY_REL) {
        return Err(Inconsistency(format!(
            "simulated round latency {} s differs from analytic {analytic} s",
            trace.round_latency_s
        ))
        .into());
    }
    let file = |p: &Path| fs::File::create(p).with_context(|| format!("creating {}", p.display()));
    write_trace_csv(trace, file(out)?)?;
    let summary = summary
        .map(Path::to_path_buf)
        .unwrap_or_else(|| summary_path(out));
    write_summary_csv(trace, file(&summary)?)?;
    println!(
        "round latency {:.6} s simulated, {:.6} s analytic",
        trace.round_latency_s, analytic
    );
    println!(
        "{rounds} round(s): {:.6} s cumulative",
        campaign.cumulative_s
    );
    Ok(())
}

pub fn sweep_budget(scenario: &Path, out: &Path, flags: &OptimizerFlags) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let Some(budgets) = s.sweep_budgets() else {
        bail!(sfl_core::Error::Scenario(
            "no sweep block; add one or use --layers".into()
        ));
    };
    let opts = optimizer_options(&s, flags);
    let rows = budgets
        .par_iter()
        .map(|&f_max| {
            let plan = optimize(
                &s.clients,
                &s.curves,
                &s.profile,
                &ServerSpec { f_max },
                &opts,
            )?;
            Ok(BudgetRow {
                f_max_gflops: f_max / GIGA,
                plan,
            })
        })
        .collect::<Result<Vec<_>, sfl_core::Error>>()?;
    write_budget_sweep(out, &rows)?;
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    println!(
        "{} budgets: {:.3} s at {} GFLOPs/s to {:.3} s at {} GFLOPs/s",
        rows.len(),
        first.plan.objective,
        first.f_max_gflops,
        last.plan.objective,
        last.f_max_gflops
    );
    Ok(())
}

pub fn sweep_layers(
    scenario: &Path,
    out: &Path,
    client: &str,
    f_server: Option<f64>,
) -> Result<()> {
    let s = Scenario::load(scenario)?;
    let Some(c) = s.clients.iter().find(|c| c.id == client) else {
        bail!(sfl_core::Error::Scenario(format!("no client `{client}`")));
    };
    let f = match f_server {
        Some(g) if g.is_finite() && g > 0.0 => g * GIGA,
        Some(g) => bail!(sfl_core::Error::Domain(format!(
            "--f-server {g} must be positive"
        ))),
        None => s.server.f_max / s.clients.len() as f64,
    };
    let rows = (c.l_min..=s.profile.layer_count)
        .map(|l| Ok((l, breakdown_piecewise(c, l, f, &s.curves, &s.profile)?)))
        .collect::<Result<Vec<_>, sfl_core::Error>>()?;
    write_layer_sweep(out, &rows)?;
    let (best, b) = rows
        .iter()
        .min_by(|a, b| a.1.total_s.total_cmp(&b.1.total_s))
        .expect("at least one layer");
    let local = rows.last().expect("at least one layer").1.total_s;
    println!(
        "client {client}: fastest cut-layer {best} at {:.3} s; local-only {:.3} s",
        b.total_s, local
    );
    Ok(())
}

fn geometric(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| {
            let v = lo * (hi / lo).powf(i as f64 / (points - 1) as f64);
            (v * 10.0).round() / 10.0
        })
        .collect()
}

pub fn synth(out_dir: &Path, seed: u64, client_seed: u64) -> Result<()> {
    let profiles = out_dir.join("profiles");
    let scenarios = out_dir.join("scenarios");
    for d in [&profiles, &scenarios] {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let spec = SynthesisSpec::effnetv2_like(seed);
    let profile = synthesize_profile(&spec)?;
    write_json(&profiles.join("effnetv2_synthetic.json"), &profile)?;
    let timing = synthesize_timing(
        spec.kappa,
        TIMING_SAMPLES,
        TIMING_MEAN_FP_S,
        TIMING_NOISE,
        seed,
    )?;
    write_json(&profiles.join("effnetv2_timing.json"), &timing)?;

    let base = |description: &str, clients: Vec<ClientEntry>, f_max: f64| Scenario {
        description: Some(description.to_string()),
        profile_path: "../profiles/effnetv2_synthetic.json".into(),
        timing_path: Some("../profiles/effnetv2_timing.json".into()),
        curves: None,
        clients,
        server: ServerEntry {
            f_max_gflops: f_max,
        },
        options: ScenarioOptions::default(),
        sweep: None,
    };

    let single = base(
        "One client: 100 GFLOPs/s device on a 4 Mb/s link, server with 1484 GFLOPs/s",
        vec![ClientEntry {
            id: "c01".into(),
            f_local_gflops: 100.0,
            rate_mbps: 4.0,
            batch: 32,
            epochs: 20,
            dataset_size: 3396,
            l_min: 1,
        }],
        1484.0,
    );
    write_json(&scenarios.join("fig6_single_client.json"), &single)?;

    let pool = ClientPool::default();
    let candidates = synthesize_clients(&pool, 30, client_seed);
    let picked = pick_clients(&candidates, 10, client_seed)?;
    let mut ten = base(
        &format!(
            "10 of 30 synthetic heterogeneous clients (seed {client_seed}), 3000 GFLOPs/s server"
        ),
        picked,
        3000.0,
    );
    ten.sweep = Some(SweepSpec {
        parameter: SweepParameter::FMax,
        values: geometric(100.0, 9000.0, 25),
    });
    write_json(&scenarios.join("fig7_ten_clients.json"), &ten)?;
    println!("wrote {} and {}", profiles.display(), scenarios.display());
    Ok(())
}
