//! CSV tables written by the commands.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use sfl_core::latency::LatencyBreakdown;
use sfl_core::scenario::GIGA;
use sfl_core::{ClientSpec, ModelProfile, Plan};

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn num(x: f64) -> String {
    x.to_string()
}

const BREAKDOWN_COLUMNS: [&str; 8] = [
    "model_transfer_s",
    "client_fp_s",
    "smashed_up_s",
    "server_fp_s",
    "server_bp_s",
    "grads_down_s",
    "client_bp_s",
    "total_s",
];

fn breakdown_cells(b: &LatencyBreakdown) -> [String; 8] {
    [
        num(b.model_transfer_s),
        num(b.client_fp_s),
        num(b.smashed_up_s),
        num(b.server_fp_s),
        num(b.server_bp_s),
        num(b.grads_down_s),
        num(b.client_bp_s),
        num(b.total_s),
    ]
}

/// One row per client: group, cut-layer, allocation and latency breakdown,
/// with the local-only latency for comparison.
pub fn write_plan_csv(
    path: &Path,
    plan: &Plan,
    clients: &[ClientSpec],
    profile: &ModelProfile,
) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["client_id", "group", "cut_layer", "f_server_gflops"];
    header.extend(BREAKDOWN_COLUMNS);
    header.push("fedavg_total_s");
    w.write_record(&header)?;
    for (p, c) in plan.clients.iter().zip(clients) {
        let fedavg =
            sfl_core::latency_fedavg(c, profile.total_model_bits, profile.total_flops).total_s;
        let mut row = vec![
            p.id.clone(),
            if p.served { "sfl" } else { "fedavg" }.to_string(),
            p.cut_layer.to_string(),
            num(p.f_server / GIGA),
        ];
        row.extend(breakdown_cells(&p.breakdown));
        row.push(num(fedavg));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub struct BudgetRow {
    pub f_max_gflops: f64,
    pub plan: Plan,
}

pub fn write_budget_sweep(path: &Path, rows: &[BudgetRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "f_max_gflops",
        "objective_s",
        "theta",
        "served",
        "iterations",
        "converged",
    ])?;
    for r in rows {
        let served = r.plan.clients.iter().filter(|c| c.served).count();
        w.write_record([
            num(r.f_max_gflops),
            num(r.plan.objective),
            r.plan.theta.to_string(),
            served.to_string(),
            (r.plan.iterations.len() - 1).to_string(),
            r.plan.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_layer_sweep(path: &Path, rows: &[(usize, LatencyBreakdown)]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["cut_layer"];
    header.extend(BREAKDOWN_COLUMNS);
    header.extend(["communication_s", "client_compute_s", "server_compute_s"]);
    w.write_record(&header)?;
    for (l, b) in rows {
        let mut row = vec![l.to_string()];
        row.extend(breakdown_cells(b));
        row.push(num(b.model_transfer_s + b.intermediate_s()));
        row.push(num(b.client_compute_s()));
        row.push(num(b.server_compute_s()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
