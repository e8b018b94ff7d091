//! Replay of one synchronized training round as a timeline of phases.
//!
//! Each client receives its model part, trains (alone, or exchanging
//! activations and gradients with the server), and uploads its model part.
//! The server aggregates once every upload has arrived.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::{assigned_breakdown, ClientSpec};
use crate::optimizer::Plan;
use crate::profile::{FittedCurves, ModelProfile};
use crate::tolerances::MAX_EXPANDED_EVENTS;

/// Client id used for the aggregation event.
pub const SERVER_ID: &str = "server";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Distribute,
    ClientFp,
    UploadSmashed,
    ServerFp,
    ServerBp,
    DownloadGrads,
    ClientBp,
    UploadModel,
    Aggregate,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Distribute => "distribute",
            Phase::ClientFp => "client_fp",
            Phase::UploadSmashed => "upload_smashed",
            Phase::ServerFp => "server_fp",
            Phase::ServerBp => "server_bp",
            Phase::DownloadGrads => "download_grads",
            Phase::ClientBp => "client_bp",
            Phase::UploadModel => "upload_model",
            Phase::Aggregate => "aggregate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub client_id: String,
    pub phase: Phase,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub events: Vec<TraceEvent>,
    pub round_latency_s: f64,
    /// `(client id, n_k / sum n)` in input order.
    pub aggregation_weights: Vec<(String, f64)>,
}

impl RoundTrace {
    /// Finish time of each client's last phase, in input order.
    pub fn client_finish_times(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for e in self.events.iter().filter(|e| e.phase != Phase::Aggregate) {
            match out.iter_mut().find(|(id, _)| *id == e.client_id) {
                Some(slot) => slot.1 = slot.1.max(e.end_s),
                None => out.push((e.client_id.clone(), e.end_s)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Emit one block of training phases per epoch instead of one per session.
    pub expanded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub rounds: Vec<RoundTrace>,
    pub cumulative_s: f64,
}

struct Timeline<'a> {
    id: &'a str,
    clock: f64,
    events: &'a mut Vec<TraceEvent>,
}

impl Timeline<'_> {
    fn push(&mut self, phase: Phase, duration: f64) {
        let start = self.clock;
        self.clock += duration;
        self.events.push(TraceEvent {
            client_id: self.id.to_string(),
            phase,
            start_s: start,
            end_s: self.clock,
        });
    }
}

/// Simulates one round of `plan`.
pub fn simulate_round(
    plan: &Plan,
    clients: &[ClientSpec],
    curves: &FittedCurves,
    profile: &ModelProfile,
    options: SimOptions,
) -> Result<RoundTrace> {
    plan.validate(clients, profile)?;
    if options.expanded {
        let count: u64 = clients
            .iter()
            .map(|c| 2 + 6 * u64::from(c.epochs))
            .sum::<u64>()
            + 1;
        if count > MAX_EXPANDED_EVENTS as u64 {
            return Err(Error::Guard(format!(
                "expanded trace would hold {count} events, limit is {MAX_EXPANDED_EVENTS}"
            )));
        }
    }

    let mut events = Vec::new();
    let mut round = 0.0f64;
    for (p, c) in plan.clients.iter().zip(clients) {
        let b = assigned_breakdown(c, p.cut_layer, p.f_server, curves, profile)?;
        let mut tl = Timeline {
            id: &c.id,
            clock: 0.0,
            events: &mut events,
        };
        tl.push(Phase::Distribute, b.model_transfer_s / 2.0);
        if p.served {
            let blocks = if options.expanded { c.epochs.max(1) } else { 1 };
            let share = 1.0 / f64::from(blocks);
            for _ in 0..blocks {
                tl.push(Phase::ClientFp, b.client_fp_s * share);
                tl.push(Phase::UploadSmashed, b.smashed_up_s * share);
                tl.push(Phase::ServerFp, b.server_fp_s * share);
                tl.push(Phase::ServerBp, b.server_bp_s * share);
                tl.push(Phase::DownloadGrads, b.grads_down_s * share);
                tl.push(Phase::ClientBp, b.client_bp_s * share);
            }
        } else {
            // Local training: forward and backward passes are one block.
            tl.push(Phase::ClientFp, b.client_compute_s());
        }
        tl.push(Phase::UploadModel, b.model_transfer_s / 2.0);
        round = round.max(tl.clock);
    }
    events.push(TraceEvent {
        client_id: SERVER_ID.to_string(),
        phase: Phase::Aggregate,
        start_s: round,
        end_s: round,
    });

    let total: f64 = clients.iter().map(|c| f64::from(c.dataset_size)).sum();
    let aggregation_weights = clients
        .iter()
        .map(|c| (c.id.clone(), f64::from(c.dataset_size) / total))
        .collect();
    Ok(RoundTrace {
        events,
        round_latency_s: round,
        aggregation_weights,
    })
}

/// Simulates `rounds` identical rounds.
pub fn simulate_campaign(
    plan: &Plan,
    clients: &[ClientSpec],
    curves: &FittedCurves,
    profile: &ModelProfile,
    rounds: usize,
    options: SimOptions,
) -> Result<Campaign> {
    if rounds == 0 {
        return Err(Error::Domain("at least one round is required".into()));
    }
    let trace = simulate_round(plan, clients, curves, profile, options)?;
    let traces = vec![trace; rounds];
    let cumulative_s = traces.iter().map(|t| t.round_latency_s).sum();
    Ok(Campaign {
        rounds: traces,
        cumulative_s,
    })
}

/// Writes `client_id,phase,start_s,end_s` rows.
pub fn write_trace_csv<W: Write>(trace: &RoundTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["client_id", "phase", "start_s", "end_s"])?;
    for e in &trace.events {
        w.write_record([
            e.client_id.as_str(),
            e.phase.as_str(),
            &e.start_s.to_string(),
            &e.end_s.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes `client_id,total_s,weight` rows, one per client.
pub fn write_summary_csv<W: Write>(trace: &RoundTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["client_id", "total_s", "weight"])?;
    for ((id, total), (_, weight)) in trace
        .client_finish_times()
        .iter()
        .zip(&trace.aggregation_weights)
    {
        w.write_record([id.as_str(), &total.to_string(), &weight.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
