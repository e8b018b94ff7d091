//! Server compute allocation for fixed cut-layers.
//!
//! Clients are ranked by the latency they would have training alone. A
//! suffix of that ranking (the slowest clients) shares the server budget so
//! that all of them finish at the same time `T_theta`; the rest train alone.
//! For a served client the allocation reaching a target `T` is
//!
//! ```text
//! f^S = load / (T - floor)
//! ```
//!
//! where `floor` is its latency with unlimited server compute and `load` its
//! server-side FLOPs. Summing over the served set gives the demand curve
//! `H(T)`, strictly decreasing and convex, and `T_theta` solves `H(T) = F^max`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ThetaDiagnostic};
use crate::latency::{latency_fedavg, latency_split, server_free_latency, server_load, ClientSpec};
use crate::profile::{FittedCurves, ModelProfile};
use crate::tolerances::MAX_BISECTIONS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    /// Total server compute, FLOPs/s.
    pub f_max: f64,
}

impl ServerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.f_max.is_finite() && self.f_max > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "server budget {} must be positive and finite",
                self.f_max
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    /// Client indices sorted by local-only latency, ascending.
    pub order: Vec<usize>,
    /// 1-based position in `order` of the first served client; `K + 1` when
    /// nobody is served.
    pub theta: usize,
    /// Server compute per client (input order), FLOPs/s.
    pub f_server: Vec<f64>,
    pub served: Vec<bool>,
    /// Common finishing time of the served clients; the objective when
    /// nobody is served.
    pub t_theta: f64,
    /// Round latency, the maximum of `per_client_latency`.
    pub objective: f64,
    pub per_client_latency: Vec<f64>,
    /// Latency of each client training alone.
    pub local_latency: Vec<f64>,
}

impl AllocationResult {
    pub fn served_count(&self) -> usize {
        self.served.iter().filter(|s| **s).count()
    }

    pub fn budget_used(&self) -> f64 {
        self.f_server.iter().sum()
    }
}

/// Client indices ordered by local-only latency; ties keep input order.
pub fn sort_by_local_latency(clients: &[ClientSpec], profile: &ModelProfile) -> Vec<usize> {
    let local: Vec<f64> = clients
        .iter()
        .map(|c| latency_fedavg(c, profile.total_model_bits, profile.total_flops).total_s)
        .collect();
    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.sort_by(|a, b| local[*a].total_cmp(&local[*b]));
    order
}

fn check_served_layer(client: &ClientSpec, l: usize, layer_count: usize) -> Result<()> {
    if l < client.l_min || l >= layer_count {
        return Err(Error::Domain(format!(
            "served client `{}` needs a cut-layer in [{}, {layer_count}), got {l}",
            client.id, client.l_min
        )));
    }
    Ok(())
}

/// Server compute that makes `client` finish exactly at `t_theta`.
pub fn closed_form_f_server(
    client: &ClientSpec,
    l: usize,
    curves: &FittedCurves,
    profile: &ModelProfile,
    t_theta: f64,
) -> Result<f64> {
    check_served_layer(client, l, profile.layer_count)?;
    let floor = server_free_latency(client, l as f64, curves);
    let slack = t_theta - floor;
    if slack.is_nan() || slack <= 0.0 {
        return Err(Error::InfeasibleTarget { t_theta, floor });
    }
    Ok(server_load(client, l as f64, curves, profile.layer_count) / slack)
}

/// Aggregate server demand `H(T)` of a served set.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandCurve {
    /// `(load, floor)` per served client.
    terms: Vec<(f64, f64)>,
}

impl DemandCurve {
    pub fn new(
        clients: &[ClientSpec],
        cut_layers: &[usize],
        curves: &FittedCurves,
        profile: &ModelProfile,
    ) -> Result<Self> {
        if clients.len() != cut_layers.len() {
            return Err(Error::LengthMismatch(format!(
                "{} clients but {} cut-layers",
                clients.len(),
                cut_layers.len()
            )));
        }
        let layers = profile.layer_count;
        let terms = clients
            .iter()
            .zip(cut_layers)
            .map(|(c, &l)| {
                check_served_layer(c, l, layers)?;
                Ok((
                    server_load(c, l as f64, curves, layers),
                    server_free_latency(c, l as f64, curves),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DemandCurve { terms })
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest server-independent latency; `H` blows up as `T` approaches it.
    pub fn max_floor(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.1)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `H(T)`; infinite at or below the largest floor.
    pub fn demand(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|(load, floor)| {
                let s = t - floor;
                if s > 0.0 {
                    load / s
                } else {
                    f64::INFINITY
                }
            })
            .sum()
    }

    /// `dH/dT`.
    pub fn slope(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|(load, floor)| -load / (t - floor).powi(2))
            .sum()
    }

    /// `d^2H/dT^2`.
    pub fn curvature(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|(load, floor)| 2.0 * load / (t - floor).powi(3))
            .sum()
    }

    /// Solves `H(T) = f_max`. The returned `T` satisfies `H(T) <= f_max`.
    pub fn solve(&self, f_max: f64) -> Result<f64> {
        if f_max.is_nan() || f_max <= 0.0 {
            return Err(Error::Domain(format!("budget {f_max} must be positive")));
        }
        match self.terms.as_slice() {
            [] => Err(Error::Domain("served set is empty".into())),
            [(load, floor)] => Ok(floor + load / f_max),
            _ => {
                let total: f64 = self.terms.iter().map(|t| t.0).sum();
                let mut lo = self.max_floor();
                // Each term is at most load_k / (total / f_max), so H(hi) <= f_max.
                let mut hi = lo + total / f_max;
                for _ in 0..MAX_BISECTIONS {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.demand(mid) > f_max {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(hi)
            }
        }
    }
}

/// Equalized finishing time of `served` clients sharing `f_max`.
pub fn solve_t_theta(
    served: &[ClientSpec],
    cut_layers: &[usize],
    curves: &FittedCurves,
    profile: &ModelProfile,
    f_max: f64,
) -> Result<f64> {
    if served.is_empty() {
        return Err(Error::Domain("served set is empty".into()));
    }
    DemandCurve::new(served, cut_layers, curves, profile)?.solve(f_max)
}

/// Optimal server allocation for fixed cut-layers.
///
/// Scans every split point `theta` of the local-latency ranking, serving
/// the suffix and solving for its common finishing time, and keeps the
/// split with the smallest round latency (smaller `theta` on ties). Clients
/// whose cut-layer is `L` are never served.
pub fn allocate(
    clients: &[ClientSpec],
    cut_layers: &[usize],
    curves: &FittedCurves,
    profile: &ModelProfile,
    server: &ServerSpec,
) -> Result<AllocationResult> {
    if clients.is_empty() {
        return Err(Error::Domain("no clients".into()));
    }
    if clients.len() != cut_layers.len() {
        return Err(Error::LengthMismatch(format!(
            "{} clients but {} cut-layers",
            clients.len(),
            cut_layers.len()
        )));
    }
    server.validate()?;
    let layers = profile.layer_count;
    for (c, &l) in clients.iter().zip(cut_layers) {
        c.validate(layers)?;
        if l < c.l_min || l > layers {
            return Err(Error::Domain(format!(
                "cut-layer {l} outside [{}, {layers}] for client `{}`",
                c.l_min, c.id
            )));
        }
    }

    let k = clients.len();
    let local: Vec<f64> = clients
        .iter()
        .map(|c| latency_fedavg(c, profile.total_model_bits, profile.total_flops).total_s)
        .collect();
    let order = sort_by_local_latency(clients, profile);

    let mut diagnostics = Vec::new();
    // (objective, theta, t_theta, served indices)
    let mut best: Option<(f64, usize, f64, Vec<usize>)> = None;
    for theta in 1..=k + 1 {
        let (suffix_served, unserved): (Vec<usize>, Vec<usize>) = order
            .iter()
            .enumerate()
            .map(|(pos, &idx)| (pos + 1 >= theta && cut_layers[idx] < layers, idx))
            .partition::<Vec<_>, _>(|(s, _)| *s)
            .into_iter_pair();
        let unserved_max = unserved
            .iter()
            .map(|&i| local[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let (t_theta, objective) = if suffix_served.is_empty() {
            (unserved_max, unserved_max)
        } else {
            let sc: Vec<ClientSpec> = suffix_served.iter().map(|&i| clients[i].clone()).collect();
            let sl: Vec<usize> = suffix_served.iter().map(|&i| cut_layers[i]).collect();
            match solve_t_theta(&sc, &sl, curves, profile, server.f_max) {
                Ok(t) => (t, t.max(unserved_max)),
                Err(e) => {
                    diagnostics.push(ThetaDiagnostic {
                        theta,
                        served: suffix_served.len(),
                        reason: e.to_string(),
                    });
                    continue;
                }
            }
        };
        if !objective.is_finite() {
            diagnostics.push(ThetaDiagnostic {
                theta,
                served: suffix_served.len(),
                reason: format!("non-finite objective {objective}"),
            });
            continue;
        }
        if best.as_ref().is_none_or(|b| objective < b.0) {
            best = Some((objective, theta, t_theta, suffix_served));
        }
    }

    let Some((_, theta, t_theta, served_idx)) = best else {
        return Err(Error::Infeasible { diagnostics });
    };

    let mut f_server = vec![0.0; k];
    let mut served = vec![false; k];
    let mut per_client_latency = local.clone();
    for &i in &served_idx {
        let f = closed_form_f_server(&clients[i], cut_layers[i], curves, profile, t_theta)?;
        f_server[i] = f;
        served[i] = true;
        per_client_latency[i] =
            latency_split(&clients[i], cut_layers[i] as f64, f, curves, layers)?.total_s;
    }
    let objective = per_client_latency
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(AllocationResult {
        order,
        theta,
        f_server,
        served,
        t_theta,
        objective,
        per_client_latency,
        local_latency: local,
    })
}

/// Splits `(flag, index)` pairs into two index lists.
trait IntoIndexPair {
    fn into_iter_pair(self) -> (Vec<usize>, Vec<usize>);
}

impl IntoIndexPair for (Vec<(bool, usize)>, Vec<(bool, usize)>) {
    fn into_iter_pair(self) -> (Vec<usize>, Vec<usize>) {
        (
            self.0.into_iter().map(|p| p.1).collect(),
            self.1.into_iter().map(|p| p.1).collect(),
        )
    }
}
