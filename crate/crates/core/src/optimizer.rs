//! Alternating optimization of cut-layers and server allocation.
//!
//! Starting from an equal split of the server budget, each iteration picks
//! every client's best cut-layer for its current share, then re-allocates
//! the budget for those cut-layers. Both steps can only lower the round
//! latency, so the objective trace is non-increasing.

use serde::{Deserialize, Serialize};

use crate::alloc::{allocate, AllocationResult, ServerSpec};
use crate::cutlayer::{select_cut_layer, Rounding};
use crate::error::{Error, Result};
use crate::latency::{assigned_breakdown, latency_fedavg, ClientSpec, LatencyBreakdown};
use crate::profile::{FittedCurves, ModelProfile};
use crate::tolerances::AGGREGATE_REL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub max_iters: usize,
    /// Relative change in the objective below which iteration stops.
    pub conv_tol: f64,
    pub rounding: Rounding,
    /// Let clients without server compute pick a cut-layer as if they
    /// joined the served group with an equal share of the budget, so they
    /// can enter it on the next allocation.
    pub probe: bool,
    /// Starting allocation in FLOPs/s; defaults to an equal split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_allocation: Option<Vec<f64>>,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iters: 20,
            conv_tol: 1e-6,
            rounding: Rounding::Best,
            probe: true,
            initial_allocation: None,
        }
    }
}

impl OptimizerOptions {
    /// Floor-only rounding and no probe allocation.
    pub fn strict() -> Self {
        OptimizerOptions {
            rounding: Rounding::StrictFloor,
            probe: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Domain("max_iters must be at least 1".into()));
        }
        if !(self.conv_tol.is_finite() && self.conv_tol > 0.0) {
            return Err(Error::Domain(format!(
                "conv_tol {} must be positive",
                self.conv_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPlan {
    pub id: String,
    /// `L` for clients training alone.
    pub cut_layer: usize,
    /// FLOPs/s; zero for clients training alone.
    pub f_server: f64,
    pub served: bool,
    pub breakdown: LatencyBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    /// Same order as the input clients.
    pub clients: Vec<ClientPlan>,
    /// 1-based position of the first served client in local-latency order.
    pub theta: usize,
    pub t_theta: f64,
    /// Round latency: the slowest client's total.
    pub objective: f64,
    /// `(iteration, objective)`; iteration 0 is the equal-split start.
    pub iterations: Vec<(usize, f64)>,
    pub converged: bool,
}

impl Plan {
    pub fn cut_layers(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.cut_layer).collect()
    }

    pub fn f_server(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.f_server).collect()
    }

    pub fn per_client_latency(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.breakdown.total_s).collect()
    }

    /// Checks that the plan lines up with `clients` and is internally
    /// consistent: served clients have a split cut-layer and positive
    /// compute, the rest have none.
    pub fn validate(&self, clients: &[ClientSpec], profile: &ModelProfile) -> Result<()> {
        if self.clients.len() != clients.len() {
            return Err(Error::InvalidPlan(format!(
                "plan has {} clients, scenario has {}",
                self.clients.len(),
                clients.len()
            )));
        }
        let layers = profile.layer_count;
        for (p, c) in self.clients.iter().zip(clients) {
            if p.id != c.id {
                return Err(Error::InvalidPlan(format!(
                    "plan client `{}` where `{}` was expected",
                    p.id, c.id
                )));
            }
            if p.cut_layer < c.l_min || p.cut_layer > layers {
                return Err(Error::InvalidPlan(format!(
                    "client `{}` cut-layer {} outside [{}, {layers}]",
                    p.id, p.cut_layer, c.l_min
                )));
            }
            if !(p.f_server.is_finite() && p.f_server >= 0.0) {
                return Err(Error::InvalidPlan(format!(
                    "client `{}` has invalid server compute {}",
                    p.id, p.f_server
                )));
            }
            let split = p.cut_layer < layers;
            if p.served != (p.f_server > 0.0) || p.served != split {
                return Err(Error::InvalidPlan(format!(
                    "client `{}`: served={} with cut-layer {} and server compute {}",
                    p.id, p.served, p.cut_layer, p.f_server
                )));
            }
        }
        Ok(())
    }
}

/// Recomputes the round latency of `plan` from scratch.
pub fn objective(
    plan: &Plan,
    clients: &[ClientSpec],
    curves: &FittedCurves,
    profile: &ModelProfile,
) -> Result<f64> {
    plan.validate(clients, profile)?;
    let mut worst = f64::NEG_INFINITY;
    for (p, c) in plan.clients.iter().zip(clients) {
        let t = assigned_breakdown(c, p.cut_layer, p.f_server, curves, profile)?.total_s;
        worst = worst.max(t);
    }
    Ok(worst)
}

/// Round latency when every client trains alone.
pub fn fedavg_objective(clients: &[ClientSpec], profile: &ModelProfile) -> f64 {
    clients
        .iter()
        .map(|c| latency_fedavg(c, profile.total_model_bits, profile.total_flops).total_s)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn select_all(
    clients: &[ClientSpec],
    f_server: &[f64],
    f_max: f64,
    curves: &FittedCurves,
    profile: &ModelProfile,
    options: &OptimizerOptions,
) -> Result<Vec<usize>> {
    let served = f_server.iter().filter(|f| **f > 0.0).count();
    let probe_share = f_max / (served + 1) as f64;
    clients
        .iter()
        .zip(f_server)
        .map(|(c, &f)| {
            if f > 0.0 {
                select_cut_layer(c, f, curves, profile, options.rounding).map(|s| s.layer)
            } else if options.probe {
                select_cut_layer(c, probe_share, curves, profile, options.rounding).map(|s| s.layer)
            } else {
                Ok(profile.layer_count)
            }
        })
        .collect()
}

fn objective_of(
    clients: &[ClientSpec],
    layers: &[usize],
    f_server: &[f64],
    curves: &FittedCurves,
    profile: &ModelProfile,
) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for ((c, &l), &f) in clients.iter().zip(layers).zip(f_server) {
        worst = worst.max(assigned_breakdown(c, l, f, curves, profile)?.total_s);
    }
    Ok(worst)
}

fn build_plan(
    clients: &[ClientSpec],
    layers: &[usize],
    alloc: &AllocationResult,
    curves: &FittedCurves,
    profile: &ModelProfile,
) -> Result<Plan> {
    let mut out = Vec::with_capacity(clients.len());
    for (i, c) in clients.iter().enumerate() {
        let (cut_layer, f_server) = if alloc.served[i] {
            (layers[i], alloc.f_server[i])
        } else {
            (profile.layer_count, 0.0)
        };
        out.push(ClientPlan {
            id: c.id.clone(),
            cut_layer,
            f_server,
            served: alloc.served[i],
            breakdown: assigned_breakdown(c, cut_layer, f_server, curves, profile)?,
        });
    }
    let objective = out
        .iter()
        .map(|c| c.breakdown.total_s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Plan {
        clients: out,
        theta: alloc.theta,
        t_theta: alloc.t_theta,
        objective,
        iterations: Vec::new(),
        converged: false,
    })
}

/// Joint cut-layer and allocation plan minimizing the round latency.
pub fn optimize(
    clients: &[ClientSpec],
    curves: &FittedCurves,
    profile: &ModelProfile,
    server: &ServerSpec,
    options: &OptimizerOptions,
) -> Result<Plan> {
    if clients.is_empty() {
        return Err(Error::Domain("no clients".into()));
    }
    options.validate()?;
    server.validate()?;
    profile.validate()?;
    curves.validate()?;
    for c in clients {
        c.validate(profile.layer_count)?;
    }

    let k = clients.len();
    let share = server.f_max / k as f64;
    let mut f_server = match &options.initial_allocation {
        None => vec![share; k],
        Some(f) => {
            if f.len() != k {
                return Err(Error::LengthMismatch(format!(
                    "initial allocation has {} entries for {k} clients",
                    f.len()
                )));
            }
            if f.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Domain(
                    "initial allocation must be nonnegative".into(),
                ));
            }
            if f.iter().sum::<f64>() > server.f_max * (1.0 + AGGREGATE_REL) {
                return Err(Error::Domain(
                    "initial allocation exceeds the budget".into(),
                ));
            }
            f.clone()
        }
    };

    let at = |iteration: usize| {
        move |source: Error| Error::Iteration {
            iteration,
            source: Box::new(source),
        }
    };

    let layers =
        select_all(clients, &f_server, server.f_max, curves, profile, options).map_err(at(0))?;
    let start = objective_of(clients, &layers, &f_server, curves, profile).map_err(at(0))?;
    let mut trace = vec![(0, start)];
    let mut best: Option<Plan> = None;
    let mut previous = start;
    let mut layers = layers;
    let mut converged = false;

    for iteration in 1..=options.max_iters {
        if iteration > 1 {
            layers = select_all(clients, &f_server, server.f_max, curves, profile, options)
                .map_err(at(iteration))?;
        }
        let alloc = allocate(clients, &layers, curves, profile, server).map_err(at(iteration))?;
        let plan = build_plan(clients, &layers, &alloc, curves, profile).map_err(at(iteration))?;
        let value = plan.objective;
        trace.push((iteration, value));
        f_server = plan.f_server();
        if best.as_ref().is_none_or(|b| value < b.objective) {
            best = Some(plan);
        }
        if (previous - value).abs() <= options.conv_tol * previous {
            converged = true;
            break;
        }
        previous = value;
    }

    let mut plan = best.expect("at least one iteration runs");
    plan.iterations = trace;
    plan.converged = converged;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency::latency_piecewise;
    use crate::profile::{synthesize_profile, SynthesisSpec};

    fn setup() -> (FittedCurves, ModelProfile) {
        let spec = SynthesisSpec {
            alpha: 2.0e4,
            beta: 3.0e8,
            kappa: 2.0,
            gamma1: 4.0e6,
            gamma2: 2.0,
            layer_count: 30,
            noise_amplitude: 0.0,
            seed: 1,
        };
        (spec.curves(), synthesize_profile(&spec).unwrap())
    }

    fn client(id: &str, gflops: f64, mbps: f64) -> ClientSpec {
        ClientSpec {
            id: id.into(),
            f_local: gflops * 1e9,
            rate: mbps * 1e6,
            batch: 32,
            epochs: 5,
            dataset_size: 1000,
            l_min: 1,
        }
    }

    #[test]
    fn single_client_with_ample_budget() {
        let (curves, profile) = setup();
        let c = client("a", 50.0, 10.0);
        let server = ServerSpec { f_max: 1e15 };
        let plan = optimize(
            std::slice::from_ref(&c),
            &curves,
            &profile,
            &server,
            &Default::default(),
        )
        .unwrap();
        let f = plan.clients[0].f_server.max(server.f_max);
        let best = (1..=profile.layer_count)
            .map(|l| latency_piecewise(&c, l, f, &curves, &profile).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!((plan.objective - best).abs() <= 1e-9 * best);
    }

    #[test]
    fn trace_is_monotone_and_objective_recomputes() {
        let (curves, profile) = setup();
        let clients: Vec<ClientSpec> = (0..6)
            .map(|i| client(&format!("c{i}"), 20.0 + 30.0 * i as f64, 2.0 + i as f64))
            .collect();
        let server = ServerSpec { f_max: 500e9 };
        let plan = optimize(&clients, &curves, &profile, &server, &Default::default()).unwrap();
        for w in plan.iterations.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-9, "{:?}", plan.iterations);
        }
        let again = objective(&plan, &clients, &curves, &profile).unwrap();
        assert_eq!(again, plan.objective);
        assert!(plan.objective <= fedavg_objective(&clients, &profile) + 1e-9);
        assert!(plan.converged);
    }

    #[test]
    fn all_zero_allocation_is_fedavg() {
        let (curves, profile) = setup();
        let clients = vec![client("a", 10.0, 1.0), client("b", 40.0, 5.0)];
        let plan = Plan {
            clients: clients
                .iter()
                .map(|c| ClientPlan {
                    id: c.id.clone(),
                    cut_layer: profile.layer_count,
                    f_server: 0.0,
                    served: false,
                    breakdown: LatencyBreakdown::default(),
                })
                .collect(),
            theta: 3,
            t_theta: 0.0,
            objective: 0.0,
            iterations: vec![],
            converged: true,
        };
        let got = objective(&plan, &clients, &curves, &profile).unwrap();
        assert_eq!(got, fedavg_objective(&clients, &profile));
    }

    #[test]
    fn deterministic() {
        let (curves, profile) = setup();
        let clients: Vec<ClientSpec> = (0..4)
            .map(|i| client(&format!("c{i}"), 10.0 + 15.0 * i as f64, 1.0 + i as f64))
            .collect();
        let server = ServerSpec { f_max: 200e9 };
        let a = optimize(&clients, &curves, &profile, &server, &Default::default()).unwrap();
        let b = optimize(&clients, &curves, &profile, &server, &Default::default()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn rejects_bad_options() {
        let (curves, profile) = setup();
        let clients = vec![client("a", 10.0, 1.0)];
        let server = ServerSpec { f_max: 1e9 };
        let bad = OptimizerOptions {
            max_iters: 0,
            ..Default::default()
        };
        assert!(optimize(&clients, &curves, &profile, &server, &bad).is_err());
        let bad = OptimizerOptions {
            initial_allocation: Some(vec![1e9, 1e9]),
            ..Default::default()
        };
        assert!(optimize(&clients, &curves, &profile, &server, &bad).is_err());
        assert!(optimize(&[], &curves, &profile, &server, &Default::default()).is_err());
    }

    #[test]
    fn plan_validation_catches_inconsistency() {
        let (curves, profile) = setup();
        let clients = vec![client("a", 10.0, 1.0), client("b", 40.0, 5.0)];
        let server = ServerSpec { f_max: 100e9 };
        let plan = optimize(&clients, &curves, &profile, &server, &Default::default()).unwrap();
        let mut broken = plan.clone();
        broken.clients[0].id = "z".into();
        assert!(broken.validate(&clients, &profile).is_err());
        let mut broken = plan.clone();
        broken.clients[0].served = !broken.clients[0].served;
        assert!(broken.validate(&clients, &profile).is_err());
        let mut broken = plan;
        broken.clients.pop();
        assert!(broken.validate(&clients, &profile).is_err());
    }
}
