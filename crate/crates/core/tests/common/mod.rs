//! Seeded instance generators shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfl_core::latency::assigned_breakdown;
use sfl_core::scenario::{pick_clients, synthesize_clients, ClientPool};
use sfl_core::{
    AllocationResult, ClientPlan, ClientSpec, FittedCurves, LoadedScenario, ModelProfile, Plan,
    Scenario, ServerSpec, SynthesisSpec,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
}

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

pub fn bundled(name: &str) -> LoadedScenario {
    Scenario::load(&repo_path(&format!("scenarios/{name}.json"))).expect("bundled scenario")
}

/// Curves with every parameter drawn log-uniformly over four decades
/// (kappa over one, since it is at least 1).
pub fn random_curves(rng: &mut ChaCha8Rng) -> FittedCurves {
    FittedCurves::new(
        log_uniform(rng, 1e3, 1e7),
        log_uniform(rng, 1e6, 1e10),
        log_uniform(rng, 1.0, 10.0),
        log_uniform(rng, 1e4, 1e8),
        log_uniform(rng, 0.01, 100.0),
    )
}

/// Noise-free profile that follows `curves` exactly.
pub fn exact_profile(curves: &FittedCurves, layers: usize) -> ModelProfile {
    sfl_core::synthesize_profile(&SynthesisSpec {
        alpha: curves.alpha,
        beta: curves.beta,
        kappa: curves.kappa,
        gamma1: curves.gamma1,
        gamma2: curves.gamma2,
        layer_count: layers,
        noise_amplitude: 0.0,
        seed: 0,
    })
    .expect("valid synthesis parameters")
}

pub fn random_client(rng: &mut ChaCha8Rng, id: usize, layers: usize) -> ClientSpec {
    let l_min = if rng.gen_bool(0.8) {
        1
    } else {
        rng.gen_range(1..=layers)
    };
    ClientSpec {
        id: format!("k{id}"),
        f_local: log_uniform(rng, 1e9, 1e13),
        rate: log_uniform(rng, 1e5, 1e9),
        batch: rng.gen_range(1..=64),
        epochs: rng.gen_range(1..=20),
        dataset_size: rng.gen_range(1..=5000),
        l_min,
    }
}

pub struct Instance {
    pub curves: FittedCurves,
    pub profile: ModelProfile,
    pub clients: Vec<ClientSpec>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, clients: usize) -> Instance {
    let layers = rng.gen_range(10..=80);
    let curves = random_curves(rng);
    Instance {
        curves,
        profile: exact_profile(&curves, layers),
        clients: (0..clients)
            .map(|i| random_client(rng, i, layers))
            .collect(),
    }
}

/// Ten clients drawn from the default heterogeneous pool, with the bundled
/// profile and a budget between 100 and 9000 GFLOPs/s.
pub fn seeded_scenario(seed: u64) -> (Vec<ClientSpec>, ServerSpec) {
    let candidates = synthesize_clients(&ClientPool::default(), 30, seed);
    let clients = pick_clients(&candidates, 10, seed)
        .expect("10 of 30")
        .iter()
        .map(|c| c.to_spec())
        .collect();
    let mut r = rng(seed ^ 0x5eed);
    let server = ServerSpec {
        f_max: log_uniform(&mut r, 100e9, 9000e9),
    };
    (clients, server)
}

/// Wraps an allocation as a plan so it can be simulated.
pub fn plan_from_allocation(
    alloc: &AllocationResult,
    clients: &[ClientSpec],
    cut_layers: &[usize],
    curves: &FittedCurves,
    profile: &ModelProfile,
) -> Plan {
    let entries: Vec<ClientPlan> = clients
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (l, f) = if alloc.served[i] {
                (cut_layers[i], alloc.f_server[i])
            } else {
                (profile.layer_count, 0.0)
            };
            ClientPlan {
                id: c.id.clone(),
                cut_layer: l,
                f_server: f,
                served: alloc.served[i],
                breakdown: assigned_breakdown(c, l, f, curves, profile).expect("valid"),
            }
        })
        .collect();
    Plan {
        objective: entries
            .iter()
            .map(|e| e.breakdown.total_s)
            .fold(f64::NEG_INFINITY, f64::max),
        clients: entries,
        theta: alloc.theta,
        t_theta: alloc.t_theta,
        iterations: vec![(0, alloc.objective)],
        converged: true,
    }
}
