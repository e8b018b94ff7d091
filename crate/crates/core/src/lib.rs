//! Latency planning for split federated learning.
//!
//! Each client trains the first `l` layers of a model and offloads the rest
//! to a shared server whose compute is divided among clients. The crate fits
//! per-layer cost curves to a model profile, picks each client's cut-layer,
//! splits the server budget so the slowest clients finish together, and
//! alternates the two until the round latency stops improving.
//!
//! ```
//! use sfl_core::{optimize, synthesize_profile, ClientSpec, OptimizerOptions, ServerSpec, SynthesisSpec};
//!
//! let spec = SynthesisSpec { noise_amplitude: 0.0, ..SynthesisSpec::effnetv2_like(7) };
//! let profile = synthesize_profile(&spec).unwrap();
//! let client = ClientSpec {
//!     id: "phone".into(),
//!     f_local: 100e9,
//!     rate: 4e6,
//!     batch: 32,
//!     epochs: 20,
//!     dataset_size: 3396,
//!     l_min: 1,
//! };
//! let server = ServerSpec { f_max: 1484e9 };
//! let plan = optimize(&[client], &spec.curves(), &profile, &server, &OptimizerOptions::default()).unwrap();
//! assert!(plan.clients[0].cut_layer < profile.layer_count);
//! ```

pub mod alloc;
pub mod cubic;
pub mod cutlayer;
pub mod error;
pub mod latency;
pub mod optimizer;
#[cfg(feature = "test-support")]
pub mod oracle;
pub mod profile;
pub mod scenario;
pub mod sim;
pub mod tolerances;

pub use alloc::{allocate, AllocationResult, ServerSpec};
pub use cutlayer::{select_cut_layer, CutCase, CutLayerChoice, Rounding};
pub use error::{Error, Result};
pub use latency::{latency_fedavg, latency_piecewise, latency_split, ClientSpec, LatencyBreakdown};
pub use optimizer::{objective, optimize, ClientPlan, OptimizerOptions, Plan};
pub use profile::{
    determination_coefficient, fit_curves, synthesize_profile, synthesize_timing, FittedCurves,
    ModelProfile, SynthesisSpec, TimingPairs,
};
pub use scenario::{LoadedScenario, Scenario};
pub use sim::{simulate_campaign, simulate_round, RoundTrace, SimOptions};
