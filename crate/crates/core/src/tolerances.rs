//! Numerical tolerances shared by the solvers and their invariant checks.

/// Relative tolerance for scalar root solves (stationarity, `T_theta`).
pub const ROOT_REL: f64 = 1e-9;

/// Relative tolerance for aggregate invariants: budget use, equal latencies.
pub const AGGREGATE_REL: f64 = 1e-6;

/// Absolute tolerance of the golden-section search over `gamma2`.
pub const GOLDEN_ABS: f64 = 1e-6;

/// Upper end of the `gamma2` search range, as a multiple of the layer count.
pub const GAMMA2_RANGE_FACTOR: f64 = 10.0;

/// Agreement required between the Cardano root and the bisection root, in layers.
pub const STATIONARITY_AGREEMENT: f64 = 1e-6;

/// Cap on the number of events in an expanded (per-epoch) trace.
pub const MAX_EXPANDED_EVENTS: usize = 100_000;

/// Iteration cap for the bisection loops; each halving is cheap.
pub(crate) const MAX_BISECTIONS: usize = 400;

/// Relative equality helper with an absolute floor for values near zero.
pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    (a - b).abs() <= rel * scale
}
