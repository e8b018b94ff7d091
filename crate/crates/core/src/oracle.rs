//! Brute-force reference implementations for tests.
//!
//! Nothing here calls the planner modules: latencies are rebuilt phase by
//! phase from the model definitions, and searches are exhaustive.

use crate::error::{Error, Result};
use crate::latency::ClientSpec;
use crate::profile::{FittedCurves, ModelProfile};

/// Largest client count accepted by [`grid_allocation`].
pub const GRID_MAX_CLIENTS: usize = 4;

/// One client's session latency summed phase by phase.
///
/// `f_server == 0` or `l == L` means the client trains alone.
pub fn phase_latency(
    client: &ClientSpec,
    l: usize,
    f_server: f64,
    curves: &FittedCurves,
    profile: &ModelProfile,
) -> f64 {
    let layers = profile.layer_count;
    let iterations = client.epochs as f64 * client.batch as f64;
    let r = client.rate;
    if l >= layers || f_server == 0.0 {
        let download = profile.total_model_bits / r;
        let upload = profile.total_model_bits / r;
        let train = iterations * profile.total_flops / client.f_local;
        return download + train + upload;
    }
    let lf = l as f64;
    let client_part = curves.alpha * lf * lf;
    let server_layers = (layers - l) as f64;
    let activations = curves.gamma1 / (lf + curves.gamma2);

    let download = client_part / r;
    let upload = client_part / r;
    let fp_client = curves.beta * lf / client.f_local;
    let send_activations = activations / r;
    let fp_server = curves.beta * server_layers / f_server;
    let bp_server = curves.kappa * curves.beta * server_layers / f_server;
    let recv_gradients = activations / r;
    let bp_client = curves.kappa * curves.beta * lf / client.f_local;
    let per_sample =
        fp_client + send_activations + fp_server + bp_server + recv_gradients + bp_client;
    download + iterations * per_sample + upload
}

/// Latency-minimizing integer cut-layer by full enumeration; ties go to the
/// smaller layer. Returns `(layer, latency)`.
pub fn exhaustive_cut_layer(
    client: &ClientSpec,
    f_server: f64,
    curves: &FittedCurves,
    profile: &ModelProfile,
) -> (usize, f64) {
    let mut best = (client.l_min, f64::INFINITY);
    for l in client.l_min..=profile.layer_count {
        let t = phase_latency(client, l, f_server, curves, profile);
        if t < best.1 {
            best = (l, t);
        }
    }
    best
}

/// Round latency of an arbitrary assignment.
pub fn max_latency(
    clients: &[ClientSpec],
    cut_layers: &[usize],
    f_server: &[f64],
    curves: &FittedCurves,
    profile: &ModelProfile,
) -> f64 {
    clients
        .iter()
        .zip(cut_layers)
        .zip(f_server)
        .map(|((c, &l), &f)| phase_latency(c, l, f, curves, profile))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Best allocation on the simplex grid `f_k = n_k * f_max / levels`,
/// `sum n_k = levels`. Returns `(allocation, objective)`.
pub fn grid_allocation(
    clients: &[ClientSpec],
    cut_layers: &[usize],
    curves: &FittedCurves,
    profile: &ModelProfile,
    f_max: f64,
    levels: usize,
) -> Result<(Vec<f64>, f64)> {
    let k = clients.len();
    if k == 0 || k > GRID_MAX_CLIENTS {
        return Err(Error::Guard(format!(
            "grid search supports 1 to {GRID_MAX_CLIENTS} clients, got {k}"
        )));
    }
    if levels < 2 {
        return Err(Error::Guard(format!(
            "need at least 2 levels, got {levels}"
        )));
    }
    if cut_layers.len() != k {
        return Err(Error::LengthMismatch(format!(
            "{k} clients but {} cut-layers",
            cut_layers.len()
        )));
    }
    let step = f_max / levels as f64;
    // Latency of each client at each grid level, computed once.
    let table: Vec<Vec<f64>> = clients
        .iter()
        .zip(cut_layers)
        .map(|(c, &l)| {
            (0..=levels)
                .map(|n| phase_latency(c, l, n as f64 * step, curves, profile))
                .collect()
        })
        .collect();

    let mut counts = vec![0usize; k];
    let mut best_counts = counts.clone();
    let mut best = f64::INFINITY;
    enumerate(&table, &mut counts, 0, levels, &mut best, &mut best_counts);
    let alloc = best_counts.iter().map(|&n| n as f64 * step).collect();
    Ok((alloc, best))
}

fn enumerate(
    table: &[Vec<f64>],
    counts: &mut [usize],
    index: usize,
    remaining: usize,
    best: &mut f64,
    best_counts: &mut Vec<usize>,
) {
    if index + 1 == counts.len() {
        counts[index] = remaining;
        let value = counts
            .iter()
            .enumerate()
            .map(|(i, &n)| table[i][n])
            .fold(f64::NEG_INFINITY, f64::max);
        if value < *best {
            *best = value;
            best_counts.copy_from_slice(counts);
        }
        return;
    }
    for n in 0..=remaining {
        counts[index] = n;
        enumerate(table, counts, index + 1, remaining - n, best, best_counts);
    }
}

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn finite_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central differences at shrinking steps, extrapolated to zero step
/// (Ridders). Returns the estimate and its error estimate.
pub fn extrapolated_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> (f64, f64) {
    const SHRINK: f64 = 1.4;
    const N: usize = 12;
    let s2 = SHRINK * SHRINK;
    let mut a = [[0.0f64; N]; N];
    let mut hh = h;
    a[0][0] = finite_difference(&f, x, hh);
    let mut best = (a[0][0], f64::INFINITY);
    for i in 1..N {
        hh /= SHRINK;
        a[0][i] = finite_difference(&f, x, hh);
        let mut fac = s2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= s2;
            let err = (a[j][i] - a[j - 1][i])
                .abs()
                .max((a[j][i] - a[j - 1][i - 1]).abs());
            if err <= best.1 {
                best = (a[j][i], err);
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * best.1 {
            break;
        }
    }
    best
}

/// Root of a decreasing function `g` on `[lo, hi]` by plain bisection,
/// assuming `g(lo) > 0 > g(hi)`.
pub fn bisect_decreasing<G: Fn(f64) -> f64>(g: G, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Server compute that brings a split client to latency `target`, found by
/// bisection on [`phase_latency`].
pub fn invert_server_compute(
    client: &ClientSpec,
    l: usize,
    curves: &FittedCurves,
    profile: &ModelProfile,
    target: f64,
) -> f64 {
    let g = |f: f64| phase_latency(client, l, f, curves, profile) - target;
    let mut hi = 1.0;
    while g(hi) > 0.0 && hi < 1e300 {
        hi *= 2.0;
    }
    let mut lo = hi;
    while g(lo) <= 0.0 && lo > 1e-300 {
        lo /= 2.0;
    }
    bisect_decreasing(g, lo, hi)
}

/// Common finishing time of `clients` sharing `f_max`, found by refining a
/// grid of candidate times around the sign change of `demand - f_max`.
pub fn equalized_latency(
    clients: &[ClientSpec],
    cut_layers: &[usize],
    curves: &FittedCurves,
    profile: &ModelProfile,
    f_max: f64,
) -> f64 {
    let demand = |t: f64| -> f64 {
        clients
            .iter()
            .zip(cut_layers)
            .map(|(c, &l)| invert_server_compute(c, l, curves, profile, t))
            .sum()
    };
    // Below the slowest unlimited-server latency demand is unbounded.
    let mut lo = clients
        .iter()
        .zip(cut_layers)
        .map(|(c, &l)| phase_latency(c, l, f64::INFINITY, curves, profile))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut hi = lo.max(1.0);
    while demand(hi) > f_max {
        hi *= 2.0;
    }
    for _ in 0..8 {
        let points = 16;
        let width = (hi - lo) / points as f64;
        let mut next = (lo, hi);
        for i in 1..=points {
            let t = lo + width * i as f64;
            if demand(t) <= f_max {
                next = (t - width, t);
                break;
            }
        }
        (lo, hi) = next;
    }
    bisect_decreasing(|t| demand(t) - f_max, lo, hi)
}
