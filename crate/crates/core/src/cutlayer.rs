//! Per-client cut-layer selection.
//!
//! The split-branch latency is strictly convex in the cut-layer, so its
//! derivative is increasing and the optimum falls in one of three cases:
//! the derivative is already positive at `l_min` (keep the smallest cut),
//! still negative at `L` (train locally), or it crosses zero in between.
//! The crossing solves a cubic, which is done in closed form.

use serde::{Deserialize, Serialize};

use crate::cubic;
use crate::error::{Error, Result};
use crate::latency::{d2t_dl2, dt_dl, dt_dl_scale, latency_piecewise, ClientSpec};
use crate::profile::{FittedCurves, ModelProfile};
use crate::tolerances::MAX_BISECTIONS;

/// Which case of the three-way rule fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutCase {
    /// Derivative positive at `l_min`.
    Floor,
    /// Derivative negative at `L`.
    Local,
    /// Derivative changes sign inside `[l_min, L]`.
    Stationary,
}

/// How the integer layer is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Compare the neighbouring integers of the optimum and the local-only
    /// layer `L`, keep the fastest.
    #[default]
    Best,
    /// Literal rule: floor of the stationary point, no extra candidates.
    StrictFloor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutLayerChoice {
    pub layer: usize,
    pub case: CutCase,
    /// Stationary point, present only when a cubic was solved.
    pub root: Option<f64>,
    pub latency_s: f64,
}

/// How a stationary point was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootMethod {
    Cardano,
    Bisection,
}

/// Coefficients `[c3, c2, c1, c0]` of `(l + gamma2)^2 * dT/dl` as a cubic in `l`.
pub fn stationarity_cubic(client: &ClientSpec, f_server: f64, curves: &FittedCurves) -> [f64; 4] {
    let n = client.samples_per_session();
    let r = client.rate;
    let a = 4.0 * curves.alpha / r;
    let c = n * curves.training_flops(1.0) * (1.0 / client.f_local - 1.0 / f_server);
    let g = curves.gamma2;
    [
        a,
        2.0 * a * g + c,
        a * g * g + 2.0 * c * g,
        c * g * g - 2.0 * curves.gamma1 * n / r,
    ]
}

fn check_bracket(
    client: &ClientSpec,
    f_server: f64,
    curves: &FittedCurves,
    layer_count: usize,
) -> Result<(f64, f64)> {
    let lo = client.l_min as f64;
    let hi = layer_count as f64;
    let g_lo = dt_dl(client, lo, f_server, curves, layer_count)?;
    let g_hi = dt_dl(client, hi, f_server, curves, layer_count)?;
    if g_lo > 0.0 || g_hi < 0.0 {
        return Err(Error::CaseMismatch(format!(
            "dT/dl is {g_lo:e} at l_min and {g_hi:e} at L for client `{}`",
            client.id
        )));
    }
    Ok((lo, hi))
}

/// Stationary point by bisection on the (increasing) derivative.
pub fn stationarity_bisection(
    client: &ClientSpec,
    f_server: f64,
    curves: &FittedCurves,
    layer_count: usize,
) -> Result<f64> {
    let (mut lo, mut hi) = check_bracket(client, f_server, curves, layer_count)?;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dt_dl(client, mid, f_server, curves, layer_count)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Stationary point from the closed-form cubic roots, refined by Newton steps.
/// `None` when no root lands in the bracket or the residual stays large.
pub fn stationarity_cardano(
    client: &ClientSpec,
    f_server: f64,
    curves: &FittedCurves,
    layer_count: usize,
) -> Result<Option<f64>> {
    let (lo, hi) = check_bracket(client, f_server, curves, layer_count)?;
    let [c3, c2, c1, c0] = stationarity_cubic(client, f_server, curves);
    let slack = 1e-6 * hi;
    let residual = |l: f64| -> Result<f64> {
        let l = l.clamp(lo, hi);
        Ok(dt_dl(client, l, f_server, curves, layer_count)?.abs()
            / dt_dl_scale(client, l, f_server, curves))
    };
    let mut best: Option<(f64, f64)> = None;
    for root in cubic::real_roots(c3, c2, c1, c0) {
        if !(root.is_finite() && root >= lo - slack && root <= hi + slack) {
            continue;
        }
        let res = residual(root)?;
        if best.is_none_or(|(_, r)| res < r) {
            best = Some((root.clamp(lo, hi), res));
        }
    }
    let Some((mut l, _)) = best else {
        return Ok(None);
    };
    for _ in 0..3 {
        let g = dt_dl(client, l, f_server, curves, layer_count)?;
        let h = d2t_dl2(client, l, f_server, curves, layer_count)?;
        if g == 0.0 || h <= 0.0 {
            break;
        }
        l = (l - g / h).clamp(lo, hi);
    }
    // At a bracket end the derivative may legitimately be nonzero only if
    // the root sits exactly on that end.
    let res = residual(l)?;
    if res <= 1e-9 || ((l == lo || l == hi) && res <= 1e-6) {
        Ok(Some(l))
    } else {
        Ok(None)
    }
}

#[cfg(feature = "test-support")]
thread_local! {
    static SOLVES: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Stationarity solves performed on this thread since the last reset.
#[cfg(feature = "test-support")]
pub fn stationarity_solve_count() -> usize {
    SOLVES.with(|c| c.get())
}

#[cfg(feature = "test-support")]
pub fn reset_stationarity_solve_count() {
    SOLVES.with(|c| c.set(0));
}

/// Root of `dT/dl = 0` in `[l_min, L]`; errors unless the derivative is
/// nonpositive at `l_min` and nonnegative at `L`.
pub fn solve_stationarity(
    client: &ClientSpec,
    f_server: f64,
    curves: &FittedCurves,
    layer_count: usize,
) -> Result<(f64, RootMethod)> {
    #[cfg(feature = "test-support")]
    SOLVES.with(|c| c.set(c.get() + 1));
    match stationarity_cardano(client, f_server, curves, layer_count)? {
        Some(l) => Ok((l, RootMethod::Cardano)),
        None => Ok((
            stationarity_bisection(client, f_server, curves, layer_count)?,
            RootMethod::Bisection,
        )),
    }
}

/// Best integer cut-layer for one client given its server compute.
pub fn select_cut_layer(
    client: &ClientSpec,
    f_server: f64,
    curves: &FittedCurves,
    profile: &ModelProfile,
    rounding: Rounding,
) -> Result<CutLayerChoice> {
    let layers = profile.layer_count;
    client.validate(layers)?;
    if f_server.is_nan() || f_server <= 0.0 {
        return Err(Error::Domain(format!(
            "server compute for client `{}` must be positive",
            client.id
        )));
    }
    let lo = client.l_min as f64;
    let hi = layers as f64;
    let case = if dt_dl(client, lo, f_server, curves, layers)? > 0.0 {
        CutCase::Floor
    } else if dt_dl(client, hi, f_server, curves, layers)? < 0.0 {
        CutCase::Local
    } else {
        CutCase::Stationary
    };

    let mut root = None;
    let candidates: Vec<usize> = match (case, rounding) {
        (CutCase::Floor, Rounding::StrictFloor) => vec![client.l_min],
        (CutCase::Floor, Rounding::Best) => vec![client.l_min, layers],
        (CutCase::Local, Rounding::StrictFloor) => vec![layers],
        (CutCase::Local, Rounding::Best) => vec![(layers - 1).max(client.l_min), layers],
        (CutCase::Stationary, _) => {
            let (l, _) = solve_stationarity(client, f_server, curves, layers)?;
            root = Some(l);
            let floor = (l.floor() as usize).clamp(client.l_min, layers);
            match rounding {
                Rounding::StrictFloor => vec![floor],
                Rounding::Best => {
                    let ceil = (l.ceil() as usize).clamp(client.l_min, layers);
                    vec![floor, ceil, layers]
                }
            }
        }
    };

    let mut best: Option<(usize, f64)> = None;
    for l in candidates {
        let t = latency_piecewise(client, l, f_server, curves, profile)?;
        // Candidates are ascending, so strict comparison keeps the smaller layer on ties.
        if best.is_none_or(|(_, bt)| t < bt) {
            best = Some((l, t));
        }
    }
    let (layer, latency_s) = best.expect("at least one candidate");
    Ok(CutLayerChoice {
        layer,
        case,
        root,
        latency_s,
    })
}
