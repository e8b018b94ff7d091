//! Per-client latency of one local training session.
//!
//! A session is: download the client-side model, `I * |B|` sample-wise
//! passes of the six split-training stages, upload the client-side model.
//! Every per-sample stage cost is multiplied by `I * |B|`. With a cut at
//! `l < L` the total is
//!
//! ```text
//! 2 alpha l^2 / r + I|B| ( beta (1 + kappa) (l / f^C + (L - l) / f^S) + 2 gamma1 / (r (l + gamma2)) )
//! ```
//!
//! and with `l = L` the client trains the whole model alone:
//! `2 |w| / r + I|B| Gamma / f^C`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{FittedCurves, ModelProfile};

/// One participating client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub id: String,
    /// Local compute power, FLOPs/s.
    pub f_local: f64,
    /// Up/down link rate, bits/s.
    pub rate: f64,
    /// Mini-batch size.
    pub batch: u32,
    /// Local epochs per session.
    pub epochs: u32,
    pub dataset_size: u32,
    /// Smallest cut-layer the client accepts.
    pub l_min: usize,
}

impl ClientSpec {
    /// `I * |B|`, the number of sample-wise passes in a session.
    pub fn samples_per_session(&self) -> f64 {
        f64::from(self.epochs) * f64::from(self.batch)
    }

    pub fn validate(&self, layer_count: usize) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidClient {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if !(self.f_local.is_finite() && self.f_local > 0.0) {
            return bad("f_local must be positive");
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return bad("rate must be positive");
        }
        if self.batch == 0 || self.epochs == 0 || self.dataset_size == 0 {
            return bad("batch, epochs and dataset_size must be at least 1");
        }
        if self.l_min == 0 || self.l_min > layer_count {
            return bad(&format!("l_min must lie in 1..={layer_count}"));
        }
        Ok(())
    }
}

/// Per-phase durations of a session, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    /// Download plus upload of the client-side model.
    pub model_transfer_s: f64,
    /// Client-side forward passes. For a client training the whole model
    /// alone this holds the entire local compute (FP and BP).
    pub client_fp_s: f64,
    pub smashed_up_s: f64,
    pub server_fp_s: f64,
    pub server_bp_s: f64,
    pub grads_down_s: f64,
    pub client_bp_s: f64,
    pub total_s: f64,
}

impl LatencyBreakdown {
    fn with_total(mut self) -> Self {
        self.total_s = self.model_transfer_s
            + self.client_fp_s
            + self.smashed_up_s
            + self.server_fp_s
            + self.server_bp_s
            + self.grads_down_s
            + self.client_bp_s;
        self
    }

    /// Transfer of intermediate results (smashed data and gradients).
    pub fn intermediate_s(&self) -> f64 {
        self.smashed_up_s + self.grads_down_s
    }

    pub fn client_compute_s(&self) -> f64 {
        self.client_fp_s + self.client_bp_s
    }

    pub fn server_compute_s(&self) -> f64 {
        self.server_fp_s + self.server_bp_s
    }

    pub fn uses_server(&self) -> bool {
        self.server_compute_s() > 0.0 || self.intermediate_s() > 0.0
    }
}

fn check_split_domain(client: &ClientSpec, l: f64, layer_count: usize) -> Result<()> {
    if !(l.is_finite() && l >= client.l_min as f64 && l < layer_count as f64) {
        return Err(Error::Domain(format!(
            "cut-layer {l} outside [{}, {layer_count}) for client `{}`",
            client.l_min, client.id
        )));
    }
    Ok(())
}

fn check_server(f_server: f64) -> Result<()> {
    if f_server.is_nan() || f_server <= 0.0 {
        return Err(Error::Domain(format!(
            "server compute {f_server} must be positive"
        )));
    }
    Ok(())
}

/// Split-branch latency for a (real-valued) cut `l` in `[l_min, L)`.
pub fn latency_split(
    client: &ClientSpec,
    l: f64,
    f_server: f64,
    curves: &FittedCurves,
    layer_count: usize,
) -> Result<LatencyBreakdown> {
    check_split_domain(client, l, layer_count)?;
    check_server(f_server)?;
    let n = client.samples_per_session();
    let r = client.rate;
    let fwd_client = curves.beta * l;
    let fwd_server = curves.beta * (layer_count as f64 - l);
    let smashed = curves.smashed_bits(l);
    Ok(LatencyBreakdown {
        model_transfer_s: 2.0 * curves.model_bits(l) / r,
        client_fp_s: n * fwd_client / client.f_local,
        smashed_up_s: n * smashed / r,
        server_fp_s: n * fwd_server / f_server,
        server_bp_s: n * curves.kappa * fwd_server / f_server,
        grads_down_s: n * smashed / r,
        client_bp_s: n * curves.kappa * fwd_client / client.f_local,
        total_s: 0.0,
    }
    .with_total())
}

/// Latency of training the whole model locally.
pub fn latency_fedavg(
    client: &ClientSpec,
    total_model_bits: f64,
    total_flops: f64,
) -> LatencyBreakdown {
    let n = client.samples_per_session();
    LatencyBreakdown {
        model_transfer_s: 2.0 * total_model_bits / client.rate,
        client_fp_s: n * total_flops / client.f_local,
        ..Default::default()
    }
    .with_total()
}

/// Breakdown for an integer cut-layer: the split branch below `L`, local
/// training at `L`.
pub fn breakdown_piecewise(
    client: &ClientSpec,
    l: usize,
    f_server: f64,
    curves: &FittedCurves,
    profile: &ModelProfile,
) -> Result<LatencyBreakdown> {
    let layers = profile.layer_count;
    if l < client.l_min || l > layers {
        return Err(Error::Domain(format!(
            "cut-layer {l} outside [{}, {layers}] for client `{}`",
            client.l_min, client.id
        )));
    }
    if l == layers {
        Ok(latency_fedavg(
            client,
            profile.total_model_bits,
            profile.total_flops,
        ))
    } else {
        latency_split(client, l as f64, f_server, curves, layers)
    }
}

/// Total of [`breakdown_piecewise`].
pub fn latency_piecewise(
    client: &ClientSpec,
    l: usize,
    f_server: f64,
    curves: &FittedCurves,
    profile: &ModelProfile,
) -> Result<f64> {
    breakdown_piecewise(client, l, f_server, curves, profile).map(|b| b.total_s)
}

/// Breakdown under an assignment: a client granted no server compute trains
/// alone whatever its nominal cut-layer.
pub fn assigned_breakdown(
    client: &ClientSpec,
    l: usize,
    f_server: f64,
    curves: &FittedCurves,
    profile: &ModelProfile,
) -> Result<LatencyBreakdown> {
    if f_server == 0.0 {
        breakdown_piecewise(client, profile.layer_count, 0.0, curves, profile)
    } else {
        breakdown_piecewise(client, l, f_server, curves, profile)
    }
}

/// Session latency with unlimited server compute: everything but the
/// server-side passes. `latency_split = floor + load / f_server`.
pub fn server_free_latency(client: &ClientSpec, l: f64, curves: &FittedCurves) -> f64 {
    let n = client.samples_per_session();
    let r = client.rate;
    2.0 * curves.model_bits(l) / r
        + n * (curves.training_flops(l) / client.f_local + 2.0 * curves.smashed_bits(l) / r)
}

/// Server FLOPs needed for one session, `I|B| (F^S + B^S)`.
pub fn server_load(client: &ClientSpec, l: f64, curves: &FittedCurves, layer_count: usize) -> f64 {
    client.samples_per_session() * curves.training_flops(layer_count as f64 - l)
}

fn check_derivative_domain(client: &ClientSpec, l: f64, layer_count: usize) -> Result<()> {
    if !(l.is_finite() && l >= client.l_min as f64 && l <= layer_count as f64) {
        return Err(Error::Domain(format!(
            "cut-layer {l} outside [{}, {layer_count}] for client `{}`",
            client.l_min, client.id
        )));
    }
    Ok(())
}

/// `dT/dl` of the split branch, extended continuously to `[l_min, L]`.
pub fn dt_dl(
    client: &ClientSpec,
    l: f64,
    f_server: f64,
    curves: &FittedCurves,
    layer_count: usize,
) -> Result<f64> {
    check_derivative_domain(client, l, layer_count)?;
    check_server(f_server)?;
    let terms = dt_dl_terms(client, l, f_server, curves);
    Ok(terms.iter().sum())
}

/// The three additive terms of `dT/dl`: model transfer, compute shift, smashed data.
pub(crate) fn dt_dl_terms(
    client: &ClientSpec,
    l: f64,
    f_server: f64,
    curves: &FittedCurves,
) -> [f64; 3] {
    let n = client.samples_per_session();
    let r = client.rate;
    let x = l + curves.gamma2;
    [
        4.0 * curves.alpha * l / r,
        n * curves.training_flops(1.0) * (1.0 / client.f_local - 1.0 / f_server),
        -n * 2.0 * curves.gamma1 / (r * x * x),
    ]
}

/// Magnitude scale of `dT/dl` at `l`: the sum of its absolute terms.
pub fn dt_dl_scale(client: &ClientSpec, l: f64, f_server: f64, curves: &FittedCurves) -> f64 {
    dt_dl_terms(client, l, f_server, curves)
        .iter()
        .map(|t| t.abs())
        .sum()
}

/// `d^2T/dl^2`; positive whenever `gamma1 > 0`.
pub fn d2t_dl2(
    client: &ClientSpec,
    l: f64,
    _f_server: f64,
    curves: &FittedCurves,
    layer_count: usize,
) -> Result<f64> {
    check_derivative_domain(client, l, layer_count)?;
    let n = client.samples_per_session();
    let r = client.rate;
    let x = l + curves.gamma2;
    Ok(4.0 * curves.alpha / r + 4.0 * curves.gamma1 * n / (r * x * x * x))
}

/// `dT/df^S` of the split branch; negative.
pub fn dt_dfs(
    client: &ClientSpec,
    l: f64,
    f_server: f64,
    curves: &FittedCurves,
    layer_count: usize,
) -> Result<f64> {
    check_split_domain(client, l, layer_count)?;
    check_server(f_server)?;
    Ok(-server_load(client, l, curves, layer_count) / (f_server * f_server))
}

/// `d^2T/d(f^S)^2`; positive.
pub fn d2t_dfs2(
    client: &ClientSpec,
    l: f64,
    f_server: f64,
    curves: &FittedCurves,
    layer_count: usize,
) -> Result<f64> {
    check_split_domain(client, l, layer_count)?;
    check_server(f_server)?;
    Ok(2.0 * server_load(client, l, curves, layer_count) / f_server.powi(3))
}
