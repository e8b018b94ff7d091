//! Scenario files and JSON loading.
//!
//! Scenario files use the units operators think in (GFLOPs/s, Mb/s); the
//! loader converts them to FLOPs/s and bits/s. Relative profile and timing
//! paths resolve against the scenario file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::alloc::ServerSpec;
use crate::error::{Error, Result};
use crate::latency::ClientSpec;
use crate::optimizer::OptimizerOptions;
use crate::profile::{fit_curves, FittedCurves, ModelProfile, TimingPairs};

pub const GIGA: f64 = 1e9;
pub const MEGA: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientEntry {
    pub id: String,
    pub f_local_gflops: f64,
    pub rate_mbps: f64,
    pub batch: u32,
    pub epochs: u32,
    pub dataset_size: u32,
    #[serde(default = "one")]
    pub l_min: usize,
}

fn one() -> usize {
    1
}

impl ClientEntry {
    pub fn to_spec(&self) -> ClientSpec {
        ClientSpec {
            id: self.id.clone(),
            f_local: self.f_local_gflops * GIGA,
            rate: self.rate_mbps * MEGA,
            batch: self.batch,
            epochs: self.epochs,
            dataset_size: self.dataset_size,
            l_min: self.l_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerEntry {
    pub f_max_gflops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioOptions {
    pub max_iters: usize,
    pub conv_tol: f64,
    pub strict: bool,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        let d = OptimizerOptions::default();
        ScenarioOptions {
            max_iters: d.max_iters,
            conv_tol: d.conv_tol,
            strict: false,
        }
    }
}

impl ScenarioOptions {
    pub fn to_optimizer(&self) -> OptimizerOptions {
        let base = if self.strict {
            OptimizerOptions::strict()
        } else {
            OptimizerOptions::default()
        };
        OptimizerOptions {
            max_iters: self.max_iters,
            conv_tol: self.conv_tol,
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    FMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    /// GFLOPs/s for `f_max`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub profile_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_path: Option<PathBuf>,
    /// Fitted curves given directly instead of a timing file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<FittedCurves>,
    pub clients: Vec<ClientEntry>,
    pub server: ServerEntry,
    #[serde(default)]
    pub options: ScenarioOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

/// A scenario with its files read, curves fitted and units converted.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub profile: ModelProfile,
    pub curves: FittedCurves,
    pub clients: Vec<ClientSpec>,
    pub server: ServerSpec,
    pub options: OptimizerOptions,
}

impl LoadedScenario {
    /// Sweep budgets in FLOPs/s, if the scenario has a sweep block.
    pub fn sweep_budgets(&self) -> Option<Vec<f64>> {
        self.scenario
            .sweep
            .as_ref()
            .map(|s| s.values.iter().map(|v| v * GIGA).collect())
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Byte offset of a 1-based line/column position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Parses JSON text, reporting syntax and shape errors with a byte offset.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let (line, column) = (e.line(), e.column());
        Error::Json {
            path: origin.to_string(),
            offset: byte_offset(text, line, column),
            line,
            column,
            message: e.to_string(),
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_json(&text, &path.display().to_string())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn load_profile(path: &Path) -> Result<ModelProfile> {
    let p: ModelProfile = read_json(path)?;
    p.validate()?;
    Ok(p)
}

pub fn load_timing(path: &Path) -> Result<TimingPairs> {
    let t: TimingPairs = read_json(path)?;
    t.validate()?;
    Ok(t)
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::Scenario("at least one client is required".into()));
        }
        let mut ids: Vec<&str> = self.clients.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Scenario(format!("duplicate client id `{}`", w[0])));
        }
        match (&self.timing_path, &self.curves) {
            (None, None) => {
                return Err(Error::Scenario(
                    "either timing_path or curves must be given".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Scenario(
                    "timing_path and curves are mutually exclusive".into(),
                ))
            }
            _ => {}
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Scenario("sweep needs at least one value".into()));
            }
            if s.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Scenario("sweep values must be positive".into()));
            }
            if s.values.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Scenario(
                    "sweep values must be strictly ascending".into(),
                ));
            }
        }
        Ok(())
    }

    /// Reads the referenced files and builds the planner inputs.
    pub fn resolve(self, base_dir: &Path) -> Result<LoadedScenario> {
        self.validate()?;
        let profile = load_profile(&base_dir.join(&self.profile_path))?;
        let curves = match (&self.curves, &self.timing_path) {
            (Some(c), _) => {
                c.validate()?;
                *c
            }
            (None, Some(t)) => fit_curves(&profile, &load_timing(&base_dir.join(t))?)?,
            (None, None) => unreachable!("checked by validate"),
        };
        let clients: Vec<ClientSpec> = self.clients.iter().map(ClientEntry::to_spec).collect();
        for c in &clients {
            c.validate(profile.layer_count)?;
        }
        let server = ServerSpec {
            f_max: self.server.f_max_gflops * GIGA,
        };
        server.validate()?;
        let options = self.options.to_optimizer();
        options.validate()?;
        Ok(LoadedScenario {
            scenario: self,
            profile,
            curves,
            clients,
            server,
            options,
        })
    }

    pub fn load(path: &Path) -> Result<LoadedScenario> {
        let scenario: Scenario = read_json(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        scenario.resolve(base)
    }
}

/// Ranges for seeded heterogeneous clients. Compute and rate are drawn
/// log-uniformly, dataset sizes uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPool {
    pub f_local_gflops: (f64, f64),
    pub rate_mbps: (f64, f64),
    pub dataset_size: (u32, u32),
    pub batch: u32,
    pub epochs: u32,
}

impl Default for ClientPool {
    fn default() -> Self {
        ClientPool {
            f_local_gflops: (5.0, 400.0),
            rate_mbps: (2.0, 20.0),
            dataset_size: (361, 3578),
            batch: 32,
            epochs: 20,
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let v = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
    // Two decimals keep scenario files readable.
    (v * 100.0).round() / 100.0
}

/// `count` candidates named `c01`, `c02`, ...
pub fn synthesize_clients(pool: &ClientPool, count: usize, seed: u64) -> Vec<ClientEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=count)
        .map(|i| ClientEntry {
            id: format!("c{i:02}"),
            f_local_gflops: log_uniform(&mut rng, pool.f_local_gflops),
            rate_mbps: log_uniform(&mut rng, pool.rate_mbps),
            batch: pool.batch,
            epochs: pool.epochs,
            dataset_size: rng.gen_range(pool.dataset_size.0..=pool.dataset_size.1),
            l_min: 1,
        })
        .collect()
}

/// `k` of the candidates chosen uniformly at random, in candidate order.
pub fn pick_clients(candidates: &[ClientEntry], k: usize, seed: u64) -> Result<Vec<ClientEntry>> {
    if k > candidates.len() {
        return Err(Error::Domain(format!(
            "cannot pick {k} of {} candidates",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = index::sample(&mut rng, candidates.len(), k).into_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| candidates[i].clone()).collect())
}
