//! Versioned JSON checkpoints.
//!
//! ```text
//! {
//!   "format": "attnmix-checkpoint",
//!   "version": 1,
//!   "seed": 0, "episodes": 1234, "env_steps": 200000,
//!   "config": { ...resolved flat run config... },
//!   "params": [ { "name": "agent.attention.w_q", "shape": [14, 32], "data": [...] }, ... ]
//! }
//! ```
//!
//! Parameters appear in the network's traversal order. Floats are written
//! with shortest round-trip formatting, so loading restores every value
//! bit for bit.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use attnmix_core::numerics::{Parameters, Shape, Tensor};
use attnmix_core::trainer::{stream_rng, Network};
use attnmix_core::Error;
use serde_json::{json, Value};

use crate::config::{self, RunConfig};

pub const FORMAT: &str = "attnmix-checkpoint";
pub const VERSION: u64 = 1;

/// A trained network together with the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub seed: u64,
    pub episodes: u64,
    pub env_steps: u64,
    pub network: Network,
}

impl Checkpoint {
    pub fn to_json(&self) -> Value {
        let mut params = Vec::new();
        self.network.visit(&mut |name, t| {
            params.push(json!({ "name": name, "shape": t.shape().dims(), "data": t.data() }));
        });
        json!({
            "format": FORMAT,
            "version": VERSION,
            "seed": self.seed,
            "episodes": self.episodes,
            "env_steps": self.env_steps,
            "config": config::to_json(&self.run),
            "params": params,
        })
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let field = |key: &str| value.get(key).ok_or_else(|| mismatch(format!("missing field `{key}`")));
        if field("format")?.as_str() != Some(FORMAT) {
            return Err(mismatch("not an attnmix checkpoint".into()));
        }
        let version = field("version")?.as_u64();
        if version != Some(VERSION) {
            return Err(mismatch(format!("unsupported version {version:?}, expected {VERSION}")));
        }
        let int = |key: &str| field(key)?.as_u64().ok_or_else(|| mismatch(format!("`{key}` must be an integer")));
        let (seed, episodes, env_steps) = (int("seed")?, int("episodes")?, int("env_steps")?);
        let run = config::parse_config_str(&field("config")?.to_string()).map_err(|e| mismatch(e.to_string()))?;

        let stored = field("params")?.as_array().ok_or_else(|| mismatch("`params` must be an array".into()))?;
        let mut tensors = Vec::with_capacity(stored.len());
        for p in stored {
            tensors.push(read_param(p)?);
        }
        // The layout comes from the config; the values from the file.
        let mut network = Network::init(&mut stream_rng(seed, 0), &run.train);
        let expected = network.named_tensors();
        if expected.len() != tensors.len() {
            return Err(mismatch(format!("{} parameters stored, network has {}", tensors.len(), expected.len())));
        }
        for ((name, want), (got_name, got)) in expected.iter().zip(&tensors) {
            if name != got_name || want.shape() != got.shape() {
                return Err(mismatch(format!(
                    "parameter `{got_name}` {} does not match `{name}` {}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        network.visit_mut(&mut |_, t| *t = it.next().expect("counts checked").1);
        Ok(Checkpoint { run, seed, episodes, env_steps, network })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_json())?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Checkpoint::from_json(&value)
    }
}

fn mismatch(msg: String) -> anyhow::Error {
    anyhow!(Error::CheckpointMismatch(msg))
}

fn read_param(p: &Value) -> Result<(String, Tensor)> {
    let name = p.get("name").and_then(Value::as_str).ok_or_else(|| mismatch("parameter without a name".into()))?;
    let bad = || mismatch(format!("parameter `{name}` is malformed"));
    let dims: Vec<usize> = p
        .get("shape")
        .and_then(Value::as_array)
        .ok_or_else(bad)?
        .iter()
        .map(|d| d.as_u64().map(|d| d as usize))
        .collect::<Option<_>>()
        .ok_or_else(bad)?;
    let data: Vec<f64> = p
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(bad)?
        .iter()
        .map(Value::as_f64)
        .collect::<Option<_>>()
        .ok_or_else(bad)?;
    let shape = Shape::from_dims(&dims).ok_or_else(bad)?;
    let tensor = Tensor::new(shape, data).map_err(|_| bad())?;
    Ok((name.to_string(), tensor))
}
