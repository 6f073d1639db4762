//! Run configuration: a TOML document with one table per subsystem.
//!
//! Unknown keys are rejected at every level. Command-line overrides use
//! dotted paths (`learning.gamma=2.0`) and may index into arrays
//! (`network.readout_density[2]=0.05`); an override must name a key that
//! already exists in the schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub network: NetworkConfig,
    pub simulation: SimulationConfig,
    pub encoder: EncoderConfig,
    pub homeostasis: HomeostasisConfig,
    pub learning: LearningConfig,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_size: usize,
    pub layer_sizes: Vec<usize>,
    pub classes: usize,
    /// Half-width of the circular recurrent band.
    pub bandwidth: usize,
    /// Random long-range recurrent shortcuts per layer.
    pub shortcuts: usize,
    /// Fraction of the layer-to-readout grid instantiated, one entry per layer.
    pub readout_density: Vec<f64>,
    /// Modulatory population size per layer.
    pub modulators: usize,
    pub recurrent_gain: f64,
    /// Per-layer plasticity of recurrent and feedforward synapses; empty means all.
    pub plastic_layers: Vec<bool>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: 784,
            layer_sizes: vec![4096, 2048, 4096],
            classes: 10,
            bandwidth: 12,
            shortcuts: 256,
            readout_density: vec![1.0, 1.0, 1.0],
            modulators: 8,
            recurrent_gain: 0.5,
            plastic_layers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub timesteps: usize,
    /// Membrane leak factor.
    pub alpha: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            timesteps: 100,
            alpha: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Per-step spike probability of a saturated pixel.
    pub f_max: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { f_max: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomeostasisConfig {
    pub threshold_init: f64,
    pub threshold_floor: f64,
    /// Target firing rate in spikes per step.
    pub target_rate: f64,
    pub eta_theta: f64,
    /// Per-step smoothing of the firing-rate estimate.
    pub rate_smoothing: f64,
}

impl Default for HomeostasisConfig {
    fn default() -> Self {
        HomeostasisConfig {
            threshold_init: 1.0,
            threshold_floor: 0.1,
            target_rate: 0.02,
            eta_theta: 1e-3,
            rate_smoothing: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    /// WTA margin, in readout (weighted spike count) units.
    pub gamma: f64,
    pub lambda_e: f64,
    pub lambda_m: f64,
    pub eta: f64,
    pub eta_out: f64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            gamma: 1.0,
            lambda_e: 0.9,
            lambda_m: 0.9,
            eta: 1e-3,
            eta_out: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Leading training samples used; 0 means the whole file.
    pub train_subset: usize,
    /// Leading test samples evaluated each epoch; 0 means the whole file.
    pub test_subset: usize,
    pub seed: u64,
    /// Parallel simulation workers per mini-batch; 1 is bit-reproducible.
    pub workers: usize,
    /// Write a checkpoint every this many epochs (the final one is always written).
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 30,
            batch_size: 128,
            train_subset: 0,
            test_subset: 0,
            seed: 1,
            workers: 1,
            checkpoint_every: 1,
        }
    }
}

fn require(cond: bool, key: &str, message: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(SnnError::config(key, message))
    }
}

fn unit_open(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        require(
            self.input_size > 0,
            "network.input_size",
            "must be positive",
        )?;
        require(
            !self.layer_sizes.is_empty(),
            "network.layer_sizes",
            "need at least one layer",
        )?;
        require(
            self.layer_sizes.iter().all(|&n| n > 0),
            "network.layer_sizes",
            "layer sizes must be positive",
        )?;
        require(
            self.classes >= 2,
            "network.classes",
            "need at least two classes",
        )?;
        require(
            self.bandwidth >= 1,
            "network.bandwidth",
            "must be at least 1",
        )?;
        require(
            self.readout_density.len() == self.layer_sizes.len(),
            "network.readout_density",
            "needs one entry per layer",
        )?;
        require(
            self.readout_density.iter().all(|&r| r > 0.0 && r <= 1.0),
            "network.readout_density",
            "entries must lie in (0, 1]",
        )?;
        require(
            self.modulators >= 1,
            "network.modulators",
            "must be at least 1",
        )?;
        require(
            self.recurrent_gain.is_finite() && self.recurrent_gain >= 0.0,
            "network.recurrent_gain",
            "must be finite and non-negative",
        )?;
        require(
            self.plastic_layers.is_empty() || self.plastic_layers.len() == self.layer_sizes.len(),
            "network.plastic_layers",
            "must be empty or have one entry per layer",
        )
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Config =
            toml::from_str(text).map_err(|e| SnnError::config("<document>", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SnnError::io("reading config", path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let s = &self.simulation;
        require(s.timesteps > 0, "simulation.timesteps", "must be positive")?;
        require(unit_open(s.alpha), "simulation.alpha", "must lie in (0, 1)")?;
        let f = self.encoder.f_max;
        require(f > 0.0 && f <= 1.0, "encoder.f_max", "must lie in (0, 1]")?;
        let h = &self.homeostasis;
        require(
            h.threshold_floor > 0.0,
            "homeostasis.threshold_floor",
            "must be positive",
        )?;
        require(
            h.threshold_init >= h.threshold_floor,
            "homeostasis.threshold_init",
            "must not be below the floor",
        )?;
        require(
            (0.0..=1.0).contains(&h.target_rate),
            "homeostasis.target_rate",
            "must lie in [0, 1]",
        )?;
        require(
            h.eta_theta >= 0.0,
            "homeostasis.eta_theta",
            "must be non-negative",
        )?;
        require(
            h.rate_smoothing > 0.0 && h.rate_smoothing <= 1.0,
            "homeostasis.rate_smoothing",
            "must lie in (0, 1]",
        )?;
        let l = &self.learning;
        require(l.gamma > 0.0, "learning.gamma", "must be positive")?;
        require(
            unit_open(l.lambda_e),
            "learning.lambda_e",
            "must lie in (0, 1)",
        )?;
        require(
            unit_open(l.lambda_m),
            "learning.lambda_m",
            "must lie in (0, 1)",
        )?;
        require(l.eta >= 0.0, "learning.eta", "must be non-negative")?;
        require(l.eta_out >= 0.0, "learning.eta_out", "must be non-negative")?;
        let t = &self.training;
        require(t.batch_size > 0, "training.batch_size", "must be positive")?;
        require(t.workers > 0, "training.workers", "must be positive")?;
        require(
            t.checkpoint_every > 0,
            "training.checkpoint_every",
            "must be positive",
        )?;
        Ok(())
    }

    /// Apply one `key=value` override. The value is parsed as a TOML literal
    /// (so `0.5`, `12`, `[1.0, 0.5]`, `true` all work).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| SnnError::config(assignment, "override must look like key=value"))?;
        self.set(key.trim(), raw.trim())
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut doc = toml::Value::try_from(&*self).expect("config serializes");
        let (path, index) = split_index(key)?;
        let mut slot = &mut doc;
        for part in path.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| SnnError::config(key, "unknown configuration key"))?;
        }
        if let Some(i) = index {
            let array = slot
                .as_array_mut()
                .ok_or_else(|| SnnError::config(key, "indexed key is not an array"))?;
            let len = array.len();
            slot = array.get_mut(i).ok_or_else(|| {
                SnnError::config(key, format!("index {i} out of range (len {len})"))
            })?;
        }
        let parsed: toml::Table = toml::from_str(&format!("v = {raw}"))
            .map_err(|_| SnnError::config(key, format!("cannot parse value `{raw}`")))?;
        let mut value = parsed["v"].clone();
        coerce_like(slot, &mut value);
        if std::mem::discriminant(slot) != std::mem::discriminant(&value) {
            return Err(SnnError::config(
                key,
                format!("value `{raw}` has the wrong type"),
            ));
        }
        *slot = value;
        let updated: Config = doc
            .try_into()
            .map_err(|e: toml::de::Error| SnnError::config(key, e.to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Read a (possibly indexed) key back as its TOML literal.
    pub fn get(&self, key: &str) -> Result<String> {
        let doc = toml::Value::try_from(self).expect("config serializes");
        let (path, index) = split_index(key)?;
        let mut slot = &doc;
        for part in path.split('.') {
            slot = slot
                .as_table()
                .and_then(|t| t.get(part))
                .ok_or_else(|| SnnError::config(key, "unknown configuration key"))?;
        }
        if let Some(i) = index {
            slot = slot
                .as_array()
                .and_then(|a| a.get(i))
                .ok_or_else(|| SnnError::config(key, "index out of range"))?;
        }
        Ok(slot.to_string())
    }
}

fn split_index(key: &str) -> Result<(&str, Option<usize>)> {
    match key.strip_suffix(']').and_then(|k| k.split_once('[')) {
        Some((path, idx)) => {
            let i = idx
                .parse()
                .map_err(|_| SnnError::config(key, "array index must be a non-negative integer"))?;
            Ok((path, Some(i)))
        }
        None => Ok((key, None)),
    }
}

/// Integers written where the schema holds floats are accepted as floats.
fn coerce_like(target: &toml::Value, value: &mut toml::Value) {
    match (target, &*value) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => *value = toml::Value::Float(*i as f64),
        (toml::Value::Array(t), toml::Value::Array(_)) => {
            if let (Some(proto), toml::Value::Array(items)) = (t.first(), value) {
                for item in items.iter_mut() {
                    coerce_like(proto, item);
                }
            }
        }
        _ => {}
    }
}
