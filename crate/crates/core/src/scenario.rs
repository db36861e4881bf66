//! Scenario files: a TOML document whose every key has a default, so an empty
//! file describes the reference setup (8 clients, 100 MHz, GPT-2 Medium).

use crate::arch::{ArchError, PartitionSpec, TransformerDescriptor};
use crate::channel::LinkBudget;
use crate::fedsim::{Experiment, Policy, REFERENCE_SPEED_RANGES};
use crate::jcpba::{BcdOptions, ConstraintSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid value for `{key}`: {reason}")]
    Validation { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    Jcpba,
    Ubfp,
}

impl PolicyName {
    pub fn with_beta(self, ubfp_beta: f64) -> Policy {
        match self {
            PolicyName::Jcpba => Policy::Jcpba,
            PolicyName::Ubfp => Policy::Ubfp { beta_fixed: ubfp_beta },
        }
    }
}

impl std::str::FromStr for PolicyName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jcpba" => Ok(PolicyName::Jcpba),
            "ubfp" => Ok(PolicyName::Ubfp),
            other => Err(format!("unknown policy `{other}` (expected jcpba or ubfp)")),
        }
    }
}

/// A preset plus optional per-field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_ff: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_positions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes_per_param: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            preset: "gpt2-medium".into(),
            n_layers: None,
            d_model: None,
            n_heads: None,
            d_ff: None,
            vocab_size: None,
            n_positions: None,
            seq_len: None,
            bytes_per_param: None,
        }
    }
}

impl ModelConfig {
    pub fn descriptor(&self) -> Result<TransformerDescriptor, ArchError> {
        let mut d = TransformerDescriptor::preset(&self.preset)?;
        let set = |field: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *field = v;
            }
        };
        set(&mut d.n_layers, self.n_layers);
        set(&mut d.d_model, self.d_model);
        set(&mut d.n_heads, self.n_heads);
        set(&mut d.d_ff, self.d_ff);
        set(&mut d.vocab_size, self.vocab_size);
        set(&mut d.n_positions, self.n_positions);
        set(&mut d.seq_len, self.seq_len);
        set(&mut d.bytes_per_param, self.bytes_per_param);
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    /// Trailing layers that form the adapter.
    pub adapter_layers: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { adapter_layers: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub server_power_w: f64,
    pub client_power_w: f64,
    pub noise_power_w: f64,
    pub path_loss_db: f64,
    pub total_bandwidth_hz: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        let l = LinkBudget::default();
        Self {
            server_power_w: l.server_power_w,
            client_power_w: l.client_power_w,
            noise_power_w: l.noise_power_w,
            path_loss_db: l.path_loss_db,
            total_bandwidth_hz: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintsConfig {
    pub beta_min: f64,
    pub beta_max: f64,
    pub xi: f64,
    pub phi: f64,
    pub psi: f64,
    pub gamma_min: f64,
    /// Multiplier from weight bytes to peak training memory.
    pub memory_overhead: f64,
}

impl Default for ConstraintsConfig {
    fn default() -> Self {
        let c = ConstraintSet::default();
        Self {
            beta_min: c.beta_min,
            beta_max: c.beta_max,
            xi: c.xi,
            phi: c.phi,
            psi: c.psi,
            gamma_min: c.gamma_min,
            memory_overhead: c.memory_overhead,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub n_clients: usize,
    pub f0_flops: f64,
    /// Speed factors are drawn uniformly from this range and scale `f0_flops`.
    pub speed_range: [f64; 2],
    pub memory_range_gb: [f64; 2],
    /// Per-client dataset sizes; empty means equal.
    pub dataset_sizes: Vec<u64>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_clients: 8,
            f0_flops: 1e12,
            speed_range: [0.5, 2.0],
            memory_range_gb: [4.0, 8.0],
            dataset_sizes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub m_iterations: usize,
    pub batch_size: usize,
    pub adapter_dim: usize,
    pub step_scale: f64,
    pub initial_loss: f64,
    pub floor_loss: f64,
    pub decay_rate: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let e = Experiment::default();
        Self {
            m_iterations: e.local_iterations,
            batch_size: e.constraints.batch_size,
            adapter_dim: e.adapter_dim,
            step_scale: e.step_scale,
            initial_loss: e.initial_loss,
            floor_loss: e.floor_loss,
            decay_rate: e.decay_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub epsilon_s: f64,
    pub max_iters: usize,
    pub rebalance: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = BcdOptions::default();
        Self {
            epsilon_s: o.epsilon_s,
            max_iters: o.max_iters,
            rebalance: o.rebalance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub name: PolicyName,
    /// Pruning rate every client gets under the ubfp baseline.
    pub ubfp_beta: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            name: PolicyName::Jcpba,
            ubfp_beta: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub rounds: usize,
    pub seed: u64,
    /// Pins the channel draws independently of `seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel_seed: Option<u64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            seed: 42,
            channel_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Listed from least to most heterogeneous.
    pub speed_ranges: Vec<[f64; 2]>,
    pub policies: Vec<PolicyName>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            speed_ranges: REFERENCE_SPEED_RANGES.iter().map(|&(a, b)| [a, b]).collect(),
            policies: vec![PolicyName::Jcpba, PolicyName::Ubfp],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub grid_beta: usize,
    /// Allowed relative gap before `oracle-check` reports failure.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            grid_beta: 201,
            tolerance: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    pub partition: PartitionConfig,
    pub link: LinkConfig,
    pub constraints: ConstraintsConfig,
    pub population: PopulationConfig,
    pub training: TrainingConfig,
    pub solver: SolverConfig,
    pub policy: PolicyConfig,
    pub simulation: SimulationConfig,
    pub sweep: SweepConfig,
    pub oracle: OracleConfig,
    pub output: OutputConfig,
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        match unknown_field(&msg) {
            Some(key) => ScenarioError::UnknownKey { key },
            None => ScenarioError::Parse(e.to_string()),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn unknown_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

fn positive(key: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive and finite, got {v}")))
    }
}

fn finite(key: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be finite, got {v}")))
    }
}

fn range(key: &str, [lo, hi]: [f64; 2]) -> Result<(), ScenarioError> {
    positive(key, lo)?;
    finite(key, hi)?;
    if lo > hi {
        return Err(invalid(key, format!("lower end {lo} exceeds upper end {hi}")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let model = self.model.descriptor().map_err(|e| invalid("model.preset", e.to_string()))?;
        model.validate().map_err(|e| invalid("model", e.to_string()))?;
        PartitionSpec::adapter_suffix(model.n_layers, self.partition.adapter_layers)
            .validate(&model)
            .map_err(|e| invalid("partition.adapter_layers", e.to_string()))?;

        let l = &self.link;
        positive("link.server_power_w", l.server_power_w)?;
        positive("link.client_power_w", l.client_power_w)?;
        positive("link.noise_power_w", l.noise_power_w)?;
        finite("link.path_loss_db", l.path_loss_db)?;
        positive("link.total_bandwidth_hz", l.total_bandwidth_hz)?;

        let c = &self.constraints;
        if !(0.0..1.0).contains(&c.beta_min) {
            return Err(invalid("constraints.beta_min", format!("must lie in [0, 1), got {}", c.beta_min)));
        }
        if !(0.0..1.0).contains(&c.beta_max) {
            return Err(invalid("constraints.beta_max", format!("must lie in [0, 1), got {}", c.beta_max)));
        }
        if c.beta_min > c.beta_max {
            return Err(invalid(
                "constraints.beta_min",
                format!("{} exceeds constraints.beta_max = {}", c.beta_min, c.beta_max),
            ));
        }
        finite("constraints.xi", c.xi)?;
        finite("constraints.phi", c.phi)?;
        positive("constraints.psi", c.psi)?;
        finite("constraints.gamma_min", c.gamma_min)?;
        positive("constraints.memory_overhead", c.memory_overhead)?;

        let p = &self.population;
        if p.n_clients == 0 {
            return Err(invalid("population.n_clients", "at least one client required"));
        }
        positive("population.f0_flops", p.f0_flops)?;
        range("population.speed_range", p.speed_range)?;
        range("population.memory_range_gb", p.memory_range_gb)?;
        if !p.dataset_sizes.is_empty() {
            if p.dataset_sizes.len() != p.n_clients {
                return Err(invalid(
                    "population.dataset_sizes",
                    format!("{} entries for {} clients", p.dataset_sizes.len(), p.n_clients),
                ));
            }
            if p.dataset_sizes.iter().all(|&d| d == 0) {
                return Err(invalid("population.dataset_sizes", "at least one size must be positive"));
            }
        }

        let t = &self.training;
        if t.m_iterations == 0 {
            return Err(invalid("training.m_iterations", "must be at least 1"));
        }
        if t.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be at least 1"));
        }
        finite("training.step_scale", t.step_scale)?;
        finite("training.initial_loss", t.initial_loss)?;
        finite("training.floor_loss", t.floor_loss)?;
        if !(0.0..=1.0).contains(&t.decay_rate) {
            return Err(invalid("training.decay_rate", format!("must lie in [0, 1], got {}", t.decay_rate)));
        }

        positive("solver.epsilon_s", self.solver.epsilon_s)?;
        if self.solver.max_iters == 0 {
            return Err(invalid("solver.max_iters", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.policy.ubfp_beta) {
            return Err(invalid("policy.ubfp_beta", format!("must lie in [0, 1), got {}", self.policy.ubfp_beta)));
        }
        if self.sweep.speed_ranges.is_empty() {
            return Err(invalid("sweep.speed_ranges", "at least one range required"));
        }
        for r in &self.sweep.speed_ranges {
            range("sweep.speed_ranges", *r)?;
        }
        if self.sweep.policies.is_empty() {
            return Err(invalid("sweep.policies", "at least one policy required"));
        }
        if self.oracle.grid_beta == 0 {
            return Err(invalid("oracle.grid_beta", "must be at least 1"));
        }
        if !(self.oracle.tolerance >= 0.0) {
            return Err(invalid("oracle.tolerance", "must be non-negative"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    /// Hex SHA-256 of the canonical serialization. The output location does
    /// not change results, so it is left out.
    pub fn config_hash(&self) -> String {
        let canonical = ScenarioConfig {
            output: OutputConfig::default(),
            ..self.clone()
        };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    pub fn policy(&self) -> Policy {
        self.policy.name.with_beta(self.policy.ubfp_beta)
    }

    pub fn sweep_policies(&self) -> Vec<Policy> {
        self.sweep.policies.iter().map(|p| p.with_beta(self.policy.ubfp_beta)).collect()
    }

    pub fn sweep_ranges(&self) -> Vec<(f64, f64)> {
        self.sweep.speed_ranges.iter().map(|&[a, b]| (a, b)).collect()
    }

    pub fn experiment(&self) -> Result<Experiment, ScenarioError> {
        let model = self.model.descriptor().map_err(|e| invalid("model.preset", e.to_string()))?;
        let c = &self.constraints;
        let p = &self.population;
        let t = &self.training;
        Ok(Experiment {
            model,
            adapter_layers: self.partition.adapter_layers,
            link: LinkBudget {
                server_power_w: self.link.server_power_w,
                client_power_w: self.link.client_power_w,
                noise_power_w: self.link.noise_power_w,
                path_loss_db: self.link.path_loss_db,
            },
            constraints: ConstraintSet {
                total_bandwidth_hz: self.link.total_bandwidth_hz,
                beta_min: c.beta_min,
                beta_max: c.beta_max,
                xi: c.xi,
                phi: c.phi,
                psi: c.psi,
                gamma_min: c.gamma_min,
                n_clients: p.n_clients,
                batch_size: t.batch_size,
                memory_overhead: c.memory_overhead,
            },
            local_iterations: t.m_iterations,
            f0_flops: p.f0_flops,
            speed_range: (p.speed_range[0], p.speed_range[1]),
            memory_range_gb: (p.memory_range_gb[0], p.memory_range_gb[1]),
            dataset_sizes: p.dataset_sizes.clone(),
            solver: BcdOptions {
                epsilon_s: self.solver.epsilon_s,
                max_iters: self.solver.max_iters,
                rebalance: self.solver.rebalance,
                ..BcdOptions::default()
            },
            adapter_dim: t.adapter_dim,
            step_scale: t.step_scale,
            initial_loss: t.initial_loss,
            floor_loss: t.floor_loss,
            decay_rate: t.decay_rate,
            seed: self.simulation.seed,
            channel_seed: self.simulation.channel_seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_reference_setup() {
        let cfg = parse_scenario("").unwrap();
        let exp = cfg.experiment().unwrap();
        assert_eq!(exp, Experiment::default());
        assert_eq!(exp.constraints.total_bandwidth_hz, 1e8);
        assert_eq!(exp.n_clients(), 8);
    }

    #[test]
    fn inverted_bounds_name_the_key() {
        let err = parse_scenario("[constraints]\nbeta_min = 0.9\nbeta_max = 0.5\n").unwrap_err();
        match err {
            ScenarioError::Validation { key, .. } => assert_eq!(key, "constraints.beta_min"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_scenario("[link]\nbandwidth = 3\n").unwrap_err();
        assert!(matches!(err, ScenarioError::UnknownKey { ref key } if key == "bandwidth"), "{err:?}");
        let err = parse_scenario("[nonsense]\n").unwrap_err();
        assert!(matches!(err, ScenarioError::UnknownKey { .. }), "{err:?}");
    }

    #[test]
    fn malformed_is_parse_error() {
        assert!(matches!(parse_scenario("[link\n"), Err(ScenarioError::Parse(_))));
        assert!(matches!(
            parse_scenario("[link]\npath_loss_db = \"loud\"\n"),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn round_trip() {
        let text = "[model]\nn_heads = 8\n[population]\nn_clients = 3\ndataset_sizes = [1, 2, 3]\n\
                    [simulation]\nchannel_seed = 9\n[policy]\nname = \"ubfp\"\n";
        let a = parse_scenario(text).unwrap();
        let b = parse_scenario(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        assert_ne!(a.config_hash(), ScenarioConfig::default().config_hash());
        let moved = ScenarioConfig {
            output: OutputConfig { dir: "elsewhere".into() },
            ..a.clone()
        };
        assert_eq!(moved.config_hash(), a.config_hash());
    }
}
