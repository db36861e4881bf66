//! Transformer architecture accounting.
//!
//! A decoder-only transformer is split into a frozen *emulator* (the leading
//! layers plus embeddings) and a trainable *adapter* (the trailing layers).
//! The emulator is shrunk with structured pruning before dispatch, which
//! removes whole attention heads and MLP neurons. Nothing here touches real
//! weights: the module only counts parameters, bits, FLOPs and bytes.

use serde::{Deserialize, Serialize};
use std::ops::RangeInclusive;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchError {
    #[error("invalid architecture: {0}")]
    InvalidDescriptor(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("pruning rate {0} outside [0, 1)")]
    OutOfRange(f64),
    #[error("unknown architecture preset `{0}`")]
    UnknownPreset(String),
}

/// Shape of a GPT-2 style decoder stack.
///
/// The LM head is tied to the token embedding, so it adds no parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerDescriptor {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// MLP hidden width.
    pub d_ff: usize,
    pub vocab_size: usize,
    /// Size of the learned positional embedding table.
    pub n_positions: usize,
    /// Tokens per training sample.
    pub seq_len: usize,
    pub bytes_per_param: usize,
}

impl TransformerDescriptor {
    pub fn gpt2_medium() -> Self {
        Self {
            n_layers: 24,
            d_model: 1024,
            n_heads: 16,
            d_ff: 4096,
            vocab_size: 50257,
            n_positions: 1024,
            seq_len: 128,
            bytes_per_param: 2,
        }
    }

    pub fn preset(name: &str) -> Result<Self, ArchError> {
        match name {
            "gpt2-medium" => Ok(Self::gpt2_medium()),
            other => Err(ArchError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("n_positions", self.n_positions),
            ("seq_len", self.seq_len),
            ("bytes_per_param", self.bytes_per_param),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ArchError::InvalidDescriptor(format!("{name} must be > 0")));
        }
        if self.n_layers < 2 {
            return Err(ArchError::InvalidDescriptor("n_layers must be >= 2".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ArchError::InvalidDescriptor(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Parameters of one decoder block keeping `heads` attention heads and
    /// `ff` MLP neurons.
    pub fn block_params(&self, heads: usize, ff: usize) -> u64 {
        let d = self.d_model as u64;
        let inner = (heads * self.head_dim()) as u64;
        let ff = ff as u64;
        // qkv projection, output projection (bias stays d-wide)
        let attention = d * 3 * inner + 3 * inner + inner * d + d;
        // up and down projections
        let mlp = d * ff + ff + ff * d + d;
        // two layer norms, gain and bias each
        let norms = 4 * d;
        attention + mlp + norms
    }

    /// Parameters of one block that scale with retained heads/neurons.
    pub fn block_prunable_params(&self, heads: usize, ff: usize) -> u64 {
        let d = self.d_model as u64;
        let inner = (heads * self.head_dim()) as u64;
        let ff = ff as u64;
        inner * (4 * d + 3) + ff * (2 * d + 1)
    }

    pub fn layer_params(&self) -> u64 {
        self.block_params(self.n_heads, self.d_ff)
    }

    /// Token + positional embeddings and the final layer norm.
    pub fn embedding_params(&self) -> u64 {
        let d = self.d_model as u64;
        (self.vocab_size as u64 + self.n_positions as u64) * d + 2 * d
    }

    pub fn total_params(&self) -> u64 {
        self.embedding_params() + self.n_layers as u64 * self.layer_params()
    }

    fn bits(&self, params: u64) -> f64 {
        (params * self.bytes_per_param as u64 * 8) as f64
    }
}

/// Emulator/adapter split of the layer stack. Both ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSpec {
    pub emulator_layers: Option<RangeInclusive<usize>>,
    pub adapter_layers: Option<RangeInclusive<usize>>,
}

impl PartitionSpec {
    /// The last `adapter_layers` layers form the adapter.
    pub fn adapter_suffix(n_layers: usize, adapter_layers: usize) -> Self {
        let emulator = (adapter_layers < n_layers).then(|| 0..=n_layers - adapter_layers - 1);
        let adapter = (adapter_layers > 0).then(|| n_layers - adapter_layers..=n_layers - 1);
        Self {
            emulator_layers: emulator,
            adapter_layers: adapter,
        }
    }

    pub fn validate(&self, desc: &TransformerDescriptor) -> Result<(), ArchError> {
        let last = desc.n_layers - 1;
        let adapter = self
            .adapter_layers
            .as_ref()
            .ok_or_else(|| ArchError::InvalidPartition("adapter range is empty".into()))?;
        if adapter.start() > adapter.end() || *adapter.end() != last {
            return Err(ArchError::InvalidPartition(format!(
                "adapter range {}..={} must be a non-empty suffix ending at layer {last}",
                adapter.start(),
                adapter.end()
            )));
        }
        match &self.emulator_layers {
            None if *adapter.start() == 0 => Ok(()),
            None => Err(ArchError::InvalidPartition(
                "layers before the adapter are not covered".into(),
            )),
            Some(emu) => {
                if *emu.start() != 0 || emu.start() > emu.end() || emu.end() + 1 != *adapter.start() {
                    Err(ArchError::InvalidPartition(format!(
                        "emulator range {}..={} must cover 0..={}",
                        emu.start(),
                        emu.end(),
                        adapter.start().saturating_sub(1)
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn emulator_layer_count(&self) -> usize {
        self.emulator_layers.as_ref().map_or(0, |r| r.end() - r.start() + 1)
    }

    pub fn adapter_layer_count(&self) -> usize {
        self.adapter_layers.as_ref().map_or(0, |r| r.end() - r.start() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSizes {
    pub emulator_params: u64,
    pub adapter_params: u64,
    pub emulator_bits: f64,
    pub adapter_bits: f64,
    pub adapter_update_bits: f64,
}

impl ModelSizes {
    pub fn emulator_bytes(&self) -> f64 {
        self.emulator_bits / 8.0
    }

    pub fn adapter_bytes(&self) -> f64 {
        self.adapter_bits / 8.0
    }

    pub fn update_bytes(&self) -> f64 {
        self.adapter_update_bits / 8.0
    }
}

/// Counts parameters on each side of the partition. Embeddings and the final
/// norm belong to the emulator; they are frozen and never uploaded.
pub fn partition_model(
    desc: &TransformerDescriptor,
    spec: &PartitionSpec,
) -> Result<ModelSizes, ArchError> {
    desc.validate()?;
    spec.validate(desc)?;
    let layer = desc.layer_params();
    let emulator_params = desc.embedding_params() + spec.emulator_layer_count() as u64 * layer;
    let adapter_params = spec.adapter_layer_count() as u64 * layer;
    let adapter_bits = desc.bits(adapter_params);
    Ok(ModelSizes {
        emulator_params,
        adapter_params,
        emulator_bits: desc.bits(emulator_params),
        adapter_bits,
        adapter_update_bits: adapter_bits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrunedEmulatorDescriptor {
    pub base: TransformerDescriptor,
    pub emulator_layers: usize,
    pub pruning_rate: f64,
    pub retained_heads_per_layer: usize,
    pub retained_ff_per_layer: usize,
}

impl PrunedEmulatorDescriptor {
    /// Exact parameter count of the pruned emulator, embeddings included.
    pub fn param_count(&self) -> u64 {
        self.base.embedding_params()
            + self.emulator_layers as u64
                * self
                    .base
                    .block_params(self.retained_heads_per_layer, self.retained_ff_per_layer)
    }

    /// The head/neuron-dependent part of `param_count`.
    pub fn prunable_param_count(&self) -> u64 {
        self.emulator_layers as u64
            * self
                .base
                .block_prunable_params(self.retained_heads_per_layer, self.retained_ff_per_layer)
    }

    pub fn bits(&self) -> f64 {
        self.base.bits(self.param_count())
    }
}

fn retained(total: usize, beta: f64) -> usize {
    (((1.0 - beta) * total as f64).round() as usize).clamp(1, total)
}

pub fn prune_emulator(
    desc: &TransformerDescriptor,
    spec: &PartitionSpec,
    beta: f64,
) -> Result<PrunedEmulatorDescriptor, ArchError> {
    if !(0.0..1.0).contains(&beta) {
        return Err(ArchError::OutOfRange(beta));
    }
    desc.validate()?;
    spec.validate(desc)?;
    Ok(PrunedEmulatorDescriptor {
        base: *desc,
        emulator_layers: spec.emulator_layer_count(),
        pruning_rate: beta,
        retained_heads_per_layer: retained(desc.n_heads, beta),
        retained_ff_per_layer: retained(desc.d_ff, beta),
    })
}

/// Linear size model used by the optimizer: `(1 - beta) * |w^E|`.
pub fn emulator_bits_linear(sizes: &ModelSizes, beta: f64) -> f64 {
    (1.0 - beta) * sizes.emulator_bits
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationFlops {
    /// Adapter cost `a` (forward and backward).
    pub adapter: f64,
    /// Unpruned emulator cost `e0` (forward only).
    pub emulator_unpruned: f64,
    /// `a + e0 (1 - beta)`.
    pub total: f64,
}

pub fn flops_per_iteration(sizes: &ModelSizes, seq_len: usize, beta: f64, batch: usize) -> IterationFlops {
    let tokens = (batch * seq_len) as f64;
    let adapter = 6.0 * sizes.adapter_params as f64 * tokens;
    let emulator_unpruned = 2.0 * sizes.emulator_params as f64 * tokens;
    IterationFlops {
        adapter,
        emulator_unpruned,
        total: adapter + emulator_unpruned * (1.0 - beta),
    }
}

/// Client memory needed to hold the compressed package, `b(beta)`, in bytes.
/// `overhead` (>= 1) covers activations and optimizer state.
pub fn memory_footprint(sizes: &ModelSizes, beta: f64, overhead: f64) -> f64 {
    overhead * (sizes.adapter_bytes() + (1.0 - beta) * sizes.emulator_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TransformerDescriptor {
        TransformerDescriptor {
            n_layers: 2,
            d_model: 4,
            n_heads: 2,
            d_ff: 8,
            vocab_size: 10,
            n_positions: 8,
            seq_len: 8,
            bytes_per_param: 2,
        }
    }

    #[test]
    fn gpt2_medium_total_matches_published_size() {
        let d = TransformerDescriptor::gpt2_medium();
        d.validate().unwrap();
        assert_eq!(d.total_params(), 354_823_168);
    }

    #[test]
    fn adapter_is_two_layers() {
        let d = TransformerDescriptor::gpt2_medium();
        let spec = PartitionSpec::adapter_suffix(24, 2);
        assert_eq!(spec.emulator_layers, Some(0..=21));
        assert_eq!(spec.adapter_layers, Some(22..=23));
        let sizes = partition_model(&d, &spec).unwrap();
        assert_eq!(sizes.adapter_params, 2 * d.layer_params());
        assert_eq!(sizes.emulator_params + sizes.adapter_params, d.total_params());
        assert_eq!(sizes.adapter_update_bits, sizes.adapter_bits);
        assert_eq!(sizes.adapter_bits, (sizes.adapter_params * 16) as f64);
    }

    #[test]
    fn degenerate_partitions_rejected() {
        let d = tiny();
        let all_emulator = PartitionSpec {
            emulator_layers: Some(0..=1),
            adapter_layers: None,
        };
        assert!(matches!(partition_model(&d, &all_emulator), Err(ArchError::InvalidPartition(_))));
        let gap = PartitionSpec {
            emulator_layers: Some(0..=0),
            adapter_layers: Some(1..=0),
        };
        assert!(partition_model(&d, &gap).is_err());
        let not_suffix = PartitionSpec {
            emulator_layers: Some(1..=1),
            adapter_layers: Some(0..=0),
        };
        assert!(partition_model(&d, &not_suffix).is_err());
        // all-adapter is allowed: the emulator is then embeddings only
        let all_adapter = PartitionSpec::adapter_suffix(2, 2);
        assert!(partition_model(&d, &all_adapter).is_ok());
    }

    #[test]
    fn descriptor_validation() {
        let mut d = tiny();
        d.n_heads = 3;
        assert!(d.validate().is_err());
        let mut d = tiny();
        d.n_layers = 1;
        assert!(d.validate().is_err());
        let mut d = tiny();
        d.vocab_size = 0;
        assert!(d.validate().is_err());
        assert!(TransformerDescriptor::preset("bert").is_err());
    }

    #[test]
    fn prune_halving() {
        let d = TransformerDescriptor::gpt2_medium();
        let spec = PartitionSpec::adapter_suffix(24, 2);
        let p = prune_emulator(&d, &spec, 0.5).unwrap();
        assert_eq!(p.retained_heads_per_layer, 8);
        assert_eq!(p.retained_ff_per_layer, 2048);
    }

    #[test]
    fn prune_identity_and_range() {
        let d = TransformerDescriptor::gpt2_medium();
        let spec = PartitionSpec::adapter_suffix(24, 2);
        let sizes = partition_model(&d, &spec).unwrap();
        let p = prune_emulator(&d, &spec, 0.0).unwrap();
        assert_eq!(p.param_count(), sizes.emulator_params);
        assert_eq!(p.bits(), sizes.emulator_bits);
        assert!(matches!(prune_emulator(&d, &spec, 1.0), Err(ArchError::OutOfRange(_))));
        assert!(prune_emulator(&d, &spec, -0.1).is_err());
    }

    #[test]
    fn retained_counts_never_reach_zero() {
        let d = tiny();
        let spec = PartitionSpec::adapter_suffix(2, 1);
        let p = prune_emulator(&d, &spec, 0.99).unwrap();
        assert_eq!(p.retained_heads_per_layer, 1);
        assert_eq!(p.retained_ff_per_layer, 1);
    }

    #[test]
    fn linear_bits() {
        let sizes = ModelSizes {
            emulator_params: 0,
            adapter_params: 0,
            emulator_bits: 8e9,
            adapter_bits: 0.0,
            adapter_update_bits: 0.0,
        };
        assert_eq!(emulator_bits_linear(&sizes, 0.0), 8e9);
        assert_eq!(emulator_bits_linear(&sizes, 1.0), 0.0);
        assert_eq!(emulator_bits_linear(&sizes, 0.25), 6e9);
    }

    #[test]
    fn flops_endpoints() {
        let d = TransformerDescriptor::gpt2_medium();
        let sizes = partition_model(&d, &PartitionSpec::adapter_suffix(24, 2)).unwrap();
        let full = flops_per_iteration(&sizes, d.seq_len, 1.0, 4);
        assert_eq!(full.total, full.adapter);
        let none = flops_per_iteration(&sizes, d.seq_len, 0.0, 4);
        assert_eq!(none.total, none.adapter + none.emulator_unpruned);
    }

    #[test]
    fn memory_cases() {
        let sizes = ModelSizes {
            emulator_params: 0,
            adapter_params: 0,
            emulator_bits: 8.0 * 800.0,
            adapter_bits: 8.0 * 100.0,
            adapter_update_bits: 8.0 * 100.0,
        };
        assert_eq!(memory_footprint(&sizes, 1.0, 1.0), 100.0);
        assert_eq!(memory_footprint(&sizes, 0.0, 2.0), 2.0 * 900.0);
        assert!(memory_footprint(&sizes, 0.7, 4.0) < memory_footprint(&sizes, 0.3, 4.0));
    }
}
