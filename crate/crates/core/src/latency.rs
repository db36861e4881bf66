//! Per-client round latency: local computation plus model download and
//! adapter-update upload.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatencyError {
    #[error("zero transmission rate (client unreachable this round)")]
    ZeroRate,
    #[error("empty client set")]
    EmptyClientSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeProfile {
    /// Compute speed in FLOP/s.
    pub flops_per_s: f64,
    /// Local iterations per round, `M`.
    pub iterations: usize,
    /// Mini-batch size, `N`.
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub comp_s: f64,
    pub comm_down_s: f64,
    pub comm_up_s: f64,
    pub total_s: f64,
}

/// `M (a + e0 (1 - beta)) / f_k`.
pub fn comp_latency(adapter_flops: f64, emulator_flops: f64, beta: f64, prof: &ComputeProfile) -> f64 {
    prof.iterations as f64 * (adapter_flops + emulator_flops * (1.0 - beta)) / prof.flops_per_s
}

/// Returns `(download_s, upload_s)`.
pub fn comm_latency(
    adapter_bits: f64,
    emulator_bits: f64,
    update_bits: f64,
    beta: f64,
    rate_down: f64,
    rate_up: f64,
) -> Result<(f64, f64), LatencyError> {
    if rate_down <= 0.0 || rate_up <= 0.0 {
        return Err(LatencyError::ZeroRate);
    }
    let down = (adapter_bits + (1.0 - beta) * emulator_bits) / rate_down;
    Ok((down, update_bits / rate_up))
}

/// Everything needed to evaluate one client's latency for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientLatencyInputs {
    pub adapter_flops: f64,
    pub emulator_flops: f64,
    pub compute: ComputeProfile,
    pub adapter_bits: f64,
    pub emulator_bits: f64,
    pub update_bits: f64,
    pub beta: f64,
    pub rate_down: f64,
    pub rate_up: f64,
}

pub fn client_latency(inputs: &ClientLatencyInputs) -> Result<LatencyBreakdown, LatencyError> {
    let comp_s = comp_latency(inputs.adapter_flops, inputs.emulator_flops, inputs.beta, &inputs.compute);
    let (comm_down_s, comm_up_s) = comm_latency(
        inputs.adapter_bits,
        inputs.emulator_bits,
        inputs.update_bits,
        inputs.beta,
        inputs.rate_down,
        inputs.rate_up,
    )?;
    Ok(LatencyBreakdown {
        comp_s,
        comm_down_s,
        comm_up_s,
        total_s: comp_s + comm_down_s + comm_up_s,
    })
}

/// The round finishes when the slowest client does.
pub fn round_latency(breakdowns: &[LatencyBreakdown]) -> Result<f64, LatencyError> {
    breakdowns
        .iter()
        .map(|b| b.total_s)
        .reduce(f64::max)
        .ok_or(LatencyError::EmptyClientSet)
}
