//! Multi-round simulation of federated adapter fine-tuning.
//!
//! Each round the server draws fresh channel gains, chooses pruning rates and
//! bandwidths (JCPBA or the uniform/fixed baseline), and every client
//! downloads its pruned emulator plus the adapter, runs `M` local iterations
//! and uploads its adapter delta. Wall-clock time per round is set by the
//! slowest client.
//!
//! Local training is synthetic: adapter deltas are seeded random
//! perturbations and the loss follows a proxy contraction. Only the latency
//! and overhead accounting is modeled faithfully.

use crate::arch::{flops_per_iteration, partition_model, ArchError, IterationFlops, ModelSizes, PartitionSpec, TransformerDescriptor};
use crate::channel::{rates, sample_channel, ChannelState, LinkBudget};
use crate::jcpba::{bcd_solve, validate_allocation, Allocation, BcdOptions, ClientStatic, ConstraintSet, SolveError, Violation};
use crate::latency::{client_latency, round_latency, ClientLatencyInputs, ComputeProfile, LatencyBreakdown, LatencyError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const GB: f64 = 1e9;

/// Tolerance used when re-validating recorded allocations.
pub const VALIDATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("round {round}: solver failed")]
    Solve { round: usize, source: SolveError },
    #[error("round {round}: latency evaluation failed")]
    Latency { round: usize, source: LatencyError },
    #[error("round {round}: allocation fails re-validation: {violations:?}")]
    ConstraintViolation { round: usize, violations: Vec<Violation> },
    #[error("adapter dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("invalid setup: {0}")]
    InvalidSetup(String),
}

impl SimError {
    pub fn solve_error(&self) -> Option<&SolveError> {
        match self {
            SimError::Solve { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// SplitMix64 finalizer; derives independent stream seeds from one seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPopulation {
    pub flops_per_s: Vec<f64>,
    pub memory_budget_bytes: Vec<f64>,
    /// Sample coefficient of variation of `flops_per_s`.
    pub heterogeneity_cv: f64,
    pub seed: u64,
}

/// Sample mean and (n-1)-normalized standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let (mean, std) = mean_std(xs);
    if mean == 0.0 {
        0.0
    } else {
        std / mean
    }
}

/// Compute speeds `u_k f0` with `u_k ~ U[speed_range]` and memory budgets
/// `~ U[mem_range_gb]`. All speed draws come first, so two ranges sampled
/// with the same seed are paired client by client.
pub fn sample_population(
    n_clients: usize,
    f0: f64,
    speed_range: (f64, f64),
    mem_range_gb: (f64, f64),
    seed: u64,
) -> ClientPopulation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.gen::<f64>();
    let flops_per_s: Vec<f64> = (0..n_clients).map(|_| uniform(speed_range) * f0).collect();
    let memory_budget_bytes = (0..n_clients).map(|_| uniform(mem_range_gb) * GB).collect();
    ClientPopulation {
        heterogeneity_cv: coefficient_of_variation(&flops_per_s),
        flops_per_s,
        memory_budget_bytes,
        seed,
    }
}

/// Toy stand-in for the adapter weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterVector(pub Vec<f64>);

impl AdapterVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Dataset-size-weighted FedAvg of adapter deltas applied to `global`.
///
/// Sizes are reduced by their gcd and the weighted sum is divided once, so
/// equal sizes give exactly `global + sum(deltas) / K`.
pub fn aggregate_adapter(
    global: &AdapterVector,
    deltas: &[AdapterVector],
    dataset_sizes: &[u64],
) -> Result<AdapterVector, SimError> {
    if deltas.len() != dataset_sizes.len() {
        return Err(SimError::DimensionMismatch {
            expected: deltas.len(),
            got: dataset_sizes.len(),
        });
    }
    if dataset_sizes.iter().any(|&n| n == 0) {
        return Err(SimError::InvalidSetup("dataset sizes must be positive".into()));
    }
    if let Some(d) = deltas.iter().find(|d| d.dim() != global.dim()) {
        return Err(SimError::DimensionMismatch {
            expected: global.dim(),
            got: d.dim(),
        });
    }
    let g = dataset_sizes.iter().fold(0, |acc, &n| gcd(acc, n));
    let total = dataset_sizes.iter().map(|&n| (n / g) as f64).sum::<f64>();
    let mut acc = vec![0.0; global.dim()];
    for (delta, &n) in deltas.iter().zip(dataset_sizes) {
        let m = (n / g) as f64;
        acc.iter_mut().zip(&delta.0).for_each(|(a, d)| *a += m * d);
    }
    Ok(AdapterVector(
        global.0.iter().zip(&acc).map(|(g, a)| g + a / total).collect(),
    ))
}

/// Synthetic local update: each coordinate uniform in `[-step_scale, step_scale]`,
/// seeded by `(seed, round, client)`.
pub fn local_update(global: &AdapterVector, seed: u64, round: usize, client: usize, step_scale: f64) -> AdapterVector {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, round as u64), client as u64));
    AdapterVector(
        (0..global.dim())
            .map(|_| step_scale * rng.gen_range(-1.0..=1.0))
            .collect(),
    )
}

/// Synthetic loss: contracts toward `floor` at rate `decay * (1 - mean_beta)`.
pub fn proxy_loss_step(current: f64, mean_beta: f64, decay_rate: f64, floor: f64) -> f64 {
    floor + (current - floor) * (1.0 - decay_rate * (1.0 - mean_beta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Policy {
    Jcpba,
    Ubfp { beta_fixed: f64 },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Jcpba => "jcpba",
            Policy::Ubfp { .. } => "ubfp",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Uniform bandwidth `B/K` and the same pruning rate for every client.
pub fn ubfp_policy(clients: &[ClientStatic], cs: &ConstraintSet, beta_fixed: f64) -> Result<Allocation, SolveError> {
    if clients.is_empty() {
        return Err(SolveError::EmptyClientSet);
    }
    let k = clients.len();
    let alloc = Allocation::evaluate(clients, vec![beta_fixed; k], vec![cs.total_bandwidth_hz / k as f64; k]);
    let violations = validate_allocation(&alloc, clients, cs, VALIDATION_TOL);
    if let Some(v) = violations.first() {
        use crate::jcpba::Check;
        return Err(match v.check {
            Check::C3 => SolveError::InfeasibleMemory {
                client: v.client.unwrap_or(0),
                detail: format!("fixed pruning rate {beta_fixed}: {}", v.detail),
            },
            Check::C4 => SolveError::InfeasibleBox {
                client: v.client.unwrap_or(0),
                lo: cs.beta_min,
                hi: cs.beta_max,
            },
            Check::C5 => SolveError::InfeasibleC5(v.detail.clone()),
            Check::C1 | Check::C2 => SolveError::NoBandwidth(cs.total_bandwidth_hz),
            Check::Consistency => SolveError::InvalidInput(v.detail.clone()),
        });
    }
    Ok(alloc)
}

/// Fully resolved experiment parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: TransformerDescriptor,
    pub adapter_layers: usize,
    pub link: LinkBudget,
    /// Also carries `B`, `K` and the batch size `N`.
    pub constraints: ConstraintSet,
    pub local_iterations: usize,
    pub f0_flops: f64,
    pub speed_range: (f64, f64),
    pub memory_range_gb: (f64, f64),
    /// Empty means equal sizes.
    pub dataset_sizes: Vec<u64>,
    pub solver: BcdOptions,
    pub adapter_dim: usize,
    pub step_scale: f64,
    pub initial_loss: f64,
    pub floor_loss: f64,
    pub decay_rate: f64,
    pub seed: u64,
    /// Overrides the channel stream derived from `seed`.
    pub channel_seed: Option<u64>,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            model: TransformerDescriptor::gpt2_medium(),
            adapter_layers: 2,
            link: LinkBudget::default(),
            constraints: ConstraintSet::default(),
            local_iterations: 20,
            f0_flops: 1e12,
            speed_range: (0.5, 2.0),
            memory_range_gb: (4.0, 8.0),
            dataset_sizes: Vec::new(),
            solver: BcdOptions::default(),
            adapter_dim: 32,
            step_scale: 0.01,
            initial_loss: 3.0,
            floor_loss: 1.0,
            decay_rate: 0.05,
            seed: 42,
            channel_seed: None,
        }
    }
}

impl Experiment {
    pub fn n_clients(&self) -> usize {
        self.constraints.n_clients
    }

    pub fn sizes(&self) -> Result<ModelSizes, ArchError> {
        partition_model(&self.model, &PartitionSpec::adapter_suffix(self.model.n_layers, self.adapter_layers))
    }

    pub fn population(&self) -> ClientPopulation {
        sample_population(self.n_clients(), self.f0_flops, self.speed_range, self.memory_range_gb, self.seed)
    }

    pub fn channel_seed(&self) -> u64 {
        self.channel_seed.unwrap_or_else(|| mix_seed(self.seed, 1))
    }

    pub fn training_seed(&self) -> u64 {
        mix_seed(self.seed, 2)
    }

    /// Solver inputs for `round`, drawn from the same streams a simulation uses.
    pub fn round_clients(&self, round: usize) -> Result<Vec<ClientStatic>, SimError> {
        if self.n_clients() == 0 {
            return Err(SimError::InvalidSetup("at least one client required".into()));
        }
        let sizes = self.sizes()?;
        let flops = flops_per_iteration(&sizes, self.model.seq_len, 0.0, self.constraints.batch_size);
        let mut rng = ChaCha8Rng::seed_from_u64(self.channel_seed());
        let mut channel = sample_channel(self.n_clients(), &self.link, 0, &mut rng);
        for r in 1..=round {
            channel = sample_channel(self.n_clients(), &self.link, r, &mut rng);
        }
        Ok(client_statics(self, &self.population(), &sizes, &flops, &channel))
    }

    fn dataset_sizes(&self) -> Result<Vec<u64>, SimError> {
        let k = self.n_clients();
        match self.dataset_sizes.len() {
            0 => Ok(vec![1; k]),
            n if n == k => Ok(self.dataset_sizes.clone()),
            n => Err(SimError::InvalidSetup(format!("{n} dataset sizes for {k} clients"))),
        }
    }
}

/// Builds the solver view of every client for one channel realization.
pub fn client_statics(
    exp: &Experiment,
    population: &ClientPopulation,
    sizes: &ModelSizes,
    flops: &IterationFlops,
    channel: &ChannelState,
) -> Vec<ClientStatic> {
    (0..population.flops_per_s.len())
        .map(|k| ClientStatic {
            compute: ComputeProfile {
                flops_per_s: population.flops_per_s[k],
                iterations: exp.local_iterations,
                batch_size: exp.constraints.batch_size,
            },
            memory_budget_bytes: population.memory_budget_bytes[k],
            spectral_eff_down: channel.spectral_efficiency_down(&exp.link, k),
            spectral_eff_up: channel.spectral_efficiency_up(&exp.link, k),
            adapter_flops: flops.adapter,
            emulator_flops: flops.emulator_unpruned,
            sizes: *sizes,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: usize,
    pub allocation: Allocation,
    pub breakdowns: Vec<LatencyBreakdown>,
    pub round_latency_s: f64,
    /// `M d_k` per client.
    pub per_client_flops: Vec<f64>,
    /// Downlink plus uplink bytes per client.
    pub per_client_bytes: Vec<f64>,
    pub solver_iterations: Option<usize>,
    pub adapter_norm: f64,
    pub proxy_loss: f64,
    pub cumulative_time_s: f64,
}

/// Round-by-round state of one simulated run.
pub struct Simulator {
    exp: Experiment,
    policy: Policy,
    sizes: ModelSizes,
    flops: IterationFlops,
    population: ClientPopulation,
    dataset_sizes: Vec<u64>,
    channel_rng: ChaCha8Rng,
    global: AdapterVector,
    loss: f64,
    elapsed_s: f64,
    round: usize,
}

impl Simulator {
    pub fn new(exp: &Experiment, policy: Policy) -> Result<Self, SimError> {
        if exp.n_clients() == 0 {
            return Err(SimError::InvalidSetup("at least one client required".into()));
        }
        let sizes = exp.sizes()?;
        let flops = flops_per_iteration(&sizes, exp.model.seq_len, 0.0, exp.constraints.batch_size);
        Ok(Self {
            policy,
            sizes,
            flops,
            population: exp.population(),
            dataset_sizes: exp.dataset_sizes()?,
            channel_rng: ChaCha8Rng::seed_from_u64(exp.channel_seed()),
            global: AdapterVector::zeros(exp.adapter_dim),
            loss: exp.initial_loss,
            elapsed_s: 0.0,
            round: 0,
            exp: exp.clone(),
        })
    }

    pub fn population(&self) -> &ClientPopulation {
        &self.population
    }

    pub fn sizes(&self) -> &ModelSizes {
        &self.sizes
    }

    pub fn run_round(&mut self) -> Result<RoundRecord, SimError> {
        let round = self.round;
        let exp = &self.exp;
        let k = exp.n_clients();
        let channel = sample_channel(k, &exp.link, round, &mut self.channel_rng);
        let clients = client_statics(exp, &self.population, &self.sizes, &self.flops, &channel);

        let (allocation, solver_iterations) = match &self.policy {
            Policy::Jcpba => {
                let report = bcd_solve(&clients, &exp.constraints, &exp.solver)
                    .map_err(|source| SimError::Solve { round, source })?;
                (report.allocation, Some(report.iterations))
            }
            Policy::Ubfp { beta_fixed } => (
                ubfp_policy(&clients, &exp.constraints, *beta_fixed).map_err(|source| SimError::Solve { round, source })?,
                None,
            ),
        };
        let violations = validate_allocation(&allocation, &clients, &exp.constraints, VALIDATION_TOL);
        if !violations.is_empty() {
            return Err(SimError::ConstraintViolation { round, violations });
        }

        let mut breakdowns = Vec::with_capacity(k);
        let mut per_client_flops = Vec::with_capacity(k);
        let mut per_client_bytes = Vec::with_capacity(k);
        for (i, c) in clients.iter().enumerate() {
            let beta = allocation.beta[i];
            let (rate_down, rate_up) = rates(&channel, &exp.link, allocation.bandwidth_hz[i], i);
            let b = client_latency(&ClientLatencyInputs {
                adapter_flops: c.adapter_flops,
                emulator_flops: c.emulator_flops,
                compute: c.compute,
                adapter_bits: self.sizes.adapter_bits,
                emulator_bits: self.sizes.emulator_bits,
                update_bits: self.sizes.adapter_update_bits,
                beta,
                rate_down,
                rate_up,
            })
            .map_err(|source| SimError::Latency { round, source })?;
            breakdowns.push(b);
            let d = flops_per_iteration(&self.sizes, exp.model.seq_len, beta, exp.constraints.batch_size);
            per_client_flops.push(exp.local_iterations as f64 * d.total);
            per_client_bytes.push(
                (self.sizes.adapter_bits + (1.0 - beta) * self.sizes.emulator_bits) / 8.0
                    + self.sizes.adapter_update_bits / 8.0,
            );
        }
        let round_latency_s = round_latency(&breakdowns).map_err(|source| SimError::Latency { round, source })?;

        let seed = exp.training_seed();
        let deltas: Vec<AdapterVector> = (0..k)
            .map(|i| local_update(&self.global, seed, round, i, exp.step_scale))
            .collect();
        self.global = aggregate_adapter(&self.global, &deltas, &self.dataset_sizes)?;
        let mean_beta = allocation.beta.iter().sum::<f64>() / k as f64;
        self.loss = proxy_loss_step(self.loss, mean_beta, exp.decay_rate, exp.floor_loss);
        self.elapsed_s += round_latency_s;
        self.round += 1;

        Ok(RoundRecord {
            round_index: round,
            allocation,
            breakdowns,
            round_latency_s,
            per_client_flops,
            per_client_bytes,
            solver_iterations,
            adapter_norm: self.global.norm(),
            proxy_loss: self.loss,
            cumulative_time_s: self.elapsed_s,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub rounds: usize,
    pub total_time_s: f64,
    pub mean_round_latency_s: f64,
    /// Pooled over rounds and clients.
    pub flops_mean: f64,
    pub flops_std: f64,
    pub bytes_mean: f64,
    pub bytes_std: f64,
    pub final_proxy_loss: f64,
    pub heterogeneity_cv: f64,
    /// Adapter updates and loss are synthetic stand-ins.
    pub synthetic_training: bool,
    #[serde(skip)]
    pub records: Vec<RoundRecord>,
}

impl RunSummary {
    pub fn from_records(policy: &Policy, population: &ClientPopulation, initial_loss: f64, records: Vec<RoundRecord>) -> Self {
        let flops: Vec<f64> = records.iter().flat_map(|r| r.per_client_flops.iter().copied()).collect();
        let bytes: Vec<f64> = records.iter().flat_map(|r| r.per_client_bytes.iter().copied()).collect();
        let (flops_mean, flops_std) = mean_std(&flops);
        let (bytes_mean, bytes_std) = mean_std(&bytes);
        let total_time_s = records.last().map_or(0.0, |r| r.cumulative_time_s);
        Self {
            policy: policy.name().to_string(),
            rounds: records.len(),
            total_time_s,
            mean_round_latency_s: if records.is_empty() { 0.0 } else { total_time_s / records.len() as f64 },
            flops_mean,
            flops_std,
            bytes_mean,
            bytes_std,
            final_proxy_loss: records.last().map_or(initial_loss, |r| r.proxy_loss),
            heterogeneity_cv: population.heterogeneity_cv,
            synthetic_training: true,
            records,
        }
    }
}

pub fn run_experiment(exp: &Experiment, n_rounds: usize, policy: &Policy) -> Result<RunSummary, SimError> {
    let mut sim = Simulator::new(exp, policy.clone())?;
    let records = (0..n_rounds).map(|_| sim.run_round()).collect::<Result<Vec<_>, _>>()?;
    Ok(RunSummary::from_records(policy, sim.population(), exp.initial_loss, records))
}

pub const REFERENCE_SPEED_RANGES: [(f64, f64); 3] = [(1.0, 1.5), (0.5, 2.0), (0.2, 2.5)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub cell_index: usize,
    pub speed_range: (f64, f64),
    pub policy: String,
    pub heterogeneity_cv: f64,
    pub mean_round_latency_s: f64,
    pub total_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrowth {
    pub policy: String,
    pub low_latency_s: f64,
    pub high_latency_s: f64,
    /// `100 (high - low) / low`.
    pub growth_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub growth: Vec<SweepGrowth>,
}

/// Runs every `(range, policy)` pair with the same seed, so populations are
/// paired across ranges and channels are identical. Ranges should be listed
/// from least to most heterogeneous; growth compares the first and last.
pub fn heterogeneity_sweep(
    base: &Experiment,
    speed_ranges: &[(f64, f64)],
    policies: &[Policy],
    n_rounds: usize,
    seed: u64,
) -> Result<SweepResult, SimError> {
    let mut cells = Vec::with_capacity(speed_ranges.len() * policies.len());
    for &range in speed_ranges {
        for policy in policies {
            let exp = Experiment {
                speed_range: range,
                seed,
                ..base.clone()
            };
            let summary = run_experiment(&exp, n_rounds, policy)?;
            cells.push(SweepCell {
                cell_index: cells.len(),
                speed_range: range,
                policy: policy.name().to_string(),
                heterogeneity_cv: summary.heterogeneity_cv,
                mean_round_latency_s: summary.mean_round_latency_s,
                total_time_s: summary.total_time_s,
            });
        }
    }
    let growth = match (speed_ranges.first(), speed_ranges.last()) {
        (Some(&lo), Some(&hi)) => policies
            .iter()
            .map(|p| {
                let find = |r: (f64, f64)| {
                    cells
                        .iter()
                        .find(|c| c.speed_range == r && c.policy == p.name())
                        .map_or(0.0, |c| c.mean_round_latency_s)
                };
                let (low, high) = (find(lo), find(hi));
                SweepGrowth {
                    policy: p.name().to_string(),
                    low_latency_s: low,
                    high_latency_s: high,
                    growth_pct: if low > 0.0 { 100.0 * (high - low) / low } else { 0.0 },
                }
            })
            .collect(),
        _ => Vec::new(),
    };
    Ok(SweepResult { cells, growth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_speed_range() {
        let p = sample_population(8, 1e12, (1.0, 1.0), (4.0, 8.0), 3);
        assert!(p.flops_per_s.iter().all(|&f| f == 1e12));
        assert_eq!(p.heterogeneity_cv, 0.0);
        assert!(p.memory_budget_bytes.iter().all(|&m| (4.0 * GB..=8.0 * GB).contains(&m)));
    }

    #[test]
    fn population_is_seeded() {
        let a = sample_population(8, 1e12, (0.5, 2.0), (4.0, 8.0), 11);
        assert_eq!(a, sample_population(8, 1e12, (0.5, 2.0), (4.0, 8.0), 11));
        assert_ne!(a, sample_population(8, 1e12, (0.5, 2.0), (4.0, 8.0), 12));
    }

    #[test]
    fn aggregation_cases() {
        let g = AdapterVector(vec![1.0, -2.0]);
        let zero = AdapterVector::zeros(2);
        assert_eq!(aggregate_adapter(&g, &[zero.clone(), zero], &[3, 5]).unwrap(), g);

        let d1 = AdapterVector(vec![2.0, 4.0]);
        let d2 = AdapterVector(vec![4.0, 8.0]);
        assert_eq!(aggregate_adapter(&g, &[d1, d2], &[7, 7]).unwrap(), AdapterVector(vec![4.0, 4.0]));

        let d = [AdapterVector(vec![4.0, 4.0]), AdapterVector(vec![0.0, 0.0])];
        assert_eq!(aggregate_adapter(&g, &d, &[1, 3]).unwrap(), AdapterVector(vec![2.0, -1.0]));

        let bad = [AdapterVector(vec![1.0])];
        assert!(matches!(aggregate_adapter(&g, &bad, &[1]), Err(SimError::DimensionMismatch { .. })));
    }

    #[test]
    fn local_update_properties() {
        let g = AdapterVector::zeros(32);
        assert_eq!(local_update(&g, 1, 0, 0, 0.0), AdapterVector::zeros(32));
        assert_eq!(local_update(&g, 1, 4, 2, 0.1), local_update(&g, 1, 4, 2, 0.1));
        assert_ne!(local_update(&g, 1, 4, 2, 0.1), local_update(&g, 1, 4, 3, 0.1));
        for c in 0..20 {
            assert!(local_update(&g, 9, 0, c, 0.1).norm() <= 0.1 * (32f64).sqrt());
        }
    }

    #[test]
    fn proxy_loss_cases() {
        assert_eq!(proxy_loss_step(2.5, 1.0, 0.3, 1.0), 2.5);
        assert_eq!(proxy_loss_step(3.0, 0.0, 0.5, 1.0), 2.0);
        let mut l = 3.0;
        for _ in 0..200 {
            let next = proxy_loss_step(l, 0.3, 0.1, 1.0);
            assert!(next <= l && next >= 1.0);
            l = next;
        }
    }

    #[test]
    fn zero_rounds() {
        let s = run_experiment(&Experiment::default(), 0, &Policy::Jcpba).unwrap();
        assert!(s.records.is_empty());
        assert_eq!(s.total_time_s, 0.0);
    }

    #[test]
    fn ubfp_without_pruning_ships_everything() {
        let exp = Experiment {
            constraints: ConstraintSet {
                beta_min: 0.0,
                ..ConstraintSet::default()
            },
            ..Experiment::default()
        };
        let s = run_experiment(&exp, 2, &Policy::Ubfp { beta_fixed: 0.0 }).unwrap();
        let sizes = exp.sizes().unwrap();
        let full = (sizes.adapter_bits + sizes.emulator_bits + sizes.adapter_update_bits) / 8.0;
        for r in &s.records {
            assert!(r.per_client_bytes.iter().all(|&b| b == full));
            assert!(r.allocation.bandwidth_hz.iter().all(|&b| b == 1e8 / 8.0));
        }
    }

    #[test]
    fn ubfp_rejects_memory_violations() {
        let exp = Experiment {
            memory_range_gb: (0.5, 0.6),
            ..Experiment::default()
        };
        let err = run_experiment(&exp, 1, &Policy::Ubfp { beta_fixed: 0.3 }).unwrap_err();
        assert!(matches!(err.solve_error(), Some(SolveError::InfeasibleMemory { .. })));
    }
}
