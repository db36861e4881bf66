//! Joint client-specific pruning and bandwidth allocation.
//!
//! Minimizes the slowest client's round latency
//!
//! ```text
//! T_k(beta_k, B_k) = A_k(beta_k) + D_k(beta_k) / B_k
//! ```
//!
//! where `A_k` is the local computation time and `D_k` the download+upload
//! bit load divided by the per-hertz spectral efficiency, subject to
//!
//! * C1 `sum B_k <= B`
//! * C2 `B_k >= 0`
//! * C3 `b(beta_k) <= memory budget`
//! * C4 `beta_min <= beta_k <= beta_max`
//! * C5 `xi + phi / (K N) + (psi / K) sum beta_k <= gamma_min`
//!
//! The solver alternates two exact block minimizations (pruning rates with
//! bandwidth fixed, bandwidth with pruning fixed). Both blocks reduce to a
//! monotone one-dimensional search over the common latency target.

mod bandwidth;
mod bcd;
mod oracle;
mod pruning;
mod validate;

pub use bandwidth::{bandwidth_subproblem, equal_latency_split, BandwidthSolution};
pub use bcd::{bcd_solve, bcd_solve_observed, BcdEvent, BcdOptions, SolveReport};
pub use oracle::{brute_force_oracle, MAX_ORACLE_CLIENTS};
pub use pruning::{min_max_affine_under_budget, pruning_subproblem, rebalance_pruning, PruningSolution};
pub use validate::{validate_allocation, Check, Violation};

use crate::arch::ModelSizes;
use crate::latency::ComputeProfile;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Constraint identifiers used in error reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    C1,
    C2,
    C3,
    C4,
    C5,
}

impl Constraint {
    pub fn description(&self) -> &'static str {
        match self {
            Constraint::C1 => "total bandwidth",
            Constraint::C2 => "non-negative bandwidth",
            Constraint::C3 => "client memory",
            Constraint::C4 => "pruning-rate bounds",
            Constraint::C5 => "convergence (pruning budget)",
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("C5 infeasible: {0}")]
    InfeasibleC5(String),
    #[error("C3 infeasible for client {client}: {detail}")]
    InfeasibleMemory { client: usize, detail: String },
    #[error("C4 infeasible for client {client}: lower bound {lo} exceeds upper bound {hi}")]
    InfeasibleBox { client: usize, lo: f64, hi: f64 },
    #[error("C3/C5 infeasible: minimum pruning sum {min_sum} exceeds budget {budget}")]
    Infeasible { min_sum: f64, budget: f64 },
    #[error("C1 infeasible: total bandwidth {0} must be > 0")]
    NoBandwidth(f64),
    #[error("no client has a positive communication load")]
    DegenerateClient,
    #[error("brute-force oracle supports at most {max} clients, got {got}")]
    TooManyClients { max: usize, got: usize },
    #[error("empty client set")]
    EmptyClientSet,
    #[error("constraint set expects {expected} clients, got {got}")]
    ClientCountMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl SolveError {
    /// The constraints an infeasibility error refers to.
    pub fn constraints(&self) -> Vec<Constraint> {
        match self {
            SolveError::InfeasibleC5(_) => vec![Constraint::C5],
            SolveError::InfeasibleMemory { .. } => vec![Constraint::C3],
            SolveError::InfeasibleBox { .. } => vec![Constraint::C4],
            SolveError::Infeasible { .. } => vec![Constraint::C3, Constraint::C5],
            SolveError::NoBandwidth(_) => vec![Constraint::C1],
            _ => Vec::new(),
        }
    }

    pub fn is_infeasible(&self) -> bool {
        !self.constraints().is_empty()
    }
}

/// Per-round constants of one client. Channel terms enter only through the
/// spectral efficiencies since rates are linear in bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientStatic {
    pub compute: ComputeProfile,
    pub memory_budget_bytes: f64,
    /// Downlink bits/s/Hz.
    pub spectral_eff_down: f64,
    /// Uplink bits/s/Hz.
    pub spectral_eff_up: f64,
    /// Adapter FLOPs per iteration, `a`.
    pub adapter_flops: f64,
    /// Unpruned emulator FLOPs per iteration, `e0`.
    pub emulator_flops: f64,
    pub sizes: ModelSizes,
}

impl ClientStatic {
    /// Computation latency `A_k(beta)`.
    pub fn compute_latency(&self, beta: f64) -> f64 {
        crate::latency::comp_latency(self.adapter_flops, self.emulator_flops, beta, &self.compute)
    }

    /// Bandwidth-normalized communication load `D_k(beta)` in Hz·s.
    pub fn comm_load(&self, beta: f64) -> f64 {
        let down = self.sizes.adapter_bits + (1.0 - beta) * self.sizes.emulator_bits;
        down / self.spectral_eff_down + self.sizes.adapter_update_bits / self.spectral_eff_up
    }

    /// `T_k(beta, B_k)`; infinite when a positive load gets no bandwidth.
    pub fn latency(&self, beta: f64, bandwidth_hz: f64) -> f64 {
        let load = self.comm_load(beta);
        let comm = if load == 0.0 {
            0.0
        } else if bandwidth_hz <= 0.0 {
            f64::INFINITY
        } else {
            load / bandwidth_hz
        };
        self.compute_latency(beta) + comm
    }

    /// Slope magnitude of `T_k` in beta for fixed bandwidth.
    pub(crate) fn beta_slope(&self, bandwidth_hz: f64) -> f64 {
        let comp = self.compute.iterations as f64 * self.emulator_flops / self.compute.flops_per_s;
        let comm = if self.sizes.emulator_bits == 0.0 {
            0.0
        } else {
            self.sizes.emulator_bits / self.spectral_eff_down / bandwidth_hz
        };
        comp + comm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub total_bandwidth_hz: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub xi: f64,
    pub phi: f64,
    pub psi: f64,
    pub gamma_min: f64,
    pub n_clients: usize,
    pub batch_size: usize,
    /// `kappa` in the memory model.
    pub memory_overhead: f64,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self {
            total_bandwidth_hz: 1e8,
            beta_min: 0.05,
            beta_max: 0.8,
            xi: 0.1,
            phi: 0.4,
            psi: 1.0,
            gamma_min: 0.6,
            n_clients: 8,
            batch_size: 4,
            memory_overhead: 4.0,
        }
    }
}

impl ConstraintSet {
    /// Left-hand side of C5 for a given pruning sum.
    pub fn c5_lhs(&self, beta_sum: f64) -> f64 {
        let k = self.n_clients as f64;
        self.xi + self.phi / (k * self.batch_size as f64) + self.psi / k * beta_sum
    }
}

/// Decision variables plus the latencies they achieve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub beta: Vec<f64>,
    pub bandwidth_hz: Vec<f64>,
    pub per_client_latency_s: Vec<f64>,
    pub objective_s: f64,
}

impl Allocation {
    pub fn evaluate(clients: &[ClientStatic], beta: Vec<f64>, bandwidth_hz: Vec<f64>) -> Self {
        let per_client_latency_s: Vec<f64> = clients
            .iter()
            .zip(beta.iter().zip(&bandwidth_hz))
            .map(|(c, (&b, &w))| c.latency(b, w))
            .collect();
        let objective_s = max_of(&per_client_latency_s);
        Self {
            beta,
            bandwidth_hz,
            per_client_latency_s,
            objective_s,
        }
    }
}

pub(crate) fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Largest admissible `sum beta_k` under C5.
pub fn pruning_budget(cs: &ConstraintSet) -> Result<f64, SolveError> {
    let k = cs.n_clients as f64;
    let slack = cs.gamma_min - cs.xi - cs.phi / (k * cs.batch_size as f64);
    if slack < 0.0 {
        return Err(SolveError::InfeasibleC5(format!(
            "gamma_min {} is below xi + phi/(K N) = {}",
            cs.gamma_min,
            cs.gamma_min - slack
        )));
    }
    let budget = k * slack / cs.psi;
    if budget < k * cs.beta_min {
        return Err(SolveError::InfeasibleC5(format!(
            "budget {budget} is below K * beta_min = {}",
            k * cs.beta_min
        )));
    }
    Ok(budget)
}

/// Smallest pruning rate whose memory footprint fits the client's budget.
pub fn memory_lower_bound(client: &ClientStatic, cs: &ConstraintSet) -> Result<f64, SolveError> {
    let sizes = &client.sizes;
    let room = client.memory_budget_bytes / cs.memory_overhead - sizes.adapter_bytes();
    if room < 0.0 {
        return Err(SolveError::InfeasibleMemory {
            client: 0,
            detail: "the adapter alone exceeds the memory budget".into(),
        });
    }
    let beta = if sizes.emulator_bytes() == 0.0 {
        0.0
    } else {
        (1.0 - room / sizes.emulator_bytes()).clamp(0.0, 1.0)
    };
    if beta > cs.beta_max {
        return Err(SolveError::InfeasibleMemory {
            client: 0,
            detail: format!("needs beta >= {beta}, above beta_max {}", cs.beta_max),
        });
    }
    Ok(beta)
}

fn tag_client(err: SolveError, k: usize) -> SolveError {
    match err {
        SolveError::InfeasibleMemory { detail, .. } => SolveError::InfeasibleMemory { client: k, detail },
        other => other,
    }
}

/// Per-client pruning boxes `[max(beta_min, beta_mem), beta_max]`.
pub fn pruning_boxes(clients: &[ClientStatic], cs: &ConstraintSet) -> Result<Vec<(f64, f64)>, SolveError> {
    clients
        .iter()
        .enumerate()
        .map(|(k, c)| {
            if cs.beta_min > cs.beta_max {
                return Err(SolveError::InfeasibleBox {
                    client: k,
                    lo: cs.beta_min,
                    hi: cs.beta_max,
                });
            }
            let mem = memory_lower_bound(c, cs).map_err(|e| tag_client(e, k))?;
            let lo = cs.beta_min.max(mem);
            Ok((lo, cs.beta_max))
        })
        .collect()
}

pub(crate) fn check_instance(clients: &[ClientStatic], cs: &ConstraintSet) -> Result<(), SolveError> {
    if clients.is_empty() {
        return Err(SolveError::EmptyClientSet);
    }
    if clients.len() != cs.n_clients {
        return Err(SolveError::ClientCountMismatch {
            expected: cs.n_clients,
            got: clients.len(),
        });
    }
    if !(cs.beta_min >= 0.0 && cs.beta_max < 1.0) {
        return Err(SolveError::InvalidInput(format!(
            "pruning bounds [{}, {}] must lie in [0, 1)",
            cs.beta_min, cs.beta_max
        )));
    }
    if !(cs.xi > 0.0 && cs.phi > 0.0 && cs.psi > 0.0) {
        return Err(SolveError::InvalidInput("xi, phi and psi must be positive".into()));
    }
    for (k, c) in clients.iter().enumerate() {
        if !(c.spectral_eff_down > 0.0 && c.spectral_eff_up > 0.0 && c.compute.flops_per_s > 0.0) {
            return Err(SolveError::InvalidInput(format!(
                "client {k} needs positive spectral efficiencies and compute speed"
            )));
        }
    }
    Ok(())
}

/// Lists the constraints that rule out every allocation. Empty iff the
/// instance is feasible.
pub fn feasibility_check(clients: &[ClientStatic], cs: &ConstraintSet) -> Vec<Constraint> {
    let mut violated = Vec::new();
    if cs.total_bandwidth_hz <= 0.0 {
        violated.push(Constraint::C1);
    }
    let box_ok = cs.beta_min <= cs.beta_max;
    if !box_ok {
        violated.push(Constraint::C4);
    }
    let mut lows = Vec::with_capacity(clients.len());
    let mut memory_ok = true;
    for c in clients {
        match memory_lower_bound(c, cs) {
            Ok(b) => lows.push(cs.beta_min.max(b)),
            Err(_) => memory_ok = false,
        }
    }
    if !memory_ok {
        violated.push(Constraint::C3);
    }
    match pruning_budget(cs) {
        Err(_) => violated.push(Constraint::C5),
        Ok(budget) => {
            if box_ok && memory_ok && lows.iter().sum::<f64>() > budget {
                violated.push(Constraint::C5);
            }
        }
    }
    violated
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Client with `A(beta) = comp0 (1 - beta) + comp_fixed`, and load
    /// `D(beta)` controlled through bit sizes with unit spectral efficiency.
    pub fn client(flops: f64, emulator_bits: f64, adapter_bits: f64) -> ClientStatic {
        ClientStatic {
            compute: ComputeProfile {
                flops_per_s: flops,
                iterations: 1,
                batch_size: 4,
            },
            memory_budget_bytes: 1e30,
            spectral_eff_down: 1.0,
            spectral_eff_up: 1.0,
            adapter_flops: 1.0,
            emulator_flops: 4.0,
            sizes: ModelSizes {
                emulator_params: 0,
                adapter_params: 0,
                emulator_bits,
                adapter_bits,
                adapter_update_bits: adapter_bits,
            },
        }
    }
}
