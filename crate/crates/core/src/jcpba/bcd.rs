//! Block coordinate descent over the two variable blocks.

use super::{
    bandwidth_subproblem, check_instance, pruning_boxes, pruning_budget, pruning_subproblem, rebalance_pruning,
    Allocation, ClientStatic, ConstraintSet, SolveError,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcdOptions {
    /// Stop once successive objectives differ by less than this (seconds).
    pub epsilon_s: f64,
    pub max_iters: usize,
    /// Defaults to `beta_min` for every client.
    pub initial_beta: Option<Vec<f64>>,
    /// Defaults to `B / K` for every client.
    pub initial_bandwidth_hz: Option<Vec<f64>>,
    /// After the fixed-bandwidth pruning step, re-spread the pruning budget to
    /// minimize the bandwidth needed at the latency it reached. Without this
    /// the two blocks can lock each other once all latencies are equal and
    /// the budget binds.
    pub rebalance: bool,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            epsilon_s: 1e-4,
            max_iters: 50,
            initial_beta: None,
            initial_bandwidth_hz: None,
            rebalance: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `T^(0), T^(1), ...`, one entry per completed iteration plus the start.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub allocation: Allocation,
}

/// Intermediate states, reported after each block update.
#[derive(Debug, Clone, Copy)]
pub enum BcdEvent<'a> {
    Pruning {
        iteration: usize,
        beta: &'a [f64],
        objective_s: f64,
    },
    Bandwidth {
        iteration: usize,
        beta: &'a [f64],
        bandwidth_hz: &'a [f64],
        objective_s: f64,
    },
}

pub fn bcd_solve(
    clients: &[ClientStatic],
    cs: &ConstraintSet,
    opts: &BcdOptions,
) -> Result<SolveReport, SolveError> {
    bcd_solve_observed(clients, cs, opts, |_| {})
}

pub fn bcd_solve_observed<F>(
    clients: &[ClientStatic],
    cs: &ConstraintSet,
    opts: &BcdOptions,
    mut observe: F,
) -> Result<SolveReport, SolveError>
where
    F: FnMut(BcdEvent<'_>),
{
    check_instance(clients, cs)?;
    if cs.total_bandwidth_hz <= 0.0 {
        return Err(SolveError::NoBandwidth(cs.total_bandwidth_hz));
    }
    let budget = pruning_budget(cs)?;
    let min_sum: f64 = pruning_boxes(clients, cs)?.iter().map(|b| b.0).sum();
    if min_sum > budget {
        return Err(SolveError::Infeasible { min_sum, budget });
    }

    let k = clients.len();
    let mut beta = match &opts.initial_beta {
        Some(b) if b.len() != k => {
            return Err(SolveError::InvalidInput("initial_beta length differs from K".into()))
        }
        Some(b) => b.clone(),
        None => vec![cs.beta_min; k],
    };
    let mut bandwidth = match &opts.initial_bandwidth_hz {
        Some(b) if b.len() != k || b.iter().any(|&x| !(x > 0.0)) => {
            return Err(SolveError::InvalidInput(
                "initial bandwidth needs one positive entry per client".into(),
            ))
        }
        Some(b) => b.clone(),
        None => vec![cs.total_bandwidth_hz / k as f64; k],
    };

    let objective = |beta: &[f64], bw: &[f64]| {
        clients
            .iter()
            .zip(beta.iter().zip(bw))
            .map(|(c, (&b, &w))| c.latency(b, w))
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let mut trace = vec![objective(&beta, &bandwidth)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        let pruned = pruning_subproblem(clients, &bandwidth, cs)?;
        beta = pruned.beta;
        if opts.rebalance {
            beta = rebalance_pruning(clients, cs, pruned.objective_s, &beta)?;
        }
        observe(BcdEvent::Pruning {
            iteration: iterations,
            beta: &beta,
            objective_s: pruned.objective_s,
        });

        let split = bandwidth_subproblem(clients, &beta, cs.total_bandwidth_hz)?;
        bandwidth = split.bandwidth_hz;
        observe(BcdEvent::Bandwidth {
            iteration: iterations,
            beta: &beta,
            bandwidth_hz: &bandwidth,
            objective_s: split.objective_s,
        });

        iterations += 1;
        let current = objective(&beta, &bandwidth);
        let previous = *trace.last().expect("trace starts non-empty");
        trace.push(current);
        if (current - previous).abs() < opts.epsilon_s {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        iterations,
        objective_trace: trace,
        converged,
        allocation: Allocation::evaluate(clients, beta, bandwidth),
    })
}
