//! Exhaustive reference solver for small instances.

use super::{bandwidth_subproblem, check_instance, Allocation, ClientStatic, ConstraintSet, SolveError};
use crate::arch::memory_footprint;

pub const MAX_ORACLE_CLIENTS: usize = 3;

/// Enumerates every pruning tuple on a uniform `grid_beta`-point grid over
/// `[beta_min, beta_max]`, discards tuples that break C3 or C5, and solves the
/// bandwidth block exactly for each survivor. A single grid point means
/// `beta_min`.
pub fn brute_force_oracle(
    clients: &[ClientStatic],
    cs: &ConstraintSet,
    grid_beta: usize,
) -> Result<Allocation, SolveError> {
    if clients.len() > MAX_ORACLE_CLIENTS {
        return Err(SolveError::TooManyClients {
            max: MAX_ORACLE_CLIENTS,
            got: clients.len(),
        });
    }
    check_instance(clients, cs)?;
    if grid_beta == 0 {
        return Err(SolveError::InvalidInput("grid needs at least one point".into()));
    }
    let grid: Vec<f64> = if grid_beta == 1 {
        vec![cs.beta_min]
    } else {
        let step = (cs.beta_max - cs.beta_min) / (grid_beta - 1) as f64;
        (0..grid_beta).map(|i| cs.beta_min + step * i as f64).collect()
    };
    // memory admissibility per client and grid point
    let fits: Vec<Vec<bool>> = clients
        .iter()
        .map(|c| {
            grid.iter()
                .map(|&b| memory_footprint(&c.sizes, b, cs.memory_overhead) <= c.memory_budget_bytes)
                .collect()
        })
        .collect();

    let k = clients.len();
    let mut idx = vec![0usize; k];
    let mut beta = vec![0.0; k];
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    loop {
        if (0..k).all(|j| fits[j][idx[j]]) {
            for j in 0..k {
                beta[j] = grid[idx[j]];
            }
            if cs.c5_lhs(beta.iter().sum()) <= cs.gamma_min && improves(clients, &beta, cs, best.as_ref().map(|b| b.0)) {
                let split = bandwidth_subproblem(clients, &beta, cs.total_bandwidth_hz)?;
                if best.as_ref().map_or(true, |b| split.objective_s < b.0) {
                    best = Some((split.objective_s, beta.clone(), split.bandwidth_hz));
                }
            }
        }
        // odometer increment
        let mut j = 0;
        loop {
            if j == k {
                let (_, beta, bw) = best.ok_or_else(|| SolveError::Infeasible {
                    min_sum: k as f64 * cs.beta_min,
                    budget: super::pruning_budget(cs).unwrap_or(0.0),
                })?;
                return Ok(Allocation::evaluate(clients, beta, bw));
            }
            idx[j] += 1;
            if idx[j] < grid.len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Whether the exact bandwidth optimum at `beta` can beat `incumbent`:
/// true iff the equal-latency demand at the incumbent latency is below `B`.
fn improves(clients: &[ClientStatic], beta: &[f64], cs: &ConstraintSet, incumbent: Option<f64>) -> bool {
    let Some(t) = incumbent else { return true };
    let mut demand = 0.0;
    for (c, &b) in clients.iter().zip(beta) {
        let a = c.compute_latency(b);
        if a >= t {
            return false;
        }
        demand += c.comm_load(b) / (t - a);
    }
    demand < cs.total_bandwidth_hz
}
