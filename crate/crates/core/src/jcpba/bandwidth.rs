//! Bandwidth block: with pruning rates fixed, split `B` so that every client
//! with a communication load finishes at the same time.

use super::{ClientStatic, SolveError};

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSolution {
    pub bandwidth_hz: Vec<f64>,
    pub objective_s: f64,
}

const MAX_BISECTION_STEPS: usize = 400;

/// Solves `min max_k A_k + D_k / B_k` s.t. `sum B_k = total`, `B_k >= 0`.
///
/// The optimum is the unique `T* > max A_k` with `sum D_k / (T* - A_k) = total`.
/// Clients with `D_k = 0` get no bandwidth and finish at `A_k`.
pub fn equal_latency_split(
    compute_s: &[f64],
    load: &[f64],
    total_hz: f64,
) -> Result<BandwidthSolution, SolveError> {
    if compute_s.len() != load.len() {
        return Err(SolveError::InvalidInput("compute and load lengths differ".into()));
    }
    if compute_s.is_empty() {
        return Err(SolveError::EmptyClientSet);
    }
    if total_hz <= 0.0 {
        return Err(SolveError::NoBandwidth(total_hz));
    }
    let active = || compute_s.iter().zip(load).filter(|(_, &d)| d > 0.0);
    if active().next().is_none() {
        return Err(SolveError::DegenerateClient);
    }
    let demand = |t: f64| active().map(|(&a, &d)| d / (t - a)).sum::<f64>();

    let mut lo = active().map(|(&a, _)| a).fold(f64::NEG_INFINITY, f64::max);
    let mut hi = lo + active().map(|(_, &d)| d).sum::<f64>() / total_hz;
    // bisect until the bracket collapses to adjacent floats
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if demand(mid) > total_hz {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let target = hi;

    let mut bandwidth_hz: Vec<f64> = compute_s
        .iter()
        .zip(load)
        .map(|(&a, &d)| if d > 0.0 { d / (target - a) } else { 0.0 })
        .collect();
    let used: f64 = bandwidth_hz.iter().sum();
    let scale = total_hz / used;
    bandwidth_hz.iter_mut().for_each(|b| *b *= scale);

    let objective_s = compute_s
        .iter()
        .zip(load.iter().zip(&bandwidth_hz))
        .map(|(&a, (&d, &b))| if d > 0.0 { a + d / b } else { a })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BandwidthSolution {
        bandwidth_hz,
        objective_s,
    })
}

/// Bandwidth update with the pruning rates held fixed.
pub fn bandwidth_subproblem(
    clients: &[ClientStatic],
    beta: &[f64],
    total_hz: f64,
) -> Result<BandwidthSolution, SolveError> {
    if clients.len() != beta.len() {
        return Err(SolveError::InvalidInput("one pruning rate per client required".into()));
    }
    let compute: Vec<f64> = clients.iter().zip(beta).map(|(c, &b)| c.compute_latency(b)).collect();
    let load: Vec<f64> = clients.iter().zip(beta).map(|(c, &b)| c.comm_load(b)).collect();
    equal_latency_split(&compute, &load, total_hz)
}
