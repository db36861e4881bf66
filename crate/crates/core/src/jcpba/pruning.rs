//! Pruning block: with bandwidth fixed, each latency is affine and
//! decreasing in its pruning rate, `T_k = G_k - c_k beta_k`. The clients are
//! coupled only through the C5 budget on `sum beta_k`.

use super::{pruning_boxes, pruning_budget, ClientStatic, ConstraintSet, SolveError};

#[derive(Debug, Clone, PartialEq)]
pub struct PruningSolution {
    pub beta: Vec<f64>,
    pub objective_s: f64,
}

const MAX_BISECTION_STEPS: usize = 400;

/// `min max_k (g_k - c_k beta_k)` over `lo_k <= beta_k <= hi_k`,
/// `sum beta_k <= budget`.
///
/// Bisects on the target latency, then spends any leftover budget on the
/// currently slowest clients (ties go to the lower index). The leftover pass
/// never raises the maximum.
pub fn min_max_affine_under_budget(
    offset: &[f64],
    slope: &[f64],
    bounds: &[(f64, f64)],
    budget: f64,
) -> Result<PruningSolution, SolveError> {
    let n = offset.len();
    if slope.len() != n || bounds.len() != n {
        return Err(SolveError::InvalidInput("mismatched pruning inputs".into()));
    }
    if n == 0 {
        return Err(SolveError::EmptyClientSet);
    }
    if let Some((k, &(lo, hi))) = bounds.iter().enumerate().find(|(_, (lo, hi))| lo > hi) {
        return Err(SolveError::InfeasibleBox { client: k, lo, hi });
    }
    let min_sum: f64 = bounds.iter().map(|b| b.0).sum();
    if min_sum > budget {
        return Err(SolveError::Infeasible { min_sum, budget });
    }

    let required = |t: f64, k: usize| -> f64 {
        let (lo, hi) = bounds[k];
        if slope[k] > 0.0 {
            ((offset[k] - t) / slope[k]).clamp(lo, hi)
        } else {
            lo
        }
    };
    let spend = |t: f64| (0..n).map(|k| required(t, k)).sum::<f64>();

    // Below `floor` some client cannot reach the target even at beta_max.
    let floor = (0..n)
        .map(|k| offset[k] - slope[k] * bounds[k].1)
        .fold(f64::NEG_INFINITY, f64::max);
    let ceiling = (0..n)
        .map(|k| offset[k] - slope[k] * bounds[k].0)
        .fold(f64::NEG_INFINITY, f64::max);

    let target = if spend(floor) <= budget {
        floor
    } else {
        let (mut lo, mut hi) = (floor, ceiling);
        for _ in 0..MAX_BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if spend(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };

    let mut beta: Vec<f64> = (0..n).map(|k| required(target, k)).collect();

    let mut leftover = budget - beta.iter().sum::<f64>();
    if leftover > 0.0 {
        let mut order: Vec<usize> = (0..n).collect();
        let latency = |k: usize, b: f64| offset[k] - slope[k] * b;
        order.sort_by(|&i, &j| latency(j, beta[j]).total_cmp(&latency(i, beta[i])).then(i.cmp(&j)));
        for k in order {
            if leftover <= 0.0 {
                break;
            }
            let room = bounds[k].1 - beta[k];
            if room > 0.0 {
                let step = room.min(leftover);
                beta[k] += step;
                leftover -= step;
            }
        }
    }

    let objective_s = (0..n)
        .map(|k| offset[k] - slope[k] * beta[k])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(PruningSolution { beta, objective_s })
}

/// Pruning update with the bandwidth allocation held fixed (C3, C4, C5).
pub fn pruning_subproblem(
    clients: &[ClientStatic],
    bandwidth_hz: &[f64],
    cs: &ConstraintSet,
) -> Result<PruningSolution, SolveError> {
    if clients.len() != bandwidth_hz.len() {
        return Err(SolveError::InvalidInput("one bandwidth per client required".into()));
    }
    let budget = pruning_budget(cs)?;
    let bounds = pruning_boxes(clients, cs)?;
    let mut offset = Vec::with_capacity(clients.len());
    let mut slope = Vec::with_capacity(clients.len());
    for (k, (c, &bw)) in clients.iter().zip(bandwidth_hz).enumerate() {
        let g = c.latency(0.0, bw);
        if !g.is_finite() {
            return Err(SolveError::InvalidInput(format!(
                "client {k} has a communication load but no bandwidth"
            )));
        }
        offset.push(g);
        slope.push(if c.comm_load(0.0) == 0.0 {
            c.beta_slope(f64::INFINITY)
        } else {
            c.beta_slope(bw)
        });
    }
    min_max_affine_under_budget(&offset, &slope, &bounds, budget)
}

/// Bandwidth client `k` needs to finish by `target_s` at pruning rate `beta`.
fn required_bandwidth(client: &ClientStatic, beta: f64, target_s: f64) -> f64 {
    let slack = target_s - client.compute_latency(beta);
    let load = client.comm_load(beta);
    if load == 0.0 {
        0.0
    } else if slack <= 0.0 {
        f64::INFINITY
    } else {
        load / slack
    }
}

/// Re-spreads the pruning budget so that meeting `target_s` costs as little
/// total bandwidth as possible.
///
/// With the latency target fixed, the bandwidth client `k` needs is
/// `r_k(beta) = D_k(beta) / (target - A_k(beta))`, convex and decreasing in
/// beta. Minimizing `sum r_k` under the boxes and the C5 budget is a
/// separable convex allocation, solved by bisection on the budget multiplier.
/// `current` must already meet the target; the result never needs more
/// bandwidth than `current`.
pub fn rebalance_pruning(
    clients: &[ClientStatic],
    cs: &ConstraintSet,
    target_s: f64,
    current: &[f64],
) -> Result<Vec<f64>, SolveError> {
    let budget = pruning_budget(cs)?;
    let bounds = pruning_boxes(clients, cs)?;
    let m = |c: &ClientStatic| c.compute.iterations as f64 / c.compute.flops_per_s;

    // Per client: A(beta) = a0 - a1 beta, D(beta) = d0 - d1 beta.
    struct Shape {
        a0: f64,
        a1: f64,
        d0: f64,
        d1: f64,
    }
    let shapes: Vec<Shape> = clients
        .iter()
        .map(|c| Shape {
            a0: c.compute_latency(0.0),
            a1: m(c) * c.emulator_flops,
            d0: c.comm_load(0.0),
            d1: c.sizes.emulator_bits / c.spectral_eff_down,
        })
        .collect();

    // argmin_beta r_k(beta) + lambda beta over the box
    let best_response = |k: usize, lambda: f64| -> f64 {
        let (lo, hi) = bounds[k];
        let s = &shapes[k];
        let base = target_s - s.a0;
        if s.d0 == 0.0 {
            return lo;
        }
        if s.a1 == 0.0 {
            // r is linear; its slope magnitude is d1 / base
            return if s.d1 / base > lambda { hi } else { lo };
        }
        // r = C / u - d1 / a1 with u = base + a1 beta
        let c = s.d0 + s.d1 * base / s.a1;
        if lambda <= 0.0 {
            return hi;
        }
        let u = (c * s.a1 / lambda).sqrt();
        ((u - base) / s.a1).clamp(lo, hi)
    };
    let slope_at = |k: usize, beta: f64| -> f64 {
        let s = &shapes[k];
        let base = target_s - s.a0;
        if s.d0 == 0.0 {
            return 0.0;
        }
        if s.a1 == 0.0 {
            return s.d1 / base;
        }
        let c = s.d0 + s.d1 * base / s.a1;
        let u = base + s.a1 * beta;
        if u <= 0.0 {
            f64::INFINITY
        } else {
            c * s.a1 / (u * u)
        }
    };
    let n = clients.len();
    let spend = |lambda: f64| (0..n).map(|k| best_response(k, lambda)).sum::<f64>();

    let mut beta: Vec<f64> = if spend(0.0) <= budget {
        (0..n).map(|k| best_response(k, 0.0)).collect()
    } else {
        let mut lo = 0.0;
        let mut hi = (0..n)
            .map(|k| slope_at(k, bounds[k].0))
            .filter(|s| s.is_finite())
            .fold(0.0, f64::max)
            * 2.0
            + f64::MIN_POSITIVE;
        while spend(hi) > budget && hi.is_finite() {
            hi *= 2.0;
        }
        for _ in 0..MAX_BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if spend(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0..n).map(|k| best_response(k, hi)).collect()
    };

    // leftover budget goes where it saves the most bandwidth
    let mut leftover = budget - beta.iter().sum::<f64>();
    if leftover > 0.0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| slope_at(j, beta[j]).total_cmp(&slope_at(i, beta[i])).then(i.cmp(&j)));
        for k in order {
            if leftover <= 0.0 {
                break;
            }
            let step = (bounds[k].1 - beta[k]).min(leftover).max(0.0);
            beta[k] += step;
            leftover -= step;
        }
    }

    let need = |b: &[f64]| {
        clients
            .iter()
            .zip(b)
            .map(|(c, &x)| required_bandwidth(c, x, target_s))
            .sum::<f64>()
    };
    if need(&beta) <= need(current) {
        Ok(beta)
    } else {
        Ok(current.to_vec())
    }
}
