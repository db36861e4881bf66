//! Post-hoc constraint checks on an allocation. Deliberately recomputes
//! everything from the raw inputs instead of reusing solver helpers.

use super::{Allocation, ClientStatic, ConstraintSet};
use crate::arch::memory_footprint;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Check {
    C1,
    C2,
    C3,
    C4,
    C5,
    /// Shape or reported-latency mismatch.
    Consistency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub check: Check,
    pub client: Option<usize>,
    pub detail: String,
}

/// Checks C1 to C5 with absolute tolerance `tol` (C3 is compared relative to
/// the memory budget) and that the reported latencies match the variables.
pub fn validate_allocation(
    alloc: &Allocation,
    clients: &[ClientStatic],
    cs: &ConstraintSet,
    tol: f64,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let k = clients.len();
    if alloc.beta.len() != k || alloc.bandwidth_hz.len() != k || alloc.per_client_latency_s.len() != k {
        out.push(Violation {
            check: Check::Consistency,
            client: None,
            detail: format!("expected {k} entries per vector"),
        });
        return out;
    }

    let used: f64 = alloc.bandwidth_hz.iter().sum();
    if used > cs.total_bandwidth_hz + tol {
        out.push(Violation {
            check: Check::C1,
            client: None,
            detail: format!("allocated {used} Hz of {} Hz", cs.total_bandwidth_hz),
        });
    }
    let mut beta_sum = 0.0;
    for (i, c) in clients.iter().enumerate() {
        let beta = alloc.beta[i];
        let bw = alloc.bandwidth_hz[i];
        beta_sum += beta;
        if !(bw >= -tol) {
            out.push(Violation {
                check: Check::C2,
                client: Some(i),
                detail: format!("bandwidth {bw}"),
            });
        }
        let need = memory_footprint(&c.sizes, beta, cs.memory_overhead);
        if !(need <= c.memory_budget_bytes * (1.0 + tol)) {
            out.push(Violation {
                check: Check::C3,
                client: Some(i),
                detail: format!("needs {need} B, budget {} B", c.memory_budget_bytes),
            });
        }
        if !(beta >= cs.beta_min - tol && beta <= cs.beta_max + tol) {
            out.push(Violation {
                check: Check::C4,
                client: Some(i),
                detail: format!("beta {beta} outside [{}, {}]", cs.beta_min, cs.beta_max),
            });
        }
        let m = c.compute.iterations as f64;
        let comp = m * (c.adapter_flops + c.emulator_flops * (1.0 - beta)) / c.compute.flops_per_s;
        let down_rate = bw * c.spectral_eff_down;
        let up_rate = bw * c.spectral_eff_up;
        let down_bits = c.sizes.adapter_bits + (1.0 - beta) * c.sizes.emulator_bits;
        let comm = if down_bits + c.sizes.adapter_update_bits == 0.0 {
            0.0
        } else {
            down_bits / down_rate + c.sizes.adapter_update_bits / up_rate
        };
        let expected = comp + comm;
        let reported = alloc.per_client_latency_s[i];
        if !((expected - reported).abs() <= 1e-9 * expected.abs().max(1.0)) {
            out.push(Violation {
                check: Check::Consistency,
                client: Some(i),
                detail: format!("reported latency {reported}, recomputed {expected}"),
            });
        }
    }
    let kf = k as f64;
    let c5 = cs.xi + cs.phi / (kf * cs.batch_size as f64) + cs.psi / kf * beta_sum;
    if !(c5 <= cs.gamma_min + tol) {
        out.push(Violation {
            check: Check::C5,
            client: None,
            detail: format!("convergence bound {c5} exceeds gamma_min {}", cs.gamma_min),
        });
    }
    let max = alloc.per_client_latency_s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max != alloc.objective_s {
        out.push(Violation {
            check: Check::Consistency,
            client: None,
            detail: format!("objective {} is not the max latency {max}", alloc.objective_s),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::test_support::client;
    use super::*;

    fn setup() -> (Vec<ClientStatic>, ConstraintSet, Allocation) {
        let clients = vec![client(1.0, 8.0, 1.0), client(2.0, 8.0, 1.0)];
        let cs = ConstraintSet {
            n_clients: 2,
            total_bandwidth_hz: 4.0,
            ..ConstraintSet::default()
        };
        let alloc = Allocation::evaluate(&clients, vec![0.3, 0.3], vec![2.0, 2.0]);
        (clients, cs, alloc)
    }

    #[test]
    fn clean_allocation_passes() {
        let (clients, cs, alloc) = setup();
        assert!(validate_allocation(&alloc, &clients, &cs, 1e-6).is_empty());
    }

    #[test]
    fn catches_each_constraint() {
        let (clients, cs, alloc) = setup();
        let checks = |a: &Allocation, cl: &[ClientStatic]| -> Vec<Check> {
            validate_allocation(a, cl, &cs, 1e-6).iter().map(|v| v.check).collect()
        };

        let over = Allocation::evaluate(&clients, vec![0.3, 0.3], vec![3.0, 2.0]);
        assert_eq!(checks(&over, &clients), vec![Check::C1]);

        let neg = Allocation::evaluate(&clients, vec![0.3, 0.3], vec![-1.0, 2.0]);
        assert!(checks(&neg, &clients).contains(&Check::C2));

        let mut small = clients.clone();
        small[1].memory_budget_bytes = 1.0;
        assert_eq!(checks(&alloc, &small), vec![Check::C3]);

        let high = Allocation::evaluate(&clients, vec![0.3, 0.81], vec![2.0, 2.0]);
        assert!(checks(&high, &clients).contains(&Check::C4));

        let greedy = Allocation::evaluate(&clients, vec![0.6, 0.6], vec![2.0, 2.0]);
        assert_eq!(checks(&greedy, &clients), vec![Check::C5]);

        let mut lying = alloc.clone();
        lying.per_client_latency_s[0] *= 0.5;
        assert!(checks(&lying, &clients).contains(&Check::Consistency));
    }
}
