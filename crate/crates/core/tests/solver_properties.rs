mod common;

use common::{pt_config, random_instance};
use fedlat::jcpba::*;
use proptest::prelude::*;

fn lower_bound(clients: &[ClientStatic], cs: &ConstraintSet) -> f64 {
    clients
        .iter()
        .map(|c| c.compute_latency(cs.beta_max))
        .fold(f64::NEG_INFINITY, f64::max)
}

proptest! {
    #![proptest_config(pt_config(64))]

    #[test]
    fn bandwidth_step_is_equal_latency(seed in 0u64..10_000, k in 2usize..24, frac in 0.0f64..1.0) {
        let (clients, cs) = random_instance(seed, k);
        let beta: Vec<f64> = (0..k).map(|i| cs.beta_min + (cs.beta_max - cs.beta_min) * ((frac + 0.37 * i as f64) % 1.0)).collect();
        let s = bandwidth_subproblem(&clients, &beta, cs.total_bandwidth_hz).unwrap();
        let used: f64 = s.bandwidth_hz.iter().sum();
        prop_assert!((used - cs.total_bandwidth_hz).abs() <= 1e-9 * cs.total_bandwidth_hz);
        let lat: Vec<f64> = clients.iter().enumerate().map(|(i, c)| c.latency(beta[i], s.bandwidth_hz[i])).collect();
        let max = lat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = lat.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!((max - min) <= 1e-6 * max, "spread {}", max - min);
        prop_assert!((s.objective_s - max).abs() <= 1e-12 * max);
    }

    #[test]
    fn bandwidth_step_beats_random_splits(seed in 0u64..10_000, k in 2usize..8, w in prop::collection::vec(0.01f64..1.0, 8)) {
        let (clients, cs) = random_instance(seed, k);
        let beta = vec![0.3; k];
        let best = bandwidth_subproblem(&clients, &beta, cs.total_bandwidth_hz).unwrap().objective_s;
        let total: f64 = w[..k].iter().sum();
        let other = Allocation::evaluate(&clients, beta, w[..k].iter().map(|x| x / total * cs.total_bandwidth_hz).collect());
        prop_assert!(other.objective_s >= best * (1.0 - 1e-12));
    }

    #[test]
    fn pruning_step_matches_grid_search(seed in 0u64..10_000, split in 0.05f64..0.95) {
        let (clients, cs) = random_instance(seed, 2);
        let bw = [split * cs.total_bandwidth_hz, (1.0 - split) * cs.total_bandwidth_hz];
        let s = pruning_subproblem(&clients, &bw, &cs).unwrap();
        let budget = pruning_budget(&cs).unwrap();
        let boxes = pruning_boxes(&clients, &cs).unwrap();
        prop_assert!(s.beta.iter().sum::<f64>() <= budget * (1.0 + 1e-12));
        // latency falls with beta, so the best partner for beta_0 spends the rest
        let mut best = f64::INFINITY;
        for i in 0..=2000 {
            let b0 = boxes[0].0 + (boxes[0].1 - boxes[0].0) * i as f64 / 2000.0;
            let b1 = (budget - b0).min(boxes[1].1);
            if b1 < boxes[1].0 {
                continue;
            }
            let t = clients[0].latency(b0, bw[0]).max(clients[1].latency(b1, bw[1]));
            best = best.min(t);
        }
        prop_assert!(s.objective_s <= best * (1.0 + 1e-12), "{} vs grid {}", s.objective_s, best);
    }

    #[test]
    fn rebalance_needs_no_extra_bandwidth(seed in 0u64..10_000, k in 2usize..16) {
        let (clients, cs) = random_instance(seed, k);
        let bw = vec![cs.total_bandwidth_hz / k as f64; k];
        let p = pruning_subproblem(&clients, &bw, &cs).unwrap();
        let r = rebalance_pruning(&clients, &cs, p.objective_s, &p.beta).unwrap();
        let need = |b: &[f64]| -> f64 {
            clients.iter().zip(b).map(|(c, &x)| c.comm_load(x) / (p.objective_s - c.compute_latency(x))).sum()
        };
        prop_assert!(need(&r) <= need(&p.beta) * (1.0 + 1e-12));
        prop_assert!(r.iter().sum::<f64>() <= pruning_budget(&cs).unwrap() * (1.0 + 1e-12));
        let boxes = pruning_boxes(&clients, &cs).unwrap();
        for (b, (lo, hi)) in r.iter().zip(boxes) {
            prop_assert!(*b >= lo && *b <= hi);
        }
    }

    #[test]
    fn bcd_descends_and_stays_feasible(seed in 0u64..10_000, k in 2usize..48) {
        let (clients, cs) = random_instance(seed, k);
        let r = bcd_solve(&clients, &cs, &BcdOptions::default()).unwrap();
        for w in r.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9));
        }
        prop_assert!(r.converged);
        prop_assert!(r.iterations <= 50);
        prop_assert!(validate_allocation(&r.allocation, &clients, &cs, 1e-6).is_empty());
        prop_assert!(r.allocation.objective_s >= lower_bound(&clients, &cs));
    }

    // Halving every spectral efficiency and doubling B leaves the problem unchanged.
    #[test]
    fn bandwidth_units_scale_out(seed in 0u64..10_000, k in 2usize..10) {
        let (clients, cs) = random_instance(seed, k);
        let scaled: Vec<ClientStatic> = clients.iter().map(|c| ClientStatic {
            spectral_eff_down: c.spectral_eff_down / 2.0,
            spectral_eff_up: c.spectral_eff_up / 2.0,
            ..*c
        }).collect();
        let cs2 = ConstraintSet { total_bandwidth_hz: 2.0 * cs.total_bandwidth_hz, ..cs };
        let a = bcd_solve(&clients, &cs, &BcdOptions::default()).unwrap().allocation;
        let b = bcd_solve(&scaled, &cs2, &BcdOptions::default()).unwrap().allocation;
        prop_assert!((a.objective_s - b.objective_s).abs() <= 1e-9 * a.objective_s);
    }

    #[test]
    fn relabeling_clients_permutes_the_answer(seed in 0u64..10_000, k in 2usize..10) {
        let (clients, cs) = random_instance(seed, k);
        let rev: Vec<ClientStatic> = clients.iter().rev().copied().collect();
        let a = bcd_solve(&clients, &cs, &BcdOptions::default()).unwrap().allocation;
        let b = bcd_solve(&rev, &cs, &BcdOptions::default()).unwrap().allocation;
        prop_assert!((a.objective_s - b.objective_s).abs() <= 1e-6 * a.objective_s);
    }
}

#[test]
fn identical_clients_share_equally() {
    let (clients, cs) = random_instance(3, 1);
    let same = vec![clients[0]; 6];
    let cs = ConstraintSet { n_clients: 6, ..cs };
    let a = bcd_solve(&same, &cs, &BcdOptions::default()).unwrap().allocation;
    for k in 1..6 {
        assert!((a.beta[k] - a.beta[0]).abs() < 1e-12);
        assert!((a.bandwidth_hz[k] - a.bandwidth_hz[0]).abs() <= 1e-9 * a.bandwidth_hz[0]);
    }
    // C5 binds: the budget is spread evenly
    assert!((a.beta.iter().sum::<f64>() - pruning_budget(&cs).unwrap()).abs() < 1e-9);
}

#[test]
fn memory_infeasibility_names_c3() {
    let (mut clients, cs) = random_instance(4, 3);
    clients[1].memory_budget_bytes = 1e6;
    let err = bcd_solve(&clients, &cs, &BcdOptions::default()).unwrap_err();
    assert!(err.constraints().contains(&Constraint::C3), "{err}");
    assert!(err.to_string().contains("C3"));
}

#[test]
fn mutated_allocations_are_caught() {
    let (clients, cs) = random_instance(5, 4);
    let a = bcd_solve(&clients, &cs, &BcdOptions::default()).unwrap().allocation;
    for k in 0..4 {
        let mut beta = a.beta.clone();
        beta[k] = cs.beta_max + 0.01;
        let bad = Allocation::evaluate(&clients, beta, a.bandwidth_hz.clone());
        let v = validate_allocation(&bad, &clients, &cs, 1e-6);
        assert!(v.iter().any(|v| v.check == Check::C4 && v.client == Some(k)));
    }
    let mut bw = a.bandwidth_hz.clone();
    bw[0] *= 1.01;
    let over = Allocation::evaluate(&clients, a.beta.clone(), bw);
    assert!(validate_allocation(&over, &clients, &cs, 1e-6).iter().any(|v| v.check == Check::C1));
}
