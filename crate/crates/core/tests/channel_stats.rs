mod common;

use fedlat::channel::*;
use fedlat::fedsim::{coefficient_of_variation, sample_population, REFERENCE_SPEED_RANGES};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn fading_mean_is_the_path_gain() {
    let link = LinkBudget::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = sample_channel(500_000, &link, 0, &mut rng);
    let all: Vec<f64> = s.downlink_gain.iter().chain(&s.uplink_gain).copied().collect();
    let (mean, _) = moments(&all);
    // 60 dB of path loss
    assert!((mean / 1e-6 - 1.0).abs() < 0.02, "mean gain {mean}");
}

#[test]
fn unit_exponential_at_zero_db() {
    let link = LinkBudget {
        path_loss_db: 0.0,
        ..LinkBudget::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = sample_channel(200_000, &link, 0, &mut rng);
    let (mean, var) = moments(&s.downlink_gain);
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    assert!((var - 1.0).abs() < 0.03, "variance {var}");
    assert!(s.downlink_gain.iter().all(|&g| g > 0.0));
}

#[test]
fn rates_follow_shannon() {
    let link = LinkBudget::default();
    let state = ChannelState {
        downlink_gain: vec![1e-6],
        uplink_gain: vec![1e-6],
        round_index: 0,
    };
    let (down, up) = rates(&state, &link, 1e8, 0);
    // SNR = p g / N0 = 1e8 and 2e6 respectively
    assert!((down - 1e8 * (1.0f64 + 1e8).log2()).abs() < 1e-3);
    assert!((up - 1e8 * (1.0f64 + 2e6).log2()).abs() < 1e-3);
}

proptest! {
    #![proptest_config(common::pt_config(256))]

    #[test]
    fn rates_linear_in_bandwidth(bw in 1.0f64..1e9, g in 1e-9f64..1e-3) {
        let link = LinkBudget::default();
        let state = ChannelState { downlink_gain: vec![g], uplink_gain: vec![g], round_index: 3 };
        let (d1, u1) = rates(&state, &link, bw, 0);
        let (d2, u2) = rates(&state, &link, 2.0 * bw, 0);
        prop_assert!((d2 - 2.0 * d1).abs() <= 1e-9 * d2);
        prop_assert!((u2 - 2.0 * u1).abs() <= 1e-9 * u2);
        prop_assert!(d1 > u1);
    }
}

#[test]
fn population_moments_match_uniform() {
    let p = sample_population(100_000, 1.0, (0.5, 2.0), (4.0, 8.0), 5);
    let (mean, _) = moments(&p.flops_per_s);
    assert!((mean / 1.25 - 1.0).abs() < 0.01, "mean speed {mean}");
    // uniform on [0.5, 2]: sd = 1.5 / sqrt(12), CV = sd / 1.25
    let cv = 1.5 / 12f64.sqrt() / 1.25;
    assert!((p.heterogeneity_cv / cv - 1.0).abs() < 0.02, "cv {}", p.heterogeneity_cv);
    let (mem, _) = moments(&p.memory_budget_bytes);
    assert!((mem / 6e9 - 1.0).abs() < 0.01);
}

#[test]
fn coefficient_of_variation_uses_sample_std() {
    // mean 2, sample sd 1
    assert!((coefficient_of_variation(&[1.0, 2.0, 3.0]) - 0.5).abs() < 1e-15);
}

/// Reported CVs of the three speed ranges at K = 8: 0.12, 0.39, 0.57.
#[test]
fn eight_client_cvs_near_reported_values() {
    let reported = [0.12, 0.39, 0.57];
    for (range, target) in REFERENCE_SPEED_RANGES.iter().zip(reported) {
        let seeds = 400;
        let mean_cv = (0..seeds)
            .map(|s| sample_population(8, 1e12, *range, (4.0, 8.0), s).heterogeneity_cv)
            .sum::<f64>()
            / seeds as f64;
        let rel = mean_cv / target - 1.0;
        println!("range {range:?}: mean CV {mean_cv:.4} vs {target} ({:+.1}%)", 100.0 * rel);
        assert!(rel.abs() <= 0.15, "range {range:?}: {mean_cv}");
    }
}
