//! Wireless link model: large-scale path loss, Rayleigh block fading and
//! Shannon-rate links.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub server_power_w: f64,
    pub client_power_w: f64,
    pub noise_power_w: f64,
    pub path_loss_db: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            server_power_w: 10.0,
            client_power_w: 0.2,
            noise_power_w: 1e-13,
            path_loss_db: 60.0,
        }
    }
}

impl LinkBudget {
    pub fn path_gain(&self) -> f64 {
        10f64.powf(-self.path_loss_db / 10.0)
    }
}

/// Per-round channel power gains, held fixed for the whole round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub downlink_gain: Vec<f64>,
    pub uplink_gain: Vec<f64>,
    pub round_index: usize,
}

impl ChannelState {
    pub fn n_clients(&self) -> usize {
        self.downlink_gain.len()
    }

    /// `log2(1 + p_s H_down / N0)` in bits/s/Hz.
    pub fn spectral_efficiency_down(&self, budget: &LinkBudget, client: usize) -> f64 {
        spectral_efficiency(budget.server_power_w, self.downlink_gain[client], budget.noise_power_w)
    }

    pub fn spectral_efficiency_up(&self, budget: &LinkBudget, client: usize) -> f64 {
        spectral_efficiency(budget.client_power_w, self.uplink_gain[client], budget.noise_power_w)
    }
}

pub fn spectral_efficiency(power_w: f64, gain: f64, noise_w: f64) -> f64 {
    (1.0 + power_w * gain / noise_w).log2()
}

/// Draws independent Rayleigh-faded power gains `g * X`, `X ~ Exp(1)`, for
/// every client and both directions.
pub fn sample_channel<R: Rng + ?Sized>(
    n_clients: usize,
    budget: &LinkBudget,
    round_index: usize,
    rng: &mut R,
) -> ChannelState {
    let g = budget.path_gain();
    let mut draw = || {
        // Exp(1) can return exactly 0; keep gains strictly positive.
        let x: f64 = rng.sample(Exp1);
        g * x.max(f64::MIN_POSITIVE)
    };
    let mut downlink_gain = Vec::with_capacity(n_clients);
    let mut uplink_gain = Vec::with_capacity(n_clients);
    for _ in 0..n_clients {
        downlink_gain.push(draw());
        uplink_gain.push(draw());
    }
    ChannelState {
        downlink_gain,
        uplink_gain,
        round_index,
    }
}

/// Downlink and uplink rates in bits/s for `client` on `bandwidth_hz`.
/// Both directions use the same allocated bandwidth.
pub fn rates(state: &ChannelState, budget: &LinkBudget, bandwidth_hz: f64, client: usize) -> (f64, f64) {
    (
        bandwidth_hz * state.spectral_efficiency_down(budget, client),
        bandwidth_hz * state.spectral_efficiency_up(budget, client),
    )
}
