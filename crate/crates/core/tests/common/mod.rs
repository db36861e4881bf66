#![allow(dead_code)]

use fedlat::arch::flops_per_iteration;
use fedlat::channel::sample_channel;
use fedlat::fedsim::{client_statics, sample_population, Experiment};
use fedlat::jcpba::{ClientStatic, ConstraintSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random instance drawn the same way the simulator draws a round: default
/// scenario, `k` clients, speeds U[0.5, 2] TFLOPS, Rayleigh channels.
pub fn random_instance(seed: u64, k: usize) -> (Vec<ClientStatic>, ConstraintSet) {
    let exp = Experiment {
        constraints: ConstraintSet {
            n_clients: k,
            ..ConstraintSet::default()
        },
        seed,
        ..Experiment::default()
    };
    let sizes = exp.sizes().unwrap();
    let flops = flops_per_iteration(&sizes, exp.model.seq_len, 0.0, exp.constraints.batch_size);
    let pop = sample_population(k, exp.f0_flops, exp.speed_range, exp.memory_range_gb, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let channel = sample_channel(k, &exp.link, 0, &mut rng);
    (client_statics(&exp, &pop, &sizes, &flops, &channel), exp.constraints)
}

/// Every weight tensor of a GPT-2 style stack as `(name, element count)`.
/// Per block: ln_1, c_attn (q/k/v), attn c_proj, ln_2, c_fc, mlp c_proj.
/// `heads`/`ff` are the retained head and neuron counts.
pub fn block_tensors(d: u64, head_dim: u64, heads: u64, ff: u64) -> Vec<(&'static str, u64)> {
    let inner = heads * head_dim;
    vec![
        ("ln_1.weight", d),
        ("ln_1.bias", d),
        ("attn.c_attn.weight", d * 3 * inner),
        ("attn.c_attn.bias", 3 * inner),
        ("attn.c_proj.weight", inner * d),
        ("attn.c_proj.bias", d),
        ("ln_2.weight", d),
        ("ln_2.bias", d),
        ("mlp.c_fc.weight", d * ff),
        ("mlp.c_fc.bias", ff),
        ("mlp.c_proj.weight", ff * d),
        ("mlp.c_proj.bias", d),
    ]
}

pub fn block_total(d: u64, head_dim: u64, heads: u64, ff: u64) -> u64 {
    block_tensors(d, head_dim, heads, ff).iter().map(|t| t.1).sum()
}

/// wte + wpe + ln_f; the LM head shares wte.
pub fn embedding_total(vocab: u64, n_pos: u64, d: u64) -> u64 {
    vocab * d + n_pos * d + 2 * d
}

/// Integration tests have no source file to anchor regression files to.
pub fn pt_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        ..Default::default()
    }
}
