use edrnn_core::deltagru::GruDims;
use edrnn_core::perf;
use edrnn_core::sim::{sim_network_forward, AccelConfig};
use edrnn_core::{synth, LutPair, QFormat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn zero_threshold_run_matches_estimate_on_real_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dims = GruDims::new(2, 40, 256).unwrap();
    let net = synth::random_network(&mut rng, dims, QFormat::new(8, 7).unwrap(), 0, 0, 0.1);
    let xs = synth::random_inputs(&mut rng, 12, 40, 256);
    let cfg = AccelConfig::default();
    let run = sim_network_forward(&cfg, &net, &LutPair::new(5).unwrap(), &xs).unwrap();
    let (gdx, gdh) = (run.total.gamma_dx(), run.total.gamma_dh());
    assert!(gdx < 0.05 && gdh < 0.2, "unexpectedly sparse: {gdx} {gdh}");
    let est = perf::effective_throughput(dims, gdx, gdh, 8, 125e6).unwrap();
    let sim = run.mean_step_latency(&cfg);
    assert!(((sim - est.latency) / est.latency).abs() < 0.05, "sim {sim} est {}", est.latency);
}
