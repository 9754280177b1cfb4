//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

use std::time::{Duration, Instant};

use edrnn_core::deltagru::{deltagru_forward, dense_forward_fixed, GruDims, Network};
use edrnn_core::lut::{ActLut, Activation};
use edrnn_core::model_io::{load, save, AccelDefaults, WeightContainer};
use edrnn_core::perf::{self, reference};
use edrnn_core::sim::{sim_constructed_sparsity, sim_network_forward, AccelConfig};
use edrnn_core::{parallel, synth, LutPair, QFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn rel_err(got: f64, want: f64) -> f64 {
    ((got - want) / want).abs()
}

struct Case {
    net: Network,
    xs: Vec<Vec<i16>>,
}

/// 120 random networks: L in {1,2}, H in {4,8,16}, I in {3,8}, T = 32.
fn network_suite() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let fmt = QFormat::new(8, 7).unwrap();
    let mut cases = Vec::new();
    for rep in 0..10 {
        for l in [1, 2] {
            for h in [4, 8, 16] {
                for i in [3, 8] {
                    let scale = [0.25, 0.5, 0.9][rep % 3];
                    let net = synth::random_network(&mut rng, GruDims::new(l, i, h).unwrap(), fmt, 0, 0, scale);
                    let amplitude = [128, 256, 512, 1024][rep % 4];
                    let xs = synth::random_inputs(&mut rng, 32, i, amplitude);
                    cases.push(Case { net, xs });
                }
            }
        }
    }
    cases
}

fn c1_zero_threshold_bit_exact(suite: &[Case], luts: &LutPair) -> Outcome {
    let start = Instant::now();
    let results = parallel::map(suite, |case| {
        let delta = deltagru_forward(&case.net, luts, &case.xs).unwrap();
        let dense = dense_forward_fixed(&case.net, luts, &case.xs).unwrap();
        (delta.outputs == dense, delta.stats.saturations)
    });
    let elapsed = start.elapsed();
    let mismatches = results.iter().filter(|r| !r.0).count();
    let saturations: u64 = results.iter().map(|r| r.1).sum();
    let msg = format!("{} networks, {mismatches} mismatches, {saturations} saturations, {:.2?}", suite.len(), elapsed);
    if mismatches == 0 && elapsed < Duration::from_secs(10) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c2_simulator_equivalence(suite: &[Case], luts: &LutPair) -> Outcome {
    let cfg = AccelConfig::default();
    let jobs: Vec<(usize, i16)> = (0..suite.len()).flat_map(|n| [0i16, 16, 64].map(|t| (n, t))).collect();
    let bad: Vec<_> = parallel::map(&jobs, |&(n, theta)| {
        let net = suite[n].net.with_thresholds(theta, theta).unwrap();
        let sim = sim_network_forward(&cfg, &net, luts, &suite[n].xs).unwrap();
        let func = deltagru_forward(&net, luts, &suite[n].xs).unwrap();
        sim.outputs == func.outputs && sim.total.tally == func.stats.per_layer
    })
    .into_iter()
    .zip(&jobs)
    .filter(|(ok, _)| !ok)
    .map(|(_, job)| *job)
    .collect();
    let msg = format!("{} runs at thresholds {{0,16,64}}, {} mismatches", jobs.len(), bad.len());
    if bad.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}: {bad:?}"))
    }
}

fn c3_table2_estimates() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for row in reference::NETWORKS {
        let dims = GruDims::new(row.layers, reference::INPUT_DIM, row.hidden).unwrap();
        let e = perf::effective_throughput(dims, row.gamma_dx, row.gamma_dh, 8, 125e6).unwrap();
        let lat = e.latency * 1e6;
        let thr = e.throughput_eff / 1e9;
        worst = worst.max(rel_err(lat, row.est_latency_us)).max(rel_err(thr, row.est_throughput_gops));
        lines.push(format!("{}L-{}H {lat:.1}us {thr:.1}GOp/s", row.layers, row.hidden));
    }
    let msg = format!("worst rel err {:.3}% [{}]", worst * 100.0, lines.join(", "));
    if worst <= 0.01 && start.elapsed() < Duration::from_secs(1) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c4_op_accounting() -> Outcome {
    let big = perf::op_count(GruDims::new(2, 40, 768).unwrap());
    let small = perf::op_count(GruDims::new(1, 40, 256).unwrap());
    let msg = format!("Op(2L-768H)={big}, Op(1L-256H)={small}");
    if big == 10_801_152 && small == 454_656 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c5_pe_sizing() -> Outcome {
    let s = perf::pe_sizing(64, 8, 125e6).map_err(|e| e.to_string())?;
    let msg = format!("K={}, peak={} Op/s", s.pes, s.peak_throughput);
    if s.pes == 8 && s.peak_throughput == 2e9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c6_table5_normalization() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for p in reference::PLATFORMS {
        let n = perf::normalized_throughput(reference::DRAM_BITS, reference::WEIGHT_BITS, p.index_bits, reference::CLOCK_HZ, p.gamma_eff.unwrap_or(0.0))
            .map_err(|e| e.to_string())?;
        worst = worst.max(rel_err(n.peak_mem / 1e9, p.peak_mem_gops));
        if let Some(bound) = p.eff_norm_gops {
            worst = worst.max(rel_err(n.eff_norm / 1e9, bound));
        }
        lines.push(format!("{} {:.2}/{:.2}", p.name, n.peak_mem / 1e9, n.eff_norm / 1e9));
    }
    let msg = format!("worst rel err {:.2}% [{}]", worst * 100.0, lines.join(", "));
    if worst <= 0.03 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c7_estimator_vs_simulator(luts: &LutPair) -> Outcome {
    let cfg = AccelConfig::default();
    let jobs: Vec<(usize, f64)> = [256usize, 768].iter().flat_map(|&h| [0.0, 0.5, 0.9].map(|g| (h, g))).collect();
    let results = parallel::map(&jobs, |&(h, gamma)| {
        let mut rng = ChaCha8Rng::seed_from_u64(h as u64 * 1000 + (gamma * 10.0) as u64);
        let dims = GruDims::new(2, 40, h).unwrap();
        let net = synth::random_network(&mut rng, dims, QFormat::new(8, 7).unwrap(), 0, 0, 0.05);
        let run = sim_constructed_sparsity(&cfg, &net, luts, gamma, gamma, 10, &mut rng).unwrap();
        let est = perf::effective_throughput(dims, run.total.gamma_dx(), run.total.gamma_dh(), cfg.pes as u32, cfg.clock_hz).unwrap();
        let sim = run.mean_step_latency(&cfg);
        (h, gamma, sim, est.latency, rel_err(sim, est.latency))
    });
    let worst = results.iter().map(|r| r.4).fold(0.0, f64::max);
    let detail: Vec<String> = results.iter().map(|r| format!("2L-{}H g={} sim {:.1}us est {:.1}us", r.0, r.1, r.2 * 1e6, r.3 * 1e6)).collect();
    let msg = format!("worst rel err {:.2}% [{}]", worst * 100.0, detail.join(", "));
    if worst <= 0.05 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c8_memory_traffic(luts: &LutPair) -> Outcome {
    let cfg = AccelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let dims = GruDims::new(2, 40, 256).unwrap();
    let net = synth::random_network(&mut rng, dims, QFormat::new(8, 7).unwrap(), 0, 0, 0.05);
    let dense = sim_constructed_sparsity(&cfg, &net, luts, 0.0, 0.0, 10, &mut rng.clone()).unwrap();
    let sparse = sim_constructed_sparsity(&cfg, &net, luts, 0.9, 0.9, 10, &mut rng).unwrap();
    let g_eff = perf::gamma_eff(dims, sparse.total.gamma_dx(), sparse.total.gamma_dh());
    let ratio = dense.total.weight_bits_fetched as f64 / sparse.total.weight_bits_fetched as f64;
    let msg = format!("gamma_eff={g_eff:.3}, traffic reduction {ratio:.3}x");
    if (g_eff - 0.9).abs() < 1e-9 && rel_err(ratio, 10.0) <= 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Codes nearest to `v` in `Q1.(bits-1)`, found by scanning every code.
fn nearest_codes(v: f64, bits: u32) -> Vec<i64> {
    let f = QFormat::new(bits, bits - 1).unwrap();
    let errs: Vec<(i64, f64)> = (f.min_code()..=f.max_code()).map(|c| (c, (f.to_real(c) - v).abs())).collect();
    let best = errs.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    errs.into_iter().filter(|e| e.1 == best).map(|e| e.0).collect()
}

fn c9_lut_accuracy() -> Outcome {
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for bits in 5..=9u32 {
        for kind in [Activation::Sigmoid, Activation::Tanh] {
            let lut = ActLut::build(kind, bits).unwrap();
            let fmt = lut.out_format();
            let bound = (-(bits as f64)).exp2() + fmt.lsb();
            let mut prev = i16::MIN;
            for code in i16::MIN..=i16::MAX {
                let out = lut.lookup(code);
                let f = kind.eval_real(code as f64 / 256.0);
                if out < prev {
                    failures.push(format!("{kind:?}/{bits} not monotone at {code}"));
                }
                prev = out;
                if !nearest_codes(f, bits).contains(&(out as i64)) {
                    failures.push(format!("{kind:?}/{bits} not nearest at {code}"));
                }
                let err = (fmt.to_real(out as i64) - f).abs();
                worst = worst.max(err / bound);
                if err > bound {
                    failures.push(format!("{kind:?}/{bits} error {err} at {code}"));
                }
            }
            let zero_ok = match kind {
                Activation::Sigmoid => lut.lookup(0) as i64 == 1 << (bits - 2),
                Activation::Tanh => lut.lookup(0) == 0,
            };
            if !zero_ok {
                failures.push(format!("{kind:?}/{bits} wrong at 0"));
            }
        }
    }
    let msg = format!("10 tables x 65536 inputs, worst error {:.2} of bound", worst);
    if failures.is_empty() {
        Ok(msg)
    } else {
        failures.truncate(5);
        Err(format!("{msg}: {failures:?}"))
    }
}

fn c10_serialization_roundtrip() -> Outcome {
    let seeds: Vec<u64> = (0..1200).collect();
    let results = parallel::map(&seeds, |&seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits = [1u32, 2, 4, 8, 16][seed as usize % 5];
        let dims = GruDims::new(rng.gen_range(1..=3), rng.gen_range(1..=9), rng.gen_range(1..=9)).unwrap();
        let fmt = QFormat::new(bits, rng.gen_range(0..bits)).unwrap();
        let (tx, th) = (rng.gen_range(0..=i16::MAX), rng.gen_range(0..=i16::MAX));
        let net = synth::random_network(&mut rng, dims, fmt, tx, th, 4.0);
        let accel = AccelDefaults { pes: rng.gen_range(1..=64), clock_hz: rng.gen(), dram_bits: rng.gen_range(8..=512) };
        let c = WeightContainer::new(net, rng.gen_range(5..=9), accel).unwrap();
        let bytes = save(&c);
        match load(&bytes) {
            Ok(back) => back == c && save(&back) == bytes,
            Err(_) => false,
        }
    });
    let bad = results.iter().filter(|ok| !**ok).count();
    let msg = format!("{} random containers (1/2/4/8/16-bit), {bad} failures", seeds.len());
    if bad == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let luts = LutPair::new(5).unwrap();
    let suite = network_suite();
    let criteria: Vec<Criterion> = vec![
        ("C1 zero-threshold bit-exactness", Box::new(|| c1_zero_threshold_bit_exact(&suite, &luts))),
        ("C2 simulator/functional equivalence", Box::new(|| c2_simulator_equivalence(&suite, &luts))),
        ("C3 estimated latency/throughput table", Box::new(c3_table2_estimates)),
        ("C4 op accounting", Box::new(c4_op_accounting)),
        ("C5 PE sizing and peak throughput", Box::new(c5_pe_sizing)),
        ("C6 bandwidth-normalized throughput", Box::new(c6_table5_normalization)),
        ("C7 estimator vs simulator", Box::new(|| c7_estimator_vs_simulator(&luts))),
        ("C8 memory traffic reduction", Box::new(|| c8_memory_traffic(&luts))),
        ("C9 LUT accuracy", Box::new(c9_lut_accuracy)),
        ("C10 container round-trip", Box::new(c10_serialization_roundtrip)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(msg) => println!("PASS  {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
