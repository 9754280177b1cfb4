//! `edrnn`: run, sweep and size DeltaGRU networks on the simulated accelerator.
//!
//! Exit status: 0 on success, 1 when a run violates an internal invariant
//! (for example a failed `--check-dense`), 2 on usage or I/O errors.

mod text;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use edrnn_core::deltagru::{deltagru_forward, dense_forward_fixed, float_forward, GruDims, Network};
use edrnn_core::model_io::{export_header, load, quantize_network, save, AccelDefaults, WeightContainer};
use edrnn_core::perf::{self, reference};
use edrnn_core::sim::{sim_network_forward, AccelConfig, SimRun};
use edrnn_core::{parallel, synth, LutPair, QFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug)]
struct InvariantViolation(String);

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invariant violated: {}", self.0)
    }
}

impl std::error::Error for InvariantViolation {}

#[derive(Parser)]
#[command(name = "edrnn", version, about = "DeltaGRU accelerator simulator and performance model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an input sequence through a model on the cycle-level simulator.
    Infer(InferArgs),
    /// Simulate a grid of delta thresholds and report sparsity, latency and accuracy as CSV.
    Sweep(SweepArgs),
    /// Analytical latency/throughput estimate for a network shape and sparsity.
    Estimate(EstimateArgs),
    /// Quantize a real-valued weight file into a model container.
    Quantize(QuantizeArgs),
    /// Print the header of a model container.
    Info { model: PathBuf },
    /// Write a random real-valued weight file and a smooth input sequence.
    Synth(SynthArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Model container written by `edrnn quantize`.
    model: PathBuf,
    /// Input sequence, one timestep per line.
    input: PathBuf,
    /// Input values are reals rather than Q8.8 codes.
    #[arg(long)]
    real: bool,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Write final-layer outputs here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Print outputs as reals rather than Q8.8 codes.
    #[arg(long)]
    out_real: bool,
    /// Override the input-delta threshold of every layer (Q8.8 code).
    #[arg(long)]
    theta_x: Option<i16>,
    /// Override the hidden-delta threshold of every layer (Q8.8 code).
    #[arg(long)]
    theta_h: Option<i16>,
    /// Also check that zero-threshold delta inference matches dense inference bit for bit.
    #[arg(long)]
    check_dense: bool,
    #[command(flatten)]
    accel: AccelOverrides,
}

#[derive(Args)]
struct AccelOverrides {
    /// Number of MAC processing elements.
    #[arg(long)]
    pes: Option<usize>,
    /// Clock frequency in Hz.
    #[arg(long)]
    clock: Option<f64>,
    /// DRAM port width in bits.
    #[arg(long)]
    dram_bits: Option<u32>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Input-delta thresholds (Q8.8 codes), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    theta_x: Vec<i16>,
    /// Hidden-delta thresholds (Q8.8 codes), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    theta_h: Vec<i16>,
    /// Worker threads; defaults to EDRNN_THREADS or all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Write CSV here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    accel: AccelOverrides,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    input: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    gamma_dx: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma_dh: f64,
    #[arg(long, default_value_t = 8)]
    pes: u32,
    #[arg(long, default_value_t = 125e6)]
    clock: f64,
    #[arg(long, default_value_t = 64)]
    dram_bits: u32,
    #[arg(long, default_value_t = 8)]
    weight_bits: u32,
    #[arg(long, default_value_t = 0)]
    index_bits: u32,
    /// Emit CSV instead of a human-readable report.
    #[arg(long)]
    csv: bool,
    /// Estimate the six reference networks at their published sparsities.
    #[arg(long)]
    table2: bool,
    /// Bandwidth-normalized throughput of the reference platforms.
    #[arg(long)]
    table5: bool,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Real-valued weight file.
    weights: PathBuf,
    /// Container to write.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 8)]
    weight_bits: u32,
    /// Input-delta threshold for every layer (Q8.8 code).
    #[arg(long, default_value_t = 0)]
    theta_x: i16,
    /// Hidden-delta threshold for every layer (Q8.8 code).
    #[arg(long, default_value_t = 0)]
    theta_h: i16,
    #[arg(long, default_value_t = 5)]
    lut_bits: u32,
    #[arg(long, default_value_t = 8)]
    pes: u16,
    #[arg(long, default_value_t = 125_000_000)]
    clock: u32,
    #[arg(long, default_value_t = 64)]
    dram_bits: u16,
    /// Also write a C header with the packed weights.
    #[arg(long)]
    header: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 40)]
    input: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Weights are uniform in [-scale, scale].
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    inputs: PathBuf,
}

fn write_out(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, body).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn load_model(path: &Path) -> Result<WeightContainer> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    load(&bytes).with_context(|| format!("cannot load model {}", path.display()))
}

fn accel_config(c: &WeightContainer, o: &AccelOverrides) -> Result<AccelConfig> {
    let cfg = AccelConfig {
        pes: o.pes.unwrap_or(c.accel.pes as usize),
        clock_hz: o.clock.unwrap_or(c.accel.clock_hz as f64),
        dram_bits: o.dram_bits.unwrap_or(c.accel.dram_bits as u32),
        weight_bits: c.network.layers()[0].weight_format().total_bits(),
        lut_out_bits: c.lut_out_bits,
        ..AccelConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_inputs(io: &InputArgs, dims: GruDims) -> Result<Vec<Vec<i16>>> {
    let parsed = text::parse_inputs(&text::read_file(&io.input)?, dims.input, io.real)
        .with_context(|| format!("in {}", io.input.display()))?;
    if parsed.saturated > 0 {
        eprintln!("warning: {} input values saturated to the Q8.8 range", parsed.saturated);
    }
    Ok(parsed.codes)
}

fn us(seconds: f64) -> f64 {
    seconds * 1e6
}

fn infer(args: &InferArgs) -> Result<()> {
    let container = load_model(&args.io.model)?;
    let mut net = container.network.clone();
    if args.theta_x.is_some() || args.theta_h.is_some() {
        let layers = net
            .layers()
            .iter()
            .map(|p| {
                let mut p = p.clone();
                p.set_thresholds(args.theta_x.unwrap_or(p.theta_x()), args.theta_h.unwrap_or(p.theta_h()))?;
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        net = Network::new(layers)?;
    }
    let dims = net.dims();
    let xs = load_inputs(&args.io, dims)?;
    let cfg = accel_config(&container, &args.accel)?;
    let luts = LutPair::new(container.lut_out_bits)?;

    let run = sim_network_forward(&cfg, &net, &luts, &xs)?;
    let reference = deltagru_forward(&net, &luts, &xs)?;
    if run.outputs != reference.outputs {
        bail!(InvariantViolation("simulator and functional model disagree".into()));
    }

    let last = dims.layers - 1;
    let finals = run.outputs.iter().map(|o| &o[last]);
    let body = if args.out_real {
        text::format_rows(finals.map(|h| h.iter().map(|&c| c as f64 / 256.0)))
    } else {
        text::format_rows(finals.map(|h| h.iter().copied()))
    };
    write_out(args.output.as_deref(), &body)?;

    print_summary(&cfg, dims, &run);
    if args.check_dense {
        let zero = net.with_thresholds(0, 0)?;
        let delta = deltagru_forward(&zero, &luts, &xs)?;
        let dense = dense_forward_fixed(&zero, &luts, &xs)?;
        let exact = delta.outputs == dense;
        eprintln!("bit-exact: {exact}");
        if !exact {
            bail!(InvariantViolation("zero-threshold delta inference differs from dense inference".into()));
        }
    }
    Ok(())
}

fn print_summary(cfg: &AccelConfig, dims: GruDims, run: &SimRun) {
    let t = &run.total;
    let (gdx, gdh) = (t.gamma_dx(), t.gamma_dh());
    eprintln!("steps: {}", run.per_step.len());
    eprintln!("gamma_dx: {gdx:.4}  gamma_dh: {gdh:.4}  gamma_eff: {:.4}", perf::gamma_eff(dims, gdx, gdh));
    eprintln!(
        "latency per step (us): mean {:.3}  min {:.3}  max {:.3}",
        us(run.mean_step_latency(cfg)),
        us(run.min_step_latency(cfg)),
        us(run.max_step_latency(cfg))
    );
    eprintln!("effective throughput: {:.3} GOp/s", run.effective_throughput(cfg) / 1e9);
    eprintln!(
        "cycles: total {}  delta {}  mxv {}  act {}  fetch {}",
        t.cycles_total, t.cycles_delta, t.cycles_mxv, t.cycles_act, t.cycles_fetch
    );
    eprintln!("valid columns: {}  weight bits fetched: {}", t.valid_columns(), t.weight_bits_fetched);
    eprintln!("saturation events: {}", t.saturation_events);
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("EDRNN_THREADS") {
        Ok(v) => v.trim().parse().map(Some).with_context(|| format!("EDRNN_THREADS={v:?} is not a thread count")),
        Err(_) => Ok(None),
    }
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let container = load_model(&args.io.model)?;
    let net = &container.network;
    let dims = net.dims();
    let xs = load_inputs(&args.io, dims)?;
    let cfg = accel_config(&container, &args.accel)?;
    let luts = LutPair::new(container.lut_out_bits)?;
    let threads = thread_count(args.threads)?;
    for &t in args.theta_x.iter().chain(&args.theta_h) {
        ensure!(t >= 0, "thresholds must be non-negative, got {t}");
    }

    let xs_real: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|&c| c as f64 / 256.0).collect()).collect();
    let float_ref = float_forward(&net.dequantize(), &xs_real)?;
    let grid: Vec<(i16, i16)> = args.theta_x.iter().flat_map(|&tx| args.theta_h.iter().map(move |&th| (tx, th))).collect();

    let rows = parallel::with_threads(threads, || {
        parallel::map(&grid, |&(tx, th)| -> Result<String> {
            let n = net.with_thresholds(tx, th)?;
            let run = sim_network_forward(&cfg, &n, &luts, &xs)?;
            let (gdx, gdh) = (run.total.gamma_dx(), run.total.gamma_dh());
            let est = perf::effective_throughput(dims, gdx, gdh, cfg.pes as u32, cfg.clock_hz)?;
            let last = dims.layers - 1;
            let (mut se, mut count) = (0.0, 0usize);
            for (o, r) in run.outputs.iter().zip(&float_ref) {
                for (&c, &v) in o[last].iter().zip(r) {
                    se += (c as f64 / 256.0 - v).powi(2);
                    count += 1;
                }
            }
            Ok(format!(
                "{tx},{th},{gdx:.6},{gdh:.6},{:.6},{:.4},{:.4},{:.4},{:.6}",
                perf::gamma_eff(dims, gdx, gdh),
                us(run.mean_step_latency(&cfg)),
                us(est.latency),
                run.effective_throughput(&cfg) / 1e9,
                (se / count as f64).sqrt()
            ))
        })
    });
    let mut body = String::from("theta_x,theta_h,gamma_dx,gamma_dh,gamma_eff,sim_latency_us,est_latency_us,eff_throughput_gops,rmse\n");
    for row in rows {
        body.push_str(&row?);
        body.push('\n');
    }
    write_out(args.output.as_deref(), &body)
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    if args.table2 {
        return estimate_table2(args);
    }
    if args.table5 {
        return estimate_table5(args);
    }
    let (Some(l), Some(i), Some(h)) = (args.layers, args.input, args.hidden) else {
        bail!("--layers, --input and --hidden are required unless --table2 or --table5 is given");
    };
    let dims = GruDims::new(l, i, h)?;
    let e = perf::effective_throughput(dims, args.gamma_dx, args.gamma_dh, args.pes, args.clock)?;
    let g = perf::gamma_eff(dims, args.gamma_dx, args.gamma_dh);
    let traffic = perf::memory_traffic_reduction(g)?;
    let n = perf::normalized_throughput(args.dram_bits, args.weight_bits, args.index_bits, args.clock, g)?;
    if args.csv {
        println!("layers,input,hidden,gamma_dx,gamma_dh,gamma_eff,op_per_step,tau_m_us,tau_a_us,latency_us,throughput_gops,traffic_reduction,peak_mem_gops,eff_norm_gops");
        println!(
            "{l},{i},{h},{},{},{g:.6},{},{:.4},{:.4},{:.4},{:.4},{traffic:.4},{:.4},{:.4}",
            args.gamma_dx,
            args.gamma_dh,
            e.op_per_timestep,
            us(e.tau_m),
            us(e.tau_a),
            us(e.latency),
            e.throughput_eff / 1e9,
            n.peak_mem / 1e9,
            n.eff_norm / 1e9
        );
    } else {
        println!("network: {l}L-{h}H, input {i}");
        println!("Op per timestep: {}", e.op_per_timestep);
        println!("gamma_eff: {g:.4}");
        println!("tau_m: {:.3} us", us(e.tau_m));
        println!("tau_a: {:.3} us", us(e.tau_a));
        println!("latency: {:.3} us", us(e.latency));
        println!("effective throughput: {:.3} GOp/s", e.throughput_eff / 1e9);
        println!("memory traffic reduction: {traffic:.3}x");
        println!("bandwidth-limited peak: {:.3} GOp/s, sparse bound {:.3} GOp/s", n.peak_mem / 1e9, n.eff_norm / 1e9);
    }
    Ok(())
}

fn estimate_table2(args: &EstimateArgs) -> Result<()> {
    println!("network,gamma_dx,gamma_dh,op_per_step,latency_us,ref_latency_us,throughput_gops,ref_throughput_gops");
    for row in reference::NETWORKS {
        let dims = GruDims::new(row.layers, reference::INPUT_DIM, row.hidden)?;
        let e = perf::effective_throughput(dims, row.gamma_dx, row.gamma_dh, args.pes, args.clock)?;
        println!(
            "{}L-{}H,{},{},{},{:.1},{},{:.1},{}",
            row.layers,
            row.hidden,
            row.gamma_dx,
            row.gamma_dh,
            e.op_per_timestep,
            us(e.latency),
            row.est_latency_us,
            e.throughput_eff / 1e9,
            row.est_throughput_gops
        );
    }
    Ok(())
}

fn estimate_table5(args: &EstimateArgs) -> Result<()> {
    println!("platform,index_bits,gamma_eff,peak_mem_gops,ref_peak_mem_gops,eff_norm_gops,ref_eff_norm_gops");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
    for p in reference::PLATFORMS {
        let n = perf::normalized_throughput(args.dram_bits, args.weight_bits, p.index_bits, args.clock, p.gamma_eff.unwrap_or(0.0))?;
        println!(
            "{},{},{},{:.2},{},{:.2},{}",
            p.name,
            p.index_bits,
            opt(p.gamma_eff),
            n.peak_mem / 1e9,
            p.peak_mem_gops,
            n.eff_norm / 1e9,
            opt(p.eff_norm_gops)
        );
    }
    Ok(())
}

fn quantize(args: &QuantizeArgs) -> Result<()> {
    let layers = text::parse_weights(&text::read_file(&args.weights)?).with_context(|| format!("in {}", args.weights.display()))?;
    let thresholds = vec![(args.theta_x, args.theta_h); layers.len()];
    let (net, report) = quantize_network(&layers, args.weight_bits, &thresholds)?;
    let accel = AccelDefaults { pes: args.pes, clock_hz: args.clock, dram_bits: args.dram_bits };
    let container = WeightContainer::new(net, args.lut_bits, accel)?;
    let bytes = save(&container);
    std::fs::write(&args.output, &bytes).with_context(|| format!("cannot write {}", args.output.display()))?;
    for (l, r) in report.iter().enumerate() {
        println!("layer {l}: format {:?}, max |w| {:.6}, max quantization error {:.6}", r.format, r.max_abs, r.max_error);
    }
    println!("wrote {} bytes to {}", bytes.len(), args.output.display());
    if let Some(h) = &args.header {
        std::fs::write(h, export_header(&container)).with_context(|| format!("cannot write {}", h.display()))?;
        println!("wrote header {}", h.display());
    }
    Ok(())
}

fn info(model: &Path) -> Result<()> {
    let c = load_model(model)?;
    let d = c.descriptor();
    println!("layers {}  input {}  hidden {}", d.dims.layers, d.dims.input, d.dims.hidden);
    println!("LUT output bits {}", d.lut_out_bits);
    println!("accelerator: {} PEs, {} Hz, {}-bit DRAM", d.accel.pes, d.accel.clock_hz, d.accel.dram_bits);
    for (l, layer) in d.layers.iter().enumerate() {
        println!("layer {l}: weights {:?}, theta_x {}, theta_h {}", layer.weight_format, layer.theta_x, layer.theta_h);
    }
    Ok(())
}

fn synth_files(args: &SynthArgs) -> Result<()> {
    let dims = GruDims::new(args.layers, args.input, args.hidden)?;
    ensure!(args.scale > 0.0 && args.scale < 1.0, "--scale must be in (0, 1)");
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let net = synth::random_network(&mut rng, dims, QFormat::new(8, 7)?, 0, 0, args.scale);
    std::fs::write(&args.weights, text::format_weights(&net.dequantize()))
        .with_context(|| format!("cannot write {}", args.weights.display()))?;
    let waves: Vec<(f64, f64, f64)> =
        (0..args.input).map(|_| (rng.gen_range(0.2..1.0), rng.gen_range(0.005..0.05), rng.gen_range(0.0..std::f64::consts::TAU))).collect();
    let rows = (0..args.steps).map(|t| {
        waves.iter().map(move |&(a, f, p)| ((a * (std::f64::consts::TAU * f * t as f64 + p).sin()) * 256.0).round() as i16)
    });
    std::fs::write(&args.inputs, text::format_rows(rows)).with_context(|| format!("cannot write {}", args.inputs.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Infer(a) => infer(a),
        Command::Sweep(a) => sweep(a),
        Command::Estimate(a) => estimate(a),
        Command::Quantize(a) => quantize(a),
        Command::Info { model } => info(model),
        Command::Synth(a) => synth_files(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<InvariantViolation>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
