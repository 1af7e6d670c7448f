//! Command-line front end for the bnn-core engine: classification,
//! differential comparison of the accelerated pipeline against reference
//! implementations, MAC counting, model generation, and benchmarking.
//!
//! Exit codes: 0 success, 1 verification mismatch, 2 usage or format error.
//! Reports go to stdout, diagnostics to stderr.

use std::fmt::Display;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bnn_core::engine::{first_divergence, forward, forward_prepadded, ForwardOptions, LayerClass, RunOutput};
use bnn_core::fxcore::Plane;
use bnn_core::model_io::{
    center_crop32, encode_model, gen_random_model, gen_random_planes, load_image_ppm, preprocess, read_model,
    LoadedImage, Model,
};
use bnn_core::netgraph::{count_ops, parse_network, render_network, ORIGINAL_TOPOLOGY, REDUCED_TOPOLOGY};
use bnn_core::oracle::{
    argmax_f64, fixed_forward_naive, fixed_forward_naive_prepadded, float_forward, float_forward_prepadded,
    FloatPlane, NaiveRun,
};

#[derive(Parser)]
#[command(name = "bnn", version, about = "Binarized-weight CNN inference engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a model on an image and print scores and the argmax class.
    Classify {
        /// Packed model file.
        #[arg(long)]
        model: PathBuf,
        /// PPM image: 32x32 direct input, or 40x30 with --camera-path.
        #[arg(long)]
        image: PathBuf,
        /// Treat the image as a raw 40x30 camera frame (preprocess + crop).
        #[arg(long)]
        camera_path: bool,
        /// Also report 16b group-accumulator overflow events.
        #[arg(long)]
        debug_overflow: bool,
        /// Emit the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Run the accelerated, naive fixed-point, and float paths and compare.
    Compare {
        /// Packed model file (with --image).
        #[arg(long, requires = "image", conflicts_with = "random")]
        model: Option<PathBuf>,
        /// PPM image (with --model).
        #[arg(long, requires = "model")]
        image: Option<PathBuf>,
        /// Compare N randomly generated (model, image) pairs instead.
        #[arg(long, value_name = "N", conflicts_with_all = ["model", "image"])]
        random: Option<usize>,
        /// Seed for --random instance generation.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Topology for --random models (defaults to the reduced network).
        #[arg(long)]
        network: Option<String>,
    },
    /// Count MACs per layer for one or more network notations.
    Opcount {
        /// Built-in topology by name; repeatable.
        #[arg(long)]
        builtin: Vec<Builtin>,
        /// Explicit network notation; repeatable.
        #[arg(long)]
        network: Vec<String>,
    },
    /// Generate a deterministic random model file for a topology.
    Genmodel {
        /// Network notation, e.g. "(2x48C3)-MP2-(2x96C3)-MP2-(2x128C3)-MP2-(2x256FC)-10SVM".
        #[arg(long)]
        network: String,
        /// RNG seed; the same seed always produces an identical file.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time repeated forward passes and summarize per layer class.
    Bench {
        /// Packed model file.
        #[arg(long)]
        model: PathBuf,
        /// Number of timed forward passes.
        #[arg(long, default_value_t = 10)]
        iterations: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Original,
    Reduced,
}

impl Builtin {
    fn notation(self) -> &'static str {
        match self {
            Builtin::Original => ORIGINAL_TOPOLOGY,
            Builtin::Reduced => REDUCED_TOPOLOGY,
        }
    }
}

struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn usage(message: impl Display) -> Self {
        Self { code: 2, message: message.to_string() }
    }

    fn mismatch(message: impl Display) -> Self {
        Self { code: 1, message: message.to_string() }
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        Self::usage(e)
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Classify { model, image, camera_path, debug_overflow, json } => {
            cmd_classify(&model, &image, camera_path, debug_overflow, json)
        }
        Command::Compare { model, image, random, seed, network } => {
            cmd_compare(model.as_deref(), image.as_deref(), random, seed, network.as_deref())
        }
        Command::Opcount { builtin, network } => cmd_opcount(&builtin, &network),
        Command::Genmodel { network, seed, out } => cmd_genmodel(&network, seed, &out),
        Command::Bench { model, iterations } => cmd_bench(&model, iterations),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        process::exit(e.code);
    }
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    let file = File::open(path).map_err(|e| CliError::usage(format_args!("{}: {e}", path.display())))?;
    read_model(&mut BufReader::new(file)).map_err(|e| CliError::usage(format_args!("{}: {e}", path.display())))
}

fn load_image(path: &Path) -> Result<LoadedImage, CliError> {
    let file = File::open(path).map_err(|e| CliError::usage(format_args!("{}: {e}", path.display())))?;
    load_image_ppm(&mut BufReader::new(file))
        .map_err(|e| CliError::usage(format_args!("{}: {e}", path.display())))
}

/// Input planes plus whether they carry the camera path's 1-pixel border.
fn resolve_input(image: LoadedImage, camera_path: bool) -> Result<(Vec<Plane>, bool), CliError> {
    match (image, camera_path) {
        (LoadedImage::Camera(frame), true) => {
            let (planes, _) = preprocess(&frame);
            Ok((center_crop32(&planes)?.to_vec(), true))
        }
        (LoadedImage::Direct(planes), false) => Ok((planes.to_vec(), false)),
        (LoadedImage::Camera(_), false) => {
            Err(CliError::usage("image is a 40x30 camera frame; pass --camera-path"))
        }
        (LoadedImage::Direct(_), true) => {
            Err(CliError::usage("--camera-path needs a 40x30 camera frame, image is 32x32"))
        }
    }
}

#[derive(Serialize)]
struct LayerReport {
    label: String,
    class: &'static str,
    wall_seconds: f64,
    macs: u64,
}

#[derive(Serialize)]
struct RunReport {
    scores: Vec<i32>,
    argmax: usize,
    layers: Vec<LayerReport>,
    total_wall_seconds: f64,
    total_macs: u64,
    macs_per_second: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    overflow_events: Option<u64>,
}

fn class_name(class: LayerClass) -> &'static str {
    match class {
        LayerClass::Conv => "conv",
        LayerClass::Pool => "pool",
        LayerClass::Dense => "dense",
    }
}

fn build_report(run: &RunOutput, debug_overflow: bool) -> RunReport {
    let total_macs = run.total_macs();
    let total_wall_seconds = run.total.as_secs_f64();
    RunReport {
        scores: run.scores.clone(),
        argmax: run.argmax,
        layers: run
            .layers
            .iter()
            .map(|s| LayerReport {
                label: s.label.clone(),
                class: class_name(s.class),
                wall_seconds: s.wall.as_secs_f64(),
                macs: s.macs,
            })
            .collect(),
        total_wall_seconds,
        total_macs,
        macs_per_second: if total_wall_seconds > 0.0 { total_macs as f64 / total_wall_seconds } else { 0.0 },
        overflow_events: debug_overflow.then_some(run.overflow_events),
    }
}

fn fmt_seconds(s: f64) -> String {
    if s < 1e-3 {
        format!("{:8.1} us", s * 1e6)
    } else if s < 1.0 {
        format!("{:8.2} ms", s * 1e3)
    } else {
        format!("{s:8.3} s ")
    }
}

fn print_report(report: &RunReport) {
    println!("{:<10} {:<6} {:>11} {:>12}", "layer", "class", "time", "MACs");
    for layer in &report.layers {
        println!("{:<10} {:<6} {} {:>12}", layer.label, layer.class, fmt_seconds(layer.wall_seconds), layer.macs);
    }
    println!(
        "total: {}, {} MACs, {:.3} MMAC/s",
        fmt_seconds(report.total_wall_seconds).trim(),
        report.total_macs,
        report.macs_per_second / 1e6
    );
    if let Some(events) = report.overflow_events {
        println!("overflow events: {events}");
    }
    for (i, score) in report.scores.iter().enumerate() {
        println!("score[{i}] = {score}");
    }
    println!("argmax: {}", report.argmax);
}

fn cmd_classify(
    model_path: &Path,
    image_path: &Path,
    camera_path: bool,
    debug_overflow: bool,
    json: bool,
) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let (input, prepadded) = resolve_input(load_image(image_path)?, camera_path)?;
    let options = ForwardOptions::default();
    let run = if prepadded {
        forward_prepadded(&model, &input, &options)?
    } else {
        forward(&model, &input, &options)?
    };
    let report = build_report(&run, debug_overflow);
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print_report(&report);
    }
    Ok(())
}

/// Accumulated float-vs-fixed statistics across compare instances.
#[derive(Default)]
struct FloatStats {
    max_abs_delta: f64,
    sum_abs_delta: f64,
    deltas: usize,
    argmax_agreements: usize,
}

impl FloatStats {
    fn record(&mut self, float_scores: &[f64], fixed: &RunOutput) {
        for (f, &x) in float_scores.iter().zip(&fixed.scores) {
            let delta = (f - x as f64).abs();
            self.max_abs_delta = self.max_abs_delta.max(delta);
            self.sum_abs_delta += delta;
            self.deltas += 1;
        }
        if argmax_f64(float_scores) == fixed.argmax {
            self.argmax_agreements += 1;
        }
    }
}

/// One compare instance. Returns a mismatch description if the accelerated
/// and naive fixed-point paths disagree anywhere.
fn compare_instance(
    model: &Model,
    input: &[Plane],
    prepadded: bool,
    stats: &mut FloatStats,
) -> Result<Option<String>, CliError> {
    let options = ForwardOptions { collect_trace: true };
    let (fixed, naive): (RunOutput, NaiveRun) = if prepadded {
        (forward_prepadded(model, input, &options)?, fixed_forward_naive_prepadded(model, input, true)?)
    } else {
        (forward(model, input, &options)?, fixed_forward_naive(model, input, true)?)
    };

    let fixed_trace = fixed.trace.as_ref().expect("trace requested");
    let naive_trace = naive.trace.as_ref().expect("trace requested");
    if let Some(d) = first_divergence(fixed_trace, naive_trace) {
        return Ok(Some(format!(
            "layer {} ({}) channel {} at ({}, {}): accelerated={} naive={}",
            d.layer, d.label, d.channel, d.x, d.y, d.left, d.right
        )));
    }
    if fixed.scores != naive.scores {
        return Ok(Some(format!("score vectors differ: {:?} vs {:?}", fixed.scores, naive.scores)));
    }
    if fixed.overflow_events != naive.overflow_events {
        return Ok(Some(format!(
            "overflow events differ: accelerated={} naive={}",
            fixed.overflow_events, naive.overflow_events
        )));
    }

    let float_input: Vec<FloatPlane> = input.iter().map(FloatPlane::from_plane).collect();
    let float_scores = if prepadded {
        float_forward_prepadded(model, &float_input)?
    } else {
        float_forward(model, &float_input)?
    };
    stats.record(&float_scores, &fixed);
    Ok(None)
}

/// SplitMix64 step; used to derive independent per-instance seeds.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn cmd_compare(
    model_path: Option<&Path>,
    image_path: Option<&Path>,
    random: Option<usize>,
    seed: u64,
    network: Option<&str>,
) -> Result<(), CliError> {
    let mut stats = FloatStats::default();
    let mut passed = 0usize;
    let total;

    match (model_path, random) {
        (Some(model_path), None) => {
            total = 1;
            let model = load_model(model_path)?;
            let loaded = load_image(image_path.expect("clap enforces --image with --model"))?;
            let camera = matches!(loaded, LoadedImage::Camera(_));
            let (input, prepadded) = resolve_input(loaded, camera)?;
            if let Some(detail) = compare_instance(&model, &input, prepadded, &mut stats)? {
                println!("instances: 1");
                println!("fixed vs naive: 0/1 bit-exact");
                return Err(CliError::mismatch(format_args!("instance 0: {detail}")));
            }
            passed += 1;
        }
        (None, Some(n)) => {
            if n == 0 {
                return Err(CliError::usage("--random needs at least one instance"));
            }
            total = n;
            let spec = parse_network(network.unwrap_or(REDUCED_TOPOLOGY))?;
            let mut state = seed;
            for instance in 0..n {
                let model_seed = splitmix64(&mut state);
                let image_seed = splitmix64(&mut state);
                let model = gen_random_model(&spec, model_seed)?;
                let input = gen_random_planes(image_seed).to_vec();
                if let Some(detail) = compare_instance(&model, &input, false, &mut stats)? {
                    println!("instances: {n}");
                    println!("fixed vs naive: {passed}/{n} bit-exact before first mismatch");
                    return Err(CliError::mismatch(format_args!("instance {instance}: {detail}")));
                }
                passed += 1;
            }
        }
        _ => return Err(CliError::usage("pass either --model with --image, or --random N")),
    }

    println!("instances: {total}");
    println!("fixed vs naive: {passed}/{total} bit-exact");
    println!(
        "float vs fixed: max |delta| = {:.3}, mean |delta| = {:.3}",
        stats.max_abs_delta,
        if stats.deltas > 0 { stats.sum_abs_delta / stats.deltas as f64 } else { 0.0 }
    );
    println!(
        "argmax agreement: {}/{} ({:.1}%)",
        stats.argmax_agreements,
        total,
        100.0 * stats.argmax_agreements as f64 / total as f64
    );
    Ok(())
}

fn cmd_opcount(builtins: &[Builtin], networks: &[String]) -> Result<(), CliError> {
    let mut notations: Vec<&str> = builtins.iter().map(|b| b.notation()).collect();
    notations.extend(networks.iter().map(String::as_str));
    if notations.is_empty() {
        return Err(CliError::usage("pass --builtin original|reduced or --network NOTATION"));
    }

    let mut first_total = None;
    for notation in notations {
        let spec = parse_network(notation)?;
        let ops = count_ops(&spec)?;
        println!("{}", render_network(&spec));
        println!("  {:<10} {:>14}", "layer", "MACs");
        for layer in &ops.per_layer {
            println!("  {:<10} {:>14}", layer.label, layer.macs);
        }
        println!("  {:<10} {:>14}", "total", ops.total);
        match first_total {
            None => first_total = Some(ops.total),
            Some(first) if first > 0 => {
                let reduction = 100.0 * (1.0 - ops.total as f64 / first as f64);
                println!("  reduction vs first: {reduction:.2}% fewer MACs");
            }
            Some(_) => {}
        }
        println!();
    }
    Ok(())
}

fn cmd_genmodel(network: &str, seed: u64, out: &Path) -> Result<(), CliError> {
    let spec = parse_network(network)?;
    let model = gen_random_model(&spec, seed)?;
    let bytes = encode_model(&model)?;
    std::fs::write(out, &bytes).map_err(|e| CliError::usage(format_args!("{}: {e}", out.display())))?;
    let bits = model.sign_bits();
    println!(
        "wrote {}: {}, sign payload {} bits ({} bytes), {} bytes total",
        out.display(),
        render_network(&model.spec),
        bits,
        bits.div_ceil(8),
        bytes.len()
    );
    Ok(())
}

fn median(sorted: &[Duration]) -> Duration {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2
    }
}

fn cmd_bench(model_path: &Path, iterations: usize) -> Result<(), CliError> {
    if iterations == 0 {
        return Err(CliError::usage("--iterations must be at least 1"));
    }
    let model = load_model(model_path)?;
    // Fixed-seed input: the numbers must not wobble with the image content.
    let input = gen_random_planes(0xb13a5).to_vec();

    let classes = [LayerClass::Conv, LayerClass::Pool, LayerClass::Dense];
    let mut per_class: [Vec<Duration>; 3] = Default::default();
    let mut totals = Vec::with_capacity(iterations);
    let mut macs = 0;
    for _ in 0..iterations {
        let run = forward(&model, &input, &ForwardOptions::default())?;
        for (class, samples) in classes.iter().zip(per_class.iter_mut()) {
            samples.push(run.layers.iter().filter(|s| s.class == *class).map(|s| s.wall).sum());
        }
        totals.push(run.total);
        macs = run.total_macs();
    }
    for samples in per_class.iter_mut() {
        samples.sort();
    }
    totals.sort();

    println!("model: {} ({} MACs per pass)", render_network(&model.spec), macs);
    println!("iterations: {iterations}");
    println!("{:<7} {:>11} {:>11}", "class", "median", "min");
    for (class, samples) in classes.iter().zip(&per_class) {
        println!(
            "{:<7} {} {}",
            class_name(*class),
            fmt_seconds(median(samples).as_secs_f64()),
            fmt_seconds(samples[0].as_secs_f64())
        );
    }
    println!(
        "{:<7} {} {}",
        "total",
        fmt_seconds(median(&totals).as_secs_f64()),
        fmt_seconds(totals[0].as_secs_f64())
    );
    let med = median(&totals).as_secs_f64();
    if med > 0.0 {
        println!("throughput: {:.3} MMAC/s (median pass)", macs as f64 / med / 1e6);
    }
    println!("note: host measurement; not comparable to the 24 MHz FPGA implementation");
    Ok(())
}
