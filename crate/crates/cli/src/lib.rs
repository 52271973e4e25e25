//! Subcommands of the `evtrack` binary.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use evtrack_core::cf::CfParams;
use evtrack_core::eval::{
    bench, center_location_error, trajectory_boxes, write_bench, BenchConfig,
};
use evtrack_core::event::{
    read_events, read_ground_truth, write_events, write_ground_truth, GroundTruthEntry, GT_HEADER,
};
use evtrack_core::features::{load_network, write_network, NetworkSpec, RAW_TAP};
use evtrack_core::segment::{segment, SegmentationPolicy};
use evtrack_core::synth::{generate_scene, Preset};
use evtrack_core::tracker::{read_trajectory, track, write_trajectory, TrackParams, TRAJ_HEADER};
use evtrack_core::PolarityMode;

#[derive(Debug, Parser)]
#[command(
    name = "evtrack",
    version,
    about = "Track a target through an event-camera stream"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic event stream and its ground truth.
    Gen(GenArgs),
    /// Track the target given by the first ground-truth box.
    Track(TrackArgs),
    /// Compare a trajectory against ground truth.
    Eval(EvalArgs),
    /// Time the tracking loop for one or more tap sets.
    Bench(BenchArgs),
    /// Write a randomly initialised feature network as a weight file.
    InitWeights(InitWeightsArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// moving-disk, noise, background, occlusion, decoy, deformation, scale or pose.
    #[arg(long, default_value = "moving-disk", value_parser = parse_preset)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Uniform background events per second.
    #[arg(long, value_parser = parse_rate, allow_negative_numbers = true)]
    pub noise_rate: Option<f64>,
    /// Events per boundary pixel per second.
    #[arg(long, value_parser = parse_rate, allow_negative_numbers = true)]
    pub object_rate: Option<f64>,
    #[arg(long)]
    pub duration_us: Option<u64>,
    /// Segmentation the ground truth is sampled for. Defaults to the preset's.
    #[arg(long)]
    pub policy: Option<SegmentationPolicy>,
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    /// Weight file for the convolutional taps.
    #[arg(long, conflicts_with = "random_weights")]
    pub weights: Option<PathBuf>,
    /// Use a randomly initialised network built from this seed.
    #[arg(long)]
    pub random_weights: Option<u64>,
    /// Channel divisor for the random network (1 = full width).
    #[arg(long, default_value_t = 16)]
    pub width_divisor: usize,
}

#[derive(Debug, Args)]
pub struct TuningArgs {
    /// Per-tap fusion weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub fusion_weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma_factor: f64,
    #[arg(long, default_value_t = 2.0)]
    pub padding: f64,
    /// both, positive or signed.
    #[arg(long, default_value = "both")]
    pub polarity: PolarityMode,
    #[arg(long)]
    pub no_window: bool,
    /// Train one denominator per channel instead of a shared one.
    #[arg(long)]
    pub per_channel: bool,
    /// Skip updates when the window holds less than this fraction of the usual
    /// event count (0 disables).
    #[arg(long, default_value_t = 0.25)]
    pub min_evidence: f64,
}

impl TuningArgs {
    fn params(&self, taps: &[String]) -> TrackParams {
        TrackParams {
            taps: taps.to_vec(),
            fusion_weights: self.fusion_weights.clone(),
            cf: CfParams {
                lambda: self.lambda,
                window: !self.no_window,
                shared_denominator: !self.per_channel,
            },
            eta: self.eta,
            sigma_factor: self.sigma_factor,
            padding: self.padding,
            polarity: self.polarity,
            min_evidence: self.min_evidence,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// count:N, time:DT_US or into_k:K. Defaults to into_k with one segment
    /// per ground-truth line.
    #[arg(long)]
    pub policy: Option<SegmentationPolicy>,
    /// Feature taps, comma separated; `raw` needs no network.
    #[arg(long, value_delimiter = ',', default_value = "conv1_1,conv2_2,conv3_3")]
    pub taps: Vec<String>,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trajectory or ground-truth formatted file.
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Per-segment CSV; the summary goes next to it with a `.summary` suffix
    /// and the precision curve with `.precision.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub policy: Option<SegmentationPolicy>,
    /// One tap set per occurrence, comma separated within a set.
    #[arg(long, required = true)]
    pub taps: Vec<String>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub reps: u64,
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitWeightsArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub width_divisor: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::from_name(s).ok_or_else(|| {
        let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
        format!("unknown preset {s:?}, expected one of {}", names.join(", "))
    })
}

fn parse_rate(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(r) if r >= 0.0 && r.is_finite() => Ok(r),
        Ok(r) => Err(format!("rate must be a finite number >= 0, got {r}")),
        Err(e) => Err(e.to_string()),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| {
        format!("cannot open {}", path.display())
    })?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn load_gt(path: &Path) -> Result<Vec<GroundTruthEntry>> {
    let gt = read_ground_truth(open(path)?, None)
        .with_context(|| format!("reading {}", path.display()))?;
    ensure!(
        !gt.is_empty(),
        "{} holds no ground-truth boxes",
        path.display()
    );
    Ok(gt)
}

fn load_inputs(
    events: &Path,
    gt: &Path,
) -> Result<(evtrack_core::EventStream, Vec<GroundTruthEntry>)> {
    let stream =
        read_events(open(events)?).with_context(|| format!("reading {}", events.display()))?;
    let gt = load_gt(gt)?;
    for g in &gt {
        g.bbox
            .validate(stream.geometry())
            .map_err(|reason| anyhow::anyhow!("ground truth segment {}: {reason}", g.segment))?;
    }
    Ok((stream, gt))
}

fn load_net(args: &NetworkArgs, taps: &[String]) -> Result<Option<NetworkSpec>> {
    let needs_net = taps.iter().any(|t| t != RAW_TAP);
    match (&args.weights, args.random_weights) {
        (Some(path), _) => {
            let net = load_network(open(path)?)
                .with_context(|| format!("loading --weights {}", path.display()))?;
            Ok(Some(net))
        }
        (None, Some(seed)) => {
            ensure!(
                args.width_divisor >= 1,
                "--width-divisor must be at least 1"
            );
            Ok(Some(NetworkSpec::random_vgg_prefix(
                seed,
                args.width_divisor,
            )))
        }
        (None, None) if needs_net => {
            let conv: Vec<&str> = taps
                .iter()
                .map(String::as_str)
                .filter(|t| *t != RAW_TAP)
                .collect();
            bail!(
                "taps {} need a weight file: pass --weights FILE (or --random-weights SEED), or use --taps raw",
                conv.join(",")
            )
        }
        (None, None) => Ok(None),
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut spec = args.preset.scene(args.seed);
    if let Some(r) = args.noise_rate {
        spec.noise_rate = r;
    }
    if let Some(r) = args.object_rate {
        spec.object_rate = r;
    }
    if let Some(d) = args.duration_us {
        spec.duration_us = d;
    }
    let (stream, template) = generate_scene(&spec)?;
    let policy = args.policy.unwrap_or_else(|| args.preset.default_policy());
    let segments = segment(&stream, policy)?;
    let gt = template.entries(&segments);
    let mut sink = create(&args.events)?;
    write_events(&stream, &mut sink)?;
    let mut sink = create(&args.gt)?;
    write_ground_truth(&gt, &mut sink)?;
    println!(
        "events={} segments={} policy={policy}",
        stream.len(),
        gt.len()
    );
    Ok(())
}

pub fn cmd_track(args: &TrackArgs) -> Result<()> {
    let (stream, gt) = load_inputs(&args.events, &args.gt)?;
    let network = load_net(&args.network, &args.taps)?;
    let policy = args.policy.unwrap_or(SegmentationPolicy::IntoK(gt.len()));
    let params = args.tuning.params(&args.taps);
    let started = Instant::now();
    let traj = track(&stream, policy, &gt[0], &params, network.as_ref())?;
    let seconds = started.elapsed().as_secs_f64();
    let mut sink = create(&args.out)?;
    write_trajectory(&traj, &mut sink)?;
    println!("segments={}", traj.len());
    println!(
        "segments_per_sec={:.3}",
        traj.len() as f64 / seconds.max(f64::MIN_POSITIVE)
    );
    Ok(())
}

/// Reads either a trajectory or a ground-truth file as a list of boxes.
fn load_boxes(path: &Path) -> Result<Vec<GroundTruthEntry>> {
    let mut reader = open(path)?;
    let header = reader.fill_buf()?;
    if header.starts_with(TRAJ_HEADER.as_bytes()) {
        let traj =
            read_trajectory(reader).with_context(|| format!("reading {}", path.display()))?;
        Ok(trajectory_boxes(&traj))
    } else if header.starts_with(GT_HEADER.as_bytes()) {
        Ok(read_ground_truth(reader, None)
            .with_context(|| format!("reading {}", path.display()))?)
    } else {
        bail!(
            "{}: neither a trajectory nor a ground-truth file",
            path.display()
        )
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let predicted = load_boxes(&args.traj)?;
    let truth = load_gt(&args.gt)?;
    let report = center_location_error(&predicted, &truth)?;
    if let Some(out) = &args.out {
        report.write_per_segment(create(out)?)?;
        let mut summary = out.clone().into_os_string();
        summary.push(".summary");
        report.write_summary(create(Path::new(&summary))?)?;
        let mut curve = out.clone().into_os_string();
        curve.push(".precision.csv");
        report.write_precision_curve(create(Path::new(&curve))?)?;
    }
    report.write_summary(io::stdout().lock())?;
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let (stream, gt) = load_inputs(&args.events, &args.gt)?;
    let sets: Vec<Vec<String>> = args
        .taps
        .iter()
        .map(|s| {
            s.split(',')
                .map(|t| t.trim().to_string())
                .filter(|t| !t.is_empty())
                .collect()
        })
        .collect();
    let all: Vec<String> = sets.iter().flatten().cloned().collect();
    let network = load_net(&args.network, &all)?;
    let configs: Vec<BenchConfig> = args
        .taps
        .iter()
        .zip(&sets)
        .map(|(label, taps)| BenchConfig {
            label: label.clone(),
            params: args.tuning.params(taps),
        })
        .collect();
    let policy = args.policy.unwrap_or(SegmentationPolicy::IntoK(gt.len()));
    let results = bench(
        &stream,
        policy,
        &gt[0],
        &configs,
        network.as_ref(),
        args.reps as usize,
    )?;
    if let Some(out) = &args.out {
        write_bench(&results, create(out)?)?;
    }
    write_bench(&results, io::stdout().lock())?;
    Ok(())
}

pub fn cmd_init_weights(args: &InitWeightsArgs) -> Result<()> {
    ensure!(
        args.width_divisor >= 1,
        "--width-divisor must be at least 1"
    );
    let net = NetworkSpec::random_vgg_prefix(args.seed, args.width_divisor);
    let mut sink = create(&args.out)?;
    write_network(&net, &mut sink)?;
    sink.flush()?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Track(a) => cmd_track(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::InitWeights(a) => cmd_init_weights(a),
    }
}
