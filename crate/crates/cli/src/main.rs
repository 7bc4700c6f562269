//! `evlec` command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evlec::codec::{evaluate_decoded, DecodedMetrics};
use evlec::metrics::{compression_ratio, psnr_from_mse};
use evlec::pipeline::{encode_sequence, threads_from_env, Dataset, Method};
use evlec::sampling::SampleLogEntry;
use evlec::sweep::{run_sweep, write_outputs, SweepAxis, SweepMethod, SweepSpec};
use evlec::synth::{generate, SynthConfig, SynthDataset};
use evlec::{decode, CompressedVolume, EncodeReport, EncoderConfig, Error, IntensityFrame, Polarity, TQuantMode};
use serde::{Deserialize, Serialize};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "evlec", version, about = "Lossy compression for event-camera streams")]
struct Cli {
    /// Worker threads (default: EVLEC_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode every volume between consecutive frames.
    Encode(EncodeArgs),
    /// Decode one .evlc stream to `T_quant x y p count` lines.
    Decode(DecodeArgs),
    /// Score decoded streams against the original events.
    Metrics(MetricsArgs),
    /// Sweep one parameter over sequences and methods.
    Sweep(SweepArgs),
    /// Write a deterministic synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args, Default)]
struct CodecFlags {
    /// Flat TOML file with encoder settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Temporal bins per volume.
    #[arg(long = "tbin")]
    t_bin: Option<u32>,
    /// Poisson disk radius of 4x4 blocks.
    #[arg(long)]
    r4: Option<f64>,
    /// Quad-tree bit budget per frame.
    #[arg(long = "rmax")]
    r_max: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_depth: Option<u8>,
    #[arg(long)]
    max_iters: Option<u32>,
    /// Discard events in skip blocks.
    #[arg(long)]
    drop_skip_events: bool,
    /// Representative time of a bin: start or center.
    #[arg(long)]
    t_quant: Option<TQuantMode>,
    #[arg(long)]
    bits_per_event: Option<u32>,
    #[arg(long)]
    psnr_cap: Option<f64>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    events: PathBuf,
    /// `timestamp filename` list of PGM frames.
    #[arg(long)]
    frames: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// pds-lec, temporal-only, random or random:FRACTION.
    #[arg(long, default_value = "pds-lec")]
    method: String,
    /// Seed of the random baseline.
    #[arg(long)]
    seed: Option<u64>,
    /// Write per-block thinning logs as CSV.
    #[arg(long)]
    log_sampling: bool,
    #[command(flatten)]
    codec: CodecFlags,
}

#[derive(Args)]
struct DecodeArgs {
    input: PathBuf,
    /// Event list destination (default: stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Write each histogram subframe as a PGM into this directory.
    #[arg(long)]
    dump_subframes: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    frames: PathBuf,
    /// Directory holding the `volume_NNNN.evlc` files of an encode run.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = evlec::metrics::DEFAULT_BITS_PER_EVENT)]
    bits_per_event: u32,
    #[arg(long, default_value_t = evlec::metrics::DEFAULT_PSNR_CAP)]
    psnr_cap: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// tbin, r4, rmax or bin-ms.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Comma-separated methods: pds-lec[:R4], temporal-only, random[:FRACTION].
    #[arg(long, value_delimiter = ',', default_value = "pds-lec")]
    methods: Vec<SweepMethod>,
    /// Directory with events.txt and frames.txt; repeatable.
    #[arg(long)]
    sequence: Vec<PathBuf>,
    /// Include the default synthetic scene.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    codec: CodecFlags,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// Seconds between frames.
    #[arg(long)]
    interval: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    threshold_spread: Option<f64>,
    /// Pixels per frame; 0 gives a static scene.
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long)]
    substeps: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Keys accepted in a config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    t_bin: Option<u32>,
    r4: Option<f64>,
    r_max: Option<f64>,
    tolerance: Option<f64>,
    max_depth: Option<u8>,
    max_iters: Option<u32>,
    drop_skip_events: Option<bool>,
    t_quant: Option<TQuantMode>,
    bits_per_event: Option<u32>,
    psnr_cap: Option<f64>,
    bits_structure: Option<u32>,
    bits_mode: Option<u32>,
    bits_value: Option<u32>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn resolve_config(flags: &CodecFlags) -> CliResult<EncoderConfig> {
    let mut cfg = EncoderConfig::default();
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        let f: FileConfig = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = f.$field { cfg.$field = v; } )* };
        }
        take!(t_bin, r4, r_max, tolerance, max_iters, drop_skip_events, t_quant, bits_per_event, psnr_cap);
        if f.max_depth.is_some() {
            cfg.max_depth = f.max_depth;
        }
        if let Some(v) = f.bits_structure {
            cfg.rate_model.bits_structure = v;
        }
        if let Some(v) = f.bits_mode {
            cfg.rate_model.bits_mode = v;
        }
        if let Some(v) = f.bits_value {
            cfg.rate_model.bits_value = v;
        }
    }
    macro_rules! flag {
        ($($field:ident),*) => { $( if let Some(v) = flags.$field { cfg.$field = v; } )* };
    }
    flag!(t_bin, r4, r_max, tolerance, max_iters, t_quant, bits_per_event, psnr_cap);
    if flags.max_depth.is_some() {
        cfg.max_depth = flags.max_depth;
    }
    if flags.drop_skip_events {
        cfg.drop_skip_events = true;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn parse_method(s: &str, seed: Option<u64>) -> CliResult<Method> {
    let m: SweepMethod = s.parse().map_err(|e: Error| usage(e.to_string()))?;
    if m.r4.is_some() {
        return Err(usage("set the radius with --r4"));
    }
    Ok(match m.method {
        Method::Random { keep_fraction, .. } => Method::Random {
            keep_fraction,
            seed: seed.unwrap_or(0),
        },
        other => other,
    })
}

fn threads(cli: Option<usize>) -> CliResult<Option<usize>> {
    match cli {
        Some(0) => Err(usage("--threads must be positive")),
        Some(n) => Ok(Some(n)),
        None => Ok(threads_from_env()),
    }
}

fn volume_name(i: usize) -> String {
    format!("volume_{i:04}.evlc")
}

#[derive(Serialize)]
struct VolumeEntry<'a> {
    file: String,
    report: &'a EncodeReport,
}

#[derive(Serialize)]
struct EncodeSummary<'a> {
    method: &'a Method,
    config: &'a EncoderConfig,
    events_outside_frames: usize,
    volumes: Vec<VolumeEntry<'a>>,
    sequence: &'a evlec::pipeline::SequenceSummary,
}

fn cmd_encode(a: &EncodeArgs, threads: Option<usize>) -> CliResult<()> {
    let cfg = resolve_config(&a.codec)?;
    let method = parse_method(&a.method, a.seed)?;
    let ds = Dataset::load(&a.events, &a.frames)?;
    let result = encode_sequence(&ds, method, &cfg, threads)?;
    fs::create_dir_all(&a.out)?;
    let mut entries = Vec::with_capacity(result.volumes.len());
    for (i, v) in result.volumes.iter().enumerate() {
        v.stream.write(a.out.join(volume_name(i)))?;
        if a.log_sampling {
            let mut csv = String::from(SampleLogEntry::CSV_HEADER);
            csv.push('\n');
            for e in &v.sampling_log {
                csv.push_str(&e.csv_row());
                csv.push('\n');
            }
            fs::write(a.out.join(format!("sampling_{i:04}.csv")), csv)?;
        }
        entries.push(VolumeEntry {
            file: volume_name(i),
            report: &v.report,
        });
    }
    let summary = EncodeSummary {
        method: &method,
        config: &cfg,
        events_outside_frames: ds.dropped,
        volumes: entries,
        sequence: &result.summary,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(a.out.join("summary.json"), json + "\n")?;
    let s = &result.summary;
    eprintln!(
        "{} volumes, {} events -> {} bits: CR {:.3}, PSNR {:.2}, SSIM {:.4}, T_error {:.6}",
        s.volumes, s.events_in, s.gamma_bits, s.cr, s.psnr, s.ssim, s.t_error
    );
    Ok(())
}

fn polarity_digit(p: Polarity) -> u8 {
    match p {
        Polarity::Positive => 1,
        Polarity::Negative => 0,
    }
}

fn cmd_decode(a: &DecodeArgs) -> CliResult<()> {
    let stream = CompressedVolume::read(&a.input)?;
    let dec = decode(&stream).map_err(Error::from)?;
    let mut text = String::new();
    for e in dec.events() {
        writeln!(text, "{:.9} {} {} {} {}", e.t_quant, e.x, e.y, polarity_digit(e.p), e.count).unwrap();
    }
    if let Some(dir) = &a.dump_subframes {
        fs::create_dir_all(dir)?;
        for sf in &dec.subframes {
            let px = sf.counts.iter().map(|&c| c.min(255) as u8).collect();
            let img = IntensityFrame::new(sf.width, sf.height, px)?;
            let pol = if sf.polarity == Polarity::Positive { "pos" } else { "neg" };
            img.write_pgm(dir.join(format!("bin_{:04}_{pol}.pgm", sf.bin)))?;
        }
    }
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricsReport {
    volumes: Vec<DecodedMetrics>,
    events_in: u64,
    events_decoded: u64,
    gamma_bits: u64,
    cr: f64,
    t_error: f64,
    psnr: f64,
    ssim: f64,
}

fn cmd_metrics(a: &MetricsArgs) -> CliResult<()> {
    let ds = Dataset::load(&a.events, &a.frames)?;
    let mut per = Vec::with_capacity(ds.volumes.len());
    for (i, vol) in ds.volumes.iter().enumerate() {
        let path = a.input.join(volume_name(i));
        let stream = CompressedVolume::read(&path)?;
        let dec = decode(&stream).map_err(Error::from)?;
        per.push(evaluate_decoded(vol, &dec, stream.gamma_bits(), a.bits_per_event, a.psnr_cap)?);
    }
    if per.is_empty() {
        return Err(Failure::Core(Error::InvalidArgument("dataset has no volumes".into())));
    }
    let n = per.len() as f64;
    let events_in = per.iter().map(|m| m.events_in).sum();
    let gamma_bits = per.iter().map(|m| m.gamma_bits).sum();
    let report = MetricsReport {
        events_in,
        events_decoded: per.iter().map(|m| m.events_decoded).sum(),
        gamma_bits,
        cr: compression_ratio(events_in, gamma_bits, a.bits_per_event)?,
        t_error: per.iter().map(|m| m.t_error).sum::<f64>() / n,
        psnr: psnr_from_mse(per.iter().map(|m| m.mse).sum::<f64>() / n, a.psnr_cap),
        ssim: per.iter().map(|m| m.ssim).sum::<f64>() / n,
        volumes: per,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &a.out {
        Some(p) => fs::write(p, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

fn sequence_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn cmd_sweep(a: &SweepArgs, threads: Option<usize>) -> CliResult<()> {
    let base = resolve_config(&a.codec)?;
    if a.sequence.is_empty() && !a.synthetic {
        return Err(usage("give at least one --sequence or --synthetic"));
    }
    let spec = SweepSpec {
        axis: a.axis,
        values: a.values.clone(),
        base,
        methods: a.methods.clone(),
        seed: a.seed,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let mut sequences = Vec::new();
    if a.synthetic {
        sequences.push(("synthetic".to_string(), Dataset::from_synth(&generate(&SynthConfig::default())?)?));
    }
    for dir in &a.sequence {
        sequences.push((sequence_name(dir), Dataset::load(dir.join("events.txt"), dir.join("frames.txt"))?));
    }
    let rows = run_sweep(&sequences, &spec, threads)?;
    write_outputs(&rows, &a.out)?;
    for r in rows.iter().filter(|r| r.summary.is_none()) {
        eprintln!("{} {} {}={}: {}", r.sequence, r.method, r.axis, r.value, r.status);
    }
    eprintln!("{} rows written to {}", rows.len(), a.out.join("sweep.csv").display());
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let mut cfg = SynthConfig::default();
    macro_rules! set {
        ($($arg:ident => $field:ident),*) => { $( if let Some(v) = a.$arg { cfg.$field = v; } )* };
    }
    set!(width => width, height => height, frames => frames, interval => frame_interval, threshold => threshold,
         threshold_spread => threshold_spread, speed => speed, substeps => substeps, seed => seed);
    let d: SynthDataset = generate(&cfg).map_err(|e| usage(e.to_string()))?;
    d.write(&a.out)?;
    println!("{} events, {} frames, checksum {:08x}", d.events.len(), d.frames.len(), d.checksum());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = threads(cli.threads)?;
    match &cli.cmd {
        Cmd::Encode(a) => cmd_encode(a, threads),
        Cmd::Decode(a) => cmd_decode(a),
        Cmd::Metrics(a) => cmd_metrics(a),
        Cmd::Sweep(a) => cmd_sweep(a, threads),
        Cmd::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Infeasible { .. } => ExitCode::from(EXIT_INFEASIBLE),
                _ => ExitCode::from(EXIT_DATA),
            }
        }
    }
}
