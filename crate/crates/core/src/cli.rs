//! Command-line front end: `detect`, `bench` and `profile` subcommands.
//!
//! Everything writes to a caller-supplied sink so the commands can be driven
//! from tests as well as from the `mmdew` binary.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{self, EvalReport, LabeledStream};
use crate::detector::{Bandwidth, ChangeEvent, Detector, DetectorConfig, WindowSizes};
use crate::ewstore::SamplingMode;
use crate::kernel::Observation;
use crate::sigtest::{Correction, TestConfig};

#[derive(Debug, Parser)]
#[command(name = "mmdew", version, about = "Online change detection with MMD on exponential windows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream observations and print one JSON line per detected change.
    Detect(DetectArgs),
    /// Score the detector on labeled or synthetic streams over seeded trials.
    Bench(BenchArgs),
    /// Measure per-insert time at geometric checkpoints.
    Profile(ProfileArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorrectionArg {
    Level,
    Splits,
    Stream,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowSizesArg {
    Effective,
    Logical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Tsv,
}

#[derive(Debug, Clone, Args)]
pub struct DetectorArgs {
    /// Test level.
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// Kernel bandwidth: `auto` (median heuristic on the warmup) or a positive number.
    #[arg(long, default_value = "auto")]
    pub gamma: String,
    /// Observations used for the median heuristic.
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Sampled)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Multiple-testing correction across the splits tested per observation.
    #[arg(long, value_enum, default_value_t = CorrectionArg::Level)]
    pub correction: CorrectionArg,
    /// Window sizes used by the threshold.
    #[arg(long, value_enum, default_value_t = WindowSizesArg::Effective)]
    pub window_sizes: WindowSizesArg,
}

impl DetectorArgs {
    pub fn config(&self) -> anyhow::Result<DetectorConfig> {
        let bandwidth = if self.gamma.eq_ignore_ascii_case("auto") {
            Bandwidth::Auto
        } else {
            let g: f64 = self
                .gamma
                .parse()
                .with_context(|| format!("--gamma expects 'auto' or a number, got '{}'", self.gamma))?;
            Bandwidth::Fixed(g)
        };
        let correction = match self.correction {
            CorrectionArg::Level => Correction::BonferroniLevel,
            CorrectionArg::Splits => Correction::BonferroniSplits,
            CorrectionArg::Stream => Correction::BonferroniStream,
            CorrectionArg::None => Correction::None,
        };
        let config = DetectorConfig {
            test: TestConfig::new(self.alpha, 1.0, correction)?,
            bandwidth,
            mode: match self.mode {
                ModeArg::Exact => SamplingMode::Exact,
                ModeArg::Sampled => SamplingMode::Sampled,
            },
            warmup_size: self.warmup,
            seed: self.seed,
            window_sizes: match self.window_sizes {
                WindowSizesArg::Effective => WindowSizes::Effective,
                WindowSizesArg::Logical => WindowSizes::Logical,
            },
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Input file; standard input when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Write the detector state here at end of stream.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Resume from a snapshot instead of starting fresh.
    #[arg(long)]
    pub restore: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorKind {
    Mmdew,
    /// Reports exactly the true change points.
    Perfect,
    /// Never reports a change.
    Never,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Labeled delimited file with a header row; synthetic Gaussian shift when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    /// Name of the label column (required with --input).
    #[arg(long)]
    pub label_col: Option<String>,
    /// Tolerance multipliers for the true-positive window; repeatable.
    #[arg(long, default_values_t = vec![1.0, 0.25])]
    pub beta: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, value_enum, default_value_t = DetectorKind::Mmdew)]
    pub detector_kind: DetectorKind,
    /// Synthetic: observations per segment.
    #[arg(long, default_value_t = 512)]
    pub segment_len: usize,
    /// Synthetic: number of segments.
    #[arg(long, default_value_t = 2)]
    pub segments: usize,
    /// Synthetic: mean shift per coordinate between consecutive segments.
    #[arg(long, default_value_t = 3.0)]
    pub shift: f64,
    /// Synthetic: dimension.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long, default_value_t = 1_000_000)]
    pub t_max: u64,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
}

pub fn run(cli: Cli, stdin: &mut dyn Read, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Detect(args) => run_detect(&args, stdin, out, err),
        Command::Bench(args) => run_bench(&args, out),
        Command::Profile(args) => run_profile(&args, out),
    }
}

#[derive(Serialize)]
struct EventLine {
    t: u64,
    offset: u64,
    mmd: f64,
    threshold: f64,
}

fn write_event(out: &mut dyn Write, e: &ChangeEvent) -> anyhow::Result<()> {
    let line = EventLine {
        t: e.detected_at,
        offset: e.boundary_offset,
        mmd: e.statistic,
        threshold: e.threshold,
    };
    serde_json::to_writer(&mut *out, &line)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Parses one row of comma- and/or whitespace-separated numbers.
/// `line_no` is 1-based and only used for diagnostics.
pub fn parse_row(line: &str, line_no: usize) -> anyhow::Result<Vec<f64>> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|tok| !tok.is_empty())
        .enumerate()
        .map(|(col, tok)| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| anyhow!("line {line_no}, column {}: cannot parse '{tok}' as a finite number", col + 1))
        })
        .collect()
}

enum DetectState {
    Warming { config: DetectorConfig, buffer: Vec<Observation> },
    Running(Box<Detector>),
}

pub fn run_detect(args: &DetectArgs, stdin: &mut dyn Read, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let mut state = if let Some(path) = &args.restore {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading snapshot {}", path.display()))?;
        DetectState::Running(Box::new(Detector::from_json(&text)?))
    } else {
        let config = args.detector.config()?;
        match config.bandwidth {
            Bandwidth::Fixed(_) => DetectState::Running(Box::new(Detector::new(config)?)),
            Bandwidth::Auto => DetectState::Warming {
                config,
                buffer: Vec::with_capacity(config.warmup_size),
            },
        }
    };
    let mut dim = match &state {
        DetectState::Running(det) => det.chain().dim(),
        DetectState::Warming { .. } => None,
    };

    let reader: Box<dyn BufRead + '_> = match &args.input {
        Some(path) => Box::new(BufReader::new(
            File::open(path).with_context(|| format!("opening {}", path.display()))?,
        )),
        None => Box::new(BufReader::new(stdin)),
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.with_context(|| format!("reading line {line_no}"))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let values = parse_row(trimmed, line_no)?;
        match dim {
            Some(d) if d != values.len() => {
                bail!("line {line_no}: expected {d} values, found {}", values.len())
            }
            None => dim = Some(values.len()),
            _ => {}
        }
        let x = Observation::new(values).with_context(|| format!("line {line_no}"))?;

        state = match state {
            DetectState::Running(mut det) => {
                if let Some(e) = det.observe(&x).with_context(|| format!("line {line_no}"))? {
                    write_event(out, &e)?;
                }
                DetectState::Running(det)
            }
            DetectState::Warming { config, mut buffer } => {
                buffer.push(x);
                if buffer.len() == config.warmup_size {
                    let (det, events) = Detector::warmup_then_start(config, &buffer)?;
                    for e in &events {
                        write_event(out, e)?;
                    }
                    DetectState::Running(Box::new(det))
                } else {
                    DetectState::Warming { config, buffer }
                }
            }
        };
    }

    let det = match state {
        DetectState::Running(det) => Some(*det),
        DetectState::Warming { config, buffer } if buffer.len() >= 2 => {
            writeln!(
                err,
                "warning: stream ended after {} of {} warmup observations; bandwidth taken from those",
                buffer.len(),
                config.warmup_size
            )?;
            let short = DetectorConfig {
                warmup_size: buffer.len(),
                ..config
            };
            let (det, events) = Detector::warmup_then_start(short, &buffer)?;
            for e in &events {
                write_event(out, e)?;
            }
            Some(det)
        }
        DetectState::Warming { .. } => None,
    };

    if let Some(path) = &args.snapshot {
        match det {
            Some(det) => std::fs::write(path, det.to_json()).with_context(|| format!("writing {}", path.display()))?,
            None => writeln!(err, "warning: no detector state to snapshot")?,
        }
    }
    Ok(())
}

/// Reads a delimited file with a header row. Returns the feature rows
/// (every column except `label_col`) and the label strings.
pub fn read_labeled(path: &std::path::Path, format: FormatArg, label_col: &str) -> anyhow::Result<(Vec<Vec<f64>>, Vec<String>)> {
    let delimiter = match format {
        FormatArg::Csv => b',',
        FormatArg::Tsv => b'\t',
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_col)
        .ok_or_else(|| anyhow!("label column '{label_col}' not found in header"))?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line_no = i + 2;
        let record = record.with_context(|| format!("line {line_no}"))?;
        let mut row = Vec::with_capacity(record.len().saturating_sub(1));
        for (col, field) in record.iter().enumerate() {
            if col == label_idx {
                continue;
            }
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| anyhow!("line {line_no}, column {}: cannot parse '{field}'", col + 1))?;
            row.push(v);
        }
        features.push(row);
        labels.push(record[label_idx].to_string());
    }
    Ok((features, labels))
}

#[derive(Serialize)]
struct TrialRecord<'a> {
    record: &'static str,
    trial: usize,
    seed: u64,
    stream: &'a str,
    beta: f64,
    detections: usize,
    report: &'a EvalReport,
}

#[derive(Serialize)]
struct AggregateRecord<'a> {
    record: &'static str,
    beta: f64,
    summary: &'a bench::Aggregate,
}

pub fn run_bench(args: &BenchArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = args.detector.config()?;
    if !args.beta.iter().all(|b| *b > 0.0) {
        bail!("--beta values must be positive");
    }
    let labeled = match &args.input {
        Some(path) => {
            let col = args
                .label_col
                .as_deref()
                .ok_or_else(|| anyhow!("--label-col is required with --input"))?;
            Some(read_labeled(path, args.format, col)?)
        }
        None => None,
    };
    let name = args
        .input
        .as_ref()
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let make_stream = |seed: u64| -> crate::Result<LabeledStream> {
        match &labeled {
            Some((features, labels)) => bench::make_class_ordered(&name, features, labels, seed),
            None => {
                let segments: Vec<(Vec<f64>, usize)> = (0..args.segments.max(1))
                    .map(|i| (vec![args.shift * i as f64; args.dim], args.segment_len))
                    .collect();
                bench::synth_gaussian_shift(&segments, seed)
            }
        }
    };

    let trials = match args.detector_kind {
        DetectorKind::Mmdew => bench::run_trials(config, args.trials, config.seed, make_stream)?
            .into_iter()
            .map(|t| (t.seed, t.stream, t.events.iter().map(|e| e.detected_at).collect::<Vec<_>>()))
            .collect::<Vec<_>>(),
        kind => (0..args.trials as u64)
            .map(|i| {
                let seed = config.seed + i;
                let stream = make_stream(seed)?;
                let dets = match kind {
                    DetectorKind::Perfect => stream.true_changes.clone(),
                    _ => Vec::new(),
                };
                Ok((seed, stream, dets))
            })
            .collect::<crate::Result<Vec<_>>>()?,
    };

    for &beta in &args.beta {
        let mut reports = Vec::with_capacity(trials.len());
        for (i, (seed, stream, dets)) in trials.iter().enumerate() {
            let delta = bench::delta_from_beta(stream.len() as u64, stream.true_changes.len(), beta);
            let report = bench::score(dets, &stream.true_changes, delta)?;
            let rec = TrialRecord {
                record: "trial",
                trial: i,
                seed: *seed,
                stream: &stream.name,
                beta,
                detections: dets.len(),
                report: &report,
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
            reports.push(report);
        }
        let summary = bench::aggregate(&reports);
        serde_json::to_writer(
            &mut *out,
            &AggregateRecord {
                record: "aggregate",
                beta,
                summary: &summary,
            },
        )?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn run_profile(args: &ProfileArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = args.detector.config()?;
    let profile = bench::runtime_profile(config, args.t_max, args.dim, args.repeats)?;
    for (t, secs) in &profile.points {
        writeln!(out, "{}", serde_json::json!({"record": "point", "t": t, "seconds_per_insert": secs}))?;
    }
    writeln!(
        out,
        "{}",
        serde_json::json!({
            "record": "fit",
            "log2_squared": profile.log2_squared_fit,
            "linear": profile.linear_fit,
        })
    )?;
    Ok(())
}
