//! Evaluation harness: stream preparation, detection metrics, Monte-Carlo
//! studies and per-insert runtime profiling.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{ChangeEvent, Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::kernel::Observation;

/// A stream with known change points (1-based indices of the first
/// observation of each new regime).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub name: String,
    pub observations: Vec<Observation>,
    pub true_changes: Vec<u64>,
}

impl LabeledStream {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    /// False when there were no detections; precision is then reported as 0.
    pub precision_defined: bool,
    pub recall: f64,
    pub f1: f64,
    /// Mean delay from each change to the next detection, over covered changes.
    pub mtd: Option<f64>,
    /// Number of changes followed by at least one detection.
    pub mtd_coverage: usize,
    /// `100 * detections / true changes`; `None` without true changes.
    pub pcd: Option<f64>,
    pub delta_t: u64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Scores detection times against true change points.
///
/// A detection at `d` is a true positive when the most recent change `c <= d`
/// satisfies `d - c <= delta_t` and has not been matched yet.
pub fn score(detections: &[u64], true_changes: &[u64], delta_t: u64) -> Result<EvalReport> {
    if delta_t < 1 {
        return Err(Error::InvalidArgument("delta_t must be at least 1".into()));
    }
    if detections.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("detections must be sorted".into()));
    }
    if true_changes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("true changes must be strictly increasing".into()));
    }

    let mut matched = vec![false; true_changes.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    for &d in detections {
        let latest = true_changes.partition_point(|&c| c <= d);
        match latest.checked_sub(1) {
            Some(i) if d - true_changes[i] <= delta_t && !matched[i] => {
                matched[i] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    let fn_ = true_changes.len() - tp;

    let precision_defined = !detections.is_empty();
    let precision = if precision_defined { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if true_changes.is_empty() { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };

    let delays: Vec<f64> = true_changes
        .iter()
        .filter_map(|&c| {
            let next = detections.partition_point(|&d| d < c);
            detections.get(next).map(|&d| (d - c) as f64)
        })
        .collect();
    let mtd = (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64);
    let pcd = (!true_changes.is_empty()).then(|| 100.0 * detections.len() as f64 / true_changes.len() as f64);

    Ok(EvalReport {
        precision,
        precision_defined,
        recall,
        f1,
        mtd,
        mtd_coverage: delays.len(),
        pcd,
        delta_t,
        tp,
        fp,
        fn_,
    })
}

pub fn score_events(events: &[ChangeEvent], stream: &LabeledStream, delta_t: u64) -> Result<EvalReport> {
    let times: Vec<u64> = events.iter().map(|e| e.detected_at).collect();
    score(&times, &stream.true_changes, delta_t)
}

/// `round(beta * N / (n + 1))`, at least 1.
pub fn delta_from_beta(stream_length: u64, num_changes: usize, beta: f64) -> u64 {
    let raw = beta * stream_length as f64 / (num_changes as f64 + 1.0);
    (raw.round() as u64).max(1)
}

/// Groups rows by class, permutes the class order with `permutation_seed`
/// and min-max scales every feature over the whole set. Constant features
/// scale to 0. Rows keep their relative order within a class.
pub fn make_class_ordered<L: Ord + Clone>(
    name: &str,
    features: &[Vec<f64>],
    labels: &[L],
    permutation_seed: u64,
) -> Result<LabeledStream> {
    if features.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let Some(first) = features.first() else {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    };
    let dim = first.len();
    if let Some(bad) = features.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }

    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for row in features {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: j });
            }
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }

    let mut classes: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        classes.entry(l.clone()).or_default().push(i);
    }
    let mut order: Vec<Vec<usize>> = classes.into_values().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(permutation_seed));

    let mut observations = Vec::with_capacity(features.len());
    let mut true_changes = Vec::new();
    for (ci, rows) in order.iter().enumerate() {
        if ci > 0 {
            true_changes.push(observations.len() as u64 + 1);
        }
        for &r in rows {
            let scaled = features[r]
                .iter()
                .enumerate()
                .map(|(j, &v)| if hi[j] > lo[j] { (v - lo[j]) / (hi[j] - lo[j]) } else { 0.0 })
                .collect();
            observations.push(Observation::new(scaled)?);
        }
    }
    Ok(LabeledStream {
        name: name.to_string(),
        observations,
        true_changes,
    })
}

/// Concatenated unit-covariance Gaussian segments `(mean, count)`.
pub fn synth_gaussian_shift(segments: &[(Vec<f64>, usize)], seed: u64) -> Result<LabeledStream> {
    let Some((first, _)) = segments.first() else {
        return Err(Error::InvalidArgument("at least one segment is required".into()));
    };
    let dim = first.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observations = Vec::new();
    let mut true_changes = Vec::new();
    for (i, (mean, count)) in segments.iter().enumerate() {
        if mean.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: mean.len(),
            });
        }
        if i > 0 {
            true_changes.push(observations.len() as u64 + 1);
        }
        for _ in 0..*count {
            let v = mean
                .iter()
                .map(|mu| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mu + z
                })
                .collect();
            observations.push(Observation::new(v)?);
        }
    }
    Ok(LabeledStream {
        name: format!("gaussian_shift_{}seg_d{dim}", segments.len()),
        observations,
        true_changes,
    })
}

/// Runs a fresh detector over the whole stream. With automatic bandwidth the
/// first `warmup_size` observations fix the kernel and are then replayed.
pub fn run_detector(config: DetectorConfig, observations: &[Observation]) -> Result<Vec<ChangeEvent>> {
    let warm = match config.bandwidth {
        crate::detector::Bandwidth::Auto => config.warmup_size.min(observations.len()),
        crate::detector::Bandwidth::Fixed(_) => 0,
    };
    let (mut det, mut events) = Detector::warmup_then_start(config, &observations[..warm])?;
    events.extend(det.observe_all(&observations[warm..])?);
    Ok(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    /// Mean and sample standard deviation; `std` is 0 for fewer than two values.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let count = v.len();
        if count == 0 {
            return Self {
                mean: 0.0,
                std: 0.0,
                count,
            };
        }
        let mean = v.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub mtd: MeanStd,
    pub pcd: MeanStd,
}

pub fn aggregate(reports: &[EvalReport]) -> Aggregate {
    Aggregate {
        trials: reports.len(),
        precision: MeanStd::of(reports.iter().map(|r| r.precision)),
        recall: MeanStd::of(reports.iter().map(|r| r.recall)),
        f1: MeanStd::of(reports.iter().map(|r| r.f1)),
        mtd: MeanStd::of(reports.iter().filter_map(|r| r.mtd)),
        pcd: MeanStd::of(reports.iter().filter_map(|r| r.pcd)),
    }
}

/// Outcome of one seeded trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub seed: u64,
    pub stream: LabeledStream,
    pub events: Vec<ChangeEvent>,
}

/// Runs `trials` seeded trials in parallel. Trial `i` uses seed `base_seed + i`
/// for both the stream generator and the detector. Results are in seed order.
pub fn run_trials<F>(config: DetectorConfig, trials: usize, base_seed: u64, make_stream: F) -> Result<Vec<Trial>>
where
    F: Fn(u64) -> Result<LabeledStream> + Sync,
{
    (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed + i;
            let stream = make_stream(seed)?;
            let events = run_detector(DetectorConfig { seed, ..config }, &stream.observations)?;
            Ok(Trial { seed, stream, events })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStudy {
    pub trials: usize,
    pub trials_with_detection: usize,
    pub fraction: f64,
    /// `alpha + 3 * sqrt(alpha (1 - alpha) / trials)`.
    pub upper_limit: f64,
}

/// Fraction of i.i.d. standard-normal streams on which the detector fires at all.
pub fn level_study(config: DetectorConfig, trials: usize, length: usize, dim: usize, base_seed: u64) -> Result<LevelStudy> {
    let results = run_trials(config, trials, base_seed, |seed| {
        synth_gaussian_shift(&[(vec![0.0; dim], length)], seed)
    })?;
    let with = results.iter().filter(|t| !t.events.is_empty()).count();
    let alpha = config.test.alpha();
    Ok(LevelStudy {
        trials,
        trials_with_detection: with,
        fraction: with as f64 / trials as f64,
        upper_limit: alpha + 3.0 * (alpha * (1.0 - alpha) / trials as f64).sqrt(),
    })
}

/// Least-squares line `y = slope * x + intercept` with its mean squared error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub mse: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let mse = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / n;
    LinearFit { slope, intercept, mse }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeProfile {
    /// `(t, seconds per insert)` at each checkpoint.
    pub points: Vec<(u64, f64)>,
    /// Fit of `a * log2(t)^2 + b`.
    pub log2_squared_fit: LinearFit,
    /// Fit of `a * t + b`.
    pub linear_fit: LinearFit,
}

impl RuntimeProfile {
    pub fn time_at(&self, t: u64) -> Option<f64> {
        self.points.iter().find(|p| p.0 == t).map(|p| p.1)
    }
}

/// Checkpoints `1, 2, 5 x 10^k` from `10^3` up to `t_max`, plus `t_max`.
pub fn profile_checkpoints(t_max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut decade = 1000u64;
    'outer: loop {
        for f in [1, 2, 5] {
            let t = decade * f;
            if t > t_max {
                break 'outer;
            }
            out.push(t);
        }
        decade *= 10;
    }
    if out.last() != Some(&t_max) {
        out.push(t_max);
    }
    out
}

/// Measures the per-insert wall time at geometric checkpoints on an i.i.d.
/// standard-normal stream of dimension `dim`.
///
/// At each checkpoint the detector is cloned and a window of
/// `min(1024, t / 4)` further inserts is timed `repeats` times; the fastest
/// repetition is kept.
pub fn runtime_profile(config: DetectorConfig, t_max: u64, dim: usize, repeats: usize) -> Result<RuntimeProfile> {
    if t_max < 1000 {
        return Err(Error::InvalidArgument(format!("t_max must be at least 1000, got {t_max}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = move || -> Observation {
        let v = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Observation::new(v).expect("normal draws are finite")
    };

    let warm: Vec<Observation> = match config.bandwidth {
        crate::detector::Bandwidth::Auto => (0..config.warmup_size).map(|_| draw()).collect(),
        crate::detector::Bandwidth::Fixed(_) => Vec::new(),
    };
    let (mut det, _) = Detector::warmup_then_start(config, &warm)?;
    let mut t = warm.len() as u64;

    let mut points = Vec::new();
    for checkpoint in profile_checkpoints(t_max) {
        while t < checkpoint {
            det.observe(&draw())?;
            t += 1;
        }
        let window = (checkpoint / 4).min(1024) as usize;
        let batch: Vec<Observation> = (0..window).map(|_| draw()).collect();
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let mut probe = det.clone();
            let start = Instant::now();
            for x in &batch {
                probe.observe(x)?;
            }
            best = best.min(start.elapsed().as_secs_f64());
        }
        points.push((checkpoint, best / window as f64));
    }

    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let log_sq: Vec<f64> = points.iter().map(|p| (p.0 as f64).log2().powi(2)).collect();
    let lin: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    Ok(RuntimeProfile {
        log2_squared_fit: fit_line(&log_sq, &ys),
        linear_fit: fit_line(&lin, &ys),
        points,
    })
}
