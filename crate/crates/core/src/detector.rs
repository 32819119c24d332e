//! Online change detection over a [`BucketChain`].
//!
//! Each observation is inserted, then every split is tested from the oldest
//! to the newest. The first split whose statistic reaches its threshold is
//! reported and all buckets older than it are dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ewstore::{BucketChain, ChainState, SamplingMode};
use crate::kernel::{median_heuristic, KernelSpec, Observation};
use crate::sigtest::{reject, TestConfig};

/// Snapshot format version written by [`Detector::snapshot`].
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median heuristic over the first `warmup_size` observations.
    Auto,
    Fixed(f64),
}

/// Window sizes handed to the threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSizes {
    /// Observations represented by each window.
    Logical,
    /// Self-sum terms per represented observation. Identical to `Logical` in
    /// exact mode; smaller in sampled mode, where subsampling leaves the
    /// diagonal over-weighted.
    #[default]
    Effective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub test: TestConfig,
    pub bandwidth: Bandwidth,
    pub mode: SamplingMode,
    pub warmup_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub window_sizes: WindowSizes,
}

impl DetectorConfig {
    /// Level `alpha`, automatic bandwidth on 100 warmup points, sampled mode, seed 0.
    pub fn new(alpha: f64) -> Result<Self> {
        Ok(Self {
            test: TestConfig::with_alpha(alpha)?,
            bandwidth: Bandwidth::Auto,
            mode: SamplingMode::Sampled,
            warmup_size: 100,
            seed: 0,
            window_sizes: WindowSizes::Effective,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self.bandwidth {
            Bandwidth::Auto if self.warmup_size < 2 => Err(Error::InvalidArgument(format!(
                "warmup size must be at least 2 for automatic bandwidth, got {}",
                self.warmup_size
            ))),
            Bandwidth::Fixed(g) => KernelSpec::gaussian(g).map(|_| ()),
            Bandwidth::Auto => Ok(()),
        }
    }
}

/// A detected change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeEvent {
    /// 1-based index of the observation that triggered the detection.
    pub detected_at: u64,
    /// Observations represented by the buckets from the split to the newest,
    /// i.e. the change lies this many observations before the end.
    pub boundary_offset: u64,
    pub statistic: f64,
    pub threshold: f64,
    pub split_index: usize,
}

#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    kernel: KernelSpec,
    chain: BucketChain,
    consumed: u64,
}

impl Detector {
    /// Creates a detector with a known kernel; `config.bandwidth` is ignored.
    pub fn with_kernel(config: DetectorConfig, kernel: KernelSpec) -> Result<Self> {
        if kernel.bound() != config.test.bound() {
            return Err(Error::InvalidArgument(format!(
                "test bound {} does not match kernel bound {}",
                config.test.bound(),
                kernel.bound()
            )));
        }
        Ok(Self {
            config,
            kernel,
            chain: BucketChain::new(config.mode, config.seed),
            consumed: 0,
        })
    }

    /// Creates a detector from a config with a fixed bandwidth.
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        match config.bandwidth {
            Bandwidth::Fixed(gamma) => Self::with_kernel(config, KernelSpec::gaussian(gamma)?),
            Bandwidth::Auto => Err(Error::InvalidArgument(
                "automatic bandwidth needs warmup data; use warmup_then_start".into(),
            )),
        }
    }

    /// Fixes the bandwidth from `warmup` (automatic mode) and then feeds the
    /// warmup observations through [`Detector::observe`]. Returns the detector
    /// and any events raised while replaying the warmup.
    pub fn warmup_then_start(config: DetectorConfig, warmup: &[Observation]) -> Result<(Self, Vec<ChangeEvent>)> {
        config.validate()?;
        let kernel = match config.bandwidth {
            Bandwidth::Fixed(gamma) => KernelSpec::gaussian(gamma)?,
            Bandwidth::Auto => {
                if warmup.len() < config.warmup_size {
                    return Err(Error::InsufficientData {
                        needed: config.warmup_size,
                        got: warmup.len(),
                    });
                }
                KernelSpec::gaussian(median_heuristic(&warmup[..config.warmup_size])?)?
            }
        };
        let mut det = Self::with_kernel(config, kernel)?;
        let mut events = Vec::new();
        for x in warmup {
            if let Some(e) = det.observe(x)? {
                events.push(e);
            }
        }
        Ok((det, events))
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn chain(&self) -> &BucketChain {
        &self.chain
    }

    /// Observations consumed since creation or the last reset.
    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn observe(&mut self, x: &Observation) -> Result<Option<ChangeEvent>> {
        self.chain.insert(x, &self.kernel)?;
        self.consumed += 1;

        let stats = self.chain.split_stats();
        let num_splits = stats.len();
        for stat in stats {
            let (m, n) = match self.config.window_sizes {
                WindowSizes::Logical => (stat.m as f64, stat.n as f64),
                WindowSizes::Effective => (stat.m_eff, stat.n_eff),
            };
            let threshold = self
                .config
                .test
                .threshold_for_sizes(m, n, num_splits, self.chain.total_count())?;
            if reject(stat.mmd, threshold) {
                self.chain.drop_older_than(stat.split)?;
                return Ok(Some(ChangeEvent {
                    detected_at: self.consumed,
                    boundary_offset: stat.n,
                    statistic: stat.mmd,
                    threshold,
                    split_index: stat.split,
                }));
            }
        }
        Ok(None)
    }

    /// Feeds a batch of observations, collecting every event.
    pub fn observe_all<'a>(&mut self, xs: impl IntoIterator<Item = &'a Observation>) -> Result<Vec<ChangeEvent>> {
        let mut events = Vec::new();
        for x in xs {
            if let Some(e) = self.observe(x)? {
                events.push(e);
            }
        }
        Ok(events)
    }

    /// Empties the chain and reseeds sampling; the kernel and config are kept.
    pub fn reset(&mut self) {
        self.chain.clear();
        self.consumed = 0;
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            version: SNAPSHOT_VERSION,
            config: self.config,
            gamma: self.kernel.gamma(),
            consumed: self.consumed,
            chain: self.chain.to_state(),
        }
    }

    pub fn restore(snapshot: Snapshot) -> Result<Self> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported snapshot version {} (expected {SNAPSHOT_VERSION})",
                snapshot.version
            )));
        }
        let kernel = KernelSpec::gaussian(snapshot.gamma)?;
        let mut det = Self::with_kernel(snapshot.config, kernel)?;
        if snapshot.chain.mode != snapshot.config.mode || snapshot.chain.seed != snapshot.config.seed {
            return Err(Error::Snapshot("chain header disagrees with config".into()));
        }
        det.chain = BucketChain::from_state(snapshot.chain)?;
        det.consumed = snapshot.consumed;
        Ok(det)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.snapshot()).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: Snapshot = serde_json::from_str(text).map_err(|e| Error::Snapshot(e.to_string()))?;
        Self::restore(snap)
    }
}

/// Persisted detector state: config header plus the bucket chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub config: DetectorConfig,
    pub gamma: f64,
    pub consumed: u64,
    #[serde(rename = "chain")]
    chain: ChainState,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigtest::Correction;

    fn fixed(alpha: f64, gamma: f64, mode: SamplingMode) -> DetectorConfig {
        DetectorConfig {
            test: TestConfig::with_alpha(alpha).unwrap(),
            bandwidth: Bandwidth::Fixed(gamma),
            mode,
            warmup_size: 100,
            seed: 7,
            window_sizes: WindowSizes::Effective,
        }
    }

    #[test]
    fn single_observation_never_fires() {
        let mut det = Detector::new(fixed(0.1, 1.0, SamplingMode::Exact)).unwrap();
        assert_eq!(det.observe(&Observation::from(3.0)).unwrap(), None);
    }

    #[test]
    fn two_point_stream_stays_quiet() {
        let mut det = Detector::new(fixed(0.1, 0.5, SamplingMode::Exact)).unwrap();
        assert!(det.observe(&Observation::from(0.0)).unwrap().is_none());
        assert!(det.observe(&Observation::from(2.0)).unwrap().is_none());
    }

    #[test]
    fn rejects_bad_input() {
        let mut det = Detector::new(fixed(0.1, 0.5, SamplingMode::Exact)).unwrap();
        det.observe(&Observation::from(0.0)).unwrap();
        let x = Observation::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(det.observe(&x), Err(Error::DimensionMismatch { .. })));
        assert_eq!(det.consumed(), 1);
    }

    #[test]
    fn auto_bandwidth_needs_warmup() {
        let cfg = DetectorConfig::new(0.05).unwrap();
        assert!(Detector::new(cfg).is_err());
        let warm: Vec<Observation> = (0..10).map(|i| Observation::from(i as f64)).collect();
        assert!(matches!(
            Detector::warmup_then_start(cfg, &warm),
            Err(Error::InsufficientData { needed: 100, got: 10 })
        ));
        let bad = DetectorConfig { warmup_size: 1, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn warmup_inserts_observations() {
        let cfg = DetectorConfig::new(0.01).unwrap();
        let warm: Vec<Observation> = (0..100).map(|i| Observation::from(((i * 7) % 10) as f64)).collect();
        let (det, events) = Detector::warmup_then_start(cfg, &warm).unwrap();
        assert!(events.is_empty());
        assert_eq!(det.chain().total_count(), 100);
        assert_eq!(det.chain().levels(), vec![6, 5, 2]);

        let constant = vec![Observation::from(5.0); 100];
        let (det, _) = Detector::warmup_then_start(cfg, &constant).unwrap();
        assert_eq!(det.kernel().gamma(), 1.0);

        let explicit = DetectorConfig {
            bandwidth: Bandwidth::Fixed(0.3),
            ..cfg
        };
        let (det, _) = Detector::warmup_then_start(explicit, &[]).unwrap();
        assert_eq!(det.chain().total_count(), 0);
        assert_eq!(det.kernel().gamma(), 0.3);
    }

    #[test]
    fn detects_obvious_shift_and_truncates() {
        let mut det = Detector::new(fixed(0.1, 0.5, SamplingMode::Exact)).unwrap();
        for i in 0..256 {
            let v = (i % 5) as f64 * 0.1;
            assert!(det.observe(&Observation::from(v)).unwrap().is_none());
        }
        let mut event = None;
        for i in 0..64 {
            if let Some(e) = det.observe(&Observation::from(20.0 + (i % 3) as f64 * 0.1)).unwrap() {
                event = Some((e, det.chain().levels()));
                break;
            }
        }
        let (e, levels) = event.expect("shift detected");
        assert!(e.statistic >= e.threshold);
        assert!(e.detected_at > 256);
        assert_eq!(e.split_index, 1);
        assert_eq!(e.boundary_offset, e.detected_at - 256);
        let retained: u64 = levels.iter().map(|l| 1u64 << l).sum();
        assert_eq!(retained, e.boundary_offset);
    }

    #[test]
    fn reset_keeps_kernel() {
        let cfg = DetectorConfig::new(0.01).unwrap();
        let warm: Vec<Observation> = (0..100).map(|i| Observation::from((i % 9) as f64)).collect();
        let (mut det, _) = Detector::warmup_then_start(cfg, &warm).unwrap();
        let gamma = det.kernel().gamma();
        det.reset();
        assert_eq!(det.kernel().gamma(), gamma);
        det.observe(&Observation::from(1.0)).unwrap();
        assert_eq!(det.chain().levels(), vec![0]);
    }

    #[test]
    fn reset_matches_fresh_detector() {
        let cfg = fixed(0.1, 0.5, SamplingMode::Sampled);
        let stream: Vec<Observation> = (0..300)
            .map(|i| Observation::from(if i < 150 { (i % 4) as f64 * 0.2 } else { 10.0 + (i % 3) as f64 }))
            .collect();
        let mut used = Detector::new(cfg).unwrap();
        used.observe_all(&stream).unwrap();
        used.reset();
        let mut fresh = Detector::new(cfg).unwrap();
        assert_eq!(used.observe_all(&stream).unwrap(), fresh.observe_all(&stream).unwrap());
        assert_eq!(used.chain().buckets(), fresh.chain().buckets());
    }

    #[test]
    fn snapshot_round_trip_continues_identically() {
        let cfg = DetectorConfig {
            test: TestConfig::with_alpha(0.2).unwrap().with_correction(Correction::BonferroniLevel),
            ..fixed(0.2, 0.7, SamplingMode::Sampled)
        };
        let stream: Vec<Observation> = (0..500)
            .map(|i| Observation::new(vec![((i * 31) % 17) as f64 / 7.0, (i / 250) as f64 * 4.0]).unwrap())
            .collect();
        let mut a = Detector::new(cfg).unwrap();
        a.observe_all(&stream[..200]).unwrap();
        let text = a.to_json();
        let mut b = Detector::from_json(&text).unwrap();
        assert_eq!(b.to_json(), text);
        let ea = a.observe_all(&stream[200..]).unwrap();
        let eb = b.observe_all(&stream[200..]).unwrap();
        assert_eq!(ea, eb);
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn window_sizes_agree_in_exact_mode() {
        let stream: Vec<Observation> = (0..400)
            .map(|i| Observation::from(((i * 13) % 11) as f64 * 0.1 + if i >= 200 { 2.0 } else { 0.0 }))
            .collect();
        let effective = fixed(0.05, 1.0, SamplingMode::Exact);
        let logical = DetectorConfig {
            window_sizes: WindowSizes::Logical,
            ..effective
        };
        let a = Detector::new(effective).unwrap().observe_all(&stream).unwrap();
        let b = Detector::new(logical).unwrap().observe_all(&stream).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn snapshot_rejects_bad_version() {
        let det = Detector::new(fixed(0.1, 0.5, SamplingMode::Exact)).unwrap();
        let mut snap = det.snapshot();
        snap.version = 99;
        assert!(matches!(Detector::restore(snap), Err(Error::Snapshot(_))));
        assert!(Detector::from_json("{").is_err());
    }
}
