//! Online change detection with maximum mean discrepancy on exponential windows.
//!
//! The stream is summarised by a chain of buckets whose sizes follow the
//! binary representation of the number of observations seen. Kernel sums
//! kept per bucket give the biased MMD between any two adjacent groups of
//! buckets without revisiting raw data, and a distribution-free threshold
//! turns each of those estimates into a two-sample test.
//!
//! ```
//! use mmdew::{Bandwidth, Detector, DetectorConfig, Observation, SamplingMode};
//!
//! let config = DetectorConfig {
//!     bandwidth: Bandwidth::Fixed(0.5),
//!     mode: SamplingMode::Exact,
//!     ..DetectorConfig::new(0.05).unwrap()
//! };
//! let mut det = Detector::new(config).unwrap();
//! let mut events = Vec::new();
//! for i in 0..600 {
//!     let v = if i < 300 { (i % 7) as f64 * 0.1 } else { 8.0 + (i % 5) as f64 * 0.1 };
//!     if let Some(e) = det.observe(&Observation::from(v)).unwrap() {
//!         events.push(e);
//!     }
//! }
//! assert_eq!(events.len(), 1);
//! assert!(events[0].detected_at > 300);
//! ```

pub mod bench;
pub mod cli;
pub mod detector;
pub mod error;
pub mod ewstore;
pub mod kernel;
pub mod oracle;
pub mod sigtest;

pub use detector::{Bandwidth, ChangeEvent, Detector, DetectorConfig, Snapshot, WindowSizes};
pub use error::{Error, Result};
pub use ewstore::{Bucket, BucketChain, KernelSum, SamplingMode, SplitStat};
pub use kernel::{median_heuristic, KernelFamily, KernelSpec, Observation};
pub use sigtest::{Correction, TestConfig};
