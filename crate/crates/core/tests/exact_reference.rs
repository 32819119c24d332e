// Exact-mode detection against a brute-force detector that keeps the raw
// window and recomputes every split statistic from scratch.

use mmdew::oracle::mmd_b2;
use mmdew::sigtest::reject;
use mmdew::{Bandwidth, ChangeEvent, Detector, DetectorConfig, KernelSpec, Observation, SamplingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Reference {
    config: DetectorConfig,
    kernel: KernelSpec,
    window: Vec<Observation>,
    consumed: u64,
}

impl Reference {
    fn observe(&mut self, x: &Observation) -> Option<ChangeEvent> {
        self.window.push(x.clone());
        self.consumed += 1;
        let t = self.window.len() as u64;
        // bucket sizes, oldest first, are the binary digits of the window length
        let sizes: Vec<u64> = (0..64).rev().filter(|b| t >> b & 1 == 1).map(|b| 1u64 << b).collect();
        let splits = sizes.len().saturating_sub(1);
        let mut m = 0u64;
        for s in 1..sizes.len() {
            m += sizes[s - 1];
            let n = t - m;
            let (left, right) = self.window.split_at(m as usize);
            let mmd = mmd_b2(left, right, &self.kernel).unwrap().max(0.0).sqrt();
            let threshold = self.config.test.threshold(m, n, splits, t).unwrap();
            if reject(mmd, threshold) {
                self.window.drain(..m as usize);
                return Some(ChangeEvent {
                    detected_at: self.consumed,
                    boundary_offset: n,
                    statistic: mmd,
                    threshold,
                    split_index: s,
                });
            }
        }
        None
    }
}

// (seed, segments as (mean, length), dim, alpha)
type Case = (u64, &'static [(f64, usize)], usize, f64);

fn stream(seed: u64, segments: &[(f64, usize)], dim: usize) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &(mu, len) in segments {
        for _ in 0..len {
            let v: Vec<f64> = (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mu + z
                })
                .collect();
            out.push(Observation::new(v).unwrap());
        }
    }
    out
}

#[test]
fn exact_mode_matches_brute_force() {
    let cases: [Case; 6] = [
        (1, &[(0.0, 200), (2.5, 200)], 1, 0.1),
        (2, &[(0.0, 150), (3.0, 150), (0.0, 150)], 2, 0.1),
        (3, &[(0.0, 300)], 2, 0.2),
        (4, &[(0.0, 100), (1.5, 100), (-1.5, 100), (0.0, 100)], 1, 0.05),
        (5, &[(0.0, 256), (1.0, 256)], 16, 0.1),
        (6, &[(0.0, 64), (4.0, 64), (0.0, 64)], 3, 0.01),
    ];
    let mut total_events = 0;
    for (seed, segments, dim, alpha) in cases {
        let xs = stream(seed, segments, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = rng.random_range(0.1..1.0) / dim as f64;
        let config = DetectorConfig {
            bandwidth: Bandwidth::Fixed(gamma),
            mode: SamplingMode::Exact,
            seed,
            ..DetectorConfig::new(alpha).unwrap()
        };
        let mut fast = Detector::new(config).unwrap();
        let mut slow = Reference {
            config,
            kernel: KernelSpec::gaussian(gamma).unwrap(),
            window: Vec::new(),
            consumed: 0,
        };
        for (i, x) in xs.iter().enumerate() {
            let a = fast.observe(x).unwrap();
            let b = slow.observe(x);
            match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    assert_eq!(
                        (a.detected_at, a.boundary_offset, a.split_index),
                        (b.detected_at, b.boundary_offset, b.split_index),
                        "seed {seed}"
                    );
                    assert!((a.statistic - b.statistic).abs() < 1e-9, "seed {seed}: {a:?} vs {b:?}");
                    assert_eq!(a.threshold, b.threshold);
                    total_events += 1;
                }
                (a, b) => panic!("seed {seed} step {}: fast {a:?}, reference {b:?}", i + 1),
            }
            assert_eq!(fast.chain().total_count(), slow.window.len() as u64);
        }
    }
    assert!(total_events >= 4, "only {total_events} events; the cases should exercise detection");
}
