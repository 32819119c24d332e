//! Exponential-bucket summary of a stream.
//!
//! After `t` inserts the chain holds one bucket per set bit of `t`. A bucket
//! at level `s` represents `2^s` consecutive observations and keeps
//!
//! * a stored sample of those observations (all of them in exact mode,
//!   `max(s, 1)` of them in sampled mode),
//! * `xx`, the kernel sum over all pairs of its own observations,
//! * `xy`, one kernel sum per strictly older bucket, oldest first.
//!
//! Every sum carries the number of kernel evaluations it aggregates. The MMD
//! at a split normalises each aggregated sum by that count, which in exact
//! mode gives the usual `1/m^2`, `1/n^2` and `2/(mn)` weights.
//!
//! Split `s` (with `0 < s < len`) puts the `s` oldest buckets in the left
//! window and the remaining ones in the right window.

use std::ops::{Add, AddAssign};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{check_dim, KernelSpec, Observation};

/// A kernel sum together with the number of terms it aggregates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelSum {
    pub sum: f64,
    pub terms: u64,
}

impl KernelSum {
    pub fn new(sum: f64, terms: u64) -> Self {
        Self { sum, terms }
    }

    /// Average kernel value, i.e. `sum / terms`.
    pub fn mean(&self) -> f64 {
        self.sum / self.terms as f64
    }
}

impl Add for KernelSum {
    type Output = KernelSum;

    fn add(self, rhs: Self) -> Self {
        Self {
            sum: self.sum + rhs.sum,
            terms: self.terms + rhs.terms,
        }
    }
}

impl AddAssign for KernelSum {
    fn add_assign(&mut self, rhs: Self) {
        self.sum += rhs.sum;
        self.terms += rhs.terms;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Keep every observation; split statistics equal the quadratic estimate.
    Exact,
    /// Keep a uniform subsample of `max(level, 1)` observations per bucket.
    Sampled,
}

impl SamplingMode {
    /// Number of observations a bucket at `level` stores.
    pub fn stored_len(self, level: u32) -> usize {
        match self {
            SamplingMode::Exact => 1usize << level,
            SamplingMode::Sampled => (level as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    level: u32,
    sample: Vec<Observation>,
    xx: KernelSum,
    xy: Vec<KernelSum>,
}

impl Bucket {
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Number of stream observations the bucket represents.
    pub fn capacity(&self) -> u64 {
        1u64 << self.level
    }

    pub fn sample(&self) -> &[Observation] {
        &self.sample
    }

    pub fn xx(&self) -> KernelSum {
        self.xx
    }

    /// Cross sums against every older bucket, oldest first.
    pub fn xy(&self) -> &[KernelSum] {
        &self.xy
    }

    #[cfg(test)]
    pub(crate) fn from_parts(
        level: u32,
        sample: Vec<Observation>,
        xx: KernelSum,
        xy: Vec<KernelSum>,
    ) -> Self {
        Self {
            level,
            sample,
            xx,
            xy,
        }
    }
}

/// Merges two equal-level neighbours into one bucket a level higher.
///
/// `left` is the older bucket. `right` must carry exactly one more cross sum
/// than `left`, its last entry being the interaction with `left`.
pub fn merge<R: rand::Rng + ?Sized>(
    left: Bucket,
    right: Bucket,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<Bucket> {
    if left.level != right.level {
        return Err(Error::Structure(format!(
            "cannot merge buckets of levels {} and {}",
            left.level, right.level
        )));
    }
    if right.xy.len() != left.xy.len() + 1 {
        return Err(Error::Structure(format!(
            "newer bucket has {} cross sums, older has {}; expected exactly one more",
            right.xy.len(),
            left.xy.len()
        )));
    }
    let level = left.level + 1;
    let mut right_xy = right.xy;
    let between = right_xy.pop().expect("length checked above");
    let xx = left.xx + right.xx + between + between;
    let xy = left
        .xy
        .iter()
        .zip(&right_xy)
        .map(|(a, b)| *a + *b)
        .collect();

    let mut pool = left.sample;
    pool.extend(right.sample);
    let keep = mode.stored_len(level);
    let sample = if pool.len() <= keep {
        pool
    } else {
        let mut picked = index::sample(rng, pool.len(), keep).into_vec();
        picked.sort_unstable();
        let mut pool: Vec<Option<Observation>> = pool.into_iter().map(Some).collect();
        picked
            .into_iter()
            .map(|i| pool[i].take().expect("indices are distinct"))
            .collect()
    };

    Ok(Bucket {
        level,
        sample,
        xx,
        xy,
    })
}

/// Biased MMD estimate for one split of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitStat {
    pub split: usize,
    /// `sqrt(max(0, mmd_sq))`.
    pub mmd: f64,
    /// Squared estimate before clamping; may be slightly negative in sampled mode.
    pub mmd_sq: f64,
    /// Observations represented by the left (older) window.
    pub m: u64,
    /// Observations represented by the right (newer) window.
    pub n: u64,
    /// Self-sum terms per represented observation on the left. Equals `m` in
    /// exact mode; in sampled mode it is the size of an exact window whose
    /// diagonal carries the same weight.
    pub m_eff: f64,
    pub n_eff: f64,
}

impl SplitStat {
    fn from_sums(split: usize, left: KernelSum, right: KernelSum, cross: KernelSum, m: u64, n: u64) -> Self {
        let mmd_sq = left.mean() + right.mean() - 2.0 * cross.mean();
        Self {
            split,
            mmd: mmd_sq.max(0.0).sqrt(),
            mmd_sq,
            m,
            n,
            m_eff: left.terms as f64 / m as f64,
            n_eff: right.terms as f64 / n as f64,
        }
    }
}

/// Ordered bucket list, oldest first. The complete detector state.
#[derive(Debug, Clone)]
pub struct BucketChain {
    buckets: Vec<Bucket>,
    total: u64,
    mode: SamplingMode,
    seed: u64,
    rng: ChaCha8Rng,
    dim: Option<usize>,
}

impl BucketChain {
    pub fn new(mode: SamplingMode, seed: u64) -> Self {
        Self {
            buckets: Vec::new(),
            total: 0,
            mode,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            dim: None,
        }
    }

    pub fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// Observations represented by the chain.
    pub fn total_count(&self) -> u64 {
        self.total
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn levels(&self) -> Vec<u32> {
        self.buckets.iter().map(Bucket::level).collect()
    }

    /// Total number of observations held in bucket samples.
    pub fn stored_observations(&self) -> usize {
        self.buckets.iter().map(|b| b.sample.len()).sum()
    }

    /// Empties the chain and reseeds the generator from the chain seed.
    pub fn clear(&mut self) {
        self.buckets.clear();
        self.total = 0;
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.dim = None;
    }

    /// Builds the level-0 bucket `x` would become, without inserting it.
    pub fn new_bucket(&self, x: &Observation, kernel: &KernelSpec) -> Result<Bucket> {
        if let Some(dim) = self.dim {
            check_dim(dim, x.dim())?;
        }
        let one = std::slice::from_ref(x);
        let xy = self
            .buckets
            .iter()
            .map(|b| KernelSum::new(kernel.cross_sum_unchecked(one, &b.sample), b.sample.len() as u64))
            .collect();
        Ok(Bucket {
            level: 0,
            sample: vec![x.clone()],
            xx: KernelSum::new(kernel.eval_slices(x.as_slice(), x.as_slice()), 1),
            xy,
        })
    }

    /// Appends `x` and merges equal-level neighbours until levels are distinct.
    pub fn insert(&mut self, x: &Observation, kernel: &KernelSpec) -> Result<()> {
        let bucket = self.new_bucket(x, kernel)?;
        self.dim.get_or_insert(x.dim());
        self.buckets.push(bucket);
        self.total += 1;
        while self.buckets.len() >= 2 {
            let n = self.buckets.len();
            if self.buckets[n - 1].level != self.buckets[n - 2].level {
                break;
            }
            let right = self.buckets.pop().expect("len >= 2");
            let left = self.buckets.pop().expect("len >= 2");
            let merged = merge(left, right, self.mode, &mut self.rng)?;
            self.buckets.push(merged);
        }
        Ok(())
    }

    fn check_split(&self, split: usize) -> Result<()> {
        if split == 0 || split >= self.buckets.len() {
            Err(Error::SplitOutOfRange {
                split,
                buckets: self.buckets.len(),
            })
        } else {
            Ok(())
        }
    }

    /// MMD between the `split` oldest buckets and the rest, from stored sums.
    pub fn mmd_at_split(&self, split: usize) -> Result<SplitStat> {
        self.check_split(split)?;
        let mut left = KernelSum::default();
        let mut right = KernelSum::default();
        let mut cross = KernelSum::default();
        for (i, b) in self.buckets.iter().enumerate() {
            let on_left = i < split;
            if on_left {
                left += b.xx;
            } else {
                right += b.xx;
            }
            for (j, xy) in b.xy.iter().enumerate() {
                match (on_left, j < split) {
                    (true, _) => left += *xy + *xy,
                    (false, true) => cross += *xy,
                    (false, false) => right += *xy + *xy,
                }
            }
        }
        let m: u64 = self.buckets[..split].iter().map(Bucket::capacity).sum();
        Ok(SplitStat::from_sums(split, left, right, cross, m, self.total - m))
    }

    /// Statistics for every split, oldest split first, in `O(len^2)` total.
    pub fn split_stats(&self) -> Vec<SplitStat> {
        let len = self.buckets.len();
        if len < 2 {
            return Vec::new();
        }
        // row[i]: all cross sums of bucket i; col[j]: sums of newer buckets against j.
        let mut row = vec![KernelSum::default(); len];
        let mut col = vec![KernelSum::default(); len];
        for (i, b) in self.buckets.iter().enumerate() {
            for (j, xy) in b.xy.iter().enumerate() {
                row[i] += *xy;
                col[j] += *xy;
            }
        }

        // right[s]: aggregated self sum of buckets s..len.
        let mut right = vec![KernelSum::default(); len + 1];
        for s in (0..len).rev() {
            right[s] = right[s + 1] + self.buckets[s].xx + col[s] + col[s];
        }

        let mut out = Vec::with_capacity(len - 1);
        let mut left = KernelSum::default();
        let mut cross = KernelSum::default();
        let mut m = 0u64;
        for s in 1..len {
            let b = &self.buckets[s - 1];
            left = left + b.xx + row[s - 1] + row[s - 1];
            cross = if s == 1 {
                col[0]
            } else {
                let mut c = cross;
                c.sum += col[s - 1].sum - row[s - 1].sum;
                c.terms = c.terms + col[s - 1].terms - row[s - 1].terms;
                c
            };
            m += b.capacity();
            out.push(SplitStat::from_sums(s, left, right[s], cross, m, self.total - m));
        }
        out
    }

    /// Keeps only the buckets at and after `split`, trimming their cross sums
    /// to the retained older buckets.
    pub fn drop_older_than(&mut self, split: usize) -> Result<()> {
        self.check_split(split)?;
        self.buckets.drain(..split);
        for b in &mut self.buckets {
            b.xy.drain(..split);
        }
        self.total = self.buckets.iter().map(Bucket::capacity).sum();
        Ok(())
    }

    /// Verifies the structural invariants. Intended for tests and snapshot restore.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Structure(msg));
        for (i, b) in self.buckets.iter().enumerate() {
            if i > 0 && self.buckets[i - 1].level <= b.level {
                return fail(format!("levels not strictly decreasing at bucket {i}"));
            }
            if b.xy.len() != i {
                return fail(format!("bucket {i} has {} cross sums", b.xy.len()));
            }
            if b.sample.len() != self.mode.stored_len(b.level) {
                return fail(format!(
                    "bucket {i} at level {} stores {} observations",
                    b.level,
                    b.sample.len()
                ));
            }
            if let Some(dim) = self.dim {
                if b.sample.iter().any(|o| o.dim() != dim) {
                    return fail(format!("bucket {i} holds an observation of the wrong dimension"));
                }
            }
            if b.xx.sum < 0.0 || b.xy.iter().any(|s| s.sum < 0.0) {
                return fail(format!("bucket {i} has a negative kernel sum"));
            }
        }
        let total: u64 = self.buckets.iter().map(Bucket::capacity).sum();
        if total != self.total {
            return fail(format!("total count {} != capacity sum {total}", self.total));
        }
        Ok(())
    }

    pub(crate) fn to_state(&self) -> ChainState {
        ChainState {
            mode: self.mode,
            seed: self.seed,
            rng_word_pos: self.rng.get_word_pos().to_string(),
            total: self.total,
            dim: self.dim,
            buckets: self.buckets.clone(),
        }
    }

    pub(crate) fn from_state(state: ChainState) -> Result<Self> {
        let word_pos: u128 = state
            .rng_word_pos
            .parse()
            .map_err(|e| Error::Snapshot(format!("bad generator position: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
        rng.set_word_pos(word_pos);
        let chain = Self {
            buckets: state.buckets,
            total: state.total,
            mode: state.mode,
            seed: state.seed,
            rng,
            dim: state.dim,
        };
        chain.check_invariants()?;
        Ok(chain)
    }
}

/// Serializable form of a [`BucketChain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ChainState {
    pub mode: SamplingMode,
    pub seed: u64,
    /// Generator stream position, decimal `u128`.
    pub rng_word_pos: String,
    pub total: u64,
    pub dim: Option<usize>,
    pub buckets: Vec<Bucket>,
}

/// Terms in the self sum of a sampled-mode bucket at `level`:
/// `1` at level 0, `2^(l-1) (l^2 - l + 4)` above.
pub fn xx_term_count(level: u32) -> u64 {
    if level == 0 {
        1
    } else {
        let l = level as u64;
        (1u64 << (level - 1)) * (l * l - l + 4)
    }
}

/// Terms in the cross sum between two sampled-mode buckets of `level` just
/// before they merge: `1` at level 0, `2^l * l` above.
pub fn xy_term_count(level: u32) -> u64 {
    if level == 0 {
        1
    } else {
        (1u64 << level) * level as u64
    }
}
