//! Bounded kernels, batch kernel sums and bandwidth selection.
//!
//! Only the Gaussian kernel `k(x, y) = exp(-gamma * |x - y|^2)` ships today.
//! Every family must declare its supremum `K`, since the distribution-free
//! acceptance threshold depends on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stream element: a finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyObservation);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Observation {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<f64> for Observation {
    /// Scalar observation. Panics on non-finite input.
    fn from(v: f64) -> Self {
        Self::new(vec![v]).expect("scalar observation must be finite")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    gamma: f64,
}

impl KernelSpec {
    pub fn gaussian(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
        Ok(Self {
            family: KernelFamily::Gaussian,
            gamma,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Supremum of the kernel over all input pairs.
    pub fn bound(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => 1.0,
        }
    }

    pub fn eval(&self, x: &Observation, y: &Observation) -> Result<f64> {
        check_dim(x.dim(), y.dim())?;
        Ok(self.eval_slices(x.as_slice(), y.as_slice()))
    }

    /// Evaluates without a dimension check. Callers guarantee equal lengths.
    #[inline]
    pub(crate) fn eval_slices(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self.family {
            KernelFamily::Gaussian => {
                let sq: f64 = x
                    .iter()
                    .zip(y)
                    .map(|(a, b)| {
                        let d = a - b;
                        d * d
                    })
                    .sum();
                (-self.gamma * sq).exp()
            }
        }
    }

    /// Sum of `k(a, b)` over every `a` in `a_set` and `b` in `b_set`.
    pub fn cross_sum(&self, a_set: &[Observation], b_set: &[Observation]) -> Result<f64> {
        common_dim(a_set.iter().chain(b_set))?;
        Ok(self.cross_sum_unchecked(a_set, b_set))
    }

    pub(crate) fn cross_sum_unchecked(&self, a_set: &[Observation], b_set: &[Observation]) -> f64 {
        a_set
            .iter()
            .map(|a| {
                b_set
                    .iter()
                    .map(|b| self.eval_slices(a.as_slice(), b.as_slice()))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Sum of `k(a_i, a_j)` over all ordered pairs, diagonal included.
    pub fn self_sum(&self, set: &[Observation]) -> Result<f64> {
        common_dim(set.iter())?;
        let diag = set.len() as f64 * self.diagonal();
        let mut off = 0.0;
        for (i, a) in set.iter().enumerate() {
            for b in &set[i + 1..] {
                off += self.eval_slices(a.as_slice(), b.as_slice());
            }
        }
        Ok(diag + 2.0 * off)
    }

    /// `k(x, x)`, constant for translation-invariant families.
    fn diagonal(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => 1.0,
        }
    }
}

/// Median heuristic: `gamma = 1 / (2 * median squared pairwise distance)`.
///
/// The median runs over all unordered pairs of distinct indices; an even
/// number of pairs takes the mean of the two middle values. A zero median
/// (constant warmup) falls back to `gamma = 1`.
pub fn median_heuristic(warmup: &[Observation]) -> Result<f64> {
    if warmup.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: warmup.len(),
        });
    }
    common_dim(warmup.iter())?;
    let mut dists = Vec::with_capacity(warmup.len() * (warmup.len() - 1) / 2);
    for (i, a) in warmup.iter().enumerate() {
        for b in &warmup[i + 1..] {
            let sq: f64 = a
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            dists.push(sq);
        }
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median > 0.0 {
        Ok(1.0 / (2.0 * median))
    } else {
        Ok(1.0)
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

fn common_dim<'a>(mut obs: impl Iterator<Item = &'a Observation>) -> Result<Option<usize>> {
    let Some(first) = obs.next() else {
        return Ok(None);
    };
    let dim = first.dim();
    for o in obs {
        check_dim(dim, o.dim())?;
    }
    Ok(Some(dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(v: &[f64]) -> Observation {
        Observation::new(v.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn eval_examples() {
        let k = KernelSpec::gaussian(0.5).unwrap();
        assert_eq!(k.eval(&obs(&[0.0]), &obs(&[0.0])).unwrap(), 1.0);
        let v = k.eval(&obs(&[0.0]), &obs(&[2.0])).unwrap();
        assert!((v - (-2.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.135335).abs() < 1e-6);

        let k1 = KernelSpec::gaussian(1.0).unwrap();
        assert_eq!(k1.eval(&obs(&[1.0, 1.0]), &obs(&[1.0, 1.0])).unwrap(), 1.0);
    }

    #[test]
    fn eval_rejects_dimension_mismatch() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let err = k.eval(&obs(&[0.0]), &obs(&[0.0, 1.0])).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 1, got: 2 });
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(-1.0).is_err());
        assert!(KernelSpec::gaussian(f64::NAN).is_err());
        assert_eq!(Observation::new(vec![]), Err(Error::EmptyObservation));
        assert_eq!(
            Observation::new(vec![0.0, f64::INFINITY]),
            Err(Error::NonFinite { index: 1 })
        );
    }

    #[test]
    fn cross_sum_examples() {
        let k = KernelSpec::gaussian(0.5).unwrap();
        let x = obs(&[0.3, -1.0]);
        assert_eq!(k.cross_sum(std::slice::from_ref(&x), std::slice::from_ref(&x)).unwrap(), k.bound());
        let v = k
            .cross_sum(&[obs(&[0.0])], &[obs(&[0.0]), obs(&[2.0])])
            .unwrap();
        assert!((v - 1.135335).abs() < 1e-6);
    }

    #[test]
    fn self_sum_examples() {
        let k = KernelSpec::gaussian(0.5).unwrap();
        assert_eq!(k.self_sum(&[obs(&[4.0])]).unwrap(), 1.0);
        let v = k.self_sum(&[obs(&[0.0]), obs(&[2.0])]).unwrap();
        assert!((v - 2.270671).abs() < 1e-6);
    }

    #[test]
    fn sums_match_double_loop() {
        let pts: Vec<Observation> = [
            [0.1, 0.7],
            [-1.2, 0.4],
            [2.0, -0.3],
            [0.0, 0.0],
            [1.5, 1.5],
            [-0.6, -2.2],
            [0.9, 0.1],
        ]
        .iter()
        .map(|p| obs(p))
        .collect();
        let k = KernelSpec::gaussian(0.37).unwrap();
        let brute = |a: &[Observation], b: &[Observation]| {
            let mut s = 0.0;
            for x in a {
                for y in b {
                    let d2: f64 = x
                        .as_slice()
                        .iter()
                        .zip(y.as_slice())
                        .map(|(u, v)| (u - v).powi(2))
                        .sum();
                    s += (-0.37 * d2).exp();
                }
            }
            s
        };
        let (a, b) = pts.split_at(3);
        assert!(close(k.cross_sum(a, b).unwrap(), brute(a, b), 1e-12));
        assert!(close(
            k.self_sum(&pts[..5]).unwrap(),
            brute(&pts[..5], &pts[..5]),
            1e-12
        ));
    }

    #[test]
    fn median_heuristic_examples() {
        let g = median_heuristic(&[obs(&[0.0]), obs(&[1.0]), obs(&[3.0])]).unwrap();
        assert_eq!(g, 0.125);
        let g = median_heuristic(&[obs(&[5.0]), obs(&[5.0]), obs(&[5.0])]).unwrap();
        assert_eq!(g, 1.0);
        assert_eq!(
            median_heuristic(&[obs(&[1.0])]),
            Err(Error::InsufficientData { needed: 2, got: 1 })
        );
    }

    #[test]
    fn median_heuristic_standard_normal_range() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let warm: Vec<Observation> = (0..100)
            .map(|_| {
                obs(&[
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                ])
            })
            .collect();
        let g = median_heuristic(&warm).unwrap();
        assert!((0.1..=1.0).contains(&g), "gamma = {g}");
    }

    fn arb_point(dim: usize) -> impl Strategy<Value = Observation> {
        prop::collection::vec(-5.0f64..5.0, dim).prop_map(|v| Observation::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(x in arb_point(3), y in arb_point(3), gamma in 0.01f64..10.0) {
            let k = KernelSpec::gaussian(gamma).unwrap();
            let a = k.eval(&x, &y).unwrap();
            let b = k.eval(&y, &x).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=k.bound()).contains(&a));
        }

        #[test]
        fn additivity(
            a in prop::collection::vec(arb_point(2), 1..6),
            b in prop::collection::vec(arb_point(2), 1..6),
            c in prop::collection::vec(arb_point(2), 1..6),
        ) {
            let k = KernelSpec::gaussian(0.8).unwrap();
            let ab: Vec<_> = a.iter().chain(&b).cloned().collect();
            let lhs = k.cross_sum(&ab, &c).unwrap();
            let rhs = k.cross_sum(&a, &c).unwrap() + k.cross_sum(&b, &c).unwrap();
            prop_assert!(close(lhs, rhs, 1e-12));
            prop_assert!(close(k.cross_sum(&a, &c).unwrap(), k.cross_sum(&c, &a).unwrap(), 1e-12));

            let merged = k.self_sum(&ab).unwrap();
            let parts = k.self_sum(&a).unwrap() + k.self_sum(&b).unwrap()
                + 2.0 * k.cross_sum(&a, &b).unwrap();
            prop_assert!(close(merged, parts, 1e-12));
        }
    }
}
