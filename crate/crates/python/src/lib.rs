//! Python bindings. Observations are passed as a float or a sequence of floats;
//! events and reports come back as dicts.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mmdew::bench;
use mmdew::sigtest;
use mmdew::{
    Bandwidth, ChangeEvent, Correction, Detector as Core, DetectorConfig, KernelSpec, Observation, SamplingMode,
    TestConfig, WindowSizes,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_obs(x: &Bound<'_, PyAny>) -> PyResult<Observation> {
    let values: Vec<f64> = match x.extract::<f64>() {
        Ok(v) => vec![v],
        Err(_) => x.extract()?,
    };
    Observation::new(values).map_err(value_err)
}

fn to_obs_list(rows: &Bound<'_, PyAny>) -> PyResult<Vec<Observation>> {
    rows.try_iter()?.map(|r| to_obs(&r?)).collect()
}

fn event_dict<'py>(py: Python<'py>, e: &ChangeEvent) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("detected_at", e.detected_at)?;
    d.set_item("boundary_offset", e.boundary_offset)?;
    d.set_item("statistic", e.statistic)?;
    d.set_item("threshold", e.threshold)?;
    d.set_item("split_index", e.split_index)?;
    Ok(d)
}

enum State {
    Warming(Vec<Observation>),
    Running(Box<Core>),
}

/// Online change detector.
///
/// `gamma=None` picks the bandwidth by the median heuristic on the first
/// `warmup` observations; no events are reported until the warmup is full.
#[pyclass(module = "pymmdew")]
struct Detector {
    config: DetectorConfig,
    state: State,
}

#[pymethods]
impl Detector {
    #[new]
    #[pyo3(signature = (alpha=0.01, gamma=None, mode="sampled", warmup=100, seed=0, correction="level", window_sizes="effective"))]
    fn new(
        alpha: f64,
        gamma: Option<f64>,
        mode: &str,
        warmup: usize,
        seed: u64,
        correction: &str,
        window_sizes: &str,
    ) -> PyResult<Self> {
        let correction: Correction = correction.parse().map_err(value_err)?;
        let mode = match mode {
            "sampled" => SamplingMode::Sampled,
            "exact" => SamplingMode::Exact,
            other => return Err(value_err(format!("unknown mode '{other}'"))),
        };
        let window_sizes = match window_sizes {
            "effective" => WindowSizes::Effective,
            "logical" => WindowSizes::Logical,
            other => return Err(value_err(format!("unknown window sizes '{other}'"))),
        };
        let config = DetectorConfig {
            test: TestConfig::new(alpha, 1.0, correction).map_err(value_err)?,
            bandwidth: gamma.map_or(Bandwidth::Auto, Bandwidth::Fixed),
            mode,
            warmup_size: warmup,
            seed,
            window_sizes,
        };
        config.validate().map_err(value_err)?;
        let state = match config.bandwidth {
            Bandwidth::Fixed(_) => State::Running(Box::new(Core::new(config).map_err(value_err)?)),
            Bandwidth::Auto => State::Warming(Vec::with_capacity(warmup)),
        };
        Ok(Self { config, state })
    }

    /// Feeds one observation. Returns the event dict if a change was detected.
    fn observe<'py>(&mut self, py: Python<'py>, x: &Bound<'py, PyAny>) -> PyResult<Option<Bound<'py, PyDict>>> {
        let x = to_obs(x)?;
        let events = self.push(x)?;
        events.last().map(|e| event_dict(py, e)).transpose()
    }

    /// Feeds a sequence of observations and returns every event.
    fn observe_all<'py>(&mut self, py: Python<'py>, rows: &Bound<'py, PyAny>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mut out = Vec::new();
        for x in to_obs_list(rows)? {
            for e in self.push(x)? {
                out.push(event_dict(py, &e)?);
            }
        }
        Ok(out)
    }

    /// Empties the window. A detector still in warmup drops its buffer.
    fn reset(&mut self) {
        match &mut self.state {
            State::Running(det) => det.reset(),
            State::Warming(buf) => buf.clear(),
        }
    }

    /// Bandwidth in use, or None during warmup.
    #[getter]
    fn gamma(&self) -> Option<f64> {
        self.running().map(|d| d.kernel().gamma())
    }

    #[getter]
    fn consumed(&self) -> u64 {
        match &self.state {
            State::Running(det) => det.consumed(),
            State::Warming(buf) => buf.len() as u64,
        }
    }

    /// Bucket levels, oldest first.
    #[getter]
    fn levels(&self) -> Vec<u32> {
        self.running().map(|d| d.chain().levels()).unwrap_or_default()
    }

    /// Observations held in memory by the bucket chain.
    #[getter]
    fn stored_observations(&self) -> usize {
        self.running().map_or(0, |d| d.chain().stored_observations())
    }

    fn to_json(&self) -> PyResult<String> {
        self.running()
            .map(Core::to_json)
            .ok_or_else(|| value_err("detector is still in warmup; nothing to snapshot"))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let det = Core::from_json(text).map_err(value_err)?;
        Ok(Self {
            config: *det.config(),
            state: State::Running(Box::new(det)),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Detector(alpha={}, mode={:?}, consumed={})",
            self.config.test.alpha(),
            self.config.mode,
            self.consumed()
        )
    }
}

impl Detector {
    fn running(&self) -> Option<&Core> {
        match &self.state {
            State::Running(det) => Some(&**det),
            State::Warming(_) => None,
        }
    }

    fn push(&mut self, x: Observation) -> PyResult<Vec<ChangeEvent>> {
        match &mut self.state {
            State::Running(det) => Ok(det.observe(&x).map_err(value_err)?.into_iter().collect()),
            State::Warming(buf) => {
                if let Some(first) = buf.first() {
                    if first.dim() != x.dim() {
                        return Err(value_err(format!("expected dimension {}, got {}", first.dim(), x.dim())));
                    }
                }
                buf.push(x);
                if buf.len() < self.config.warmup_size {
                    return Ok(Vec::new());
                }
                let (det, events) = Core::warmup_then_start(self.config, buf).map_err(value_err)?;
                self.state = State::Running(Box::new(det));
                Ok(events)
            }
        }
    }
}

/// Gaussian kernel `exp(-gamma * |x - y|^2)`.
#[pyfunction]
fn gaussian_kernel(x: &Bound<'_, PyAny>, y: &Bound<'_, PyAny>, gamma: f64) -> PyResult<f64> {
    let k = KernelSpec::gaussian(gamma).map_err(value_err)?;
    k.eval(&to_obs(x)?, &to_obs(y)?).map_err(value_err)
}

/// Bandwidth `1 / (2 * median squared distance)` over all pairs.
#[pyfunction]
fn median_heuristic(rows: &Bound<'_, PyAny>) -> PyResult<f64> {
    mmdew::median_heuristic(&to_obs_list(rows)?).map_err(value_err)
}

/// Biased squared MMD between two samples, computed directly.
#[pyfunction]
fn mmd_b2(x: &Bound<'_, PyAny>, y: &Bound<'_, PyAny>, gamma: f64) -> PyResult<f64> {
    let k = KernelSpec::gaussian(gamma).map_err(value_err)?;
    mmdew::oracle::mmd_b2(&to_obs_list(x)?, &to_obs_list(y)?, &k).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (m, n, alpha, bound=1.0))]
fn epsilon_unequal(m: u64, n: u64, alpha: f64, bound: f64) -> PyResult<f64> {
    let c = TestConfig::new(alpha, bound, Correction::None).map_err(value_err)?;
    sigtest::epsilon_unequal(m, n, &c).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (m, alpha, bound=1.0))]
fn epsilon_equal(m: u64, alpha: f64, bound: f64) -> PyResult<f64> {
    let c = TestConfig::new(alpha, bound, Correction::None).map_err(value_err)?;
    sigtest::epsilon_equal(m, &c).map_err(value_err)
}

#[pyfunction]
fn xx_term_count(level: u32) -> u64 {
    mmdew::ewstore::xx_term_count(level)
}

#[pyfunction]
fn xy_term_count(level: u32) -> u64 {
    mmdew::ewstore::xy_term_count(level)
}

/// Scores detection times against true change points with tolerance `delta_t`.
#[pyfunction]
fn score<'py>(py: Python<'py>, detections: Vec<u64>, changes: Vec<u64>, delta_t: u64) -> PyResult<Bound<'py, PyDict>> {
    let r = bench::score(&detections, &changes, delta_t).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("precision", r.precision)?;
    d.set_item("precision_defined", r.precision_defined)?;
    d.set_item("recall", r.recall)?;
    d.set_item("f1", r.f1)?;
    d.set_item("mtd", r.mtd)?;
    d.set_item("pcd", r.pcd)?;
    d.set_item("delta_t", r.delta_t)?;
    d.set_item("tp", r.tp)?;
    d.set_item("fp", r.fp)?;
    d.set_item("fn", r.fn_)?;
    Ok(d)
}

#[pymodule]
pub fn pymmdew(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Detector>()?;
    m.add_function(wrap_pyfunction!(gaussian_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(median_heuristic, m)?)?;
    m.add_function(wrap_pyfunction!(mmd_b2, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_unequal, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_equal, m)?)?;
    m.add_function(wrap_pyfunction!(xx_term_count, m)?)?;
    m.add_function(wrap_pyfunction!(xy_term_count, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    Ok(())
}
