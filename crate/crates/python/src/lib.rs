//! Python bindings. Parameters, distributions, generators and trajectory
//! records are wrapped as classes; the analysis operations are module-level
//! functions mirroring the Rust API. Exact rationals come back as
//! `fractions.Fraction`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyTuple};

use subrad_core as core;
use subrad_core::closedform::BigRational;
use subrad_core::{Channel, Level};

fn to_py_err(err: core::Error) -> PyErr {
    match err {
        core::Error::InvalidParams(_)
        | core::Error::InvalidLevel { .. }
        | core::Error::IndexOutOfRange { .. }
        | core::Error::DimensionMismatch { .. }
        | core::Error::NegativeWeight { .. }
        | core::Error::EmptyWindow { .. }
        | core::Error::TooFewEvents { .. }
        | core::Error::DarkState => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for core::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

type RateRow = (String, (u32, i32), f64);
type EventRow = (f64, String, u32, i32, u32, i32);
type CurrentRow = (u32, i32, u32, i32, f64);

fn level(j: u32, m: i32) -> Level {
    Level::new(j, m)
}

#[pyclass(name = "ModelParams", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyModelParams(core::ModelParams);

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (n, w, gamma = core::DEFAULT_GAMMA))]
    fn new(n: u32, w: f64, gamma: f64) -> PyResult<Self> {
        core::ModelParams::new(n, w, gamma).map(Self).py_err()
    }

    #[getter]
    fn n(&self) -> u32 {
        self.0.n()
    }

    #[getter]
    fn w(&self) -> f64 {
        self.0.w()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma()
    }

    #[getter]
    fn j_max(&self) -> u32 {
        self.0.j_max()
    }

    #[getter]
    fn state_count(&self) -> usize {
        self.0.state_count()
    }

    fn index_of(&self, j: u32, m: i32) -> PyResult<usize> {
        self.0.index_of(level(j, m)).py_err()
    }

    fn level_of(&self, index: usize) -> PyResult<(u32, i32)> {
        self.0.level_of(index).map(|l| (l.j, l.m)).py_err()
    }

    /// Outgoing channels of `(j, m)` as `(channel, (j', m'), rate)`.
    fn rates(&self, j: u32, m: i32) -> PyResult<Vec<RateRow>> {
        let from = level(j, m);
        self.0.check(from).py_err()?;
        Ok(core::local_rates(&self.0, from)
            .iter()
            .map(|t| (t.channel.name().to_string(), (t.target.j, t.target.m), t.rate))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelParams(n={}, w={}, gamma={})",
            self.0.n(),
            self.0.w(),
            self.0.gamma()
        )
    }
}

#[pyclass(name = "Distribution", frozen, from_py_object)]
#[derive(Clone)]
struct PyDistribution(core::Distribution);

#[pymethods]
impl PyDistribution {
    #[staticmethod]
    #[pyo3(signature = (params, weights, normalize = true))]
    fn from_weights(params: PyModelParams, weights: Vec<f64>, normalize: bool) -> PyResult<Self> {
        core::Distribution::from_weights(params.0, weights, normalize)
            .map(Self)
            .py_err()
    }

    #[staticmethod]
    fn point_mass(params: PyModelParams, j: u32, m: i32) -> PyResult<Self> {
        core::Distribution::point_mass(params.0, level(j, m)).map(Self).py_err()
    }

    #[staticmethod]
    fn uniform(params: PyModelParams) -> Self {
        Self(core::Distribution::uniform(params.0))
    }

    #[getter]
    fn params(&self) -> PyModelParams {
        PyModelParams(*self.0.params())
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights().to_vec()
    }

    fn get(&self, j: u32, m: i32) -> f64 {
        self.0.get(level(j, m))
    }

    fn total(&self) -> f64 {
        self.0.total()
    }

    fn boundary_mass(&self) -> f64 {
        self.0.boundary_mass()
    }

    fn j_marginal(&self) -> Vec<f64> {
        self.0.j_marginal()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Generator", frozen)]
struct PyGenerator(core::Generator);

#[pymethods]
impl PyGenerator {
    #[new]
    fn new(params: PyModelParams) -> Self {
        Self(core::Generator::build(&params.0))
    }

    #[getter]
    fn params(&self) -> PyModelParams {
        PyModelParams(*self.0.params())
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.0.dimension()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.0.nnz()
    }

    fn max_exit_rate(&self) -> f64 {
        self.0.max_exit_rate()
    }

    /// `Q x` for a weight vector `x`.
    fn apply(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.apply(&x).py_err()
    }
}

#[pyclass(name = "JumpRecord", frozen)]
struct PyJumpRecord(core::JumpRecord);

#[pymethods]
impl PyJumpRecord {
    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn rng(&self) -> String {
        self.0.rng.clone()
    }

    #[getter]
    fn t_end(&self) -> f64 {
        self.0.t_end
    }

    #[getter]
    fn absorbed(&self) -> bool {
        self.0.absorbed
    }

    /// Events as `(t, channel, j_from, m_from, j_to, m_to)`.
    #[pyo3(signature = (channel = None))]
    fn events(&self, channel: Option<&str>) -> PyResult<Vec<EventRow>> {
        let filter = parse_channel(channel)?;
        Ok(self
            .0
            .events
            .iter()
            .filter(|e| filter.is_none_or(|c| e.channel == c))
            .map(|e| (e.t, e.channel.name().to_string(), e.from.j, e.from.m, e.to.j, e.to.m))
            .collect())
    }

    fn __len__(&self) -> usize {
        self.0.events.len()
    }
}

fn parse_channel(name: Option<&str>) -> PyResult<Option<Channel>> {
    name.map(|n| n.parse::<Channel>().py_err()).transpose()
}

fn fraction<'py>(py: Python<'py>, r: &BigRational) -> PyResult<Bound<'py, PyAny>> {
    py.import("fractions")?.getattr("Fraction")?.call1((r.to_string(),))
}

#[pyfunction]
fn steady_state(gen: &PyGenerator) -> PyResult<PyDistribution> {
    core::steady_state(&gen.0).map(PyDistribution).py_err()
}

#[pyfunction]
fn residual(gen: &PyGenerator, dist: &PyDistribution) -> PyResult<f64> {
    core::residual(&gen.0, &dist.0).py_err()
}

#[pyfunction]
fn entropy_rates<'py>(py: Python<'py>, gen: &PyGenerator, dist: &PyDistribution) -> PyResult<Bound<'py, PyDict>> {
    let report = core::entropy_rates(&gen.0, &dist.0).py_err()?;
    let d = PyDict::new(py);
    d.set_item("s_tot", report.s_tot)?;
    d.set_item("s_e", report.s_e)?;
    d.set_item("s_i", report.s_i)?;
    d.set_item("s_i_per_atom", report.s_i_per_atom(dist.0.params()))?;
    d.set_item("n_edges_skipped", report.n_edges_skipped)?;
    Ok(d)
}

/// Net currents as `(j_from, m_from, j_to, m_to, W)`.
#[pyfunction]
fn currents(gen: &PyGenerator, dist: &PyDistribution) -> PyResult<Vec<CurrentRow>> {
    let field = core::currents(&gen.0, &dist.0).py_err()?;
    Ok(field
        .edges()
        .iter()
        .map(|e| (e.from.j, e.from.m, e.to.j, e.to.m, e.w))
        .collect())
}

#[pyfunction]
fn detailed_balance_check<'py>(
    py: Python<'py>,
    gen: &PyGenerator,
    dist: &PyDistribution,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let check = core::detailed_balance_check(&gen.0, &dist.0, tol).py_err()?;
    let d = PyDict::new(py);
    d.set_item("balanced", check.balanced)?;
    d.set_item("max_violation", check.max_violation)?;
    d.set_item("flux_weighted_violation", check.flux_weighted_violation)?;
    d.set_item("worst_edge", check.worst_edge.map(|(a, b)| ((a.j, a.m), (b.j, b.m))))?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (gen, dist, tau, method = "uniformization"))]
fn evolve(gen: &PyGenerator, dist: &PyDistribution, tau: f64, method: &str) -> PyResult<PyDistribution> {
    let method = match method {
        "uniformization" => core::Propagator::Uniformization,
        "dense" => core::Propagator::DenseExponential,
        other => return Err(PyValueError::new_err(format!("unknown method `{other}`"))),
    };
    let settings = core::PropagationSettings {
        method,
        ..Default::default()
    };
    core::evolve(&gen.0, &dist.0, tau, &settings)
        .map(PyDistribution)
        .py_err()
}

#[pyfunction]
fn observables<'py>(py: Python<'py>, dist: &PyDistribution) -> PyResult<Bound<'py, PyDict>> {
    let o = core::observables(&dist.0);
    let d = PyDict::new(py);
    d.set_item("intensity", o.intensity)?;
    d.set_item("inversion", o.inversion)?;
    d.set_item("mean_j", o.mean_j)?;
    d.set_item("mean_m", o.mean_m)?;
    d.set_item("boundary_mass", o.boundary_mass)?;
    Ok(d)
}

#[pyfunction]
fn jump_map(dist: &PyDistribution) -> PyDistribution {
    PyDistribution(core::jump_map(&dist.0))
}

#[pyfunction]
fn g2(gen: &PyGenerator, steady: &PyDistribution, taus: Vec<f64>) -> PyResult<Vec<f64>> {
    core::g2(&gen.0, &steady.0, &taus).py_err()
}

/// Gillespie trajectory; starts in the all-ground state unless `initial`
/// gives `(j, m)`.
#[pyfunction]
#[pyo3(signature = (params, t_max, seed, initial = None))]
fn simulate(params: PyModelParams, t_max: f64, seed: u64, initial: Option<(u32, i32)>) -> PyResult<PyJumpRecord> {
    let start = initial.map_or_else(|| core::kmc::default_initial(&params.0), |(j, m)| level(j, m));
    core::simulate(&params.0, start, t_max, seed).map(PyJumpRecord).py_err()
}

#[pyfunction]
fn occupancy(record: &PyJumpRecord, t_burn: f64) -> PyResult<PyDistribution> {
    core::occupancy(&record.0, t_burn).map(PyDistribution).py_err()
}

#[pyfunction]
#[pyo3(signature = (record, window, t_burn, channel = None))]
fn burst_stats<'py>(
    py: Python<'py>,
    record: &PyJumpRecord,
    window: f64,
    t_burn: f64,
    channel: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let s = core::burst_stats(&record.0, parse_channel(channel)?, window, t_burn).py_err()?;
    let d = PyDict::new(py);
    d.set_item("n_events", s.n_events)?;
    d.set_item("n_windows", s.n_windows)?;
    d.set_item("mean_count", s.mean_count)?;
    d.set_item("variance", s.variance)?;
    d.set_item("fano", s.fano)?;
    let bins: Vec<(f64, f64, u64)> = s.waiting_times.iter().map(|b| (b.lo, b.hi, b.count)).collect();
    d.set_item("waiting_times", bins)?;
    Ok(d)
}

#[pyfunction]
fn boundary_recursion(params: PyModelParams) -> PyResult<Vec<f64>> {
    core::boundary_recursion(&params.0).map(|b| b.p).py_err()
}

/// `(mu, sigma2)` of the large-N Gaussian law of J.
#[pyfunction]
fn gaussian_limit(params: PyModelParams) -> PyResult<(f64, f64)> {
    core::gaussian_limit(&params.0).map(|g| (g.mu, g.sigma2)).py_err()
}

#[pyfunction]
fn ratio_table(py: Python<'_>, j: u32) -> PyResult<Bound<'_, PyAny>> {
    fraction(py, &core::ratio_table(j).py_err()?)
}

#[pyfunction]
fn finite_n_ratio(py: Python<'_>, n: u32, j: u32) -> PyResult<Bound<'_, PyAny>> {
    fraction(py, &core::finite_n_ratio(n, j).py_err()?)
}

#[pyfunction]
fn small_w_populations(py: Python<'_>) -> PyResult<Bound<'_, PyTuple>> {
    let items = core::small_w_populations()
        .iter()
        .map(|r| fraction(py, r))
        .collect::<PyResult<Vec<_>>>()?;
    PyTuple::new(py, items)
}

#[pymodule]
fn subrad(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyJumpRecord>()?;
    m.add_function(wrap_pyfunction!(steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(residual, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_rates, m)?)?;
    m.add_function(wrap_pyfunction!(currents, m)?)?;
    m.add_function(wrap_pyfunction!(detailed_balance_check, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(observables, m)?)?;
    m.add_function(wrap_pyfunction!(jump_map, m)?)?;
    m.add_function(wrap_pyfunction!(g2, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(occupancy, m)?)?;
    m.add_function(wrap_pyfunction!(burst_stats, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_recursion, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_limit, m)?)?;
    m.add_function(wrap_pyfunction!(ratio_table, m)?)?;
    m.add_function(wrap_pyfunction!(finite_n_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(small_w_populations, m)?)?;
    m.add("DEFAULT_GAMMA", core::DEFAULT_GAMMA)?;
    Ok(())
}
