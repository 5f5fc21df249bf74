//! Python bindings: grids, potentials, eigenpairs, conditioned flows,
//! decay reports and particle simulations.
//!
//! Bad inputs raise `ValueError`; numerical failures raise `ArithmeticError`.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use qsd_core::analytics::{self, CdfiSettings, ClosedFormExample, ReportConfig};
use qsd_core::doob::{conditioned_flow as core_flow, FlowOptions};
use qsd_core::grid_measure;
use qsd_core::montecarlo::{self, Coordinate, SimConfig};
use qsd_core::potential::{cdfi_rate as core_cdfi, CdfiForm};
use qsd_core::spectral;

fn py_err(e: qsd_core::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for qsd_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Uniform grid of `n` interior nodes on `(x_min, x_max)`.
#[pyclass(frozen, skip_from_py_object, module = "qsd_lab")]
#[derive(Clone)]
struct Grid(qsd_core::Grid1D);

#[pymethods]
impl Grid {
    #[new]
    fn new(x_min: f64, x_max: f64, n: usize) -> PyResult<Self> {
        qsd_core::Grid1D::new(x_min, x_max, n).py().map(Grid)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.0.h()
    }

    fn nodes(&self) -> Vec<f64> {
        self.0.nodes()
    }

    fn __repr__(&self) -> String {
        format!("Grid({}, {}, {})", self.0.x_min(), self.0.x_max(), self.0.n())
    }
}

#[pyclass(frozen, skip_from_py_object, module = "qsd_lab")]
#[derive(Clone)]
struct Potential(qsd_core::PotentialSpec);

#[pymethods]
impl Potential {
    #[staticmethod]
    fn zero() -> Self {
        Potential(qsd_core::PotentialSpec::Zero)
    }

    #[staticmethod]
    fn quadratic(lam: f64) -> PyResult<Self> {
        qsd_core::PotentialSpec::quadratic(lam).py().map(Potential)
    }

    #[staticmethod]
    fn shifted_power(delta: f64) -> PyResult<Self> {
        qsd_core::PotentialSpec::shifted_power(delta).py().map(Potential)
    }

    /// `(V, V', V'')` at `x`.
    fn evaluate(&self, x: f64) -> PyResult<(f64, f64, f64)> {
        let p = self.0.evaluate(x).py()?;
        Ok((p.v, p.dv, p.d2v))
    }

    fn __repr__(&self) -> String {
        format!("Potential({})", self.0.id())
    }
}

/// Probability density on a grid.
#[pyclass(frozen, skip_from_py_object, module = "qsd_lab")]
#[derive(Clone)]
struct Measure(qsd_core::GridMeasure);

#[pymethods]
impl Measure {
    #[new]
    fn new(grid: &Grid, density: Vec<f64>) -> PyResult<Self> {
        qsd_core::GridMeasure::new(grid.0, density).py().map(Measure)
    }

    #[staticmethod]
    #[pyo3(signature = (grid, lo=None, hi=None))]
    fn uniform(grid: &Grid, lo: Option<f64>, hi: Option<f64>) -> PyResult<Self> {
        let g = grid.0;
        qsd_core::GridMeasure::uniform_on(g, lo.unwrap_or(g.x_min()), hi.unwrap_or(g.x_max())).py().map(Measure)
    }

    #[getter]
    fn density(&self) -> Vec<f64> {
        self.0.density().to_vec()
    }

    #[getter]
    fn grid(&self) -> Grid {
        Grid(*self.0.grid())
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn expectation(&self, f: Vec<f64>) -> PyResult<f64> {
        self.0.expectation(&f).py()
    }
}

#[pyclass(frozen, module = "qsd_lab")]
struct EigenPair {
    inner: qsd_core::EigenPair,
    spec: qsd_core::PotentialSpec,
}

#[pymethods]
impl EigenPair {
    #[getter]
    fn lambda0(&self) -> f64 {
        self.inner.lambda0()
    }

    #[getter]
    fn lambda1(&self) -> Option<f64> {
        self.inner.lambda1()
    }

    #[getter]
    fn gap(&self) -> Option<f64> {
        self.inner.gap()
    }

    #[getter]
    fn eta(&self) -> Vec<f64> {
        self.inner.eta().to_vec()
    }

    /// The quasi-stationary distribution `η·e^{−V}`, normalized.
    fn qsd(&self) -> PyResult<Measure> {
        spectral::qsd_from_eigen(&self.inner, &self.spec).py().map(Measure)
    }

    fn log_concavity_defect(&self) -> f64 {
        spectral::log_concavity_defect(&self.inner)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }
}

/// Principal eigenpair and gap of the absorbed generator on `grid`.
#[pyfunction]
fn solve_eigen(potential: &Potential, grid: &Grid) -> PyResult<EigenPair> {
    let op = spectral::assemble_generator(&potential.0, &grid.0).py()?;
    let inner = spectral::solve_eigen(&op).py()?;
    Ok(EigenPair { inner, spec: potential.0.clone() })
}

/// Conditioned law at time `t` and the survival probability up to `t`.
#[pyfunction]
#[pyo3(signature = (potential, mu, t, dt=None))]
fn conditioned_flow(potential: &Potential, mu: &Measure, t: f64, dt: Option<f64>) -> PyResult<(Measure, f64)> {
    let op = spectral::assemble_generator(&potential.0, mu.0.grid()).py()?;
    let opts = match dt {
        Some(dt) => FlowOptions::new(dt).py()?,
        None => FlowOptions::default_for(mu.0.grid(), spectral::principal_eigenpair(&op).py()?.lambda0()),
    };
    let s = core_flow(&op, &mu.0, t, &opts).py()?;
    Ok((Measure(s.mu_t), s.survival_weight))
}

#[pyfunction]
fn tv_distance(mu: &Measure, nu: &Measure) -> PyResult<f64> {
    grid_measure::tv_distance(&mu.0, &nu.0).py()
}

#[pyfunction]
fn w1_distance(mu: &Measure, nu: &Measure) -> PyResult<f64> {
    grid_measure::w1_distance(&mu.0, &nu.0).py()
}

#[pyfunction]
fn chi2_divergence(mu: &Measure, nu: &Measure) -> PyResult<f64> {
    grid_measure::chi2_divergence(&mu.0, &nu.0).py()
}

/// κ̃ for a λ₀ (lower bound); `form` is "basic" or "refined".
#[pyfunction]
#[pyo3(signature = (potential, lambda0, grid, form="refined"))]
fn cdfi_rate(potential: &Potential, lambda0: f64, grid: &Grid, form: &str) -> PyResult<f64> {
    let form = parse_form(form)?;
    Ok(core_cdfi(&potential.0, lambda0, &grid.0, form, None).py()?.value)
}

fn parse_form(form: &str) -> PyResult<CdfiForm> {
    match form {
        "basic" => Ok(CdfiForm::Basic),
        "refined" => Ok(CdfiForm::Refined),
        _ => Err(PyValueError::new_err(format!("form must be basic or refined, got {form}"))),
    }
}

/// Published constants of a closed-form example as a dict-ready tuple
/// `(lambda0, gap, kappa, alpha_inv_eta, prefactor_cd)`.
#[pyfunction]
#[pyo3(signature = (example, param=1.0, dim=1))]
fn closed_form_constants(example: &str, param: f64, dim: usize) -> PyResult<(f64, f64, f64, f64, Option<f64>)> {
    let c = example_of(example, param, dim)?.constants();
    Ok((c.lambda0, c.gap, c.kappa, c.alpha_inv_eta, c.prefactor_cd))
}

fn example_of(example: &str, param: f64, dim: usize) -> PyResult<ClosedFormExample> {
    match example {
        "brownian" => ClosedFormExample::brownian(param, dim).py(),
        "ou" => ClosedFormExample::ornstein_uhlenbeck(param, dim).py(),
        _ => Err(PyValueError::new_err(format!("example must be brownian or ou, got {example}"))),
    }
}

/// Decay report as a JSON string (`json.loads` it).
///
/// `example` ("brownian"/"ou") attaches the published κ; `lambda0_lower`
/// requests κ̃.
#[pyfunction]
#[pyo3(signature = (potential, mu, times, example=None, example_param=1.0, dt=None, lambda0_lower=None, fit_window=None))]
#[allow(clippy::too_many_arguments)]
fn decay_report(
    potential: &Potential,
    mu: &Measure,
    times: Vec<f64>,
    example: Option<&str>,
    example_param: f64,
    dt: Option<f64>,
    lambda0_lower: Option<f64>,
    fit_window: Option<(f64, f64)>,
) -> PyResult<String> {
    let mut cfg = ReportConfig::new(potential.0.family(), potential.0.clone(), mu.0.clone(), times);
    if let Some(e) = example {
        let ex = example_of(e, example_param, 1)?;
        cfg.id = ex.id().to_string();
        cfg.kappa_override = Some(ex.kappa());
    }
    if let Some(dt) = dt {
        cfg.flow = Some(FlowOptions::new(dt).py()?);
    }
    if lambda0_lower.is_some() {
        cfg.cdfi = Some(CdfiSettings { lambda0_lower, form: CdfiForm::Refined, probe: None });
    }
    cfg.fit_window = fit_window;
    analytics::decay_report(&cfg).py()?.to_json().py()
}

/// Particle simulation of one coordinate on `(lo, hi)`.
///
/// Returns `(positions, times, alive_fraction, lambda0_estimate)`; the
/// estimate fits the second half of the horizon and is `None` if that fails.
#[pyfunction]
#[pyo3(signature = (potential, mu, lo, hi, dt, horizon, n_particles, seed=0, resample=false))]
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn simulate(
    py: Python<'_>,
    potential: &Potential,
    mu: &Measure,
    lo: f64,
    hi: f64,
    dt: f64,
    horizon: f64,
    n_particles: usize,
    seed: u64,
    resample: bool,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>, Option<f64>)> {
    let coord = Coordinate::new(potential.0.clone(), lo, hi).py()?;
    let cfg = SimConfig::new(vec![coord], dt, horizon, n_particles, seed).py()?.with_resample(resample);
    let ens = py.detach(|| montecarlo::simulate_1d(&cfg, &mu.0)).py()?;
    let curve = ens.survival_curve();
    let est = montecarlo::estimate_lambda0(curve, (0.5 * horizon, horizon)).ok();
    Ok((
        ens.positions().to_vec(),
        curve.iter().map(|p| p.t).collect(),
        curve.iter().map(|p| p.alive_fraction).collect(),
        est.map(|e| e.lambda0),
    ))
}

#[pymodule]
fn qsd_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Grid>()?;
    m.add_class::<Potential>()?;
    m.add_class::<Measure>()?;
    m.add_class::<EigenPair>()?;
    m.add_function(wrap_pyfunction!(solve_eigen, m)?)?;
    m.add_function(wrap_pyfunction!(conditioned_flow, m)?)?;
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(w1_distance, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(cdfi_rate, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_constants, m)?)?;
    m.add_function(wrap_pyfunction!(decay_report, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
