//! Python bindings for `geosphere`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use geosphere::constants::ConstantTable;
use geosphere::perturbation::{barycenter_normalize, random_band_limited, Term};
use geosphere::quadrature::{RuleSpec, SphereRule};
use geosphere::spectral::SpectralBounds;
use geosphere::stability::{check_both, run_campaign as run, second_variation_probe, CampaignConfig};

fn err(e: geosphere::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts any serializable value to Python objects through `json.loads`.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn build_rule(rule: Option<&str>, space: geosphere::SpaceSpec) -> PyResult<SphereRule> {
    let spec = match rule {
        Some(s) => geosphere::cli::parse_rule(s).map_err(PyValueError::new_err)?,
        None => RuleSpec::default_for(space.n()),
    };
    spec.build(space.n()).map_err(err)
}

/// A rank-one symmetric space such as `CH2`.
#[pyclass(name = "Space", frozen, eq, hash, skip_from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash)]
struct PySpace(geosphere::SpaceSpec);

#[pymethods]
impl PySpace {
    #[new]
    fn new(label: &str) -> PyResult<Self> {
        label.parse().map(PySpace).map_err(err)
    }

    #[staticmethod]
    fn builtin() -> Vec<PySpace> {
        geosphere::SpaceSpec::builtin().into_iter().map(PySpace).collect()
    }

    #[getter]
    fn label(&self) -> String {
        self.0.label()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    fn phi_deriv(&self, r: f64, k: u32) -> PyResult<f64> {
        self.0.kernels().phi_deriv(r, k).map_err(err)
    }

    fn volume_density(&self, r: f64) -> f64 {
        self.0.kernels().volume_density(r)
    }

    fn ball_volume(&self, radius: f64) -> f64 {
        self.0.kernels().ball_volume(radius)
    }

    fn ball_perimeter(&self, radius: f64) -> f64 {
        self.0.kernels().ball_perimeter(radius)
    }

    fn spectral_bounds<'py>(&self, py: Python<'py>, radius: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &SpectralBounds::new(self.0, radius).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Space('{}')", self.0.label())
    }
}

/// Band-limited radial perturbation of a geodesic sphere.
#[pyclass(name = "Perturbation", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPerturbation(geosphere::perturbation::Perturbation);

#[pymethods]
impl PyPerturbation {
    /// `terms` is a list of `(degree, index, coeff)`.
    #[new]
    #[pyo3(signature = (space, radius, terms, seed=None))]
    fn new(space: &PySpace, radius: f64, terms: Vec<(usize, usize, f64)>, seed: Option<u64>) -> PyResult<Self> {
        let terms: Vec<Term> = terms.into_iter().map(|(degree, index, coeff)| Term { degree, index, coeff }).collect();
        geosphere::perturbation::Perturbation::new(space.0, radius, &terms, seed)
            .map(PyPerturbation)
            .map_err(err)
    }

    /// Random band-limited perturbation, volume and barycenter normalized.
    #[staticmethod]
    #[pyo3(signature = (space, radius, band_limit, amplitude, seed, rule=None))]
    fn random(space: &PySpace, radius: f64, band_limit: usize, amplitude: f64, seed: u64, rule: Option<&str>) -> PyResult<Self> {
        let rule = build_rule(rule, space.0)?;
        let p = random_band_limited(space.0, radius, band_limit, amplitude, seed, &rule).map_err(err)?;
        barycenter_normalize(space.0, &p, &rule).map(PyPerturbation).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        geosphere::perturbation::Perturbation::from_json(text).map(PyPerturbation).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[getter]
    fn space(&self) -> PySpace {
        PySpace(self.0.space())
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.0.radius()
    }

    #[getter]
    fn terms(&self) -> Vec<(usize, usize, f64)> {
        self.0.terms().into_iter().map(|t| (t.degree, t.index, t.coeff)).collect()
    }

    fn evaluate(&self, phi: Vec<f64>) -> PyResult<f64> {
        if phi.len() != self.0.space().n() {
            return Err(PyValueError::new_err(format!("expected {} coordinates", self.0.space().n())));
        }
        Ok(self.0.evaluate(&phi))
    }

    fn scaled(&self, t: f64) -> PyResult<Self> {
        self.0.scaled(t).map(PyPerturbation).map_err(err)
    }

    /// Theorem and intermediate checks; returns a dict with both reports.
    #[pyo3(signature = (r0=None, rule=None))]
    fn verify<'py>(&self, py: Python<'py>, r0: Option<f64>, rule: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let space = self.0.space();
        let rule = build_rule(rule, space)?;
        let table = ConstantTable::compute(space, r0.unwrap_or(self.0.radius()), self.0.radius()).map_err(err)?;
        let (theorem1, intermediate) = check_both(space, &self.0, &rule, &table).map_err(err)?;
        to_py(py, &serde_json::json!({ "theorem1": theorem1, "intermediate": intermediate }))
    }

    /// `deficit(t p) / t^2` along this direction.
    #[pyo3(signature = (t, rule=None))]
    fn probe<'py>(&self, py: Python<'py>, t: Vec<f64>, rule: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let space = self.0.space();
        let rule = build_rule(rule, space)?;
        to_py(py, &second_variation_probe(space, &self.0, &t, &rule).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Perturbation({}, R={}, {} terms)", self.0.space(), self.0.radius(), self.0.terms().len())
    }
}

/// Constants table as a dict.
#[pyfunction]
#[pyo3(signature = (space, r0, radius=None))]
fn constants<'py>(py: Python<'py>, space: &PySpace, r0: f64, radius: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &ConstantTable::compute(space.0, r0, radius.unwrap_or(r0)).map_err(err)?)
}

/// Runs a campaign from its JSON config; returns `(aggregate, records)`.
#[pyfunction]
fn run_campaign<'py>(py: Python<'py>, config: &str) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let config: CampaignConfig = geosphere::cli::parse_config(config).map_err(err)?;
    let report = py.detach(|| run(&config)).map_err(err)?;
    Ok((to_py(py, &report.aggregate)?, to_py(py, &report.records)?))
}

#[pymodule]
fn pygeosphere(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpace>()?;
    m.add_class::<PyPerturbation>()?;
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
