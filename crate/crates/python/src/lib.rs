//! Python bindings: the catalog, sector bases, evolution, canonical tables,
//! the fitting routines and the batch runner.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use thermalab::analysis::{self, RelaxationOptions, TimeSeries};
use thermalab::basis::{build_sector_basis, Reflection, RingGeometry, SectorSpec, SymmetryBasis};
use thermalab::bloch::{self, BlochParams};
use thermalab::hamiltonian::{HamiltonianKernel, HamiltonianParams};
use thermalab::krylov::{evolve_and_measure, KrylovConfig};
use thermalab::observables::{self, ObservableSpec};
use thermalab::runner::{self, RunConfig};
use thermalab::thermal::{SpectrumTable, ThermalOptions};
use thermalab::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Domain(_) | Error::Resource(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn params(h_x: f64, h_z: f64) -> PyResult<HamiltonianParams> {
    HamiltonianParams::new(h_x, h_z).map_err(py_err)
}

fn specs(ids: &[String]) -> PyResult<Vec<ObservableSpec>> {
    ids.iter().map(|s| s.parse().map_err(py_err)).collect()
}

fn reflection(name: &str) -> PyResult<Reflection> {
    match name {
        "even" => Ok(Reflection::Even),
        "odd" => Ok(Reflection::Odd),
        "none" => Ok(Reflection::None),
        other => Err(PyValueError::new_err(format!("reflection must be even, odd or none, not {other:?}"))),
    }
}

/// A named product state from the bundled catalog.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct CatalogState {
    name: String,
    theta_over_pi: f64,
    phi_over_pi: f64,
    epsilon: f64,
    v: f64,
    v_tilde: Option<f64>,
    beta: Option<f64>,
}

#[pymethods]
impl CatalogState {
    fn __repr__(&self) -> String {
        format!("CatalogState({:?}, theta/pi={}, phi/pi={})", self.name, self.theta_over_pi, self.phi_over_pi)
    }
}

impl From<&bloch::CatalogEntry> for CatalogState {
    fn from(e: &bloch::CatalogEntry) -> Self {
        Self {
            name: e.name.clone(),
            theta_over_pi: e.theta_over_pi,
            phi_over_pi: e.phi_over_pi,
            epsilon: e.epsilon_ref,
            v: e.v_ref,
            v_tilde: e.v_tilde_ref,
            beta: e.beta_ref,
        }
    }
}

#[pyfunction]
fn catalog() -> Vec<CatalogState> {
    bloch::catalog().iter().map(CatalogState::from).collect()
}

#[pyfunction]
fn catalog_state(name: &str) -> PyResult<CatalogState> {
    bloch::catalog_entry(name).map(CatalogState::from).map_err(py_err)
}

/// `(ε, v)` of a product state, in closed form.
#[pyfunction]
#[pyo3(signature = (theta_over_pi, phi_over_pi, h_x=-1.05, h_z=0.5))]
fn bloch_energy(theta_over_pi: f64, phi_over_pi: f64, h_x: f64, h_z: f64) -> PyResult<(f64, f64)> {
    let d = bloch::bloch_variance_density(BlochParams::from_fractions(theta_over_pi, phi_over_pi), params(h_x, h_z)?);
    Ok((d.epsilon, d.variance))
}

/// Translation (and optionally reflection) symmetric basis of a ring.
#[pyclass(frozen)]
struct Basis {
    inner: Arc<SymmetryBasis>,
}

#[pymethods]
impl Basis {
    #[new]
    #[pyo3(signature = (sites, momentum=0, reflection="even"))]
    fn new(py: Python<'_>, sites: usize, momentum: usize, reflection: &str) -> PyResult<Self> {
        let sector = SectorSpec { momentum, reflection: self::reflection(reflection)? };
        let geometry = RingGeometry::new(sites).map_err(py_err)?;
        let inner = py.detach(|| build_sector_basis(geometry, sector)).map_err(py_err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    #[getter]
    fn sites(&self) -> usize {
        self.inner.sites()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn representatives(&self) -> Vec<u32> {
        self.inner.representatives().to_vec()
    }

    fn norms(&self) -> Vec<f64> {
        self.inner.norms().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        let s = self.inner.sector();
        format!(
            "Basis(sites={}, momentum={}, reflection={}, dim={})",
            self.inner.sites(),
            s.momentum,
            s.reflection.code(),
            self.inner.dim()
        )
    }
}

/// Measured time series of one quench.
#[pyclass(frozen, get_all)]
struct Trajectory {
    state: String,
    sites: usize,
    epsilon: f64,
    variance: f64,
    times: Vec<f64>,
    columns: BTreeMap<String, Vec<f64>>,
    complete: bool,
}

#[pymethods]
impl Trajectory {
    fn __getitem__(&self, id: &str) -> PyResult<Vec<f64>> {
        self.columns.get(id).cloned().ok_or_else(|| PyValueError::new_err(format!("no column {id:?}")))
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory({:?}, L={}, {} samples, columns={:?})",
            self.state,
            self.sites,
            self.times.len(),
            self.columns.keys().collect::<Vec<_>>()
        )
    }
}

/// Evolves a catalog state (or explicit angles) in the zero-momentum even sector.
#[pyfunction]
#[pyo3(signature = (state, sites, observables, t_final=100.0, dt=0.1, theta_over_pi=None, phi_over_pi=None, h_x=-1.05, h_z=0.5))]
#[allow(clippy::too_many_arguments)]
fn evolve(
    py: Python<'_>,
    state: &str,
    sites: usize,
    observables: Vec<String>,
    t_final: f64,
    dt: f64,
    theta_over_pi: Option<f64>,
    phi_over_pi: Option<f64>,
    h_x: f64,
    h_z: f64,
) -> PyResult<Trajectory> {
    let bp = match (theta_over_pi, phi_over_pi) {
        (Some(t), Some(p)) => BlochParams::from_fractions(t, p),
        (None, None) => bloch::catalog_entry(state).map_err(py_err)?.params(),
        _ => return Err(PyValueError::new_err("give both theta_over_pi and phi_over_pi, or neither")),
    };
    let schedule = specs(&observables)?;
    let h = params(h_x, h_z)?;
    let cfg = KrylovConfig { t_final, dt, ..KrylovConfig::default() };
    let record = py
        .detach(|| {
            let basis = Arc::new(build_sector_basis(RingGeometry::new(sites)?, SectorSpec::ZERO_EVEN)?);
            let kernel = HamiltonianKernel::new(basis.clone(), h);
            let psi = bloch::build_bloch_state(bp, &basis)?;
            evolve_and_measure(&kernel, &psi, &schedule, &cfg, state, None)
        })
        .map_err(py_err)?;
    let columns = record
        .observables
        .iter()
        .enumerate()
        .map(|(j, id)| (id.clone(), record.values.iter().map(|row| row[j]).collect()))
        .collect();
    Ok(Trajectory {
        state: state.to_string(),
        sites,
        epsilon: record.epsilon,
        variance: record.variance,
        complete: record.is_complete(),
        times: record.times,
        columns,
    })
}

/// Full spectrum of a ring, resolved by momentum, for canonical averages.
#[pyclass(frozen)]
struct ThermalTable {
    inner: SpectrumTable,
}

#[pymethods]
impl ThermalTable {
    #[new]
    #[pyo3(signature = (sites, l_max=3, observables=Vec::new(), h_x=-1.05, h_z=0.5, cache=None))]
    fn new(
        py: Python<'_>,
        sites: usize,
        l_max: usize,
        observables: Vec<String>,
        h_x: f64,
        h_z: f64,
        cache: Option<PathBuf>,
    ) -> PyResult<Self> {
        let extra = specs(&observables)?;
        let h = params(h_x, h_z)?;
        let options = ThermalOptions { l_max, ..ThermalOptions::default() };
        let inner = py
            .detach(|| {
                let mut registered = thermalab::thermal::default_thermal_observables(sites);
                registered.extend(extra);
                SpectrumTable::load_or_build(cache.as_deref(), RingGeometry::new(sites)?, h, &registered, &options)
            })
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn sites(&self) -> usize {
        self.inner.sites()
    }

    fn observables(&self) -> Vec<String> {
        self.inner.observables().to_vec()
    }

    fn energies(&self) -> Vec<f64> {
        self.inner.energies().to_vec()
    }

    /// Inverse temperature whose canonical energy density is `epsilon`.
    fn beta(&self, epsilon: f64) -> PyResult<f64> {
        self.inner.solve_beta(epsilon, None).map_err(py_err)
    }

    fn expectation(&self, observable: &str, beta: f64) -> PyResult<f64> {
        let spec: ObservableSpec = observable.parse().map_err(py_err)?;
        self.inner.thermal_expectation(&spec, beta).map_err(py_err)
    }

    /// Second derivative of the canonical value with respect to `epsilon`.
    fn second_derivative(&self, observable: &str, epsilon: f64) -> PyResult<f64> {
        let spec: ObservableSpec = observable.parse().map_err(py_err)?;
        self.inner.thermal_second_derivative(&spec, epsilon).map_err(py_err)
    }

    fn mutual_information(&self, beta: f64, l: usize, r: usize) -> PyResult<f64> {
        self.inner.thermal_mutual_information(beta, l, r).map_err(py_err)
    }
}

/// `(Ō, δO²)` over the trailing `fraction` of the series.
#[pyfunction]
#[pyo3(signature = (times, values, fraction=0.25))]
fn equilibrium(times: Vec<f64>, values: Vec<f64>, fraction: f64) -> PyResult<(f64, f64)> {
    let s = TimeSeries::new(times, values).map_err(py_err)?;
    let st = analysis::equilibrium_stats(&s, fraction).map_err(py_err)?;
    Ok((st.o_bar, st.delta_o2))
}

/// Exponential relaxation fit; returns the fit record as a dict.
#[pyfunction]
#[pyo3(signature = (times, values, window, fraction=0.25, r2_threshold=0.8))]
fn relaxation_time(
    py: Python<'_>,
    times: Vec<f64>,
    values: Vec<f64>,
    window: (f64, f64),
    fraction: f64,
    r2_threshold: f64,
) -> PyResult<Py<PyAny>> {
    let s = TimeSeries::new(times, values).map_err(py_err)?;
    let st = analysis::equilibrium_stats(&s, fraction).map_err(py_err)?;
    let opts = RelaxationOptions { r2_threshold, ..RelaxationOptions::default() };
    let fit = analysis::fit_relaxation_time(&s, &st, window, &opts).map_err(py_err)?;
    json_to_py(py, &serde_json::to_value(fit).map_err(|e| PyRuntimeError::new_err(e.to_string()))?)
}

#[pyfunction]
fn page_entropy(l: usize, sites: usize) -> PyResult<f64> {
    observables::page_entropy(l, sites).map_err(py_err)
}

/// Runs a TOML or JSON run configuration; returns the manifest as a dict.
#[pyfunction]
fn run(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig::parse(config).map_err(py_err)?;
    cfg.validate().map_err(py_err)?;
    let outcome = py.detach(|| runner::plan_and_execute(&cfg)).map_err(py_err)?;
    json_to_py(py, &serde_json::to_value(&outcome.manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))?)
}

/// Runs the acceptance criteria; returns `(id, name, passed, detail)` tuples.
#[pyfunction]
#[pyo3(signature = (output, only=Vec::new()))]
fn verify(py: Python<'_>, output: PathBuf, only: Vec<u32>) -> PyResult<Vec<(u32, String, bool, String)>> {
    let results = py.detach(|| runner::verify::run_verify(&output, &only)).map_err(py_err)?;
    Ok(results.into_iter().map(|r| (r.id, r.name.to_string(), r.passed, r.detail)).collect())
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (v.to_string(),))?.unbind())
}

#[pymodule]
#[pyo3(name = "thermalab")]
fn thermalab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<CatalogState>()?;
    m.add_class::<Basis>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<ThermalTable>()?;
    m.add_function(wrap_pyfunction!(catalog, m)?)?;
    m.add_function(wrap_pyfunction!(catalog_state, m)?)?;
    m.add_function(wrap_pyfunction!(bloch_energy, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(relaxation_time, m)?)?;
    m.add_function(wrap_pyfunction!(page_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
