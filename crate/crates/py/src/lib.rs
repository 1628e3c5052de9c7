//! Python module `hvsg`. Result records come back as plain dicts.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use hvsg_core::bell::{self, Dichotomizer, WingSetting};
use hvsg_core::eigenbasis::{self, AngularLadder, Axis};
use hvsg_core::measurement::{self, Method};
use hvsg_core::microdynamics;
use hvsg_core::packets::{self, final_wave};
use hvsg_core::rng::batched;
use hvsg_core::trajectories::{self, TrajectoryOptions};

fn core_err(e: hvsg_core::Error) -> PyErr {
    use hvsg_core::Error as E;
    match e {
        E::InvalidParameter(_) | E::Config(_) | E::Sampler(_) | E::Json(_) | E::Domain(_) => {
            PyValueError::new_err(e.to_string())
        }
        E::Integrity(_) | E::Format(_) | E::Io(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn axis(v: [f64; 3]) -> PyResult<Axis> {
    Axis::new(v).map_err(core_err)
}

#[pyclass(name = "SternGerlachSetup", module = "hvsg", from_py_object)]
#[derive(Clone, Copy)]
struct PySetup {
    inner: packets::SternGerlachSetup,
}

#[pymethods]
impl PySetup {
    #[new]
    #[pyo3(signature = (mu=10.0, interaction_time=1.0, flight_time=4.0, atom_mass=1.0, sigma_x0=1.0, sigma_z0=1.0, hbar=1.0, electron_scale=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        mu: f64,
        interaction_time: f64,
        flight_time: f64,
        atom_mass: f64,
        sigma_x0: f64,
        sigma_z0: f64,
        hbar: f64,
        electron_scale: f64,
    ) -> PyResult<Self> {
        let inner = packets::SternGerlachSetup {
            mu,
            interaction_time,
            flight_time,
            atom_mass,
            sigma_x0,
            sigma_z0,
            hbar,
            electron_scale,
        };
        inner.validate().map_err(core_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    #[getter]
    fn flight_time(&self) -> f64 {
        self.inner.flight_time
    }

    fn momentum_kick(&self, omega: f64) -> f64 {
        self.inner.momentum_kick(omega)
    }

    fn branch_center(&self, omega: f64) -> f64 {
        self.inner.branch_center(omega)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("SternGerlachSetup({:?})", self.inner)
    }
}

#[pyclass(name = "AngularState", module = "hvsg", skip_from_py_object)]
#[derive(Clone)]
struct PyState {
    inner: eigenbasis::AngularState,
}

#[pymethods]
impl PyState {
    /// Coefficients in ascending `m`; they are normalised unless `normalize` is false.
    #[new]
    #[pyo3(signature = (j, coeffs, hbar=1.0, normalize=true))]
    fn new(j: f64, coeffs: Vec<Complex64>, hbar: f64, normalize: bool) -> PyResult<Self> {
        let ladder = AngularLadder::new(j, hbar).map_err(core_err)?;
        let inner = if normalize {
            eigenbasis::AngularState::normalized(ladder, coeffs)
        } else {
            eigenbasis::AngularState::new(ladder, coeffs)
        }
        .map_err(core_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn j(&self) -> f64 {
        self.inner.ladder().j()
    }

    #[getter]
    fn coeffs(&self) -> Vec<Complex64> {
        self.inner.coeffs().to_vec()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.ladder().eigenvalues().to_vec()
    }

    fn probabilities(&self) -> Vec<f64> {
        self.inner.probabilities()
    }

    fn mean_eigenvalue(&self) -> f64 {
        self.inner.mean_eigenvalue()
    }

    /// The same state expressed in the eigenbasis along `axis`.
    fn rotated(&self, axis: [f64; 3]) -> PyResult<Self> {
        Ok(Self {
            inner: eigenbasis::rotate_state(&self.inner, &self::axis(axis)?),
        })
    }

    fn __repr__(&self) -> String {
        format!("AngularState(j={}, coeffs={:?})", self.inner.ladder().j(), self.inner.coeffs())
    }
}

#[pyclass(name = "BipartiteState", module = "hvsg", skip_from_py_object)]
#[derive(Clone)]
struct PyBipartite {
    inner: bell::BipartiteState,
}

#[pymethods]
impl PyBipartite {
    #[staticmethod]
    fn singlet() -> Self {
        Self {
            inner: bell::BipartiteState::singlet(),
        }
    }

    #[staticmethod]
    fn zero_total(j: f64) -> PyResult<Self> {
        Ok(Self {
            inner: bell::BipartiteState::zero_total(j).map_err(core_err)?,
        })
    }

    #[staticmethod]
    fn product(a: &PyState, b: &PyState) -> PyResult<Self> {
        Ok(Self {
            inner: bell::BipartiteState::product(&a.inner, &b.inner).map_err(core_err)?,
        })
    }

    /// `P(m1, m2)` for wing axes `axis1`, `axis2`, rows for wing 1.
    #[pyo3(signature = (axis1, axis2, setup=None))]
    fn joint_probabilities(&self, axis1: [f64; 3], axis2: [f64; 3], setup: Option<PySetup>) -> PyResult<Vec<Vec<f64>>> {
        let s = setup.map(|s| s.inner).unwrap_or_default();
        let p = bell::joint_born_probabilities(
            &self.inner,
            &WingSetting::new(axis(axis1)?, s),
            &WingSetting::new(axis(axis2)?, s),
        );
        Ok((0..p.rows).map(|a| (0..p.cols).map(|b| p.get(a, b)).collect()).collect())
    }
}

#[pyfunction]
fn wigner_small_d(j: f64, beta: f64) -> PyResult<Vec<Vec<f64>>> {
    let ladder = AngularLadder::new(j, 1.0).map_err(core_err)?;
    Ok(eigenbasis::wigner_small_d(ladder.two_j(), beta))
}

/// `n` draws of `dS - dA` under `gamma`.
#[pyfunction]
fn sample_deviations(gamma: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    batched(seed, n, |rng, _| microdynamics::sample_deviation(gamma, rng).map(|d| d.deviation))
        .into_iter()
        .collect::<Result<Vec<f64>, _>>()
        .map_err(core_err)
}

#[pyfunction]
fn branch_centers(state: &PyState, setup: &PySetup) -> Vec<f64> {
    final_wave(&setup.inner, &state.inner).centers()
}

#[pyfunction]
fn classical_pointer(l_z: f64, setup: &PySetup) -> f64 {
    trajectories::classical_pointer(l_z, &setup.inner)
}

#[pyfunction]
#[pyo3(signature = (state, setup, n, seed, method="static-sampling"))]
fn born_estimate<'py>(
    py: Python<'py>,
    state: &PyState,
    setup: &PySetup,
    n: usize,
    seed: u64,
    method: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let method: Method = serde_json::from_value(serde_json::Value::String(method.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown method {method:?}")))?;
    let est = measurement::born_estimate(&state.inner, &setup.inner, n, seed, method).map_err(core_err)?;
    to_py(py, &est)
}

#[pyfunction]
fn measure_along_axis<'py>(
    py: Python<'py>,
    state: &PyState,
    axis: [f64; 3],
    setup: &PySetup,
    n: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let est = measurement::measure_along_axis(&state.inner, &self::axis(axis)?, &setup.inner, n, seed)
        .map_err(core_err)?;
    to_py(py, &est)
}

#[pyfunction]
fn actual_vs_outcome_average<'py>(
    py: Python<'py>,
    state: &PyState,
    setup: &PySetup,
    n: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let r = measurement::actual_vs_outcome_average(&state.inner, &setup.inner, n, seed).map_err(core_err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (state, setup, n, seed, velocity_scale=1.0))]
fn equivariance_test<'py>(
    py: Python<'py>,
    state: &PyState,
    setup: &PySetup,
    n: usize,
    seed: u64,
    velocity_scale: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = TrajectoryOptions {
        velocity_scale,
        ..Default::default()
    };
    let r = trajectories::equivariance_test(&state.inner, &setup.inner, n, seed, &opts).map_err(core_err)?;
    to_py(py, &r)
}

/// Final pointer positions of an `n`-member trajectory ensemble.
#[pyfunction]
fn final_pointers(state: &PyState, setup: &PySetup, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let ens = trajectories::run_ensemble(&state.inner, &setup.inner, n, seed, &TrajectoryOptions::default())
        .map_err(core_err)?;
    Ok(ens.final_pointers())
}

/// CHSH with all four axes in the x-z plane at polar angles `(a, a', b, b')`.
#[pyfunction]
#[pyo3(signature = (state, angles, n, seed, setup=None))]
fn chsh<'py>(
    py: Python<'py>,
    state: &PyBipartite,
    angles: [f64; 4],
    n: usize,
    seed: u64,
    setup: Option<PySetup>,
) -> PyResult<Bound<'py, PyAny>> {
    let settings = bell::ChshSettings::in_plane(angles, setup.map(|s| s.inner).unwrap_or_default());
    let r = bell::chsh(&state.inner, &settings, n, seed, &Dichotomizer::default()).map_err(core_err)?;
    to_py(py, &r)
}

#[pymodule]
fn hvsg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySetup>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PyBipartite>()?;
    m.add_function(wrap_pyfunction!(wigner_small_d, m)?)?;
    m.add_function(wrap_pyfunction!(sample_deviations, m)?)?;
    m.add_function(wrap_pyfunction!(branch_centers, m)?)?;
    m.add_function(wrap_pyfunction!(classical_pointer, m)?)?;
    m.add_function(wrap_pyfunction!(born_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(measure_along_axis, m)?)?;
    m.add_function(wrap_pyfunction!(actual_vs_outcome_average, m)?)?;
    m.add_function(wrap_pyfunction!(equivariance_test, m)?)?;
    m.add_function(wrap_pyfunction!(final_pointers, m)?)?;
    m.add_function(wrap_pyfunction!(chsh, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
