//! Python bindings: fields, norms, noise, the Picard solver and experiment runs.

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use skdv_core::convolution::ito_convolution;
use skdv_core::estimates::{near_curve_integral, resonance_identity_sweep};
use skdv_core::experiment::{run, ExperimentConfig};
use skdv_core::noise::{
    gauge_reduce, sample_brownian_family, sample_spatial_white_noise, CovarianceOp, PhiKind,
    TimeGrid,
};
use skdv_core::norms::{besov_norm, restricted_norm, sobolev_norm, xsbpq_norm, Exponent, NormSpec};
use skdv_core::solver::{adaptive_window, energy, picard_solve, SolveConfig};
use skdv_core::spectral::{project_mean_zero, SpaceTimeField, SpectralField, TorusGrid};
use skdv_core::Error;

create_exception!(skdv, SkdvError, PyException);

fn err(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter { .. } | Error::Config { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => SkdvError::new_err(format!("{}: {other}", other.code())),
    }
}

/// `q` as a float; `inf` selects the supremum.
fn exponent(q: f64) -> Exponent {
    if q.is_infinite() {
        Exponent::Infinite
    } else {
        Exponent::Finite(q)
    }
}

/// Real field on the torus truncated to `|n| <= n_max`.
#[pyclass(name = "SpectralField", module = "skdv", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySpectralField(SpectralField);

#[pymethods]
impl PySpectralField {
    /// Coefficients for `n = -n_max..=n_max`.
    #[new]
    fn new(coefficients: Vec<Complex64>) -> PyResult<Self> {
        if coefficients.len().is_multiple_of(2) {
            return Err(PyValueError::new_err("need 2*n_max + 1 coefficients"));
        }
        let grid = TorusGrid::new(coefficients.len() / 2).map_err(err)?;
        Ok(Self(
            SpectralField::from_coeffs(grid, coefficients).map_err(err)?,
        ))
    }

    #[staticmethod]
    #[pyo3(signature = (n_max, mode = 1, amplitude = 1.0))]
    fn cosine(n_max: usize, mode: usize, amplitude: f64) -> PyResult<Self> {
        Ok(Self(SpectralField::cosine(
            TorusGrid::new(n_max).map_err(err)?,
            mode,
            amplitude,
        )))
    }

    /// Spatial white noise; `mean_zero` drops the `n = 0` mode.
    #[staticmethod]
    #[pyo3(signature = (n_max, seed, mean_zero = false))]
    fn white_noise(n_max: usize, seed: u64, mean_zero: bool) -> PyResult<Self> {
        let w = sample_spatial_white_noise(TorusGrid::new(n_max).map_err(err)?, seed);
        Ok(Self(if mean_zero { project_mean_zero(&w) } else { w }))
    }

    #[getter]
    fn n_max(&self) -> usize {
        self.0.grid().n_max()
    }

    fn coefficients(&self) -> Vec<Complex64> {
        self.0.coeffs().to_vec()
    }

    fn coefficient(&self, n: i64) -> Complex64 {
        self.0.coeff(n)
    }

    #[pyo3(signature = (s, p, q = f64::INFINITY))]
    fn besov_norm(&self, s: f64, p: f64, q: f64) -> PyResult<f64> {
        besov_norm(&self.0, &NormSpec::besov(s, p, exponent(q))).map_err(err)
    }

    fn sobolev_norm(&self, s: f64) -> f64 {
        sobolev_norm(&self.0, s)
    }

    /// Samples on `len` equispaced points of `[0, 2π)`.
    fn to_physical(&self, len: usize) -> PyResult<Vec<f64>> {
        Ok(self
            .0
            .to_physical(len)
            .map_err(err)?
            .iter()
            .map(|z| z.re)
            .collect())
    }

    fn __add__(&self, other: &Self) -> PyResult<Self> {
        Ok(Self(self.0.add(&other.0).map_err(err)?))
    }

    fn __sub__(&self, other: &Self) -> PyResult<Self> {
        Ok(Self(self.0.sub(&other.0).map_err(err)?))
    }

    fn __mul__(&self, c: f64) -> Self {
        Self(self.0.scaled(c))
    }

    fn __repr__(&self) -> String {
        format!("SpectralField(n_max={})", self.n_max())
    }
}

/// Field sampled on a uniform time grid.
#[pyclass(name = "SpaceTimeField", module = "skdv", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySpaceTimeField(SpaceTimeField);

#[pymethods]
impl PySpaceTimeField {
    #[getter]
    fn n_max(&self) -> usize {
        self.0.grid().n_max()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt()
    }

    fn times(&self) -> Vec<f64> {
        (0..self.0.n_times()).map(|k| self.0.time(k)).collect()
    }

    fn __len__(&self) -> usize {
        self.0.n_times()
    }

    fn snapshot(&self, k: usize) -> PyResult<PySpectralField> {
        if k >= self.0.n_times() {
            return Err(PyValueError::new_err(format!(
                "time index {k} out of range"
            )));
        }
        Ok(PySpectralField(self.0.snapshot(k)))
    }

    fn mode_series(&self, n: i64) -> Vec<Complex64> {
        self.0.mode_series(n)
    }

    /// `∫|u(t_k)|² dx`.
    fn energy(&self, k: usize) -> f64 {
        energy(&self.0, k)
    }

    /// `X^{s,b}_{p,q}` norm, restricted to `[0, window]` when given.
    #[pyo3(signature = (s, b, p = 2.0, q = 2.0, window = None))]
    fn xsbpq_norm(&self, s: f64, b: f64, p: f64, q: f64, window: Option<f64>) -> PyResult<f64> {
        let spec = NormSpec::xsbpq(s, b, p, exponent(q));
        match window {
            Some(t) => Ok(restricted_norm(&self.0, &spec.restricted(t))
                .map_err(err)?
                .value),
            None => xsbpq_norm(&self.0, &spec).map_err(err),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "SpaceTimeField(n_max={}, n_times={}, dt={})",
            self.n_max(),
            self.0.n_times(),
            self.dt()
        )
    }
}

/// Outcome of a Picard solve.
#[pyclass(name = "Trajectory", module = "skdv", frozen, get_all)]
struct PyTrajectory {
    u: Py<PySpaceTimeField>,
    residuals: Vec<f64>,
    window: f64,
    converged: bool,
    halved_count: usize,
}

/// Itô stochastic convolution of `φ = Id` off the mean, on `[0, steps·dt]`.
#[pyfunction]
#[pyo3(signature = (n_max, dt, steps, seed, phi = "identity_off_mean"))]
fn stochastic_convolution(
    n_max: usize,
    dt: f64,
    steps: usize,
    seed: u64,
    phi: &str,
) -> PyResult<PySpaceTimeField> {
    let kind = match phi {
        "identity_off_mean" => PhiKind::IdentityOffMean,
        "phi_of_beta0" => PhiKind::PhiOfBeta0,
        other => return Err(PyValueError::new_err(format!("unknown phi {other:?}"))),
    };
    let grid = TorusGrid::new(n_max).map_err(err)?;
    let family = sample_brownian_family(n_max, TimeGrid::new(dt, steps).map_err(err)?, seed);
    let op = CovarianceOp::build(&kind, &family);
    Ok(PySpaceTimeField(
        ito_convolution(&op, &family, grid).map_err(err)?.field,
    ))
}

/// Picard iteration for the mild formulation.
///
/// With `noise_seed`, the equation is driven by space-time white noise and
/// solved in the gauge-reduced variable; `adaptive` picks the window by
/// measured contraction.
#[pyfunction]
#[pyo3(signature = (u0, dt, window, tolerance = 1e-10, max_sweeps = 60, noise_seed = None, adaptive = false, regime_check = true))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    u0: &PySpectralField,
    dt: f64,
    window: f64,
    tolerance: f64,
    max_sweeps: usize,
    noise_seed: Option<u64>,
    adaptive: bool,
    regime_check: bool,
) -> PyResult<PyTrajectory> {
    let n_max = u0.0.grid().n_max();
    let mut cfg = SolveConfig::new(n_max, dt, window);
    cfg.tolerance = tolerance;
    cfg.max_sweeps = max_sweeps;
    cfg.regime_check = regime_check;
    let (data, forcing) = match noise_seed {
        None => (u0.0.clone(), None),
        Some(seed) => {
            let family = sample_brownian_family(
                n_max,
                TimeGrid::covering(window.max(2.0), dt).map_err(err)?,
                seed,
            );
            let (v0, phi, _) = gauge_reduce(&u0.0, &family);
            let f = ito_convolution(&phi, &family, u0.0.grid())
                .map_err(err)?
                .field;
            (v0, Some(f))
        }
    };
    if adaptive {
        cfg.window = adaptive_window(&data, forcing.as_ref(), &cfg)
            .map_err(err)?
            .window;
    }
    let t = picard_solve(&data, forcing.as_ref(), &cfg).map_err(err)?;
    Ok(PyTrajectory {
        u: Py::new(py, PySpaceTimeField(t.u))?,
        residuals: t.residuals,
        window: t.window,
        converged: t.converged,
        halved_count: t.halved_count,
    })
}

/// Exhaustive check of the cubic resonance identities for `|n_i| <= bound`.
#[pyfunction]
fn resonance_sweep<'py>(py: Python<'py>, bound: i64) -> PyResult<Bound<'py, PyDict>> {
    let r = resonance_identity_sweep(bound).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("passed", r.passed)?;
    d.set_item("pairs", r.pairs)?;
    d.set_item("triples", r.triples)?;
    d.set_item("witnesses", r.witnesses.len())?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (n, c = 1.0, window = 1e10))]
fn near_curve(n: i64, c: f64, window: f64) -> PyResult<f64> {
    near_curve_integral(n, c, (-window, window)).map_err(err)
}

/// Runs an experiment file given as TOML text; returns the run directory and
/// per-cell statuses.
#[pyfunction]
#[pyo3(signature = (config, workers = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: &str,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_toml_str(config).map_err(err)?;
    let summary = run(&cfg, workers).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("dir", summary.dir.display().to_string())?;
    d.set_item("config_hash", &summary.manifest.config_hash)?;
    let statuses: Vec<(String, String)> = summary
        .reports
        .iter()
        .map(|r| (r.kind.clone(), r.status.clone()))
        .collect();
    d.set_item("cells", statuses)?;
    Ok(d)
}

#[pymodule]
fn skdv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SkdvError", m.py().get_type::<SkdvError>())?;
    m.add_class::<PySpectralField>()?;
    m.add_class::<PySpaceTimeField>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(stochastic_convolution, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(resonance_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(near_curve, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
