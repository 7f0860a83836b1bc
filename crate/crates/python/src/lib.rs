//! Python bindings for `heatlab`.
//!
//! Spaces and fields are wrapped as classes; every report comes back as a
//! plain dict decoded from its JSON form.

use heatlab::dorronsoro::{self, DorroConfig, GammaChoice};
use heatlab::fields::{make_field, GridBox, TargetNorm};
use heatlab::{heat, lps, spaces, spectral, transport, Error, ScaleGrid};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::Serialize;

create_exception!(heatlab_py, InadmissibleError, PyException, "Numerically inadmissible request.");
create_exception!(heatlab_py, InvariantError, PyException, "Internal consistency check failed.");

fn err(e: Error) -> PyErr {
    match e {
        Error::Inadmissible(_) | Error::RejectionCollapse { .. } => InadmissibleError::new_err(e.to_string()),
        Error::Invariant(_) | Error::Io(_) => InvariantError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn report<'py, T: Serialize>(py: Python<'py>, value: heatlab::Result<T>) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(&value.map_err(err)?).map_err(|e| err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Accepts either a JSON string or any object `json.dumps` understands.
fn json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(s.to_string());
    }
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

fn target(p: f64) -> TargetNorm {
    if p == 2.0 {
        TargetNorm::euclidean()
    } else {
        TargetNorm::lp(p)
    }
}

#[pyclass(name = "NormedSpace", module = "heatlab_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySpace {
    inner: heatlab::NormedSpace,
}

#[pymethods]
impl PySpace {
    #[staticmethod]
    fn lp(dim: usize, p: f64) -> PyResult<Self> {
        Ok(Self {
            inner: heatlab::NormedSpace::lp(dim, p).map_err(err)?,
        })
    }

    #[staticmethod]
    fn euclidean(dim: usize) -> Self {
        Self {
            inner: heatlab::NormedSpace::euclidean(dim),
        }
    }

    #[staticmethod]
    fn weighted_lp(p: f64, weights: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: heatlab::NormedSpace::weighted_lp(p, weights).map_err(err)?,
        })
    }

    /// From a space descriptor, as a JSON string or dict.
    #[staticmethod]
    fn from_json(descriptor: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(Self {
            inner: heatlab::NormedSpace::from_json(&json_text(descriptor)?).map_err(err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn norm(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.norm(&x).map_err(err)
    }

    fn dual_norm(&self, a: Vec<f64>) -> PyResult<f64> {
        if a.len() != self.inner.dim() {
            return Err(err(Error::DimensionMismatch {
                expected: self.inner.dim(),
                got: a.len(),
            }));
        }
        Ok(self.inner.dual_norm(&a))
    }

    fn contains(&self, x: Vec<f64>) -> bool {
        x.len() == self.inner.dim() && self.inner.contains(&x)
    }

    fn descriptor<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        report(py, Ok(self.inner.descriptor()))
    }

    /// Returns the normalized space and the report (isotropic constant, volume).
    #[pyo3(signature = (count=100_000, seed=0))]
    fn isotropic_normalize<'py>(&self, py: Python<'py>, count: usize, seed: u64) -> PyResult<(Self, Bound<'py, PyAny>)> {
        let r = py.detach(|| spaces::isotropic_normalize(&self.inner, count, seed)).map_err(err)?;
        let space = Self { inner: r.space.clone() };
        Ok((space, report(py, Ok(r))?))
    }

    fn __repr__(&self) -> String {
        format!("NormedSpace({:?})", self.inner.descriptor())
    }
}

#[pyclass(name = "GridField", module = "heatlab_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyField {
    inner: heatlab::GridField,
}

#[pymethods]
impl PyField {
    /// Samples a test-function spec (JSON string or dict) on `[-half_width, half_width]^dim`.
    #[staticmethod]
    fn from_spec(spec: &Bound<'_, PyAny>, dim: usize, half_width: f64, res: usize) -> PyResult<Self> {
        let spec: heatlab::TestFunctionSpec = serde_json::from_str(&json_text(spec)?).map_err(|e| err(e.into()))?;
        Ok(Self {
            inner: make_field(&spec, GridBox::symmetric(dim, half_width), res).map_err(err)?,
        })
    }

    /// Values in row-major order with the output component fastest.
    #[staticmethod]
    #[pyo3(signature = (dim, half_width, res, values, dim_out=1))]
    fn from_values(dim: usize, half_width: f64, res: usize, values: Vec<f64>, dim_out: usize) -> PyResult<Self> {
        Ok(Self {
            inner: heatlab::GridField::new(GridBox::symmetric(dim, half_width), res, dim_out, values).map_err(err)?,
        })
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: heatlab::GridField::read(&path).map_err(err)?,
        })
    }

    fn write(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.write(&path, None).map_err(err)
    }

    #[getter]
    fn dim_in(&self) -> usize {
        self.inner.dim_in()
    }

    #[getter]
    fn dim_out(&self) -> usize {
        self.inner.dim_out()
    }

    #[getter]
    fn res(&self) -> usize {
        self.inner.res()
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.inner.spacing()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[pyo3(signature = (q=2.0, target_p=2.0))]
    fn lq_norm(&self, q: f64, target_p: f64) -> f64 {
        self.inner.lq_norm(q, target(target_p))
    }

    /// Heat evolute `H_t f`; returns `(values, gradient)` fields.
    fn heat(&self, py: Python<'_>, t: f64) -> PyResult<(Self, Self)> {
        let e = py.detach(|| heat::heat_convolve(&self.inner, t)).map_err(err)?;
        Ok((Self { inner: e.values }, Self { inner: e.gradient }))
    }

    /// Poisson evolute `P_t f`; returns `(values, gradient)` fields.
    fn poisson(&self, py: Python<'_>, t: f64) -> PyResult<(Self, Self)> {
        let e = py.detach(|| heat::poisson_convolve(&self.inner, t)).map_err(err)?;
        Ok((Self { inner: e.values }, Self { inner: e.gradient }))
    }

    fn __repr__(&self) -> String {
        format!(
            "GridField(dim_in={}, dim_out={}, res={}, spacing={})",
            self.inner.dim_in(),
            self.inner.dim_out(),
            self.inner.res(),
            self.inner.spacing()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (space, p=1.0, count=100_000, seed=0))]
fn invariant_m_p<'py>(py: Python<'py>, space: &PySpace, p: f64, count: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    report(py, py.detach(|| spaces::invariant_m_p(&space.inner, p, count, seed)))
}

#[pyfunction]
#[pyo3(signature = (space, q=2.0, count=100_000, seed=0))]
fn invariant_i_q<'py>(py: Python<'py>, space: &PySpace, q: f64, count: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    report(py, py.detach(|| spaces::invariant_i_q(&space.inner, q, count, seed)))
}

#[pyfunction]
#[pyo3(signature = (space, starts=64, seed=0))]
fn invariant_b<'py>(py: Python<'py>, space: &PySpace, starts: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    report(py, Ok(py.detach(|| spaces::invariant_b(&space.inner, starts, seed))))
}

#[pyfunction]
#[pyo3(signature = (space, count=100_000, seed=0))]
fn volume<'py>(py: Python<'py>, space: &PySpace, count: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    report(py, py.detach(|| spaces::volume(&space.inner, count, seed)))
}

#[pyfunction]
#[pyo3(signature = (space, p, count=100_000, seed=0))]
fn gaussian_norm_moment<'py>(py: Python<'py>, space: &PySpace, p: f64, count: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    report(py, py.detach(|| spaces::gaussian_norm_moment(&space.inner, p, count, seed)))
}

#[pyfunction]
#[pyo3(signature = (space, p=1.0, q=2.0, count=100_000, seed=0))]
fn product_lower_bound<'py>(py: Python<'py>, space: &PySpace, p: f64, q: f64, count: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    report(py, py.detach(|| spaces::product_lower_bound(&space.inner, p, q, count, seed)))
}

#[pyfunction]
#[pyo3(signature = (n, t=1.0))]
fn heat_time_derivative_l1<'py>(py: Python<'py>, n: usize, t: f64) -> PyResult<Bound<'py, PyAny>> {
    report(py, heat::heat_time_derivative_l1(n, t))
}

#[pyfunction]
#[pyo3(signature = (field, q=2.0, target_p=2.0, per_decade=12))]
fn temporal_g<'py>(py: Python<'py>, field: &PyField, q: f64, target_p: f64, per_decade: usize) -> PyResult<Bound<'py, PyAny>> {
    let f = &field.inner;
    report(py, py.detach(|| lps::temporal_g(f, q, target(target_p), &ScaleGrid::for_heat(f, per_decade))))
}

#[pyfunction]
#[pyo3(signature = (field, alpha, q=2.0, target_p=2.0, per_decade=12))]
fn difference_g<'py>(
    py: Python<'py>,
    field: &PyField,
    alpha: f64,
    q: f64,
    target_p: f64,
    per_decade: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let f = &field.inner;
    let grid = ScaleGrid::for_heat(f, per_decade).scaled(1.0 / alpha);
    report(py, py.detach(|| lps::difference_g(f, alpha, q, target(target_p), &grid)))
}

#[pyfunction]
#[pyo3(signature = (field, z, q=2.0, target_p=2.0, per_decade=12))]
fn directional_g<'py>(
    py: Python<'py>,
    field: &PyField,
    z: Vec<f64>,
    q: f64,
    target_p: f64,
    per_decade: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let f = &field.inner;
    report(py, py.detach(|| lps::directional_g(f, &z, q, target(target_p), &ScaleGrid::for_heat(f, per_decade))))
}

#[pyfunction]
#[pyo3(signature = (q=2.0, m=1, target_p=2.0, depth=8, trials=1000, seed=0))]
fn pisier_martingale_test<'py>(
    py: Python<'py>,
    q: f64,
    m: usize,
    target_p: f64,
    depth: usize,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    report(py, py.detach(|| lps::pisier_martingale_test(q, m, target(target_p), depth, trials, seed)))
}

fn dorro_config(space: Option<&PySpace>, field: &heatlab::GridField, q: f64, gamma: Option<f64>, ball_samples: usize, seed: u64) -> DorroConfig {
    let space = space.map_or_else(|| heatlab::NormedSpace::euclidean(field.dim_in()), |s| s.inner.clone());
    let base = DorroConfig::new(space, q);
    DorroConfig {
        gamma: gamma.map_or(GammaChoice::Auto, GammaChoice::Fixed),
        ball_samples,
        seed,
        ..base
    }
}

/// Carleson functional; `gamma=None` picks the optimal γ for the field.
#[pyfunction]
#[pyo3(signature = (field, space=None, q=2.0, gamma=None, ball_samples=256, seed=0))]
fn carleson_functional<'py>(
    py: Python<'py>,
    field: &PyField,
    space: Option<&PySpace>,
    q: f64,
    gamma: Option<f64>,
    ball_samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = dorro_config(space, &field.inner, q, gamma, ball_samples, seed);
    report(py, py.detach(|| dorronsoro::carleson_functional(&field.inner, &cfg)))
}

#[pyfunction]
#[pyo3(signature = (field, space=None, q=2.0, gamma=None, ball_samples=256, seed=0))]
fn j_split<'py>(
    py: Python<'py>,
    field: &PyField,
    space: Option<&PySpace>,
    q: f64,
    gamma: Option<f64>,
    ball_samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = dorro_config(space, &field.inner, q, gamma, ball_samples, seed);
    report(py, py.detach(|| dorronsoro::j_split(&field.inner, &cfg)))
}

#[pyfunction]
#[pyo3(signature = (field, epsilon, space=None, q=2.0, seed=0))]
fn affine_search<'py>(
    py: Python<'py>,
    field: &PyField,
    epsilon: f64,
    space: Option<&PySpace>,
    q: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = dorro_config(space, &field.inner, q, None, 256, seed);
    report(py, py.detach(|| dorronsoro::affine_search(&field.inner, epsilon, &cfg)))
}

#[pyfunction]
fn k_constant<'py>(py: Python<'py>, n: usize, gamma: f64) -> PyResult<Bound<'py, PyAny>> {
    report(py, py.detach(|| spectral::k_constant(n, gamma)))
}

#[pyfunction]
#[pyo3(signature = (field, gamma, ball_samples=256, seed=0))]
fn verify_heat_identity<'py>(py: Python<'py>, field: &PyField, gamma: f64, ball_samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    report(py, py.detach(|| spectral::verify_heat_identity(&field.inner, gamma, ball_samples, seed)))
}

#[pyfunction]
#[pyo3(signature = (n, gamma, cutoffs=vec![1e-1, 1e-2, 1e-3, 1e-4]))]
fn poisson_divergence_scan<'py>(py: Python<'py>, n: usize, gamma: f64, cutoffs: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    report(py, py.detach(|| spectral::poisson_divergence_scan(n, gamma, &cutoffs)))
}

/// Exact W₁ between two discrete measures of equal mass, in the norm of `space`.
#[pyfunction]
fn w1_distance<'py>(
    py: Python<'py>,
    space: &PySpace,
    points_a: Vec<Vec<f64>>,
    weights_a: Vec<f64>,
    points_b: Vec<Vec<f64>>,
    weights_b: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mu = transport::DiscreteMeasure::new(points_a, weights_a).map_err(err)?;
    let nu = transport::DiscreteMeasure::new(points_b, weights_b).map_err(err)?;
    report(py, py.detach(|| transport::w1_distance(&mu, &nu, &space.inner)))
}

/// Norm of the affine projection on `L₂(B_X)` for an isotropically normalized space.
#[pyfunction]
#[pyo3(signature = (space, l_x, directions=64, atoms=300, seed=0))]
fn proj_norm_estimate<'py>(
    py: Python<'py>,
    space: &PySpace,
    l_x: f64,
    directions: usize,
    atoms: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    report(py, py.detach(|| transport::proj_norm_estimate(&space.inner, l_x, directions, atoms, seed)))
}

#[pymodule]
fn heatlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", heatlab::ARTIFACT_VERSION)?;
    m.add("InadmissibleError", m.py().get_type::<InadmissibleError>())?;
    m.add("InvariantError", m.py().get_type::<InvariantError>())?;
    m.add_class::<PySpace>()?;
    m.add_class::<PyField>()?;
    m.add_function(wrap_pyfunction!(invariant_m_p, m)?)?;
    m.add_function(wrap_pyfunction!(invariant_i_q, m)?)?;
    m.add_function(wrap_pyfunction!(invariant_b, m)?)?;
    m.add_function(wrap_pyfunction!(volume, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_norm_moment, m)?)?;
    m.add_function(wrap_pyfunction!(product_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(heat_time_derivative_l1, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_g, m)?)?;
    m.add_function(wrap_pyfunction!(difference_g, m)?)?;
    m.add_function(wrap_pyfunction!(directional_g, m)?)?;
    m.add_function(wrap_pyfunction!(pisier_martingale_test, m)?)?;
    m.add_function(wrap_pyfunction!(carleson_functional, m)?)?;
    m.add_function(wrap_pyfunction!(j_split, m)?)?;
    m.add_function(wrap_pyfunction!(affine_search, m)?)?;
    m.add_function(wrap_pyfunction!(k_constant, m)?)?;
    m.add_function(wrap_pyfunction!(verify_heat_identity, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_divergence_scan, m)?)?;
    m.add_function(wrap_pyfunction!(w1_distance, m)?)?;
    m.add_function(wrap_pyfunction!(proj_norm_estimate, m)?)?;
    Ok(())
}
