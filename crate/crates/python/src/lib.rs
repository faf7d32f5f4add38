//! Python bindings.
//!
//! Signals and codes cross the boundary as flat lists of Python `complex`
//! in vectorization order; their shapes come from the dictionary they are
//! used with.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sarsc_core::dictionary::{build_freq_dictionary, signal_to_image_domain, to_image_domain, Domain};
use sarsc_core::forward::{random_scene, scene_to_sparse_code, synthesize_echo, ScatteringCenter, SceneSpec};
use sarsc_core::geometry::{self as geo, ComplexSignal, RadarGeometry, SignalLayout, SparseCode};
use sarsc_core::linalg::spectral_norm_sqr;
use sarsc_core::metrics::{default_magnitude_threshold, DEFAULT_POSITION_TOL};
use sarsc_core::solvers::{self, SolverConfig, SolverSpec, DEFAULT_LAMBDA, DEFAULT_OMP_ATOMS};
use sarsc_core::training::{train_unfolded, TrainConfig};
use sarsc_core::{io, metrics, pipeline, Complex64, Error};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_numerical() => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for sarsc_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

#[pyclass(name = "Geometry", module = "sarsc", frozen)]
struct PyGeometry(RadarGeometry);

#[pymethods]
impl PyGeometry {
    /// Square X-band benchmark with `n` samples on every axis.
    #[staticmethod]
    fn benchmark(n: usize) -> PyResult<Self> {
        RadarGeometry::benchmark(n).py().map(Self)
    }

    /// Grid spacing equal to the resolution cell, centred on the origin.
    #[staticmethod]
    fn matched(
        center_frequency: f64,
        bandwidth: f64,
        n_freq: usize,
        n_aspect: usize,
        n_x: usize,
        n_y: usize,
    ) -> PyResult<Self> {
        RadarGeometry::matched(center_frequency, bandwidth, n_freq, n_aspect, n_x, n_y)
            .py()
            .map(Self)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        RadarGeometry::from_json(text).py().map(Self)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().py()
    }

    #[getter]
    fn n_freq(&self) -> usize {
        self.0.n_freq
    }

    #[getter]
    fn n_aspect(&self) -> usize {
        self.0.n_aspect
    }

    #[getter]
    fn n_x(&self) -> usize {
        self.0.n_x
    }

    #[getter]
    fn n_y(&self) -> usize {
        self.0.n_y
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.0.n_samples()
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.0.n_cells()
    }

    /// Stable 64-bit digest used to tag dictionaries and scenes.
    #[getter]
    fn hash(&self) -> u64 {
        self.0.hash64()
    }

    fn __eq__(&self, other: PyRef<'_, Self>) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!(
            "Geometry(n_freq={}, n_aspect={}, n_x={}, n_y={})",
            self.0.n_freq, self.0.n_aspect, self.0.n_x, self.0.n_y
        )
    }
}

#[pyclass(name = "Dictionary", module = "sarsc", frozen)]
struct PyDictionary(sarsc_core::dictionary::Dictionary);

#[pymethods]
impl PyDictionary {
    /// `domain` is `"image"` (the default used by the solvers) or `"freq"`.
    #[new]
    #[pyo3(signature = (geometry, domain = "image"))]
    fn new(geometry: PyRef<'_, PyGeometry>, domain: &str) -> PyResult<Self> {
        let freq = build_freq_dictionary(&geometry.0).py()?;
        match domain {
            "freq" => Ok(Self(freq)),
            "image" => to_image_domain(&freq, &geometry.0).py().map(Self),
            other => Err(PyValueError::new_err(format!("domain must be 'image' or 'freq', got {other:?}"))),
        }
    }

    #[staticmethod]
    fn load(path: &str, geometry: PyRef<'_, PyGeometry>) -> PyResult<Self> {
        io::read_scdt(path.as_ref(), &geometry.0).py().map(Self)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_scdt(path.as_ref(), &self.0).py()
    }

    #[getter]
    fn rows(&self) -> usize {
        self.0.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.0.cols()
    }

    #[getter]
    fn domain(&self) -> &'static str {
        match self.0.domain() {
            Domain::Frequency => "freq",
            Domain::Image => "image",
        }
    }

    fn column(&self, j: usize) -> PyResult<Vec<Complex64>> {
        if j >= self.0.cols() {
            return Err(PyValueError::new_err(format!("column {j} out of range for {} columns", self.0.cols())));
        }
        Ok(self.0.column(j).to_vec())
    }

    /// Largest eigenvalue of `DᴴD`, the Lipschitz constant of the data term.
    fn lipschitz(&self) -> f64 {
        spectral_norm_sqr(self.0.matrix(), 500, 1e-10)
    }

    /// `D z` as a signal in the dictionary's domain.
    fn reconstruct(&self, code: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        let z = self.code(code)?;
        solvers::reconstruct(&self.0, &z).py().map(ComplexSignal::into_values)
    }
}

impl PyDictionary {
    fn signal(&self, values: Vec<Complex64>) -> PyResult<ComplexSignal> {
        ComplexSignal::new(values, self.0.signal_layout(), self.0.sample_dims()).py()
    }

    fn code(&self, values: Vec<Complex64>) -> PyResult<SparseCode> {
        SparseCode::new(values, self.0.grid_dims()).py()
    }
}

#[pyclass(name = "Scene", module = "sarsc", frozen)]
struct PyScene(sarsc_core::forward::Scene);

#[pymethods]
impl PyScene {
    /// `centers` holds `(amplitude, x, y)` triples.
    #[new]
    #[pyo3(signature = (geometry, centers, snr_db = None, noise_seed = 0))]
    fn new(
        geometry: PyRef<'_, PyGeometry>,
        centers: Vec<(Complex64, f64, f64)>,
        snr_db: Option<f64>,
        noise_seed: u64,
    ) -> Self {
        let centers = centers
            .into_iter()
            .map(|(amplitude, x, y)| ScatteringCenter { amplitude, x, y })
            .collect();
        let scene = sarsc_core::forward::Scene::new(geometry.0.clone(), centers);
        Self(match snr_db {
            Some(snr) => scene.with_noise(snr, noise_seed),
            None => scene,
        })
    }

    /// Scatterers on distinct grid nodes with random magnitude and phase.
    #[staticmethod]
    #[pyo3(signature = (geometry, n_centers = 5, snr_db = None, seed = 0))]
    fn random(geometry: PyRef<'_, PyGeometry>, n_centers: usize, snr_db: Option<f64>, seed: u64) -> PyResult<Self> {
        let spec = SceneSpec {
            n_centers,
            snr_db,
            ..SceneSpec::default()
        };
        random_scene(&geometry.0, &spec, seed).py().map(Self)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        sarsc_core::forward::Scene::from_json(text).py().map(Self)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().py()
    }

    #[getter]
    fn geometry(&self) -> PyGeometry {
        PyGeometry(self.0.geometry.clone())
    }

    #[getter]
    fn centers(&self) -> Vec<(Complex64, f64, f64)> {
        self.0.centers.iter().map(|c| (c.amplitude, c.x, c.y)).collect()
    }

    #[getter]
    fn snr_db(&self) -> Option<f64> {
        self.0.noise_snr_db
    }

    /// Frequency-aspect echo, noisy when the scene carries an SNR.
    #[pyo3(signature = (noiseless = false))]
    fn echo(&self, noiseless: bool) -> PyResult<Vec<Complex64>> {
        let scene = if noiseless { self.0.noiseless() } else { self.0.clone() };
        synthesize_echo(&scene).py().map(ComplexSignal::into_values)
    }

    /// The echo mapped to the image domain, ready for the solvers.
    #[pyo3(signature = (noiseless = false))]
    fn image(&self, noiseless: bool) -> PyResult<Vec<Complex64>> {
        let scene = if noiseless { self.0.noiseless() } else { self.0.clone() };
        let echo = synthesize_echo(&scene).py()?;
        signal_to_image_domain(&echo, &scene.geometry)
            .py()
            .map(ComplexSignal::into_values)
    }

    /// Ground-truth code with each amplitude on its nearest grid node.
    fn sparse_code(&self) -> PyResult<Vec<Complex64>> {
        scene_to_sparse_code(&self.0).py().map(|z| z.values().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Scene(centers={}, snr_db={:?})", self.0.centers.len(), self.0.noise_snr_db)
    }
}

#[pyclass(name = "UnfoldedParams", module = "sarsc", frozen)]
struct PyUnfoldedParams(solvers::UnfoldedParams);

#[pymethods]
impl PyUnfoldedParams {
    #[new]
    fn new(step_sizes: Vec<f64>, thresholds: Vec<f64>) -> PyResult<Self> {
        solvers::UnfoldedParams::new(step_sizes, thresholds).py().map(Self)
    }

    #[staticmethod]
    fn constant(n_stages: usize, step: f64, threshold: f64) -> PyResult<Self> {
        solvers::UnfoldedParams::constant(n_stages, step, threshold).py().map(Self)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        solvers::UnfoldedParams::from_json(text).py().map(Self)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().py()
    }

    #[getter]
    fn step_sizes(&self) -> Vec<f64> {
        self.0.step_sizes().to_vec()
    }

    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.0.thresholds().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.n_stages()
    }

    fn __repr__(&self) -> String {
        format!(
            "UnfoldedParams(step_sizes={:?}, thresholds={:?})",
            self.0.step_sizes(),
            self.0.thresholds()
        )
    }
}

#[pyclass(name = "SolveResult", module = "sarsc", frozen, get_all)]
struct PySolveResult {
    code: Vec<Complex64>,
    objective: f64,
    iterations: usize,
    wall_time: f64,
    nnz: usize,
    dropped_atoms: Vec<usize>,
}

#[pymethods]
impl PySolveResult {
    fn __repr__(&self) -> String {
        format!(
            "SolveResult(objective={:e}, iterations={}, nnz={})",
            self.objective, self.iterations, self.nnz
        )
    }
}

fn run(d: &PyDictionary, signal: Vec<Complex64>, spec: SolverSpec) -> PyResult<PySolveResult> {
    let s = d.signal(signal)?;
    let r = spec.solve(&d.0, &s).py()?;
    Ok(PySolveResult {
        nnz: r.nnz(),
        objective: r.objective,
        iterations: r.iterations,
        wall_time: r.wall_time,
        dropped_atoms: r.dropped_atoms,
        code: r.code.values().to_vec(),
    })
}

/// Complex soft threshold `x · max(0, 1 − rho/|x|)` applied elementwise.
#[pyfunction]
fn soft_threshold(values: Vec<Complex64>, rho: f64) -> PyResult<Vec<Complex64>> {
    values.into_iter().map(|x| geo::soft_threshold(x, rho).py()).collect()
}

/// Iterative soft thresholding. `step` defaults to `0.9 / L` and
/// `threshold` to `step · lam / 2`; `tol = 0` runs every iteration.
#[pyfunction]
#[pyo3(signature = (dictionary, signal, step = None, threshold = None, lam = DEFAULT_LAMBDA, max_iters = None, tol = None))]
fn ista(
    dictionary: PyRef<'_, PyDictionary>,
    signal: Vec<Complex64>,
    step: Option<f64>,
    threshold: Option<f64>,
    lam: f64,
    max_iters: Option<usize>,
    tol: Option<f64>,
) -> PyResult<PySolveResult> {
    let defaults = SolverConfig::default();
    let opts = pipeline::SolverOptions {
        lambda: lam,
        step,
        threshold,
        max_iters: max_iters.unwrap_or(defaults.max_iters),
        tol: tol.unwrap_or(defaults.tol),
        ..pipeline::SolverOptions::default()
    };
    let spec = pipeline::solver_spec(solvers::SolverKind::Ista, &dictionary.0, &opts).py()?;
    run(&dictionary, signal, spec)
}

/// A fixed number of soft-thresholding stages with per-stage parameters.
#[pyfunction]
#[pyo3(signature = (dictionary, signal, params, lam = DEFAULT_LAMBDA))]
fn unfolded(
    dictionary: PyRef<'_, PyDictionary>,
    signal: Vec<Complex64>,
    params: PyRef<'_, PyUnfoldedParams>,
    lam: f64,
) -> PyResult<PySolveResult> {
    let spec = SolverSpec::Unfolded {
        params: params.0.clone(),
        lambda: lam,
    };
    run(&dictionary, signal, spec)
}

/// Orthogonal matching pursuit selecting at most `k_atoms` columns.
#[pyfunction]
#[pyo3(signature = (dictionary, signal, k_atoms = DEFAULT_OMP_ATOMS))]
fn omp(dictionary: PyRef<'_, PyDictionary>, signal: Vec<Complex64>, k_atoms: usize) -> PyResult<PySolveResult> {
    run(&dictionary, signal, SolverSpec::Omp { k_atoms })
}

/// Approximate message passing for the same objective as `ista`.
#[pyfunction]
#[pyo3(signature = (dictionary, signal, lam = DEFAULT_LAMBDA, max_iters = None, tol = None))]
fn amp(
    dictionary: PyRef<'_, PyDictionary>,
    signal: Vec<Complex64>,
    lam: f64,
    max_iters: Option<usize>,
    tol: Option<f64>,
) -> PyResult<PySolveResult> {
    let defaults = SolverConfig::default();
    let config = SolverConfig {
        lambda: lam,
        max_iters: max_iters.unwrap_or(defaults.max_iters),
        tol: tol.unwrap_or(defaults.tol),
        ..defaults
    };
    config.validate().py()?;
    run(&dictionary, signal, SolverSpec::Amp { config })
}

/// PSNR in dB between two images of `dictionary`'s sample shape.
#[pyfunction]
fn psnr(dictionary: PyRef<'_, PyDictionary>, reference: Vec<Complex64>, estimate: Vec<Complex64>) -> PyResult<f64> {
    let r = dictionary.signal(reference)?;
    let e = dictionary.signal(estimate)?;
    metrics::psnr(&r, &e).py()
}

/// Precision and recall of the recovered support against the scene.
#[pyfunction]
#[pyo3(signature = (scene, code, magnitude_threshold = None, position_tol = DEFAULT_POSITION_TOL))]
fn support_match<'py>(
    py: Python<'py>,
    scene: PyRef<'_, PyScene>,
    code: Vec<Complex64>,
    magnitude_threshold: Option<f64>,
    position_tol: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let g = &scene.0.geometry;
    let z = SparseCode::new(code, (g.n_x, g.n_y)).py()?;
    let thr = magnitude_threshold.unwrap_or_else(|| default_magnitude_threshold(&z));
    let rep = metrics::support_match(&scene.0, &z, thr, position_tol).py()?;
    let out = PyDict::new(py);
    out.set_item("precision", rep.precision)?;
    out.set_item("recall", rep.recall)?;
    out.set_item("matched", rep.matched_pairs.len())?;
    out.set_item("magnitude_threshold", rep.magnitude_threshold)?;
    out.set_item("no_detections", rep.no_detections)?;
    Ok(out)
}

/// Map a frequency-aspect echo to the image domain.
#[pyfunction]
fn echo_to_image(geometry: PyRef<'_, PyGeometry>, echo: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
    let g = &geometry.0;
    let s = ComplexSignal::new(echo, SignalLayout::EchoFreqDomain, (g.n_freq, g.n_aspect)).py()?;
    signal_to_image_domain(&s, g).py().map(ComplexSignal::into_values)
}

/// Fit unfolded parameters to image-domain signals by projected gradient
/// descent; returns the trained parameters and the report as JSON text.
#[pyfunction]
#[pyo3(signature = (dictionary, signals, init, epochs = None, learning_rate = None, lam = None, min_step = None, fd_rel_step = None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dictionary: PyRef<'_, PyDictionary>,
    signals: Vec<Vec<Complex64>>,
    init: PyRef<'_, PyUnfoldedParams>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    lam: Option<f64>,
    min_step: Option<f64>,
    fd_rel_step: Option<f64>,
) -> PyResult<(PyUnfoldedParams, String)> {
    let d = &dictionary.0;
    let set = signals
        .into_iter()
        .map(|v| dictionary.signal(v))
        .collect::<PyResult<Vec<_>>>()?;
    let base = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: epochs.unwrap_or(base.epochs),
        learning_rate: learning_rate.unwrap_or(base.learning_rate),
        lambda: lam.unwrap_or(base.lambda),
        min_step: min_step.unwrap_or(base.min_step),
        fd_rel_step: fd_rel_step.unwrap_or(base.fd_rel_step),
        ..base
    };
    let init = init.0.clone();
    let report = py.detach(|| train_unfolded(d, &set, &init, &cfg)).py()?;
    Ok((PyUnfoldedParams(report.final_params.clone()), report.to_json().py()?))
}

#[pymodule]
fn sarsc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGeometry>()?;
    m.add_class::<PyDictionary>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyUnfoldedParams>()?;
    m.add_class::<PySolveResult>()?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(ista, m)?)?;
    m.add_function(wrap_pyfunction!(unfolded, m)?)?;
    m.add_function(wrap_pyfunction!(omp, m)?)?;
    m.add_function(wrap_pyfunction!(amp, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(support_match, m)?)?;
    m.add_function(wrap_pyfunction!(echo_to_image, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
