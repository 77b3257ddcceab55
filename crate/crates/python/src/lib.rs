use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use robust_inversion::degrade::{compose_true, CompositionSpec};
use robust_inversion::inversion::{Inverter, Phase, PhaseSchedule};
use robust_inversion::rng::Stream;
use robust_inversion::{perceptual, GeneratorConfig, GeneratorWeights, Latent};

fn py_err(e: robust_inversion::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn spec_from(json: &str) -> PyResult<CompositionSpec> {
    CompositionSpec::from_json(json).map_err(py_err)
}

/// Planar RGB image with values in [0, 1].
#[pyclass(name = "Image", module = "rgi", from_py_object)]
#[derive(Clone)]
struct PyImage(robust_inversion::Image);

#[pymethods]
impl PyImage {
    /// `data` is planar `[3, height, width]`, flattened.
    #[new]
    fn new(height: usize, width: usize, data: Vec<f64>) -> PyResult<Self> {
        let t = robust_inversion::Tensor::new(&[3, height, width], data).map_err(py_err)?;
        robust_inversion::Image::from_tensor(t).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        robust_inversion::Image::load(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.0.height(), self.0.width())
    }
}

#[pyclass(name = "Generator", module = "rgi")]
struct PyGenerator(GeneratorWeights);

#[pymethods]
impl PyGenerator {
    #[staticmethod]
    #[pyo3(signature = (seed, resolution=64, channels=32, latent_dim=64, mapping_layers=8))]
    fn generate(
        seed: u64,
        resolution: usize,
        channels: usize,
        latent_dim: usize,
        mapping_layers: usize,
    ) -> PyResult<Self> {
        let config = GeneratorConfig {
            latent_dim,
            channels,
            resolution,
            mapping_layers,
            ..GeneratorConfig::default()
        };
        GeneratorWeights::generate(config, seed).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        GeneratorWeights::load(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.0.config.resolution
    }

    /// Image from the latent drawn with `seed`.
    fn sample(&self, seed: u64) -> PyResult<PyImage> {
        let w = self.0.sample_latent(&mut Stream::new(seed)).map_err(py_err)?;
        self.0.synthesize(&Latent::Global(w)).map(PyImage).map_err(py_err)
    }
}

/// Outcome of one three-phase restoration.
#[pyclass(name = "Restoration", module = "rgi", get_all)]
struct PyRestoration {
    image: PyImage,
    losses: Vec<f64>,
    initial_objective: f64,
    phase_objectives: Vec<f64>,
}

/// Apply the true degradation chain described by `spec` (JSON).
#[pyfunction]
fn degrade(image: &PyImage, spec: &str) -> PyResult<PyImage> {
    compose_true(&spec_from(spec)?, &image.0).map(PyImage).map_err(py_err)
}

/// Restore `target`. `schedule` is three `(rate, steps)` pairs.
#[pyfunction]
#[pyo3(signature = (generator, target, spec, seed=0, schedule=None))]
fn restore(
    py: Python<'_>,
    generator: &PyGenerator,
    target: &PyImage,
    spec: &str,
    seed: u64,
    schedule: Option<Vec<(f64, usize)>>,
) -> PyResult<PyRestoration> {
    let spec = spec_from(spec)?;
    let schedule = match schedule {
        None => PhaseSchedule::default(),
        Some(p) if p.len() == 3 => PhaseSchedule {
            phases: [0, 1, 2].map(|i| Phase {
                rate: p[i].0,
                steps: p[i].1,
            }),
        },
        Some(p) => {
            return Err(PyValueError::new_err(format!(
                "schedule needs 3 phases, got {}",
                p.len()
            )))
        }
    };
    let run = py
        .detach(|| Inverter::new(&generator.0, schedule).and_then(|inv| inv.invert(&target.0, &spec, seed)))
        .map_err(py_err)?;
    Ok(PyRestoration {
        losses: run.losses(),
        initial_objective: run.initial_objective,
        phase_objectives: run.phase_objectives.to_vec(),
        image: PyImage(run.x_plus_plus),
    })
}

#[pyfunction]
fn accuracy(pred: &PyImage, ground_truth: &PyImage) -> PyResult<f64> {
    perceptual::accuracy(&pred.0, &ground_truth.0).map_err(py_err)
}

#[pyfunction]
fn fidelity(pred: &PyImage, target: &PyImage, spec: &str) -> PyResult<f64> {
    perceptual::fidelity(&pred.0, &target.0, &spec_from(spec)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (set_a, set_b, crops_per_image=100, crop_size=32, seed=0))]
fn patch_fid(
    set_a: Vec<PyImage>,
    set_b: Vec<PyImage>,
    crops_per_image: usize,
    crop_size: usize,
    seed: u64,
) -> PyResult<f64> {
    let a: Vec<_> = set_a.into_iter().map(|i| i.0).collect();
    let b: Vec<_> = set_b.into_iter().map(|i| i.0).collect();
    perceptual::patch_fid(&a, &b, crops_per_image, crop_size, seed).map_err(py_err)
}

/// Runs every gradient check; returns `(all_passed, report)`.
#[pyfunction]
fn gradcheck() -> PyResult<(bool, String)> {
    let report = robust_inversion::gradcheck::run_gradcheck().map_err(py_err)?;
    Ok((report.all_passed(), report.to_string()))
}

#[pymodule]
fn rgi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyRestoration>()?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(restore, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(patch_fid, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
