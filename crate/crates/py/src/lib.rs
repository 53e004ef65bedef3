//! Python bindings.
//!
//! Meshes, materials, oracle solutions, DIC datasets and training reports
//! are wrapped as opaque classes. Vectors cross the boundary as tuples of
//! floats, and training hyperparameters are passed as a dict whose keys
//! match the `[training]` table of a project file.

use caliper_core::constitutive::{self, MaterialSpec, Model, Param};
use caliper_core::dic::{self, DicDataset};
use caliper_core::fem::{self, BcSchedule, FemSolution, SolverOptions};
use caliper_core::field::{self, FieldSeries};
use caliper_core::kinematics::DeformationState;
use caliper_core::mesh::{self, HexMesh};
use caliper_core::network::AnsatzConfig;
use caliper_core::quadrature;
use caliper_core::trainer::{self, Mode, RunConfig, TrainOptions, TrainReport};
use caliper_core::Error;
use nalgebra::{Matrix3, Vector3};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Vec3 = (f64, f64, f64);
type Mat3 = [[f64; 3]; 3];

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        Error::Divergence { .. } | Error::Solver { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for caliper_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

fn vec3(v: &Vector3<f64>) -> Vec3 {
    (v.x, v.y, v.z)
}

fn mat3(m: &Matrix3<f64>) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = m[(i, j)];
        }
    }
    out
}

fn run_config(py: Python<'_>, mode: Mode, config: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let base = match mode {
        Mode::Forward => RunConfig::default(),
        Mode::Inverse => RunConfig::inverse(),
    };
    let mut value = serde_json::to_value(&base).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(dict) = config {
        let text: String = py.import("json")?.call_method1("dumps", (dict,))?.extract()?;
        let overlay: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        merge(&mut value, overlay);
    }
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| PyValueError::new_err(format!("training config: {e}")))?;
    cfg.validate().py()?;
    Ok(cfg)
}

fn merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Hexahedral mesh with named node sets.
#[pyclass(name = "Mesh", module = "caliper", skip_from_py_object)]
#[derive(Clone)]
struct PyMesh {
    inner: HexMesh,
}

#[pymethods]
impl PyMesh {
    #[staticmethod]
    #[pyo3(name = "box")]
    fn make_box(lengths: [f64; 3], divisions: [usize; 3]) -> PyResult<Self> {
        Ok(Self {
            inner: mesh::generate_box(lengths, divisions).py()?,
        })
    }

    #[staticmethod]
    fn plate_with_hole(width: f64, height: f64, thickness: f64, hole_radius: f64, refinement: usize) -> PyResult<Self> {
        Ok(Self {
            inner: mesh::generate_plate_with_hole(width, height, thickness, hole_radius, refinement).py()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: mesh::load_mesh(path).py()?,
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: mesh::parse_mesh(text).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        mesh::save_mesh(&self.inner, path).py()
    }

    fn to_text(&self) -> String {
        mesh::write_mesh(&self.inner)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn element_count(&self) -> usize {
        self.inner.element_count()
    }

    #[getter]
    fn nodes(&self) -> Vec<Vec3> {
        self.inner.nodes().iter().map(vec3).collect()
    }

    #[getter]
    fn elements(&self) -> Vec<[usize; 8]> {
        self.inner.elements().to_vec()
    }

    #[getter]
    fn node_set_names(&self) -> Vec<String> {
        self.inner.node_sets().keys().cloned().collect()
    }

    fn node_set(&self, name: &str) -> PyResult<Vec<usize>> {
        Ok(self.inner.node_set(name).py()?.to_vec())
    }

    fn bounding_box(&self) -> (Vec3, Vec3) {
        let (lo, hi) = self.inner.bounding_box();
        (vec3(&lo), vec3(&hi))
    }

    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    fn to_vtk(&self, displacements: Option<Vec<Vec3>>) -> PyResult<String> {
        let u: Vec<Vector3<f64>> = match displacements {
            Some(d) => d.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect(),
            None => vec![Vector3::zeros(); self.inner.node_count()],
        };
        field::to_vtk(&self.inner, &u, "caliper").py()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh(nodes={}, elements={})",
            self.inner.node_count(),
            self.inner.element_count()
        )
    }
}

/// Material model with parameter values and trainability flags.
#[pyclass(name = "Material", module = "caliper", skip_from_py_object)]
#[derive(Clone)]
struct PyMaterial {
    inner: MaterialSpec,
}

#[pymethods]
impl PyMaterial {
    /// `Material("neo-hookean", {"K": 2.167, "mu": 1.0}, trainable=["mu"])`
    #[new]
    #[pyo3(signature = (model, values, trainable = None, bounds = None))]
    fn new(
        model: &str,
        values: std::collections::HashMap<String, f64>,
        trainable: Option<Vec<String>>,
        bounds: Option<std::collections::HashMap<String, (f64, f64)>>,
    ) -> PyResult<Self> {
        let model: Model = model.parse().py()?;
        let mut ordered = Vec::with_capacity(model.params().len());
        for p in model.params() {
            let v = values
                .get(p.name())
                .ok_or_else(|| PyValueError::new_err(format!("missing value for `{}`", p.name())))?;
            ordered.push(*v);
        }
        if let Some(extra) = values.keys().find(|k| !model.params().iter().any(|p| p.name() == k.as_str())) {
            return Err(PyValueError::new_err(format!("`{extra}` is not a parameter of {model}")));
        }
        let mut inner = MaterialSpec::new(model, &ordered).py()?;
        for (name, (lo, hi)) in bounds.unwrap_or_default() {
            inner.set_bounds(name.parse::<Param>().py()?, lo, hi).py()?;
        }
        for name in trainable.unwrap_or_default() {
            inner.set_trainable(name.parse::<Param>().py()?, true).py()?;
        }
        Ok(Self { inner })
    }

    #[getter]
    fn model(&self) -> &'static str {
        self.inner.model().name()
    }

    #[getter]
    fn values(&self) -> Vec<(&'static str, f64)> {
        self.inner.params().iter().map(|p| p.name()).zip(self.inner.values().iter().copied()).collect()
    }

    #[getter]
    fn trainable(&self) -> Vec<&'static str> {
        self.inner
            .params()
            .iter()
            .zip(self.inner.trainable())
            .filter(|(_, &t)| t)
            .map(|(p, _)| p.name())
            .collect()
    }

    fn get(&self, name: &str) -> PyResult<f64> {
        let p: Param = name.parse().py()?;
        self.inner
            .get(p)
            .ok_or_else(|| PyValueError::new_err(format!("`{name}` is not a parameter of {}", self.inner.model())))
    }

    /// Strain energy density at deformation gradient `f`.
    fn energy_density(&self, f: Mat3) -> PyResult<f64> {
        constitutive::energy_density(&self.inner, &DeformationState::from_f(Matrix3::from(f).transpose())).py()
    }

    /// First Piola-Kirchhoff stress at deformation gradient `f`.
    fn pk1_stress(&self, f: Mat3) -> PyResult<Mat3> {
        let p = constitutive::pk1_stress(&self.inner, &DeformationState::from_f(Matrix3::from(f).transpose())).py()?;
        Ok(mat3(&p))
    }

    fn __repr__(&self) -> String {
        let values: Vec<String> = self.values().iter().map(|(n, v)| format!("{n}={v}")).collect();
        format!("Material({}, {})", self.inner.model(), values.join(", "))
    }
}

/// Converged oracle solution: per-step displacements and net forces.
#[pyclass(name = "Solution", module = "caliper", skip_from_py_object)]
#[derive(Clone)]
struct PySolution {
    inner: FemSolution,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    #[getter]
    fn net_force(&self) -> Vec<f64> {
        self.inner.net_force.clone()
    }

    #[getter]
    fn iterations(&self) -> Vec<usize> {
        self.inner.history.iter().map(|h| h.iterations).collect()
    }

    /// Nodal displacements at 1-based `step`.
    fn displacements(&self, step: usize) -> PyResult<Vec<Vec3>> {
        if step == 0 || step > self.inner.steps() {
            return Err(PyValueError::new_err(format!("step must be in 1..={}", self.inner.steps())));
        }
        Ok(self.inner.displacements[step - 1].iter().map(vec3).collect())
    }

    fn to_text(&self) -> String {
        FieldSeries::from_solution(&self.inner).to_text()
    }
}

/// Solves the uniaxial (or uniaxial-strain) benchmark with the Newton oracle.
#[pyfunction]
#[pyo3(signature = (mesh, material, final_displacement, steps = 10, axis = 0, loading = "uniaxial", newton_tol = 1e-10))]
fn solve_oracle(
    mesh: &PyMesh,
    material: &PyMaterial,
    final_displacement: f64,
    steps: usize,
    axis: usize,
    loading: &str,
    newton_tol: f64,
) -> PyResult<PySolution> {
    let ansatz = AnsatzConfig::for_mesh(&mesh.inner, axis, final_displacement, steps).py()?;
    let bcs = match loading {
        "uniaxial" => BcSchedule::uniaxial(&mesh.inner, &ansatz),
        "uniaxial-strain" => BcSchedule::uniaxial_strain(&mesh.inner, &ansatz),
        other => return Err(PyValueError::new_err(format!("unknown loading `{other}`"))),
    }
    .py()?;
    let options = SolverOptions {
        newton_tol,
        ..SolverOptions::default()
    };
    Ok(PySolution {
        inner: fem::solve(&mesh.inner, &material.inner, &bcs, &options).py()?,
    })
}

/// Synthetic DIC measurements.
#[pyclass(name = "Dataset", module = "caliper", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: DicDataset,
}

#[pymethods]
impl PyDataset {
    /// Samples the solution on one face of `data_mesh`.
    #[staticmethod]
    #[pyo3(signature = (solution, data_mesh, surface = "zmax", remove_edges = true))]
    fn extract(solution: &PySolution, data_mesh: &PyMesh, surface: &str, remove_edges: bool) -> PyResult<Self> {
        Ok(Self {
            inner: dic::extract(&solution.inner, &data_mesh.inner, surface, remove_edges).py()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: DicDataset::load(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).py()
    }

    fn dropout(&self, fraction: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.dropout(fraction, seed).py()?,
        })
    }

    fn add_noise(&self, sigma: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.add_noise(sigma, seed).py()?,
        })
    }

    #[getter]
    fn forces(&self) -> Vec<(f64, f64)> {
        self.inner.forces.clone()
    }

    /// `(x, t, u)` triples.
    #[getter]
    fn samples(&self) -> Vec<(Vec3, f64, Vec3)> {
        self.inner.samples.iter().map(|s| (vec3(&s.x), s.t, vec3(&s.u))).collect()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }
}

/// Outcome of a training run.
#[pyclass(name = "TrainReport", module = "caliper")]
struct PyTrainReport {
    inner: TrainReport,
    mesh: HexMesh,
}

#[pymethods]
impl PyTrainReport {
    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[getter]
    fn seconds(&self) -> f64 {
        self.inner.seconds
    }

    #[getter]
    fn stopped_on_tolerance(&self) -> bool {
        self.inner.stop == trainer::StopReason::Tolerance
    }

    #[getter]
    fn material(&self) -> PyMaterial {
        PyMaterial {
            inner: self.inner.material.clone(),
        }
    }

    #[getter]
    fn relative_errors(&self) -> Option<Vec<f64>> {
        self.inner.final_relative_errors()
    }

    #[getter]
    fn net_force(&self) -> Vec<f64> {
        self.inner.final_breakdown.net_force.clone()
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.final_breakdown.residual
    }

    /// Per-epoch `(epoch, total, energy, residual, data, force)` rows.
    #[getter]
    fn history(&self) -> Vec<(usize, f64, f64, f64, f64, f64)> {
        self.inner
            .records
            .iter()
            .map(|r| {
                let b = &r.breakdown;
                (r.epoch, b.total, b.energy, b.residual, b.data, b.force)
            })
            .collect()
    }

    /// Telemetry CSV text.
    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    /// Trained displacement at point `x` and 1-based `step`.
    fn displacement(&self, x: Vec3, step: usize) -> Vec3 {
        vec3(&self.inner.field().displacement(&Vector3::new(x.0, x.1, x.2), step))
    }

    /// Aggregate and per-step errors of the trained field against an oracle
    /// solution on the same mesh.
    fn compare(&self, reference: &PySolution) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
        let field = FieldSeries::from_network(
            &self.inner.field(),
            &self.mesh,
            self.inner.final_breakdown.net_force.clone(),
        );
        let c = field::compare(&field, &FieldSeries::from_solution(&reference.inner)).py()?;
        Ok((c.displacement, c.step_displacement, c.step_force))
    }
}

/// Forward run: trains the displacement field for a fully specified material.
#[pyfunction]
#[pyo3(signature = (mesh, material, config = None))]
fn train_forward(
    py: Python<'_>,
    mesh: &PyMesh,
    material: &PyMaterial,
    config: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyTrainReport> {
    let cfg = run_config(py, Mode::Forward, config)?;
    let inner = trainer::train_forward(&mesh.inner, &material.inner, &cfg, &TrainOptions::default()).py()?;
    Ok(PyTrainReport {
        inner,
        mesh: mesh.inner.clone(),
    })
}

/// Inverse run: identifies the trainable parameters of `material` from `dataset`.
#[pyfunction]
#[pyo3(signature = (mesh, material, dataset, config = None, truth = None))]
fn train_inverse(
    py: Python<'_>,
    mesh: &PyMesh,
    material: &PyMaterial,
    dataset: &PyDataset,
    config: Option<&Bound<'_, PyDict>>,
    truth: Option<&PyMaterial>,
) -> PyResult<PyTrainReport> {
    let cfg = run_config(py, Mode::Inverse, config)?;
    let options = TrainOptions {
        truth: truth.map(|t| t.inner.clone()),
        ..Default::default()
    };
    let inner = trainer::train_inverse(&mesh.inner, &material.inner, &dataset.inner, &cfg, &options).py()?;
    Ok(PyTrainReport {
        inner,
        mesh: mesh.inner.clone(),
    })
}

/// Bulk modulus from shear modulus and Poisson's ratio.
#[pyfunction]
fn bulk_from_poisson(mu: f64, nu: f64) -> PyResult<f64> {
    constitutive::bulk_from_poisson(mu, nu).py()
}

/// Quadrature-point evaluations in one full-batch epoch.
#[pyfunction]
fn evaluations_per_epoch(elements: usize, steps: usize) -> usize {
    quadrature::evaluations_per_epoch(elements, steps)
}

/// Runs the command-line interface with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    caliper_core::cli::main_with_args(std::iter::once("caliper".to_string()).chain(args))
}

#[pymodule]
fn caliper(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyMaterial>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainReport>()?;
    m.add_function(wrap_pyfunction!(solve_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(train_forward, m)?)?;
    m.add_function(wrap_pyfunction!(train_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(bulk_from_poisson, m)?)?;
    m.add_function(wrap_pyfunction!(evaluations_per_epoch, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
