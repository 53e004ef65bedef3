//! Discrete energy, internal forces and the training losses.
//!
//! The physics loss of one trial field is
//! `beta * (Pi + alpha * R) + gamma * L_u + delta * L_f` where `Pi` sums the
//! quadrature energy over all load steps, `R` is the squared internal force
//! on free degrees of freedom, `L_u` the mean squared displacement misfit at
//! data points and `L_f` the mean squared misfit of the net reaction force.
//!
//! Internal forces are the gradient of `Pi` with respect to nodal
//! displacements. At each quadrature point the recorded energy tape yields
//! `dpsi/dF`, which the shape-function gradients carry back to the nodes;
//! the gradient of `R` uses Hessian-vector products of the same tape.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradBundle, Tape, Workspace};
use crate::constitutive::{energy_density, energy_tape, MaterialSpec, Model};
use crate::dic::DicSample;
use crate::error::{invalid, Result};
use crate::kinematics::DeformationState;
use crate::network::{AnsatzConfig, BatchCache, DisplacementField, InputScaling, MlpState};
use crate::quadrature::QuadratureCache;

/// Below this Jacobian a sample is treated as inverted and penalized.
pub const J_FLOOR: f64 = 0.05;
/// Stiffness of the inverted-element penalty `k (J_floor - J)^2`.
pub const INVERSION_PENALTY: f64 = 1e6;
/// Fraction of the Gent locking parameter beyond which the isochoric energy
/// is continued by its second-order Taylor expansion.
pub const LOCKUP_ONSET: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl WeightsConfig {
    pub fn forward() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.0,
            delta: 0.0,
        }
    }

    pub fn inverse() -> Self {
        Self {
            alpha: 250.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("delta", self.delta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self::forward()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBreakdown {
    /// Energy summed over steps (mJ).
    pub energy: f64,
    pub step_energies: Vec<f64>,
    /// Squared internal force on free dofs, summed over steps (N^2).
    pub residual: f64,
    /// Displacement data misfit (mm^2).
    pub data: f64,
    /// Net force misfit (N^2).
    pub force: f64,
    pub total: f64,
    /// Net reaction force on the displaced face per step (N).
    pub net_force: Vec<f64>,
    pub inverted: usize,
    pub lockup: usize,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.energy, self.residual, self.data, self.force, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn cofactor(m: &Matrix3<f64>) -> Matrix3<f64> {
    let r = |i: usize| Vector3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)]);
    let (r0, r1, r2) = (r(0), r(1), r(2));
    let c0 = r1.cross(&r2);
    let c1 = r2.cross(&r0);
    let c2 = r0.cross(&r1);
    Matrix3::new(c0[0], c0[1], c0[2], c1[0], c1[1], c1[2], c2[0], c2[1], c2[2])
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Sample {
    Regular,
    Extended,
    Inverted,
}

/// Records the Gent energy whose isochoric part is replaced by its
/// quadratic Taylor expansion about `x_c = LOCKUP_ONSET * Jm`.
fn extended_gent_tape() -> Result<Tape> {
    let mut inputs = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    inputs.extend([1.0, 1.0, 1.0]);
    Tape::record(&inputs, |rec, x| {
        let f: [_; 9] = std::array::from_fn(|k| x[k]);
        let (k, mu, jm) = (x[9], x[10], x[11]);
        let j = rec.det3(&f);
        let i1 = rec.dot(&f, &f);
        let xbar = j.powf(-2.0 / 3.0) * i1 - 3.0;
        let c = LOCKUP_ONSET;
        let dx = xbar - c * jm;
        let vol = 0.5 * k * (0.5 * (j * j - 1.0) - j.ln());
        let iso = -0.5 * (1.0 - c).ln() * mu * jm
            + 0.5 / (1.0 - c) * mu * dx
            + 0.25 / ((1.0 - c) * (1.0 - c)) * mu / jm * dx * dx;
        vol + iso
    })
}

/// Per-step energy, internal forces and material sensitivities.
#[derive(Debug, Clone, Default)]
pub struct StepForces {
    pub energy: f64,
    pub forces: Vec<Vector3<f64>>,
    /// `d Pi / d params` for the step.
    pub d_params: Vec<f64>,
    pub inverted: usize,
    pub lockup: usize,
}

/// Quadrature-level evaluation of the energy, its gradient and
/// Hessian-vector products for one material model.
#[derive(Debug, Clone)]
pub struct PhysicsKernel {
    cache: QuadratureCache,
    model: Model,
    tape: Tape,
    extended: Option<Tape>,
    ws: Workspace,
    inputs: Vec<f64>,
    grad: Vec<f64>,
    dir: Vec<f64>,
    hv: Vec<f64>,
}

impl PhysicsKernel {
    pub fn new(cache: QuadratureCache, model: Model) -> Result<Self> {
        let n = 9 + model.params().len();
        Ok(Self {
            cache,
            model,
            tape: energy_tape(model)?,
            extended: if model == Model::Gent { Some(extended_gent_tape()?) } else { None },
            ws: Workspace::default(),
            inputs: vec![0.0; n],
            grad: vec![0.0; n],
            dir: vec![0.0; n],
            hv: vec![0.0; n],
        })
    }

    pub fn cache(&self) -> &QuadratureCache {
        &self.cache
    }

    pub fn model(&self) -> Model {
        self.model
    }

    #[inline]
    fn deformation(&self, u: &[Vector3<f64>], e: usize, q: usize) -> Matrix3<f64> {
        let conn = self.cache.connectivity(e);
        let g = self.cache.grad_n(e, q);
        let mut f = Matrix3::identity();
        for a in 0..8 {
            let ua = &u[conn[a]];
            let ga = &g[a];
            for i in 0..3 {
                for j in 0..3 {
                    f[(i, j)] += ua[i] * ga[j];
                }
            }
        }
        f
    }

    fn classify(&self, f: &Matrix3<f64>, j: f64, params: &[f64]) -> Sample {
        if !(j >= J_FLOOR) {
            return Sample::Inverted;
        }
        if self.model == Model::Gent {
            let x = j.powf(-2.0 / 3.0) * f.norm_squared() - 3.0;
            if x >= LOCKUP_ONSET * params[2] {
                return Sample::Extended;
            }
        }
        Sample::Regular
    }

    fn load_inputs(&mut self, f: &Matrix3<f64>, params: &[f64]) {
        for i in 0..3 {
            for j in 0..3 {
                self.inputs[3 * i + j] = f[(i, j)];
            }
        }
        self.inputs[9..].copy_from_slice(params);
    }

    /// Energy floor added to the inversion penalty: the energy of a pure
    /// dilatation to `J_FLOOR`.
    pub fn inversion_floor(spec: &MaterialSpec) -> f64 {
        let s = J_FLOOR.cbrt();
        energy_density(spec, &DeformationState::from_f(Matrix3::identity() * s)).unwrap_or(0.0)
    }

    /// Energy, internal forces and material sensitivities of one step.
    pub fn forces(&mut self, params: &[f64], psi_floor: f64, u: &[Vector3<f64>], out: &mut StepForces) -> Result<()> {
        out.energy = 0.0;
        out.forces.clear();
        out.forces.resize(self.cache.node_count(), Vector3::zeros());
        out.d_params.clear();
        out.d_params.resize(params.len(), 0.0);
        out.inverted = 0;
        out.lockup = 0;
        for e in 0..self.cache.element_count() {
            for q in 0..8 {
                let f = self.deformation(u, e, q);
                let j = f.determinant();
                let m = self.cache.measure(e, q);
                let kind = self.classify(&f, j, params);
                let p = match kind {
                    Sample::Inverted => {
                        out.inverted += 1;
                        let gap = J_FLOOR - j;
                        out.energy += m * (INVERSION_PENALTY * gap * gap + psi_floor);
                        -2.0 * INVERSION_PENALTY * gap * cofactor(&f)
                    }
                    Sample::Regular | Sample::Extended => {
                        if kind == Sample::Extended {
                            out.lockup += 1;
                        }
                        self.load_inputs(&f, params);
                        let tape = if kind == Sample::Extended { self.extended.as_ref().unwrap() } else { &self.tape };
                        let psi = tape.gradient(&self.inputs, &mut self.ws, &mut self.grad)?;
                        out.energy += m * psi;
                        for (d, g) in out.d_params.iter_mut().zip(&self.grad[9..]) {
                            *d += m * g;
                        }
                        Matrix3::from_row_slice(&self.grad[..9])
                    }
                };
                let conn = self.cache.connectivity(e);
                let g = self.cache.grad_n(e, q);
                for a in 0..8 {
                    let ga = Vector3::from(g[a]);
                    out.forces[conn[a]] += m * (p * ga);
                }
            }
        }
        Ok(())
    }

    /// Accumulates `K * adjoint` into `gu` and `adjoint . d f / d params`
    /// into `gp`, where `K` is the stiffness `d f / d u` of one step.
    pub fn tangent_products(
        &mut self,
        params: &[f64],
        u: &[Vector3<f64>],
        adjoint: &[Vector3<f64>],
        gu: &mut [Vector3<f64>],
        gp: &mut [f64],
    ) -> Result<()> {
        self.dir.fill(0.0);
        for e in 0..self.cache.element_count() {
            let conn = *self.cache.connectivity(e);
            if conn.iter().all(|&n| adjoint[n] == Vector3::zeros()) {
                continue;
            }
            for q in 0..8 {
                let f = self.deformation(u, e, q);
                let j = f.determinant();
                let m = self.cache.measure(e, q);
                let g = *self.cache.grad_n(e, q);
                let mut df = Matrix3::zeros();
                for a in 0..8 {
                    let la = &adjoint[conn[a]];
                    for i in 0..3 {
                        for k in 0..3 {
                            df[(i, k)] += la[i] * g[a][k];
                        }
                    }
                }
                let a_df = match self.classify(&f, j, params) {
                    Sample::Inverted => {
                        let gap = J_FLOOR - j;
                        let cof = cofactor(&f);
                        let d_cof = cofactor(&(f + df)) - cof - cofactor(&df);
                        2.0 * INVERSION_PENALTY * (cof.dot(&df) * cof - gap * d_cof)
                    }
                    kind => {
                        self.load_inputs(&f, params);
                        for i in 0..3 {
                            for k in 0..3 {
                                self.dir[3 * i + k] = df[(i, k)];
                            }
                        }
                        let tape = if kind == Sample::Extended { self.extended.as_ref().unwrap() } else { &self.tape };
                        tape.hvp(&self.inputs, &self.dir, &mut self.ws, &mut self.grad, &mut self.hv)?;
                        for (d, h) in gp.iter_mut().zip(&self.hv[9..]) {
                            *d += m * h;
                        }
                        Matrix3::from_row_slice(&self.hv[..9])
                    }
                };
                for a in 0..8 {
                    gu[conn[a]] += m * (a_df * Vector3::from(g[a]));
                }
            }
        }
        Ok(())
    }
}

/// Energy of each step and their sum for prescribed nodal displacements
/// (`nodal_u[step][node]`).
pub fn energy(cache: &QuadratureCache, spec: &MaterialSpec, nodal_u: &[Vec<Vector3<f64>>]) -> Result<(f64, Vec<f64>)> {
    let mut kernel = PhysicsKernel::new(cache.clone(), spec.model())?;
    let floor = PhysicsKernel::inversion_floor(spec);
    let mut out = StepForces::default();
    let mut per_step = Vec::with_capacity(nodal_u.len());
    for u in nodal_u {
        kernel.forces(spec.values(), floor, u, &mut out)?;
        per_step.push(out.energy);
    }
    Ok((per_step.iter().sum(), per_step))
}

/// Internal force `d Pi / d u` at every node for one displacement state.
pub fn internal_force(cache: &QuadratureCache, spec: &MaterialSpec, nodal_u: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    let mut kernel = PhysicsKernel::new(cache.clone(), spec.model())?;
    let mut out = StepForces::default();
    kernel.forces(spec.values(), PhysicsKernel::inversion_floor(spec), nodal_u, &mut out)?;
    Ok(out.forces)
}

/// Sum of squared force components over free dofs.
pub fn residual_sq_free(forces: &[Vector3<f64>], free: &[[bool; 3]]) -> f64 {
    forces
        .iter()
        .zip(free)
        .map(|(f, m)| (0..3).filter(|&i| m[i]).map(|i| f[i] * f[i]).sum::<f64>())
        .sum()
}

/// `sum_I f_I . n` over a node set.
pub fn net_force(forces: &[Vector3<f64>], nodes: &[usize], normal: &Vector3<f64>) -> Result<f64> {
    if nodes.is_empty() {
        return Err(invalid("net force needs a non-empty node set"));
    }
    Ok(nodes.iter().map(|&n| forces[n].dot(normal)).sum())
}

/// Mean squared displacement misfit of a field at data points.
pub fn data_loss(field: &DisplacementField, samples: &[DicSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("displacement data set is empty"));
    }
    let sum: f64 = samples
        .iter()
        .map(|s| (field.displacement_at_time(&s.x, s.t) - s.u).norm_squared())
        .sum();
    Ok(sum / samples.len() as f64)
}

/// Mean squared difference of two force series.
pub fn force_loss(predicted: &[f64], measured: &[f64]) -> Result<f64> {
    if predicted.len() != measured.len() {
        return Err(invalid(format!(
            "force series lengths differ: {} predicted, {} measured",
            predicted.len(),
            measured.len()
        )));
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    Ok(predicted.iter().zip(measured).map(|(p, m)| (p - m) * (p - m)).sum::<f64>() / predicted.len() as f64)
}

/// Everything the loss needs besides the trainable state.
#[derive(Debug, Clone)]
pub struct LossProblem {
    pub nodes: Vec<Vector3<f64>>,
    pub cache: QuadratureCache,
    pub ansatz: AnsatzConfig,
    pub scaling: InputScaling,
    pub weights: WeightsConfig,
    /// Whether the energy term contributes to material-parameter gradients.
    pub energy_material_gradient: bool,
    pub samples: Vec<DicSample>,
    /// Measured net force per step, when available.
    pub measured_forces: Option<Vec<f64>>,
}

/// Gradients of the total loss from [`LossEngine::evaluate`].
#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    /// `d_nodal_u` is laid out step-major: `(step - 1) * nodes + node`,
    /// three entries each. `d_material` holds `dL/dp` for every model
    /// parameter in model order.
    pub grads: GradBundle,
}

/// Evaluates the total loss and its gradients for a network and material.
#[derive(Debug, Clone)]
pub struct LossEngine {
    problem: LossProblem,
    kernel: PhysicsKernel,
    free: Vec<bool>,
    force_nodes: Vec<usize>,
    node_inputs: Vec<f64>,
    node_g: Vec<f64>,
    node_base: Vec<Vector3<f64>>,
    sample_inputs: Vec<f64>,
    sample_g: Vec<f64>,
    sample_base: Vec<Vector3<f64>>,
    node_batch: BatchCache,
    sample_batch: BatchCache,
    u: Vec<Vector3<f64>>,
    step_out: Vec<StepForces>,
    adjoint: Vec<Vector3<f64>>,
    gu: Vec<Vector3<f64>>,
    d_out: Vec<f64>,
    sample_d_out: Vec<f64>,
    /// Seconds spent in the last evaluation.
    pub last_seconds: f64,
}

impl LossEngine {
    pub fn new(problem: LossProblem, model: Model) -> Result<Self> {
        problem.weights.validate()?;
        let n_nodes = problem.nodes.len();
        if problem.cache.node_count() != n_nodes {
            return Err(invalid("quadrature cache and node list disagree"));
        }
        let steps = problem.ansatz.steps;
        if let Some(f) = &problem.measured_forces {
            if f.len() != steps {
                return Err(invalid(format!(
                    "measured force series has {} entries but there are {steps} load steps",
                    f.len()
                )));
            }
        }
        let a = &problem.ansatz;
        let free: Vec<bool> = problem.nodes.iter().map(|x| !a.is_constrained(x)).collect();
        let force_nodes: Vec<usize> = (0..n_nodes).filter(|&i| problem.nodes[i][a.axis] == a.hi).collect();
        if force_nodes.is_empty() {
            return Err(invalid("no mesh nodes lie on the displaced face"));
        }
        let mut node_inputs = Vec::with_capacity(steps * n_nodes * 4);
        let mut node_g = Vec::with_capacity(steps * n_nodes);
        let mut node_base = Vec::with_capacity(steps * n_nodes);
        for step in 1..=steps {
            let t = a.time(step);
            for x in &problem.nodes {
                node_inputs.extend(problem.scaling.apply(x, t));
                node_g.push(a.distance(x, t));
                node_base.push(a.particular(x, t));
            }
        }
        let mut sample_inputs = Vec::with_capacity(problem.samples.len() * 4);
        let mut sample_g = Vec::with_capacity(problem.samples.len());
        let mut sample_base = Vec::with_capacity(problem.samples.len());
        for s in &problem.samples {
            sample_inputs.extend(problem.scaling.apply(&s.x, s.t));
            sample_g.push(a.distance(&s.x, s.t));
            sample_base.push(a.particular(&s.x, s.t));
        }
        let kernel = PhysicsKernel::new(problem.cache.clone(), model)?;
        Ok(Self {
            kernel,
            free,
            force_nodes,
            node_inputs,
            node_g,
            node_base,
            sample_inputs,
            sample_g,
            sample_base,
            node_batch: BatchCache::default(),
            sample_batch: BatchCache::default(),
            u: Vec::new(),
            step_out: vec![StepForces::default(); steps],
            adjoint: vec![Vector3::zeros(); n_nodes],
            gu: Vec::new(),
            d_out: Vec::new(),
            sample_d_out: Vec::new(),
            problem,
            last_seconds: 0.0,
        })
    }

    pub fn problem(&self) -> &LossProblem {
        &self.problem
    }

    pub fn free_mask(&self) -> &[bool] {
        &self.free
    }

    pub fn force_nodes(&self) -> &[usize] {
        &self.force_nodes
    }

    /// Nodal displacements of the last evaluation, `[step - 1][node]`.
    pub fn nodal_displacements(&self) -> Vec<Vec<Vector3<f64>>> {
        self.u.chunks(self.problem.nodes.len()).map(|c| c.to_vec()).collect()
    }

    /// Nodal displacements of a network at every step.
    pub fn displacements(&mut self, mlp: &MlpState) -> Vec<Vec<Vector3<f64>>> {
        self.forward_nodes(mlp);
        self.nodal_displacements()
    }

    fn forward_nodes(&mut self, mlp: &MlpState) {
        mlp.forward_batch(&self.node_inputs, &mut self.node_batch);
        let out = self.node_batch.outputs();
        self.u.clear();
        self.u.extend(self.node_base.iter().zip(&self.node_g).enumerate().map(|(k, (b, g))| {
            Vector3::new(b[0] + g * out[3 * k], b[1] + g * out[3 * k + 1], b[2] + g * out[3 * k + 2])
        }));
    }

    /// Loss and (optionally) its gradients.
    pub fn evaluate(&mut self, mlp: &MlpState, spec: &MaterialSpec, want_grad: bool) -> Result<Evaluation> {
        let start = Instant::now();
        if spec.model() != self.kernel.model() {
            return Err(invalid("material model differs from the one the engine was built for"));
        }
        let w = self.problem.weights;
        let n_nodes = self.problem.nodes.len();
        let steps = self.problem.ansatz.steps;
        let axis = self.problem.ansatz.axis;
        let params = spec.values();
        let floor = PhysicsKernel::inversion_floor(spec);

        self.forward_nodes(mlp);
        let mut b = LossBreakdown::default();
        let mut d_energy_params = vec![0.0; params.len()];
        for n in 0..steps {
            let u = &self.u[n * n_nodes..(n + 1) * n_nodes];
            let out = &mut self.step_out[n];
            self.kernel.forces(params, floor, u, out)?;
            b.step_energies.push(out.energy);
            b.inverted += out.inverted;
            b.lockup += out.lockup;
            for (d, s) in d_energy_params.iter_mut().zip(&out.d_params) {
                *d += s;
            }
            b.residual += out
                .forces
                .iter()
                .zip(&self.free)
                .filter(|(_, free)| **free)
                .map(|(f, _)| f.norm_squared())
                .sum::<f64>();
            b.net_force.push(self.force_nodes.iter().map(|&i| out.forces[i][axis]).sum());
        }
        b.energy = b.step_energies.iter().sum();
        if let Some(measured) = &self.problem.measured_forces {
            b.force = force_loss(&b.net_force, measured)?;
        }

        let n_samples = self.problem.samples.len();
        if n_samples > 0 {
            mlp.forward_batch(&self.sample_inputs, &mut self.sample_batch);
            let out = self.sample_batch.outputs();
            self.sample_d_out.clear();
            let mut sum = 0.0;
            for (k, s) in self.problem.samples.iter().enumerate() {
                let g = self.sample_g[k];
                let base = &self.sample_base[k];
                for i in 0..3 {
                    let r = base[i] + g * out[3 * k + i] - s.u[i];
                    sum += r * r;
                    self.sample_d_out.push(w.gamma * 2.0 * r / n_samples as f64 * g);
                }
            }
            b.data = sum / n_samples as f64;
        }
        b.total = w.beta * (b.energy + w.alpha * b.residual) + w.gamma * b.data + w.delta * b.force;

        let mut eval = Evaluation {
            breakdown: b,
            grads: GradBundle::default(),
        };
        if !want_grad {
            self.last_seconds = start.elapsed().as_secs_f64();
            return Ok(eval);
        }

        let mut gp = vec![0.0; params.len()];
        if self.problem.energy_material_gradient {
            for (g, d) in gp.iter_mut().zip(&d_energy_params) {
                *g += w.beta * d;
            }
        }
        self.gu.clear();
        self.gu.resize(steps * n_nodes, Vector3::zeros());
        let force_weight = match &self.problem.measured_forces {
            Some(m) if w.delta > 0.0 => Some(m),
            _ => None,
        };
        for n in 0..steps {
            let forces = &self.step_out[n].forces;
            let mut any = false;
            for i in 0..n_nodes {
                self.adjoint[i] = if self.free[i] && w.alpha * w.beta > 0.0 {
                    any = true;
                    2.0 * w.beta * w.alpha * forces[i]
                } else {
                    Vector3::zeros()
                };
            }
            if let Some(measured) = force_weight {
                let scale = w.delta * 2.0 / steps as f64 * (eval.breakdown.net_force[n] - measured[n]);
                for &i in &self.force_nodes {
                    self.adjoint[i][axis] += scale;
                }
                any = true;
            }
            let gu = &mut self.gu[n * n_nodes..(n + 1) * n_nodes];
            if any {
                let u = &self.u[n * n_nodes..(n + 1) * n_nodes];
                self.kernel.tangent_products(params, u, &self.adjoint, gu, &mut gp)?;
            }
            if w.beta > 0.0 {
                for (g, f) in gu.iter_mut().zip(forces) {
                    *g += w.beta * f;
                }
            }
        }

        let mut d_weights = vec![0.0; mlp.param_count()];
        self.d_out.clear();
        for (g, gu) in self.node_g.iter().zip(&self.gu) {
            self.d_out.extend([g * gu[0], g * gu[1], g * gu[2]]);
        }
        mlp.backward_batch(&mut self.node_batch, &self.d_out, &mut d_weights);
        if n_samples > 0 && w.gamma > 0.0 {
            mlp.backward_batch(&mut self.sample_batch, &self.sample_d_out, &mut d_weights);
        }
        eval.grads = GradBundle {
            d_weights,
            d_nodal_u: self.gu.iter().flat_map(|v| [v[0], v[1], v[2]]).collect(),
            d_material: gp,
        };
        self.last_seconds = start.elapsed().as_secs_f64();
        Ok(eval)
    }
}
