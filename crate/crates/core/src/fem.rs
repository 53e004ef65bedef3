//! Reference finite element solver.
//!
//! Total-Lagrangian Hex8 elements with full 2x2x2 integration, Newton
//! iterations with the consistent analytic tangent, and a sparse Cholesky
//! factorization of the free-dof stiffness. A load step that fails to
//! converge is bisected.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constitutive::{pk1_stress, MaterialSpec, TangentOperator};
use crate::error::{invalid, Error, Result};
use crate::kinematics::DeformationState;
use crate::mesh::HexMesh;
use crate::network::AnsatzConfig;
use crate::quadrature::{build_cache, QuadratureCache};

/// Per-step prescribed displacement values for constrained dofs, plus the
/// node set whose summed internal force is reported as the reaction.
#[derive(Debug, Clone, PartialEq)]
pub struct BcSchedule {
    steps: usize,
    /// dof index (`3 * node + component`) -> value at steps `1..=steps`.
    prescribed: BTreeMap<usize, Vec<f64>>,
    reaction_nodes: Vec<usize>,
    reaction_axis: usize,
}

impl BcSchedule {
    pub fn new(steps: usize, reaction_nodes: Vec<usize>, reaction_axis: usize) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("a boundary-condition schedule needs at least one step"));
        }
        if reaction_axis > 2 {
            return Err(invalid("reaction axis must be 0, 1 or 2"));
        }
        Ok(Self {
            steps,
            prescribed: BTreeMap::new(),
            reaction_nodes,
            reaction_axis,
        })
    }

    /// Prescribes `values[n - 1]` at step `n` for one dof.
    pub fn prescribe(&mut self, node: usize, component: usize, values: Vec<f64>) -> Result<()> {
        if component > 2 {
            return Err(invalid("component must be 0, 1 or 2"));
        }
        if values.len() != self.steps {
            return Err(invalid(format!("expected {} step values, got {}", self.steps, values.len())));
        }
        self.prescribed.insert(3 * node + component, values);
        Ok(())
    }

    /// The uniaxial conditions matching the network ansatz: nodes on the
    /// fixed face are clamped, nodes on the moving face follow the ramp
    /// along the axis with zero transverse motion.
    pub fn uniaxial(mesh: &HexMesh, ansatz: &AnsatzConfig) -> Result<Self> {
        let mut hi_nodes = Vec::new();
        let mut bc = Self::new(ansatz.steps, Vec::new(), ansatz.axis)?;
        for (i, x) in mesh.nodes().iter().enumerate() {
            let on_lo = x[ansatz.axis] == ansatz.lo;
            let on_hi = x[ansatz.axis] == ansatz.hi;
            if !(on_lo || on_hi) {
                continue;
            }
            if on_hi {
                hi_nodes.push(i);
            }
            for c in 0..3 {
                let values = (1..=ansatz.steps)
                    .map(|n| if on_hi && c == ansatz.axis { ansatz.ramp(n) } else { 0.0 })
                    .collect();
                bc.prescribe(i, c, values)?;
            }
        }
        if hi_nodes.is_empty() {
            return Err(invalid("no mesh nodes lie on the displaced face"));
        }
        bc.reaction_nodes = hi_nodes;
        Ok(bc)
    }

    /// [`Self::uniaxial`] with every transverse displacement component
    /// fixed, so the exact solution is a homogeneous uniaxial strain.
    pub fn uniaxial_strain(mesh: &HexMesh, ansatz: &AnsatzConfig) -> Result<Self> {
        let mut bc = Self::uniaxial(mesh, ansatz)?;
        for i in 0..mesh.node_count() {
            for c in (0..3).filter(|&c| c != ansatz.axis) {
                bc.prescribe(i, c, vec![0.0; ansatz.steps])?;
            }
        }
        Ok(bc)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reaction_nodes(&self) -> &[usize] {
        &self.reaction_nodes
    }

    pub fn reaction_axis(&self) -> usize {
        self.reaction_axis
    }

    pub fn is_prescribed(&self, dof: usize) -> bool {
        self.prescribed.contains_key(&dof)
    }

    /// Prescribed value at a fractional load level `step - 1 + s`, `s` in
    /// `[0, 1]`, interpolating linearly from the previous step (zero before
    /// the first).
    fn value(&self, values: &[f64], step: usize, s: f64) -> f64 {
        let prev = if step >= 2 { values[step - 2] } else { 0.0 };
        prev + s * (values[step - 1] - prev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on the Euclidean norm of the free-dof residual (N).
    pub newton_tol: f64,
    pub max_iterations: usize,
    /// Maximum number of times one step's increment may be halved.
    pub max_bisections: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_iterations: 50,
            max_bisections: 8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepHistory {
    /// Newton iterations (linear solves) summed over all substeps.
    pub iterations: usize,
    /// Residual norm before each solve and after the last one.
    pub residuals: Vec<f64>,
    pub bisections: usize,
    pub substeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FemSolution {
    /// `displacements[n - 1][node]` at step `n`.
    pub displacements: Vec<Vec<Vector3<f64>>>,
    /// Reaction force along the reaction axis on the reaction nodes, per step.
    pub net_force: Vec<f64>,
    pub history: Vec<StepHistory>,
}

impl FemSolution {
    pub fn steps(&self) -> usize {
        self.displacements.len()
    }

    /// Normalized time `n / N_t` of step `n`.
    pub fn time(&self, step: usize) -> f64 {
        step as f64 / self.steps() as f64
    }
}

struct Assembly<'a> {
    cache: &'a QuadratureCache,
    spec: &'a MaterialSpec,
}

impl Assembly<'_> {
    fn deformation(&self, u: &[Vector3<f64>], e: usize, q: usize) -> DeformationState {
        let conn = self.cache.connectivity(e);
        let g = self.cache.grad_n(e, q);
        let mut f = Matrix3::identity();
        for a in 0..8 {
            for i in 0..3 {
                for j in 0..3 {
                    f[(i, j)] += u[conn[a]][i] * g[a][j];
                }
            }
        }
        DeformationState::from_f(f)
    }

    fn internal_force(&self, u: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        let mut f = vec![Vector3::zeros(); u.len()];
        for e in 0..self.cache.element_count() {
            let conn = self.cache.connectivity(e);
            for q in 0..8 {
                let p = pk1_stress(self.spec, &self.deformation(u, e, q))?;
                let m = self.cache.measure(e, q);
                let g = self.cache.grad_n(e, q);
                for a in 0..8 {
                    f[conn[a]] += m * (p * Vector3::from(g[a]));
                }
            }
        }
        Ok(f)
    }

    /// Internal force and the free-dof block of the stiffness matrix.
    fn linearize(&self, u: &[Vector3<f64>], free_index: &[Option<usize>], n_free: usize) -> Result<(Vec<Vector3<f64>>, CscMatrix<f64>)> {
        let mut f = vec![Vector3::zeros(); u.len()];
        let mut coo = CooMatrix::new(n_free, n_free);
        let mut ke = [[0.0f64; 24]; 24];
        for e in 0..self.cache.element_count() {
            let conn = self.cache.connectivity(e);
            for row in ke.iter_mut() {
                row.fill(0.0);
            }
            for q in 0..8 {
                let op = TangentOperator::new(self.spec, &self.deformation(u, e, q))?;
                let m = self.cache.measure(e, q);
                let g = self.cache.grad_n(e, q);
                let p = op.stress();
                for a in 0..8 {
                    f[conn[a]] += m * (p * Vector3::from(g[a]));
                }
                for b in 0..8 {
                    for k in 0..3 {
                        let mut df = Matrix3::zeros();
                        for l in 0..3 {
                            df[(k, l)] = g[b][l];
                        }
                        let a_df = op.apply(&df);
                        for a in 0..8 {
                            let col = a_df * Vector3::from(g[a]);
                            for i in 0..3 {
                                ke[3 * a + i][3 * b + k] += m * col[i];
                            }
                        }
                    }
                }
            }
            for a in 0..8 {
                for i in 0..3 {
                    let Some(r) = free_index[3 * conn[a] + i] else { continue };
                    for b in 0..8 {
                        for k in 0..3 {
                            if let Some(c) = free_index[3 * conn[b] + k] {
                                coo.push(r, c, ke[3 * a + i][3 * b + k]);
                            }
                        }
                    }
                }
            }
        }
        Ok((f, CscMatrix::from(&coo)))
    }
}

fn solve_linear(k: &CscMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Ok(chol) = CscCholesky::factor(k) {
        let x = chol.solve(rhs);
        return Some(x.column(0).into_owned());
    }
    let dense = DMatrix::from(k);
    dense.lu().solve(rhs)
}

enum Attempt {
    Converged,
    Failed(String),
}

/// Solves the quasi-static boundary-value problem at every step of the
/// schedule.
pub fn solve(mesh: &HexMesh, spec: &MaterialSpec, bcs: &BcSchedule, options: &SolverOptions) -> Result<FemSolution> {
    let cache = build_cache(mesh)?;
    let n_nodes = mesh.node_count();
    if let Some(&dof) = bcs.prescribed.keys().next_back() {
        if dof >= 3 * n_nodes {
            return Err(invalid(format!("boundary condition on dof {dof} outside the mesh")));
        }
    }
    let mut free_index = vec![None; 3 * n_nodes];
    let mut n_free = 0;
    for (dof, slot) in free_index.iter_mut().enumerate() {
        if !bcs.is_prescribed(dof) {
            *slot = Some(n_free);
            n_free += 1;
        }
    }
    let asm = Assembly { cache: &cache, spec };

    let mut u = vec![Vector3::zeros(); n_nodes];
    let mut last_increment: Option<(Vec<Vector3<f64>>, f64)> = None;
    let mut solution = FemSolution {
        displacements: Vec::with_capacity(bcs.steps),
        net_force: Vec::with_capacity(bcs.steps),
        history: Vec::with_capacity(bcs.steps),
    };

    for step in 1..=bcs.steps {
        let mut history = StepHistory::default();
        let mut level = 0.0f64;
        let mut size = 1.0f64;
        while level < 1.0 {
            let target = (level + size).min(1.0);
            let start = u.clone();
            let mut trial = u.clone();
            for (&dof, values) in &bcs.prescribed {
                trial[dof / 3][dof % 3] = bcs.value(values, step, target);
            }
            if let Some((inc, prev_size)) = &last_increment {
                let scale = (target - level) / prev_size;
                for (i, d) in inc.iter().enumerate() {
                    for c in 0..3 {
                        if free_index[3 * i + c].is_some() {
                            trial[i][c] += scale * d[c];
                        }
                    }
                }
            }
            match newton(&asm, &mut trial, &free_index, n_free, options, &mut history) {
                Attempt::Converged => {
                    let inc: Vec<Vector3<f64>> = trial.iter().zip(&start).map(|(a, b)| a - b).collect();
                    last_increment = Some((inc, target - level));
                    u = trial;
                    level = target;
                    history.substeps += 1;
                }
                Attempt::Failed(message) => {
                    if history.bisections >= options.max_bisections {
                        return Err(Error::Solver {
                            step,
                            message: format!(
                                "{message}; gave up after {} bisections (residual history {:?})",
                                history.bisections, history.residuals
                            ),
                        });
                    }
                    history.bisections += 1;
                    size *= 0.5;
                    last_increment = None;
                }
            }
        }
        let f = asm.internal_force(&u)?;
        solution
            .net_force
            .push(bcs.reaction_nodes.iter().map(|&i| f[i][bcs.reaction_axis]).sum());
        solution.displacements.push(u.clone());
        solution.history.push(history);
    }
    Ok(solution)
}

fn newton(
    asm: &Assembly,
    u: &mut [Vector3<f64>],
    free_index: &[Option<usize>],
    n_free: usize,
    options: &SolverOptions,
    history: &mut StepHistory,
) -> Attempt {
    for _ in 0..=options.max_iterations {
        let (f, k) = match asm.linearize(u, free_index, n_free) {
            Ok(v) => v,
            Err(e) => return Attempt::Failed(e.to_string()),
        };
        let mut r = DVector::zeros(n_free);
        for (dof, idx) in free_index.iter().enumerate() {
            if let Some(i) = idx {
                r[*i] = f[dof / 3][dof % 3];
            }
        }
        let norm = r.norm();
        history.residuals.push(norm);
        if !norm.is_finite() {
            return Attempt::Failed("non-finite residual".into());
        }
        if norm < options.newton_tol {
            return Attempt::Converged;
        }
        if history.residuals.len() > 1 && history.iterations >= options.max_iterations {
            break;
        }
        let Some(du) = solve_linear(&k, &(-r)) else {
            return Attempt::Failed("singular stiffness matrix".into());
        };
        history.iterations += 1;
        for (dof, idx) in free_index.iter().enumerate() {
            if let Some(i) = idx {
                u[dof / 3][dof % 3] += du[*i];
            }
        }
    }
    Attempt::Failed(format!("no convergence in {} iterations", options.max_iterations))
}

/// Largest relative deviation between the analytic tangent and central
/// differences of the analytic stress over random deformation states.
pub fn tangent_check(spec: &MaterialSpec, states: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    while accepted < states {
        let f = Matrix3::identity() + Matrix3::from_fn(|_, _| rng.random_range(-0.3..0.3));
        let state = DeformationState::from_f(f);
        let Ok(op) = TangentOperator::new(spec, &state) else { continue };
        if !(0.5..=2.0).contains(&state.j) {
            continue;
        }
        accepted += 1;
        let a = op.matrix();
        let h = 1e-6;
        for col in 0..9 {
            let mut fp = f;
            let mut fm = f;
            fp[(col / 3, col % 3)] += h;
            fm[(col / 3, col % 3)] -= h;
            let fd = (pk1_stress(spec, &DeformationState::from_f(fp))? - pk1_stress(spec, &DeformationState::from_f(fm))?) / (2.0 * h);
            let scale = a.abs().max();
            for row in 0..9 {
                let err = (a[(row, col)] - fd[(row / 3, row % 3)]).abs() / scale;
                worst = worst.max(err);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_box;

    fn cube(n: usize) -> HexMesh {
        generate_box([1.0, 1.0, 1.0], [n, n, n]).unwrap()
    }

    /// `dpsi/dlambda` of the Neo-Hookean energy along `F = diag(lambda, 1, 1)`,
    /// differentiated by hand.
    fn neo_hookean_p11(k: f64, mu: f64, lambda: f64) -> f64 {
        0.5 * k * (lambda - 1.0 / lambda) + 0.5 * mu * (4.0 / 3.0) * (lambda.powf(1.0 / 3.0) - lambda.powf(-5.0 / 3.0))
    }

    #[test]
    fn uniaxial_strain_matches_closed_form() {
        let mesh = cube(2);
        let spec = MaterialSpec::neo_hookean(2.0, 0.6).unwrap();
        let ansatz = AnsatzConfig::for_mesh(&mesh, 0, 0.2, 4).unwrap();
        let bc = BcSchedule::uniaxial_strain(&mesh, &ansatz).unwrap();
        let sol = solve(&mesh, &spec, &bc, &SolverOptions::default()).unwrap();
        let expected = neo_hookean_p11(2.0, 0.6, 1.2);
        let got = *sol.net_force.last().unwrap();
        assert!(((got - expected) / expected).abs() < 1e-8, "{got} vs {expected}");
        for h in &sol.history {
            assert!(h.iterations <= 6, "{h:?}");
            assert!(*h.residuals.last().unwrap() < 1e-10);
        }
        for (x, u) in mesh.nodes().iter().zip(sol.displacements.last().unwrap()) {
            assert!((u - Vector3::new(0.2 * x[0], 0.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_loading_gives_zero_solution() {
        let mesh = cube(2);
        let spec = MaterialSpec::neo_hookean(2.0, 0.6).unwrap();
        let ansatz = AnsatzConfig::for_mesh(&mesh, 0, 0.0, 3).unwrap();
        let bc = BcSchedule::uniaxial(&mesh, &ansatz).unwrap();
        let sol = solve(&mesh, &spec, &bc, &SolverOptions::default()).unwrap();
        assert!(sol.displacements.iter().flatten().all(|u| *u == Vector3::zeros()));
        assert!(sol.net_force.iter().all(|f| *f == 0.0));
    }

    #[test]
    fn blatz_ko_compression_is_monotone() {
        let mesh = cube(3);
        let spec = MaterialSpec::blatz_ko(1.0).unwrap();
        let ansatz = AnsatzConfig::for_mesh(&mesh, 0, -0.3, 10).unwrap();
        let bc = BcSchedule::uniaxial(&mesh, &ansatz).unwrap();
        let sol = solve(&mesh, &spec, &bc, &SolverOptions::default()).unwrap();
        let mags: Vec<f64> = sol.net_force.iter().map(|f| -f).collect();
        assert!(mags[0] > 0.0);
        assert!(mags.windows(2).all(|w| w[1] > w[0]), "{mags:?}");
    }

    #[test]
    fn refinement_leaves_homogeneous_solution_unchanged() {
        let spec = MaterialSpec::neo_hookean(2.0, 0.6).unwrap();
        let force = |n: usize| {
            let mesh = cube(n);
            let ansatz = AnsatzConfig::for_mesh(&mesh, 0, 0.2, 2).unwrap();
            let bc = BcSchedule::uniaxial_strain(&mesh, &ansatz).unwrap();
            *solve(&mesh, &spec, &bc, &SolverOptions::default()).unwrap().net_force.last().unwrap()
        };
        assert!((force(2) - force(4)).abs() < 1e-10);
    }

    #[test]
    fn internal_forces_are_in_equilibrium() {
        let mesh = generate_box([1.0, 0.5, 0.4], [4, 2, 2]).unwrap();
        let spec = MaterialSpec::gent(3.0, 1.0, 5.0).unwrap();
        let ansatz = AnsatzConfig::for_mesh(&mesh, 0, 0.15, 3).unwrap();
        let bc = BcSchedule::uniaxial(&mesh, &ansatz).unwrap();
        let sol = solve(&mesh, &spec, &bc, &SolverOptions::default()).unwrap();
        let cache = build_cache(&mesh).unwrap();
        let asm = Assembly { cache: &cache, spec: &spec };
        let f = asm.internal_force(sol.displacements.last().unwrap()).unwrap();
        let total: Vector3<f64> = f.iter().sum();
        assert!(total.norm() < 1e-10, "{total}");
        let far: Vec<usize> = bc.reaction_nodes().to_vec();
        let near: f64 = (0..mesh.node_count())
            .filter(|&i| mesh.nodes()[i][0] == 0.0)
            .map(|i| f[i][0])
            .sum();
        let far_sum: f64 = far.iter().map(|&i| f[i][0]).sum();
        assert!((near + far_sum).abs() < 1e-9);
        assert!(sol.net_force[2] > sol.net_force[1]);
    }

    #[test]
    fn tangent_is_consistent() {
        for spec in [
            MaterialSpec::neo_hookean(2.0, 0.6).unwrap(),
            MaterialSpec::gent(2.0, 0.6, 4.0).unwrap(),
            MaterialSpec::blatz_ko(1.0).unwrap(),
        ] {
            let err = tangent_check(&spec, 50, 1).unwrap();
            assert!(err < 1e-5, "{:?}: {err}", spec.model());
        }
    }

    #[test]
    fn schedule_validation() {
        let mesh = cube(1);
        assert!(BcSchedule::new(0, vec![], 0).is_err());
        let mut bc = BcSchedule::new(2, vec![0], 0).unwrap();
        assert!(bc.prescribe(0, 3, vec![0.0, 0.0]).is_err());
        assert!(bc.prescribe(0, 0, vec![0.0]).is_err());
        bc.prescribe(100, 0, vec![0.0, 0.0]).unwrap();
        assert!(solve(&mesh, &MaterialSpec::blatz_ko(1.0).unwrap(), &bc, &SolverOptions::default()).is_err());
    }

    #[test]
    fn exhausted_bisection_reports_solver_error() {
        let mesh = cube(2);
        let ansatz = AnsatzConfig::for_mesh(&mesh, 0, -0.3, 1).unwrap();
        let bc = BcSchedule::uniaxial(&mesh, &ansatz).unwrap();
        let opts = SolverOptions {
            max_iterations: 1,
            max_bisections: 1,
            ..Default::default()
        };
        match solve(&mesh, &MaterialSpec::blatz_ko(1.0).unwrap(), &bc, &opts) {
            Err(Error::Solver { step, message }) => {
                assert_eq!(step, 1);
                assert!(message.contains("bisections"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }
}
