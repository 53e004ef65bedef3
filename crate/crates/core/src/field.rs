//! Nodal displacement series on a mesh, shared by the oracle, the trained
//! network and the comparison and export commands.
//!
//! ```text
//! caliper-field v1
//! nodes <N> steps <S>
//! step <n> <t> <f_net>        (S blocks)
//! <ux> <uy> <uz>              (N lines per block)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{invalid, Error, Result};
use crate::fem::FemSolution;
use crate::mesh::HexMesh;
use crate::network::DisplacementField;

pub const FIELD_HEADER: &str = "caliper-field v1";

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    /// `displacements[n - 1][node]`.
    pub displacements: Vec<Vec<Vector3<f64>>>,
    pub times: Vec<f64>,
    pub net_force: Vec<f64>,
}

impl FieldSeries {
    pub fn node_count(&self) -> usize {
        self.displacements.first().map_or(0, Vec::len)
    }

    pub fn steps(&self) -> usize {
        self.displacements.len()
    }

    pub fn from_solution(solution: &FemSolution) -> Self {
        Self {
            displacements: solution.displacements.clone(),
            times: (1..=solution.steps()).map(|n| solution.time(n)).collect(),
            net_force: solution.net_force.clone(),
        }
    }

    /// Evaluates a trained field at the mesh nodes for every load step.
    pub fn from_network(field: &DisplacementField, mesh: &HexMesh, net_force: Vec<f64>) -> Self {
        let steps = field.ansatz.steps;
        Self {
            displacements: (1..=steps)
                .map(|n| mesh.nodes().iter().map(|x| field.displacement(x, n)).collect())
                .collect(),
            times: (1..=steps).map(|n| field.ansatz.time(n)).collect(),
            net_force,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{FIELD_HEADER}").unwrap();
        writeln!(out, "nodes {} steps {}", self.node_count(), self.steps()).unwrap();
        for (n, u) in self.displacements.iter().enumerate() {
            writeln!(out, "step {} {} {}", n + 1, self.times[n], self.net_force[n]).unwrap();
            for v in u {
                writeln!(out, "{} {} {}", v[0], v[1], v[2]).unwrap();
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()));
        let err = |line: usize, message: &str| Error::Parse {
            line,
            message: message.into(),
        };
        let mut next = || lines.next().ok_or_else(|| err(0, "unexpected end of field file"));
        let (i, head) = next()?;
        if head.join(" ") != FIELD_HEADER {
            return Err(err(i, "expected header `caliper-field v1`"));
        }
        let (i, dims) = next()?;
        if dims.len() != 4 || dims[0] != "nodes" || dims[2] != "steps" {
            return Err(err(i, "expected `nodes <N> steps <S>`"));
        }
        let count = |s: &str| s.parse::<usize>().map_err(|_| err(i, "invalid count"));
        let (n_nodes, n_steps) = (count(dims[1])?, count(dims[3])?);
        let mut series = Self {
            displacements: Vec::with_capacity(n_steps),
            times: Vec::with_capacity(n_steps),
            net_force: Vec::with_capacity(n_steps),
        };
        for step in 1..=n_steps {
            let (i, t) = next()?;
            if t.len() != 4 || t[0] != "step" || t[1] != step.to_string() {
                return Err(err(i, &format!("expected `step {step} <t> <f_net>`")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(i, &format!("invalid number `{s}`")));
            series.times.push(num(t[2])?);
            series.net_force.push(num(t[3])?);
            let mut u = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let (i, t) = next()?;
                if t.len() != 3 {
                    return Err(err(i, "expected `<ux> <uy> <uz>`"));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| err(i, &format!("invalid number `{s}`")));
                u.push(Vector3::new(num(t[0])?, num(t[1])?, num(t[2])?));
            }
            series.displacements.push(u);
        }
        Ok(series)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Per-step discrepancy between a field and a reference field.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// `||u - u_ref|| / ||u_ref||` over all nodes, per step.
    pub step_displacement: Vec<f64>,
    /// `|f - f_ref| / |f_ref|` per step.
    pub step_force: Vec<f64>,
    /// Displacement error aggregated over every node and step.
    pub displacement: f64,
}

impl Comparison {
    pub fn max_force(&self) -> f64 {
        self.step_force.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,displacement_rel_l2,force_rel\n");
        for (n, (u, f)) in self.step_displacement.iter().zip(&self.step_force).enumerate() {
            writeln!(out, "{},{u},{f}", n + 1).unwrap();
        }
        writeln!(out, "all,{},{}", self.displacement, self.max_force()).unwrap();
        out
    }
}

fn relative(diff_sq: f64, ref_sq: f64) -> f64 {
    if diff_sq == 0.0 {
        0.0
    } else {
        (diff_sq / ref_sq).sqrt()
    }
}

pub fn compare(field: &FieldSeries, reference: &FieldSeries) -> Result<Comparison> {
    if field.steps() != reference.steps() || field.node_count() != reference.node_count() {
        return Err(invalid(format!(
            "fields differ in shape: {} x {} vs {} x {}",
            field.steps(),
            field.node_count(),
            reference.steps(),
            reference.node_count()
        )));
    }
    let mut step_displacement = Vec::with_capacity(field.steps());
    let (mut total_diff, mut total_ref) = (0.0, 0.0);
    for (u, r) in field.displacements.iter().zip(&reference.displacements) {
        let diff: f64 = u.iter().zip(r).map(|(a, b)| (a - b).norm_squared()).sum();
        let norm: f64 = r.iter().map(|b| b.norm_squared()).sum();
        step_displacement.push(relative(diff, norm));
        total_diff += diff;
        total_ref += norm;
    }
    let step_force = field
        .net_force
        .iter()
        .zip(&reference.net_force)
        .map(|(f, r)| relative((f - r) * (f - r), r * r))
        .collect();
    Ok(Comparison {
        step_displacement,
        step_force,
        displacement: relative(total_diff, total_ref),
    })
}

/// Legacy ASCII VTK unstructured grid with one displacement vector per node.
pub fn to_vtk(mesh: &HexMesh, displacements: &[Vector3<f64>], title: &str) -> Result<String> {
    if displacements.len() != mesh.node_count() {
        return Err(invalid("displacement count differs from node count"));
    }
    let mut out = String::new();
    writeln!(out, "# vtk DataFile Version 3.0").unwrap();
    writeln!(out, "{}", title.replace('\n', " ")).unwrap();
    writeln!(out, "ASCII\nDATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(out, "POINTS {} double", mesh.node_count()).unwrap();
    for x in mesh.nodes() {
        writeln!(out, "{} {} {}", x[0], x[1], x[2]).unwrap();
    }
    let e = mesh.element_count();
    writeln!(out, "CELLS {e} {}", 9 * e).unwrap();
    for conn in mesh.elements() {
        let ids: Vec<String> = conn.iter().map(|n| n.to_string()).collect();
        writeln!(out, "8 {}", ids.join(" ")).unwrap();
    }
    writeln!(out, "CELL_TYPES {e}").unwrap();
    for _ in 0..e {
        writeln!(out, "12").unwrap();
    }
    writeln!(out, "POINT_DATA {}", mesh.node_count()).unwrap();
    writeln!(out, "VECTORS displacement double").unwrap();
    for u in displacements {
        writeln!(out, "{} {} {}", u[0], u[1], u[2]).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_box;

    fn series() -> FieldSeries {
        FieldSeries {
            displacements: vec![vec![Vector3::new(0.1, -1e-300, 1.0 / 3.0); 3], vec![Vector3::new(0.2, 0.0, 2.0 / 3.0); 3]],
            times: vec![0.5, 1.0],
            net_force: vec![1.25, 2.5],
        }
    }

    #[test]
    fn text_round_trip() {
        let s = series();
        assert_eq!(FieldSeries::parse(&s.to_text()).unwrap(), s);
        assert!(FieldSeries::parse("caliper-field v1\nnodes 1 steps 1\nstep 2 1 0\n0 0 0\n").is_err());
    }

    #[test]
    fn identical_fields_compare_to_zero() {
        let s = series();
        let c = compare(&s, &s).unwrap();
        assert!(c.step_displacement.iter().chain(&c.step_force).all(|e| *e == 0.0));
        assert_eq!(c.displacement, 0.0);
        let mut t = s.clone();
        t.net_force[1] = 2.75;
        for u in &mut t.displacements[0] {
            *u *= 1.1;
        }
        let c = compare(&t, &s).unwrap();
        assert!((c.step_force[1] - 0.1).abs() < 1e-15);
        assert!((c.step_displacement[0] - 0.1).abs() < 1e-12);
        assert!(compare(&t, &FieldSeries { displacements: vec![], times: vec![], net_force: vec![] }).is_err());
    }

    #[test]
    fn vtk_layout() {
        let mesh = generate_box([1.0; 3], [1, 1, 2]).unwrap();
        let text = to_vtk(&mesh, &vec![Vector3::zeros(); 12], "t").unwrap();
        assert!(text.contains("POINTS 12 double"));
        assert!(text.contains("CELLS 2 18"));
        assert_eq!(text.lines().filter(|l| *l == "12").count(), 2);
        assert!(to_vtk(&mesh, &[], "t").is_err());
    }
}
