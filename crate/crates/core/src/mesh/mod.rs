//! Hexahedral meshes in the reference configuration.
//!
//! Connectivity follows the usual Hex8 convention: nodes 0..4 run
//! counterclockwise around the bottom face (ζ = -1) seen from above, nodes 4..8
//! repeat the pattern on the top face (ζ = +1). Reference coordinates of node
//! `k` are [`crate::quadrature::HEX8_NODES`]`[k]`.

mod generate;
mod io;

use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::quadrature::{element_jacobian_dets, GAUSS_POINTS};

pub use generate::{generate_box, generate_notched_plate, generate_plate_with_hole, NotchSpec};
pub use io::{load_mesh, parse_mesh, save_mesh, write_mesh};

/// Local faces of a Hex8, each listed counterclockwise seen from outside.
pub const HEX8_FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1], // zeta = -1
    [4, 5, 6, 7], // zeta = +1
    [0, 1, 5, 4], // eta = -1
    [1, 2, 6, 5], // xi = +1
    [2, 3, 7, 6], // eta = +1
    [3, 0, 4, 7], // xi = -1
];

#[derive(Debug, Clone, PartialEq)]
pub struct HexMesh {
    nodes: Vec<Vector3<f64>>,
    elements: Vec<[usize; 8]>,
    node_sets: BTreeMap<String, Vec<usize>>,
    side_sets: BTreeMap<String, Vec<(usize, u8)>>,
}

impl HexMesh {
    /// Builds a mesh and checks every invariant (index range, positive
    /// Jacobian at all Gauss points, non-empty sets).
    pub fn new(
        nodes: Vec<Vector3<f64>>,
        elements: Vec<[usize; 8]>,
        node_sets: BTreeMap<String, Vec<usize>>,
        side_sets: BTreeMap<String, Vec<(usize, u8)>>,
    ) -> Result<Self> {
        let mesh = Self {
            nodes,
            elements,
            node_sets,
            side_sets,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let mut failures = Vec::new();
        if n == 0 {
            failures.push("mesh has no nodes".to_string());
        }
        if self.elements.is_empty() {
            failures.push("mesh has no elements".to_string());
        }
        for (k, p) in self.nodes.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                failures.push(format!("node {k} has non-finite coordinates"));
            }
        }
        let mut indices_ok = true;
        for (e, conn) in self.elements.iter().enumerate() {
            for &i in conn {
                if i >= n {
                    failures.push(format!("element {e} references node {i} but mesh has {n} nodes"));
                    indices_ok = false;
                }
            }
        }
        if indices_ok {
            for e in 0..self.elements.len() {
                let dets = element_jacobian_dets(&self.element_coords(e));
                if dets.iter().any(|d| !(*d > 0.0)) {
                    failures.push(format!("detJ <= 0 in element {e}"));
                }
            }
        }
        for (name, set) in &self.node_sets {
            if set.is_empty() {
                failures.push(format!("node set `{name}` is empty"));
            }
            if let Some(bad) = set.iter().find(|&&i| i >= n) {
                failures.push(format!("node set `{name}` references node {bad}"));
            }
        }
        for (name, set) in &self.side_sets {
            for &(e, f) in set {
                if e >= self.elements.len() || f >= 6 {
                    failures.push(format!("side set `{name}` has invalid entry ({e}, {f})"));
                }
            }
        }
        if failures.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(failures))
        }
    }

    pub fn nodes(&self) -> &[Vector3<f64>] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 8]] {
        &self.elements
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn node_sets(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.node_sets
    }

    pub fn side_sets(&self) -> &BTreeMap<String, Vec<(usize, u8)>> {
        &self.side_sets
    }

    pub fn node_set(&self, name: &str) -> Result<&[usize]> {
        match self.node_sets.get(name) {
            Some(set) if !set.is_empty() => Ok(set),
            Some(_) => Err(Error::InvalidArgument(format!("node set `{name}` is empty"))),
            None => Err(Error::InvalidArgument(format!("node set `{name}` does not exist"))),
        }
    }

    pub fn element_coords(&self, e: usize) -> [Vector3<f64>; 8] {
        let conn = &self.elements[e];
        std::array::from_fn(|a| self.nodes[conn[a]])
    }

    /// Axis-aligned bounds `(min, max)` of the reference configuration.
    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.nodes {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Reference volume by 2x2x2 Gauss quadrature.
    pub fn volume(&self) -> f64 {
        (0..self.elements.len())
            .map(|e| element_jacobian_dets(&self.element_coords(e)).iter().sum::<f64>())
            .sum::<f64>()
            * GAUSS_POINTS[0].1
    }

    /// Element faces that belong to exactly one element, as node quadruples
    /// oriented outward.
    pub fn boundary_faces(&self) -> Vec<[usize; 4]> {
        let mut count: HashMap<[usize; 4], usize> = HashMap::new();
        let mut faces = Vec::with_capacity(self.elements.len() * 6);
        for conn in &self.elements {
            for local in &HEX8_FACES {
                let face = local.map(|a| conn[a]);
                let mut key = face;
                key.sort_unstable();
                *count.entry(key).or_default() += 1;
                faces.push((key, face));
            }
        }
        faces
            .into_iter()
            .filter(|(key, _)| count[key] == 1)
            .map(|(_, face)| face)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_range_index_is_reported() {
        let mesh = generate_box([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
        let mut elements = mesh.elements().to_vec();
        elements[3][5] = 999;
        let err = HexMesh::new(mesh.nodes().to_vec(), elements, BTreeMap::new(), BTreeMap::new())
            .unwrap_err();
        match err {
            Error::Validation(f) => assert!(f.iter().any(|m| m.contains("999"))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverted_element_is_reported() {
        let mesh = generate_box([1.0, 1.0, 1.0], [2, 2, 2]).unwrap();
        let mut elements = mesh.elements().to_vec();
        elements[4].swap(0, 4);
        elements[4].swap(1, 5);
        elements[4].swap(2, 6);
        elements[4].swap(3, 7);
        let err = HexMesh::new(mesh.nodes().to_vec(), elements, BTreeMap::new(), BTreeMap::new())
            .unwrap_err();
        assert!(err.to_string().contains("detJ <= 0 in element 4"), "{err}");
    }

    #[test]
    fn boundary_faces_of_box() {
        let mesh = generate_box([1.0, 2.0, 3.0], [2, 3, 4]).unwrap();
        let faces = mesh.boundary_faces();
        assert_eq!(faces.len(), 2 * (2 * 3 + 3 * 4 + 2 * 4));
    }

    #[test]
    fn empty_set_lookup_fails() {
        let mesh = generate_box([1.0, 1.0, 1.0], [1, 1, 1]).unwrap();
        assert!(mesh.node_set("nope").is_err());
        assert_eq!(mesh.node_set("xmin").unwrap().len(), 4);
    }
}
