//! Hex8 shape functions, the 2x2x2 Gauss rule, and per-point geometric
//! quantities that stay constant over training (total-Lagrangian setting).

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::HexMesh;

/// Reference coordinates of the eight Hex8 nodes.
pub const HEX8_NODES: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

const G: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

/// Tensor-product two-point Gauss rule: eight points, unit weights.
pub const GAUSS_POINTS: [([f64; 3], f64); 8] = [
    ([-G, -G, -G], 1.0),
    ([G, -G, -G], 1.0),
    ([G, G, -G], 1.0),
    ([-G, G, -G], 1.0),
    ([-G, -G, G], 1.0),
    ([G, -G, G], 1.0),
    ([G, G, G], 1.0),
    ([-G, G, G], 1.0),
];

pub const POINTS_PER_ELEMENT: usize = 8;

pub fn shape_values(xi: [f64; 3]) -> [f64; 8] {
    std::array::from_fn(|a| {
        let n = HEX8_NODES[a];
        0.125 * (1.0 + n[0] * xi[0]) * (1.0 + n[1] * xi[1]) * (1.0 + n[2] * xi[2])
    })
}

/// Derivatives of the shape functions with respect to the reference
/// coordinates; row `a` is `dN_a/dxi`.
pub fn shape_gradients(xi: [f64; 3]) -> [[f64; 3]; 8] {
    std::array::from_fn(|a| {
        let n = HEX8_NODES[a];
        let f = [1.0 + n[0] * xi[0], 1.0 + n[1] * xi[1], 1.0 + n[2] * xi[2]];
        [
            0.125 * n[0] * f[1] * f[2],
            0.125 * f[0] * n[1] * f[2],
            0.125 * f[0] * f[1] * n[2],
        ]
    })
}

/// Isoparametric Jacobian `dX/dxi` of an element at `xi`.
pub fn element_jacobian(coords: &[Vector3<f64>; 8], xi: [f64; 3]) -> Matrix3<f64> {
    let dn = shape_gradients(xi);
    let mut jac = Matrix3::zeros();
    for (x, d) in coords.iter().zip(dn.iter()) {
        for i in 0..3 {
            for j in 0..3 {
                jac[(i, j)] += x[i] * d[j];
            }
        }
    }
    jac
}

pub fn element_jacobian_dets(coords: &[Vector3<f64>; 8]) -> [f64; 8] {
    std::array::from_fn(|q| element_jacobian(coords, GAUSS_POINTS[q].0).determinant())
}

/// Precomputed weights, Jacobian determinants and physical shape-function
/// gradients for every (element, Gauss point) pair.
#[derive(Debug, Clone)]
pub struct QuadratureCache {
    elements: Vec<[usize; 8]>,
    node_count: usize,
    det_j: Vec<f64>,
    grad_n: Vec<[[f64; 3]; 8]>,
}

pub fn build_cache(mesh: &HexMesh) -> Result<QuadratureCache> {
    let n_el = mesh.element_count();
    let mut det_j = Vec::with_capacity(n_el * 8);
    let mut grad_n = Vec::with_capacity(n_el * 8);
    for e in 0..n_el {
        let coords = mesh.element_coords(e);
        for (q, (xi, _)) in GAUSS_POINTS.iter().enumerate() {
            let jac = element_jacobian(&coords, *xi);
            let det = jac.determinant();
            if !(det > 0.0) {
                return Err(Error::NonPositiveJacobian { element: e, point: q });
            }
            let inv_t = jac
                .try_inverse()
                .ok_or(Error::NonPositiveJacobian { element: e, point: q })?
                .transpose();
            let dn = shape_gradients(*xi);
            let g = std::array::from_fn(|a| {
                let v = inv_t * Vector3::from(dn[a]);
                [v[0], v[1], v[2]]
            });
            det_j.push(det);
            grad_n.push(g);
        }
    }
    Ok(QuadratureCache {
        elements: mesh.elements().to_vec(),
        node_count: mesh.node_count(),
        det_j,
        grad_n,
    })
}

impl QuadratureCache {
    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn connectivity(&self, e: usize) -> &[usize; 8] {
        &self.elements[e]
    }

    pub fn weight(&self, q: usize) -> f64 {
        GAUSS_POINTS[q].1
    }

    pub fn det_j(&self, e: usize, q: usize) -> f64 {
        self.det_j[e * 8 + q]
    }

    /// `w_q * detJ` for the point.
    pub fn measure(&self, e: usize, q: usize) -> f64 {
        GAUSS_POINTS[q].1 * self.det_j[e * 8 + q]
    }

    /// Physical gradients `dN_a/dX` of the eight shape functions at `(e, q)`.
    pub fn grad_n(&self, e: usize, q: usize) -> &[[f64; 3]; 8] {
        &self.grad_n[e * 8 + q]
    }

    pub fn volume(&self) -> f64 {
        (0..self.elements.len())
            .flat_map(|e| (0..8).map(move |q| (e, q)))
            .map(|(e, q)| self.measure(e, q))
            .sum()
    }

    /// Quadrature-point evaluations performed by one full-batch epoch over
    /// `steps` load steps.
    pub fn evaluations_per_epoch(&self, steps: usize) -> usize {
        evaluations_per_epoch(self.elements.len(), steps)
    }
}

pub fn evaluations_per_epoch(elements: usize, steps: usize) -> usize {
    elements * POINTS_PER_ELEMENT * steps
}
