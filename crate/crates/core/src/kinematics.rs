//! Deformation gradient and its invariants at quadrature points.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureCache;

/// `grad u = sum_a u_a (x) dN_a/dX` at Gauss point `q` of element `e`.
pub fn displacement_gradient(
    cache: &QuadratureCache,
    nodal_u: &[Vector3<f64>],
    e: usize,
    q: usize,
) -> Matrix3<f64> {
    let conn = cache.connectivity(e);
    let g = cache.grad_n(e, q);
    let mut h = Matrix3::zeros();
    for (a, &node) in conn.iter().enumerate() {
        let u = &nodal_u[node];
        for i in 0..3 {
            for j in 0..3 {
                h[(i, j)] += u[i] * g[a][j];
            }
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationState {
    pub f: Matrix3<f64>,
    pub j: f64,
    pub c: Matrix3<f64>,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    /// `J^(-2/3) I1`; NaN when `J <= 0`.
    pub ibar1: f64,
}

impl DeformationState {
    pub fn from_f(f: Matrix3<f64>) -> Self {
        let j = f.determinant();
        let c = f.transpose() * f;
        let i1 = c.trace();
        let i2 = 0.5 * (i1 * i1 - (c * c).trace());
        let ibar1 = if j > 0.0 { j.powf(-2.0 / 3.0) * i1 } else { f64::NAN };
        Self {
            f,
            j,
            c,
            i1,
            i2,
            i3: j * j,
            ibar1,
        }
    }

    pub fn is_inverted(&self) -> bool {
        !(self.j > 0.0)
    }

    /// Fails with [`Error::Inverted`] when `J <= 0`.
    pub fn admissible(&self) -> Result<&Self> {
        if self.is_inverted() {
            Err(Error::Inverted { j: self.j })
        } else {
            Ok(self)
        }
    }
}

/// State for `F = I + grad u`.
pub fn deformation_state(grad_u: &Matrix3<f64>) -> DeformationState {
    DeformationState::from_f(Matrix3::identity() + grad_u)
}
