use nalgebra::Vector3;

use super::MlpState;
use crate::error::{invalid, Result};
use crate::mesh::HexMesh;

/// Uniaxial boundary ansatz
/// `u = s * u_end(t) * e_axis + g(X, t) * N(X, t)` with `s = (X_a - lo) / L`
/// and `g = t (X_a - lo)(X_a - hi)`, so the face `X_a = lo` is fixed and the
/// face `X_a = hi` moves by exactly `u_end(t)` along the axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnsatzConfig {
    pub axis: usize,
    /// Coordinate of the fixed face.
    pub lo: f64,
    /// Coordinate of the displaced face.
    pub hi: f64,
    /// Displacement of the moving face at the final step (mm).
    pub final_displacement: f64,
    pub steps: usize,
}

impl AnsatzConfig {
    pub fn new(axis: usize, lo: f64, hi: f64, final_displacement: f64, steps: usize) -> Result<Self> {
        if axis > 2 {
            return Err(invalid(format!("stretch axis must be 0, 1 or 2, got {axis}")));
        }
        if !(hi > lo) {
            return Err(invalid(format!("ansatz needs lo < hi, got ({lo}, {hi})")));
        }
        if steps == 0 {
            return Err(invalid("number of load steps must be >= 1"));
        }
        if !final_displacement.is_finite() {
            return Err(invalid("final displacement must be finite"));
        }
        Ok(Self {
            axis,
            lo,
            hi,
            final_displacement,
            steps,
        })
    }

    /// Ansatz stretching a mesh along `axis` between its bounding planes.
    pub fn for_mesh(mesh: &HexMesh, axis: usize, final_displacement: f64, steps: usize) -> Result<Self> {
        if axis > 2 {
            return Err(invalid(format!("stretch axis must be 0, 1 or 2, got {axis}")));
        }
        let (lo, hi) = mesh.bounding_box();
        Self::new(axis, lo[axis], hi[axis], final_displacement, steps)
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// Normalized time `n / N_t` of step `n` (1-based).
    pub fn time(&self, step: usize) -> f64 {
        step as f64 / self.steps as f64
    }

    /// Prescribed displacement of the moving face at step `n`.
    pub fn ramp(&self, step: usize) -> f64 {
        self.final_displacement * self.time(step)
    }

    /// Boundary-vanishing factor `g(X, t)`.
    pub fn distance(&self, x: &Vector3<f64>, t: f64) -> f64 {
        let xa = x[self.axis];
        t * (xa - self.lo) * (xa - self.hi)
    }

    /// The part of the displacement that does not depend on the network,
    /// at normalized time `t`.
    pub fn particular(&self, x: &Vector3<f64>, t: f64) -> Vector3<f64> {
        let mut u = Vector3::zeros();
        // adding +0.0 turns a negative zero on the fixed face into +0.0
        u[self.axis] = (x[self.axis] - self.lo) / self.length() * (self.final_displacement * t) + 0.0;
        u
    }

    /// Combines a network output `n` with the ansatz at time `t`.
    pub fn combine(&self, x: &Vector3<f64>, t: f64, n: [f64; 3]) -> Vector3<f64> {
        let g = self.distance(x, t);
        let base = self.particular(x, t);
        Vector3::new(base[0] + g * n[0], base[1] + g * n[1], base[2] + g * n[2])
    }

    /// Whether a reference point lies on one of the two constrained faces.
    pub fn is_constrained(&self, x: &Vector3<f64>) -> bool {
        x[self.axis] == self.lo || x[self.axis] == self.hi
    }
}

/// Affine map of `(X, t)` onto `[-1, 1]^4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputScaling {
    pub lo: Vector3<f64>,
    pub hi: Vector3<f64>,
}

impl InputScaling {
    pub fn identity() -> Self {
        Self {
            lo: Vector3::repeat(-1.0),
            hi: Vector3::repeat(1.0),
        }
    }

    pub fn for_mesh(mesh: &HexMesh) -> Self {
        let (lo, hi) = mesh.bounding_box();
        Self { lo, hi }
    }

    /// `t` in `[0, 1]` maps to `2t - 1`.
    pub fn apply(&self, x: &Vector3<f64>, t: f64) -> [f64; 4] {
        let s = |d: usize| {
            let span = self.hi[d] - self.lo[d];
            if span > 0.0 {
                2.0 * (x[d] - self.lo[d]) / span - 1.0
            } else {
                0.0
            }
        };
        [s(0), s(1), s(2), 2.0 * t - 1.0]
    }
}

/// Network, scaling and ansatz together: the trial displacement field.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub mlp: MlpState,
    pub ansatz: AnsatzConfig,
    pub scaling: InputScaling,
}

impl DisplacementField {
    pub fn displacement(&self, x: &Vector3<f64>, step: usize) -> Vector3<f64> {
        self.displacement_at_time(x, self.ansatz.time(step))
    }

    /// Displacement at an arbitrary time `t` in `[0, 1]`; the moving face
    /// follows the linear ramp `t * u_end`.
    pub fn displacement_at_time(&self, x: &Vector3<f64>, t: f64) -> Vector3<f64> {
        let out = self.mlp.forward(&self.scaling.apply(x, t));
        self.ansatz.combine(x, t, [out[0], out[1], out[2]])
    }
}

