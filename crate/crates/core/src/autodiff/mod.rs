//! Reverse-mode differentiation.
//!
//! Strain-energy densities are recorded once per material model on a
//! [`Tape`] and replayed at every quadrature point. Second-order quantities
//! (the gradient of a squared residual norm) come from Hessian-vector
//! products on the same tape, so no nested tape is ever built.

mod tape;

pub use tape::{Recorder, Tape, Var, Workspace};

use crate::error::{Error, Result};

/// Gradients of a scalar loss with respect to everything trainable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradBundle {
    pub d_weights: Vec<f64>,
    pub d_nodal_u: Vec<f64>,
    pub d_material: Vec<f64>,
}

impl GradBundle {
    pub fn is_finite(&self) -> bool {
        self.d_weights
            .iter()
            .chain(&self.d_nodal_u)
            .chain(&self.d_material)
            .all(|v| v.is_finite())
    }
}

/// Gradient of `||mask * grad f(x)||^2` with respect to `x`, where `f` is
/// the scalar root of `tape` and `mask` selects the components that enter
/// the norm. Returns the squared norm and its gradient `2 H (mask * grad f)`.
pub fn grad_of_grad_norm(tape: &Tape, x: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    let n = tape.input_count();
    if x.len() != n || mask.len() != n {
        return Err(Error::InvalidArgument(format!(
            "expected {n} inputs and mask entries, got {} and {}",
            x.len(),
            mask.len()
        )));
    }
    let mut ws = Workspace::default();
    let mut g = vec![0.0; n];
    tape.gradient(x, &mut ws, &mut g)?;
    let masked: Vec<f64> = g
        .iter()
        .zip(mask)
        .map(|(v, &m)| if m { *v } else { 0.0 })
        .collect();
    let norm_sq = masked.iter().map(|v| v * v).sum();
    let mut hv = vec![0.0; n];
    tape.hvp(x, &masked, &mut ws, &mut g, &mut hv)?;
    Ok((norm_sq, hv.into_iter().map(|v| 2.0 * v).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_energy_gives_twice_a_transpose_a_u() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, -0.5], [0.0, -0.5, 2.0]];
        let u = [0.3, -1.2, 0.8];
        let tape = Tape::record(&u, |rec, x| {
            let mut terms = Vec::new();
            for i in 0..3 {
                for j in 0..3 {
                    terms.push(0.5 * a[i][j] * x[i] * x[j]);
                }
            }
            rec.sum(&terms)
        })
        .unwrap();
        let (norm_sq, grad) = grad_of_grad_norm(&tape, &u, &[true; 3]).unwrap();
        let au: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i][j] * u[j]).sum()).collect();
        assert!((norm_sq - au.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12);
        for i in 0..3 {
            let expected: f64 = 2.0 * (0..3).map(|k| a[k][i] * au[k]).sum::<f64>();
            assert!((grad[i] - expected).abs() < 1e-12, "{i}: {} vs {expected}", grad[i]);
        }
    }

    #[test]
    fn masked_components_drop_out() {
        let tape = Tape::record(&[1.0, 2.0], |_, x| x[0] * x[0] * x[1]).unwrap();
        let (n, g) = grad_of_grad_norm(&tape, &[1.0, 2.0], &[false, true]).unwrap();
        // f_y = x^2, ||f_y||^2 = x^4, gradient (4x^3, 0)
        assert_eq!(n, 1.0);
        assert_eq!(g, vec![4.0, 0.0]);
    }

    #[test]
    fn grad_of_grad_norm_matches_finite_differences() {
        let x0 = [0.7, 1.3, 0.4];
        let tape = Tape::record(&x0, |_, x| (x[0] * x[1]).exp() + x[2].ln() * x[0] * x[0]).unwrap();
        let norm = |x: &[f64]| {
            let mut ws = Workspace::default();
            let mut g = [0.0; 3];
            tape.gradient(x, &mut ws, &mut g).unwrap();
            g.iter().map(|v| v * v).sum::<f64>()
        };
        let (_, grad) = grad_of_grad_norm(&tape, &x0, &[true; 3]).unwrap();
        for k in 0..3 {
            let h = 1e-6;
            let mut p = x0;
            let mut m = x0;
            p[k] += h;
            m[k] -= h;
            let fd = (norm(&p) - norm(&m)) / (2.0 * h);
            assert!((grad[k] - fd).abs() < 1e-5 * fd.abs().max(1.0), "{k}: {} vs {fd}", grad[k]);
        }
    }

    #[test]
    fn repeated_calls_are_bitwise_identical() {
        let x0 = [0.2, 0.9];
        let tape = Tape::record(&x0, |_, x| x[0].exp() * x[1].sqrt()).unwrap();
        let a = grad_of_grad_norm(&tape, &x0, &[true, true]).unwrap();
        let b = grad_of_grad_norm(&tape, &x0, &[true, true]).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert!(a.1.iter().zip(&b.1).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let tape = Tape::record(&[1.0], |_, x| x[0]).unwrap();
        assert!(grad_of_grad_norm(&tape, &[1.0, 2.0], &[true]).is_err());
    }

    #[test]
    fn bundle_finiteness() {
        let mut b = GradBundle {
            d_weights: vec![1.0],
            d_nodal_u: vec![],
            d_material: vec![0.5],
        };
        assert!(b.is_finite());
        b.d_material[0] = f64::NAN;
        assert!(!b.is_finite());
    }
}
