//! Hyperelastic strain-energy densities and material parameter containers.
//!
//! Three isotropic models are supported:
//!
//! * Neo-Hookean: `psi = K/2 [(J^2 - 1)/2 - ln J] + mu/2 (Ibar1 - 3)`
//! * Gent: same volumetric part, isochoric part
//!   `-mu Jm / 2 ln(1 - (Ibar1 - 3)/Jm)`
//! * Blatz-Ko (foam): `psi = mu/2 (I2/I3 + 2 sqrt(I3) - 5)`
//!
//! Energies are written as functions of `(J, I1, I2)`; analytic first
//! Piola-Kirchhoff stress and the material tangent follow from the chain
//! rule through those invariants. [`energy_tape`] records the same energies
//! directly in terms of the deformation-gradient entries for the
//! autodiff-driven training path.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, SMatrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Recorder, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::kinematics::DeformationState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    NeoHookean,
    Gent,
    BlatzKo,
}

/// Material parameters by role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Param {
    /// Bulk modulus `K` (MPa).
    Bulk,
    /// Shear modulus `mu` (MPa).
    Shear,
    /// Gent locking parameter `Jm` (dimensionless).
    Locking,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::Bulk => "K",
            Param::Shear => "mu",
            Param::Locking => "Jm",
        }
    }

    /// Range used when a trainable parameter is initialized at random.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            Param::Bulk | Param::Shear => (0.0, 100.0),
            Param::Locking => (1.0, 10.0),
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "bulk" => Ok(Param::Bulk),
            "mu" | "shear" => Ok(Param::Shear),
            "Jm" | "jm" | "locking" => Ok(Param::Locking),
            other => Err(invalid(format!("unknown material parameter `{other}`"))),
        }
    }
}

impl Model {
    pub fn params(self) -> &'static [Param] {
        match self {
            Model::NeoHookean => &[Param::Bulk, Param::Shear],
            Model::Gent => &[Param::Bulk, Param::Shear, Param::Locking],
            Model::BlatzKo => &[Param::Shear],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Model::NeoHookean => "neo-hookean",
            Model::Gent => "gent",
            Model::BlatzKo => "blatz-ko",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
            "neo-hookean" | "neohookean" => Ok(Model::NeoHookean),
            "gent" => Ok(Model::Gent),
            "blatz-ko" | "blatzko" => Ok(Model::BlatzKo),
            _ => Err(invalid(format!("unknown material model `{s}`"))),
        }
    }
}

/// A material model with its parameter values, trainability flags and
/// initialization bounds, stored in the order of [`Model::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialSpec {
    model: Model,
    values: Vec<f64>,
    trainable: Vec<bool>,
    bounds: Vec<(f64, f64)>,
}

impl MaterialSpec {
    pub fn new(model: Model, values: &[f64]) -> Result<Self> {
        let params = model.params();
        if values.len() != params.len() {
            return Err(invalid(format!(
                "{model} takes {} parameters, got {}",
                params.len(),
                values.len()
            )));
        }
        let mut spec = Self {
            model,
            values: vec![0.0; params.len()],
            trainable: vec![false; params.len()],
            bounds: params.iter().map(|p| p.default_bounds()).collect(),
        };
        spec.set_values(values)?;
        Ok(spec)
    }

    pub fn neo_hookean(bulk: f64, shear: f64) -> Result<Self> {
        Self::new(Model::NeoHookean, &[bulk, shear])
    }

    pub fn gent(bulk: f64, shear: f64, locking: f64) -> Result<Self> {
        Self::new(Model::Gent, &[bulk, shear, locking])
    }

    pub fn blatz_ko(shear: f64) -> Result<Self> {
        Self::new(Model::BlatzKo, &[shear])
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn params(&self) -> &'static [Param] {
        self.model.params()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn index(&self, p: Param) -> Result<usize> {
        self.params()
            .iter()
            .position(|&q| q == p)
            .ok_or_else(|| invalid(format!("{} has no parameter {p}", self.model)))
    }

    pub fn get(&self, p: Param) -> Option<f64> {
        self.index(p).ok().map(|i| self.values[i])
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(invalid(format!("expected {} parameter values", self.values.len())));
        }
        for (p, v) in self.params().iter().zip(values) {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("parameter {p} must be positive and finite, got {v}")));
            }
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn set(&mut self, p: Param, value: f64) -> Result<()> {
        let i = self.index(p)?;
        let mut v = self.values.clone();
        v[i] = value;
        self.set_values(&v)
    }

    pub fn trainable(&self) -> &[bool] {
        &self.trainable
    }

    pub fn set_trainable(&mut self, p: Param, on: bool) -> Result<()> {
        let i = self.index(p)?;
        self.trainable[i] = on;
        Ok(())
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable.iter().filter(|t| **t).count()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn set_bounds(&mut self, p: Param, lo: f64, hi: f64) -> Result<()> {
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(invalid(format!("bounds for {p} must satisfy 0 <= lo < hi, got ({lo}, {hi})")));
        }
        let i = self.index(p)?;
        self.bounds[i] = (lo, hi);
        Ok(())
    }

    /// Draws every trainable parameter uniformly from its bounds (never
    /// exactly zero).
    pub fn randomize_trainable(&mut self, rng: &mut impl Rng) {
        for i in 0..self.values.len() {
            if self.trainable[i] {
                let (lo, hi) = self.bounds[i];
                let mut v = rng.random_range(lo..hi);
                while v <= 0.0 {
                    v = rng.random_range(lo..hi);
                }
                self.values[i] = v;
            }
        }
    }
}

/// Energy and its first and second partial derivatives with respect to the
/// invariants `(J, I1, I2)`.
#[derive(Debug, Clone, Copy)]
struct InvariantDerivs {
    psi: f64,
    d: [f64; 3],
    dd: [[f64; 3]; 3],
}

fn invariant_derivs(model: Model, params: &[f64], j: f64, i1: f64, i2: f64) -> Result<InvariantDerivs> {
    if !(j > 0.0) {
        return Err(Error::Inverted { j });
    }
    let mut out = InvariantDerivs {
        psi: 0.0,
        d: [0.0; 3],
        dd: [[0.0; 3]; 3],
    };
    match model {
        Model::NeoHookean | Model::Gent => {
            let (k, mu) = (params[0], params[1]);
            let jm23 = j.powf(-2.0 / 3.0);
            let jm53 = jm23 / j;
            let jm83 = jm53 / j;
            let ibar1 = jm23 * i1;
            let x = ibar1 - 3.0;
            // isochoric energy as a function of x = Ibar1 - 3, with its
            // first and second derivatives
            let (iso, h, dh) = match model {
                Model::NeoHookean => (0.5 * mu * x, 0.5 * mu, 0.0),
                _ => {
                    let jm = params[2];
                    if x >= jm {
                        return Err(Error::GentLockup { value: x, jm });
                    }
                    let gap = jm - x;
                    (-0.5 * mu * jm * (1.0 - x / jm).ln(), 0.5 * mu * jm / gap, 0.5 * mu * jm / (gap * gap))
                }
            };
            let b_j = -2.0 / 3.0 * jm53 * i1;
            let b_i1 = jm23;
            let b_jj = 10.0 / 9.0 * jm83 * i1;
            let b_ji1 = -2.0 / 3.0 * jm53;
            out.psi = 0.5 * k * (0.5 * (j * j - 1.0) - j.ln()) + iso;
            out.d[0] = 0.5 * k * (j - 1.0 / j) + h * b_j;
            out.d[1] = h * b_i1;
            out.dd[0][0] = 0.5 * k * (1.0 + 1.0 / (j * j)) + dh * b_j * b_j + h * b_jj;
            out.dd[0][1] = dh * b_j * b_i1 + h * b_ji1;
            out.dd[1][0] = out.dd[0][1];
            out.dd[1][1] = dh * b_i1 * b_i1;
        }
        Model::BlatzKo => {
            let mu = params[0];
            let jinv = 1.0 / j;
            let jinv2 = jinv * jinv;
            out.psi = 0.5 * mu * (i2 * jinv2 + 2.0 * j - 5.0);
            out.d[0] = 0.5 * mu * (-2.0 * i2 * jinv2 * jinv + 2.0);
            out.d[2] = 0.5 * mu * jinv2;
            out.dd[0][0] = 3.0 * mu * i2 * jinv2 * jinv2;
            out.dd[0][2] = -mu * jinv2 * jinv;
            out.dd[2][0] = out.dd[0][2];
        }
    }
    Ok(out)
}

fn derivs(spec: &MaterialSpec, state: &DeformationState) -> Result<InvariantDerivs> {
    invariant_derivs(spec.model, &spec.values, state.j, state.i1, state.i2)
}

pub fn energy_density(spec: &MaterialSpec, state: &DeformationState) -> Result<f64> {
    Ok(derivs(spec, state)?.psi)
}

/// Gradients of `(J, I1, I2)` with respect to `F`.
fn invariant_gradients(state: &DeformationState, f_inv_t: &Matrix3<f64>) -> [Matrix3<f64>; 3] {
    let f = &state.f;
    [state.j * f_inv_t, 2.0 * f, 2.0 * (state.i1 * f - f * state.c)]
}

fn inverse_transpose(state: &DeformationState) -> Result<Matrix3<f64>> {
    state
        .f
        .try_inverse()
        .map(|m| m.transpose())
        .ok_or(Error::Inverted { j: state.j })
}

/// First Piola-Kirchhoff stress `P = d psi / dF`.
pub fn pk1_stress(spec: &MaterialSpec, state: &DeformationState) -> Result<Matrix3<f64>> {
    let d = derivs(spec, state)?;
    let grads = invariant_gradients(state, &inverse_transpose(state)?);
    Ok(d.d[0] * grads[0] + d.d[1] * grads[1] + d.d[2] * grads[2])
}

/// Energy, stress and the material tangent applied to a set of directions,
/// all from a single evaluation of the invariant derivatives.
pub struct TangentOperator {
    derivs: InvariantDerivs,
    state: DeformationState,
    f_inv: Matrix3<f64>,
    grads: [Matrix3<f64>; 3],
}

impl TangentOperator {
    pub fn new(spec: &MaterialSpec, state: &DeformationState) -> Result<Self> {
        let derivs = derivs(spec, state)?;
        let f_inv_t = inverse_transpose(state)?;
        Ok(Self {
            derivs,
            grads: invariant_gradients(state, &f_inv_t),
            f_inv: f_inv_t.transpose(),
            state: state.clone(),
        })
    }

    pub fn energy(&self) -> f64 {
        self.derivs.psi
    }

    pub fn stress(&self) -> Matrix3<f64> {
        let d = &self.derivs.d;
        d[0] * self.grads[0] + d[1] * self.grads[1] + d[2] * self.grads[2]
    }

    /// `A : dF` with `A = d^2 psi / dF dF`.
    pub fn apply(&self, df: &Matrix3<f64>) -> Matrix3<f64> {
        let s = &self.state;
        let f = &s.f;
        let dinv = [
            self.grads[0].dot(df),
            self.grads[1].dot(df),
            self.grads[2].dot(df),
        ];
        let f_inv_t = self.f_inv.transpose();
        let d_cof = s.j * (f_inv_t * (self.f_inv * df).trace() - f_inv_t * df.transpose() * f_inv_t);
        let d_c = df.transpose() * f + f.transpose() * df;
        let d_i2_grad = 2.0 * (dinv[1] * f + s.i1 * df - df * s.c - f * d_c);
        let d_grads = [d_cof, 2.0 * df, d_i2_grad];
        let mut out = Matrix3::zeros();
        for k in 0..3 {
            let scale: f64 = (0..3).map(|l| self.derivs.dd[k][l] * dinv[l]).sum();
            if scale != 0.0 {
                out += scale * self.grads[k];
            }
            if self.derivs.d[k] != 0.0 {
                out += self.derivs.d[k] * d_grads[k];
            }
        }
        out
    }

    /// Full tangent as a 9x9 matrix over row-major `F` entries:
    /// entry `(3i + a, 3k + b)` is `dP_ia / dF_kb`.
    pub fn matrix(&self) -> SMatrix<f64, 9, 9> {
        let mut m = SMatrix::<f64, 9, 9>::zeros();
        for col in 0..9 {
            let mut df = Matrix3::zeros();
            df[(col / 3, col % 3)] = 1.0;
            let a = self.apply(&df);
            for row in 0..9 {
                m[(row, col)] = a[(row / 3, row % 3)];
            }
        }
        m
    }
}

pub fn tangent(spec: &MaterialSpec, state: &DeformationState) -> Result<SMatrix<f64, 9, 9>> {
    Ok(TangentOperator::new(spec, state)?.matrix())
}

/// Bulk modulus consistent with the small-strain shear modulus and
/// Poisson's ratio.
pub fn bulk_from_poisson(mu: f64, nu: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(invalid(format!("shear modulus must be positive, got {mu}")));
    }
    if !(nu > -1.0 && nu < 0.5) {
        return Err(invalid(format!("Poisson's ratio must lie in (-1, 0.5), got {nu}")));
    }
    Ok(2.0 * mu * (1.0 + nu) / (3.0 * (1.0 - 2.0 * nu)))
}

/// Records `psi(F, params)` on a tape whose inputs are the nine row-major
/// entries of `F` followed by the model parameters.
pub fn energy_tape(model: Model) -> Result<Tape> {
    let mut inputs = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    inputs.extend(model.params().iter().map(|_| 1.0));
    Tape::record(&inputs, |rec, x| record_energy(rec, model, x))
}

fn record_energy<'r>(rec: &'r Recorder, model: Model, x: &[Var<'r>]) -> Var<'r> {
    let f: [Var<'r>; 9] = std::array::from_fn(|k| x[k]);
    let p = &x[9..];
    match model {
        Model::NeoHookean | Model::Gent => {
            let (k, mu) = (p[0], p[1]);
            let j = rec.det3(&f);
            let i1 = rec.dot(&f, &f);
            let xbar = j.powf(-2.0 / 3.0) * i1 - 3.0;
            let vol = 0.5 * k * (0.5 * (j * j - 1.0) - j.ln());
            let iso = match model {
                Model::NeoHookean => 0.5 * mu * xbar,
                _ => {
                    let jm = p[2];
                    -0.5 * mu * jm * (1.0 - xbar / jm).ln()
                }
            };
            vol + iso
        }
        Model::BlatzKo => {
            let mu = p[0];
            let c = rec.transpose_mul3(&f, &f);
            let i1 = rec.trace3(&c);
            let i2 = 0.5 * (i1 * i1 - rec.dot(&c, &c));
            let i3 = rec.det3(&c);
            0.5 * mu * (i2 / i3 + 2.0 * i3.sqrt() - 5.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Workspace;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;

    fn specs() -> Vec<MaterialSpec> {
        vec![
            MaterialSpec::neo_hookean(2.167, 1.0).unwrap(),
            MaterialSpec::gent(2.167, 1.0, 1.5).unwrap(),
            MaterialSpec::blatz_ko(1.0).unwrap(),
        ]
    }

    fn state(f: Matrix3<f64>) -> DeformationState {
        DeformationState::from_f(f)
    }

    fn fd_stress(spec: &MaterialSpec, f: &Matrix3<f64>) -> Matrix3<f64> {
        let h = 1e-6;
        Matrix3::from_fn(|i, j| {
            let mut p = *f;
            let mut m = *f;
            p[(i, j)] += h;
            m[(i, j)] -= h;
            (energy_density(spec, &state(p)).unwrap() - energy_density(spec, &state(m)).unwrap()) / (2.0 * h)
        })
    }

    #[test]
    fn reference_state_is_stress_free() {
        for spec in specs() {
            let s = state(Matrix3::identity());
            assert_eq!(energy_density(&spec, &s).unwrap(), 0.0);
            assert!(pk1_stress(&spec, &s).unwrap().abs().max() < 1e-15);
        }
    }

    #[test]
    fn neo_hookean_simple_shear() {
        let spec = MaterialSpec::neo_hookean(2.167, 1.0).unwrap();
        let mut f = Matrix3::identity();
        f[(0, 1)] = 0.5;
        assert!((energy_density(&spec, &state(f)).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn blatz_ko_uniaxial_stretch() {
        let spec = MaterialSpec::blatz_ko(1.0).unwrap();
        let f = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        assert_eq!(energy_density(&spec, &state(f)).unwrap(), 0.625);
    }

    #[test]
    fn gent_lockup_is_a_domain_error() {
        let jm = 1.5;
        let spec = MaterialSpec::gent(2.0, 1.0, jm).unwrap();
        // isochoric stretch with Ibar1 - 3 = Jm: l^2 + 2/l = 4.5
        let mut lo = 1.0;
        let mut hi = 3.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid + 2.0 / mid < 3.0 + jm {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let l = hi;
        let f = Matrix3::from_diagonal(&Vector3::new(l, 1.0 / l.sqrt(), 1.0 / l.sqrt()));
        match energy_density(&spec, &state(f)) {
            Err(Error::GentLockup { value, jm: reported }) => {
                assert!(value >= jm - 1e-12);
                assert_eq!(reported, jm);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverted_state_is_signalled() {
        let f = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        for spec in specs() {
            assert!(matches!(energy_density(&spec, &state(f)), Err(Error::Inverted { .. })));
        }
    }

    #[test]
    fn uniaxial_neo_hookean_stress_matches_finite_differences() {
        let spec = MaterialSpec::neo_hookean(2.167, 1.0).unwrap();
        let f = Matrix3::from_diagonal(&Vector3::new(1.3, 1.0, 1.0));
        let p = pk1_stress(&spec, &state(f)).unwrap();
        let fd = fd_stress(&spec, &f);
        assert!((p[(0, 0)] - fd[(0, 0)]).abs() < 1e-6 * fd[(0, 0)].abs());
    }

    #[test]
    fn poisson_conversion() {
        assert!((bulk_from_poisson(1.0, 0.3).unwrap() - 2.1667).abs() < 1e-4);
        assert!((bulk_from_poisson(1.0, 0.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(bulk_from_poisson(1.0, 0.5), Err(Error::InvalidArgument(_))));
        assert!(bulk_from_poisson(1.0, -1.0).is_err());
    }

    #[test]
    fn spec_invariants() {
        assert!(MaterialSpec::neo_hookean(-1.0, 1.0).is_err());
        assert!(MaterialSpec::new(Model::BlatzKo, &[1.0, 2.0]).is_err());
        let mut spec = MaterialSpec::gent(2.0, 1.0, 3.0).unwrap();
        assert_eq!(spec.get(Param::Locking), Some(3.0));
        assert_eq!(MaterialSpec::blatz_ko(1.0).unwrap().get(Param::Bulk), None);
        assert!(spec.set(Param::Shear, 0.0).is_err());
        spec.set_trainable(Param::Locking, true).unwrap();
        assert_eq!(spec.trainable_count(), 1);
        assert_eq!(spec.bounds()[2], (1.0, 10.0));
        assert_eq!(spec.bounds()[0], (0.0, 100.0));
        assert_eq!("Jm".parse::<Param>().unwrap(), Param::Locking);
        assert_eq!("Blatz-Ko".parse::<Model>().unwrap(), Model::BlatzKo);
    }

    #[test]
    fn random_initialization_respects_bounds() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut spec = MaterialSpec::gent(2.0, 1.0, 3.0).unwrap();
        for p in [Param::Bulk, Param::Shear, Param::Locking] {
            spec.set_trainable(p, true).unwrap();
        }
        for _ in 0..100 {
            spec.randomize_trainable(&mut rng);
            let v = spec.values();
            assert!(v[0] > 0.0 && v[0] < 100.0 && v[1] > 0.0 && v[1] < 100.0);
            assert!(v[2] >= 1.0 && v[2] < 10.0);
        }
    }

    /// Small-strain elasticity tensor for bulk modulus `k` and shear `mu`.
    fn linear_tensor(k: f64, mu: f64) -> SMatrix<f64, 9, 9> {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        SMatrix::from_fn(|r, c| {
            let (i, j, k2, l) = (r / 3, r % 3, c / 3, c % 3);
            (k - 2.0 * mu / 3.0) * d(i, j) * d(k2, l) + mu * (d(i, k2) * d(j, l) + d(i, l) * d(j, k2))
        })
    }

    #[test]
    fn tangent_at_identity_is_linear_elasticity() {
        let s = state(Matrix3::identity());
        let nh = tangent(&MaterialSpec::neo_hookean(2.167, 1.0).unwrap(), &s).unwrap();
        assert!((nh - linear_tensor(2.167, 1.0)).abs().max() < 1e-12);
        let gent = tangent(&MaterialSpec::gent(2.167, 1.0, 1.5).unwrap(), &s).unwrap();
        assert!((gent - linear_tensor(2.167, 1.0)).abs().max() < 1e-12);
        // Blatz-Ko foam has Poisson's ratio 1/4, so K = 5 mu / 3
        let bk = tangent(&MaterialSpec::blatz_ko(1.0).unwrap(), &s).unwrap();
        assert!((bk - linear_tensor(5.0 / 3.0, 1.0)).abs().max() < 1e-12);
    }

    fn random_f() -> impl Strategy<Value = Matrix3<f64>> {
        proptest::collection::vec(-0.35..0.35f64, 9)
            .prop_map(|v| Matrix3::identity() + Matrix3::from_row_slice(&v))
            .prop_filter("J in [0.5, 2]", |f| {
                let j = f.determinant();
                (0.5..=2.0).contains(&j)
            })
    }

    fn gent_admissible(f: &Matrix3<f64>, jm: f64) -> bool {
        state(*f).ibar1 - 3.0 < 0.8 * jm
    }

    fn rotation() -> impl Strategy<Value = Rotation3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -3.0..3.0f64).prop_filter_map("axis", |(x, y, z, a)| {
            let axis = Vector3::new(x, y, z);
            (axis.norm() > 1e-3).then(|| Rotation3::new(axis.normalize() * a))
        })
    }

    fn rel_err(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).abs().max() / b.abs().max().max(1e-8)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn stress_matches_finite_differences(f in random_f()) {
            for spec in specs() {
                if spec.model() == Model::Gent && !gent_admissible(&f, 1.5) {
                    continue;
                }
                let p = pk1_stress(&spec, &state(f)).unwrap();
                prop_assert!(rel_err(&p, &fd_stress(&spec, &f)) < 1e-6, "{:?}", spec.model());
            }
        }

        #[test]
        fn tangent_matches_finite_differences_of_stress(f in random_f()) {
            for spec in specs() {
                if spec.model() == Model::Gent && !gent_admissible(&f, 1.5) {
                    continue;
                }
                let a = tangent(&spec, &state(f)).unwrap();
                let h = 1e-6;
                for col in 0..9 {
                    let mut p = f;
                    let mut m = f;
                    p[(col / 3, col % 3)] += h;
                    m[(col / 3, col % 3)] -= h;
                    let fd = (pk1_stress(&spec, &state(p)).unwrap() - pk1_stress(&spec, &state(m)).unwrap()) / (2.0 * h);
                    for row in 0..9 {
                        let want = fd[(row / 3, row % 3)];
                        prop_assert!((a[(row, col)] - want).abs() < 1e-5 * want.abs().max(1.0));
                    }
                }
                let sym = (a - a.transpose()).abs().max();
                prop_assert!(sym < 1e-10 * a.abs().max());
            }
        }

        #[test]
        fn second_piola_kirchhoff_is_symmetric(f in random_f()) {
            for spec in specs() {
                if spec.model() == Model::Gent && !gent_admissible(&f, 1.5) {
                    continue;
                }
                let s = f.try_inverse().unwrap() * pk1_stress(&spec, &state(f)).unwrap();
                prop_assert!((s - s.transpose()).abs().max() < 1e-10 * s.abs().max().max(1.0));
            }
        }

        #[test]
        fn energy_is_objective(f in random_f(), r in rotation()) {
            for spec in specs() {
                if spec.model() == Model::Gent && !gent_admissible(&f, 1.5) {
                    continue;
                }
                let a = energy_density(&spec, &state(f)).unwrap();
                let b = energy_density(&spec, &state(r.matrix() * f)).unwrap();
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12));
            }
        }

        #[test]
        fn gent_approaches_neo_hookean(v in proptest::collection::vec(-0.2..0.2f64, 9)) {
            let f = Matrix3::identity() + Matrix3::from_row_slice(&v);
            let nh = energy_density(&MaterialSpec::neo_hookean(2.167, 1.0).unwrap(), &state(f)).unwrap();
            let g = energy_density(&MaterialSpec::gent(2.167, 1.0, 1e6).unwrap(), &state(f)).unwrap();
            prop_assert!((g - nh).abs() <= 1e-4 * nh.abs().max(1e-12));
            let tn = tangent(&MaterialSpec::neo_hookean(2.167, 1.0).unwrap(), &state(f)).unwrap();
            let tg = tangent(&MaterialSpec::gent(2.167, 1.0, 1e6).unwrap(), &state(f)).unwrap();
            prop_assert!((tn - tg).abs().max() < 1e-4 * tn.abs().max());
        }

        #[test]
        fn tape_energy_agrees_with_invariant_form(f in random_f()) {
            let mut ws = Workspace::default();
            for spec in specs() {
                if spec.model() == Model::Gent && !gent_admissible(&f, 1.5) {
                    continue;
                }
                let tape = energy_tape(spec.model()).unwrap();
                let mut inputs: Vec<f64> = f.transpose().iter().copied().collect();
                inputs.extend_from_slice(spec.values());
                let mut grad = vec![0.0; inputs.len()];
                let psi_tape = tape.gradient(&inputs, &mut ws, &mut grad).unwrap();
                let psi = energy_density(&spec, &state(f)).unwrap();
                let scale = spec.values()[0].max(psi.abs());
                prop_assert!((psi_tape - psi).abs() <= 1e-14 * scale, "{psi_tape} vs {psi}");
                let p = pk1_stress(&spec, &state(f)).unwrap();
                for k in 0..9 {
                    prop_assert!((grad[k] - p[(k / 3, k % 3)]).abs() < 1e-12 * p.abs().max().max(1.0));
                }
            }
        }
    }

    #[test]
    fn tape_tangent_products_match_analytic_tangent() {
        let f = Matrix3::new(1.1, 0.05, -0.02, 0.03, 0.95, 0.04, -0.01, 0.02, 1.02);
        let df = Matrix3::new(0.3, -0.1, 0.2, 0.0, 0.5, -0.4, 0.1, 0.2, -0.3);
        let mut ws = Workspace::default();
        for spec in specs() {
            let tape = energy_tape(spec.model()).unwrap();
            let mut inputs: Vec<f64> = f.transpose().iter().copied().collect();
            inputs.extend_from_slice(spec.values());
            let mut dir: Vec<f64> = df.transpose().iter().copied().collect();
            dir.extend(spec.values().iter().map(|_| 0.0));
            let n = inputs.len();
            let (mut g, mut hv) = (vec![0.0; n], vec![0.0; n]);
            tape.hvp(&inputs, &dir, &mut ws, &mut g, &mut hv).unwrap();
            let a = TangentOperator::new(&spec, &state(f)).unwrap().apply(&df);
            for k in 0..9 {
                assert!((hv[k] - a[(k / 3, k % 3)]).abs() < 1e-12 * a.abs().max(), "{:?}", spec.model());
            }
        }
    }
}
