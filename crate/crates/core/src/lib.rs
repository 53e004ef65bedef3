pub mod autodiff;
pub mod cli;
pub mod constitutive;
pub mod dic;
pub mod error;
pub mod fem;
pub mod field;
pub mod kinematics;
pub mod loss;
pub mod mesh;
pub mod network;
pub mod quadrature;
pub mod trainer;

pub use error::{Error, Result};
