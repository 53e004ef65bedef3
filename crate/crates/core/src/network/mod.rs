//! Neural displacement field: a small fully connected network, the
//! boundary ansatz that makes it kinematically admissible, and Adam.

mod adam;
mod ansatz;
mod checkpoint;
mod mlp;

pub use adam::AdamState;
pub use ansatz::{AnsatzConfig, DisplacementField, InputScaling};
pub use checkpoint::{Checkpoint, CHECKPOINT_HEADER};
pub use mlp::{Activation, BatchCache, MlpState};
