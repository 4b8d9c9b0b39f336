//! Minimal differentiable numerics: tensors, a reverse-mode tape, recurrent
//! layers built on it, and a finite-difference gradient validator.

mod fdcheck;
pub mod nn;
mod param;
mod tape;
mod tensor;

pub use fdcheck::{fd_check, relative_error, FdReport, ParamCheck, REL_ERROR_FLOOR};
pub use nn::{CellKind, Linear, Mlp, RecurrentCell};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{log_sum_exp, softmax, softplus};
