//! Dense tensors, stable scalar helpers, a small reverse-mode tape and Adam.

mod adam;
mod stable;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use stable::{inverse_softplus, log_softmax, logsumexp, sigmoid, softmax, softplus};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Parameter, Tensor};
