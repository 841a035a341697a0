//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Every forward pass records onto a fresh [`Tape`]; parameters enter the
//! tape through [`Tape::var`] and [`Tape::backward`] returns their
//! gradients. Constants (tensors without a node) flow through the same
//! operations without being recorded.
//!
//! ```
//! use diffcore::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.var(&Tensor::vector(vec![1.0, 2.0]));
//! let sq = tape.square(&x).unwrap();
//! let loss = tape.sum(&sq, None).unwrap();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.wrt(&x).values(), &[2.0, 4.0]);
//! ```

mod error;
pub mod gradcheck;
pub mod kernels;
pub mod rng;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{check_gradient, GradCheckReport};
pub use rng::Rng;
pub use tape::{Gradients, ReduceKind, Tape, UnaryKind};
pub use tensor::{NodeId, Tensor};
