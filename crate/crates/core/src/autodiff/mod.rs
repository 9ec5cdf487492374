//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! ```
//! use eegtext::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(), true).unwrap();
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
//! ```

mod check;
mod gemm;
mod graph;
mod params;
mod tensor;

pub use check::{grad_check, grad_check_many, grad_check_params, DEFAULT_STEP};
pub use graph::{Graph, Var, L2_EPS, LAYER_NORM_EPS};
pub use params::{xavier_uniform, ParamId, ParamStore};
pub use tensor::Tensor;
