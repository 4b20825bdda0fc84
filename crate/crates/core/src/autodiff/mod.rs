//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter it as
//! leaves (see [`ParamStore::register`]), ops append nodes, and
//! [`Graph::backward`] walks the nodes in reverse insertion order.
//! Broadcasting is limited to scalar-vs-tensor; row and column expansion are
//! explicit ops ([`Graph::broadcast_rows`], [`Graph::broadcast_cols`]).

mod graph;
mod matrix;
pub mod nn;

pub use graph::{Axis, Graph, Var, LOG_CLAMP};
pub use matrix::Matrix;
pub use nn::{dropout, BatchNorm, Linear, Mlp, ParamId, ParamStore};
