//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every executed operation together with whatever it
//! needs for the reverse pass. Parameters live outside the graph as
//! [`Variable`]s; each forward pass copies them in with [`Graph::param`] and
//! reads gradients back with [`Graph::accumulate_grad`].
//!
//! ```
//! use sparseforge::autodiff::{Graph, Variable};
//! use sparseforge::Tensor;
//!
//! let w = Variable::new(Tensor::<f64>::new([1, 2], vec![2.0, -1.0]).unwrap());
//! let mut g = Graph::new();
//! let x = g.input(Tensor::new([1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
//! let wn = g.param(&w).unwrap();
//! let y = g.linear(x, wn).unwrap();
//! let loss = g.l2_sum(&[y]).unwrap();
//! g.backward(loss).unwrap();
//! // loss = (2*3 - 4)^2, d/dw = 2 * 2 * x
//! assert_eq!(g.grad(wn).unwrap().data(), &[12.0, 16.0]);
//! ```

pub mod conv;
mod graph;

pub use conv::{ConvGeometry, PoolGeometry};
pub use graph::{Graph, NodeId, Variable};
