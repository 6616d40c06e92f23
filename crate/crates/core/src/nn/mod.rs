//! Dense tensors and a reverse-mode differentiation tape.
//!
//! Images are stored batch-major and channel-last (`N×H×W×C`). Every
//! operation is a method on [`Tape`]; a [`Graph`] wraps a tape together with
//! a read-only [`ParamStore`] and the train/eval mode for one forward pass.
//!
//! ```
//! use hsi_unfold::nn::{Graph, ParamStore, Tensor};
//!
//! let mut store = ParamStore::<f64>::new();
//! let w = store.add("w", Tensor::from_vec(vec![2], vec![3.0, -1.0]).unwrap());
//! let mut g = Graph::eval(&store);
//! let wv = g.param(w);
//! let loss = g.sum(wv);
//! let tape = g.into_tape();
//! tape.backward(loss, &mut store).unwrap();
//! assert_eq!(store.get(w).grad.data(), &[1.0, 1.0]);
//! ```

mod conv;
pub mod gradcheck;
mod layers;
mod ops;
mod param;
mod real;
mod tape;
mod tensor;

pub use conv::{ConvMode, ConvSpec};
pub use layers::{Activation, Conv2d, LayerNorm, Linear};
pub use param::{init_truncated_normal, ParamId, ParamInfo, ParamStore, Parameter};
pub use real::{DType, Real};
pub use tape::{Gradients, Graph, Mode, Tape, Var};
pub use tensor::Tensor;

/// Epsilon added to the variance in [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-6;
