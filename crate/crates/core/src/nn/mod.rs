//! Minimal feed-forward networks with hand-written backpropagation.

mod adam;
pub mod gradcheck;
mod mlp;

pub use adam::Adam;
pub use mlp::{log_softmax, ForwardCache, Head, Mlp};
