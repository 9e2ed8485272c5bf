//! MCW-Net single-image deraining.
//!
//! An encoder-decoder network whose resolution changes are Haar wavelet
//! transforms, with wide regional non-local attention and multi-level
//! connections, built on a small reverse-mode differentiation engine.

pub mod blocks;
pub mod diagnostics;
pub mod error;
pub mod imageio;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use network::{build, forward_traced, loss_l1l2, Model, NetworkConfig};
pub use tensor::{Tape, Tensor, Var};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/wavelets.md")]
    mod wavelets {}
    #[doc = include_str!("../../../book/src/blocks.md")]
    mod blocks {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
