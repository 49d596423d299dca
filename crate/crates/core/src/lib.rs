//! Ghost-free multi-exposure HDR fusion, from tensors up.
//!
//! Three bracketed LDR exposures go in; an HDR radiance map comes out. Motion
//! between exposures is handled by brightness-adjustment networks built on a
//! pixel-adaptive deformable convolution, and saturated regions are filled by
//! a coarse-to-fine merge network whose fine stage borrows content from
//! well-exposed areas through contextual attention.
//!
//! Everything — reverse-mode autodiff, conv kernels, losses, metrics, the
//! training loop — is implemented in this crate on plain `Vec`-backed tensors;
//! the only external numeric dependency is a GEMM routine.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod imageio;
pub mod init;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod ops;
pub mod radiometry;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::Var;
pub use tensor::{Scalar, Tensor};
