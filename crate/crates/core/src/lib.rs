//! Controllable rain synthesis built on transformable convolution kernels.
//!
//! Rain kernels are Fourier-parameterized filters re-sampled under a
//! rotation and anisotropic scale, mixed from a dictionary of streak atoms
//! and convolved with a sparse rain map produced by a rotatable residual
//! network. A rotatable total-variation score measures how well a rain
//! layer aligns with an angle, and a gradient-based optimizer recovers the
//! generating factors from a target layer.

pub mod conv;
pub mod error;
pub mod factors;
pub mod parametrization;
pub mod pipeline;
pub mod rain_kernel;
pub mod recovery;
pub mod resnet;
pub mod rot_tv;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
pub use parametrization::{build_matrix, BasisSet, TransformParams};
pub use tensor::{KernelTensor, Tensor3};
