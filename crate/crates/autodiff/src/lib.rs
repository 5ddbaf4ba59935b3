//! Tape-based reverse-mode differentiation with the layer set needed by
//! dilated 1D conv nets and 2D conv U-Nets: strided/dilated convolutions and
//! their transposes, batch renormalization, pointwise activations and
//! reductions.

mod error;
pub mod gradcheck;
mod graph;
pub mod init;
mod ops;
mod param;
mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
pub use graph::{Backward, BackwardCtx, Gradients, Graph, Var};
pub use ops::conv::{same_output_len, ConvSpec, Geometry, Padding};
pub use ops::elementwise::sigmoid;
pub use ops::norm::{NormMode, RenormLimits, RenormState};
pub use param::{Param, ParamStore};
pub use tensor::Tensor;
