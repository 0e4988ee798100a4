//! Small dense-array network toolkit: layers, backprop, SGD, finite-difference
//! checks and checkpoints.

mod checkpoint;
mod gradcheck;
mod layer;
mod loss;
mod network;
mod sgd;
mod tensor;

pub use checkpoint::{Checkpoint, LayerRecord, Section, MAGIC, VERSION};
pub use gradcheck::{
    grad_check, grad_check_with, relative_error, GradCheckOptions, GradCheckReport, KinkSite,
    LayerCheck, RELATIVE_ERROR_FLOOR,
};
pub use layer::{glorot_limit, Activation, LayerSpec, Padding};
pub use loss::{mse, Loss, MeanSquaredError};
pub use network::{Gradients, LayerGrad, LayerParams, NetworkParams, NetworkSpec, Trace};
pub use sgd::{sgd_step, sgd_update, SgdConfig};
pub use tensor::Tensor;
