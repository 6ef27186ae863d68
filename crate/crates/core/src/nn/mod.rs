//! Hand-derived forward/backward passes for the fixed Conv-BN-FC topology,
//! Adam with freeze masks, and checkpoint serialization.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;

pub use adam::{adam_step, adam_update, AdamHyper, AdamState, FreezeMask};
pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes};
pub use layers::{
    batchnorm_backward, batchnorm_forward, conv1d_backward, conv1d_forward, dense_backward,
    dense_forward, relu, relu_backward, BnCache, BnParams, Mode,
};
pub use loss::softmax_cross_entropy;
pub use model::{Architecture, ForwardCache, Gradients, HeadCache, ModelParams, ParamGroup};
pub use tensor::Tensor;
