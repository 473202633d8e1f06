//! Minimal reverse-mode gradient engine: dense tensors, a recording tape,
//! parameter storage, optimizers, finite-difference checking and a
//! versioned checkpoint format.

mod params;
mod tape;
mod tensor;

pub use params::{
    apply_step, bias_name, dual_step, fd_check, init_params, max_rel_error, mlp_forward, read_checkpoint, reindex,
    weight_name, write_checkpoint, Activation, FdOptions, FdProbe, Gradients, InitScheme, MlpSpec, Optimizer,
    OptimizerState, ParamSet, CHECKPOINT_VERSION,
};
pub use tape::{sigmoid, Tape, Var, LOG_FLOOR};
pub use tensor::Tensor;
