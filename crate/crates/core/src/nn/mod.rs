//! Dense-network engine: parameter storage, the MLP family with exact
//! reverse-mode gradients, and SGD with momentum, weight decay, and a
//! milestone learning-rate schedule.

mod mlp;
mod param;
mod sgd;

pub use mlp::{
    backward, backward_hidden, erf_approx, forward, hidden_trace, output_from_features,
    Activation, HiddenTrace, MlpSpec,
};
pub use param::ParamVector;
pub use sgd::{lr_at, sgd_step, SgdState};
