//! Layer kernels, sequential networks, SGD, checkpoints and gradient checks.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, run_grad_check, Coverage, GradCheckReport, GradCheckable, Objective};
pub use layers::{backward_layer, forward_layer, softmax_cross_entropy, LayerGrads, LayerParams, LayerSpec, Mode};
pub use network::{Gradients, Network, NetworkSpec, Trace};
pub use optim::{sgd_step, Sgd, TrainConfig};
