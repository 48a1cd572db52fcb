//! Minimal dense-network engine shared by the actor, the critic and the dense twin.
//!
//! Hidden layers are `linear -> [batch norm] -> ReLU`; the output layer is linear,
//! optionally followed by `pi * tanh`. Everything is `f64`.

mod adam;
mod network;

pub use adam::{scheduled_lr, Adam};
pub use network::{
    mse_loss, BatchNorm, DenseNetworkSpec, ForwardTrace, Gradients, Linear, Mode, Network, OutputActivation,
};
