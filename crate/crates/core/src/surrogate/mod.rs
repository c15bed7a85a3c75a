//! Neural surrogate for the RyR open probability: network, backpropagation,
//! Adam training and the weight-file format.

mod adam;
mod io;
mod network;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use io::{
    decode_layers, encode_layers, load_weights, save_weights, weights_from_bytes, weights_to_bytes,
    WEIGHTS_MAGIC, WEIGHTS_VERSION,
};
pub use network::{
    backward, forward_many, init_network, loss, loss_and_gradient, predict_next_p, surrogate_trajectory,
    Dense, Gradients, NetworkParams, TrainingSample, ARCHITECTURE, PARAMETER_COUNT,
};
pub use train::{train, train_from, validation_size, EpochLoss, TrainConfig, TrainOutcome};
