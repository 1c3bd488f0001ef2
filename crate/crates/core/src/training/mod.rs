//! Exact maximum-likelihood training of the flow with analytic gradients,
//! Adam, deterministic batching and checkpointing.

mod batching;
mod model;
mod optim;
mod train;

pub use batching::batch_indices;
pub use model::{BatchLoss, Example, FlowModel, ModelMode, UtteranceTerms};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use train::{
    checkpoint_path, corpus_bits_per_dim, diagonal_gaussian_bits_per_dim, initial_model, load_encoder, load_model,
    model_sections, read_history_csv, save_encoder, save_model, train, train_step, write_history_csv, LossRecord,
    TrainConfig, TrainData, TrainState, OPTIMIZER_TAG,
};
