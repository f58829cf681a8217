//! Interleaved TDNN / LSTMP network with a softmax output layer, trained by
//! frame-level cross-entropy.

mod checkpoint;
mod config;
mod dropout;
mod lstmp;
mod model;
mod tdnn;

pub use checkpoint::{deserialize_checkpoint, read_checkpoint, serialize_checkpoint, write_checkpoint};
pub use config::{
    receptive_field, LayerSpec, ModelConfig, ReceptiveField, DESK_NUM_OUTPUTS, DESK_SCALE, LSTM_CELL_DIM, LSTM_PROJ_DIM,
    TDNN_DIM,
};
pub use dropout::{dropout_rate, DropoutSchedule};
pub use lstmp::{lstmp_forward, LstmpLayer};
pub use model::{
    build_model, layer_names, Checkpoint, Gradients, HiddenLayer, InputNorm, LossAndGradients, Mode, Model, OutputLayer, TrainingMeta,
};
pub use tdnn::{tdnn_forward, TdnnLayer};
