//! GRU and LSTM recurrent networks with a linear read-out, trained by
//! backpropagation through time.

mod cell;
mod gradcheck;
mod io;
mod train;

pub use cell::{gru, gru_cell, lstm, lstm_cell, CellKind, RnnWeights, Tensor, B_OUT, W_OUT};
pub use gradcheck::{gradient_check, gradient_check_at, GradientCheck, FD_STEP};
pub use io::{load_model, model_to_string, read_model, save_model, write_model};
pub use train::{
    initial_weights, predict, train, train_from, training_loss, Normalization, RnnModel, RnnSpec,
    Sample, CLIP_NORM,
};
