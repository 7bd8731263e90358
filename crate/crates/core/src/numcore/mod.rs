//! Minimal numerical engine: tensors, LSTM and dense layers with exact
//! backward passes, masked cross-entropy, Adam, initialization and
//! finite-difference gradient checks. All training math is f64.

mod adam;
mod dense;
mod gradcheck;
mod init;
mod loss;
mod lstm;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::{dense_backward, dense_forward};
pub(crate) use dense::{dense_backward_raw, dense_forward_raw};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use init::{glorot_bound, init_params, Init, ParamSpec};
pub use loss::{softmax_rows, softmax_xent};
pub(crate) use loss::xent_raw;
pub use lstm::{
    lstm_cell_backward, lstm_cell_forward, lstm_seq_backward, lstm_seq_forward, CellInput, LstmCache, LstmCellGrads,
    LstmGrads, LstmGradsMut, LstmParams, LstmSeq, SeqGrads, SeqInput,
};
pub use tensor::{ParamStore, Tensor};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("every row is masked out")]
    AllMasked,
    #[error("parameter and gradient stores differ in names or shapes")]
    NameMismatch,
    #[error("missing parameter {0:?}")]
    MissingParam(String),
}
