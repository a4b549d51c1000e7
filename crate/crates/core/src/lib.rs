//! Sequence Mixup for recurrent networks.
//!
//! Implements three mixup-style regularizers for sequence models — Sequence
//! Input Mixup, Pre-Output Mixup (POM), and Through-Time Mixup (TTM) —
//! driven by a Beta–Markov process of mixing coefficients with tunable
//! temporal correlation. On top of that: RNN/GRU/LSTM cells with exact
//! analytic backpropagation through time, a linear-chain CRF with the mixed
//! sequence score, dataset generators and metrics, a training driver, and an
//! analysis suite (spectral compression, over-regularization and
//! memorylessness probes, decision-boundary grids).

pub mod analysis;
pub mod crf;
pub mod data;
pub mod error;
pub mod lambda;
pub mod mixup;
pub mod numkernel;
pub mod recurrent;
pub mod train;

pub use error::{Result, SeqMixError};
pub use lambda::{LambdaConfig, LambdaTrajectory};
pub use numkernel::{Matrix, Rng};
pub use recurrent::{
    CellKind, Features, Gradients, Labels, Method, Model, ModelInit, Sample, TrainConfig,
};
