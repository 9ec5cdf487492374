pub mod container;
pub mod eeg_io;
pub mod error;
pub mod autodiff;
pub mod cli;
pub mod featurize;
pub mod matching;
pub mod model;
pub mod report;
pub mod rng;
pub mod text_bank;
pub mod training_eval;

pub use error::{Error, Result};
