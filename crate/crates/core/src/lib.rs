//! EEG-to-text continuous speech recognition.
//!
//! Signal preprocessing, statistical and cepstral features, polynomial kernel
//! PCA, a GRU/TCN sequence-network engine, CTC training and decoding with a
//! character n-gram language model, evaluation metrics, and an experiment
//! pipeline over synthetic data.

pub mod ctc;
pub mod error;
pub mod features;
pub mod io;
pub mod kpca;
pub mod lm;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod signal;

pub use error::{Error, Result};
