//! Synthetic data, manifests, configuration and experiment stages.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod manifest;
pub mod prepare;
pub mod stages;
pub mod synth;
pub mod train;

pub use config::{ChannelSubset, ExperimentConfig, InitMode, Preset};
pub use dataset::{
    corpus_stats, limit_vocabulary, split_dataset, unique_sentences, write_dataset, CorpusStats, MANIFEST_FILE,
    MAX_SPLIT_ATTEMPTS, TEST_MANIFEST, TRAIN_MANIFEST,
};
pub use experiment::{
    prepare_split, run_articulatory, run_experiment, run_sweep, split_corpus, train_language_model, ExperimentResult,
    InitResult, PreparedSplit, SplitCorpus, SweepRow, SweepTable, SWEEP_COLUMNS,
};
pub use manifest::{manifest_to_string, parse_manifest, read_manifest, write_manifest, UtteranceRecord};
pub use prepare::{
    acoustic_samples, eeg_samples, prepare_from_dir, prepare_utterance, preprocess_eeg, require_files,
    speech_targets, InputTransform, Sample, Standardizer, UtteranceFeatures,
};
pub use synth::{synth_dataset, SynthDataset, SynthSpec, SynthUtterance, ARTIC_NAMES, DEFAULT_SENTENCES, EEG_CHANNELS, LATENT_DIM};
pub use train::{
    decode_eval, decode_samples, evaluate_articulatory, initial_ctc_model, pretrain_regression, stage_seed,
    train_acoustic_ctc, train_articulatory, train_ctc, ArticulatoryReport, CtcOutcome, DecodeOptions,
    RegressionOutcome, Stage,
};

use crate::error::Result;

/// Maps `f` over `items` on the available cores, preserving order.
pub fn par_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    let parts: Vec<Result<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<U>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
