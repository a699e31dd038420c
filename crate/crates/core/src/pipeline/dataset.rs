//! Dataset-level operations: persistence, vocabulary limits, splitting and counts.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{write_manifest, UtteranceRecord};
use super::synth::SynthDataset;
use crate::error::{Error, Result};
use crate::io::{write_features, write_recording};
use crate::metrics::words;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const TRAIN_MANIFEST: &str = "train.tsv";
pub const TEST_MANIFEST: &str = "test.tsv";

/// Reshuffles tried before a split that misses part of the vocabulary is rejected.
pub const MAX_SPLIT_ATTEMPTS: usize = 100;

/// Writes recordings, articulatory targets and `manifest.tsv` under `dir`.
pub fn write_dataset(ds: &SynthDataset, dir: &Path) -> Result<()> {
    for u in &ds.utterances {
        write_recording(&dir.join(&u.record.eeg), &u.eeg)?;
        if let Some(p) = &u.record.speech {
            write_recording(&dir.join(p), &u.speech)?;
        }
        if let Some(p) = &u.record.artic {
            write_features(&dir.join(p), &u.artic)?;
        }
    }
    let records: Vec<UtteranceRecord> = ds.utterances.iter().map(|u| u.record.clone()).collect();
    write_manifest(&dir.join(MANIFEST_FILE), &records)
}

/// Unique transcripts in order of first appearance.
pub fn unique_sentences(records: &[UtteranceRecord]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.transcript.as_str()))
        .map(|r| r.transcript.clone())
        .collect()
}

/// Keeps the utterances of the first `limit` unique sentences.
pub fn limit_vocabulary(records: &[UtteranceRecord], limit: usize) -> Result<Vec<UtteranceRecord>> {
    let unique = unique_sentences(records);
    if limit == 0 || limit > unique.len() {
        return Err(Error::param(format!(
            "vocabulary limit {limit} outside 1..={} unique sentences",
            unique.len()
        )));
    }
    let keep: BTreeSet<&str> = unique[..limit].iter().map(String::as_str).collect();
    Ok(records
        .iter()
        .filter(|r| keep.contains(r.transcript.as_str()))
        .cloned()
        .collect())
}

/// Seeded utterance-level split in which every sentence occurs in the
/// training part. Both parts keep manifest order.
pub fn split_dataset(
    records: &[UtteranceRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<UtteranceRecord>, Vec<UtteranceRecord>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param(format!("split fraction {fraction} outside (0, 1)")));
    }
    let n = records.len();
    let n_train = (n as f64 * fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::param(format!(
            "{n} utterances cannot be split {fraction} into two non-empty parts"
        )));
    }
    let unique = unique_sentences(records).len();
    if unique > n_train {
        return Err(Error::param(format!(
            "{unique} unique sentences cannot all fit in {n_train} training utterances"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_SPLIT_ATTEMPTS {
        order.shuffle(&mut rng);
        let mut in_train = vec![false; n];
        for &i in &order[..n_train] {
            in_train[i] = true;
        }
        let covered: BTreeSet<&str> = (0..n)
            .filter(|&i| in_train[i])
            .map(|i| records[i].transcript.as_str())
            .collect();
        if covered.len() == unique {
            let (train, test): (Vec<_>, Vec<_>) = records.iter().zip(&in_train).partition(|(_, t)| **t);
            return Ok((
                train.into_iter().map(|(r, _)| r.clone()).collect(),
                test.into_iter().map(|(r, _)| r.clone()).collect(),
            ));
        }
    }
    Err(Error::param(format!(
        "no split in {MAX_SPLIT_ATTEMPTS} attempts covers all {unique} sentences in training"
    )))
}

/// Table-style counts of a set of utterances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorpusStats {
    pub total_sentences: usize,
    pub unique_sentences: usize,
    pub total_words: usize,
    pub unique_words: usize,
    /// Non-space characters over all utterances.
    pub letters: usize,
}

pub fn corpus_stats(records: &[UtteranceRecord]) -> CorpusStats {
    let mut vocab = BTreeSet::new();
    let mut total_words = 0;
    let mut letters = 0;
    for r in records {
        let w = words(&r.transcript);
        total_words += w.len();
        vocab.extend(w);
        letters += r.transcript.chars().filter(|c| !c.is_whitespace()).count();
    }
    CorpusStats {
        total_sentences: records.len(),
        unique_sentences: unique_sentences(records).len(),
        total_words,
        unique_words: vocab.len(),
        letters,
    }
}
