//! In-memory orchestration: split, transform, pretrain, transplant, train,
//! decode and evaluate; plus the vocabulary sweep table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::info;

use super::config::{ExperimentConfig, InitMode};
use super::dataset::{corpus_stats, limit_vocabulary, split_dataset, CorpusStats};
use super::manifest::UtteranceRecord;
use super::prepare::{acoustic_samples, eeg_samples, InputTransform, Sample, Standardizer, UtteranceFeatures};
use super::train::{
    decode_eval, evaluate_articulatory, pretrain_regression, train_acoustic_ctc, train_articulatory, train_ctc,
    ArticulatoryReport, CtcOutcome, DecodeOptions, RegressionOutcome,
};
use crate::ctc::Alphabet;
use crate::error::{Error, Result};
use crate::lm::{train_ngram, CharNGramModel};
use crate::metrics::EvalReport;
use crate::nn::Variant;

/// Train/test records with their prepared features, in record order.
#[derive(Clone, Debug)]
pub struct SplitCorpus {
    pub train_records: Vec<UtteranceRecord>,
    pub test_records: Vec<UtteranceRecord>,
    pub train: Vec<UtteranceFeatures>,
    pub test: Vec<UtteranceFeatures>,
}

fn pick(features: &BTreeMap<&str, &UtteranceFeatures>, records: &[UtteranceRecord]) -> Result<Vec<UtteranceFeatures>> {
    records
        .iter()
        .map(|r| {
            features.get(r.id.as_str()).map(|f| (*f).clone()).ok_or_else(|| Error::Lookup {
                kind: "utterance features",
                name: r.id.clone(),
            })
        })
        .collect()
}

/// Applies the configured vocabulary limit and the seeded split.
pub fn split_corpus(
    records: &[UtteranceRecord],
    features: &[UtteranceFeatures],
    cfg: &ExperimentConfig,
) -> Result<SplitCorpus> {
    let records = match cfg.vocabulary_limit {
        Some(n) => limit_vocabulary(records, n)?,
        None => records.to_vec(),
    };
    let (train_records, test_records) = split_dataset(&records, cfg.split_fraction, cfg.seed)?;
    let by_id: BTreeMap<&str, &UtteranceFeatures> = features.iter().map(|f| (f.id.as_str(), f)).collect();
    Ok(SplitCorpus {
        train: pick(&by_id, &train_records)?,
        test: pick(&by_id, &test_records)?,
        train_records,
        test_records,
    })
}

/// Model inputs of both parts, with the transform fitted on the training part.
#[derive(Clone, Debug)]
pub struct PreparedSplit {
    pub transform: InputTransform,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn prepare_split(corpus: &SplitCorpus, cfg: &ExperimentConfig) -> Result<PreparedSplit> {
    let eeg: Vec<_> = corpus.train.iter().map(|f| &f.eeg).collect();
    let transform = InputTransform::fit(&eeg, cfg)?;
    Ok(PreparedSplit {
        train: eeg_samples(&corpus.train, &transform)?,
        test: eeg_samples(&corpus.test, &transform)?,
        transform,
    })
}

pub fn train_language_model(records: &[UtteranceRecord], alphabet: &Alphabet, cfg: &ExperimentConfig) -> Result<CharNGramModel> {
    let corpus: Vec<&str> = records.iter().map(|r| r.transcript.as_str()).collect();
    train_ngram(&corpus, cfg.lm_order, cfg.lm_k, alphabet)
}

/// One CTC model evaluated with and without the language model.
#[derive(Clone, Debug)]
pub struct InitResult {
    pub training: CtcOutcome,
    pub with_lm: EvalReport,
    pub without_lm: EvalReport,
}

impl InitResult {
    pub fn wer_with_lm(&self) -> f64 {
        self.with_lm.corpus_wer.unwrap_or(f64::NAN)
    }

    pub fn wer_without_lm(&self) -> f64 {
        self.without_lm.corpus_wer.unwrap_or(f64::NAN)
    }
}

/// Both initializations of one seeded run.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    /// Counts over the vocabulary-limited dataset (both parts).
    pub stats: CorpusStats,
    pub regression: RegressionOutcome,
    pub acoustic: Option<CtcOutcome>,
    pub language_model: CharNGramModel,
    pub random: InitResult,
    pub pretrained: InitResult,
}

impl ExperimentResult {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "dataset: {} sentences, {} unique, {} words, {} unique words, {} letters",
            self.stats.total_sentences,
            self.stats.unique_sentences,
            self.stats.total_words,
            self.stats.unique_words,
            self.stats.letters
        );
        for (name, r) in [("random", &self.random), ("pretrained", &self.pretrained)] {
            let _ = writeln!(
                s,
                "{name:<12}WER with LM {:>8.2}   WER no LM {:>8.2}   skipped {}",
                r.wer_with_lm(),
                r.wer_without_lm(),
                r.training.skipped
            );
        }
        s
    }
}

fn acoustic_donor(corpus: &SplitCorpus, alphabet: &Alphabet, cfg: &ExperimentConfig) -> Result<CtcOutcome> {
    let rows = corpus
        .train
        .iter()
        .map(|f| f.targets.as_ref().map(|t| t.frames().iter().map(Vec::as_slice)))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Missing("speech targets for the acoustic model".into()))?;
    let scaler = Standardizer::fit(rows.into_iter().flatten())?;
    train_acoustic_ctc(&acoustic_samples(&corpus.train, &scaler)?, alphabet, cfg)
}

/// Trains, decodes and scores a CTC model per initialization.
pub fn run_experiment(
    records: &[UtteranceRecord],
    features: &[UtteranceFeatures],
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let alphabet = Alphabet::default();
    let corpus = split_corpus(records, features, cfg)?;
    let prepared = prepare_split(&corpus, cfg)?;
    info!("pretraining regression model on {} utterances", prepared.train.len());
    let regression = pretrain_regression(&prepared.train, cfg)?;
    let acoustic = match cfg.variant {
        Variant::Extended => Some(acoustic_donor(&corpus, &alphabet, cfg)?),
        Variant::Base => None,
    };
    let lm = train_language_model(&corpus.train_records, &alphabet, cfg)?;
    let evaluate = |init: InitMode| -> Result<InitResult> {
        let run_cfg = ExperimentConfig {
            init_mode: init,
            ..cfg.clone()
        };
        info!("training CTC model, {init:?} initialization");
        let training = train_ctc(
            &prepared.train,
            &alphabet,
            &run_cfg,
            Some(&regression.model),
            acoustic.as_ref().map(|a| &a.model),
        )?;
        let decode = |weight: f64| DecodeOptions {
            beam_width: cfg.beam_width,
            lm: Some(&lm),
            lm_weight: weight,
        };
        let with_lm = decode_eval(&training.model, &prepared.test, &alphabet, &decode(cfg.lm_weight))?;
        let without_lm = decode_eval(&training.model, &prepared.test, &alphabet, &decode(0.0))?;
        Ok(InitResult {
            training,
            with_lm,
            without_lm,
        })
    };
    let random = evaluate(InitMode::Random)?;
    let pretrained = evaluate(InitMode::Pretrained)?;
    Ok(ExperimentResult {
        stats: corpus_stats(&[corpus.train_records.clone(), corpus.test_records.clone()].concat()),
        regression,
        acoustic,
        language_model: lm,
        random,
        pretrained,
    })
}

/// Trains the articulatory TCN and scores it on the test part.
pub fn run_articulatory(
    records: &[UtteranceRecord],
    features: &[UtteranceFeatures],
    cfg: &ExperimentConfig,
) -> Result<(RegressionOutcome, ArticulatoryReport)> {
    cfg.validate()?;
    let corpus = split_corpus(records, features, cfg)?;
    let prepared = prepare_split(&corpus, cfg)?;
    let model = train_articulatory(&prepared.train, cfg)?;
    let report = evaluate_articulatory(&model, &prepared.test)?;
    Ok((model, report))
}

/// One row of the vocabulary sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub vocabulary_limit: usize,
    pub stats: CorpusStats,
    pub wer_random: f64,
    pub wer_pretrained: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Decoder description shared by all rows.
    pub decoder: String,
}

pub const SWEEP_COLUMNS: [&str; 7] = [
    "total sentences",
    "unique sentences",
    "total words",
    "unique words",
    "letters",
    "WER random (%)",
    "WER pretrained (%)",
];

impl SweepTable {
    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = SWEEP_COLUMNS.iter().map(|c| c.len().max(8)).collect();
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.decoder);
        let header: Vec<String> = SWEEP_COLUMNS.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(s, "{}", header.join("  "));
        for r in &self.rows {
            let cells = [
                r.stats.total_sentences.to_string(),
                r.stats.unique_sentences.to_string(),
                r.stats.total_words.to_string(),
                r.stats.unique_words.to_string(),
                r.stats.letters.to_string(),
                format!("{:.2}", r.wer_random),
                format!("{:.2}", r.wer_pretrained),
            ];
            let line: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(s, "{}", line.join("  "));
        }
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "vocabulary_limit\ttotal_sentences\tunique_sentences\ttotal_words\tunique_words\tletters\twer_random\twer_pretrained\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.vocabulary_limit,
                r.stats.total_sentences,
                r.stats.unique_sentences,
                r.stats.total_words,
                r.stats.unique_words,
                r.stats.letters,
                r.wer_random,
                r.wer_pretrained
            );
        }
        s
    }
}

/// Runs the experiment once per configured vocabulary limit.
pub fn run_sweep(records: &[UtteranceRecord], features: &[UtteranceFeatures], cfg: &ExperimentConfig) -> Result<SweepTable> {
    if cfg.sweep_limits.is_empty() {
        return Err(Error::param("no sweep limits configured"));
    }
    let mut rows = Vec::new();
    let mut decoder = String::new();
    for &limit in &cfg.sweep_limits {
        info!("sweep: first {limit} sentences");
        let run_cfg = ExperimentConfig {
            vocabulary_limit: Some(limit),
            ..cfg.clone()
        };
        let r = run_experiment(records, features, &run_cfg)?;
        decoder = DecodeOptions {
            beam_width: cfg.beam_width,
            lm: Some(&r.language_model),
            lm_weight: cfg.lm_weight,
        }
        .describe();
        rows.push(SweepRow {
            vocabulary_limit: limit,
            stats: r.stats,
            wer_random: r.random.wer_with_lm(),
            wer_pretrained: r.pretrained.wer_with_lm(),
        });
    }
    Ok(SweepTable { rows, decoder })
}
