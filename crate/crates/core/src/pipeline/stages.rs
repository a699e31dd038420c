//! File-backed stages over an output directory, as driven by the CLI.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use super::config::{ChannelSubset, ExperimentConfig, InitMode};
use super::dataset::{limit_vocabulary, split_dataset, write_dataset, MANIFEST_FILE, TEST_MANIFEST, TRAIN_MANIFEST};
use super::experiment::{run_sweep, train_language_model, SweepTable};
use super::manifest::{read_manifest, write_manifest, UtteranceRecord};
use super::prepare::{
    preprocess_eeg, require_files, speech_targets, InputTransform, Sample, Standardizer, MFCC_COEFFS,
};
use super::synth::{synth_dataset, SynthSpec};
use super::train::{
    evaluate_articulatory, pretrain_regression, train_acoustic_ctc, train_articulatory, train_ctc,
    ArticulatoryReport, CtcOutcome, DecodeOptions, RegressionOutcome,
};
use crate::ctc::Alphabet;
use crate::error::{Error, Result};
use crate::features::{extract_eeg_features, extract_mfcc, select_channels, FeatureSequence, WindowConfig};
use crate::io::{read_features, read_recording, write_features, write_recording, Checkpoint};
use crate::lm::CharNGramModel;
use crate::metrics::EvalReport;
use crate::nn::{Model, Tensor, Variant};

/// Which feature stream the `features` stage extracts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    /// Window statistics of filtered EEG.
    Eeg,
    /// 13 MFCCs of the speech recording.
    Mfcc,
    /// MFCCs joined with articulatory targets.
    Targets,
}

/// Fixed file layout below one output directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn train_manifest(&self) -> PathBuf {
        self.root.join(TRAIN_MANIFEST)
    }

    pub fn test_manifest(&self) -> PathBuf {
        self.root.join(TEST_MANIFEST)
    }

    pub fn filtered(&self, id: &str) -> PathBuf {
        self.root.join("filtered").join(format!("{id}.ndx"))
    }

    pub fn features(&self, kind: &str, id: &str) -> PathBuf {
        self.root.join("features").join(kind).join(format!("{id}.ndx"))
    }

    pub fn transform(&self) -> PathBuf {
        self.root.join("kpca.ckpt")
    }

    pub fn language_model(&self) -> PathBuf {
        self.root.join("lm.txt")
    }

    pub fn regression(&self) -> PathBuf {
        self.root.join("regression.ckpt")
    }

    pub fn articulatory(&self) -> PathBuf {
        self.root.join("artic.ckpt")
    }

    pub fn acoustic(&self) -> PathBuf {
        self.root.join("acoustic.ckpt")
    }

    pub fn ctc(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.root.join(format!("{}.ckpt", ctc_tag(cfg)))
    }

    pub fn hypotheses(&self) -> PathBuf {
        self.root.join("hypotheses.tsv")
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn ctc_tag(cfg: &ExperimentConfig) -> String {
    let init = match cfg.init_mode {
        InitMode::Random => "random",
        InitMode::Pretrained => "pretrained",
    };
    match cfg.variant {
        Variant::Base => format!("ctc_{init}"),
        Variant::Extended => format!("ctc_{init}_extended"),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn loss_tsv(losses: &[f64]) -> String {
    let mut s = String::from("epoch\tloss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{}\t{l}", i + 1);
    }
    s
}

fn load_checkpoint(path: &Path, what: &str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Missing(format!("{what} {}", path.display())));
    }
    Checkpoint::load(path)
}

fn manifest(path: PathBuf) -> Result<Vec<UtteranceRecord>> {
    read_manifest(&path, &Alphabet::default())
}

/// Generates a synthetic dataset and its manifest.
pub fn stage_synth(ws: &Workspace, spec: &SynthSpec, seed: u64) -> Result<usize> {
    let ds = synth_dataset(spec, seed)?;
    write_dataset(&ds, &ws.root)?;
    Ok(ds.utterances.len())
}

/// Writes `train.tsv` and `test.tsv` from the manifest.
pub fn stage_split(ws: &Workspace, cfg: &ExperimentConfig) -> Result<(usize, usize)> {
    let mut records = manifest(ws.manifest())?;
    if let Some(n) = cfg.vocabulary_limit {
        records = limit_vocabulary(&records, n)?;
    }
    let (train, test) = split_dataset(&records, cfg.split_fraction, cfg.seed)?;
    write_manifest(&ws.train_manifest(), &train)?;
    write_manifest(&ws.test_manifest(), &test)?;
    Ok((train.len(), test.len()))
}

/// Bandpass and notch filtering of every manifest EEG recording.
pub fn stage_preprocess(ws: &Workspace) -> Result<usize> {
    let records = manifest(ws.manifest())?;
    require_files(&records.iter().map(|r| ws.root.join(&r.eeg)).collect::<Vec<_>>())?;
    super::par_map(&records, |r| {
        let filtered = preprocess_eeg(&read_recording(&ws.root.join(&r.eeg))?)?;
        write_recording(&ws.filtered(&r.id), &filtered)
    })?;
    Ok(records.len())
}

/// Extracts one feature stream for every manifest utterance.
pub fn stage_features(ws: &Workspace, kind: FeatureKind, channels: &ChannelSubset) -> Result<usize> {
    let records = manifest(ws.manifest())?;
    let mut needed = Vec::new();
    for r in &records {
        match kind {
            FeatureKind::Eeg => needed.push(ws.filtered(&r.id)),
            FeatureKind::Mfcc => needed.push(speech_path(ws, r)?),
            FeatureKind::Targets => {
                needed.push(speech_path(ws, r)?);
                needed.push(artic_path(ws, r)?);
            }
        }
    }
    require_files(&needed)?;
    super::par_map(&records, |r| match kind {
        FeatureKind::Eeg => {
            let filtered = read_recording(&ws.filtered(&r.id))?;
            let selected = match channels.labels() {
                Some(labels) => select_channels(&filtered, &labels)?,
                None => filtered,
            };
            let f = extract_eeg_features(&selected, WindowConfig::eeg_default())?;
            write_features(&ws.features("eeg", &r.id), &f)
        }
        FeatureKind::Mfcc => {
            let speech = read_recording(&speech_path(ws, r)?)?;
            let f = extract_mfcc(&speech, MFCC_COEFFS, WindowConfig::speech_default())?;
            write_features(&ws.features("mfcc", &r.id), &f)
        }
        FeatureKind::Targets => {
            let speech = read_recording(&speech_path(ws, r)?)?;
            let artic = read_features(&artic_path(ws, r)?)?;
            write_features(&ws.features("targets", &r.id), &speech_targets(&speech, &artic)?)
        }
    })?;
    Ok(records.len())
}

fn speech_path(ws: &Workspace, r: &UtteranceRecord) -> Result<PathBuf> {
    r.speech
        .as_ref()
        .map(|p| ws.root.join(p))
        .ok_or_else(|| Error::Missing(format!("speech recording of utterance {}", r.id)))
}

fn artic_path(ws: &Workspace, r: &UtteranceRecord) -> Result<PathBuf> {
    r.artic
        .as_ref()
        .map(|p| ws.root.join(p))
        .ok_or_else(|| Error::Missing(format!("articulatory targets of utterance {}", r.id)))
}

fn read_all(ws: &Workspace, kind: &str, records: &[UtteranceRecord]) -> Result<Vec<FeatureSequence>> {
    let paths: Vec<PathBuf> = records.iter().map(|r| ws.features(kind, &r.id)).collect();
    require_files(&paths)?;
    paths.iter().map(|p| read_features(p)).collect()
}

/// Fits the input transform on the training EEG features.
pub fn stage_kpca_fit(ws: &Workspace, cfg: &ExperimentConfig) -> Result<InputTransform> {
    let train = manifest(ws.train_manifest())?;
    let features = read_all(ws, "eeg", &train)?;
    let t = InputTransform::fit(&features.iter().collect::<Vec<_>>(), cfg)?;
    t.to_checkpoint().save(&ws.transform())?;
    Ok(t)
}

fn load_transform(ws: &Workspace) -> Result<InputTransform> {
    InputTransform::from_checkpoint(&load_checkpoint(&ws.transform(), "KPCA checkpoint")?)
}

/// Projects every manifest utterance through the fitted transform.
pub fn stage_kpca_transform(ws: &Workspace) -> Result<usize> {
    let t = load_transform(ws)?;
    let records = manifest(ws.manifest())?;
    let features = read_all(ws, "eeg", &records)?;
    let names: Vec<String> = (0..t.output_dim()).map(|i| format!("kpc{i}")).collect();
    let pairs: Vec<(&UtteranceRecord, &FeatureSequence)> = records.iter().zip(&features).collect();
    super::par_map(&pairs, |(r, f)| {
        let out = FeatureSequence::new(t.transform(f)?, f.frame_rate_hz(), names.clone())?;
        write_features(&ws.features("kpca", &r.id), &out)
    })?;
    Ok(records.len())
}

/// Cumulative explained variance of the fitted kernel PCA, as text and TSV.
pub fn kpca_variance_report(t: &InputTransform) -> (String, String) {
    let cumulative = t.kpca.explained_variance();
    let mut text = format!("{:>9}  {:>14}  {:>12}\n", "component", "eigenvalue", "cumulative");
    let mut tsv = String::from("component\teigenvalue\tcumulative\n");
    for (i, (l, c)) in t.kpca.eigenvalues().iter().zip(&cumulative).enumerate() {
        let _ = writeln!(text, "{:>9}  {l:>14.6e}  {c:>12.6}", i + 1);
        let _ = writeln!(tsv, "{}\t{l}\t{c}", i + 1);
    }
    (text, tsv)
}

pub fn stage_kpca_variance(ws: &Workspace) -> Result<String> {
    let (text, tsv) = kpca_variance_report(&load_transform(ws)?);
    write_text(&ws.file("kpca_variance.txt"), &text)?;
    write_text(&ws.file("kpca_variance.tsv"), &tsv)?;
    Ok(text)
}

pub fn stage_lm_train(ws: &Workspace, cfg: &ExperimentConfig) -> Result<CharNGramModel> {
    let train = manifest(ws.train_manifest())?;
    let lm = train_language_model(&train, &Alphabet::default(), cfg)?;
    lm.save(&ws.language_model())?;
    Ok(lm)
}

/// KPCA inputs and (optionally) speech targets, trimmed to a common length.
fn load_samples(ws: &Workspace, records: &[UtteranceRecord], with_targets: bool) -> Result<Vec<Sample>> {
    let mut paths: Vec<PathBuf> = records.iter().map(|r| ws.features("kpca", &r.id)).collect();
    if with_targets {
        paths.extend(records.iter().map(|r| ws.features("targets", &r.id)));
    }
    require_files(&paths)?;
    records
        .iter()
        .map(|r| {
            let input = read_features(&ws.features("kpca", &r.id))?;
            let targets = if with_targets {
                Some(read_features(&ws.features("targets", &r.id))?)
            } else {
                None
            };
            let n = targets.as_ref().map_or(input.len(), |t| t.len().min(input.len()));
            Ok(Sample {
                id: r.id.clone(),
                transcript: r.transcript.clone(),
                input: Tensor::from_rows(&input.frames()[..n])?,
                targets: targets.map(|t| Tensor::from_rows(&t.frames()[..n])).transpose()?,
            })
        })
        .collect()
}

/// Trains the regression model whose GRUs seed the CTC encoder.
pub fn stage_pretrain(ws: &Workspace, cfg: &ExperimentConfig) -> Result<RegressionOutcome> {
    let train = load_samples(ws, &manifest(ws.train_manifest())?, true)?;
    let outcome = pretrain_regression(&train, cfg)?;
    outcome.to_checkpoint().save(&ws.regression())?;
    write_text(&ws.file("regression_loss.tsv"), &loss_tsv(&outcome.losses))?;
    Ok(outcome)
}

/// Trains and evaluates the articulatory TCN regressor.
pub fn stage_train_artic(ws: &Workspace, cfg: &ExperimentConfig) -> Result<ArticulatoryReport> {
    let train = load_samples(ws, &manifest(ws.train_manifest())?, true)?;
    let test = load_samples(ws, &manifest(ws.test_manifest())?, true)?;
    let outcome = train_articulatory(&train, cfg)?;
    let report = evaluate_articulatory(&outcome, &test)?;
    outcome.to_checkpoint().save(&ws.articulatory())?;
    write_text(&ws.file("artic_loss.tsv"), &loss_tsv(&outcome.losses))?;
    write_text(&ws.file("artic_report.txt"), &report.to_text())?;
    write_text(&ws.file("artic_report.tsv"), &report.to_tsv())?;
    Ok(report)
}

/// Trains the CTC model over standardized speech targets (donor GRUs).
pub fn stage_train_acoustic(ws: &Workspace, cfg: &ExperimentConfig) -> Result<CtcOutcome> {
    let records = manifest(ws.train_manifest())?;
    let targets = read_all(ws, "targets", &records)?;
    let scaler = Standardizer::fit(targets.iter().flat_map(|t| t.frames().iter().map(Vec::as_slice)))?;
    let samples = records
        .iter()
        .zip(&targets)
        .map(|(r, t)| {
            Ok(Sample {
                id: r.id.clone(),
                transcript: r.transcript.clone(),
                input: Tensor::from_rows(&scaler.apply_all(t.frames())?)?,
                targets: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = train_acoustic_ctc(&samples, &Alphabet::default(), cfg)?;
    let mut c = outcome.model.to_checkpoint();
    scaler.store(&mut c, "input");
    c.save(&ws.acoustic())?;
    write_text(&ws.file("acoustic_loss.tsv"), &loss_tsv(&outcome.losses))?;
    Ok(outcome)
}

/// Trains the EEG CTC model with the configured initialization and variant.
pub fn stage_train_ctc(ws: &Workspace, cfg: &ExperimentConfig) -> Result<CtcOutcome> {
    let regression = match cfg.init_mode {
        InitMode::Pretrained => Some(Model::from_checkpoint(&load_checkpoint(
            &ws.regression(),
            "regression checkpoint",
        )?)?),
        InitMode::Random => None,
    };
    let donor = match cfg.variant {
        Variant::Extended => Some(Model::from_checkpoint(&load_checkpoint(
            &ws.acoustic(),
            "acoustic CTC checkpoint",
        )?)?),
        Variant::Base => None,
    };
    let train = load_samples(ws, &manifest(ws.train_manifest())?, false)?;
    let outcome = train_ctc(&train, &Alphabet::default(), cfg, regression.as_ref(), donor.as_ref())?;
    info!("skipped {} infeasible utterances", outcome.skipped);
    outcome.model.to_checkpoint().save(&ws.ctc(cfg))?;
    let tag = ctc_tag(cfg);
    write_text(&ws.file(&format!("{tag}_loss.tsv")), &loss_tsv(&outcome.losses))?;
    Ok(outcome)
}

const DECODER_PREFIX: &str = "#decoder\t";

/// Beam-search decoding of the test utterances into `hypotheses.tsv`.
pub fn stage_decode(ws: &Workspace, cfg: &ExperimentConfig, lm_path: Option<&Path>) -> Result<Vec<String>> {
    let model = Model::from_checkpoint(&load_checkpoint(&ws.ctc(cfg), "CTC checkpoint")?)?;
    let lm = if cfg.lm_weight > 0.0 {
        let path = lm_path.map_or_else(|| ws.language_model(), Path::to_path_buf);
        if !path.exists() {
            return Err(Error::Missing(format!("language model {}", path.display())));
        }
        Some(CharNGramModel::load(&path)?)
    } else {
        None
    };
    let opts = DecodeOptions {
        beam_width: cfg.beam_width,
        lm: lm.as_ref(),
        lm_weight: cfg.lm_weight,
    };
    let test_records = manifest(ws.test_manifest())?;
    let test = load_samples(ws, &test_records, false)?;
    let hyps = super::train::decode_samples(&model, &test, &Alphabet::default(), &opts)?;
    let mut out = format!("{DECODER_PREFIX}{}\n", opts.describe());
    for (r, h) in test_records.iter().zip(&hyps) {
        let _ = writeln!(out, "{}\t{h}", r.id);
    }
    write_text(&ws.hypotheses(), &out)?;
    Ok(hyps)
}

/// Scores `hypotheses.tsv` against the test transcripts.
pub fn stage_eval(ws: &Workspace) -> Result<EvalReport> {
    let test = manifest(ws.test_manifest())?;
    let path = ws.hypotheses();
    if !path.exists() {
        return Err(Error::Missing(format!("hypotheses {}", path.display())));
    }
    let text = fs::read_to_string(&path)?;
    let mut decoder = String::new();
    let mut hyps = std::collections::BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(d) = line.strip_prefix(DECODER_PREFIX) {
            decoder = d.to_string();
            continue;
        }
        let (id, h) = line.split_once('\t').ok_or_else(|| Error::Line {
            line: i + 1,
            message: "expected 'id<TAB>hypothesis'".into(),
        })?;
        hyps.insert(id.to_string(), h.to_string());
    }
    let hypotheses = test
        .iter()
        .map(|r| {
            hyps.get(&r.id).cloned().ok_or_else(|| Error::Lookup {
                kind: "hypothesis",
                name: r.id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::from_transcripts(
        test.iter().map(|r| r.id.clone()).collect(),
        test.iter().map(|r| r.transcript.clone()).collect(),
        hypotheses,
    )?;
    write_text(&ws.file("report.txt"), &format!("{decoder}\n{}", report.to_text()))?;
    write_text(&ws.file("report.tsv"), &report.to_tsv())?;
    Ok(report)
}

/// Table-style sweep over vocabulary sizes, from the raw dataset.
pub fn stage_sweep(ws: &Workspace, cfg: &ExperimentConfig) -> Result<SweepTable> {
    let records = manifest(ws.manifest())?;
    let features = super::prepare::prepare_from_dir(&ws.root, &records, &cfg.channel_subset)?;
    let table = run_sweep(&records, &features, cfg)?;
    write_text(&ws.file("sweep.txt"), &table.to_text())?;
    write_text(&ws.file("sweep.tsv"), &table.to_tsv())?;
    Ok(table)
}
