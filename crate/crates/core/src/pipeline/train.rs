//! Training and decoding stages on prepared samples.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, InitMode};
use super::prepare::{Sample, Standardizer};
use super::synth::ARTIC_NAMES;
use crate::ctc::{beam_search_decode, ctc_loss_indices, required_frames, Alphabet};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::lm::CharNGramModel;
use crate::metrics::{nrmse, EvalReport, PerDimension};
use crate::nn::{
    build_artic_model, build_ctc_model, build_regression_model, install_donor_grus, log_softmax, mse_loss,
    transplant_gru_weights, AdamState, CtcModelOptions, Mode, Model, Tensor, Variant,
};

/// RNG streams of the individual stages.
#[derive(Clone, Copy, Debug)]
pub enum Stage {
    Regression = 1,
    Articulatory = 2,
    Acoustic = 3,
    Ctc = 4,
}

/// Seed for initialization or shuffling/dropout of one stage.
pub fn stage_seed(seed: u64, stage: Stage, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64 * 16 + purpose);
    rng.next_u64()
}

fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stage_seed(seed, stage, 1))
}

/// A trained model with its per-epoch mean training loss.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub losses: Vec<f64>,
}

struct Schedule {
    epochs: usize,
    batch: usize,
    learning_rate: f64,
    clip_norm: f64,
}

/// Mini-batch Adam: `step` runs forward and backward for one sample
/// (gradients accumulate) and returns its loss.
fn fit<F>(model: &mut Model, n: usize, s: &Schedule, rng: &mut ChaCha8Rng, mut step: F) -> Result<Vec<f64>>
where
    F: FnMut(&mut Model, usize, &mut ChaCha8Rng) -> Result<f64>,
{
    if n == 0 {
        return Err(Error::param("no training utterances"));
    }
    let mut adam = AdamState::new(s.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(s.epochs);
    for epoch in 0..s.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(s.batch) {
            model.zero_grads();
            for &i in batch {
                total += step(model, i, rng)?;
            }
            model.scale_grads(1.0 / batch.len() as f64);
            model.clip_grad_norm(s.clip_norm);
            model.apply_adam(&mut adam)?;
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::State(format!("training diverged at epoch {}", epoch + 1)));
        }
        info!("epoch {}/{}: loss {mean:.6}", epoch + 1, s.epochs);
        losses.push(mean);
    }
    Ok(losses)
}

fn scaled_targets(samples: &[Sample], scaler: &Standardizer, columns: std::ops::Range<usize>) -> Result<Vec<Tensor>> {
    samples
        .iter()
        .map(|s| {
            let t = s.require_targets()?;
            let rows: Vec<Vec<f64>> = (0..t.rows())
                .map(|i| scaler.apply(&t.row(i)[columns.clone()]))
                .collect();
            Tensor::from_rows(&rows)
        })
        .collect()
}

fn fit_target_scaler(samples: &[Sample], columns: std::ops::Range<usize>) -> Result<Standardizer> {
    let mut rows = Vec::new();
    for s in samples {
        let t = s.require_targets()?;
        if t.cols() < columns.end {
            return Err(Error::shape(format!("utterance {} has {} target columns", s.id, t.cols())));
        }
        rows.extend((0..t.rows()).map(|i| &t.row(i)[columns.clone()]));
    }
    Standardizer::fit(rows)
}

fn mse_step(model: &mut Model, x: &Tensor, y: &Tensor, rng: &mut ChaCha8Rng) -> Result<f64> {
    let pred = model.forward(x, Mode::Train, rng)?;
    let (loss, grad) = mse_loss(&pred, y)?;
    model.backward(&grad)?;
    Ok(loss)
}

/// A regression model with the target normalization it was trained on.
#[derive(Clone, Debug)]
pub struct RegressionOutcome {
    pub model: Model,
    pub target_scaler: Standardizer,
    pub losses: Vec<f64>,
}

impl RegressionOutcome {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = self.model.to_checkpoint();
        self.target_scaler.store(&mut c, "target");
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        Ok(Self {
            model: Model::from_checkpoint(c)?,
            target_scaler: Standardizer::load(c, "target")?,
            losses: Vec::new(),
        })
    }

    /// Predictions in target units.
    pub fn predict(&self, input: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut model = self.model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward(input, Mode::Infer, &mut rng)?;
        Ok(out.to_rows().iter().map(|r| self.target_scaler.invert(r)).collect())
    }
}

/// GRU(128) -> GRU(64) -> dense regression from EEG inputs to all speech targets.
pub fn pretrain_regression(train: &[Sample], cfg: &ExperimentConfig) -> Result<RegressionOutcome> {
    let first = train.first().ok_or_else(|| Error::param("no training utterances"))?;
    let d_out = first.require_targets()?.cols();
    let scaler = fit_target_scaler(train, 0..d_out)?;
    let targets = scaled_targets(train, &scaler, 0..d_out)?;
    let mut model = build_regression_model(first.input.cols(), d_out, stage_seed(cfg.seed, Stage::Regression, 0))?;
    let schedule = Schedule {
        epochs: cfg.epochs_regression,
        batch: cfg.batch_regression,
        learning_rate: cfg.lr_regression,
        clip_norm: cfg.clip_norm,
    };
    let mut rng = stage_rng(cfg.seed, Stage::Regression);
    let losses = fit(&mut model, train.len(), &schedule, &mut rng, |m, i, r| {
        mse_step(m, &train[i].input, &targets[i], r)
    })?;
    Ok(RegressionOutcome {
        model,
        target_scaler: scaler,
        losses,
    })
}

/// Articulatory regression quality on held-out utterances.
#[derive(Clone, Debug)]
pub struct ArticulatoryReport {
    pub report: EvalReport,
    /// NRMSE of predicting the training mean everywhere.
    pub baseline_nrmse: PerDimension,
}

impl ArticulatoryReport {
    pub fn to_text(&self) -> String {
        let mut s = self.report.to_text();
        s.push_str(&format!("baseline average NRMSE {:.6}\n", self.baseline_nrmse.mean));
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s = self.report.to_tsv();
        for (k, v) in self.baseline_nrmse.values.iter().enumerate() {
            s.push_str(&format!("baseline_nrmse\t{k}\t{v}\n"));
        }
        s.push_str(&format!("baseline_nrmse\taverage\t{}\n", self.baseline_nrmse.mean));
        s
    }
}

/// Column range of the articulatory block inside the 19 speech targets.
fn artic_columns(samples: &[Sample]) -> Result<std::ops::Range<usize>> {
    let cols = samples
        .first()
        .ok_or_else(|| Error::param("no utterances"))?
        .require_targets()?
        .cols();
    if cols < ARTIC_NAMES.len() {
        return Err(Error::shape(format!("targets have {cols} columns, need articulatory block")));
    }
    Ok(cols - ARTIC_NAMES.len()..cols)
}

/// TCN(128) -> dropout(0.2) -> dense(6) from EEG inputs to articulatory targets.
pub fn train_articulatory(train: &[Sample], cfg: &ExperimentConfig) -> Result<RegressionOutcome> {
    let cols = artic_columns(train)?;
    let scaler = fit_target_scaler(train, cols.clone())?;
    let targets = scaled_targets(train, &scaler, cols)?;
    let seed = stage_seed(cfg.seed, Stage::Articulatory, 0);
    let mut model = build_artic_model(train[0].input.cols(), ARTIC_NAMES.len(), cfg.artic_batchnorm, seed)?;
    let schedule = Schedule {
        epochs: cfg.epochs_artic,
        batch: cfg.batch_artic,
        learning_rate: cfg.lr_artic,
        clip_norm: cfg.clip_norm,
    };
    let mut rng = stage_rng(cfg.seed, Stage::Articulatory);
    let losses = fit(&mut model, train.len(), &schedule, &mut rng, |m, i, r| {
        mse_step(m, &train[i].input, &targets[i], r)
    })?;
    Ok(RegressionOutcome {
        model,
        target_scaler: scaler,
        losses,
    })
}

/// Pooled-frame RMSE/NRMSE of an articulatory model against the constant-mean baseline.
pub fn evaluate_articulatory(model: &RegressionOutcome, test: &[Sample]) -> Result<ArticulatoryReport> {
    let cols = artic_columns(test)?;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for s in test {
        pred.extend(model.predict(&s.input)?);
        let t = s.require_targets()?;
        truth.extend((0..t.rows()).map(|i| t.row(i)[cols.clone()].to_vec()));
    }
    let baseline: Vec<Vec<f64>> = vec![model.target_scaler.mean.clone(); truth.len()];
    Ok(ArticulatoryReport {
        report: EvalReport::from_regression(&pred, &truth)?,
        baseline_nrmse: nrmse(&baseline, &truth)?,
    })
}

/// A CTC model with its training curve and the number of skipped utterances.
#[derive(Clone, Debug)]
pub struct CtcOutcome {
    pub model: Model,
    pub losses: Vec<f64>,
    pub skipped: usize,
}

fn train_ctc_model(
    mut model: Model,
    train: &[Sample],
    alphabet: &Alphabet,
    schedule: &Schedule,
    rng: &mut ChaCha8Rng,
) -> Result<CtcOutcome> {
    let mut usable = Vec::new();
    for s in train {
        let label = alphabet.encode(&s.transcript)?;
        if required_frames(&label) <= s.frames() {
            usable.push((s, label));
        }
    }
    let skipped = train.len() - usable.len();
    if skipped > 0 {
        warn!("skipping {skipped} utterances with fewer frames than their labels require");
    }
    let blank = alphabet.blank();
    let losses = fit(&mut model, usable.len(), schedule, rng, |m, i, r| {
        let (s, label) = &usable[i];
        let logits = m.forward_logits(&s.input, Mode::Train, r)?;
        let c = ctc_loss_indices(&log_softmax(&logits), label, blank)?;
        m.backward(&c.grad)?;
        Ok(c.loss)
    })?;
    Ok(CtcOutcome {
        model,
        losses,
        skipped,
    })
}

fn ctc_schedule(cfg: &ExperimentConfig, epochs: usize) -> Schedule {
    Schedule {
        epochs,
        batch: cfg.batch_ctc,
        learning_rate: cfg.lr_ctc,
        clip_norm: cfg.clip_norm,
    }
}

/// CTC model over acoustic + articulatory inputs; donor of the extended variant.
pub fn train_acoustic_ctc(train: &[Sample], alphabet: &Alphabet, cfg: &ExperimentConfig) -> Result<CtcOutcome> {
    let d_in = train.first().ok_or_else(|| Error::param("no training utterances"))?.input.cols();
    let opts = CtcModelOptions {
        variant: Variant::Base,
        batchnorm: cfg.batchnorm,
        dropout: cfg.dropout_ctc,
        donor_dim: d_in,
        seed: stage_seed(cfg.seed, Stage::Acoustic, 0),
    };
    let model = build_ctc_model(d_in, alphabet.n_symbols(), &opts)?;
    let mut rng = stage_rng(cfg.seed, Stage::Acoustic);
    train_ctc_model(model, train, alphabet, &ctc_schedule(cfg, cfg.epochs_acoustic), &mut rng)
}

/// The EEG CTC model before training: seeded initialization, then the
/// configured transplant and donor installation.
pub fn initial_ctc_model(
    d_in: usize,
    alphabet: &Alphabet,
    cfg: &ExperimentConfig,
    regression: Option<&Model>,
    donor: Option<&Model>,
) -> Result<Model> {
    let donor_dim = match (cfg.variant, donor) {
        (Variant::Extended, Some(d)) => d.input_dim().ok_or_else(|| Error::param("donor model is empty"))?,
        (Variant::Extended, None) => return Err(Error::Missing("acoustic CTC checkpoint (donor GRUs)".into())),
        (Variant::Base, _) => 0,
    };
    let opts = CtcModelOptions {
        variant: cfg.variant,
        batchnorm: cfg.batchnorm,
        dropout: cfg.dropout_ctc,
        donor_dim: donor_dim.max(1),
        seed: stage_seed(cfg.seed, Stage::Ctc, 0),
    };
    let mut model = build_ctc_model(d_in, alphabet.n_symbols(), &opts)?;
    if cfg.init_mode == InitMode::Pretrained {
        let source = regression.ok_or_else(|| Error::Missing("regression checkpoint (pretrained GRUs)".into()))?;
        model = transplant_gru_weights(source, model)?;
        if cfg.freeze_transplanted {
            for name in ["gru128", "gru64"] {
                model.set_trainable(name, false)?;
            }
        }
    }
    if let Some(d) = donor.filter(|_| cfg.variant == Variant::Extended) {
        model = install_donor_grus(d, model)?;
    }
    Ok(model)
}

/// EEG-to-text CTC training.
pub fn train_ctc(
    train: &[Sample],
    alphabet: &Alphabet,
    cfg: &ExperimentConfig,
    regression: Option<&Model>,
    donor: Option<&Model>,
) -> Result<CtcOutcome> {
    let d_in = train.first().ok_or_else(|| Error::param("no training utterances"))?.input.cols();
    let model = initial_ctc_model(d_in, alphabet, cfg, regression, donor)?;
    let mut rng = stage_rng(cfg.seed, Stage::Ctc);
    train_ctc_model(model, train, alphabet, &ctc_schedule(cfg, cfg.epochs_ctc), &mut rng)
}

/// Decoder settings.
#[derive(Clone, Copy, Debug)]
pub struct DecodeOptions<'a> {
    pub beam_width: usize,
    /// Fused only when `lm_weight > 0`.
    pub lm: Option<&'a CharNGramModel>,
    pub lm_weight: f64,
}

impl DecodeOptions<'_> {
    pub fn uses_lm(&self) -> bool {
        self.lm.is_some() && self.lm_weight > 0.0
    }

    pub fn describe(&self) -> String {
        match self.lm.filter(|_| self.lm_weight > 0.0) {
            Some(lm) => format!(
                "decoder: beam {} with {}-gram LM weight {}",
                self.beam_width,
                lm.order(),
                self.lm_weight
            ),
            None => format!("decoder: beam {} no LM", self.beam_width),
        }
    }
}

/// Beam-search transcripts of every sample.
pub fn decode_samples(model: &Model, samples: &[Sample], alphabet: &Alphabet, opts: &DecodeOptions) -> Result<Vec<String>> {
    let lm = opts.lm.filter(|_| opts.lm_weight > 0.0);
    super::par_map(samples, |s| {
        let mut m = model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = m.forward_logits(&s.input, Mode::Infer, &mut rng)?;
        beam_search_decode(&log_softmax(&logits), alphabet, opts.beam_width, lm, opts.lm_weight)
    })
}

pub fn decode_eval(model: &Model, test: &[Sample], alphabet: &Alphabet, opts: &DecodeOptions) -> Result<EvalReport> {
    let hyps = decode_samples(model, test, alphabet, opts)?;
    EvalReport::from_transcripts(
        test.iter().map(|s| s.id.clone()).collect(),
        test.iter().map(|s| s.transcript.clone()).collect(),
        hyps,
    )
}
