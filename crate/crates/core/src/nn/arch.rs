use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::{Dense, DenseParams};
use super::dropout::Dropout;
use super::gru::{Gru, GruParams};
use super::model::{Layer, Model};
use super::tcn::{TcnBlock, TcnBlockParams, DEFAULT_DILATIONS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Base,
    /// Adds a frozen donor GRU pair between the encoder GRUs and the TCN.
    Extended,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtcModelOptions {
    pub variant: Variant,
    pub batchnorm: bool,
    /// Input dropout of the second GRU and dropout inside the TCN block.
    pub dropout: f64,
    /// Input width of the donor GRU pair (extended variant).
    pub donor_dim: usize,
    pub seed: u64,
}

impl Default for CtcModelOptions {
    fn default() -> Self {
        Self {
            variant: Variant::Base,
            batchnorm: false,
            dropout: 0.0,
            donor_dim: 19,
            seed: 0,
        }
    }
}

/// GRU(128) -> dropout(0.1) -> GRU(64) -> dropout(0.1) -> dense(d_out).
pub fn build_regression_model(d_in: usize, d_out: usize, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Model::new();
    m.push("gru128", Layer::Gru(Gru::new(GruParams::glorot(d_in, 128, &mut rng), 0.0)))?;
    m.push("drop0", Layer::Dropout(Dropout::new(0.1)?))?;
    m.push("gru64", Layer::Gru(Gru::new(GruParams::glorot(128, 64, &mut rng), 0.0)))?;
    m.push("drop1", Layer::Dropout(Dropout::new(0.1)?))?;
    m.push("dense", Layer::Dense(Dense::new(DenseParams::glorot(64, d_out, &mut rng))))?;
    Ok(m)
}

/// GRU(128) -> GRU(64) -> [bridge -> frozen GRU(128) -> frozen GRU(64)] -> TCN(32) -> dense -> softmax.
pub fn build_ctc_model(d_in: usize, vocab_plus_blank: usize, opts: &CtcModelOptions) -> Result<Model> {
    if vocab_plus_blank < 2 {
        return Err(Error::param(format!(
            "output alphabet needs at least 2 symbols, got {vocab_plus_blank}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut m = Model::new();
    m.push("gru128", Layer::Gru(Gru::new(GruParams::glorot(d_in, 128, &mut rng), 0.0)))?;
    m.push("gru64", Layer::Gru(Gru::new(GruParams::glorot(128, 64, &mut rng), opts.dropout)))?;
    if opts.variant == Variant::Extended {
        m.push("bridge", Layer::Dense(Dense::new(DenseParams::glorot(64, opts.donor_dim, &mut rng))))?;
        m.push(
            "donor_gru128",
            Layer::Gru(Gru::new(GruParams::glorot(opts.donor_dim, 128, &mut rng), 0.0)),
        )?;
        m.push("donor_gru64", Layer::Gru(Gru::new(GruParams::glorot(128, 64, &mut rng), 0.0)))?;
        m.set_trainable("donor_gru128", false)?;
        m.set_trainable("donor_gru64", false)?;
    }
    let tcn = TcnBlockParams::glorot(64, 32, &DEFAULT_DILATIONS, opts.batchnorm, &mut rng);
    m.push("tcn32", Layer::Tcn(TcnBlock::new(tcn, opts.dropout)?))?;
    m.push(
        "dense",
        Layer::Dense(Dense::new(DenseParams::glorot(32, vocab_plus_blank, &mut rng))),
    )?;
    m.push("softmax", Layer::softmax())?;
    Ok(m)
}

/// TCN(128) -> dropout(0.2) -> dense(d_out).
pub fn build_artic_model(d_in: usize, d_out: usize, batchnorm: bool, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Model::new();
    let tcn = TcnBlockParams::glorot(d_in, 128, &DEFAULT_DILATIONS, batchnorm, &mut rng);
    m.push("tcn128", Layer::Tcn(TcnBlock::new(tcn, 0.0)?))?;
    m.push("drop0", Layer::Dropout(Dropout::new(0.2)?))?;
    m.push("dense", Layer::Dense(Dense::new(DenseParams::glorot(128, d_out, &mut rng))))?;
    Ok(m)
}

fn copy_gru(source: &Model, src: &str, target: &mut Model, dst: &str) -> Result<()> {
    let from = source.gru_params(src)?;
    let to = target.gru_params_mut(dst)?;
    if from.d_in() != to.d_in() || from.hidden() != to.hidden() {
        return Err(Error::shape(format!(
            "cannot copy GRU {src} ({} -> {}) into layer {dst} ({} -> {})",
            from.d_in(),
            from.hidden(),
            to.d_in(),
            to.hidden()
        )));
    }
    *to = from.clone();
    Ok(())
}

/// Copies the first two GRU layers of `source` into the first two GRU layers of `target`.
pub fn transplant_gru_weights(source: &Model, mut target: Model) -> Result<Model> {
    let src: Vec<String> = source.gru_layers().iter().map(|s| s.to_string()).collect();
    let dst: Vec<String> = target.gru_layers().iter().map(|s| s.to_string()).collect();
    if src.len() < 2 || dst.len() < 2 {
        return Err(Error::shape("transplant needs two GRU layers in both models"));
    }
    for (s, d) in src.iter().zip(&dst).take(2) {
        copy_gru(source, s, &mut target, d)?;
    }
    Ok(target)
}

/// Copies the first two GRU layers of a donor into the donor slots of an extended model.
pub fn install_donor_grus(donor: &Model, mut target: Model) -> Result<Model> {
    let src: Vec<String> = donor.gru_layers().iter().map(|s| s.to_string()).collect();
    if src.len() < 2 {
        return Err(Error::shape("donor model needs two GRU layers"));
    }
    copy_gru(donor, &src[0], &mut target, "donor_gru128")?;
    copy_gru(donor, &src[1], &mut target, "donor_gru64")?;
    Ok(target)
}
