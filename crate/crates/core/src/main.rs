use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use eegspeech::nn::Variant;
use eegspeech::pipeline::stages::{self, FeatureKind, Workspace};
use eegspeech::pipeline::{ChannelSubset, ExperimentConfig, InitMode, SynthSpec, DEFAULT_SENTENCES};

#[derive(Parser)]
#[command(name = "eegspeech", version, about = "EEG-to-text speech recognition pipeline")]
struct Cli {
    /// Seed for synthesis, splitting, initialization and dropout.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` experiment configuration (desk preset when absent).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Working directory holding the dataset and all stage outputs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    Eeg,
    Mfcc,
    Targets,
}

#[derive(Clone, Copy, ValueEnum)]
enum KpcaAction {
    Fit,
    Transform,
    VarianceReport,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    Pretrained,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Base,
    Extended,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic EEG/speech dataset and manifest.
    Synth {
        #[arg(long, default_value_t = DEFAULT_SENTENCES.len())]
        sentences: usize,
        #[arg(long, default_value_t = 7)]
        subjects: usize,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Seeded train/test split of the manifest.
    Split,
    /// Bandpass and notch filtering of the EEG recordings.
    Preprocess,
    /// Extract one feature stream.
    Features {
        kind: FeatureArg,
        /// all, temporal, frontal, temporal+frontal or a comma-separated label list.
        #[arg(long)]
        channels: Option<String>,
    },
    /// Fit, apply or summarize the kernel PCA input transform.
    Kpca { action: KpcaAction },
    /// Train the character n-gram language model on training transcripts.
    LmTrain,
    /// Train the EEG-to-speech-feature regression model.
    Pretrain,
    /// Train and evaluate the articulatory TCN regressor.
    TrainArtic,
    /// Train the CTC model on speech features (donor for the extended variant).
    TrainAcoustic,
    /// Train the EEG CTC recognizer.
    TrainCtc {
        #[arg(long)]
        init: Option<InitArg>,
        #[arg(long)]
        variant: Option<VariantArg>,
        #[arg(long)]
        batchnorm: bool,
    },
    /// Decode the test utterances with beam search.
    Decode {
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        lm_weight: Option<f64>,
        #[arg(long)]
        init: Option<InitArg>,
        #[arg(long)]
        variant: Option<VariantArg>,
    },
    /// Score decoded hypotheses.
    Eval,
    /// Vocabulary-size sweep with both initializations.
    Sweep,
}

fn apply_model_flags(cfg: &mut ExperimentConfig, init: Option<InitArg>, variant: Option<VariantArg>) {
    if let Some(i) = init {
        cfg.init_mode = match i {
            InitArg::Random => InitMode::Random,
            InitArg::Pretrained => InitMode::Pretrained,
        };
    }
    if let Some(v) = variant {
        cfg.variant = match v {
            VariantArg::Base => Variant::Base,
            VariantArg::Extended => Variant::Extended,
        };
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let ws = Workspace::new(&cli.out);

    match cli.command {
        Command::Synth {
            sentences,
            subjects,
            repetitions,
            noise,
        } => {
            let mut spec = SynthSpec {
                subjects,
                repetitions,
                ..SynthSpec::with_sentences(sentences)
            };
            if let Some(n) = noise {
                spec.noise_level = n;
            }
            let n = stages::stage_synth(&ws, &spec, cfg.seed)?;
            println!("wrote {n} utterances to {}", ws.root.display());
        }
        Command::Split => {
            let (train, test) = stages::stage_split(&ws, &cfg)?;
            println!("train {train} / test {test}");
        }
        Command::Preprocess => {
            let n = stages::stage_preprocess(&ws)?;
            println!("filtered {n} recordings");
        }
        Command::Features { kind, channels } => {
            let subset: ChannelSubset = match channels {
                Some(c) => c.parse()?,
                None => cfg.channel_subset.clone(),
            };
            let kind = match kind {
                FeatureArg::Eeg => FeatureKind::Eeg,
                FeatureArg::Mfcc => FeatureKind::Mfcc,
                FeatureArg::Targets => FeatureKind::Targets,
            };
            let n = stages::stage_features(&ws, kind, &subset)?;
            println!("extracted {kind:?} features for {n} utterances");
        }
        Command::Kpca { action } => match action {
            KpcaAction::Fit => {
                let t = stages::stage_kpca_fit(&ws, &cfg)?;
                println!(
                    "fitted {} components on {} frames of width {}",
                    t.output_dim(),
                    t.kpca.training_vectors().len(),
                    t.kpca.input_dim()
                );
            }
            KpcaAction::Transform => {
                let n = stages::stage_kpca_transform(&ws)?;
                println!("projected {n} utterances");
            }
            KpcaAction::VarianceReport => print!("{}", stages::stage_kpca_variance(&ws)?),
        },
        Command::LmTrain => {
            let lm = stages::stage_lm_train(&ws, &cfg)?;
            println!("{}-gram model with {} stored n-grams", lm.order(), lm.ngram_count());
        }
        Command::Pretrain => {
            let o = stages::stage_pretrain(&ws, &cfg)?;
            println!("final regression loss {:.6}", o.losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::TrainArtic => print!("{}", stages::stage_train_artic(&ws, &cfg)?.to_text()),
        Command::TrainAcoustic => {
            let o = stages::stage_train_acoustic(&ws, &cfg)?;
            println!("final acoustic CTC loss {:.6}", o.losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::TrainCtc {
            init,
            variant,
            batchnorm,
        } => {
            apply_model_flags(&mut cfg, init, variant);
            cfg.batchnorm |= batchnorm;
            let o = stages::stage_train_ctc(&ws, &cfg)?;
            println!(
                "final CTC loss {:.6}, skipped {} utterances, saved {}",
                o.losses.last().copied().unwrap_or(f64::NAN),
                o.skipped,
                ws.ctc(&cfg).display()
            );
        }
        Command::Decode {
            beam,
            lm,
            lm_weight,
            init,
            variant,
        } => {
            apply_model_flags(&mut cfg, init, variant);
            if let Some(b) = beam {
                cfg.beam_width = b;
            }
            if let Some(w) = lm_weight {
                cfg.lm_weight = w;
            }
            cfg.validate()?;
            let hyps = stages::stage_decode(&ws, &cfg, lm.as_deref())?;
            println!("decoded {} utterances into {}", hyps.len(), ws.hypotheses().display());
        }
        Command::Eval => print!("{}", stages::stage_eval(&ws)?.to_text()),
        Command::Sweep => print!("{}", stages::stage_sweep(&ws, &cfg)?.to_text()),
    }
    Ok(())
}
