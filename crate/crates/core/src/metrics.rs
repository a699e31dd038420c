//! Edit distance, word error rate, RMSE and range-normalized RMSE.

use crate::error::{Error, Result};

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Lower-cased whitespace tokens.
pub fn words(sentence: &str) -> Vec<String> {
    sentence.split_whitespace().map(str::to_lowercase).collect()
}

/// Word-level edit operations and reference word count of one pair.
pub fn word_errors(reference: &str, hypothesis: &str) -> (usize, usize) {
    let r = words(reference);
    (edit_distance(&r, &words(hypothesis)), r.len())
}

/// Corpus word error rate in percent: pooled edit operations over pooled
/// reference words.
pub fn wer<S: AsRef<str>, H: AsRef<str>>(refs: &[S], hyps: &[H]) -> Result<f64> {
    if refs.len() != hyps.len() {
        return Err(Error::shape(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let (mut errors, mut total) = (0usize, 0usize);
    for (r, h) in refs.iter().zip(hyps) {
        let (e, n) = word_errors(r.as_ref(), h.as_ref());
        errors += e;
        total += n;
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("references contain no words".into()));
    }
    Ok(100.0 * errors as f64 / total as f64)
}

/// Per-dimension values and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct PerDimension {
    pub values: Vec<f64>,
    pub mean: f64,
}

impl PerDimension {
    fn new(values: Vec<f64>) -> Self {
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        Self { values, mean }
    }
}

fn check_shapes(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<usize> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "prediction has {} rows, truth {}",
            pred.len(),
            truth.len()
        )));
    }
    let d = truth.first().map_or(0, Vec::len);
    if pred.iter().chain(truth).any(|r| r.len() != d) {
        return Err(Error::shape("rows have unequal widths"));
    }
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("no frames to evaluate".into()));
    }
    Ok(d)
}

/// Root mean squared error per column of `[T x D]` matrices.
pub fn rmse(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<PerDimension> {
    let d = check_shapes(pred, truth)?;
    let mut ss = vec![0.0; d];
    for (p, t) in pred.iter().zip(truth) {
        for k in 0..d {
            ss[k] += (p[k] - t[k]).powi(2);
        }
    }
    let n = truth.len() as f64;
    Ok(PerDimension::new(ss.into_iter().map(|s| (s / n).sqrt()).collect()))
}

/// RMSE divided by the per-column range of the truth.
pub fn nrmse(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<PerDimension> {
    let r = rmse(pred, truth)?;
    let mut values = Vec::with_capacity(r.values.len());
    for (k, v) in r.values.iter().enumerate() {
        let (lo, hi) = truth
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), row| (lo.min(row[k]), hi.max(row[k])));
        let range = hi - lo;
        if range <= 0.0 {
            return Err(Error::UndefinedMetric(format!(
                "truth dimension {k} is constant, range is zero"
            )));
        }
        values.push(v / range);
    }
    Ok(PerDimension::new(values))
}

/// Recognition and regression results for one evaluation run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub utterance_ids: Vec<String>,
    pub references: Vec<String>,
    pub hypotheses: Vec<String>,
    /// Per-utterance WER in percent.
    pub utterance_wer: Vec<f64>,
    pub corpus_wer: Option<f64>,
    pub total_errors: usize,
    pub total_words: usize,
    pub rmse: Option<PerDimension>,
    pub nrmse: Option<PerDimension>,
}

impl EvalReport {
    /// Scores decoded transcripts.
    pub fn from_transcripts(ids: Vec<String>, references: Vec<String>, hypotheses: Vec<String>) -> Result<Self> {
        let corpus = wer(&references, &hypotheses)?;
        let mut report = Self {
            corpus_wer: Some(corpus),
            ..Self::default()
        };
        for (r, h) in references.iter().zip(&hypotheses) {
            let (e, n) = word_errors(r, h);
            report.total_errors += e;
            report.total_words += n;
            report
                .utterance_wer
                .push(if n == 0 { f64::NAN } else { 100.0 * e as f64 / n as f64 });
        }
        report.utterance_ids = ids;
        report.references = references;
        report.hypotheses = hypotheses;
        Ok(report)
    }

    /// Scores pooled regression frames.
    pub fn from_regression(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Self> {
        Ok(Self {
            rmse: Some(rmse(pred, truth)?),
            nrmse: Some(nrmse(pred, truth)?),
            ..Self::default()
        })
    }

    /// Aligned human-readable summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(w) = self.corpus_wer {
            out.push_str(&format!(
                "{:<16}{:>10.2}\n{:<16}{:>10}\n{:<16}{:>10}\n{:<16}{:>10}\n",
                "corpus WER (%)",
                w,
                "utterances",
                self.references.len(),
                "word errors",
                self.total_errors,
                "reference words",
                self.total_words
            ));
            let id_w = self.utterance_ids.iter().map(String::len).max().unwrap_or(2).max(2);
            for (((id, r), h), w) in self
                .utterance_ids
                .iter()
                .zip(&self.references)
                .zip(&self.hypotheses)
                .zip(&self.utterance_wer)
            {
                out.push_str(&format!("{id:<id_w$}  {w:>7.2}  ref: {r}\n{:<id_w$}  {:>7}  hyp: {h}\n", "", ""));
            }
        }
        if let (Some(r), Some(n)) = (&self.rmse, &self.nrmse) {
            out.push_str(&format!("{:<16}{:>10.4}\n", "average RMSE", r.mean));
            out.push_str(&format!("{:<16}{:>10.4}\n", "average NRMSE", n.mean));
            for (k, (a, b)) in r.values.iter().zip(&n.values).enumerate() {
                out.push_str(&format!("  dim {k:<10}{a:>10.4}{b:>10.4}\n"));
            }
        }
        out
    }

    /// Tab-separated machine rows: `metric<TAB>key<TAB>value`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tkey\tvalue\n");
        if let Some(w) = self.corpus_wer {
            out.push_str(&format!("corpus_wer\tall\t{w}\n"));
            out.push_str(&format!("word_errors\tall\t{}\n", self.total_errors));
            out.push_str(&format!("reference_words\tall\t{}\n", self.total_words));
            for ((id, w), h) in self.utterance_ids.iter().zip(&self.utterance_wer).zip(&self.hypotheses) {
                out.push_str(&format!("utterance_wer\t{id}\t{w}\n"));
                out.push_str(&format!("hypothesis\t{id}\t{h}\n"));
            }
        }
        if let (Some(r), Some(n)) = (&self.rmse, &self.nrmse) {
            out.push_str(&format!("average_rmse\tall\t{}\n", r.mean));
            out.push_str(&format!("average_nrmse\tall\t{}\n", n.mean));
            for (k, (a, b)) in r.values.iter().zip(&n.values).enumerate() {
                out.push_str(&format!("rmse\t{k}\t{a}\nnrmse\t{k}\t{b}\n"));
            }
        }
        out
    }
}
