//! Connectionist temporal classification: loss with exact logit gradients,
//! greedy decoding and prefix beam search with character-LM fusion.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::lm::CharNGramModel;
use crate::nn::Tensor;

/// Tolerance on `logsumexp(row)` for a row to count as log-probabilities.
const NORMALIZATION_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_BEAM_WIDTH: usize = 25;
pub const DEFAULT_LM_WEIGHT: f64 = 1.0;

/// Output symbols; the blank takes the index after the last character.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    chars: Vec<char>,
}

impl Default for Alphabet {
    /// `a`..`z`, space, apostrophe.
    fn default() -> Self {
        let mut chars: Vec<char> = ('a'..='z').collect();
        chars.push(' ');
        chars.push('\'');
        Self { chars }
    }
}

impl Alphabet {
    pub fn new(chars: Vec<char>) -> Result<Self> {
        if chars.is_empty() {
            return Err(Error::param("alphabet is empty"));
        }
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::param(format!("alphabet repeats {c:?}")));
            }
        }
        Ok(Self { chars })
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn blank(&self) -> usize {
        self.chars.len()
    }

    /// Characters plus the blank.
    pub fn n_symbols(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn index(&self, c: char) -> Result<usize> {
        self.chars.iter().position(|&a| a == c).ok_or_else(|| Error::Lookup {
            kind: "character",
            name: c.to_string(),
        })
    }

    pub fn char_at(&self, i: usize) -> Option<char> {
        self.chars.get(i).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.chars.contains(&c)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.index(c)).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Result<String> {
        indices
            .iter()
            .map(|&i| {
                self.char_at(i)
                    .ok_or_else(|| Error::param(format!("symbol index {i} is not a character")))
            })
            .collect()
    }
}

/// Merges adjacent repeats, then removes blanks.
pub fn collapse(path: &[usize], alphabet: &Alphabet) -> Result<String> {
    let blank = alphabet.blank();
    let mut out = String::new();
    let mut prev = None;
    for &k in path {
        if k > blank {
            return Err(Error::param(format!("path index {k} outside 0..={blank}")));
        }
        if Some(k) != prev && k != blank {
            out.push(alphabet.chars[k]);
        }
        prev = Some(k);
    }
    Ok(out)
}

#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Result of [`ctc_loss`].
#[derive(Clone, Debug, PartialEq)]
pub struct CtcLoss {
    /// Negative log-likelihood; `+inf` when infeasible.
    pub loss: f64,
    /// Gradient with respect to the pre-softmax logits; zero when infeasible.
    pub grad: Tensor,
    /// False when no path of this length collapses to the label.
    pub feasible: bool,
}

/// Minimum number of frames needed to emit `label`.
pub fn required_frames(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_log_probs(log_probs: &Tensor, n_symbols: usize) -> Result<()> {
    log_probs.expect_matrix(n_symbols, "CTC")?;
    for (t, row) in log_probs.data().chunks_exact(n_symbols).enumerate() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        if !(lse.abs() <= NORMALIZATION_TOLERANCE) {
            return Err(Error::param(format!(
                "row {t} is not a log-probability vector (logsumexp {lse})"
            )));
        }
    }
    Ok(())
}

/// CTC negative log-likelihood of `label` under per-frame log-probabilities.
pub fn ctc_loss(log_probs: &Tensor, label: &str, alphabet: &Alphabet) -> Result<CtcLoss> {
    let indices = alphabet.encode(label)?;
    ctc_loss_indices(log_probs, &indices, alphabet.blank())
}

/// [`ctc_loss`] over symbol indices with an explicit blank index.
pub fn ctc_loss_indices(log_probs: &Tensor, label: &[usize], blank: usize) -> Result<CtcLoss> {
    let v = blank + 1;
    check_log_probs(log_probs, v)?;
    if let Some(&k) = label.iter().find(|&&k| k >= blank) {
        return Err(Error::param(format!("label symbol {k} is the blank or out of range")));
    }
    let t_len = log_probs.rows();
    let infeasible = || CtcLoss {
        loss: f64::INFINITY,
        grad: Tensor::zeros(&[t_len, v]),
        feasible: false,
    };
    if required_frames(label) > t_len {
        return Ok(infeasible());
    }
    if t_len == 0 {
        return Ok(CtcLoss {
            loss: 0.0,
            grad: Tensor::zeros(&[0, v]),
            feasible: true,
        });
    }

    let mut ext = Vec::with_capacity(2 * label.len() + 1);
    ext.push(blank);
    for &k in label {
        ext.push(k);
        ext.push(blank);
    }
    let s_len = ext.len();
    let lp = |t: usize, k: usize| log_probs.data()[t * v + k];
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add_exp(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = log_add_exp(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == neg { neg } else { a + lp(t, ext[s]) };
        }
    }

    let mut beta = vec![neg; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp(t_len - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add_exp(b, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add_exp(b, next[s + 2]);
            }
            beta[t * s_len + s] = if b == neg { neg } else { b + lp(t, ext[s]) };
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add_exp(log_p, alpha[last + s_len - 2]);
    }
    if !log_p.is_finite() {
        return Ok(infeasible());
    }

    let mut grad = vec![0.0; t_len * v];
    for t in 0..t_len {
        let mut post = vec![neg; v];
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            post[ext[s]] = log_add_exp(post[ext[s]], ab);
        }
        for k in 0..v {
            let p = lp(t, k).exp();
            let gamma = if post[k] == neg {
                0.0
            } else {
                (post[k] - lp(t, k) - log_p).exp()
            };
            grad[t * v + k] = p - gamma;
        }
    }
    Ok(CtcLoss {
        loss: -log_p,
        grad: Tensor::matrix(t_len, v, grad)?,
        feasible: true,
    })
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = k;
        }
    }
    best
}

/// Collapse of the per-frame argmax; ties go to the lowest index.
pub fn greedy_decode(log_probs: &Tensor, alphabet: &Alphabet) -> Result<String> {
    log_probs.expect_matrix(alphabet.n_symbols(), "greedy decoder")?;
    let path: Vec<usize> = (0..log_probs.rows()).map(|t| argmax_lowest(log_probs.row(t))).collect();
    collapse(&path, alphabet)
}

/// A decoding prefix with its blank- and non-blank-ending log masses.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    pub prefix: String,
    pub log_p_blank: f64,
    pub log_p_nonblank: f64,
    /// Weighted LM log-probability accumulated over the prefix.
    pub lm_log_score: f64,
}

impl BeamHypothesis {
    pub fn ctc_log_mass(&self) -> f64 {
        log_add_exp(self.log_p_blank, self.log_p_nonblank)
    }

    pub fn score(&self) -> f64 {
        self.ctc_log_mass() + self.lm_log_score
    }
}

#[derive(Clone, Copy)]
struct Mass {
    pb: f64,
    pnb: f64,
    lm: f64,
}

/// Higher score first, then lexicographically smaller prefix.
fn rank(a: (&String, f64), b: (&String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Weighted LM scores for every alphabet character after `prefix`.
struct LmScorer<'a> {
    lm: &'a CharNGramModel,
    weight: f64,
    cache: HashMap<String, Vec<f64>>,
    alphabet: &'a Alphabet,
}

impl LmScorer<'_> {
    fn scores(&mut self, prefix: &str) -> Result<&[f64]> {
        let order = self.lm.order();
        let tail: String = {
            let chars: Vec<char> = prefix.chars().collect();
            chars[chars.len().saturating_sub(order - 1)..].iter().collect()
        };
        let key = if prefix.chars().count() < order - 1 {
            prefix.to_string()
        } else {
            format!("\u{0}{tail}")
        };
        if !self.cache.contains_key(&key) {
            let mut v = Vec::with_capacity(self.alphabet.len());
            for &c in self.alphabet.chars() {
                v.push(self.weight * self.lm.next_char_logprob(prefix, c)?);
            }
            self.cache.insert(key.clone(), v);
        }
        Ok(&self.cache[&key])
    }
}

/// Prefix beam search; returns the final beam, best first.
pub fn beam_search(
    log_probs: &Tensor,
    alphabet: &Alphabet,
    beam_width: usize,
    lm: Option<&CharNGramModel>,
    lm_weight: f64,
) -> Result<Vec<BeamHypothesis>> {
    if beam_width == 0 {
        return Err(Error::param("beam width must be at least 1"));
    }
    if !(lm_weight >= 0.0) {
        return Err(Error::param(format!("LM weight must be non-negative, got {lm_weight}")));
    }
    if lm_weight > 0.0 && lm.is_none() {
        return Err(Error::param("positive LM weight requires a language model"));
    }
    let v = alphabet.n_symbols();
    log_probs.expect_matrix(v, "beam search")?;
    let blank = alphabet.blank();
    let mut scorer = match lm {
        Some(model) if lm_weight > 0.0 => {
            if let Some(&c) = alphabet.chars().iter().find(|c| !model.vocab().contains(c)) {
                return Err(Error::param(format!("language model vocabulary lacks {c:?}")));
            }
            Some(LmScorer {
                lm: model,
                weight: lm_weight,
                cache: HashMap::new(),
                alphabet,
            })
        }
        _ => None,
    };

    let neg = f64::NEG_INFINITY;
    let mut beams: Vec<(String, Mass)> = vec![(
        String::new(),
        Mass {
            pb: 0.0,
            pnb: neg,
            lm: 0.0,
        },
    )];
    for t in 0..log_probs.rows() {
        let row = log_probs.row(t);
        let mut next: HashMap<String, Mass> = HashMap::with_capacity(beams.len() * v);
        for (prefix, m) in &beams {
            let total = log_add_exp(m.pb, m.pnb);
            let e = next.entry(prefix.clone()).or_insert(Mass {
                pb: neg,
                pnb: neg,
                lm: m.lm,
            });
            e.pb = log_add_exp(e.pb, total + row[blank]);
            let last = prefix.chars().last();
            if let Some(lc) = last {
                let k = alphabet.index(lc)?;
                e.pnb = log_add_exp(e.pnb, m.pnb + row[k]);
            }
            let lm_scores = match scorer.as_mut() {
                Some(s) => Some(s.scores(prefix)?.to_vec()),
                None => None,
            };
            for (k, &c) in alphabet.chars().iter().enumerate() {
                let mut extended = prefix.clone();
                extended.push(c);
                let add = if last == Some(c) { m.pb + row[k] } else { total + row[k] };
                let lm_score = m.lm + lm_scores.as_ref().map_or(0.0, |s| s[k]);
                let e = next.entry(extended).or_insert(Mass {
                    pb: neg,
                    pnb: neg,
                    lm: lm_score,
                });
                e.pnb = log_add_exp(e.pnb, add);
            }
        }
        let mut ranked: Vec<(String, Mass)> = next.into_iter().collect();
        ranked.sort_by(|a, b| rank((&a.0, score(&a.1)), (&b.0, score(&b.1))));
        ranked.truncate(beam_width);
        beams = ranked;
    }
    beams.sort_by(|a, b| rank((&a.0, score(&a.1)), (&b.0, score(&b.1))));
    Ok(beams
        .into_iter()
        .map(|(prefix, m)| BeamHypothesis {
            prefix,
            log_p_blank: m.pb,
            log_p_nonblank: m.pnb,
            lm_log_score: m.lm,
        })
        .collect())
}

fn score(m: &Mass) -> f64 {
    log_add_exp(m.pb, m.pnb) + m.lm
}

/// Top-ranked prefix of [`beam_search`].
pub fn beam_search_decode(
    log_probs: &Tensor,
    alphabet: &Alphabet,
    beam_width: usize,
    lm: Option<&CharNGramModel>,
    lm_weight: f64,
) -> Result<String> {
    let beams = beam_search(log_probs, alphabet, beam_width, lm, lm_weight)?;
    Ok(beams.into_iter().next().map(|h| h.prefix).unwrap_or_default())
}
