//! Character n-gram language model with add-k smoothing and
//! longest-observed-context backoff.
//!
//! File format (UTF-8 text, tab-separated fields):
//!
//! ```text
//! #charlm v1
//! order<TAB>4
//! k<TAB>1
//! vocab<TAB>a b c ... \s '
//! ngrams<TAB>N
//! <s> <s> a<TAB>1
//! ...
//! ```
//!
//! Tokens inside an n-gram are separated by single spaces; `<s>` and `</s>`
//! are the sentence sentinels and `\s`, `\t`, `\n`, `\\` escape characters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::ctc::Alphabet;
use crate::error::{Error, Result};

const HEADER: &str = "#charlm";
const VERSION: &str = "v1";
const BOS: &str = "<s>";
const EOS: &str = "</s>";

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_K: f64 = 1.0;

/// Token ids: `0..V` characters, `V` end sentinel, `V + 1` begin sentinel.
type Tok = u32;

#[derive(Clone, Debug, PartialEq)]
pub struct CharNGramModel {
    order: usize,
    k: f64,
    vocab: Vec<char>,
    /// Counts of every n-gram with `1 <= n <= order`, history then predicted token.
    ngrams: BTreeMap<Vec<Tok>, u64>,
    /// Number of predicted tokens following each observed history.
    contexts: BTreeMap<Vec<Tok>, u64>,
}

impl CharNGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn vocab(&self) -> &[char] {
        &self.vocab
    }

    /// Predicted symbols: characters plus the end sentinel.
    pub fn n_outcomes(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn ngram_count(&self) -> usize {
        self.ngrams.len()
    }

    fn eos(&self) -> Tok {
        self.vocab.len() as Tok
    }

    fn bos(&self) -> Tok {
        self.vocab.len() as Tok + 1
    }

    fn tok(&self, c: char) -> Result<Tok> {
        self.vocab
            .iter()
            .position(|&v| v == c)
            .map(|i| i as Tok)
            .ok_or_else(|| Error::Lookup {
                kind: "character",
                name: c.to_string(),
            })
    }

    /// The last `order - 1` tokens of the sentinel-padded context.
    fn history(&self, context: &str) -> Result<Vec<Tok>> {
        let n = self.order - 1;
        let toks = context.chars().map(|c| self.tok(c)).collect::<Result<Vec<_>>>()?;
        let mut h = vec![self.bos(); n.saturating_sub(toks.len())];
        h.extend_from_slice(&toks[toks.len().saturating_sub(n)..]);
        Ok(h)
    }

    fn logprob_tok(&self, history: &[Tok], tok: Tok) -> f64 {
        let kv = self.k * self.n_outcomes() as f64;
        for start in 0..=history.len() {
            let h = &history[start..];
            if let Some(&ctx) = self.contexts.get(h) {
                let mut key = h.to_vec();
                key.push(tok);
                let c = self.ngrams.get(&key).copied().unwrap_or(0) as f64;
                return ((c + self.k) / (ctx as f64 + kv)).ln();
            }
        }
        (1.0 / self.n_outcomes() as f64).ln()
    }

    /// `log P(c | context)` using at most the last `order - 1` characters.
    pub fn next_char_logprob(&self, context: &str, c: char) -> Result<f64> {
        let h = self.history(context)?;
        Ok(self.logprob_tok(&h, self.tok(c)?))
    }

    /// `log P(end | context)`.
    pub fn end_logprob(&self, context: &str) -> Result<f64> {
        let h = self.history(context)?;
        Ok(self.logprob_tok(&h, self.eos()))
    }

    /// Conditional distribution after `context`: characters in vocabulary
    /// order, then the end sentinel.
    pub fn distribution(&self, context: &str) -> Result<Vec<f64>> {
        let h = self.history(context)?;
        Ok((0..self.n_outcomes() as Tok).map(|t| self.logprob_tok(&h, t).exp()).collect())
    }

    /// Sum of conditional log-probabilities including the end transition.
    pub fn sequence_logprob(&self, s: &str) -> Result<f64> {
        let toks = s.chars().map(|c| self.tok(c)).collect::<Result<Vec<_>>>()?;
        let n = self.order - 1;
        let mut padded = vec![self.bos(); n];
        padded.extend(toks);
        padded.push(self.eos());
        Ok((n..padded.len()).map(|i| self.logprob_tok(&padded[i - n..i], padded[i])).sum())
    }

    fn token_text(&self, t: Tok) -> String {
        if t == self.eos() {
            EOS.to_string()
        } else if t == self.bos() {
            BOS.to_string()
        } else {
            escape(self.vocab[t as usize])
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER} {VERSION}\norder\t{}\nk\t{}\nvocab\t", self.order, self.k);
        let vocab: Vec<String> = self.vocab.iter().map(|&c| escape(c)).collect();
        out.push_str(&vocab.join(" "));
        out.push_str(&format!("\nngrams\t{}\n", self.ngrams.len()));
        for (gram, count) in &self.ngrams {
            let toks: Vec<String> = gram.iter().map(|&t| self.token_text(t)).collect();
            out.push_str(&toks.join(" "));
            out.push_str(&format!("\t{count}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (at, header) = lines.next_line("header")?;
        match header.split_once(' ') {
            Some((HEADER, VERSION)) => {}
            Some((HEADER, v)) => {
                return Err(Error::parse(at, format!("unsupported language model version '{v}', expected {VERSION}")))
            }
            _ => return Err(Error::parse(at, "not a character language model file")),
        }
        let order: usize = parse_field(lines.field("order")?)?;
        if order == 0 {
            return Err(Error::parse(lines.offset, "order must be at least 1"));
        }
        let k: f64 = parse_field(lines.field("k")?)?;
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::parse(lines.offset, format!("smoothing constant must be positive, got {k}")));
        }
        let (vat, vtext) = lines.field("vocab")?;
        let mut vocab = Vec::new();
        if !vtext.is_empty() {
            for (i, tok) in vtext.split(' ').enumerate() {
                let c = unescape(tok).ok_or_else(|| Error::parse(vat, format!("bad vocabulary entry {i}: '{tok}'")))?;
                if vocab.contains(&c) {
                    return Err(Error::parse(vat, format!("vocabulary repeats {c:?}")));
                }
                vocab.push(c);
            }
        }
        let n: usize = parse_field(lines.field("ngrams")?)?;
        let mut model = Self {
            order,
            k,
            vocab,
            ngrams: BTreeMap::new(),
            contexts: BTreeMap::new(),
        };
        for _ in 0..n {
            let (at, line) = lines.next_line("n-gram entry")?;
            let (gram, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(at, "n-gram line lacks a count field"))?;
            let count: u64 = count
                .parse()
                .map_err(|e| Error::parse(at + gram.len() + 1, format!("bad count: {e}")))?;
            if count == 0 {
                return Err(Error::parse(at, "stored counts must be positive"));
            }
            let toks = gram
                .split(' ')
                .map(|t| match t {
                    BOS => Some(model.bos()),
                    EOS => Some(model.eos()),
                    _ => unescape(t).and_then(|c| model.tok(c).ok()),
                })
                .collect::<Option<Vec<Tok>>>()
                .ok_or_else(|| Error::parse(at, format!("unknown token in '{gram}'")))?;
            if toks.is_empty() || toks.len() > order || toks[..toks.len() - 1].contains(&model.eos()) {
                return Err(Error::parse(at, format!("malformed n-gram '{gram}'")));
            }
            let (hist, last) = toks.split_at(toks.len() - 1);
            if last[0] == model.bos() {
                return Err(Error::parse(at, "begin sentinel cannot be predicted"));
            }
            *model.contexts.entry(hist.to_vec()).or_insert(0) += count;
            if model.ngrams.insert(toks, count).is_some() {
                return Err(Error::parse(at, format!("duplicate n-gram '{gram}'")));
            }
        }
        if let Some((at, _)) = lines.rest() {
            return Err(Error::parse(at, "unexpected content after the n-gram table"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn escape(c: char) -> String {
    match c {
        ' ' => "\\s".into(),
        '\t' => "\\t".into(),
        '\n' => "\\n".into(),
        '\\' => "\\\\".into(),
        c => c.to_string(),
    }
}

fn unescape(tok: &str) -> Option<char> {
    match tok {
        "\\s" => Some(' '),
        "\\t" => Some('\t'),
        "\\n" => Some('\n'),
        "\\\\" => Some('\\'),
        _ => {
            let mut it = tok.chars();
            let c = it.next()?;
            (it.next().is_none() && c != '\\').then_some(c)
        }
    }
}

fn parse_field<T: std::str::FromStr>((at, text): (usize, &str)) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    text.parse().map_err(|e| Error::parse(at, format!("bad value '{text}': {e}")))
}

/// Newline-terminated lines with their byte offsets.
struct Lines<'a> {
    text: &'a str,
    offset: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, offset: 0 }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let rest = &self.text[self.offset..];
        let Some(end) = rest.find('\n') else {
            return Err(Error::parse(self.offset, format!("truncated file: expected {what}")));
        };
        let at = self.offset;
        self.offset += end + 1;
        Ok((at, &rest[..end]))
    }

    /// `name<TAB>value`, returning the value and its offset.
    fn field(&mut self, name: &str) -> Result<(usize, &'a str)> {
        let (at, line) = self.next_line(name)?;
        match line.split_once('\t') {
            Some((key, value)) if key == name => Ok((at + key.len() + 1, value)),
            _ => Err(Error::parse(at, format!("expected field '{name}'"))),
        }
    }

    fn rest(&self) -> Option<(usize, &'a str)> {
        (self.offset < self.text.len()).then(|| (self.offset, &self.text[self.offset..]))
    }
}

/// Counts all n-grams up to `order` over sentences padded with `order - 1`
/// begin sentinels and one end sentinel.
pub fn train_ngram<S: AsRef<str>>(corpus: &[S], order: usize, k: f64, alphabet: &Alphabet) -> Result<CharNGramModel> {
    if corpus.is_empty() {
        return Err(Error::param("language model corpus is empty"));
    }
    if order == 0 {
        return Err(Error::param("n-gram order must be at least 1"));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::param(format!("smoothing constant must be positive, got {k}")));
    }
    let mut model = CharNGramModel {
        order,
        k,
        vocab: alphabet.chars().to_vec(),
        ngrams: BTreeMap::new(),
        contexts: BTreeMap::new(),
    };
    let n = order - 1;
    for sentence in corpus {
        let mut padded = vec![model.bos(); n];
        for c in sentence.as_ref().chars() {
            padded.push(model.tok(c)?);
        }
        padded.push(model.eos());
        for i in n..padded.len() {
            for len in 0..=n {
                let hist = &padded[i - len..i];
                *model.contexts.entry(hist.to_vec()).or_insert(0) += 1;
                *model.ngrams.entry(padded[i - len..=i].to_vec()).or_insert(0) += 1;
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> Alphabet {
        Alphabet::new(vec!['a', 'b']).unwrap()
    }

    #[test]
    fn bigram_hand_count() {
        let m = train_ngram(&["aab"], 2, 1.0, &ab()).unwrap();
        assert!((m.next_char_logprob("a", 'a').unwrap().exp() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn fourgram_on_repeated_char() {
        let m = train_ngram(&["aaaa"], 4, 1.0, &ab()).unwrap();
        // history "aaa" is followed once by 'a' and once by the end sentinel.
        let p = m.next_char_logprob("aaa", 'a').unwrap().exp();
        assert!((p - 2.0 / 5.0).abs() < 1e-15);
        // history "<s>aa" is followed by 'a' once.
        let p = m.next_char_logprob("aa", 'a').unwrap().exp();
        assert!((p - 2.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn unseen_context_backs_off_to_unigram() {
        let m = train_ngram(&["a"], 3, 1.0, &ab()).unwrap();
        // neither "bb" nor "b" was ever a history; unigram counts are a 1, end 1.
        let p = m.next_char_logprob("bb", 'a').unwrap().exp();
        assert!((p - 2.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn empty_sentence_and_errors() {
        let m = train_ngram(&[""], 2, 1.0, &ab()).unwrap();
        assert_eq!(m.ngram_count(), 2);
        assert!((m.sequence_logprob("").unwrap() - m.end_logprob("").unwrap()).abs() < 1e-15);
        match train_ngram(&["abc"], 2, 1.0, &ab()) {
            Err(Error::Lookup { name, .. }) => assert_eq!(name, "c"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(train_ngram::<&str>(&[], 2, 1.0, &ab()).is_err());
        assert!(m.next_char_logprob("", 'z').is_err());
    }

    #[test]
    fn text_roundtrip_and_errors() {
        let alpha = Alphabet::default();
        let m = train_ngram(&["the cat's hat", "a bat"], 4, 0.3, &alpha).unwrap();
        let text = m.to_text();
        let back = CharNGramModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
        for cut in [5, text.len() / 2, text.len() - 1] {
            assert!(matches!(CharNGramModel::from_text(&text[..cut]), Err(Error::Parse { .. })));
        }
        match CharNGramModel::from_text(&text.replacen("v1", "v9", 1)) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("version")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
