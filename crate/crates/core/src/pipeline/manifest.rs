//! Tab-separated utterance manifests.
//!
//! One utterance per line: `id`, `subject`, `session`, `transcript`, then
//! the EEG, speech and articulatory paths relative to the manifest's
//! directory (`-` when absent). Lines starting with `#` are comments.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::ctc::Alphabet;
use crate::error::{Error, Result};

const HEADER: &str = "#id\tsubject\tsession\ttranscript\teeg\tspeech\tartic";
const ABSENT: &str = "-";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub id: String,
    pub subject: String,
    pub session: u32,
    pub transcript: String,
    pub eeg: PathBuf,
    pub speech: Option<PathBuf>,
    pub artic: Option<PathBuf>,
}

fn check_field(value: &str, what: &str, line: usize) -> Result<()> {
    if value.is_empty() || value.contains(['\t', '\n', '\r']) {
        return Err(Error::Line {
            line,
            message: format!("{what} must be non-empty and free of tabs and newlines"),
        });
    }
    Ok(())
}

fn path_text(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn manifest_to_string(records: &[UtteranceRecord]) -> Result<String> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for (i, r) in records.iter().enumerate() {
        let line = i + 2;
        check_field(&r.id, "id", line)?;
        check_field(&r.subject, "subject", line)?;
        check_field(&r.transcript, "transcript", line)?;
        let opt = |p: &Option<PathBuf>| p.as_deref().map_or(ABSENT.to_string(), path_text);
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.id,
            r.subject,
            r.session,
            r.transcript,
            path_text(&r.eeg),
            opt(&r.speech),
            opt(&r.artic)
        ));
    }
    Ok(out)
}

/// Parses manifest text, rejecting transcripts outside `alphabet`.
pub fn parse_manifest(text: &str, alphabet: &Alphabet) -> Result<Vec<UtteranceRecord>> {
    let mut records = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Line { line, message };
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 tab-separated fields, found {}", fields.len())));
        }
        let session = fields[2]
            .parse::<u32>()
            .map_err(|e| err(format!("session '{}': {e}", fields[2])))?;
        let transcript = fields[3];
        if transcript.is_empty() {
            return Err(err("empty transcript".into()));
        }
        if let Some(c) = transcript.chars().find(|&c| !alphabet.contains(c)) {
            return Err(err(format!("transcript contains {c:?}, which is outside the alphabet")));
        }
        if fields[0].is_empty() || !ids.insert(fields[0].to_string()) {
            return Err(err(format!("missing or duplicate id '{}'", fields[0])));
        }
        if fields[4] == ABSENT || fields[4].is_empty() {
            return Err(err("EEG path is required".into()));
        }
        let opt = |f: &str| (f != ABSENT && !f.is_empty()).then(|| PathBuf::from(f));
        records.push(UtteranceRecord {
            id: fields[0].to_string(),
            subject: fields[1].to_string(),
            session,
            transcript: transcript.to_string(),
            eeg: PathBuf::from(fields[4]),
            speech: opt(fields[5]),
            artic: opt(fields[6]),
        });
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[UtteranceRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, manifest_to_string(records)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path, alphabet: &Alphabet) -> Result<Vec<UtteranceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(format!("manifest {}", path.display())),
        _ => Error::Io(e),
    })?;
    parse_manifest(&text, alphabet)
}
