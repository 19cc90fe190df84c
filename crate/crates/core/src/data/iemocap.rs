//! Reader for the IEMOCAP release layout:
//! `SessionN/dialog/EmoEvaluation/<dialog>.txt` holds one line per
//! utterance (`[start - end]\t<id>\t<emotion>\t[v, a, d]`), and audio lives
//! at `SessionN/sentences/wav/<dialog>/<id>.wav`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, Source};
use crate::dsp::{read_wav, resample_linear, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// How excitement (`exc`) utterances are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitementPolicy {
    /// Keep `hap` as happy, drop `exc`.
    #[default]
    Replace,
    /// Count both `hap` and `exc` as happy.
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    #[default]
    Improvised,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IemocapOptions {
    pub mode: SessionMode,
    pub excitement: ExcitementPolicy,
}

/// Emotion tokens of the release that are recognised but not used.
const OTHER_TOKENS: [&str; 6] = ["fru", "sur", "fea", "dis", "oth", "xxx"];

fn class_of(token: &str, policy: ExcitementPolicy) -> Option<Option<usize>> {
    match token {
        "ang" => Some(Some(0)),
        "hap" => Some(Some(1)),
        "exc" => Some(match policy {
            ExcitementPolicy::Replace => None,
            ExcitementPolicy::Merge => Some(1),
        }),
        "neu" => Some(Some(2)),
        "sad" => Some(Some(3)),
        t if OTHER_TOKENS.contains(&t) => Some(None),
        _ => None,
    }
}

fn sorted_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Parses one EmoEvaluation file into `(utterance id, emotion token)`.
pub fn parse_labels(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| l.starts_with('['))
        .filter_map(|l| {
            let mut fields = l.split('\t');
            let _span = fields.next()?;
            let id = fields.next()?.trim();
            let emotion = fields.next()?.trim();
            (!id.is_empty()).then(|| (id.to_string(), emotion.to_string()))
        })
        .collect()
}

/// Loads the four-class subset. Returns the corpus; its `warnings` field
/// counts labels with unrecognised emotion tokens.
pub fn ingest_iemocap(root: &Path, opts: &IemocapOptions) -> Result<Corpus> {
    let fail = |path: &Path, reason: &str| Error::Ingestion { path: path.to_path_buf(), reason: reason.into() };
    if !root.is_dir() {
        return Err(fail(root, "corpus root is not a directory"));
    }
    let sessions: Vec<PathBuf> = sorted_dirs(root)?
        .into_iter()
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("Session")))
        .collect();
    if sessions.is_empty() {
        return Err(fail(root, "no Session directories found"));
    }

    let mut clips = Vec::new();
    let mut warnings = 0;
    let mut unreadable = Vec::new();
    for session in &sessions {
        let wav_root = session.join("sentences").join("wav");
        if !wav_root.is_dir() {
            return Err(fail(&wav_root, "missing sentences/wav directory"));
        }
        for dialog_dir in sorted_dirs(&wav_root)? {
            let dialog = dialog_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            if opts.mode == SessionMode::Improvised && !dialog.contains("impro") {
                continue;
            }
            let label_path = session.join("dialog").join("EmoEvaluation").join(format!("{dialog}.txt"));
            if !label_path.is_file() {
                return Err(fail(&label_path, "missing label file"));
            }
            let text = fs::read_to_string(&label_path)?;
            for (id, token) in parse_labels(&text) {
                let label = match class_of(&token, opts.excitement) {
                    Some(Some(label)) => label,
                    Some(None) => continue,
                    None => {
                        warnings += 1;
                        continue;
                    }
                };
                let wav = dialog_dir.join(format!("{id}.wav"));
                if !wav.is_file() {
                    return Err(fail(&wav, "labelled utterance has no audio"));
                }
                let (samples, rate) = match read_wav(&wav) {
                    Ok(decoded) => decoded,
                    Err(e) => {
                        unreadable.push((wav, e.to_string()));
                        continue;
                    }
                };
                clips.push(AudioClip {
                    samples: resample_linear(&samples, rate, SAMPLE_RATE),
                    sample_rate: SAMPLE_RATE,
                    utterance_id: id,
                    label,
                });
            }
        }
    }
    if !unreadable.is_empty() {
        return Err(Error::UnreadableAudio(unreadable));
    }
    let mut corpus = Corpus::new(clips, Source::Iemocap)?;
    corpus.warnings = warnings;
    Ok(corpus)
}
