//! Corpora, splitting and feature preparation.

mod iemocap;
mod synth;

pub use iemocap::{ingest_iemocap, parse_labels, ExcitementPolicy, IemocapOptions, SessionMode};
pub use synth::{synth_clip, synth_corpus, MAX_SECONDS, MIN_SECONDS};

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{clip_segments, write_wav, AudioClip, Fbank, FbankConfig, FeatureSegment, Split};
use crate::error::{Error, Result};
use crate::model::CLASS_NAMES;
use crate::par::map_ordered;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Iemocap,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    /// Sorted by utterance id.
    pub utterances: Vec<AudioClip>,
    pub class_names: Vec<String>,
    pub source: Source,
    /// Labels skipped because their emotion token was not recognised.
    pub warnings: usize,
}

impl Corpus {
    /// Sorts by utterance id and checks labels, id uniqueness and that every
    /// class is present.
    pub fn new(mut utterances: Vec<AudioClip>, source: Source) -> Result<Self> {
        utterances.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        let mut seen = vec![false; CLASS_NAMES.len()];
        for (i, u) in utterances.iter().enumerate() {
            if u.label >= CLASS_NAMES.len() {
                return Err(Error::Label { label: u.label, classes: CLASS_NAMES.len() });
            }
            if u.samples.is_empty() || u.sample_rate == 0 {
                return Err(Error::Shape(format!("utterance {} has no audio", u.utterance_id)));
            }
            if i > 0 && utterances[i - 1].utterance_id == u.utterance_id {
                return Err(Error::Shape(format!("duplicate utterance id {}", u.utterance_id)));
            }
            seen[u.label] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Stratification { class: missing, count: 0 });
        }
        Ok(Self::unchecked(utterances, source))
    }

    fn unchecked(utterances: Vec<AudioClip>, source: Source) -> Self {
        Self {
            utterances,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            source,
            warnings: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for u in &self.utterances {
            counts[u.label] += 1;
        }
        counts
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.utterances.iter().map(|u| u.utterance_id.as_str())
    }

    /// Writes every utterance to `<dir>/<utterance id>.wav`.
    pub fn export_wavs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for u in &self.utterances {
            write_wav(&dir.join(format!("{}.wav", u.utterance_id)), &u.samples, u.sample_rate)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: 0 }
    }
}

/// Stratified utterance-level split. Each class is shuffled with one shared
/// seeded generator (classes in label order) and its first
/// `round(fraction · count)` utterances go to training, keeping at least
/// one utterance on each side.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot split an empty corpus".into()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {} outside (0, 1)", spec.train_fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in 0..corpus.class_names.len() {
        let mut members: Vec<&AudioClip> = corpus.utterances.iter().filter(|u| u.label == class).collect();
        if members.len() < 2 {
            return Err(Error::Stratification { class, count: members.len() });
        }
        members.shuffle(&mut rng);
        let n_train = ((spec.train_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        train.extend(members[..n_train].iter().map(|&u| u.clone()));
        test.extend(members[n_train..].iter().map(|&u| u.clone()));
    }
    train.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    test.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    Ok((Corpus::unchecked(train, corpus.source), Corpus::unchecked(test, corpus.source)))
}

/// SHA-256 over the sorted, deduplicated train and test utterance ids, for
/// auditing that runs share a split.
pub fn split_hash<'a>(
    train: impl IntoIterator<Item = &'a str>,
    test: impl IntoIterator<Item = &'a str>,
) -> String {
    let mut h = Sha256::new();
    let train: BTreeSet<&str> = train.into_iter().collect();
    let test: BTreeSet<&str> = test.into_iter().collect();
    for (tag, ids) in [("train", train), ("test", test)] {
        h.update(tag.as_bytes());
        for id in ids {
            h.update((id.len() as u32).to_le_bytes());
            h.update(id.as_bytes());
        }
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Extracts and segments every utterance, in corpus order.
pub fn featurize(corpus: &Corpus, split: Split, cfg: &FbankConfig) -> Result<Vec<FeatureSegment>> {
    let rates: BTreeSet<u32> = corpus.utterances.iter().map(|u| u.sample_rate).collect();
    let fbanks = rates
        .into_iter()
        .map(|r| Ok((r, Fbank::new(*cfg, r)?)))
        .collect::<Result<Vec<_>>>()?;
    let per_clip = map_ordered(corpus.len(), |i| {
        let clip = &corpus.utterances[i];
        let fb = &fbanks.iter().find(|(r, _)| *r == clip.sample_rate).expect("rate registered").1;
        clip_segments(fb, clip, split)
    });
    let mut out = Vec::new();
    for segs in per_clip {
        out.extend(segs?);
    }
    Ok(out)
}
