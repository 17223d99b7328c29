//! Token corpus: the JSON Lines file format, its validation, stream
//! alignment across frame rates, and attribute binning.
//!
//! One line per utterance:
//!
//! ```text
//! {"id": str,
//!  "codec": {"name": str, "frame_rate_hz": num, "num_scales": int, "cardinality": int,
//!            "tokens": [[int,...],...]},
//!  "attributes": {"content": {"frame_rate_hz": num, "cardinality": int, "tokens": [int,...]},
//!                 "pitch": {"frame_rate_hz": num, "values_hz": [num,...]},
//!                 "loudness": {"frame_rate_hz": num, "values_db": [num,...]},
//!                 "speaker": {"id": str, "embedding": [num,...] | null}}}
//! ```
//!
//! Pitch 0.0 marks an unvoiced frame.

mod align;
mod binning;
pub mod codebook;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::par::{self, Parallelism};
use crate::{Error, Result};

pub use align::{align_streams, AlignedUtterance};
pub use binning::{quantize_attributes, AttributeTokenFrames, BinningConfig, SpeakerTable};
pub use codebook::{load_codebook, save_codebook, EmbeddingTable};

/// Default content vocabulary (HuBERT-style units).
pub const DEFAULT_CONTENT_CARDINALITY: usize = 100;

/// Voiced pitch must lie strictly inside this band.
pub const VOICED_PITCH_RANGE_HZ: (f64, f64) = (20.0, 2000.0);

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecStream {
    pub name: String,
    pub frame_rate_hz: f64,
    pub num_scales: usize,
    pub cardinality: usize,
    /// `num_scales` sequences of equal length.
    pub tokens: Vec<Vec<u32>>,
}

impl CodecStream {
    pub fn len(&self) -> usize {
        self.tokens.first().map_or(0, |t| t.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContentStream {
    pub frame_rate_hz: f64,
    pub cardinality: usize,
    pub tokens: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchStream {
    pub frame_rate_hz: f64,
    pub values_hz: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoudnessStream {
    pub frame_rate_hz: f64,
    pub values_db: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerInfo {
    pub id: String,
    pub embedding: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeStreams {
    pub content: ContentStream,
    pub pitch: PitchStream,
    pub loudness: LoudnessStream,
    pub speaker: SpeakerInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub codec: CodecStream,
    pub attributes: AttributeStreams,
}

impl Utterance {
    /// Checks every per-record invariant; the message names the one that failed.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let c = &self.codec;
        check_rate("codec", c.frame_rate_hz)?;
        if c.num_scales == 0 {
            return Err("codec num_scales must be at least 1".into());
        }
        if c.cardinality < 2 {
            return Err(format!("codec cardinality {} must be at least 2", c.cardinality));
        }
        if c.tokens.len() != c.num_scales {
            return Err(format!(
                "codec declares {} scales but carries {} token sequences",
                c.num_scales,
                c.tokens.len()
            ));
        }
        let t = c.len();
        for (s, seq) in c.tokens.iter().enumerate() {
            if seq.len() != t {
                return Err(format!(
                    "codec scale {s} has length {} but scale 0 has length {t}",
                    seq.len()
                ));
            }
            if let Some((i, &v)) = seq.iter().enumerate().find(|(_, &v)| v as usize >= c.cardinality) {
                return Err(format!(
                    "token out of range: codec scale {s} frame {i} value {v} >= cardinality {}",
                    c.cardinality
                ));
            }
        }

        let a = &self.attributes;
        check_rate("content", a.content.frame_rate_hz)?;
        if a.content.cardinality == 0 {
            return Err("content cardinality must be at least 1".into());
        }
        if let Some((i, &v)) =
            a.content.tokens.iter().enumerate().find(|(_, &v)| v as usize >= a.content.cardinality)
        {
            return Err(format!(
                "token out of range: content frame {i} value {v} >= cardinality {}",
                a.content.cardinality
            ));
        }
        check_rate("pitch", a.pitch.frame_rate_hz)?;
        let (lo, hi) = VOICED_PITCH_RANGE_HZ;
        for (i, &p) in a.pitch.values_hz.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(format!("pitch frame {i} value {p} is not a non-negative number"));
            }
            if p > 0.0 && !(p > lo && p < hi) {
                return Err(format!("pitch frame {i} value {p} Hz outside ({lo}, {hi})"));
            }
        }
        check_rate("loudness", a.loudness.frame_rate_hz)?;
        if let Some(i) = a.loudness.values_db.iter().position(|v| !v.is_finite()) {
            return Err(format!("loudness frame {i} is not finite"));
        }
        if a.speaker.id.is_empty() {
            return Err("speaker id is empty".into());
        }
        if let Some(e) = &a.speaker.embedding {
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if e.is_empty() || !((norm - 1.0).abs() <= UNIT_NORM_TOLERANCE) {
                return Err(format!("speaker embedding norm {norm} is not 1 within 1e-6"));
            }
        }
        Ok(())
    }
}

fn check_rate(stream: &str, r: f64) -> std::result::Result<(), String> {
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(format!("{stream} frame_rate_hz {r} must be positive"))
    }
}

/// Validated, immutable collection of utterances in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TokenCorpus {
    utterances: Vec<Utterance>,
}

impl TokenCorpus {
    /// Validates each utterance and the corpus-level invariants (unique ids,
    /// one codec layout).
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, u) in utterances.iter().enumerate() {
            u.validate().map_err(|message| Error::Record { line: i + 1, message })?;
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Record {
                    line: i + 1,
                    message: format!("duplicate utterance id {}", u.id),
                });
            }
        }
        check_layout(&utterances)?;
        Ok(TokenCorpus { utterances })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn num_scales(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.codec.num_scales)
    }

    pub fn codec_cardinality(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.codec.cardinality)
    }

    pub fn content_cardinality(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.attributes.content.cardinality)
    }

    /// Distinct speaker ids, sorted.
    pub fn speakers(&self) -> BTreeSet<&str> {
        self.utterances.iter().map(|u| u.attributes.speaker.id.as_str()).collect()
    }

    /// Aligns every utterance to its codec frame rate, in corpus order.
    pub fn align_all(&self, par: Parallelism) -> Result<Vec<AlignedUtterance>> {
        par::map_slice(par, &self.utterances, |u| align_streams(u, u.codec.frame_rate_hz))
            .into_iter()
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(&serde_json::to_string(u).expect("corpus records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

fn check_layout(utterances: &[Utterance]) -> Result<()> {
    let Some(first) = utterances.first() else { return Ok(()) };
    for (i, u) in utterances.iter().enumerate().skip(1) {
        if u.codec.num_scales != first.codec.num_scales
            || u.codec.cardinality != first.codec.cardinality
            || u.attributes.content.cardinality != first.attributes.content.cardinality
        {
            return Err(Error::Record {
                line: i + 1,
                message: format!(
                    "codec layout {}x{} / content cardinality {} differs from line 1 ({}x{} / {})",
                    u.codec.num_scales,
                    u.codec.cardinality,
                    u.attributes.content.cardinality,
                    first.codec.num_scales,
                    first.codec.cardinality,
                    first.attributes.content.cardinality
                ),
            });
        }
    }
    Ok(())
}

/// Parses and validates corpus text; blank lines are skipped but counted.
pub fn parse_corpus(text: &str, par: Parallelism) -> Result<TokenCorpus> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    let parsed = par::map_slice(par, &lines, |&(line, l)| {
        let u: Utterance = serde_json::from_str(l)
            .map_err(|e| Error::Record { line, message: format!("malformed record: {e}") })?;
        u.validate().map_err(|message| Error::Record { line, message })?;
        Ok::<_, Error>(u)
    });
    let mut utterances = Vec::with_capacity(parsed.len());
    let mut seen = HashSet::new();
    for ((line, _), u) in lines.iter().zip(parsed) {
        let u = u?;
        if !seen.insert(u.id.clone()) {
            return Err(Error::Record { line: *line, message: format!("duplicate utterance id {}", u.id) });
        }
        utterances.push(u);
    }
    check_layout(&utterances).map_err(|e| match e {
        Error::Record { line, message } => {
            Error::Record { line: lines.get(line - 1).map_or(line, |l| l.0), message }
        }
        other => other,
    })?;
    Ok(TokenCorpus { utterances })
}

pub fn load_corpus(path: &Path) -> Result<TokenCorpus> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text, Parallelism::Parallel)
}

#[cfg(test)]
mod tests;
