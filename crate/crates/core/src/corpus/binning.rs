use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AlignedUtterance;
use crate::{Error, Result};

/// How continuous attributes become tokens.
///
/// Pitch uses `pitch_bins` log-spaced bins over `pitch_range_hz` plus a
/// reserved bin 0 for unvoiced frames, so its vocabulary has
/// `pitch_bins + 1` entries. Loudness uses `loudness_bins` linear bins.
/// Out-of-range values clamp to the edge bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub pitch_bins: usize,
    pub pitch_range_hz: (f64, f64),
    pub loudness_bins: usize,
    pub loudness_range_db: (f64, f64),
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            pitch_bins: 64,
            pitch_range_hz: (50.0, 500.0),
            loudness_bins: 32,
            loudness_range_db: (-60.0, 0.0),
        }
    }
}

impl BinningConfig {
    pub fn validate(&self) -> Result<()> {
        let (pl, ph) = self.pitch_range_hz;
        let (ll, lh) = self.loudness_range_db;
        if self.pitch_bins < 2 || self.loudness_bins < 2 {
            return Err(Error::invalid("binning needs at least 2 bins per attribute"));
        }
        if !(pl > 0.0 && pl < ph && ph.is_finite()) {
            return Err(Error::invalid(format!("pitch range ({pl}, {ph}) must satisfy 0 < low < high")));
        }
        if !(ll < lh && ll.is_finite() && lh.is_finite()) {
            return Err(Error::invalid(format!("loudness range ({ll}, {lh}) must satisfy low < high")));
        }
        Ok(())
    }

    pub fn pitch_vocab(&self) -> usize {
        self.pitch_bins + 1
    }

    pub fn loudness_vocab(&self) -> usize {
        self.loudness_bins
    }

    pub fn pitch_bin(&self, hz: f64) -> u32 {
        if hz <= 0.0 {
            return 0;
        }
        let (lo, hi) = self.pitch_range_hz;
        let frac = (hz.ln() - lo.ln()) / (hi.ln() - lo.ln());
        let b = (self.pitch_bins as f64 * frac).floor();
        let b = if b.is_nan() { 0.0 } else { b };
        1 + b.clamp(0.0, (self.pitch_bins - 1) as f64) as u32
    }

    /// Geometric centre of a voiced bin; 0.0 for the unvoiced bin.
    pub fn pitch_bin_center(&self, bin: u32) -> f64 {
        if bin == 0 {
            return 0.0;
        }
        let (lo, hi) = self.pitch_range_hz;
        let frac = ((bin - 1) as f64 + 0.5) / self.pitch_bins as f64;
        (lo.ln() + frac * (hi.ln() - lo.ln())).exp()
    }

    pub fn loudness_bin(&self, db: f64) -> u32 {
        let (lo, hi) = self.loudness_range_db;
        let b = (self.loudness_bins as f64 * (db - lo) / (hi - lo)).floor();
        let b = if b.is_nan() { 0.0 } else { b };
        b.clamp(0.0, (self.loudness_bins - 1) as f64) as u32
    }

    pub fn loudness_bin_center(&self, bin: u32) -> f64 {
        let (lo, hi) = self.loudness_range_db;
        lo + (bin as f64 + 0.5) * (hi - lo) / self.loudness_bins as f64
    }
}

/// Closed-set speaker vocabulary: sorted ids, token = position.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTable {
    ids: BTreeMap<String, u32>,
}

impl SpeakerTable {
    pub fn from_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let sorted: std::collections::BTreeSet<&str> = ids.into_iter().collect();
        SpeakerTable {
            ids: sorted.into_iter().enumerate().map(|(i, s)| (s.to_string(), i as u32)).collect(),
        }
    }

    pub fn from_corpus(corpus: &super::TokenCorpus) -> Self {
        Self::from_ids(corpus.speakers())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn token(&self, id: &str) -> Option<u32> {
        self.ids.get(id).copied()
    }

    pub fn name(&self, token: u32) -> Option<&str> {
        self.ids.iter().find(|(_, &t)| t == token).map(|(k, _)| k.as_str())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.ids.keys().map(|s| s.as_str())
    }
}

/// Per-frame attribute tokens of one aligned utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeTokenFrames {
    pub content: Vec<u32>,
    pub pitch: Vec<u32>,
    pub loudness: Vec<u32>,
    pub speaker: u32,
}

pub fn quantize_attributes(
    a: &AlignedUtterance,
    b: &BinningConfig,
    speakers: &SpeakerTable,
) -> Result<AttributeTokenFrames> {
    b.validate()?;
    let speaker = speakers.token(&a.speaker_id).ok_or_else(|| {
        Error::invalid(format!(
            "unknown speaker {} (known: {})",
            a.speaker_id,
            speakers.names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    Ok(AttributeTokenFrames {
        content: a.content.clone(),
        pitch: a.pitch_hz.iter().map(|&p| b.pitch_bin(p)).collect(),
        loudness: a.loudness_db.iter().map(|&l| b.loudness_bin(l)).collect(),
        speaker,
    })
}
