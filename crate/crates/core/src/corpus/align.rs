use super::{AttributeStreams, CodecStream, ContentStream, LoudnessStream, PitchStream, SpeakerInfo, Utterance};
use crate::{Error, Result};

// Guards floor() against values like 200.99999999999997 that are integers
// in exact arithmetic.
const FLOOR_SLACK: f64 = 1e-9;

/// All streams of one utterance on a common frame grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedUtterance {
    pub id: String,
    pub frame_rate_hz: f64,
    pub codec_name: String,
    pub codec_cardinality: usize,
    pub content_cardinality: usize,
    /// `[scale][frame]`
    pub codec_tokens: Vec<Vec<u32>>,
    pub content: Vec<u32>,
    pub pitch_hz: Vec<f64>,
    pub loudness_db: Vec<f64>,
    pub speaker_id: String,
    pub speaker_embedding: Option<Vec<f64>>,
}

impl AlignedUtterance {
    pub fn len(&self) -> usize {
        self.content.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_empty()
    }

    pub fn num_scales(&self) -> usize {
        self.codec_tokens.len()
    }

    /// Re-expresses the aligned streams as an utterance whose every stream
    /// runs at `frame_rate_hz`.
    pub fn to_utterance(&self) -> Utterance {
        let r = self.frame_rate_hz;
        Utterance {
            id: self.id.clone(),
            codec: CodecStream {
                name: self.codec_name.clone(),
                frame_rate_hz: r,
                num_scales: self.codec_tokens.len(),
                cardinality: self.codec_cardinality,
                tokens: self.codec_tokens.clone(),
            },
            attributes: AttributeStreams {
                content: ContentStream {
                    frame_rate_hz: r,
                    cardinality: self.content_cardinality,
                    tokens: self.content.clone(),
                },
                pitch: PitchStream { frame_rate_hz: r, values_hz: self.pitch_hz.clone() },
                loudness: LoudnessStream { frame_rate_hz: r, values_db: self.loudness_db.clone() },
                speaker: SpeakerInfo {
                    id: self.speaker_id.clone(),
                    embedding: self.speaker_embedding.clone(),
                },
            },
        }
    }
}

fn same_rate(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Source frame feeding output frame `i` when resampling rate `r` to `g`.
/// Decimation (`r >= g`) and hold-repeat (`r < g`) share the floor map.
pub fn source_index(i: usize, r: f64, g: f64, len: usize) -> usize {
    let j = ((i as f64) * r / g + FLOOR_SLACK).floor() as usize;
    j.min(len - 1)
}

fn resample<T: Copy>(src: &[T], r: f64, g: f64, out_len: usize) -> Vec<T> {
    (0..out_len).map(|i| src[source_index(i, r, g, src.len())]).collect()
}

/// Brings every stream of `u` onto the `target_rate_hz` grid.
///
/// The output length is `floor(duration * target)` with `duration` the
/// shortest stream duration, so trailing frames of longer streams are
/// dropped.
pub fn align_streams(u: &Utterance, target_rate_hz: f64) -> Result<AlignedUtterance> {
    let a = &u.attributes;
    let streams: [(&str, f64, usize); 4] = [
        ("codec", u.codec.frame_rate_hz, u.codec.len()),
        ("content", a.content.frame_rate_hz, a.content.tokens.len()),
        ("pitch", a.pitch.frame_rate_hz, a.pitch.values_hz.len()),
        ("loudness", a.loudness.frame_rate_hz, a.loudness.values_db.len()),
    ];
    let g = target_rate_hz;
    if !(g.is_finite() && g > 0.0) {
        return Err(Error::invalid(format!("target rate {g} Hz must be positive")));
    }
    for (name, r, len) in streams {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid(format!("{}: {name} rate {r} Hz must be positive", u.id)));
        }
        if len == 0 {
            return Err(Error::invalid(format!("{}: {name} stream is empty", u.id)));
        }
    }
    if !streams.iter().any(|&(_, r, _)| same_rate(r, g)) {
        return Err(Error::invalid(format!(
            "{}: target rate {g} Hz is not one of the declared stream rates",
            u.id
        )));
    }
    let duration = streams
        .iter()
        .map(|&(_, r, len)| len as f64 / r)
        .fold(f64::INFINITY, f64::min);
    let t = (duration * g + FLOOR_SLACK).floor() as usize;
    if t == 0 {
        return Err(Error::invalid(format!("{}: aligned length is zero", u.id)));
    }

    let codec_tokens = u
        .codec
        .tokens
        .iter()
        .map(|s| resample(s, u.codec.frame_rate_hz, g, t))
        .collect();
    Ok(AlignedUtterance {
        id: u.id.clone(),
        frame_rate_hz: g,
        codec_name: u.codec.name.clone(),
        codec_cardinality: u.codec.cardinality,
        content_cardinality: a.content.cardinality,
        codec_tokens,
        content: resample(&a.content.tokens, a.content.frame_rate_hz, g, t),
        pitch_hz: resample(&a.pitch.values_hz, a.pitch.frame_rate_hz, g, t),
        loudness_db: resample(&a.loudness.values_db, a.loudness.frame_rate_hz, g, t),
        speaker_id: a.speaker.id.clone(),
        speaker_embedding: a.speaker.embedding.clone(),
    })
}
