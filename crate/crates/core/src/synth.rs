//! Synthetic token corpora with known structure.
//!
//! Every frame carries a content token, a speaker and a pitch value. The
//! codec token at scale `s` is drawn from a mixture: with probability
//! `content_weights[s]` it is a fixed function of the content token, with
//! `speaker_weights[s]` a function of the speaker, with `pitch_weights[s]`
//! a function of the pitch bin, and otherwise uniform noise. Because the
//! tables are deterministic, the joint distribution of codec tokens and
//! attributes can be enumerated exactly, which gives analytic mutual
//! information to test estimators against.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::codebook::CodebookScale;
use crate::corpus::{
    AttributeStreams, EmbeddingTable, BinningConfig, CodecStream, ContentStream, LoudnessStream, PitchStream,
    SpeakerInfo, TokenCorpus, Utterance,
};
use crate::par::{self, Parallelism};
use crate::{Error, Result};

/// Largest `states x codec tokens` product [`GroundTruth::analytic_mi`]
/// will enumerate.
pub const MAX_ENUMERATION_CELLS: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundTruthSpec {
    pub codec_name: String,
    pub num_speakers: usize,
    pub content_cardinality: usize,
    /// Content tokens `0..unvoiced_content` are unvoiced (pitch 0).
    pub unvoiced_content: usize,
    pub num_scales: usize,
    pub codec_cardinality: usize,
    pub content_weights: Vec<f64>,
    pub speaker_weights: Vec<f64>,
    pub pitch_weights: Vec<f64>,
    pub frame_rate_hz: f64,
    /// Inclusive range of utterance lengths in frames.
    pub utterance_frames: (usize, usize),
    /// Content tokens are held for 1..=max_segment_frames frames.
    pub max_segment_frames: usize,
    /// Speaker base F0 values are spaced geometrically over this range.
    pub speaker_f0_range_hz: (f64, f64),
    /// Pitch is `base * exp(depth * sin(2 pi phase / period))` with the
    /// phase advancing one step per frame from a random start.
    pub contour_depth: f64,
    pub contour_period_frames: usize,
    pub binning: BinningConfig,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for GroundTruthSpec {
    fn default() -> Self {
        Self::speechtokenizer_like()
    }
}

impl GroundTruthSpec {
    /// Eight scales: content dominates scale 0, speaker the middle scales,
    /// pitch is weak everywhere.
    pub fn speechtokenizer_like() -> Self {
        GroundTruthSpec {
            codec_name: "synthetic-speechtokenizer".into(),
            num_speakers: 4,
            content_cardinality: 100,
            unvoiced_content: 10,
            num_scales: 8,
            codec_cardinality: 256,
            content_weights: vec![0.9, 0.3, 0.1, 0.05, 0.05, 0.05, 0.05, 0.05],
            speaker_weights: vec![0.05, 0.5, 0.3, 0.2, 0.1, 0.1, 0.1, 0.1],
            pitch_weights: vec![0.0, 0.02, 0.05, 0.05, 0.03, 0.03, 0.03, 0.03],
            frame_rate_hz: 50.0,
            utterance_frames: (40, 120),
            max_segment_frames: 3,
            speaker_f0_range_hz: (110.0, 140.0),
            contour_depth: 0.25,
            contour_period_frames: 16,
            binning: BinningConfig::default(),
            embedding_dim: 16,
            seed: 42,
        }
    }

    /// Two scales without noise: scale 0 is a function of content, scale 1
    /// of the speaker. Every speaker shares one base F0, so the speaker
    /// reaches no other stream.
    pub fn deterministic() -> Self {
        GroundTruthSpec {
            codec_name: "synthetic-deterministic".into(),
            speaker_f0_range_hz: (125.0, 125.0),
            num_scales: 2,
            codec_cardinality: 128,
            content_weights: vec![1.0, 0.0],
            speaker_weights: vec![0.0, 1.0],
            pitch_weights: vec![0.0, 0.0],
            utterance_frames: (16, 24),
            ..Self::speechtokenizer_like()
        }
    }

    /// No dependency at all: every codec token is noise.
    pub fn noise(num_scales: usize) -> Self {
        GroundTruthSpec {
            codec_name: "synthetic-noise".into(),
            num_scales,
            content_weights: vec![0.0; num_scales],
            speaker_weights: vec![0.0; num_scales],
            pitch_weights: vec![0.0; num_scales],
            ..Self::speechtokenizer_like()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_scales;
        if m == 0 {
            return Err(Error::invalid("num_scales must be at least 1"));
        }
        for (name, w) in [
            ("content_weights", &self.content_weights),
            ("speaker_weights", &self.speaker_weights),
            ("pitch_weights", &self.pitch_weights),
        ] {
            if w.len() != m {
                return Err(Error::invalid(format!("{name} has {} entries for {m} scales", w.len())));
            }
            if let Some(bad) = w.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::invalid(format!("{name} entry {bad} outside [0, 1]")));
            }
        }
        for s in 0..m {
            let total = self.content_weights[s] + self.speaker_weights[s] + self.pitch_weights[s];
            if total > 1.0 + 1e-12 {
                return Err(Error::invalid(format!("weights of scale {s} sum to {total} > 1")));
            }
        }
        if self.codec_cardinality < 2 {
            return Err(Error::invalid("codec_cardinality must be at least 2"));
        }
        if self.content_cardinality == 0 || self.unvoiced_content > self.content_cardinality {
            return Err(Error::invalid("need content_cardinality >= 1 and unvoiced_content <= content_cardinality"));
        }
        if self.num_speakers == 0 {
            return Err(Error::invalid("num_speakers must be at least 1"));
        }
        let (lo, hi) = self.utterance_frames;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("utterance_frames ({lo}, {hi}) must satisfy 1 <= min <= max")));
        }
        if self.max_segment_frames == 0 || self.contour_period_frames == 0 || self.embedding_dim == 0 {
            return Err(Error::invalid("segment length, contour period and embedding_dim must be positive"));
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz.is_finite()) {
            return Err(Error::invalid("frame_rate_hz must be positive"));
        }
        let (flo, fhi) = self.speaker_f0_range_hz;
        let d = self.contour_depth;
        let (plo, phi) = crate::corpus::VOICED_PITCH_RANGE_HZ;
        if !(flo > 0.0 && flo <= fhi && d >= 0.0 && flo * (-d).exp() > plo && fhi * d.exp() < phi) {
            return Err(Error::invalid(format!(
                "pitch model (F0 {flo}..{fhi} Hz, depth {d}) leaves the voiced range ({plo}, {phi})"
            )));
        }
        self.binning.validate()
    }

    pub fn speaker_base_f0(&self, k: usize) -> f64 {
        let (lo, hi) = self.speaker_f0_range_hz;
        if self.num_speakers == 1 {
            return lo;
        }
        lo * (hi / lo).powf(k as f64 / (self.num_speakers - 1) as f64)
    }

    pub fn pitch_hz(&self, content: u32, speaker: usize, phase: usize) -> f64 {
        if (content as usize) < self.unvoiced_content {
            return 0.0;
        }
        let p = self.contour_period_frames as f64;
        self.speaker_base_f0(speaker) * (self.contour_depth * (2.0 * PI * phase as f64 / p).sin()).exp()
    }

    /// Loudness is a fixed function of the content token.
    pub fn loudness_db(&self, content: u32) -> f64 {
        let c = self.content_cardinality as u64;
        -50.0 + 40.0 * ((content as u64 * 7919) % c) as f64 / c as f64
    }

    pub fn speaker_id(k: usize) -> String {
        format!("spk{k:03}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtAttribute {
    Content,
    Speaker,
    PitchBin,
}

impl GtAttribute {
    pub const ALL: [GtAttribute; 3] = [GtAttribute::Content, GtAttribute::Speaker, GtAttribute::PitchBin];

    pub fn name(self) -> &'static str {
        match self {
            GtAttribute::Content => "content",
            GtAttribute::Speaker => "speaker",
            GtAttribute::PitchBin => "pitch_bin",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMi {
    pub scale: usize,
    pub attribute: GtAttribute,
    pub nats: f64,
}

/// The tables behind a generated corpus plus its analytic MI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: GroundTruthSpec,
    /// `[scale][content token] -> codec token`
    pub content_tables: Vec<Vec<u32>>,
    /// `[scale][speaker index] -> codec token`
    pub speaker_tables: Vec<Vec<u32>>,
    /// `[scale][pitch bin] -> codec token`
    pub pitch_tables: Vec<Vec<u32>>,
    pub speaker_ids: Vec<String>,
    pub analytic_mi: Vec<AnalyticMi>,
}

impl GroundTruth {
    /// Draws the mapping tables for `spec`; `analytic_mi` is filled when the
    /// joint distribution is small enough to enumerate.
    pub fn from_spec(spec: &GroundTruthSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.codec_cardinality;
        let mut table = |len: usize| -> Vec<u32> {
            let mut perm: Vec<u32> = (0..n as u32).collect();
            perm.shuffle(&mut rng);
            (0..len).map(|i| perm[i % n]).collect()
        };
        let mut content_tables = Vec::new();
        let mut speaker_tables = Vec::new();
        let mut pitch_tables = Vec::new();
        for _ in 0..spec.num_scales {
            content_tables.push(table(spec.content_cardinality));
            speaker_tables.push(table(spec.num_speakers));
            pitch_tables.push(table(spec.binning.pitch_vocab()));
        }
        let mut gt = GroundTruth {
            spec: spec.clone(),
            content_tables,
            speaker_tables,
            pitch_tables,
            speaker_ids: (0..spec.num_speakers).map(GroundTruthSpec::speaker_id).collect(),
            analytic_mi: Vec::new(),
        };
        if gt.enumeration_cells() <= MAX_ENUMERATION_CELLS {
            for s in 0..spec.num_scales {
                for a in GtAttribute::ALL {
                    let nats = gt.analytic_mi(s, a)?;
                    gt.analytic_mi.push(AnalyticMi { scale: s, attribute: a, nats });
                }
            }
        }
        Ok(gt)
    }

    fn enumeration_cells(&self) -> usize {
        let s = &self.spec;
        s.content_cardinality
            .saturating_mul(s.num_speakers)
            .saturating_mul(s.contour_period_frames)
            .saturating_mul(s.codec_cardinality)
    }

    /// Exact MI in nats between the codec token at `scale` and `attribute`
    /// under the generative per-frame distribution (uniform content,
    /// speaker and contour phase).
    pub fn analytic_mi(&self, scale: usize, attribute: GtAttribute) -> Result<f64> {
        let spec = &self.spec;
        if scale >= spec.num_scales {
            return Err(Error::invalid(format!("scale out of range: {scale}")));
        }
        let cells = self.enumeration_cells();
        if cells > MAX_ENUMERATION_CELLS {
            return Err(Error::invalid(format!(
                "joint distribution has {cells} cells (limit {MAX_ENUMERATION_CELLS}); use fewer content tokens, speakers, contour steps or codec tokens"
            )));
        }
        let (c_card, s_card, p_card, n) = (
            spec.content_cardinality,
            spec.num_speakers,
            spec.contour_period_frames,
            spec.codec_cardinality,
        );
        let a_card = match attribute {
            GtAttribute::Content => c_card,
            GtAttribute::Speaker => s_card,
            GtAttribute::PitchBin => spec.binning.pitch_vocab(),
        };
        let (alpha, beta, gamma) =
            (spec.content_weights[scale], spec.speaker_weights[scale], spec.pitch_weights[scale]);
        let rho = (1.0 - alpha - beta - gamma).max(0.0);
        let p_state = 1.0 / (c_card * s_card * p_card) as f64;
        let mut joint = vec![0.0f64; a_card * n];
        let mut noise = vec![0.0f64; a_card];
        for c in 0..c_card {
            for k in 0..s_card {
                for ph in 0..p_card {
                    let b = spec.binning.pitch_bin(spec.pitch_hz(c as u32, k, ph)) as usize;
                    let a = match attribute {
                        GtAttribute::Content => c,
                        GtAttribute::Speaker => k,
                        GtAttribute::PitchBin => b,
                    };
                    let row = &mut joint[a * n..(a + 1) * n];
                    row[self.content_tables[scale][c] as usize] += p_state * alpha;
                    row[self.speaker_tables[scale][k] as usize] += p_state * beta;
                    row[self.pitch_tables[scale][b] as usize] += p_state * gamma;
                    noise[a] += p_state * rho;
                }
            }
        }
        for (a, &z) in noise.iter().enumerate() {
            for v in &mut joint[a * n..(a + 1) * n] {
                *v += z / n as f64;
            }
        }
        let pa: Vec<f64> = (0..a_card).map(|a| joint[a * n..(a + 1) * n].iter().sum()).collect();
        if pa.iter().filter(|&&p| p > 0.0).count() <= 1 {
            return Ok(0.0);
        }
        let mut px = vec![0.0; n];
        for a in 0..a_card {
            for x in 0..n {
                px[x] += joint[a * n + x];
            }
        }
        let mut mi = 0.0;
        for a in 0..a_card {
            for x in 0..n {
                let p = joint[a * n + x];
                if p > 0.0 {
                    mi += p * (p / (pa[a] * px[x])).ln();
                }
            }
        }
        Ok(mi.max(0.0))
    }

    pub fn mi_table(&self, scale: usize, attribute: GtAttribute) -> Option<f64> {
        self.analytic_mi
            .iter()
            .find(|r| r.scale == scale && r.attribute == attribute)
            .map(|r| r.nats)
    }

    /// Inverse of the scale's content table: codec token -> content token.
    /// Only meaningful when the table is injective.
    pub fn inverse_content_table(&self, scale: usize) -> std::collections::BTreeMap<u32, u32> {
        self.content_tables[scale]
            .iter()
            .enumerate()
            .map(|(c, &x)| (x, c as u32))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Number of content groups used by [`synthetic_codebook`] and
/// [`content_categories`].
pub const CONTENT_GROUPS: usize = 8;

/// A codebook whose geometry follows the tables: a token produced by the
/// content table sits near the centre of its content's group (content
/// `c` is in group `c % CONTENT_GROUPS`), a token produced by the speaker
/// table near its speaker's centre, each pulled in proportion to the
/// scale's weights, plus unit Gaussian noise.
pub fn synthetic_codebook(truth: &GroundTruth, dim: usize) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::invalid("codebook dimension must be positive"));
    }
    let spec = &truth.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX - 1);
    let mut centre = |k: usize| -> Vec<Vec<f64>> {
        (0..k).map(|_| (0..dim).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 6.0 * z }).collect()).collect()
    };
    let groups = centre(CONTENT_GROUPS);
    let speakers = centre(spec.num_speakers);
    let n = spec.codec_cardinality;
    let mut scales = Vec::with_capacity(spec.num_scales);
    for s in 0..spec.num_scales {
        let mut values = Vec::with_capacity(n * dim);
        let mut from_content = vec![None; n];
        for (c, &v) in truth.content_tables[s].iter().enumerate() {
            from_content[v as usize].get_or_insert(c);
        }
        let mut from_speaker = vec![None; n];
        for (k, &v) in truth.speaker_tables[s].iter().enumerate() {
            from_speaker[v as usize].get_or_insert(k);
        }
        for v in 0..n {
            for d in 0..dim {
                let mut x: f64 = StandardNormal.sample(&mut rng);
                if let Some(c) = from_content[v] {
                    x += spec.content_weights[s] * groups[c % CONTENT_GROUPS][d];
                }
                if let Some(k) = from_speaker[v] {
                    x += spec.speaker_weights[s] * speakers[k][d];
                }
                values.push(x as f32);
            }
        }
        scales.push(CodebookScale::new(n, dim, values)?);
    }
    Ok(EmbeddingTable { scales })
}

/// `attr_token,category` lines assigning each content token its group.
pub fn content_categories(spec: &GroundTruthSpec) -> String {
    let mut out = String::from("attr_token,category\n");
    for c in 0..spec.content_cardinality {
        out.push_str(&format!("{c},group{}\n", c % CONTENT_GROUPS));
    }
    out
}

pub struct GeneratedCorpus {
    pub corpus: TokenCorpus,
    pub truth: GroundTruth,
}

/// Utterance `i` belongs to speaker `i % num_speakers` and draws from its
/// own random stream, so output does not depend on scheduling.
pub fn generate_corpus(
    spec: &GroundTruthSpec,
    num_utterances: usize,
    par: Parallelism,
) -> Result<GeneratedCorpus> {
    let truth = GroundTruth::from_spec(spec)?;
    let embeddings = speaker_embeddings(spec);
    let utterances =
        par::map_indexed(par, num_utterances, |i| generate_utterance(&truth, &embeddings, i));
    let corpus = TokenCorpus::new(utterances)?;
    Ok(GeneratedCorpus { corpus, truth })
}

fn speaker_embeddings(spec: &GroundTruthSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    (0..spec.num_speakers)
        .map(|_| loop {
            let v: Vec<f64> =
                (0..spec.embedding_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

fn generate_utterance(truth: &GroundTruth, embeddings: &[Vec<f64>], index: usize) -> Utterance {
    let spec = &truth.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let k = index % spec.num_speakers;
    let t = rng.random_range(spec.utterance_frames.0..=spec.utterance_frames.1);
    let mut content = Vec::with_capacity(t);
    while content.len() < t {
        let c = rng.random_range(0..spec.content_cardinality as u32);
        let len = rng.random_range(1..=spec.max_segment_frames);
        content.extend(std::iter::repeat_n(c, len.min(t - content.len())));
    }
    let phase0 = rng.random_range(0..spec.contour_period_frames);
    let pitch: Vec<f64> = content
        .iter()
        .enumerate()
        .map(|(i, &c)| spec.pitch_hz(c, k, (phase0 + i) % spec.contour_period_frames))
        .collect();
    let mut tokens = vec![Vec::with_capacity(t); spec.num_scales];
    for i in 0..t {
        let c = content[i] as usize;
        let b = spec.binning.pitch_bin(pitch[i]) as usize;
        for (s, row) in tokens.iter_mut().enumerate() {
            let u: f64 = rng.random();
            let (alpha, beta, gamma) =
                (spec.content_weights[s], spec.speaker_weights[s], spec.pitch_weights[s]);
            let x = if u < alpha {
                truth.content_tables[s][c]
            } else if u < alpha + beta {
                truth.speaker_tables[s][k]
            } else if u < alpha + beta + gamma {
                truth.pitch_tables[s][b]
            } else {
                rng.random_range(0..spec.codec_cardinality as u32)
            };
            row.push(x);
        }
    }
    let rate = spec.frame_rate_hz;
    Utterance {
        id: format!("utt{index:06}"),
        codec: CodecStream {
            name: spec.codec_name.clone(),
            frame_rate_hz: rate,
            num_scales: spec.num_scales,
            cardinality: spec.codec_cardinality,
            tokens,
        },
        attributes: AttributeStreams {
            loudness: LoudnessStream {
                frame_rate_hz: rate,
                values_db: content.iter().map(|&c| spec.loudness_db(c)).collect(),
            },
            content: ContentStream {
                frame_rate_hz: rate,
                cardinality: spec.content_cardinality,
                tokens: content,
            },
            pitch: PitchStream { frame_rate_hz: rate, values_hz: pitch },
            speaker: SpeakerInfo {
                id: GroundTruthSpec::speaker_id(k),
                embedding: Some(embeddings[k].clone()),
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::assoc::{accumulate_cooccurrence, predominant_mapping, rank_associations};
    use crate::mi::plugin_mi;
    use proptest::prelude::*;

    fn small(alpha: f64, beta: f64, gamma: f64) -> GroundTruthSpec {
        GroundTruthSpec {
            num_speakers: 3,
            content_cardinality: 6,
            unvoiced_content: 1,
            num_scales: 1,
            codec_cardinality: 8,
            content_weights: vec![alpha],
            speaker_weights: vec![beta],
            pitch_weights: vec![gamma],
            contour_period_frames: 5,
            speaker_f0_range_hz: (100.0, 200.0),
            binning: BinningConfig { pitch_bins: 6, ..BinningConfig::default() },
            ..GroundTruthSpec::speechtokenizer_like()
        }
    }

    /// Independent enumeration: full joint over (state, source, noise value).
    fn brute_force_mi(gt: &GroundTruth, scale: usize, attr: GtAttribute) -> f64 {
        let s = &gt.spec;
        let (al, be, ga) = (s.content_weights[scale], s.speaker_weights[scale], s.pitch_weights[scale]);
        let rho = 1.0 - al - be - ga;
        let n = s.codec_cardinality;
        let ps = 1.0 / (s.content_cardinality * s.num_speakers * s.contour_period_frames) as f64;
        let mut joint: HashMap<(usize, u32), f64> = HashMap::new();
        for c in 0..s.content_cardinality {
            for k in 0..s.num_speakers {
                for ph in 0..s.contour_period_frames {
                    let b = s.binning.pitch_bin(s.pitch_hz(c as u32, k, ph)) as usize;
                    let a = [c, k, b][attr as usize];
                    let mut push = |x: u32, p: f64| *joint.entry((a, x)).or_default() += p;
                    push(gt.content_tables[scale][c], ps * al);
                    push(gt.speaker_tables[scale][k], ps * be);
                    push(gt.pitch_tables[scale][b], ps * ga);
                    for x in 0..n as u32 {
                        push(x, ps * rho / n as f64);
                    }
                }
            }
        }
        fn h<K>(m: &HashMap<K, f64>) -> f64 {
            m.values().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
        }
        let mut pa: HashMap<usize, f64> = HashMap::new();
        let mut px: HashMap<u32, f64> = HashMap::new();
        for (&(a, x), &p) in &joint {
            *pa.entry(a).or_default() += p;
            *px.entry(x).or_default() += p;
        }
        h(&pa) + h(&px) - h(&joint)
    }

    #[test]
    fn generated_corpora_validate_and_are_deterministic() {
        let spec = GroundTruthSpec::speechtokenizer_like();
        let a = generate_corpus(&spec, 30, Parallelism::Parallel).unwrap();
        let b = generate_corpus(&spec, 30, Parallelism::Sequential).unwrap();
        assert_eq!(a.corpus.to_jsonl(), b.corpus.to_jsonl());
        assert_eq!(a.truth, b.truth);
        let back = crate::corpus::parse_corpus(&a.corpus.to_jsonl(), Parallelism::Sequential).unwrap();
        assert_eq!(back, a.corpus);
        assert_eq!(a.corpus.speakers().len(), 4);
    }

    #[test]
    fn pure_content_scale_is_recovered_by_the_mapping() {
        let spec = GroundTruthSpec { content_weights: vec![1.0, 0.0], ..GroundTruthSpec::deterministic() };
        let g = generate_corpus(&spec, 200, Parallelism::Parallel).unwrap();
        let m = accumulate_cooccurrence(&g.corpus, 0, Parallelism::Parallel).unwrap();
        let mapping = predominant_mapping(&rank_associations(&m));
        let inverse = g.truth.inverse_content_table(0);
        assert!(!mapping.is_empty());
        for (codec, content) in &mapping {
            assert_eq!(inverse[codec], *content);
        }
    }

    #[test]
    fn noise_scale_has_small_plugin_mi() {
        let spec = GroundTruthSpec {
            content_cardinality: 4,
            unvoiced_content: 0,
            codec_cardinality: 8,
            utterance_frames: (100, 100),
            ..GroundTruthSpec::noise(1)
        };
        let g = generate_corpus(&spec, 500, Parallelism::Parallel).unwrap();
        let frames = g.corpus.align_all(Parallelism::Parallel).unwrap();
        let x: Vec<u32> = frames.iter().flat_map(|u| u.codec_tokens[0].clone()).collect();
        let y: Vec<u32> = frames.iter().flat_map(|u| u.content.clone()).collect();
        assert_eq!(x.len(), 50_000);
        assert!(plugin_mi(&x, &y).unwrap() <= 0.02);
        assert_eq!(g.truth.mi_table(0, GtAttribute::Content), Some(0.0));
    }

    #[test]
    fn single_speaker_has_zero_identity_mi() {
        let spec = GroundTruthSpec { num_speakers: 1, ..GroundTruthSpec::speechtokenizer_like() };
        let gt = GroundTruth::from_spec(&spec).unwrap();
        for s in 0..spec.num_scales {
            assert_eq!(gt.analytic_mi(s, GtAttribute::Speaker).unwrap(), 0.0);
        }
    }

    #[test]
    fn bijective_content_scale_has_ln_100() {
        let spec = GroundTruthSpec { content_weights: vec![1.0, 0.0], ..GroundTruthSpec::deterministic() };
        let gt = GroundTruth::from_spec(&spec).unwrap();
        let mi = gt.analytic_mi(0, GtAttribute::Content).unwrap();
        assert!((mi - 100f64.ln()).abs() < 1e-9, "{mi}");
        assert!(gt.analytic_mi(1, GtAttribute::Content).unwrap() < 1e-12);
    }

    #[test]
    fn analytic_mi_matches_brute_force_enumeration() {
        let gt = GroundTruth::from_spec(&small(0.5, 0.2, 0.1)).unwrap();
        for a in GtAttribute::ALL {
            let want = brute_force_mi(&gt, 0, a);
            let got = gt.analytic_mi(0, a).unwrap();
            assert!((got - want).abs() < 1e-10, "{a:?}: {got} vs {want}");
        }
    }

    #[test]
    fn plugin_converges_to_analytic_mi() {
        let spec = GroundTruthSpec { utterance_frames: (100, 100), ..small(0.5, 0.2, 0.1) };
        let g = generate_corpus(&spec, 400, Parallelism::Parallel).unwrap();
        let frames = g.corpus.align_all(Parallelism::Parallel).unwrap();
        let x: Vec<u32> = frames.iter().flat_map(|u| u.codec_tokens[0].clone()).collect();
        let y: Vec<u32> = frames.iter().flat_map(|u| u.content.clone()).collect();
        let n = x.len() as f64;
        let est = plugin_mi(&x, &y).unwrap();
        let truth = g.truth.mi_table(0, GtAttribute::Content).unwrap();
        assert!((est - truth).abs() <= 3.0 / n.sqrt(), "{est} vs {truth}");
    }

    #[test]
    fn oversized_enumeration_is_refused() {
        let spec = GroundTruthSpec { codec_cardinality: 4096, num_speakers: 50, ..GroundTruthSpec::speechtokenizer_like() };
        let gt = GroundTruth::from_spec(&spec).unwrap();
        assert!(gt.analytic_mi.is_empty());
        let err = gt.analytic_mi(0, GtAttribute::Content).unwrap_err();
        assert!(err.to_string().contains("fewer"));
    }

    #[test]
    fn invalid_weights_are_rejected() {
        assert!(small(0.7, 0.3, 0.1).validate().is_err());
        assert!(small(-0.1, 0.0, 0.0).validate().is_err());
        let mut s = small(0.5, 0.0, 0.0);
        s.pitch_weights.push(0.0);
        assert!(s.validate().is_err());
        assert!(generate_corpus(&small(1.2, 0.0, 0.0), 3, Parallelism::Sequential).is_err());
    }

    #[test]
    fn spec_json_round_trips_with_defaults() {
        let s: GroundTruthSpec = serde_json::from_str(r#"{"num_speakers": 24}"#).unwrap();
        assert_eq!(s.num_speakers, 24);
        assert_eq!(s.num_scales, 8);
        let back: GroundTruthSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn more_content_weight_never_lowers_content_mi(
            a1 in 0.0f64..0.4, extra in 0.0f64..0.2, beta in 0.0f64..0.2, gamma in 0.0f64..0.2,
        ) {
            let lo = GroundTruth::from_spec(&small(a1, beta, gamma)).unwrap();
            let hi = GroundTruth::from_spec(&small(a1 + extra, beta, gamma)).unwrap();
            let (l, h) = (
                lo.analytic_mi(0, GtAttribute::Content).unwrap(),
                hi.analytic_mi(0, GtAttribute::Content).unwrap(),
            );
            prop_assert!(h >= l - 1e-12, "{} < {}", h, l);
        }

        #[test]
        fn generated_corpora_always_validate(seed in 0u64..1000, n in 1usize..12) {
            let spec = GroundTruthSpec { seed, ..small(0.3, 0.3, 0.3) };
            let g = generate_corpus(&spec, n, Parallelism::Sequential).unwrap();
            for u in g.corpus.utterances() {
                prop_assert!(u.validate().is_ok());
            }
        }
    }
}
