//! Masked encoder-decoder transformer over codec and attribute tokens.
//!
//! One sequence holds five streams in a fixed order: codec frames (the `M`
//! scale embeddings of a frame are summed), content, pitch bins, loudness
//! bins, and a single speaker token. Every position also carries a learned
//! stream-type embedding and a sinusoidal embedding of its time index.
//!
//! The encoder sees only visible positions. The decoder sees the full
//! sequence, with encoder outputs at visible positions and a learned
//! per-stream mask token elsewhere, and linear heads predict the masked
//! tokens. Analysis masks every attribute position; generation masks every
//! codec position.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{quantize_attributes, AttributeTokenFrames, BinningConfig, SpeakerTable, TokenCorpus};
use crate::nn::{
    sinusoidal_positions, Adam, Embedding, Graph, LayerNorm, Linear, ParamId, ParamStore, Scalar, Tensor,
    TransformerBlock, Var,
};
use crate::par::{self, Parallelism};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Codec,
    Content,
    Pitch,
    Loudness,
    Speaker,
}

impl Stream {
    pub const ALL: [Stream; 5] = [Stream::Codec, Stream::Content, Stream::Pitch, Stream::Loudness, Stream::Speaker];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Codec => "codec",
            Stream::Content => "content",
            Stream::Pitch => "pitch",
            Stream::Loudness => "loudness",
            Stream::Speaker => "speaker",
        }
    }
}

/// Vocabulary sizes of the five streams.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamLayout {
    pub num_scales: usize,
    pub codec_vocab: usize,
    pub content_vocab: usize,
    pub pitch_vocab: usize,
    pub loudness_vocab: usize,
    pub speaker_vocab: usize,
}

impl StreamLayout {
    pub fn from_corpus(corpus: &TokenCorpus, binning: &BinningConfig) -> Result<Self> {
        let (Some(m), Some(n), Some(c)) =
            (corpus.num_scales(), corpus.codec_cardinality(), corpus.content_cardinality())
        else {
            return Err(Error::invalid("cannot derive a stream layout from an empty corpus"));
        };
        binning.validate()?;
        Ok(StreamLayout {
            num_scales: m,
            codec_vocab: n,
            content_vocab: c,
            pitch_vocab: binning.pitch_vocab(),
            loudness_vocab: binning.loudness_vocab(),
            speaker_vocab: corpus.speakers().len(),
        })
    }

    pub fn vocab(&self, s: Stream) -> usize {
        match s {
            Stream::Codec => self.codec_vocab,
            Stream::Content => self.content_vocab,
            Stream::Pitch => self.pitch_vocab,
            Stream::Loudness => self.loudness_vocab,
            Stream::Speaker => self.speaker_vocab,
        }
    }

    /// Sequence length for `frames` time steps.
    pub fn positions(&self, frames: usize) -> usize {
        4 * frames + 1
    }

    /// Stream and time index of every position, in sequence order.
    pub fn position_map(&self, frames: usize) -> Vec<(Stream, usize)> {
        let mut out = Vec::with_capacity(self.positions(frames));
        for s in &Stream::ALL[..4] {
            out.extend((0..frames).map(|t| (*s, t)));
        }
        out.push((Stream::Speaker, 0));
        out
    }

    fn validate(&self) -> Result<()> {
        if self.num_scales == 0 || Stream::ALL.iter().any(|&s| self.vocab(s) == 0) {
            return Err(Error::invalid(format!("degenerate stream layout {self:?}")));
        }
        Ok(())
    }
}

/// Codec tokens (`M × T`) and the attribute tokens of the same frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub codec: Vec<Vec<u32>>,
    pub attributes: AttributeTokenFrames,
}

impl TokenSequence {
    pub fn frames(&self) -> usize {
        self.attributes.content.len()
    }

    pub fn check(&self, layout: &StreamLayout) -> Result<()> {
        let t = self.frames();
        if self.codec.len() != layout.num_scales || self.codec.iter().any(|s| s.len() != t) {
            return Err(Error::invalid(format!(
                "codec tokens must be {} x {t}, got {} scales of lengths {:?}",
                layout.num_scales,
                self.codec.len(),
                self.codec.iter().map(|s| s.len()).collect::<Vec<_>>()
            )));
        }
        let a = &self.attributes;
        if a.pitch.len() != t || a.loudness.len() != t {
            return Err(Error::invalid("attribute streams differ in length"));
        }
        let over = |s: Stream, v: &[u32]| v.iter().find(|&&x| x as usize >= layout.vocab(s)).copied();
        for (s, v) in [
            (Stream::Content, &a.content[..]),
            (Stream::Pitch, &a.pitch[..]),
            (Stream::Loudness, &a.loudness[..]),
            (Stream::Speaker, std::slice::from_ref(&a.speaker)),
        ]
        .into_iter()
        .chain(self.codec.iter().map(|c| (Stream::Codec, &c[..])))
        {
            if let Some(x) = over(s, v) {
                return Err(Error::invalid(format!(
                    "{} token {x} outside vocabulary of {}",
                    s.name(),
                    layout.vocab(s)
                )));
            }
        }
        Ok(())
    }

    /// Attribute tokens unknown; used as the input of analysis.
    pub fn from_codec(codec: Vec<Vec<u32>>) -> Self {
        let t = codec.first().map_or(0, |c| c.len());
        TokenSequence {
            codec,
            attributes: AttributeTokenFrames { content: vec![0; t], pitch: vec![0; t], loudness: vec![0; t], speaker: 0 },
        }
    }

    /// Codec tokens unknown; used as the input of generation.
    pub fn from_attributes(attributes: AttributeTokenFrames, num_scales: usize) -> Self {
        let t = attributes.content.len();
        TokenSequence { codec: vec![vec![0; t]; num_scales], attributes }
    }
}

/// Aligns and quantizes every utterance of a corpus.
pub fn prepare_sequences(
    corpus: &TokenCorpus,
    binning: &BinningConfig,
    speakers: &SpeakerTable,
    par: Parallelism,
) -> Result<Vec<TokenSequence>> {
    let aligned = corpus.align_all(par)?;
    par::map_slice(par, &aligned, |a| {
        Ok(TokenSequence { codec: a.codec_tokens.clone(), attributes: quantize_attributes(a, binning, speakers)? })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "ratio", rename_all = "snake_case")]
pub enum MaskMode {
    Analysis,
    Generation,
    Random(f64),
}

/// Visibility of every position, in sequence order.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub visible: Vec<bool>,
    pub mode: MaskMode,
}

impl MaskSet {
    pub fn analysis(frames: usize) -> Self {
        let mut visible = vec![false; 4 * frames + 1];
        visible[..frames].iter_mut().for_each(|v| *v = true);
        MaskSet { visible, mode: MaskMode::Analysis }
    }

    pub fn generation(frames: usize) -> Self {
        let mut visible = vec![true; 4 * frames + 1];
        visible[..frames].iter_mut().for_each(|v| *v = false);
        MaskSet { visible, mode: MaskMode::Generation }
    }

    pub fn masked_count(&self) -> usize {
        self.visible.iter().filter(|v| !**v).count()
    }
}

/// Probabilities of the analysis, generation and random masking modes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskWeights {
    pub analysis: f64,
    pub generation: f64,
    pub random: f64,
}

impl Default for MaskWeights {
    fn default() -> Self {
        MaskWeights { analysis: 0.25, generation: 0.25, random: 0.5 }
    }
}

/// Token embeddings start at std 0.02; this brings them to unit scale, on
/// par with the position encodings.
pub const TOKEN_EMBEDDING_SCALE: f64 = 50.0;

pub const RANDOM_MASK_RATIO: (f64, f64) = (0.15, 0.75);

pub fn make_training_mask<R: Rng>(frames: usize, weights: &MaskWeights, rng: &mut R) -> Result<MaskSet> {
    let w = [weights.analysis, weights.generation, weights.random];
    if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("mask mode weights {w:?} must be non-negative and sum to 1")));
    }
    if frames == 0 {
        return Err(Error::invalid("cannot mask a sequence without frames"));
    }
    let u: f64 = rng.random();
    if u < w[0] {
        return Ok(MaskSet::analysis(frames));
    }
    if u < w[0] + w[1] {
        return Ok(MaskSet::generation(frames));
    }
    let ratio = rng.random_range(RANDOM_MASK_RATIO.0..=RANDOM_MASK_RATIO.1);
    Ok(random_mask(4 * frames + 1, ratio, rng))
}

/// Masks each position independently with probability `ratio`, redrawing
/// until at least one position is masked and one visible.
pub fn random_mask<R: Rng>(positions: usize, ratio: f64, rng: &mut R) -> MaskSet {
    loop {
        let visible: Vec<bool> = (0..positions).map(|_| rng.random::<f64>() >= ratio).collect();
        let masked = visible.iter().filter(|v| !**v).count();
        if masked > 0 && masked < positions {
            return MaskSet { visible, mode: MaskMode::Random(ratio) };
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AncogenConfig {
    pub dim: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub mask_weights: MaskWeights,
    pub seed: u64,
}

impl Default for AncogenConfig {
    fn default() -> Self {
        AncogenConfig {
            dim: 64,
            heads: 4,
            encoder_blocks: 2,
            decoder_blocks: 2,
            batch_size: 8,
            learning_rate: 1e-3,
            steps: 2000,
            mask_weights: MaskWeights::default(),
            seed: 42,
        }
    }
}

/// Parameter handles of the network; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
struct Network {
    codec_embed: Vec<Embedding>,
    attr_embed: [Embedding; 4],
    stream_type: ParamId,
    mask_token: ParamId,
    encoder: Vec<TransformerBlock>,
    encoder_norm: LayerNorm,
    decoder: Vec<TransformerBlock>,
    decoder_norm: LayerNorm,
    codec_heads: Vec<Linear>,
    attr_heads: [Linear; 4],
}

fn head<R: Rng>(store: &mut ParamStore<f32>, name: &str, dim: usize, vocab: usize, rng: &mut R) -> Linear {
    let weight = store.add_normal(format!("{name}.weight"), vec![dim, vocab], 0.02, rng);
    let bias = store.add_const(format!("{name}.bias"), vec![vocab], 0.0);
    Linear { weight, bias, input: dim, output: vocab }
}

impl Network {
    fn new(layout: &StreamLayout, cfg: &AncogenConfig, store: &mut ParamStore<f32>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.dim;
        let codec_embed =
            (0..layout.num_scales).map(|s| Embedding::new(store, &format!("embed.codec{s}"), layout.codec_vocab, d, &mut rng)).collect();
        let attr_embed = [Stream::Content, Stream::Pitch, Stream::Loudness, Stream::Speaker]
            .map(|s| Embedding::new(store, &format!("embed.{}", s.name()), layout.vocab(s), d, &mut rng));
        let stream_type = store.add_normal("embed.stream_type", vec![5, d], 0.02, &mut rng);
        let mask_token = store.add_normal("embed.mask", vec![5, d], 0.02, &mut rng);
        let encoder = (0..cfg.encoder_blocks)
            .map(|b| TransformerBlock::new(store, &format!("enc{b}"), d, cfg.heads, &mut rng))
            .collect::<Result<_>>()?;
        let encoder_norm = LayerNorm::new(store, "enc.ln", d);
        let decoder = (0..cfg.decoder_blocks)
            .map(|b| TransformerBlock::new(store, &format!("dec{b}"), d, cfg.heads, &mut rng))
            .collect::<Result<_>>()?;
        let decoder_norm = LayerNorm::new(store, "dec.ln", d);
        let codec_heads =
            (0..layout.num_scales).map(|s| head(store, &format!("head.codec{s}"), d, layout.codec_vocab, &mut rng)).collect();
        let attr_heads = [Stream::Content, Stream::Pitch, Stream::Loudness, Stream::Speaker]
            .map(|s| head(store, &format!("head.{}", s.name()), d, layout.vocab(s), &mut rng));
        Ok(Network {
            codec_embed,
            attr_embed,
            stream_type,
            mask_token,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            codec_heads,
            attr_heads,
        })
    }
}

/// Logits of the masked positions of one stream (one entry per codec scale).
struct StreamLogits {
    stream: Stream,
    scale: usize,
    times: Vec<usize>,
    logits: Var,
}

#[derive(Clone, Debug)]
pub struct AncogenModel {
    pub layout: StreamLayout,
    pub config: AncogenConfig,
    pub store: ParamStore<f32>,
    net: Network,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    layout: StreamLayout,
    binning: BinningConfig,
    speakers: SpeakerTable,
    config: AncogenConfig,
    parameters: usize,
}

impl AncogenModel {
    pub fn new(layout: StreamLayout, config: AncogenConfig) -> Result<Self> {
        layout.validate()?;
        if config.dim == 0 || config.batch_size == 0 {
            return Err(Error::invalid("model dim and batch size must be positive"));
        }
        let mut store = ParamStore::new();
        let net = Network::new(&layout, &config, &mut store)?;
        Ok(AncogenModel { layout, config, store, net })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_elements()
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        seq: &TokenSequence,
        mask: &MaskSet,
    ) -> Result<Vec<StreamLogits>> {
        seq.check(&self.layout)?;
        let frames = seq.frames();
        let len = self.layout.positions(frames);
        if mask.visible.len() != len {
            return Err(Error::invalid(format!("mask covers {} positions, sequence has {len}", mask.visible.len())));
        }
        let visible: Vec<usize> = (0..len).filter(|&p| mask.visible[p]).collect();
        let masked: Vec<usize> = (0..len).filter(|&p| !mask.visible[p]).collect();
        if masked.is_empty() {
            return Err(Error::invalid("nothing to predict: the mask hides no position"));
        }
        if visible.is_empty() {
            return Err(Error::invalid("the mask hides every position"));
        }
        let net = &self.net;
        let dim = self.config.dim;
        let map = self.layout.position_map(frames);
        let ids = |v: &[u32]| v.iter().map(|&x| x as usize).collect::<Vec<_>>();

        let mut codec = net.codec_embed[0].forward(g, store, &ids(&seq.codec[0]))?;
        for (e, toks) in net.codec_embed.iter().zip(&seq.codec).skip(1) {
            let x = e.forward(g, store, &ids(toks))?;
            codec = g.add(codec, x)?;
        }
        let a = &seq.attributes;
        let mut parts = vec![codec];
        for (e, toks) in net.attr_embed.iter().zip([&a.content[..], &a.pitch[..], &a.loudness[..], &[a.speaker][..]]) {
            parts.push(e.forward(g, store, &ids(toks))?);
        }
        let tokens = g.concat_rows(&parts)?;
        let tokens = g.scale(tokens, T::of(TOKEN_EMBEDDING_SCALE))?;

        let pos = sinusoidal_positions::<T>(frames.max(1), dim);
        let mut pos_rows = Vec::with_capacity(len * dim);
        for &(_, t) in &map {
            pos_rows.extend_from_slice(pos.row(t));
        }
        let pos = g.input(Tensor::from_rows(len, dim, pos_rows));
        let types = g.param(store, net.stream_type);
        let stream_ids: Vec<usize> = map.iter().map(|(s, _)| s.index()).collect();
        let types = g.gather(types, &stream_ids)?;
        let place = g.add(pos, types)?;

        let full = g.add(tokens, place)?;
        let mut x = g.select_rows(full, &visible)?;
        for b in &net.encoder {
            x = b.forward(g, store, x, None)?;
        }
        let x = net.encoder_norm.forward(g, store, x)?;

        let mask_table = g.param(store, net.mask_token);
        let mask_ids: Vec<usize> = masked.iter().map(|&p| map[p].0.index()).collect();
        let mask_rows = g.gather(mask_table, &mask_ids)?;
        let joined = g.concat_rows(&[x, mask_rows])?;
        let mut order = vec![0; len];
        for (k, &p) in visible.iter().chain(&masked).enumerate() {
            order[p] = k;
        }
        let y = g.select_rows(joined, &order)?;
        let mut y = g.add(y, place)?;
        for b in &net.decoder {
            y = b.forward(g, store, y, None)?;
        }
        let y = net.decoder_norm.forward(g, store, y)?;

        let mut out = Vec::new();
        for s in Stream::ALL {
            let rows: Vec<usize> = masked.iter().copied().filter(|&p| map[p].0 == s).collect();
            if rows.is_empty() {
                continue;
            }
            let times: Vec<usize> = rows.iter().map(|&p| map[p].1).collect();
            let h = g.select_rows(y, &rows)?;
            if s == Stream::Codec {
                for (scale, lin) in net.codec_heads.iter().enumerate() {
                    let logits = lin.forward(g, store, h)?;
                    out.push(StreamLogits { stream: s, scale, times: times.clone(), logits });
                }
            } else {
                let logits = net.attr_heads[s.index() - 1].forward(g, store, h)?;
                out.push(StreamLogits { stream: s, scale: 0, times, logits });
            }
        }
        Ok(out)
    }

    /// Masked-position cross-entropy of one sequence: per stream the mean
    /// over its masked positions (and codec scales), summed over streams.
    fn sequence_loss<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        seq: &TokenSequence,
        mask: &MaskSet,
    ) -> Result<Var> {
        let heads = self.forward(g, store, seq, mask)?;
        let m = self.layout.num_scales;
        let mut total: Option<Var> = None;
        for h in heads {
            let a = &seq.attributes;
            let targets: Vec<usize> = h
                .times
                .iter()
                .map(|&t| match h.stream {
                    Stream::Codec => seq.codec[h.scale][t],
                    Stream::Content => a.content[t],
                    Stream::Pitch => a.pitch[t],
                    Stream::Loudness => a.loudness[t],
                    Stream::Speaker => a.speaker,
                } as usize)
                .collect();
            let mut ce = g.cross_entropy(h.logits, &targets, 0.0)?;
            if h.stream == Stream::Codec && m > 1 {
                ce = g.scale(ce, T::of(1.0 / m as f64))?;
            }
            total = Some(match total {
                Some(t) => g.add(t, ce)?,
                None => ce,
            });
        }
        total.ok_or_else(|| Error::invalid("nothing to predict"))
    }

    /// Mean of the per-sequence losses; the graph is returned for backward.
    pub fn batch_loss<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        batch: &[(&TokenSequence, &MaskSet)],
    ) -> Result<(Graph<T>, Var)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut g = Graph::new();
        let mut total: Option<Var> = None;
        for (seq, mask) in batch {
            let l = self.sequence_loss(&mut g, store, seq, mask)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        let loss = g.scale(total.expect("non-empty batch"), T::of(1.0 / batch.len() as f64))?;
        Ok((g, loss))
    }

    /// Batch loss without updating anything.
    pub fn loss(&self, batch: &[(&TokenSequence, &MaskSet)]) -> Result<f64> {
        let (g, loss) = self.batch_loss(&self.store, batch)?;
        Ok(g.value(loss).data()[0] as f64)
    }

    fn predict(&self, seq: &TokenSequence, mask: &MaskSet) -> Result<Vec<(Stream, usize, Vec<usize>, Vec<u32>)>> {
        let mut g = Graph::new();
        let heads = self.forward(&mut g, &self.store, seq, mask)?;
        Ok(heads
            .into_iter()
            .map(|h| {
                let v = g.value(h.logits);
                let best = (0..h.times.len()).map(|r| argmax(v.row(r))).collect();
                (h.stream, h.scale, h.times, best)
            })
            .collect())
    }

    /// Predicts every attribute token from codec tokens (`M × T`).
    pub fn analyze(&self, codec: &[Vec<u32>]) -> Result<AttributeTokenFrames> {
        let seq = TokenSequence::from_codec(codec.to_vec());
        let frames = seq.frames();
        if frames == 0 {
            return Err(Error::invalid("cannot analyze an empty token sequence"));
        }
        let mut out = seq.attributes.clone();
        for (stream, _, times, best) in self.predict(&seq, &MaskSet::analysis(frames))? {
            for (t, b) in times.into_iter().zip(best) {
                match stream {
                    Stream::Content => out.content[t] = b,
                    Stream::Pitch => out.pitch[t] = b,
                    Stream::Loudness => out.loudness[t] = b,
                    Stream::Speaker => out.speaker = b,
                    Stream::Codec => {}
                }
            }
        }
        Ok(out)
    }

    /// Predicts all codec scales in parallel from attribute tokens.
    pub fn generate(&self, attributes: &AttributeTokenFrames) -> Result<Vec<Vec<u32>>> {
        let seq = TokenSequence::from_attributes(attributes.clone(), self.layout.num_scales);
        let frames = seq.frames();
        if frames == 0 {
            return Err(Error::invalid("cannot generate an empty token sequence"));
        }
        let mut codec = seq.codec;
        for (stream, scale, times, best) in self.predict(
            &TokenSequence { codec: codec.clone(), attributes: attributes.clone() },
            &MaskSet::generation(frames),
        )? {
            if stream == Stream::Codec {
                for (t, b) in times.into_iter().zip(best) {
                    codec[scale][t] = b;
                }
            }
        }
        Ok(codec)
    }

    /// Analysis, speaker swap, then generation.
    pub fn convert_voice(&self, codec: &[Vec<u32>], target_speaker: u32) -> Result<Vec<Vec<u32>>> {
        if target_speaker as usize >= self.layout.speaker_vocab {
            return Err(Error::invalid(format!(
                "unknown speaker token {target_speaker} (vocabulary {})",
                self.layout.speaker_vocab
            )));
        }
        let mut attrs = self.analyze(codec)?;
        attrs.speaker = target_speaker;
        self.generate(&attrs)
    }

    /// JSON recording the layout, binning, speaker vocabulary and config.
    pub fn sidecar_json(&self, binning: &BinningConfig, speakers: &SpeakerTable) -> Result<String> {
        let sidecar = Sidecar {
            layout: self.layout.clone(),
            binning: binning.clone(),
            speakers: speakers.clone(),
            config: self.config.clone(),
            parameters: self.num_parameters(),
        };
        Ok(serde_json::to_string_pretty(&sidecar)? + "\n")
    }

    /// Writes the `ANC1` parameters to `path` and the sidecar to
    /// `path` + `.json`.
    pub fn save(&self, path: &Path, binning: &BinningConfig, speakers: &SpeakerTable) -> Result<()> {
        self.store.save(path)?;
        std::fs::write(sidecar_path(path), self.sidecar_json(binning, speakers)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, BinningConfig, SpeakerTable)> {
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let mut model = AncogenModel::new(sidecar.layout, sidecar.config)?;
        model.store.load_values_from(&ParamStore::load(path)?)?;
        Ok((model, sidecar.binning, sidecar.speakers))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

fn argmax<T: Scalar>(row: &[T]) -> u32 {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best as u32
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Training-batch loss of every step.
    pub losses: Vec<f64>,
}

/// Adam on minibatches drawn (with a fresh training mask per sequence) from
/// a seeded stream; `on_step` sees the step index, its loss and the
/// updated model.
pub fn train(
    model: &mut AncogenModel,
    data: &[TokenSequence],
    steps: usize,
    mut on_step: impl FnMut(usize, f64, &AncogenModel),
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::invalid("no training sequences"));
    }
    for (i, s) in data.iter().enumerate() {
        s.check(&model.layout).map_err(|e| Error::invalid(format!("training sequence {i}: {e}")))?;
    }
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c);
    let mut adam = Adam::new(&model.store, cfg.learning_rate);
    let mut report = TrainReport::default();
    for step in 0..steps {
        let picks: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..data.len())).collect();
        let masks = picks
            .iter()
            .map(|&i| make_training_mask(data[i].frames(), &cfg.mask_weights, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let batch: Vec<(&TokenSequence, &MaskSet)> = picks.iter().map(|&i| &data[i]).zip(&masks).collect();
        let (g, loss) = model.batch_loss(&model.store, &batch)?;
        let value = g.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::numeric(format!("training loss is not finite at step {step}")));
        }
        let grads = g.backward(loss)?;
        adam.step(&mut model.store, &grads)?;
        report.losses.push(value);
        on_step(step, value, model);
    }
    Ok(report)
}
