//! Mutual information between codec tokens and speech attributes.
//!
//! Two estimators: the discrete plug-in estimator over empirical
//! frequencies, and CLUB, which trains a variational conditional q(y|x)
//! and reports the mean log-ratio between joint and shuffled pairs.
//!
//! Codec tokens are discrete, so q(y|x) only has to be evaluated once per
//! distinct token. The CLUB marginal term over all ordered pairs (i, j),
//! i != j, is then computed exactly from per-token sufficient statistics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AlignedUtterance, SpeakerTable, TokenCorpus};
use crate::nn::{Adam, Graph, Linear, ParamId, ParamStore, Var};
use crate::par::{self, Parallelism};
use crate::{Error, Result};

/// Plug-in MI in nats; zero-count cells contribute nothing.
pub fn plugin_mi(x: &[u32], y: &[u32]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("plugin_mi: {} x samples vs {} y samples", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::invalid("plugin_mi: empty input"));
    }
    let n = x.len() as f64;
    let cx = counts(x);
    let cy = counts(y);
    let mut pairs: Vec<(u32, u32)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_unstable();
    let mut mi = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j] == pairs[i] {
            j += 1;
        }
        let (a, b) = pairs[i];
        let cab = (j - i) as f64;
        let ratio = (cab * n) / (cx[&a] as f64 * cy[&b] as f64);
        mi += cab / n * ratio.ln();
        i = j;
    }
    Ok(mi.max(0.0))
}

/// Empirical entropy in nats.
pub fn entropy(v: &[u32]) -> f64 {
    let n = v.len() as f64;
    counts(v).values().map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum()
}

fn counts(v: &[u32]) -> std::collections::BTreeMap<u32, u64> {
    let mut m = std::collections::BTreeMap::new();
    for &a in v {
        *m.entry(a).or_insert(0) += 1;
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Discrete { values: Vec<u32>, cardinality: usize },
    Continuous(Vec<f64>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Discrete { values, .. } => values.len(),
            Target::Continuous(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSamples {
    pub x: Vec<u32>,
    pub x_cardinality: usize,
    pub y: Target,
}

impl PairedSamples {
    pub fn discrete(x: Vec<u32>, x_cardinality: usize, y: Vec<u32>, y_cardinality: usize) -> Self {
        PairedSamples { x, x_cardinality, y: Target::Discrete { values: y, cardinality: y_cardinality } }
    }

    pub fn continuous(x: Vec<u32>, x_cardinality: usize, y: Vec<f64>) -> Self {
        PairedSamples { x, x_cardinality, y: Target::Continuous(y) }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(Error::invalid(format!("{} x samples vs {} y samples", self.x.len(), self.y.len())));
        }
        if self.x.is_empty() {
            return Err(Error::invalid("no samples"));
        }
        if let Some(bad) = self.x.iter().find(|&&a| a as usize >= self.x_cardinality) {
            return Err(Error::invalid(format!("x token {bad} outside cardinality {}", self.x_cardinality)));
        }
        match &self.y {
            Target::Discrete { values, cardinality } => {
                if let Some(bad) = values.iter().find(|&&b| b as usize >= *cardinality) {
                    return Err(Error::invalid(format!("y token {bad} outside cardinality {cardinality}")));
                }
            }
            Target::Continuous(v) => {
                if v.iter().any(|a| !a.is_finite()) {
                    return Err(Error::invalid("continuous target contains non-finite values"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClubConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for ClubConfig {
    fn default() -> Self {
        ClubConfig {
            embed_dim: 64,
            hidden: 128,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 256,
            label_smoothing: 1e-3,
            seed: 42,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Categorical { cardinality: usize },
    /// Mean and log-variance of a standardized scalar.
    Gaussian,
}

/// Variational network q(y|x): token embedding, one hidden ReLU layer and
/// a categorical or Gaussian head. The categorical head starts at zero.
#[derive(Clone, Debug)]
pub struct ClubEstimator {
    pub config: ClubConfig,
    pub head: Head,
    pub x_cardinality: usize,
    pub store: ParamStore<f32>,
    embedding: ParamId,
    hidden: Linear,
    out: Linear,
    y_shift: f64,
    y_scale: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl ClubEstimator {
    pub fn new(x_cardinality: usize, head: Head, config: &ClubConfig) -> Result<Self> {
        if x_cardinality == 0 || config.embed_dim == 0 || config.hidden == 0 {
            return Err(Error::invalid("CLUB network dimensions must be positive"));
        }
        if let Head::Categorical { cardinality: 0 } = head {
            return Err(Error::invalid("categorical head needs at least one class"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let embedding = store.add_normal("club.embedding", vec![x_cardinality, config.embed_dim], 0.02, &mut rng);
        let hidden = Linear::new(&mut store, "club.hidden", config.embed_dim, config.hidden, &mut rng);
        let out = match head {
            Head::Categorical { cardinality } => Linear::zeros(&mut store, "club.head", config.hidden, cardinality),
            Head::Gaussian => Linear::new(&mut store, "club.head", config.hidden, 2, &mut rng),
        };
        Ok(ClubEstimator {
            config: config.clone(),
            head,
            x_cardinality,
            store,
            embedding,
            hidden,
            out,
            y_shift: 0.0,
            y_scale: 1.0,
            epoch_losses: Vec::new(),
        })
    }

    fn forward(&self, g: &mut Graph<f32>, xs: &[usize]) -> Result<Var> {
        let table = g.param(&self.store, self.embedding);
        let e = g.gather(table, xs)?;
        let h = self.hidden.forward(g, &self.store, e)?;
        let h = g.relu(h)?;
        self.out.forward(g, &self.store, h)
    }

    /// Head outputs for every x token, `[x_cardinality, width]` row-major.
    fn head_table(&self) -> Result<(Vec<f64>, usize)> {
        let mut g = Graph::new();
        let ids: Vec<usize> = (0..self.x_cardinality).collect();
        let out = self.forward(&mut g, &ids)?;
        let t = g.value(out);
        let width = t.shape()[1];
        Ok((t.data().iter().map(|&v| v as f64).collect(), width))
    }

    /// `ln q(y|x)` for every `(x, y)`, `[x_cardinality, cardinality]`.
    pub fn log_q_table(&self) -> Result<Vec<f64>> {
        let Head::Categorical { cardinality } = self.head else {
            return Err(Error::invalid("log-probability table needs a categorical head"));
        };
        let (logits, _) = self.head_table()?;
        let mut out = Vec::with_capacity(logits.len());
        for row in logits.chunks(cardinality) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|&v| v - lse));
        }
        Ok(out)
    }

    /// `(mean, clamped log-variance)` per x token, in standardized units.
    fn gaussian_table(&self) -> Result<Vec<(f64, f64)>> {
        let (p, _) = self.head_table()?;
        Ok(p.chunks(2).map(|r| (r[0], r[1].clamp(-10.0, 10.0))).collect())
    }

    fn check_samples(&self, s: &PairedSamples) -> Result<()> {
        s.validate()?;
        if s.x_cardinality != self.x_cardinality {
            return Err(Error::invalid(format!(
                "estimator expects x cardinality {}, samples have {}",
                self.x_cardinality, s.x_cardinality
            )));
        }
        match (&self.head, &s.y) {
            (Head::Categorical { cardinality }, Target::Discrete { cardinality: c, .. }) if cardinality == c => Ok(()),
            (Head::Gaussian, Target::Continuous(_)) => Ok(()),
            _ => Err(Error::invalid("sample type does not match the estimator head")),
        }
    }

    /// Mean negative log-likelihood of the joint pairs, in nats of the
    /// original units.
    pub fn mean_nll(&self, s: &PairedSamples) -> Result<f64> {
        self.check_samples(s)?;
        let n = s.len() as f64;
        match &s.y {
            Target::Discrete { values, cardinality } => {
                let lq = self.log_q_table()?;
                Ok(-s.x.iter().zip(values).map(|(&a, &b)| lq[a as usize * cardinality + b as usize]).sum::<f64>() / n)
            }
            Target::Continuous(values) => {
                let table = self.gaussian_table()?;
                let total: f64 = s
                    .x
                    .iter()
                    .zip(values)
                    .map(|(&a, &y)| {
                        let (mu, lv) = table[a as usize];
                        let z = (y - self.y_shift) / self.y_scale;
                        0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5 * lv + 0.5 * (z - mu).powi(2) * (-lv).exp()
                    })
                    .sum();
                Ok(total / n + self.y_scale.ln())
            }
        }
    }
}

/// Fits q(y|x) by minibatch Adam on the joint pairs.
pub fn club_train(s: &PairedSamples, config: &ClubConfig) -> Result<ClubEstimator> {
    s.validate()?;
    if s.len() < 32 {
        return Err(Error::invalid(format!("CLUB needs at least 32 samples, got {}", s.len())));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let head = match &s.y {
        Target::Discrete { cardinality, .. } => Head::Categorical { cardinality: *cardinality },
        Target::Continuous(_) => Head::Gaussian,
    };
    let mut est = ClubEstimator::new(s.x_cardinality, head, config)?;
    let z: Vec<f32> = match &s.y {
        Target::Continuous(v) => {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            est.y_shift = mean;
            est.y_scale = if sd > 1e-12 { sd } else { 1.0 };
            v.iter().map(|a| ((a - est.y_shift) / est.y_scale) as f32).collect()
        }
        Target::Discrete { .. } => Vec::new(),
    };
    let mut adam = Adam::new(&est.store, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..s.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut uniq: Vec<usize> = batch.iter().map(|&i| s.x[i] as usize).collect();
            uniq.sort_unstable();
            uniq.dedup();
            let rows: Vec<usize> = batch
                .iter()
                .map(|&i| uniq.binary_search(&(s.x[i] as usize)).unwrap_or(0))
                .collect();
            let mut g = Graph::new();
            let out = est.forward(&mut g, &uniq)?;
            let per = g.select_rows(out, &rows)?;
            let loss = match &s.y {
                Target::Discrete { values, .. } => {
                    let t: Vec<usize> = batch.iter().map(|&i| values[i] as usize).collect();
                    g.cross_entropy(per, &t, config.label_smoothing)?
                }
                Target::Continuous(_) => {
                    let t: Vec<f32> = batch.iter().map(|&i| z[i]).collect();
                    g.gaussian_nll(per, &t)?
                }
            };
            let value = g.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::numeric(format!("CLUB loss became {value} in epoch {epoch}")));
            }
            total += value * batch.len() as f64;
            let grads = g.backward(loss)?;
            adam.step(&mut est.store, &grads)
                .map_err(|e| Error::numeric(format!("epoch {epoch}: {e}")))?;
        }
        est.epoch_losses.push(total / s.len() as f64);
    }
    Ok(est)
}

/// CLUB estimate in nats: mean of `ln q(y_i|x_i)` minus the mean of
/// `ln q(y_j|x_i)` over all ordered pairs `i != j`.
///
/// Log-likelihoods are taken relative to token 0's (the difference
/// telescopes out of the estimate), so a head that ignores x yields
/// exactly 0.
pub fn club_estimate(e: &ClubEstimator, s: &PairedSamples) -> Result<f64> {
    e.check_samples(s)?;
    let n = s.len();
    if n < 2 {
        return Err(Error::invalid("CLUB needs at least 2 samples"));
    }
    let nf = n as f64;
    match &s.y {
        Target::Discrete { values, cardinality } => {
            let k = *cardinality;
            let lq = e.log_q_table()?;
            let mut joint = vec![0i64; e.x_cardinality * k];
            let mut cx = vec![0i64; e.x_cardinality];
            let mut cy = vec![0i64; k];
            for (&a, &b) in s.x.iter().zip(values) {
                joint[a as usize * k + b as usize] += 1;
                cx[a as usize] += 1;
                cy[b as usize] += 1;
            }
            let mut total = 0.0;
            for a in 0..e.x_cardinality {
                if cx[a] == 0 {
                    continue;
                }
                for b in 0..k {
                    let w = n as i64 * joint[a * k + b] - cx[a] * cy[b];
                    if w != 0 {
                        total += w as f64 * (lq[a * k + b] - lq[b]);
                    }
                }
            }
            Ok(total / (nf * (nf - 1.0)))
        }
        Target::Continuous(values) => {
            let table = e.gaussian_table()?;
            // ln q(z|x) up to a constant is c0 + c1 z + c2 z^2
            let coef = |x: usize| {
                let (mu, lv) = table[x];
                let h = 0.5 * (-lv).exp();
                (-0.5 * lv - mu * mu * h, 2.0 * mu * h, -h)
            };
            let base = coef(0);
            let mut stats = vec![(0.0f64, 0.0f64, 0.0f64); e.x_cardinality];
            let (mut s1, mut s2) = (0.0, 0.0);
            for (&a, &y) in s.x.iter().zip(values) {
                let z = (y - e.y_shift) / e.y_scale;
                let st = &mut stats[a as usize];
                st.0 += 1.0;
                st.1 += z;
                st.2 += z * z;
                s1 += z;
                s2 += z * z;
            }
            let (mut joint, mut all) = (0.0, 0.0);
            for (x, &(c, sz, szz)) in stats.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let k = coef(x);
                let (d0, d1, d2) = (k.0 - base.0, k.1 - base.1, k.2 - base.2);
                joint += d0 * c + d1 * sz + d2 * szz;
                all += c * (d0 * nf + d1 * s1 + d2 * s2);
            }
            Ok(joint / nf - (all - joint) / (nf * (nf - 1.0)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiAttribute {
    Content,
    Pitch,
    Identity,
}

impl MiAttribute {
    pub const ALL: [MiAttribute; 3] = [MiAttribute::Content, MiAttribute::Pitch, MiAttribute::Identity];

    pub fn name(self) -> &'static str {
        match self {
            MiAttribute::Content => "content",
            MiAttribute::Pitch => "pitch",
            MiAttribute::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown attribute {s} (expected content, pitch or identity)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Club,
    Plugin,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Club => "club",
            Estimator::Plugin => "plugin",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiRow {
    pub scale: usize,
    pub attribute: MiAttribute,
    pub estimator: Estimator,
    pub nats: f64,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiReportConfig {
    pub club: ClubConfig,
    /// Frames are subsampled (seeded) to at most this many per cell.
    pub max_samples: usize,
    pub attributes: Vec<MiAttribute>,
}

impl Default for MiReportConfig {
    fn default() -> Self {
        MiReportConfig { club: ClubConfig::default(), max_samples: 10_000, attributes: MiAttribute::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    pub rows: Vec<MiRow>,
}

impl MiReport {
    pub fn get(&self, scale: usize, attribute: MiAttribute, estimator: Estimator) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scale == scale && r.attribute == attribute && r.estimator == estimator)
            .map(|r| r.nats)
    }

    /// Scale with the largest estimate for `attribute`, and that estimate.
    pub fn dominant(&self, attribute: MiAttribute, estimator: Estimator) -> Option<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.attribute == attribute && r.estimator == estimator)
            .fold(None, |best: Option<(usize, f64)>, r| match best {
                Some((_, v)) if v >= r.nats => best,
                _ => Some((r.scale, r.nats)),
            })
    }

    /// `scale,attribute,estimator,nats,n_samples,seed`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scale,attribute,estimator,nats,n_samples,seed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.scale,
                r.attribute.name(),
                r.estimator.name(),
                r.nats,
                r.n_samples,
                r.seed
            ));
        }
        out
    }
}

/// Minimum number of aligned frames [`mi_report`] accepts.
pub const MIN_REPORT_FRAMES: usize = 1000;

/// One frame-level sample set per (scale, attribute): content tokens,
/// speaker tokens, or ln(pitch) over voiced frames.
pub fn cell_samples(
    frames: &[AlignedUtterance],
    speakers: &SpeakerTable,
    scale: usize,
    attribute: MiAttribute,
    max_samples: usize,
    seed: u64,
) -> Result<PairedSamples> {
    let first = frames.first().ok_or_else(|| Error::invalid("no aligned frames"))?;
    let x_card = first.codec_cardinality;
    let mut idx: Vec<(usize, usize)> = frames
        .iter()
        .enumerate()
        .flat_map(|(u, a)| (0..a.len()).map(move |t| (u, t)))
        .filter(|&(u, t)| attribute != MiAttribute::Pitch || frames[u].pitch_hz[t] > 0.0)
        .collect();
    if idx.len() > max_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        idx.truncate(max_samples);
        idx.sort_unstable();
    }
    let x: Vec<u32> = idx.iter().map(|&(u, t)| frames[u].codec_tokens[scale][t]).collect();
    Ok(match attribute {
        MiAttribute::Content => {
            let y = idx.iter().map(|&(u, t)| frames[u].content[t]).collect();
            PairedSamples::discrete(x, x_card, y, first.content_cardinality)
        }
        MiAttribute::Identity => {
            let y = idx
                .iter()
                .map(|&(u, _)| {
                    speakers.token(&frames[u].speaker_id).ok_or_else(|| {
                        Error::invalid(format!("unknown speaker {}", frames[u].speaker_id))
                    })
                })
                .collect::<Result<Vec<u32>>>()?;
            PairedSamples::discrete(x, x_card, y, speakers.len())
        }
        MiAttribute::Pitch => {
            let y = idx.iter().map(|&(u, t)| frames[u].pitch_hz[t].ln()).collect();
            PairedSamples::continuous(x, x_card, y)
        }
    })
}

/// CLUB (every cell) and plug-in (discrete attributes) estimates for every
/// scale. Cells are independent and may run in parallel.
pub fn mi_report(corpus: &TokenCorpus, cfg: &MiReportConfig, par: Parallelism) -> Result<MiReport> {
    let frames = corpus.align_all(par)?;
    let total: usize = frames.iter().map(|u| u.len()).sum();
    if total < MIN_REPORT_FRAMES {
        return Err(Error::invalid(format!(
            "MI report needs at least {MIN_REPORT_FRAMES} aligned frames, corpus has {total}"
        )));
    }
    let m = corpus.num_scales().unwrap_or(0);
    let speakers = SpeakerTable::from_corpus(corpus);
    let cells: Vec<(usize, MiAttribute)> =
        (0..m).flat_map(|s| cfg.attributes.iter().map(move |&a| (s, a))).collect();
    let seed = cfg.club.seed;
    let results = par::map_slice(par, &cells, |&(scale, attribute)| -> Result<Vec<MiRow>> {
        let samples = cell_samples(&frames, &speakers, scale, attribute, cfg.max_samples, seed)?;
        let n = samples.len();
        let est = club_train(&samples, &cfg.club)?;
        let club = club_estimate(&est, &samples)?;
        log::debug!("scale {scale} {}: CLUB {club:.4} nats over {n} samples", attribute.name());
        let mut rows = vec![MiRow { scale, attribute, estimator: Estimator::Club, nats: club, n_samples: n, seed }];
        if let Target::Discrete { values, .. } = &samples.y {
            let nats = plugin_mi(&samples.x, values)?;
            rows.push(MiRow { scale, attribute, estimator: Estimator::Plugin, nats, n_samples: n, seed });
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(MiReport { rows })
}

/// Untrained categorical estimator whose head weights are all zero, so
/// q(y|x) is uniform and independent of x.
pub fn uniform_estimator(x_cardinality: usize, y_cardinality: usize, config: &ClubConfig) -> Result<ClubEstimator> {
    ClubEstimator::new(x_cardinality, Head::Categorical { cardinality: y_cardinality }, config)
}
