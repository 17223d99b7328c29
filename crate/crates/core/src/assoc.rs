//! Co-occurrence statistics between content units and codec tokens of one
//! RVQ scale, and the analyses built on them: per-token association
//! rankings, top-k usage curves, predominant mappings, and pitch statistics
//! of the codec tokens that co-occur with a given content unit.

use std::collections::BTreeMap;

use crate::corpus::{AlignedUtterance, TokenCorpus};
use crate::par::{self, Parallelism};
use crate::{Error, Result};

/// `n_attr x n_codec` frame counts for one scale, row-major by attribute token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CooccurrenceMatrix {
    pub scale: usize,
    pub n_attr: usize,
    pub n_codec: usize,
    counts: Vec<u64>,
    total: u64,
}

impl CooccurrenceMatrix {
    pub fn zeros(scale: usize, n_attr: usize, n_codec: usize) -> Self {
        CooccurrenceMatrix { scale, n_attr, n_codec, counts: vec![0; n_attr * n_codec], total: 0 }
    }

    pub fn get(&self, attr: usize, codec: usize) -> u64 {
        self.counts[attr * self.n_codec + codec]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn column_sum(&self, codec: usize) -> u64 {
        (0..self.n_attr).map(|a| self.get(a, codec)).sum()
    }

    fn add_frames(&mut self, content: &[u32], codec: &[u32]) {
        for (&a, &c) in content.iter().zip(codec) {
            self.counts[a as usize * self.n_codec + c as usize] += 1;
        }
        self.total += content.len().min(codec.len()) as u64;
    }

    /// Elementwise sum; both matrices must describe the same scale and shape.
    pub fn merge(&mut self, other: &CooccurrenceMatrix) -> Result<()> {
        if (self.scale, self.n_attr, self.n_codec) != (other.scale, other.n_attr, other.n_codec) {
            return Err(Error::invalid("cannot merge co-occurrence matrices of different shapes"));
        }
        for (d, s) in self.counts.iter_mut().zip(&other.counts) {
            *d += s;
        }
        self.total += other.total;
        Ok(())
    }

    /// `attr_token,codec_token,count` for every non-zero cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("attr_token,codec_token,count\n");
        for a in 0..self.n_attr {
            for c in 0..self.n_codec {
                let v = self.get(a, c);
                if v > 0 {
                    out.push_str(&format!("{a},{c},{v}\n"));
                }
            }
        }
        out
    }
}

/// Counts over already aligned utterances. Work is split into contiguous
/// chunks whose integer partial sums are added in chunk order.
pub fn accumulate_aligned(
    frames: &[AlignedUtterance],
    scale: usize,
    n_attr: usize,
    n_codec: usize,
    par: Parallelism,
) -> Result<CooccurrenceMatrix> {
    for u in frames {
        if scale >= u.num_scales() {
            return Err(Error::invalid(format!(
                "scale out of range: {scale} (utterance {} has {} scales)",
                u.id,
                u.num_scales()
            )));
        }
        if u.content.iter().any(|&a| a as usize >= n_attr)
            || u.codec_tokens[scale].iter().any(|&c| c as usize >= n_codec)
        {
            return Err(Error::invalid(format!("utterance {} has tokens outside the matrix", u.id)));
        }
    }
    // each chunk pays for a full matrix, so it must count more frames than that
    let total: usize = frames.iter().map(|u| u.len()).sum();
    let cells = (n_attr * n_codec).max(1);
    let chunks = par::workers(par).min(total / cells).min(frames.len()).max(1);
    let per = frames.len().div_ceil(chunks.max(1)).max(1);
    let partials = par::map_indexed(par, chunks, |ci| {
        let mut m = CooccurrenceMatrix::zeros(scale, n_attr, n_codec);
        for u in frames.iter().skip(ci * per).take(per) {
            m.add_frames(&u.content, &u.codec_tokens[scale]);
        }
        m
    });
    let mut total = CooccurrenceMatrix::zeros(scale, n_attr, n_codec);
    for p in &partials {
        total.merge(p)?;
    }
    Ok(total)
}

/// Aligns each utterance to its codec rate and counts content/codec pairs
/// at `scale`. An empty corpus gives an empty (0 x 0) matrix.
pub fn accumulate_cooccurrence(
    corpus: &TokenCorpus,
    scale: usize,
    par: Parallelism,
) -> Result<CooccurrenceMatrix> {
    let (Some(m), Some(n_codec), Some(n_attr)) =
        (corpus.num_scales(), corpus.codec_cardinality(), corpus.content_cardinality())
    else {
        return Ok(CooccurrenceMatrix::zeros(scale, 0, 0));
    };
    if scale >= m {
        return Err(Error::invalid(format!("scale out of range: {scale} (corpus has {m} scales)")));
    }
    let frames = corpus.align_all(par)?;
    accumulate_aligned(&frames, scale, n_attr, n_codec, par)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnRanking {
    pub codec_token: u32,
    /// Frames carrying this codec token; 0 marks an unused token.
    pub support: u64,
    /// `(attr_token, share)` for attribute tokens seen with this codec token,
    /// by decreasing count, ties to the lower attribute index.
    pub ranked: Vec<(u32, f64)>,
}

impl ColumnRanking {
    pub fn is_used(&self) -> bool {
        self.support > 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssociationRanking {
    pub scale: usize,
    pub n_attr: usize,
    pub columns: Vec<ColumnRanking>,
}

impl AssociationRanking {
    pub fn used(&self) -> impl Iterator<Item = &ColumnRanking> {
        self.columns.iter().filter(|c| c.is_used())
    }
}

pub fn rank_associations(m: &CooccurrenceMatrix) -> AssociationRanking {
    let columns = (0..m.n_codec)
        .map(|c| {
            let support = m.column_sum(c);
            let mut entries: Vec<(u32, u64)> = (0..m.n_attr)
                .filter_map(|a| {
                    let v = m.get(a, c);
                    (v > 0).then_some((a as u32, v))
                })
                .collect();
            entries.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
            let ranked =
                entries.into_iter().map(|(a, v)| (a, v as f64 / support as f64)).collect();
            ColumnRanking { codec_token: c as u32, support, ranked }
        })
        .collect();
    AssociationRanking { scale: m.scale, n_attr: m.n_attr, columns }
}

/// How codec tokens are averaged in [`topk_usage_curve`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Weighting {
    /// Every used codec token counts once.
    #[default]
    Uniform,
    /// Tokens weighted by their frame support.
    Frequency,
}

/// Mean cumulative share (percent) of the `k` most associated attribute
/// tokens, for `k = 1..=k_max`. Unused codec tokens are excluded.
pub fn topk_usage_curve(r: &AssociationRanking, k_max: usize, weighting: Weighting) -> Result<Vec<f64>> {
    if k_max == 0 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    let used: Vec<&ColumnRanking> = r.used().collect();
    if used.is_empty() {
        return Err(Error::invalid(format!("scale {} has no used codec tokens", r.scale)));
    }
    let weight = |c: &ColumnRanking| match weighting {
        Weighting::Uniform => 1.0,
        Weighting::Frequency => c.support as f64,
    };
    let norm: f64 = used.iter().map(|c| weight(c)).sum();
    let mut curve = vec![0.0; k_max];
    for c in &used {
        let w = weight(c);
        let mut cum = 0.0;
        for (k, slot) in curve.iter_mut().enumerate() {
            if let Some(&(_, s)) = c.ranked.get(k) {
                cum += s;
            }
            *slot += w * cum.min(1.0);
        }
    }
    Ok(curve.into_iter().map(|v| v / norm * 100.0).collect())
}

/// `k,mean_share_percent`
pub fn topk_csv(curve: &[f64]) -> String {
    let mut out = String::from("k,mean_share_percent\n");
    for (k, v) in curve.iter().enumerate() {
        out.push_str(&format!("{},{}\n", k + 1, v));
    }
    out
}

/// Rank-1 attribute token of every used codec token.
pub fn predominant_mapping(r: &AssociationRanking) -> BTreeMap<u32, u32> {
    r.used()
        .filter_map(|c| c.ranked.first().map(|&(a, _)| (c.codec_token, a)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PitchStat {
    pub codec_token: u32,
    /// Matching frames, voiced or not.
    pub count: u64,
    pub voiced: u64,
    /// Over voiced frames; `None` when every matching frame is unvoiced.
    pub mean_pitch_hz: Option<f64>,
    /// Population standard deviation over voiced frames.
    pub std_pitch_hz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PitchConditionedSet {
    pub filter_token: u32,
    pub scale: usize,
    pub entries: Vec<PitchStat>,
}

impl PitchConditionedSet {
    /// `codec_token,count,mean_pitch_hz,std_pitch_hz`; undefined statistics
    /// are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("codec_token,count,mean_pitch_hz,std_pitch_hz\n");
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.codec_token,
                e.count,
                f(e.mean_pitch_hz),
                f(e.std_pitch_hz)
            ));
        }
        out
    }

    pub fn get(&self, codec_token: u32) -> Option<&PitchStat> {
        self.entries.iter().find(|e| e.codec_token == codec_token)
    }
}

/// Pitch statistics of the codec tokens (at `scale`) on frames whose content
/// token is `attr_token`.
pub fn filter_by_content(
    frames: &[AlignedUtterance],
    scale: usize,
    attr_token: u32,
) -> Result<PitchConditionedSet> {
    if let Some(u) = frames.first() {
        if attr_token as usize >= u.content_cardinality {
            return Err(Error::invalid(format!(
                "content token {attr_token} outside vocabulary of {}",
                u.content_cardinality
            )));
        }
    }
    let mut groups: BTreeMap<u32, (u64, Vec<f64>)> = BTreeMap::new();
    for u in frames {
        if scale >= u.num_scales() {
            return Err(Error::invalid(format!("scale out of range: {scale}")));
        }
        for ((&a, &c), &p) in u.content.iter().zip(&u.codec_tokens[scale]).zip(&u.pitch_hz) {
            if a == attr_token {
                let e = groups.entry(c).or_default();
                e.0 += 1;
                if p > 0.0 {
                    e.1.push(p);
                }
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::invalid(format!("no frame carries content token {attr_token}")));
    }
    let entries = groups
        .into_iter()
        .map(|(c, (count, voiced))| {
            let (mean, std) = if voiced.is_empty() {
                (None, None)
            } else {
                let n = voiced.len() as f64;
                let mean = voiced.iter().sum::<f64>() / n;
                let var = voiced.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
                (Some(mean), Some(var.sqrt()))
            };
            PitchStat {
                codec_token: c,
                count,
                voiced: voiced.len() as u64,
                mean_pitch_hz: mean,
                std_pitch_hz: std,
            }
        })
        .collect();
    Ok(PitchConditionedSet { filter_token: attr_token, scale, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AlignedUtterance;
    use proptest::prelude::*;

    pub(crate) fn aligned(id: &str, content: Vec<u32>, scales: Vec<Vec<u32>>, pitch: Vec<f64>) -> AlignedUtterance {
        let t = content.len();
        AlignedUtterance {
            id: id.into(),
            frame_rate_hz: 50.0,
            codec_name: "toy".into(),
            codec_cardinality: 4,
            content_cardinality: 4,
            codec_tokens: scales,
            content,
            pitch_hz: pitch,
            loudness_db: vec![-20.0; t],
            speaker_id: "s".into(),
            speaker_embedding: None,
        }
    }

    fn matrix_from_columns(cols: &[(usize, Vec<(usize, u64)>)], n_attr: usize, n_codec: usize) -> CooccurrenceMatrix {
        let mut m = CooccurrenceMatrix::zeros(0, n_attr, n_codec);
        for (c, entries) in cols {
            for &(a, v) in entries {
                m.counts[a * n_codec + c] += v;
                m.total += v;
            }
        }
        m
    }

    #[test]
    fn constant_streams_fill_one_cell() {
        let u = AlignedUtterance { content_cardinality: 10, codec_cardinality: 8, ..aligned("a", vec![7; 10], vec![vec![5; 10]], vec![0.0; 10]) };
        let m = accumulate_aligned(&[u], 0, 10, 8, Parallelism::Sequential).unwrap();
        assert_eq!(m.get(7, 5), 10);
        assert_eq!(m.total(), 10);
        assert_eq!(m.counts.iter().sum::<u64>(), 10);
    }

    #[test]
    fn empty_inputs_give_zero_matrices() {
        let m = accumulate_aligned(&[], 0, 4, 4, Parallelism::Parallel).unwrap();
        assert_eq!(m.total(), 0);
        assert!(m.counts.iter().all(|&c| c == 0));
        let m = accumulate_cooccurrence(&TokenCorpus::default(), 0, Parallelism::Sequential).unwrap();
        assert_eq!(m.total(), 0);
    }

    #[test]
    fn scale_out_of_range_is_an_error() {
        let u = aligned("a", vec![0; 3], vec![vec![0; 3]], vec![0.0; 3]);
        let err = accumulate_aligned(&[u], 1, 4, 4, Parallelism::Sequential).unwrap_err();
        assert!(err.to_string().contains("scale out of range"));
    }

    #[test]
    fn single_association_column() {
        let m = matrix_from_columns(&[(0, vec![(1, 10)])], 4, 2);
        let r = rank_associations(&m);
        assert_eq!(r.columns[0].ranked, vec![(1, 1.0)]);
        assert!(!r.columns[1].is_used());
        assert_eq!(predominant_mapping(&r), BTreeMap::from([(0, 1)]));
    }

    #[test]
    fn shares_follow_counts() {
        let m = matrix_from_columns(&[(0, vec![(2, 5), (7, 3), (9, 2)])], 10, 1);
        let r = rank_associations(&m);
        let want = [(2u32, 0.5), (7, 0.3), (9, 0.2)];
        for (got, want) in r.columns[0].ranked.iter().zip(want) {
            assert_eq!(got.0, want.0);
            assert!((got.1 - want.1).abs() < 1e-15);
        }
    }

    #[test]
    fn ties_go_to_the_lower_attribute() {
        let m = matrix_from_columns(&[(0, vec![(9, 4), (3, 4)])], 10, 1);
        let r = rank_associations(&m);
        assert_eq!(r.columns[0].ranked[0].0, 3);
        assert_eq!(predominant_mapping(&r)[&0], 3);
    }

    #[test]
    fn deterministic_mapping_curve_is_flat_at_100() {
        let m = matrix_from_columns(&[(0, vec![(1, 5)]), (1, vec![(3, 2)]), (2, vec![(0, 9)])], 4, 3);
        let curve = topk_usage_curve(&rank_associations(&m), 4, Weighting::Uniform).unwrap();
        assert_eq!(curve, vec![100.0; 4]);
    }

    #[test]
    fn uniform_columns_give_k_percent() {
        let cols: Vec<(usize, Vec<(usize, u64)>)> =
            (0..3).map(|c| (c, (0..100).map(|a| (a, 2)).collect())).collect();
        let m = matrix_from_columns(&cols, 100, 3);
        let curve = topk_usage_curve(&rank_associations(&m), 100, Weighting::Uniform).unwrap();
        for (k, v) in curve.iter().enumerate() {
            assert!((v - (k + 1) as f64).abs() < 1e-9, "k={} got {v}", k + 1);
        }
    }

    #[test]
    fn weighting_changes_the_average() {
        let m = matrix_from_columns(&[(0, vec![(0, 90)]), (1, vec![(0, 5), (1, 5)])], 2, 2);
        let r = rank_associations(&m);
        let u = topk_usage_curve(&r, 1, Weighting::Uniform).unwrap()[0];
        let f = topk_usage_curve(&r, 1, Weighting::Frequency).unwrap()[0];
        assert!((u - 75.0).abs() < 1e-12);
        assert!((f - (90.0 * 100.0 + 10.0 * 50.0) / 100.0).abs() < 1e-12);
    }

    #[test]
    fn topk_needs_a_used_token_and_positive_k() {
        let m = CooccurrenceMatrix::zeros(0, 3, 3);
        assert!(topk_usage_curve(&rank_associations(&m), 2, Weighting::Uniform).is_err());
        let m = matrix_from_columns(&[(0, vec![(1, 1)])], 3, 3);
        assert!(topk_usage_curve(&rank_associations(&m), 0, Weighting::Uniform).is_err());
    }

    #[test]
    fn pitch_statistics() {
        let u = aligned(
            "a",
            vec![2, 2, 2, 1, 2],
            vec![vec![0, 0, 1, 0, 1]],
            vec![180.0, 220.0, 200.0, 300.0, 0.0],
        );
        let s = filter_by_content(&[u], 0, 2).unwrap();
        let t0 = s.get(0).unwrap();
        assert_eq!(t0.count, 2);
        assert!((t0.mean_pitch_hz.unwrap() - 200.0).abs() < 1e-12);
        assert!((t0.std_pitch_hz.unwrap() - 20.0).abs() < 1e-12);
        let t1 = s.get(1).unwrap();
        assert_eq!((t1.count, t1.voiced), (2, 1));
        assert_eq!(t1.mean_pitch_hz, Some(200.0));
        assert_eq!(t1.std_pitch_hz, Some(0.0));
        assert!(s.to_csv().starts_with("codec_token,count,mean_pitch_hz,std_pitch_hz\n0,2,200,20\n"));
    }

    #[test]
    fn filter_without_matches_names_the_token() {
        let u = aligned("a", vec![0, 1], vec![vec![0, 0]], vec![100.0, 100.0]);
        let err = filter_by_content(&[u], 0, 3).unwrap_err();
        assert!(err.to_string().contains('3'));
    }

    fn arb_frames() -> impl Strategy<Value = Vec<AlignedUtterance>> {
        proptest::collection::vec(
            proptest::collection::vec((0u32..4, 0u32..4, 0u32..4), 1..30),
            0..6,
        )
        .prop_map(|utts| {
            utts.into_iter()
                .enumerate()
                .map(|(i, fr)| {
                    let content = fr.iter().map(|f| f.0).collect();
                    let s0 = fr.iter().map(|f| f.1).collect();
                    let s1 = fr.iter().map(|f| f.2).collect();
                    aligned(&format!("u{i}"), content, vec![s0, s1], vec![0.0; fr.len()])
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn accumulation_merges_over_corpus_splits(frames in arb_frames(), cut in 0usize..6) {
            let cut = cut.min(frames.len());
            let whole = accumulate_aligned(&frames, 1, 4, 4, Parallelism::Parallel).unwrap();
            let mut left = accumulate_aligned(&frames[..cut], 1, 4, 4, Parallelism::Sequential).unwrap();
            let right = accumulate_aligned(&frames[cut..], 1, 4, 4, Parallelism::Sequential).unwrap();
            left.merge(&right).unwrap();
            prop_assert_eq!(&whole, &left);
            prop_assert_eq!(whole.total(), frames.iter().map(|u| u.len() as u64).sum::<u64>());
        }

        #[test]
        fn relabeling_permutes_columns_and_keeps_curves(frames in arb_frames(), perm_seed in 0usize..24) {
            prop_assume!(frames.iter().any(|u| !u.is_empty()));
            let mut perm = [0u32, 1, 2, 3];
            // deterministic permutation from the seed
            let mut s = perm_seed;
            for i in (1..4).rev() {
                perm.swap(i, s % (i + 1));
                s /= i + 1;
            }
            let relabeled: Vec<AlignedUtterance> = frames.iter().map(|u| {
                let mut v = u.clone();
                v.codec_tokens[0] = u.codec_tokens[0].iter().map(|&c| perm[c as usize]).collect();
                v.content = u.content.iter().map(|&a| perm[(a as usize + 1) % 4]).collect();
                v
            }).collect();
            let a = accumulate_aligned(&frames, 0, 4, 4, Parallelism::Sequential).unwrap();
            let b = accumulate_aligned(&relabeled, 0, 4, 4, Parallelism::Sequential).unwrap();
            for attr in 0..4 {
                for c in 0..4 {
                    prop_assert_eq!(a.get(attr, c), b.get(perm[(attr + 1) % 4] as usize, perm[c] as usize));
                }
            }
            let ca = topk_usage_curve(&rank_associations(&a), 4, Weighting::Uniform).unwrap();
            let cb = topk_usage_curve(&rank_associations(&b), 4, Weighting::Uniform).unwrap();
            for (x, y) in ca.iter().zip(&cb) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn curves_rise_to_100_and_mapping_is_a_function(frames in arb_frames()) {
            prop_assume!(frames.iter().any(|u| !u.is_empty()));
            let m = accumulate_aligned(&frames, 0, 4, 4, Parallelism::Sequential).unwrap();
            let r = rank_associations(&m);
            let curve = topk_usage_curve(&r, 4, Weighting::Uniform).unwrap();
            for w in curve.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
            prop_assert!((curve[3] - 100.0).abs() < 1e-9);
            let map = predominant_mapping(&r);
            prop_assert_eq!(map.len(), r.used().count());
            for col in r.used() {
                let s: f64 = col.ranked.iter().map(|x| x.1).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                for w in col.ranked.windows(2) {
                    prop_assert!(w[0].1 >= w[1].1);
                }
            }
        }
    }
}
