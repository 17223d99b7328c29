//! Scalar evaluation metrics: pitch AAE, content accuracy, cosine
//! similarity and clustering purity.

use std::collections::HashMap;
use std::hash::Hash;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n: usize,
    pub units: &'static str,
}

impl MetricReport {
    fn new(name: &str, value: f64, n: usize, units: &'static str) -> Self {
        MetricReport { name: name.to_string(), value, n, units }
    }
}

/// Average absolute pitch error in Hz over frames voiced on both sides
/// (0.0 = unvoiced).
pub fn aae(pred_hz: &[f64], ref_hz: &[f64]) -> Result<MetricReport> {
    if pred_hz.len() != ref_hz.len() {
        return Err(Error::invalid(format!(
            "aae: {} predicted vs {} reference frames",
            pred_hz.len(),
            ref_hz.len()
        )));
    }
    let (sum, n) = pred_hz
        .iter()
        .zip(ref_hz)
        .filter(|(&p, &r)| p > 0.0 && r > 0.0)
        .fold((0.0, 0usize), |(s, n), (&p, &r)| (s + (p - r).abs(), n + 1));
    if n == 0 {
        return Err(Error::invalid("aae: no frame is voiced in both sequences"));
    }
    Ok(MetricReport::new("aae", sum / n as f64, n, "Hz"))
}

pub fn content_accuracy(pred: &[u32], reference: &[u32]) -> Result<MetricReport> {
    if pred.len() != reference.len() {
        return Err(Error::invalid(format!(
            "accuracy: length mismatch {} vs {}",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("accuracy: empty sequences"));
    }
    let hits = pred.iter().zip(reference).filter(|(a, b)| a == b).count();
    Ok(MetricReport::new("content_accuracy", hits as f64 / pred.len() as f64, pred.len(), "fraction"))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<MetricReport> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("cosine: dimensions {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine: zero vector"));
    }
    let c = (dot / (na * nb)).clamp(-1.0, 1.0);
    Ok(MetricReport::new("cosine", c, a.len(), "unitless"))
}

/// Fraction of points whose label is the majority label of their cluster.
pub fn cluster_purity<A, L>(assignments: &[A], labels: &[L]) -> Result<MetricReport>
where
    A: Eq + Hash,
    L: Eq + Hash,
{
    if assignments.len() != labels.len() {
        return Err(Error::invalid("purity: assignment and label counts differ"));
    }
    if assignments.is_empty() {
        return Err(Error::invalid("purity: empty input"));
    }
    let mut counts: HashMap<&A, HashMap<&L, usize>> = HashMap::new();
    for (a, l) in assignments.iter().zip(labels) {
        *counts.entry(a).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = counts.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    let n = assignments.len();
    Ok(MetricReport::new("cluster_purity", majority as f64 / n as f64, n, "fraction"))
}

/// `metrics.csv` body.
pub fn metrics_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("name,value,units,n\n");
    for r in reports {
        out.push_str(&format!("{},{},{},{}\n", r.name, r.value, r.units, r.n));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn aae_examples() {
        let r = [100.0, 0.0, 220.0, 180.5];
        assert_eq!(aae(&r, &r).unwrap().value, 0.0);
        let p: Vec<f64> = r.iter().map(|v| if *v > 0.0 { v + 5.0 } else { 0.0 }).collect();
        let rep = aae(&p, &r).unwrap();
        assert!((rep.value - 5.0).abs() < 1e-12);
        assert_eq!(rep.n, 3);
        assert!(aae(&[0.0, 100.0], &[120.0, 0.0]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let a: Vec<u32> = (0..50).collect();
        assert_eq!(content_accuracy(&a, &a).unwrap().value, 1.0);
        let b: Vec<u32> = (100..150).collect();
        assert_eq!(content_accuracy(&a, &b).unwrap().value, 0.0);
        let mut c = a.clone();
        for v in c.iter_mut().take(9) {
            *v += 1000;
        }
        assert!((content_accuracy(&c, &a).unwrap().value - 0.82).abs() < 1e-15);
        assert!(content_accuracy(&a[..3], &a[..4]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap().value - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap().value, 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap().value;
        assert!((c - 2f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn purity_examples() {
        let l = [0, 1, 2, 0, 1];
        assert_eq!(cluster_purity(&l, &l).unwrap().value, 1.0);
        assert_eq!(cluster_purity(&[7, 7], &["a", "b"]).unwrap().value, 0.5);
        let labels: Vec<usize> = (0..30).map(|i| i / 10).collect();
        let mut clusters = labels.clone();
        clusters[4] = 2;
        assert!((cluster_purity(&clusters, &labels).unwrap().value - 29.0 / 30.0).abs() < 1e-15);
        assert!(cluster_purity::<u8, u8>(&[], &[]).is_err());
    }

    #[test]
    fn csv_has_header() {
        let r = aae(&[101.0], &[100.0]).unwrap();
        assert_eq!(metrics_csv(&[r]), "name,value,units,n\naae,1,Hz,1\n");
    }

    proptest! {
        #[test]
        fn cosine_is_scale_invariant(v in proptest::collection::vec(-10.0f64..10.0, 1..8), c in 0.01f64..100.0) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let w: Vec<f64> = v.iter().map(|x| x * c).collect();
            let neg: Vec<f64> = v.iter().map(|x| -x * c).collect();
            prop_assert!((cosine_similarity(&v, &w).unwrap().value - 1.0).abs() < 1e-12);
            prop_assert!((cosine_similarity(&v, &neg).unwrap().value + 1.0).abs() < 1e-12);
        }

        #[test]
        fn metrics_ignore_frame_order(
            pairs in proptest::collection::vec((0u32..5, 0u32..5, 50.0f64..400.0, 50.0f64..400.0), 1..40),
            rot in 0usize..40,
        ) {
            let (p, r): (Vec<u32>, Vec<u32>) = pairs.iter().map(|x| (x.0, x.1)).unzip();
            let (ph, rh): (Vec<f64>, Vec<f64>) = pairs.iter().map(|x| (x.2, x.3)).unzip();
            let k = rot % pairs.len();
            let rotate = |v: &[u32]| [&v[k..], &v[..k]].concat();
            let rotate_f = |v: &[f64]| [&v[k..], &v[..k]].concat();
            prop_assert_eq!(content_accuracy(&p, &r).unwrap().value, content_accuracy(&rotate(&p), &rotate(&r)).unwrap().value);
            prop_assert_eq!(cluster_purity(&p, &r).unwrap().value, cluster_purity(&rotate(&p), &rotate(&r)).unwrap().value);
            let a = aae(&ph, &rh).unwrap().value;
            let b = aae(&rotate_f(&ph), &rotate_f(&rh)).unwrap().value;
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn purity_ignores_relabeling(
            pairs in proptest::collection::vec((0u32..6, 0u32..4), 1..50),
            shift in 1u32..100,
        ) {
            let (a, l): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
            let a2: Vec<u32> = a.iter().map(|x| (x * 7 + shift) % 1000).collect();
            let l2: Vec<u32> = l.iter().map(|x| x + shift).collect();
            let r = cluster_purity(&a, &l).unwrap().value;
            prop_assert_eq!(r, cluster_purity(&a2, &l2).unwrap().value);
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
