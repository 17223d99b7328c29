//! Two-dimensional t-SNE of codebook vectors and utterance-averaged
//! embeddings, with CSV and SVG output.
//!
//! Exact mode evaluates all pairs every iteration and is the reference.
//! Barnes-Hut mode uses sparse nearest-neighbour affinities and a quadtree
//! for the repulsive forces. After the early-exaggeration phase a step is
//! only accepted if it does not increase KL(P||Q); otherwise the step size
//! is halved and the step re-evaluated.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, TokenCorpus};
use crate::par::{self, Parallelism};
use crate::{Error, Result};

const PERPLEXITY_TOLERANCE: f64 = 1e-5;
const PERPLEXITY_MAX_STEPS: usize = 50;
/// A search that ends further than this from the target has failed.
const PERPLEXITY_GIVE_UP: f64 = 1e-3;
const MAX_HALVINGS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TsneMode {
    Exact,
    BarnesHut { theta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
    pub mode: TsneMode,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 42,
            mode: TsneMode::Exact,
        }
    }
}

impl TsneConfig {
    pub fn barnes_hut(theta: f64) -> Self {
        TsneConfig { mode: TsneMode::BarnesHut { theta }, ..Self::default() }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 4 {
            return Err(Error::invalid(format!("t-SNE needs at least 4 points, got {n}")));
        }
        let max = (n - 1) as f64 / 3.0;
        if !(self.perplexity >= 1.0 && self.perplexity <= max) {
            return Err(Error::invalid(format!(
                "perplexity {} outside [1, {max:.3}] for {n} points",
                self.perplexity
            )));
        }
        if self.iterations < self.exaggeration_iterations || self.exaggeration_iterations < 250 {
            return Err(Error::invalid("need iterations >= exaggeration iterations >= 250"));
        }
        if !(self.learning_rate > 0.0 && self.early_exaggeration >= 1.0) {
            return Err(Error::invalid("learning rate must be positive and exaggeration >= 1"));
        }
        if let TsneMode::BarnesHut { theta } = self.mode {
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(Error::invalid(format!("Barnes-Hut theta {theta} must be positive")));
            }
        }
        Ok(())
    }
}

/// Row-major `n x dim` points.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    pub n: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Points {
    pub fn new(n: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != n * dim {
            return Err(Error::invalid(format!("{} values for {n} points of dimension {dim}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("points contain non-finite values"));
        }
        Ok(Points { n, dim, values })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    fn sq_dist(&self, i: usize, j: usize) -> f64 {
        self.row(i).iter().zip(self.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Symmetric joint affinities `P` (dense, zero diagonal, sum 1) and the
/// precision `beta_i = 1 / (2 sigma_i^2)` found for each point.
#[derive(Clone, Debug, PartialEq)]
pub struct Affinities {
    pub n: usize,
    pub p: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Affinities {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }
}

/// Conditional distribution over neighbours with squared distances `d`
/// at precision `beta`, and its entropy in nats.
pub fn conditional_row(d: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = d.iter().map(|&x| (-beta * (x - dmin)).exp()).collect();
    let s: f64 = w.iter().sum();
    let h = s.ln() + beta * w.iter().zip(d).map(|(wi, &x)| wi * (x - dmin)).sum::<f64>() / s;
    (w.into_iter().map(|v| v / s).collect(), h)
}

fn search_beta(d: &[f64], perplexity: f64, point: usize) -> Result<(f64, Vec<f64>)> {
    let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = d.iter().map(|x| x - dmin).sum::<f64>() / d.len() as f64;
    let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut best = conditional_row(d, beta);
    for _ in 0..PERPLEXITY_MAX_STEPS {
        let perp = best.1.exp();
        if ((perp - perplexity) / perplexity).abs() <= PERPLEXITY_TOLERANCE {
            break;
        }
        if perp > perplexity {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
        best = conditional_row(d, beta);
    }
    let perp = best.1.exp();
    if ((perp - perplexity) / perplexity).abs() > PERPLEXITY_GIVE_UP {
        return Err(Error::invalid(format!(
            "unreachable perplexity {perplexity} at point {point} (closest reached {perp:.4})"
        )));
    }
    Ok((beta, best.0))
}

/// Dense affinities. Needs at least 3 points and a reachable perplexity.
pub fn pairwise_affinities(x: &Points, perplexity: f64, par: Parallelism) -> Result<Affinities> {
    let n = x.n;
    if n < 3 {
        return Err(Error::invalid(format!("affinities need at least 3 points, got {n}")));
    }
    if !(perplexity >= 1.0 && perplexity < (n - 1) as f64) {
        return Err(Error::invalid(format!("unreachable perplexity {perplexity} for {n} points")));
    }
    let rows = par::map_indexed(par, n, |i| {
        let d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| x.sq_dist(i, j)).collect();
        search_beta(&d, perplexity, i)
    });
    let mut cond = vec![0.0; n * n];
    let mut betas = Vec::with_capacity(n);
    for (i, r) in rows.into_iter().enumerate() {
        let (beta, row) = r?;
        betas.push(beta);
        for (k, v) in row.into_iter().enumerate() {
            let j = if k < i { k } else { k + 1 };
            cond[i * n + j] = v;
        }
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok(Affinities { n, p, betas })
}

/// Sparse symmetric affinities over the `k` nearest neighbours of each
/// point, in CSR form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAffinities {
    pub n: usize,
    pub row_start: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

pub fn sparse_affinities(x: &Points, perplexity: f64, par: Parallelism) -> Result<SparseAffinities> {
    let n = x.n;
    let k = ((3.0 * perplexity).floor() as usize).clamp(1, n - 1);
    let rows = par::map_indexed(par, n, |i| {
        let mut d: Vec<(f64, usize)> =
            (0..n).filter(|&j| j != i).map(|j| (x.sq_dist(i, j), j)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
        let dist: Vec<f64> = d.iter().map(|e| e.0).collect();
        search_beta(&dist, perplexity, i)
            .map(|(_, row)| d.iter().map(|e| e.1).zip(row).collect::<Vec<(usize, f64)>>())
    });
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * n * k);
    for (i, r) in rows.into_iter().enumerate() {
        for (j, v) in r? {
            triplets.push((i, j, v));
            triplets.push((j, i, v));
        }
    }
    triplets.sort_by_key(|t| (t.0, t.1));
    let scale = 1.0 / (2.0 * n as f64);
    let mut row_start = vec![0usize; n + 1];
    let mut cols = Vec::with_capacity(triplets.len());
    let mut vals = Vec::with_capacity(triplets.len());
    let mut last = None;
    for (i, j, v) in triplets {
        if last == Some((i, j)) {
            *vals.last_mut().expect("previous entry") += v * scale;
        } else {
            cols.push(j);
            vals.push(v * scale);
            row_start[i + 1] += 1;
            last = Some((i, j));
        }
    }
    for i in 0..n {
        row_start[i + 1] += row_start[i];
    }
    Ok(SparseAffinities { n, row_start, cols, vals })
}

impl SparseAffinities {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_start[i]..self.row_start[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn total(&self) -> f64 {
        self.vals.iter().sum()
    }
}

enum Objective {
    Dense(Affinities),
    Sparse(SparseAffinities, f64),
}

struct Eval {
    kl: f64,
    grad: Vec<f64>,
}

fn p_log_p(values: &[f64]) -> f64 {
    values.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum()
}

/// Per-row accumulators: attraction (2), repulsion (2), sum of w, sum of p ln w.
type RowStats = [f64; 6];

fn finish(rows: Vec<RowStats>, plogp: f64) -> Eval {
    let z: f64 = rows.iter().map(|r| r[4]).sum();
    let plw: f64 = rows.iter().map(|r| r[5]).sum();
    let mut grad = Vec::with_capacity(2 * rows.len());
    for r in &rows {
        grad.push(4.0 * (r[0] - r[2] / z));
        grad.push(4.0 * (r[1] - r[3] / z));
    }
    Eval { kl: (plogp - plw + z.ln()).max(0.0), grad }
}

fn eval_exact(p: &Affinities, y: &[f64], exag: f64, plogp: f64, par: Parallelism) -> Eval {
    let n = p.n;
    let rows = par::map_indexed(par, n, |i| {
        let (yi0, yi1) = (y[2 * i], y[2 * i + 1]);
        let mut s = [0.0; 6];
        for j in 0..n {
            if j == i {
                continue;
            }
            let (d0, d1) = (yi0 - y[2 * j], yi1 - y[2 * j + 1]);
            let w = 1.0 / (1.0 + d0 * d0 + d1 * d1);
            let pij = p.p[i * n + j];
            s[0] += exag * pij * w * d0;
            s[1] += exag * pij * w * d1;
            s[2] += w * w * d0;
            s[3] += w * w * d1;
            s[4] += w;
            if pij > 0.0 {
                s[5] += pij * w.ln();
            }
        }
        s
    });
    finish(rows, plogp)
}

fn eval_barnes_hut(
    p: &SparseAffinities,
    y: &[f64],
    exag: f64,
    theta: f64,
    plogp: f64,
    par: Parallelism,
) -> Eval {
    let tree = QuadTree::build(y);
    let rows = par::map_indexed(par, p.n, |i| {
        let (yi0, yi1) = (y[2 * i], y[2 * i + 1]);
        let mut s = [0.0; 6];
        for (j, pij) in p.row(i) {
            let (d0, d1) = (yi0 - y[2 * j], yi1 - y[2 * j + 1]);
            let w = 1.0 / (1.0 + d0 * d0 + d1 * d1);
            s[0] += exag * pij * w * d0;
            s[1] += exag * pij * w * d1;
            s[5] += pij * w.ln();
        }
        let (r0, r1, z) = tree.repulsion(i, [yi0, yi1], theta);
        s[2] = r0;
        s[3] = r1;
        s[4] = z;
        s
    });
    finish(rows, plogp)
}

/// Exact KL(P||Q) of a sparse `P` against layout `y`, O(n^2).
fn sparse_kl_exact(p: &SparseAffinities, y: &[f64], plogp: f64, par: Parallelism) -> f64 {
    let n = p.n;
    let rows = par::map_indexed(par, n, |i| {
        let mut z = 0.0;
        for j in 0..n {
            if j != i {
                let (d0, d1) = (y[2 * i] - y[2 * j], y[2 * i + 1] - y[2 * j + 1]);
                z += 1.0 / (1.0 + d0 * d0 + d1 * d1);
            }
        }
        let mut plw = 0.0;
        for (j, pij) in p.row(i) {
            let (d0, d1) = (y[2 * i] - y[2 * j], y[2 * i + 1] - y[2 * j + 1]);
            plw += pij * (1.0 / (1.0 + d0 * d0 + d1 * d1)).ln();
        }
        (z, plw)
    });
    let z: f64 = rows.iter().map(|r| r.0).sum();
    let plw: f64 = rows.iter().map(|r| r.1).sum();
    (plogp - plw + z.ln()).max(0.0)
}

struct QuadNode {
    center: [f64; 2],
    half: f64,
    com: [f64; 2],
    count: usize,
    children: Option<[usize; 4]>,
    start: usize,
    end: usize,
}

/// Point-region quadtree over a 2-D layout; leaves hold one point, or
/// several coincident points at the depth limit.
struct QuadTree<'a> {
    y: &'a [f64],
    order: Vec<usize>,
    nodes: Vec<QuadNode>,
}

impl<'a> QuadTree<'a> {
    fn build(y: &'a [f64]) -> Self {
        let n = y.len() / 2;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for i in 0..n {
            for d in 0..2 {
                lo[d] = lo[d].min(y[2 * i + d]);
                hi[d] = hi[d].max(y[2 * i + d]);
            }
        }
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let half = (0.5 * (hi[0] - lo[0]).max(hi[1] - lo[1])).max(1e-12) * (1.0 + 1e-9);
        let mut t = QuadTree { y, order: (0..n).collect(), nodes: Vec::new() };
        t.insert(0, n, center, half, 0);
        t
    }

    fn quadrant(&self, i: usize, c: [f64; 2]) -> usize {
        (self.y[2 * i] >= c[0]) as usize + 2 * (self.y[2 * i + 1] >= c[1]) as usize
    }

    fn insert(&mut self, start: usize, end: usize, center: [f64; 2], half: f64, depth: usize) -> usize {
        let count = end - start;
        let mut com = [0.0; 2];
        for &i in &self.order[start..end] {
            com[0] += self.y[2 * i];
            com[1] += self.y[2 * i + 1];
        }
        if count > 0 {
            com = [com[0] / count as f64, com[1] / count as f64];
        }
        let id = self.nodes.len();
        self.nodes.push(QuadNode { center, half, com, count, children: None, start, end });
        if count <= 1 || depth >= 48 {
            return id;
        }
        let mut slice = self.order[start..end].to_vec();
        slice.sort_by_key(|&i| self.quadrant(i, center));
        self.order[start..end].copy_from_slice(&slice);
        let mut kids = [0; 4];
        let mut s = start;
        for (q, kid) in kids.iter_mut().enumerate() {
            let e = s + slice.iter().filter(|&&i| self.quadrant(i, center) == q).count();
            let h = 0.5 * half;
            let c = [
                center[0] + if q & 1 == 1 { h } else { -h },
                center[1] + if q & 2 == 2 { h } else { -h },
            ];
            *kid = self.insert(s, e, c, h, depth + 1);
            s = e;
        }
        self.nodes[id].children = Some(kids);
        id
    }

    /// Repulsive force numerator (unnormalized) and Z contribution for
    /// point `i`.
    fn repulsion(&self, i: usize, yi: [f64; 2], theta: f64) -> (f64, f64, f64) {
        let mut acc = (0.0, 0.0, 0.0);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.count == 0 {
                continue;
            }
            let inside = (yi[0] - node.center[0]).abs() <= node.half
                && (yi[1] - node.center[1]).abs() <= node.half;
            match node.children {
                Some(kids) => {
                    let (d0, d1) = (yi[0] - node.com[0], yi[1] - node.com[1]);
                    let d2 = d0 * d0 + d1 * d1;
                    let width = 2.0 * node.half;
                    if !inside && width * width < theta * theta * d2 {
                        let w = 1.0 / (1.0 + d2);
                        let c = node.count as f64;
                        acc.0 += c * w * w * d0;
                        acc.1 += c * w * w * d1;
                        acc.2 += c * w;
                    } else {
                        stack.extend(kids.iter().rev());
                    }
                }
                None => {
                    for &j in &self.order[node.start..node.end] {
                        if j == i {
                            continue;
                        }
                        let (d0, d1) = (yi[0] - self.y[2 * j], yi[1] - self.y[2 * j + 1]);
                        let w = 1.0 / (1.0 + d0 * d0 + d1 * d1);
                        acc.0 += w * w * d0;
                        acc.1 += w * w * d1;
                        acc.2 += w;
                    }
                }
            }
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
    /// Final KL(P||Q); for Barnes-Hut runs it is evaluated exactly against
    /// the sparse `P` used for optimization.
    pub kl: f64,
    /// `(iteration, KL)` at the start of every iteration, plus the final value.
    pub trace: Vec<(usize, f64)>,
}

impl Embedding2D {
    /// `iteration,kl`
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,kl\n");
        for (it, kl) in &self.trace {
            let _ = writeln!(out, "{it},{kl}");
        }
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        self.coords.iter().flat_map(|c| c.iter().copied()).collect()
    }
}

pub fn tsne(x: &Points, cfg: &TsneConfig, par: Parallelism) -> Result<Embedding2D> {
    cfg.validate(x.n)?;
    let n = x.n;
    let objective = match cfg.mode {
        TsneMode::Exact => Objective::Dense(pairwise_affinities(x, cfg.perplexity, par)?),
        TsneMode::BarnesHut { theta } => Objective::Sparse(sparse_affinities(x, cfg.perplexity, par)?, theta),
    };
    let plogp = match &objective {
        Objective::Dense(a) => p_log_p(&a.p),
        Objective::Sparse(s, _) => p_log_p(&s.vals),
    };
    let eval = |y: &[f64], exag: f64| match &objective {
        Objective::Dense(a) => eval_exact(a, y, exag, plogp, par),
        Objective::Sparse(s, theta) => eval_barnes_hut(s, y, exag, *theta, plogp, par),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).map_err(|e| Error::invalid(e.to_string()))?;
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut lr = cfg.learning_rate;
    let e_iters = cfg.exaggeration_iterations;
    let exag_at = |it: usize| if it < e_iters { cfg.early_exaggeration } else { 1.0 };
    let mut cur = eval(&y, exag_at(0));
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..cfg.iterations {
        if it == e_iters {
            cur = eval(&y, 1.0);
        }
        if !cur.kl.is_finite() || cur.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric(format!("t-SNE produced NaN at iteration {it}")));
        }
        trace.push((it, cur.kl));
        if it < e_iters {
            for k in 0..2 * n {
                update[k] = cfg.initial_momentum * update[k] - lr * cur.grad[k];
                y[k] += update[k];
            }
            cur = eval(&y, exag_at(it + 1));
            continue;
        }
        let mut momentum = cfg.final_momentum;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let step: Vec<f64> = (0..2 * n).map(|k| momentum * update[k] - lr * cur.grad[k]).collect();
            let cand: Vec<f64> = y.iter().zip(&step).map(|(a, b)| a + b).collect();
            let e = eval(&cand, 1.0);
            if e.kl.is_finite() && e.kl <= cur.kl {
                y = cand;
                update = step;
                cur = e;
                lr = (lr * 1.1).min(cfg.learning_rate);
                accepted = true;
                break;
            }
            lr *= 0.5;
            momentum = 0.0;
        }
        if !accepted {
            update.iter_mut().for_each(|u| *u = 0.0);
        }
    }
    let kl = match &objective {
        Objective::Dense(_) => cur.kl,
        Objective::Sparse(s, _) => sparse_kl_exact(s, &y, plogp, par),
    };
    trace.push((cfg.iterations, kl));
    log::debug!("t-SNE finished: {n} points, KL {kl:.5}");
    Ok(Embedding2D { coords: y.chunks(2).map(|c| [c[0], c[1]]).collect(), kl, trace })
}

/// Student-t similarities `Q` of a layout, normalized to sum 1.
pub fn student_t_q(coords: &[[f64; 2]]) -> Vec<f64> {
    let n = coords.len();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let (d0, d1) = (coords[i][0] - coords[j][0], coords[i][1] - coords[j][1]);
                q[i * n + j] = 1.0 / (1.0 + d0 * d0 + d1 * d1);
            }
        }
    }
    let z: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= z);
    q
}

/// Exact KL(P||Q) of dense affinities against a layout.
pub fn kl_divergence(p: &Affinities, coords: &[[f64; 2]]) -> f64 {
    let q = student_t_q(coords);
    p.p.iter()
        .zip(&q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Lloyd's k-means with k-means++ seeding; returns a cluster per point.
pub fn kmeans(x: &Points, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > x.n {
        return Err(Error::invalid(format!("k-means with k={k} on {} points", x.n)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![x.row(rng.random_range(0..x.n)).to_vec()];
    let d2 = |p: &[f64], c: &[f64]| p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    while centers.len() < k {
        let dist: Vec<f64> = (0..x.n)
            .map(|i| centers.iter().map(|c| d2(x.row(i), c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            dist.iter().position(|&d| {
                r -= d;
                r <= 0.0
            }).unwrap_or(x.n - 1)
        } else {
            rng.random_range(0..x.n)
        };
        centers.push(x.row(next).to_vec());
    }
    let mut assign = vec![usize::MAX; x.n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let best = (0..k)
                .min_by(|&p, &q| d2(x.row(i), &centers[p]).total_cmp(&d2(x.row(i), &centers[q])))
                .unwrap_or(0);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..x.n).filter(|&i| assign[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            for (d, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|&i| x.row(i)[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    Ok(assign)
}

/// The rows of one codebook scale as points (row index = token id).
pub fn codebook_points(table: &EmbeddingTable, scale: usize) -> Result<Points> {
    let s = table.scale(scale)?;
    Points::new(s.rows, s.dim, s.values.iter().map(|&v| v as f64).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceEmbedding {
    pub id: String,
    pub speaker_id: String,
    pub vector: Vec<f64>,
}

/// Mean codebook vector of each utterance's tokens at `scale`.
pub fn utterance_mean_embeddings(
    corpus: &TokenCorpus,
    table: &EmbeddingTable,
    scale: usize,
) -> Result<Vec<UtteranceEmbedding>> {
    let cb = table.scale(scale)?;
    corpus
        .utterances()
        .iter()
        .map(|u| {
            let tokens = u.codec.tokens.get(scale).ok_or_else(|| {
                Error::invalid(format!("scale out of range: {scale} (utterance {} has {})", u.id, u.codec.tokens.len()))
            })?;
            if tokens.is_empty() {
                return Err(Error::invalid(format!("utterance {} has no frames", u.id)));
            }
            let mut acc = vec![0.0f64; cb.dim];
            for &t in tokens {
                if t as usize >= cb.rows {
                    return Err(Error::invalid(format!(
                        "token {t} in utterance {} exceeds the {} codebook rows of scale {scale}",
                        u.id, cb.rows
                    )));
                }
                for (a, &v) in acc.iter_mut().zip(cb.row(t as usize)) {
                    *a += v as f64;
                }
            }
            let n = tokens.len() as f64;
            Ok(UtteranceEmbedding {
                id: u.id.clone(),
                speaker_id: u.attributes.speaker.id.clone(),
                vector: acc.into_iter().map(|a| a / n).collect(),
            })
        })
        .collect()
}

/// `attr_token,category` lines; a header line with that text, blank lines
/// and `#` comments are skipped.
pub fn parse_categories(text: &str) -> Result<BTreeMap<u32, String>> {
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (k == 0 && line == "attr_token,category") {
            continue;
        }
        let (tok, cat) = line
            .split_once(',')
            .ok_or_else(|| Error::Record { line: k + 1, message: "expected attr_token,category".into() })?;
        let tok: u32 = tok.trim().parse().map_err(|_| Error::Record {
            line: k + 1,
            message: format!("attr_token {tok:?} is not a non-negative integer"),
        })?;
        let cat = cat.trim();
        if cat.is_empty() {
            return Err(Error::Record { line: k + 1, message: "empty category".into() });
        }
        out.insert(tok, cat.to_string());
    }
    Ok(out)
}

pub const UNMAPPED: &str = "unmapped";

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub label: String,
    pub category: String,
}

/// Labels codebook points by their predominant attribute token and, when
/// given, that token's category.
pub fn color_by_mapping(
    tokens: &[u32],
    emb: &Embedding2D,
    mapping: &BTreeMap<u32, u32>,
    categories: Option<&BTreeMap<u32, String>>,
) -> Result<Vec<LabeledPoint>> {
    if tokens.len() != emb.coords.len() {
        return Err(Error::invalid(format!("{} tokens for {} points", tokens.len(), emb.coords.len())));
    }
    Ok(tokens
        .iter()
        .zip(&emb.coords)
        .map(|(t, c)| {
            let attr = mapping.get(t);
            LabeledPoint {
                id: t.to_string(),
                x: c[0],
                y: c[1],
                label: attr.map(|a| a.to_string()).unwrap_or_else(|| UNMAPPED.to_string()),
                category: attr
                    .and_then(|a| categories.and_then(|m| m.get(a)))
                    .cloned()
                    .unwrap_or_default(),
            }
        })
        .collect())
}

/// Points with explicit labels (e.g. speaker ids) and no category.
pub fn label_points(ids: &[String], emb: &Embedding2D, labels: &[String]) -> Result<Vec<LabeledPoint>> {
    if ids.len() != emb.coords.len() || labels.len() != ids.len() {
        return Err(Error::invalid("ids, labels and points differ in count"));
    }
    Ok(ids
        .iter()
        .zip(labels)
        .zip(&emb.coords)
        .map(|((id, l), c)| LabeledPoint { id: id.clone(), x: c[0], y: c[1], label: l.clone(), category: String::new() })
        .collect())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `id,x,y,label,category`
pub fn points_csv(points: &[LabeledPoint]) -> String {
    let mut out = String::from("id,x,y,label,category\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&p.id),
            p.x,
            p.y,
            csv_field(&p.label),
            csv_field(&p.category)
        );
    }
    out
}

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#bcbd22",
    "#17becf", "#393b79", "#637939", "#843c39",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter plot coloured by category (or label when no category is set);
/// unmapped points are grey.
pub fn scatter_svg(points: &[LabeledPoint], title: &str) -> String {
    let (w, h, m) = (640.0, 640.0, 40.0);
    let key = |p: &LabeledPoint| if p.category.is_empty() { p.label.clone() } else { p.category.clone() };
    let groups: std::collections::BTreeSet<String> = points.iter().map(key).collect();
    let color: BTreeMap<&str, &str> = groups
        .iter()
        .filter(|g| g.as_str() != UNMAPPED)
        .enumerate()
        .map(|(i, g)| (g.as_str(), PALETTE[i % PALETTE.len()]))
        .collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        lo = [lo[0].min(p.x), lo[1].min(p.y)];
        hi = [hi[0].max(p.x), hi[1].max(p.y)];
    }
    let span = [(hi[0] - lo[0]).max(1e-12), (hi[1] - lo[1]).max(1e-12)];
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{m}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, xml_escape(title));
    for p in points {
        let cx = m + (p.x - lo[0]) / span[0] * (w - 2.0 * m);
        let cy = h - m - (p.y - lo[1]) / span[1] * (h - 2.0 * m);
        let k = key(p);
        let fill = color.get(k.as_str()).copied().unwrap_or("#b0b0b0");
        let _ = writeln!(
            out,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{fill}"><title>{}: {}</title></circle>"#,
            xml_escape(&p.id),
            xml_escape(&k)
        );
    }
    for (i, (g, c)) in color.iter().take(20).enumerate() {
        let y = 44.0 + 14.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/>"#, w - 130.0, y - 9.0);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="11">{}</text>"#,
            w - 115.0,
            xml_escape(g)
        );
    }
    out.push_str("</svg>\n");
    out
}
