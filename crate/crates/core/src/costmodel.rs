//! Learned resource estimation: degree-2 polynomial features, regularized
//! gradient-boosted regression trees, and importance-based re-selection.

use std::io::{Read, Write};
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BankingStyle, HyperplaneGeometry, SchemeMetrics};
use crate::rewrite::OpCounts;

pub mod synth;

/// Dimensions with dedicated per-dimension feature slots.
pub const MAX_DIMS: usize = 4;
pub const MODEL_SCHEMA: &str = "bankforge.gbt.v1";
pub const TARGETS: [&str; 3] = ["lut", "ff", "bram"];

pub const FEATURE_NAMES: [&str; 40] = [
    "n_0",
    "n_1",
    "n_2",
    "n_3",
    "b_0",
    "b_1",
    "b_2",
    "b_3",
    "alpha_0",
    "alpha_1",
    "alpha_2",
    "alpha_3",
    "p_0",
    "p_1",
    "p_2",
    "p_3",
    "delta_0",
    "delta_1",
    "delta_2",
    "delta_3",
    "banks_total",
    "capacity",
    "ports",
    "element_bits",
    "duplication",
    "multidim",
    "dag_add",
    "dag_sub",
    "dag_shift",
    "dag_and",
    "dag_mux",
    "dag_mul",
    "dag_div",
    "dag_mod",
    "readers",
    "writers",
    "max_fo",
    "max_fi",
    "groups",
    "depth",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Lut,
    Ff,
    Bram,
}

impl Objective {
    pub fn pick(self, r: &Resources) -> f64 {
        match self {
            Objective::Lut => r.lut,
            Objective::Ff => r.ff,
            Objective::Bram => r.bram,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lut" => Ok(Objective::Lut),
            "ff" => Ok(Objective::Ff),
            "bram" => Ok(Objective::Bram),
            other => Err(Error::invalid(format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Resources {
    pub lut: f64,
    pub ff: f64,
    pub bram: f64,
}

/// Everything the raw feature vector is derived from.
#[derive(Debug, Clone)]
pub struct SchemeContext<'a> {
    pub geometry: &'a HyperplaneGeometry,
    pub p: &'a [u64],
    pub metrics: &'a SchemeMetrics,
    pub census: OpCounts,
    pub ports: u32,
    pub element_bits: u32,
    pub duplication: u32,
    pub readers: usize,
    pub writers: usize,
    pub groups: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn from_scheme(c: &SchemeContext) -> Self {
        let g = c.geometry;
        let mut v = vec![0.0; FEATURE_NAMES.len()];
        let per_dim = |v: &mut Vec<f64>, base: usize, vals: &[f64]| {
            for (i, x) in vals.iter().take(MAX_DIMS).enumerate() {
                v[base + i] = *x;
            }
        };
        let f = |xs: &[u64]| xs.iter().map(|&x| x as f64).collect::<Vec<_>>();
        per_dim(&mut v, 0, &f(&g.n));
        per_dim(&mut v, 4, &f(&g.b));
        per_dim(&mut v, 8, &g.alpha.iter().map(|&a| a as f64).collect::<Vec<_>>());
        per_dim(&mut v, 12, &f(c.p));
        per_dim(&mut v, 16, &f(&c.metrics.delta));
        let census = c.census;
        let rest = [
            g.total_banks() as f64,
            c.metrics.capacity as f64,
            c.ports as f64,
            c.element_bits as f64,
            c.duplication as f64,
            (g.style == BankingStyle::Multidimensional) as u8 as f64,
            census.add as f64,
            census.sub as f64,
            census.shift as f64,
            census.and as f64,
            census.mux as f64,
            census.mul as f64,
            census.div as f64,
            census.modulo as f64,
            c.readers as f64,
            c.writers as f64,
            c.metrics.max_fo() as f64,
            c.metrics.max_fi() as f64,
            c.groups as f64,
            c.depth as f64,
        ];
        v[20..].copy_from_slice(&rest);
        FeatureVector(v)
    }
}

/// Raw features followed by all pairwise products `x_i * x_j`, `i <= j`.
pub fn poly_expand(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut out = Vec::with_capacity(d + d * (d + 1) / 2);
    out.extend_from_slice(x);
    for i in 0..d {
        for j in i..d {
            out.push(x[i] * x[j]);
        }
    }
    out
}

pub fn expanded_names(raw: &[&str]) -> Vec<String> {
    let mut out: Vec<String> = raw.iter().map(|s| s.to_string()).collect();
    for i in 0..raw.len() {
        for j in i..raw.len() {
            out.push(format!("{}*{}", raw[i], raw[j]));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub min_samples_split: usize,
    pub random_state: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_estimators: 159,
            max_depth: 3,
            learning_rate: 0.1,
            subsample: 0.6,
            colsample_bytree: 1.0,
            lambda: 0.04,
            alpha: 3.0,
            gamma: 5.0,
            min_samples_split: 10,
            random_state: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + rec(t, left).max(rec(t, right)),
            }
        }
        rec(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub schema: String,
    pub target: String,
    pub params: GbtParams,
    /// Width of the (expanded) input vector.
    pub n_features: usize,
    /// Whether inputs are raw features that must be polynomially expanded.
    pub expand: bool,
    pub base: f64,
    pub trees: Vec<Tree>,
    /// Feature indices the trees may split on; empty means all.
    pub mask: Vec<usize>,
}

impl GbtModel {
    /// Prediction on an already expanded vector.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        (self.base + self.params.learning_rate * sum).max(0.0)
    }

    pub fn predict(&self, f: &FeatureVector) -> f64 {
        if self.expand {
            self.predict_row(&poly_expand(&f.0))
        } else {
            self.predict_row(&f.0)
        }
    }

    /// Split counts per feature across all trees.
    pub fn importance(&self) -> Vec<u32> {
        let mut imp = vec![0u32; self.n_features];
        for t in &self.trees {
            for n in &t.nodes {
                if let TreeNode::Split { feature, .. } = n {
                    imp[*feature] += 1;
                }
            }
        }
        imp
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GbtModel = serde_json::from_str(s)?;
        if m.schema != MODEL_SCHEMA {
            return Err(Error::invalid(format!("unsupported model schema `{}`", m.schema)));
        }
        Ok(m)
    }
}

/// Top-`n` features by split count, ties to the lower index, in index order.
pub fn top_features(model: &GbtModel, n: usize) -> Vec<usize> {
    let imp = model.importance();
    let mut idx: Vec<usize> = (0..imp.len()).collect();
    idx.sort_by(|&a, &b| imp[b].cmp(&imp[a]).then(a.cmp(&b)));
    idx.truncate(n.min(imp.len()));
    idx.sort_unstable();
    idx
}

struct SplitChoice {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Gradient-boosted regression on rows `x` (already expanded) for squared error.
pub fn train(x: &[Vec<f64>], y: &[f64], params: &GbtParams, target: &str, mask: Option<&[usize]>) -> Result<GbtModel> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::EmptyDataset);
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("dataset contains non-finite values"));
    }
    let n = x.len();
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch("ragged dataset rows".into()));
    }
    let allowed: Vec<usize> = match mask {
        Some(m) if !m.is_empty() => m.to_vec(),
        _ => (0..d).collect(),
    };
    let base = y.iter().sum::<f64>() / n as f64;
    let mut model = GbtModel {
        schema: MODEL_SCHEMA.to_string(),
        target: target.to_string(),
        params: *params,
        n_features: d,
        expand: false,
        base,
        trees: vec![],
        mask: mask.map(<[usize]>::to_vec).unwrap_or_default(),
    };
    let columns = binned_columns(x, &allowed);
    let mut rng = ChaCha8Rng::seed_from_u64(params.random_state);
    let mut pred = vec![base; n];
    let take = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let ncol = columns.len();
    let cols = ((params.colsample_bytree * ncol as f64).round() as usize).clamp(ncol.min(1), ncol);
    for _ in 0..params.n_estimators {
        let mut in_sample = vec![false; n];
        if take == n {
            in_sample.iter_mut().for_each(|s| *s = true);
        } else {
            for i in sample(&mut rng, n, take) {
                in_sample[i] = true;
            }
        }
        let feat_slots: Vec<usize> = if cols == ncol {
            (0..ncol).collect()
        } else {
            let mut s: Vec<usize> = sample(&mut rng, ncol, cols).into_vec();
            s.sort_unstable();
            s
        };
        let grad: Vec<f64> = (0..n).map(|i| pred[i] - y[i]).collect();
        let tree = grow_tree(x, &grad, &in_sample, &columns, &feat_slots, params);
        for i in 0..n {
            pred[i] += params.learning_rate * tree.predict(&x[i]);
        }
        model.trees.push(tree);
    }
    Ok(model)
}

/// A splittable feature: its distinct values in ascending order and the
/// index of each row's value among them.
struct Column {
    feature: usize,
    values: Vec<f64>,
    bin: Vec<u32>,
}

/// Columns for `allowed`, dropping constant columns and exact duplicates of
/// an earlier column. Neither can win a split: a constant has no threshold
/// and a duplicate only ties the lower index.
fn binned_columns(x: &[Vec<f64>], allowed: &[usize]) -> Vec<Column> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for &f in allowed {
        let bits: Vec<u64> = x.iter().map(|r| r[f].to_bits()).collect();
        if bits.iter().all(|&b| f64::from_bits(b) == x[0][f]) || !seen.insert(bits) {
            continue;
        }
        let mut values: Vec<f64> = x.iter().map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let bin = x.iter().map(|r| values.partition_point(|&v| v < r[f]) as u32).collect();
        out.push(Column { feature: f, values, bin });
    }
    out
}

fn leaf_weight(g: f64, h: f64, p: &GbtParams) -> f64 {
    let shrunk = (g.abs() - p.alpha).max(0.0);
    -g.signum() * shrunk / (h + p.lambda)
}

fn grow_tree(
    x: &[Vec<f64>],
    grad: &[f64],
    in_sample: &[bool],
    columns: &[Column],
    feat_slots: &[usize],
    p: &GbtParams,
) -> Tree {
    let n = x.len();
    // Node id per sampled row; usize::MAX marks rows outside the sample or
    // in finished leaves.
    let mut node_of: Vec<usize> = (0..n).map(|i| if in_sample[i] { 0 } else { usize::MAX }).collect();
    let mut nodes = vec![TreeNode::Leaf { weight: 0.0 }];
    let mut frontier = vec![0usize];
    let rows: Vec<u32> = (0..n as u32).filter(|&r| in_sample[r as usize]).collect();
    let stats = |node_of: &[usize], id: usize| {
        let (mut g, mut c) = (0.0, 0usize);
        for i in 0..n {
            if node_of[i] == id {
                g += grad[i];
                c += 1;
            }
        }
        (g, c as f64)
    };
    for _depth in 0..p.max_depth {
        if frontier.is_empty() {
            break;
        }
        let totals: Vec<(f64, f64)> = frontier.iter().map(|&id| stats(&node_of, id)).collect();
        let parent: Vec<f64> = totals.iter().map(|&(g, h)| g * g / (h + p.lambda)).collect();
        let slot_of = {
            let mut m = vec![usize::MAX; nodes.len()];
            for (s, &id) in frontier.iter().enumerate() {
                m[id] = s;
            }
            m
        };
        let row_slot: Vec<u32> = node_of
            .iter()
            .map(|&id| if id < slot_of.len() && slot_of[id] != usize::MAX { slot_of[id] as u32 } else { u32::MAX })
            .collect();
        // Best split per frontier node for every candidate feature.
        let per_feature: Vec<Vec<Option<SplitChoice>>> = feat_slots
            .par_iter()
            .with_min_len(64)
            .map(|&slot| {
                let col = &columns[slot];
                let k = frontier.len();
                let nb = col.values.len();
                let mut hg = vec![0.0; k * nb];
                let mut hh = vec![0u32; k * nb];
                for &r in &rows {
                    let s = row_slot[r as usize];
                    if s == u32::MAX {
                        continue;
                    }
                    let i = s as usize * nb + col.bin[r as usize] as usize;
                    hg[i] += grad[r as usize];
                    hh[i] += 1;
                }
                let mut best: Vec<Option<SplitChoice>> = (0..k).map(|_| None).collect();
                for s in 0..k {
                    let (g, h) = totals[s];
                    if h < p.min_samples_split as f64 {
                        continue;
                    }
                    let (mut gl, mut hl) = (0.0, 0.0);
                    let mut prev = f64::NAN;
                    for b in 0..nb {
                        let c = hh[s * nb + b];
                        if c == 0 {
                            continue;
                        }
                        let v = col.values[b];
                        if hl > 0.0 {
                            let gr = g - gl;
                            let hr = h - hl;
                            let gain =
                                0.5 * (gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda) - parent[s]) - p.gamma;
                            if gain > 0.0 && best[s].as_ref().is_none_or(|b| gain > b.gain) {
                                best[s] = Some(SplitChoice {
                                    gain,
                                    feature: col.feature,
                                    threshold: prev + (v - prev) / 2.0,
                                });
                            }
                        }
                        gl += hg[s * nb + b];
                        hl += c as f64;
                        prev = v;
                    }
                }
                best
            })
            .collect();
        let mut next = Vec::new();
        for (s, &id) in frontier.iter().enumerate() {
            let mut choice: Option<&SplitChoice> = None;
            for cand in per_feature.iter().filter_map(|b| b[s].as_ref()) {
                let better = match choice {
                    None => true,
                    Some(c) => cand.gain > c.gain || (cand.gain == c.gain && cand.feature < c.feature),
                };
                if better {
                    choice = Some(cand);
                }
            }
            if let Some(c) = choice {
                let (left, right) = (nodes.len(), nodes.len() + 1);
                nodes[id] = TreeNode::Split { feature: c.feature, threshold: c.threshold, left, right };
                nodes.push(TreeNode::Leaf { weight: 0.0 });
                nodes.push(TreeNode::Leaf { weight: 0.0 });
                for r in 0..n {
                    if node_of[r] == id {
                        node_of[r] = if x[r][c.feature] < c.threshold { left } else { right };
                    }
                }
                next.push(left);
                next.push(right);
            }
        }
        frontier = next;
    }
    // Leaf weights from the rows that reached each leaf.
    let mut g = vec![0.0; nodes.len()];
    let mut h = vec![0.0; nodes.len()];
    for r in 0..n {
        if node_of[r] != usize::MAX {
            g[node_of[r]] += grad[r];
            h[node_of[r]] += 1.0;
        }
    }
    for (i, node) in nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { weight } = node {
            *weight = leaf_weight(g[i], h[i], p);
        }
    }
    Tree { nodes }
}

/// Retrains on the `n` most frequently split-on features of `model`.
pub fn select_and_retrain(model: &GbtModel, x: &[Vec<f64>], y: &[f64], n: usize) -> Result<GbtModel> {
    let mask = if n >= model.n_features { (0..model.n_features).collect() } else { top_features(model, n) };
    let mut m = train(x, y, &model.params, &model.target, Some(&mask))?;
    m.expand = model.expand;
    Ok(m)
}

/// Expansion, boosting and top-`select` retraining on raw feature rows.
pub fn fit_pipeline(raw: &[Vec<f64>], y: &[f64], params: &GbtParams, target: &str, select: usize) -> Result<GbtModel> {
    let x: Vec<Vec<f64>> = raw.iter().map(|r| poly_expand(r)).collect();
    let first = train(&x, y, params, target, None)?;
    let mut m = select_and_retrain(&first, &x, y, select)?;
    m.expand = true;
    Ok(m)
}

/// `1 - SS_res / SS_tot`; `None` when the target has zero variance.
pub fn r2(y: &[f64], pred: &[f64]) -> Option<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub mean_train_r2: f64,
    pub std_train_r2: f64,
    pub mean_test_r2: f64,
    pub std_test_r2: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// Learning curves over `repeats` seeded 70/30 permutations, training on
/// growing prefixes of the training split.
pub fn cross_validate(
    raw: &[Vec<f64>],
    y: &[f64],
    params: &GbtParams,
    select: usize,
    fractions: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if raw.len() < 4 {
        return Err(Error::EmptyDataset);
    }
    let n = raw.len();
    let n_train = (n as f64 * 0.7).round() as usize;
    let splits: Vec<Vec<usize>> = (0..repeats)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            sample(&mut rng, n, n).into_vec()
        })
        .collect();
    let mut out = Vec::new();
    for &frac in fractions {
        let scores: Vec<(f64, f64)> = splits
            .par_iter()
            .map(|perm| -> Result<(f64, f64)> {
                let (train_idx, test_idx) = perm.split_at(n_train);
                let used = ((train_idx.len() as f64 * frac).round() as usize).clamp(2, train_idx.len());
                let tr = &train_idx[..used];
                let xr: Vec<Vec<f64>> = tr.iter().map(|&i| raw[i].clone()).collect();
                let yr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
                let m = fit_pipeline(&xr, &yr, params, "cv", select)?;
                let score = |idx: &[usize]| {
                    let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                    let ps: Vec<f64> = idx.iter().map(|&i| m.predict(&FeatureVector(raw[i].clone()))).collect();
                    r2(&ys, &ps).unwrap_or(0.0)
                };
                Ok((score(tr), score(test_idx)))
            })
            .collect::<Result<_>>()?;
        let (mtr, str_) = mean_std(&scores.iter().map(|s| s.0).collect::<Vec<_>>());
        let (mte, ste) = mean_std(&scores.iter().map(|s| s.1).collect::<Vec<_>>());
        out.push(CurvePoint {
            fraction: frac,
            mean_train_r2: mtr,
            std_train_r2: str_,
            mean_test_r2: mte,
            std_test_r2: ste,
        });
    }
    Ok(out)
}

pub fn write_curves<W: Write>(points: &[CurvePoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for p in points {
        wr.serialize(p)?;
    }
    wr.flush()?;
    Ok(())
}

/// Feature rows with their three targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub lut: Vec<f64>,
    pub ff: Vec<f64>,
    pub bram: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn target(&self, name: &str) -> Result<&[f64]> {
        match name {
            "lut" => Ok(&self.lut),
            "ff" => Ok(&self.ff),
            "bram" => Ok(&self.bram),
            other => Err(Error::invalid(format!("unknown target `{other}`"))),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = self.columns.clone();
        header.extend(TARGETS.iter().map(|s| s.to_string()));
        wr.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            rec.extend([self.lut[i], self.ff[i], self.bram[i]].iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header.len() < 4 || header[header.len() - 3..] != TARGETS {
            return Err(Error::invalid("dataset header must end with lut,ff,bram"));
        }
        let width = header.len() - 3;
        let mut ds = Dataset { columns: header[..width].to_vec(), ..Default::default() };
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::invalid(format!("row {}: {e}", line + 2)))?;
            if vals.len() != header.len() || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("row {}: expected {} finite cells", line + 2, header.len())));
            }
            ds.rows.push(vals[..width].to_vec());
            ds.lut.push(vals[width]);
            ds.ff.push(vals[width + 1]);
            ds.bram.push(vals[width + 2]);
        }
        if ds.rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(ds)
    }
}

/// One pipeline model per resource target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceModel {
    pub lut: GbtModel,
    pub ff: GbtModel,
    pub bram: GbtModel,
}

/// Features kept after re-selection.
pub const SELECTED_FEATURES: usize = 36;
/// Row count of the default training set.
pub const DEFAULT_ROWS: usize = 831;

impl ResourceModel {
    pub fn train(ds: &Dataset, params: &GbtParams) -> Result<Self> {
        let fit = |t: &str| fit_pipeline(&ds.rows, ds.target(t)?, params, t, SELECTED_FEATURES);
        let (lut, (ff, bram)) = rayon::join(|| fit("lut"), || rayon::join(|| fit("ff"), || fit("bram")));
        Ok(ResourceModel { lut: lut?, ff: ff?, bram: bram? })
    }

    pub fn predict(&self, f: &FeatureVector) -> Resources {
        Resources { lut: self.lut.predict(f), ff: self.ff.predict(f), bram: self.bram.predict(f) }
    }

    /// Models trained once per process on the seeded synthetic dataset.
    pub fn default_models() -> &'static ResourceModel {
        static MODELS: OnceLock<ResourceModel> = OnceLock::new();
        MODELS.get_or_init(|| {
            let ds = synth::generate(DEFAULT_ROWS, GbtParams::default().random_state);
            ResourceModel::train(&ds, &GbtParams::default()).expect("synthetic dataset is well formed")
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> GbtParams {
        GbtParams {
            n_estimators: 1,
            max_depth: 1,
            learning_rate: 1.0,
            subsample: 1.0,
            lambda: 0.0,
            alpha: 0.0,
            gamma: 0.0,
            min_samples_split: 2,
            ..Default::default()
        }
    }

    #[test]
    fn expansion() {
        assert_eq!(poly_expand(&[2.0, 3.0]), vec![2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(poly_expand(&[0.0; 3]), vec![0.0; 9]);
        assert_eq!(poly_expand(&[1.0; 40]).len(), 40 + 40 * 41 / 2);
    }

    #[test]
    fn constant_target() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y = vec![7.0; 20];
        let m = train(&x, &y, &GbtParams::default(), "lut", None).unwrap();
        assert!((m.predict_row(&[3.0]) - 7.0).abs() < 1e-12);
        assert!(r2(&y, &y).is_none());
        assert!(matches!(train(&[], &[], &GbtParams::default(), "lut", None), Err(Error::EmptyDataset)));
    }

    #[test]
    fn linear_fit() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..100).map(|i| 3.0 * i as f64).collect();
        let p = GbtParams {
            n_estimators: 300,
            max_depth: 3,
            subsample: 1.0,
            alpha: 0.0,
            gamma: 0.0,
            min_samples_split: 2,
            ..Default::default()
        };
        let m = train(&x, &y, &p, "lut", None).unwrap();
        let pred: Vec<f64> = x.iter().map(|r| m.predict_row(r)).collect();
        assert!(r2(&y, &pred).unwrap() >= 0.99);
        assert!((m.predict_row(&[10.0]) - 30.0).abs() <= 3.0);
    }

    #[test]
    fn stump_leaves_are_mean_residuals() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![1.0, 1.0, 5.0, 5.0];
        let m = train(&x, &y, &small_params(), "lut", None).unwrap();
        assert_eq!(m.trees[0].nodes.len(), 3);
        assert_eq!(m.predict_row(&[0.0]), 1.0);
        assert_eq!(m.predict_row(&[3.0]), 5.0);
    }

    #[test]
    fn empty_ensemble_and_single_leaf() {
        let mut m =
            train(&[vec![0.0]], &[4.0], &GbtParams { n_estimators: 0, ..Default::default() }, "lut", None).unwrap();
        assert_eq!(m.predict_row(&[0.0]), 4.0);
        m.trees.push(Tree { nodes: vec![TreeNode::Leaf { weight: 2.0 }] });
        assert!((m.predict_row(&[0.0]) - 4.2).abs() < 1e-12);
    }

    #[test]
    fn top_features_tie_break() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![0.0, i as f64, 0.0]).collect();
        let y: Vec<f64> = (0..40).map(|i| (i * i) as f64).collect();
        let m = train(&x, &y, &GbtParams { alpha: 0.0, gamma: 0.0, ..Default::default() }, "lut", None).unwrap();
        assert_eq!(top_features(&m, 1), vec![1]);
        let all = select_and_retrain(&m, &x, &y, 10).unwrap();
        assert_eq!(all.mask, vec![0, 1, 2]);
    }

    #[test]
    fn dataset_round_trip() {
        let ds = synth::generate(12, 1);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.columns, ds.columns);
        assert_eq!(back.rows, ds.rows);
        assert_eq!(back.lut, ds.lut);
        assert!(Dataset::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
