//! Gradient-boosted regression trees under logistic loss.
//!
//! Second-order exact greedy splitting over sparse columns. Absent entries
//! are zeros and take part in splits like any other value; a row goes left
//! when its value is below the node threshold.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{value_at, BaselineError, SparseVec};
use crate::fewshot::sigmoid;
use crate::Label;

const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbdtParams {
    pub n_estimators: u32,
    pub max_depth: u32,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self { n_estimators: 100, max_depth: 3, learning_rate: 0.1, lambda: 1.0, min_child_weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    /// Shrunken optimal weight of the node, also used as the leaf output.
    pub value: f64,
    /// `None` for leaves.
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_of(&self, row: &SparseVec) -> usize {
        let mut i = 0;
        while let Some(s) = self.nodes[i].split {
            i = if value_at(row, s.feature) < s.threshold { s.left } else { s.right };
        }
        i
    }

    pub fn predict(&self, row: &SparseVec) -> f64 {
        self.nodes[self.leaf_of(row)].value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gbdt {
    /// Prior log-odds of the positive class.
    pub base_score: f64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl Gbdt {
    pub fn margin(&self, row: &SparseVec) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict_proba(&self, row: &SparseVec) -> f64 {
        sigmoid(self.margin(row))
    }

    /// Tree-path attributions: along each decision path, the change in node
    /// value is credited to the split feature. Returns the bias (base score
    /// plus root values) and the sparse per-feature contributions; their sum
    /// equals [`margin`](Self::margin).
    pub fn contributions(&self, row: &SparseVec) -> (f64, SparseVec) {
        let mut bias = self.base_score;
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for tree in &self.trees {
            let mut i = 0;
            bias += tree.nodes[0].value;
            while let Some(s) = tree.nodes[i].split {
                let next = if value_at(row, s.feature) < s.threshold { s.left } else { s.right };
                *acc.entry(s.feature).or_insert(0.0) += tree.nodes[next].value - tree.nodes[i].value;
                i = next;
            }
        }
        (bias, acc.into_iter().filter(|(_, v)| *v != 0.0).collect())
    }
}

#[derive(Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: usize,
}

impl Stats {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn minus(self, o: Stats) -> Stats {
        Stats { g: self.g - o.g, h: self.h - o.h, n: self.n - o.n }
    }

    fn score(self, lambda: f64) -> f64 {
        self.g * self.g / (self.h + lambda)
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    left: Stats,
}

pub fn fit(rows: &[SparseVec], labels: &[Label], n_features: usize, params: &GbdtParams) -> Result<Gbdt, BaselineError> {
    if rows.len() != labels.len() {
        return Err(BaselineError::LengthMismatch);
    }
    if rows.is_empty() {
        return Err(BaselineError::SingleClass);
    }
    let positives = labels.iter().filter(|l| l.is_intermittent()).count();
    let prior = (positives as f64 / rows.len() as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = libm::log(prior / (1.0 - prior));

    let mut columns: Vec<Vec<(f64, u32)>> = vec![Vec::new(); n_features];
    for (r, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            if j >= n_features {
                return Err(BaselineError::FeatureOutOfRange { feature: j, n_features });
            }
            if v != 0.0 {
                columns[j].push((v, r as u32));
            }
        }
    }
    for col in &mut columns {
        col.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }

    let y: Vec<f64> = labels.iter().map(|l| f64::from(l.as_u8())).collect();
    let mut margin = vec![base_score; rows.len()];
    let mut trees = Vec::with_capacity(params.n_estimators as usize);
    let mut g = vec![0.0; rows.len()];
    let mut h = vec![0.0; rows.len()];
    for _ in 0..params.n_estimators {
        for i in 0..rows.len() {
            let p = sigmoid(margin[i]);
            g[i] = p - y[i];
            h[i] = p * (1.0 - p);
        }
        let tree = grow(rows, &columns, &g, &h, params);
        for (m, row) in margin.iter_mut().zip(rows) {
            *m += tree.predict(row);
        }
        trees.push(tree);
    }
    Ok(Gbdt { base_score, n_features, trees })
}

fn grow(rows: &[SparseVec], columns: &[Vec<(f64, u32)>], g: &[f64], h: &[f64], params: &GbdtParams) -> Tree {
    let lambda = params.lambda;
    let weight = |s: Stats| -s.g / (s.h + lambda) * params.learning_rate;
    let mut root = Stats::default();
    for i in 0..rows.len() {
        root.add(g[i], h[i]);
    }
    let mut nodes = vec![Node { value: weight(root), split: None }];
    let mut stats = vec![root];
    let mut node_of = vec![0usize; rows.len()];
    let mut active = vec![0usize];

    for _ in 0..params.max_depth {
        if active.is_empty() {
            break;
        }
        let mut slot_of = vec![usize::MAX; nodes.len()];
        for (s, &n) in active.iter().enumerate() {
            slot_of[n] = s;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
        let mut nonzero = vec![Stats::default(); active.len()];
        let mut left = vec![Stats::default(); active.len()];
        let mut prev: Vec<Option<f64>> = vec![None; active.len()];
        let mut zero_done = vec![false; active.len()];

        for (f, col) in columns.iter().enumerate() {
            if col.is_empty() {
                continue;
            }
            nonzero.iter_mut().for_each(|s| *s = Stats::default());
            for &(_, r) in col {
                let s = slot_of[node_of[r as usize]];
                if s != usize::MAX {
                    nonzero[s].add(g[r as usize], h[r as usize]);
                }
            }
            left.iter_mut().for_each(|s| *s = Stats::default());
            prev.iter_mut().for_each(|p| *p = None);
            zero_done.iter_mut().for_each(|z| *z = false);

            let consider = |s: usize, left: Stats, lo: f64, hi: f64, best: &mut [Option<Candidate>]| {
                let total = stats[active[s]];
                let right = total.minus(left);
                if left.h < params.min_child_weight || right.h < params.min_child_weight || left.n == 0 || right.n == 0 {
                    return;
                }
                let gain = 0.5 * (left.score(lambda) + right.score(lambda) - total.score(lambda));
                if gain <= MIN_GAIN || best[s].is_some_and(|b| b.gain >= gain) {
                    return;
                }
                let mut threshold = lo / 2.0 + hi / 2.0;
                if threshold <= lo {
                    threshold = hi;
                }
                best[s] = Some(Candidate { gain, feature: f, threshold, left });
            };

            for &(v, r) in col {
                let s = slot_of[node_of[r as usize]];
                if s == usize::MAX {
                    continue;
                }
                if !zero_done[s] && v > 0.0 {
                    zero_done[s] = true;
                    let zeros = stats[active[s]].minus(nonzero[s]);
                    if zeros.n > 0 {
                        if let Some(p) = prev[s] {
                            consider(s, left[s], p, 0.0, &mut best);
                        }
                        left[s].g += zeros.g;
                        left[s].h += zeros.h;
                        left[s].n += zeros.n;
                        prev[s] = Some(0.0);
                    }
                }
                if let Some(p) = prev[s] {
                    if v > p {
                        consider(s, left[s], p, v, &mut best);
                    }
                }
                left[s].add(g[r as usize], h[r as usize]);
                prev[s] = Some(v);
            }
            // all nonzeros negative: the zero group sits to the right of them
            for s in 0..active.len() {
                if !zero_done[s] {
                    let zeros = stats[active[s]].minus(nonzero[s]);
                    if zeros.n > 0 {
                        if let Some(p) = prev[s] {
                            consider(s, left[s], p, 0.0, &mut best);
                        }
                    }
                }
            }
        }

        let mut next = Vec::new();
        let mut split_slot = vec![None; nodes.len()];
        for (s, cand) in best.into_iter().enumerate() {
            let Some(c) = cand else { continue };
            let n = active[s];
            let right = stats[n].minus(c.left);
            let l = nodes.len();
            nodes.push(Node { value: weight(c.left), split: None });
            nodes.push(Node { value: weight(right), split: None });
            stats.push(c.left);
            stats.push(right);
            nodes[n].split = Some(Split { feature: c.feature, threshold: c.threshold, left: l, right: l + 1 });
            split_slot[n] = Some(());
            next.push(l);
            next.push(l + 1);
        }
        for (r, row) in rows.iter().enumerate() {
            let n = node_of[r];
            if split_slot[n].is_some() {
                let s = nodes[n].split.unwrap();
                node_of[r] = if value_at(row, s.feature) < s.threshold { s.left } else { s.right };
            }
        }
        active = next.into_iter().filter(|&n| stats[n].n >= 2).collect();
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Intermittent as I, Regular as R};

    fn row(v: &[f64]) -> SparseVec {
        v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(j, x)| (j, *x)).collect()
    }

    #[test]
    fn learns_threshold_with_negative_values() {
        // class is I iff x0 < -0.5; x1 is noise
        let xs: Vec<SparseVec> = (0..40).map(|i| row(&[i as f64 / 10.0 - 2.0, (i % 3) as f64])).collect();
        let ys: Vec<Label> = (0..40).map(|i| if (i as f64 / 10.0 - 2.0) < -0.5 { I } else { R }).collect();
        let params = GbdtParams { n_estimators: 30, max_depth: 2, learning_rate: 0.3, ..Default::default() };
        let m = fit(&xs, &ys, 2, &params).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(m.predict_proba(x) >= 0.5, y.is_intermittent());
        }
        let first = m.trees[0].nodes[0].split.unwrap();
        assert_eq!(first.feature, 0);
        assert!(first.threshold > -0.6 && first.threshold < -0.5);
    }

    #[test]
    fn zero_group_is_split_off() {
        // positives have a nonzero token, negatives do not
        let xs: Vec<SparseVec> = (0..20).map(|i| if i < 10 { row(&[0.0, 0.7]) } else { row(&[0.0, 0.0]) }).collect();
        let ys: Vec<Label> = (0..20).map(|i| if i < 10 { I } else { R }).collect();
        let m = fit(&xs, &ys, 2, &GbdtParams { n_estimators: 10, ..Default::default() }).unwrap();
        assert!(m.predict_proba(&row(&[0.0, 0.5])) > 0.5);
        assert!(m.predict_proba(&row(&[0.0, 0.0])) < 0.5);
    }

    #[test]
    fn contributions_add_up() {
        let xs: Vec<SparseVec> = (0..30).map(|i| row(&[(i * 7 % 11) as f64, (i % 4) as f64 - 1.5, (i % 2) as f64])).collect();
        let ys: Vec<Label> = (0..30).map(|i| if (i * 7 % 11) > 4 && i % 2 == 0 { I } else { R }).collect();
        let m = fit(&xs, &ys, 3, &GbdtParams { n_estimators: 20, max_depth: 3, ..Default::default() }).unwrap();
        for x in &xs {
            let (bias, c) = m.contributions(x);
            let total = bias + c.iter().map(|(_, v)| v).sum::<f64>();
            assert!((total - m.margin(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn single_tree_gain_matches_oracle() {
        // Exhaustive oracle over thresholds for a one-feature stump.
        let vals = [0.0, 0.0, 1.0, 2.0, 2.0, 3.0, -1.0, 0.0];
        let ys = [R, R, I, I, R, I, R, I];
        let xs: Vec<SparseVec> = vals.iter().map(|&v| row(&[v])).collect();
        let params = GbdtParams { n_estimators: 1, max_depth: 1, learning_rate: 1.0, lambda: 1.0, min_child_weight: 0.0 };
        let m = fit(&xs, &ys, 1, &params).unwrap();
        let p = 0.5f64;
        let g: Vec<f64> = ys.iter().map(|y| p - f64::from(y.as_u8())).collect();
        let h = p * (1.0 - p);
        let mut sorted = vals.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let mut best = (0.0, f64::NAN);
        for w in sorted.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
            for (v, gi) in vals.iter().zip(&g) {
                if *v < t {
                    gl += gi;
                    hl += h;
                } else {
                    gr += gi;
                    hr += h;
                }
            }
            let gt = gl + gr;
            let gain = 0.5 * (gl * gl / (hl + 1.0) + gr * gr / (hr + 1.0) - gt * gt / (hl + hr + 1.0));
            if gain > best.0 {
                best = (gain, t);
            }
        }
        let s = m.trees[0].nodes[0].split.unwrap();
        assert!((s.threshold - best.1).abs() < 1e-12, "{} vs {}", s.threshold, best.1);
    }
}
