//! Binary CART with Gini impurity.
//!
//! Thresholds sit at midpoints between consecutive distinct values and rows
//! with `x <= threshold` go left. Among equally good splits the lowest column
//! index wins, then the lowest threshold.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Serialized compactly: a split as `[feature, threshold, left, right]`,
/// a leaf as `{"l": counts}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawNode", from = "RawNode")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<u32>,
    },
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawNode {
    Split(usize, f64, usize, usize),
    Leaf { l: Vec<u32> },
}

impl From<Node> for RawNode {
    fn from(n: Node) -> Self {
        match n {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => RawNode::Split(feature, threshold, left, right),
            Node::Leaf { counts } => RawNode::Leaf { l: counts },
        }
    }
}

impl From<RawNode> for Node {
    fn from(n: RawNode) -> Self {
        match n {
            RawNode::Split(feature, threshold, left, right) => Node::Split {
                feature,
                threshold,
                left,
                right,
            },
            RawNode::Leaf { l } => Node::Leaf { counts: l },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

pub(crate) struct TreeConfig {
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    /// Features examined per split; `None` examines all.
    pub max_features: Option<usize>,
}

struct Candidate {
    impurity: f64,
    feature: usize,
    threshold: f64,
}

impl Tree {
    /// Grows a tree on `samples` (row indices into `rows`, repeats allowed).
    pub(crate) fn fit<R: Rng>(
        rows: &crate::matrix::Matrix,
        labels: &[usize],
        n_classes: usize,
        samples: Vec<usize>,
        cfg: &TreeConfig,
        rng: &mut R,
    ) -> Tree {
        let mut nodes = Vec::new();
        let mut stack = vec![(samples, 0usize, usize::MAX, false)];
        let mut scratch: Vec<(f64, usize)> = Vec::new();
        while let Some((idx, depth, parent, is_right)) = stack.pop() {
            let id = nodes.len();
            if parent != usize::MAX {
                if let Node::Split { left, right, .. } = &mut nodes[parent] {
                    if is_right {
                        *right = id;
                    } else {
                        *left = id;
                    }
                }
            }
            let mut counts = vec![0u32; n_classes];
            for &i in &idx {
                counts[labels[i]] += 1;
            }
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_capped = cfg.max_depth.is_some_and(|d| depth >= d);
            let split = if pure || depth_capped || idx.len() < 2 * cfg.min_samples_leaf {
                None
            } else {
                best_split(rows, labels, n_classes, &idx, &counts, cfg, rng, &mut scratch)
            };
            match split {
                None => nodes.push(Node::Leaf { counts }),
                Some(c) => {
                    nodes.push(Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left: 0,
                        right: 0,
                    });
                    let (l, r): (Vec<usize>, Vec<usize>) = idx
                        .into_iter()
                        .partition(|&i| rows.get(i, c.feature) <= c.threshold);
                    // right pushed first so the left subtree is numbered first
                    stack.push((r, depth + 1, id, true));
                    stack.push((l, depth + 1, id, false));
                }
            }
        }
        Tree { nodes }
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut n = 0;
        loop {
            match &self.nodes[n] {
                Node::Leaf { .. } => return n,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => n = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn leaf_counts(&self, x: &[f64]) -> &[u32] {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { counts } => counts,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    /// Adds `weight * leaf class frequencies` into `out`.
    pub fn accumulate_proba(&self, x: &[f64], weight: f64, out: &mut [f64]) {
        let counts = self.leaf_counts(x);
        let total: u32 = counts.iter().sum();
        if total == 0 {
            return;
        }
        let scale = weight / f64::from(total);
        for (o, &c) in out.iter_mut().zip(counts) {
            *o += f64::from(c) * scale;
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, n: usize) -> usize {
            match &t.nodes[n] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    /// Structural checks for trees read from disk.
    pub(crate) fn validate(&self, n_features: usize, n_classes: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                Node::Leaf { counts } => {
                    if counts.len() != n_classes {
                        return Err(format!("leaf {i} has {} class counts", counts.len()));
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= n_features || !threshold.is_finite() {
                        return Err(format!("split {i} is malformed"));
                    }
                    if *left <= i || *right <= i || *left >= self.nodes.len() || *right >= self.nodes.len() {
                        return Err(format!("split {i} has invalid children"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn best_split<R: Rng>(
    rows: &crate::matrix::Matrix,
    labels: &[usize],
    n_classes: usize,
    idx: &[usize],
    counts: &[u32],
    cfg: &TreeConfig,
    rng: &mut R,
    scratch: &mut Vec<(f64, usize)>,
) -> Option<Candidate> {
    let d = rows.cols();
    let mut best: Option<Candidate> = None;
    let mut evaluate = |features: &[usize], best: &mut Option<Candidate>| {
        for &f in features {
            if let Some(c) = best_split_on(rows, labels, n_classes, idx, counts, f, cfg, scratch) {
                if best.as_ref().map_or(true, |b| c.impurity < b.impurity) {
                    *best = Some(c);
                }
            }
        }
    };
    match cfg.max_features {
        Some(mf) if mf < d => {
            let mut perm: Vec<usize> = (0..d).collect();
            perm.shuffle(rng);
            let mut first: Vec<usize> = perm[..mf].to_vec();
            first.sort_unstable();
            evaluate(&first, &mut best);
            // keep drawing features until some valid partition exists
            for &f in &perm[mf..] {
                if best.is_some() {
                    break;
                }
                evaluate(&[f], &mut best);
            }
        }
        _ => {
            let all: Vec<usize> = (0..d).collect();
            evaluate(&all, &mut best);
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn best_split_on(
    rows: &crate::matrix::Matrix,
    labels: &[usize],
    n_classes: usize,
    idx: &[usize],
    counts: &[u32],
    feature: usize,
    cfg: &TreeConfig,
    scratch: &mut Vec<(f64, usize)>,
) -> Option<Candidate> {
    scratch.clear();
    scratch.extend(idx.iter().map(|&i| (rows.get(i, feature), labels[i])));
    scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let n = scratch.len();
    if scratch[0].0 == scratch[n - 1].0 {
        return None;
    }
    let total: Vec<f64> = counts.iter().map(|&c| f64::from(c)).collect();
    let mut left = vec![0.0; n_classes];
    let mut best: Option<Candidate> = None;
    let msl = cfg.min_samples_leaf.max(1);
    for i in 0..n - 1 {
        left[scratch[i].1] += 1.0;
        let nl = (i + 1) as f64;
        if i + 1 < msl || n - i - 1 < msl {
            continue;
        }
        let (x, next) = (scratch[i].0, scratch[i + 1].0);
        if x == next {
            continue;
        }
        let nr = n as f64 - nl;
        let mut sl = 0.0;
        let mut sr = 0.0;
        for k in 0..n_classes {
            sl += left[k] * left[k];
            let r = total[k] - left[k];
            sr += r * r;
        }
        // n * weighted Gini = nl - sl/nl + nr - sr/nr
        let impurity = (nl - sl / nl) + (nr - sr / nr);
        if best.as_ref().map_or(true, |b| impurity < b.impurity) {
            let mut threshold = x + (next - x) / 2.0;
            if threshold >= next {
                threshold = x;
            }
            best = Some(Candidate {
                impurity,
                feature,
                threshold,
            });
        }
    }
    best
}
