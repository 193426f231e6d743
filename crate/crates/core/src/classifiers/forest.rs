//! CART trees with Gini impurity, bagged into a random forest.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{splitmix64, stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf { neg: usize, pos: usize },
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    pub fn predict(&self, row: &[f64]) -> bool {
        let mut n = self;
        loop {
            match n {
                Node::Leaf { neg, pos } => return pos >= neg,
                Node::Split { feature, threshold, left, right } => {
                    n = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: Node,
    /// Bootstrap row indices the tree was grown on.
    pub bootstrap: Vec<usize>,
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    max_depth: Option<usize>,
    min_leaf: usize,
    mtry: usize,
    rng: Stream,
}

fn gini(neg: usize, pos: usize) -> f64 {
    let n = (neg + pos) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = pos as f64 / n;
    2.0 * p * (1.0 - p)
}

impl Grower<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> Node {
        let pos = rows.iter().filter(|&&i| self.y[i]).count();
        let neg = rows.len() - pos;
        let leaf = Node::Leaf { neg, pos };
        if pos == 0 || neg == 0 || self.max_depth.is_some_and(|m| depth >= m) || rows.len() < 2 * self.min_leaf {
            return leaf;
        }
        let d = self.x[0].len();
        // Fisher–Yates over feature order: the first `mtry` are the candidates,
        // the rest are the fallback if none of them can split.
        let mut feats: Vec<usize> = (0..d).collect();
        for i in 0..d {
            let j = self.rng.random_range(i..d);
            feats.swap(i, j);
        }
        let mut best = self.best_split(rows, &feats[..self.mtry]);
        if best.is_none() {
            best = self.best_split(rows, &feats[self.mtry..]);
        }
        let Some((feature, threshold)) = best else { return leaf };
        let mid = partition(rows, |&i| self.x[i][feature] <= threshold);
        let (l, r) = rows.split_at_mut(mid);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        Node::Split { feature, threshold, left: Box::new(left), right: Box::new(right) }
    }

    /// Largest impurity decrease over midpoints of consecutive distinct
    /// values, respecting `min_leaf`; zero-gain splits are admissible.
    fn best_split(&self, rows: &[usize], feats: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let total_pos = rows.iter().filter(|&&i| self.y[i]).count();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut vals: Vec<(f64, bool)> = Vec::with_capacity(n);
        for &f in feats {
            vals.clear();
            vals.extend(rows.iter().map(|&i| (self.x[i][f], self.y[i])));
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for k in 1..n {
                left_pos += usize::from(vals[k - 1].1);
                if vals[k].0 == vals[k - 1].0 || k < self.min_leaf || n - k < self.min_leaf {
                    continue;
                }
                let right_pos = total_pos - left_pos;
                let impurity = (k as f64 * gini(k - left_pos, left_pos)
                    + (n - k) as f64 * gini(n - k - right_pos, right_pos))
                    / n as f64;
                let threshold = vals[k - 1].0 + (vals[k].0 - vals[k - 1].0) / 2.0;
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    best = Some((impurity, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn partition(rows: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let mut k = 0;
    for i in 0..rows.len() {
        if pred(&rows[i]) {
            rows.swap(i, k);
            k += 1;
        }
    }
    k
}

pub(crate) fn train_forest(
    x: &[Vec<f64>],
    y: &[bool],
    n_trees: usize,
    max_depth: Option<usize>,
    min_leaf: usize,
    seed: u64,
) -> Vec<Tree> {
    let n = x.len();
    let d = x[0].len();
    let mtry = (d as f64).sqrt().ceil() as usize;
    (0..n_trees)
        .map(|t| {
            let mut rng = stream(splitmix64(seed ^ t as u64));
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut rows = bootstrap.clone();
            let mut g = Grower { x, y, max_depth, min_leaf, mtry: mtry.min(d), rng };
            Tree { root: g.grow(&mut rows, 0), bootstrap }
        })
        .collect()
}

/// Majority of tree votes; a split vote counts as diseased.
pub(crate) fn predict_forest(trees: &[Tree], row: &[f64]) -> bool {
    let pos = trees.iter().filter(|t| t.root.predict(row)).count();
    2 * pos >= trees.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stump_on_separable_line() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..10).map(|i| i >= 6).collect();
        let mut rows: Vec<usize> = (0..10).collect();
        let mut g = Grower { x: &x, y: &y, max_depth: None, min_leaf: 1, mtry: 1, rng: stream(1) };
        let root = g.grow(&mut rows, 0);
        match &root {
            Node::Split { feature: 0, threshold, .. } => assert_eq!(*threshold, 5.5),
            other => panic!("expected split, got {other:?}"),
        }
        assert_eq!(root.depth(), 1);
    }

    #[test]
    fn depth_limit_and_min_leaf() {
        let x: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64, (i % 4) as f64]).collect();
        let y: Vec<bool> = (0..16).map(|i| (i / 2) % 2 == 0).collect();
        let trees = train_forest(&x, &y, 5, Some(2), 3, 9);
        for t in &trees {
            assert!(t.root.depth() <= 2);
        }
        fn leaves_ok(n: &Node, min: usize) -> bool {
            match n {
                Node::Leaf { neg, pos } => neg + pos >= min,
                Node::Split { left, right, .. } => leaves_ok(left, min) && leaves_ok(right, min),
            }
        }
        assert!(trees.iter().all(|t| leaves_ok(&t.root, 3)));
    }

    #[test]
    fn vote_tie_is_diseased() {
        let a = Tree { root: Node::Leaf { neg: 1, pos: 0 }, bootstrap: vec![] };
        let b = Tree { root: Node::Leaf { neg: 2, pos: 2 }, bootstrap: vec![] };
        assert!(b.root.predict(&[]));
        assert!(predict_forest(&[a.clone(), b], &[]));
        assert!(!predict_forest(&[a], &[]));
    }
}
