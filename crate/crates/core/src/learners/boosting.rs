use nalgebra::DMatrix;

use super::Model;
use crate::linalg::{logit, sigmoid};

/// L2 penalty on leaf values in the second-order split gain.
const LEAF_L2: f64 = 1.0;
const MIN_LEAF_ROWS: usize = 5;

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[(i, feature)] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// Gradient-boosted regression trees on the logistic loss.
#[derive(Debug, Clone)]
pub struct BoostedTrees {
    width: usize,
    init: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl BoostedTrees {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn margin(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>()
    }
}

impl Model for BoostedTrees {
    fn width(&self) -> usize {
        self.width
    }

    fn predict_raw(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| sigmoid(self.margin(x, i))).collect()
    }
}

/// Newton boosting: each round fits a depth-limited tree to the gradient and
/// Hessian of the log loss, with leaf values `-G / (H + l2)`.
pub fn fit(x: &DMatrix<f64>, y: &[f64], n_trees: usize, max_depth: usize, learning_rate: f64) -> BoostedTrees {
    let (n, k) = x.shape();
    let base = y.iter().sum::<f64>() / n as f64;
    let init = logit(base);
    let order: Vec<Vec<usize>> = (0..k)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut margin = vec![init; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = p - y[i];
            hess[i] = (p * (1.0 - p)).max(1e-12);
        }
        let tree = grow(x, &order, &grad, &hess, max_depth);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += learning_rate * tree.predict_row(x, i);
        }
        trees.push(tree);
    }
    BoostedTrees { width: k, init, learning_rate, trees }
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    order: &'a [Vec<usize>],
    grad: &'a [f64],
    hess: &'a [f64],
    nodes: Vec<Node>,
    member: Vec<usize>,
}

fn grow(x: &DMatrix<f64>, order: &[Vec<usize>], grad: &[f64], hess: &[f64], max_depth: usize) -> Tree {
    let mut g = Grower { x, order, grad, hess, nodes: Vec::new(), member: vec![0; x.nrows()] };
    let all: Vec<usize> = (0..x.nrows()).collect();
    g.build(&all, 0, max_depth);
    Tree { nodes: g.nodes }
}

impl Grower<'_> {
    fn build(&mut self, rows: &[usize], node_id: usize, depth_left: usize) -> usize {
        let at = self.nodes.len();
        let (gs, hs) = rows.iter().fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]));
        self.nodes.push(Node::Leaf(-gs / (hs + LEAF_L2)));
        if depth_left == 0 || rows.len() < 2 * MIN_LEAF_ROWS {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(rows, node_id, gs, hs) else {
            return at;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| self.x[(i, feature)] <= threshold);
        let left = self.build(&left_rows, 2 * node_id + 1, depth_left - 1);
        let right = self.build(&right_rows, 2 * node_id + 2, depth_left - 1);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }

    fn best_split(&mut self, rows: &[usize], node_id: usize, gs: f64, hs: f64) -> Option<(usize, f64)> {
        for &i in rows {
            self.member[i] = node_id + 1;
        }
        let tag = node_id + 1;
        let parent = gs * gs / (hs + LEAF_L2);
        let mut best: Option<(f64, usize, f64)> = None;
        for (f, sorted) in self.order.iter().enumerate() {
            let (mut gl, mut hl, mut count) = (0.0, 0.0, 0usize);
            let mut prev: Option<usize> = None;
            for &i in sorted {
                if self.member[i] != tag {
                    continue;
                }
                if let Some(p) = prev {
                    let (xp, xi) = (self.x[(p, f)], self.x[(i, f)]);
                    if xi > xp && count >= MIN_LEAF_ROWS && rows.len() - count >= MIN_LEAF_ROWS {
                        let (gr, hr) = (gs - gl, hs - hl);
                        let gain = gl * gl / (hl + LEAF_L2) + gr * gr / (hr + LEAF_L2) - parent;
                        if gain > 1e-12 && best.is_none_or(|(b, _, _)| gain > b) {
                            best = Some((gain, f, 0.5 * (xp + xi)));
                        }
                    }
                }
                gl += self.grad[i];
                hl += self.hess[i];
                count += 1;
                prev = Some(i);
            }
        }
        for &i in rows {
            self.member[i] = 0;
        }
        best.map(|(_, f, t)| (f, t))
    }
}
