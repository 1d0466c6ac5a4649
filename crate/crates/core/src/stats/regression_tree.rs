//! One-feature CART regression tree (squared-error splits).

use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 4, min_leaf: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
#[serde(bound(serialize = "F: Serialize", deserialize = "F: Deserialize<'de>"))]
pub enum RegressionNode<F> {
    Leaf {
        value: F,
        n: usize,
    },
    /// `input <= threshold` goes left.
    Split {
        threshold: F,
        left: Box<RegressionNode<F>>,
        right: Box<RegressionNode<F>>,
    },
}

/// Predicts `next` from `prev` by the mean of the training targets in the
/// leaf that `prev` falls into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Serialize", deserialize = "F: Deserialize<'de>"))]
pub struct RegressionTree<F> {
    pub root: RegressionNode<F>,
}

impl<F: Float> RegressionTree<F> {
    pub fn fit(x: &[F], y: &[F], params: TreeParams) -> Self {
        assert_eq!(x.len(), y.len(), "tree needs paired samples");
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(std::cmp::Ordering::Equal));
        let xs: Vec<F> = order.iter().map(|&i| x[i]).collect();
        let ys: Vec<F> = order.iter().map(|&i| y[i]).collect();
        RegressionTree { root: build(&xs, &ys, 0, params) }
    }

    pub fn predict(&self, x: F) -> F {
        let mut node = &self.root;
        loop {
            match node {
                RegressionNode::Leaf { value, .. } => return *value,
                RegressionNode::Split { threshold, left, right } => {
                    node = if x <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaves(&self) -> usize {
        fn count<F>(n: &RegressionNode<F>) -> usize {
            match n {
                RegressionNode::Leaf { .. } => 1,
                RegressionNode::Split { left, right, .. } => count(left) + count(right),
            }
        }
        count(&self.root)
    }

    pub fn depth(&self) -> usize {
        fn d<F>(n: &RegressionNode<F>) -> usize {
            match n {
                RegressionNode::Leaf { .. } => 0,
                RegressionNode::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }

    pub fn is_finite(&self) -> bool {
        fn ok<F: Float>(n: &RegressionNode<F>) -> bool {
            match n {
                RegressionNode::Leaf { value, .. } => value.is_finite(),
                RegressionNode::Split { threshold, left, right } => threshold.is_finite() && ok(left) && ok(right),
            }
        }
        ok(&self.root)
    }
}

fn leaf<F: Float>(ys: &[F]) -> RegressionNode<F> {
    RegressionNode::Leaf { value: super::mean(ys), n: ys.len() }
}

/// `xs` is sorted ascending; `ys` is aligned with it.
fn build<F: Float>(xs: &[F], ys: &[F], depth: usize, params: TreeParams) -> RegressionNode<F> {
    let n = xs.len();
    let min_leaf = params.min_leaf.max(1);
    if depth >= params.max_depth || n < 2 * min_leaf {
        return leaf(ys);
    }
    // Prefix sums give the SSE of both sides of each cut in O(1).
    let total: F = ys.iter().fold(F::zero(), |a, &b| a + b);
    let total_sq: F = ys.iter().fold(F::zero(), |a, &b| a + b * b);
    let parent_sse = total_sq - total * total / F::from(n).unwrap();
    let mut best: Option<(F, usize)> = None;
    let (mut left_sum, mut left_sq) = (F::zero(), F::zero());
    for i in 0..n - 1 {
        left_sum = left_sum + ys[i];
        left_sq = left_sq + ys[i] * ys[i];
        let nl = i + 1;
        let nr = n - nl;
        if nl < min_leaf || nr < min_leaf || xs[i] == xs[i + 1] {
            continue;
        }
        let right_sum = total - left_sum;
        let right_sq = total_sq - left_sq;
        let sse = (left_sq - left_sum * left_sum / F::from(nl).unwrap())
            + (right_sq - right_sum * right_sum / F::from(nr).unwrap());
        if sse.is_finite() && best.is_none_or(|(b, _)| sse < b) {
            best = Some((sse, i));
        }
    }
    match best {
        Some((sse, i)) if sse < parent_sse - F::epsilon() * parent_sse.abs() => {
            let two = F::one() + F::one();
            let mut threshold = (xs[i] + xs[i + 1]) / two;
            if threshold >= xs[i + 1] {
                threshold = xs[i];
            }
            RegressionNode::Split {
                threshold,
                left: Box::new(build(&xs[..=i], &ys[..=i], depth + 1, params)),
                right: Box::new(build(&xs[i + 1..], &ys[i + 1..], depth + 1, params)),
            }
        }
        _ => leaf(ys),
    }
}
