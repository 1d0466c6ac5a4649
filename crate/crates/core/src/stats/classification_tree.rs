//! Binary CART classifier over mixed numeric and categorical features
//! (Gini splits).

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassTreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ClassTreeParams {
    fn default() -> Self {
        ClassTreeParams { max_depth: 4, min_leaf: 20 }
    }
}

/// Test applied at an internal node. Rows passing it go to `yes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "snake_case")]
pub enum Predicate {
    /// Numeric feature `<= threshold`.
    Le { feature: usize, threshold: f64 },
    /// Categorical feature equal to `value`.
    Eq { feature: usize, value: String },
}

impl Predicate {
    pub fn feature(&self) -> usize {
        match self {
            Predicate::Le { feature, .. } | Predicate::Eq { feature, .. } => *feature,
        }
    }

    pub fn test(&self, row: &[Value]) -> bool {
        match self {
            Predicate::Le { feature, threshold } => row[*feature].as_num().is_some_and(|x| x <= *threshold),
            Predicate::Eq { feature, value } => row[*feature].as_cat() == Some(value.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum ClassNode {
    Leaf { pos: usize, neg: usize },
    Split { predicate: Predicate, yes: Box<ClassNode>, no: Box<ClassNode> },
}

/// One root-to-leaf path: the tests in order with the branch taken.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafPath<'a> {
    pub steps: Vec<(&'a Predicate, bool)>,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationTree {
    pub root: ClassNode,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Candidate {
    predicate: Predicate,
    impurity: f64,
}

fn best_split(rows: &[&[Value]], labels: &[bool], params: ClassTreeParams) -> Option<Candidate> {
    let n = rows.len();
    let total_pos = labels.iter().filter(|&&l| l).count();
    let parent = gini(total_pos, n) * n as f64;
    let mut best: Option<Candidate> = None;
    let mut consider = |predicate: Predicate, left_n: usize, left_pos: usize| {
        let right_n = n - left_n;
        if left_n < params.min_leaf || right_n < params.min_leaf {
            return;
        }
        let impurity = gini(left_pos, left_n) * left_n as f64 + gini(total_pos - left_pos, right_n) * right_n as f64;
        if impurity < parent - 1e-12 && best.as_ref().is_none_or(|b| impurity < b.impurity - 1e-12) {
            best = Some(Candidate { predicate, impurity });
        }
    };
    let width = rows.first().map_or(0, |r| r.len());
    for feature in 0..width {
        if rows[0][feature].as_num().is_some() {
            let mut pairs: Vec<(f64, bool)> =
                rows.iter().zip(labels).filter_map(|(r, &l)| r[feature].as_num().map(|x| (x, l))).collect();
            if pairs.len() != n {
                continue;
            }
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
            let mut left_pos = 0;
            for i in 0..n - 1 {
                left_pos += usize::from(pairs[i].1);
                if pairs[i].0 < pairs[i + 1].0 {
                    let threshold = pairs[i].0 + (pairs[i + 1].0 - pairs[i].0) / 2.0;
                    consider(Predicate::Le { feature, threshold }, i + 1, left_pos);
                }
            }
        } else {
            let values: BTreeSet<&str> = rows.iter().filter_map(|r| r[feature].as_cat()).collect();
            if values.len() < 2 {
                continue;
            }
            for v in values {
                let (mut left_n, mut left_pos) = (0, 0);
                for (r, &l) in rows.iter().zip(labels) {
                    if r[feature].as_cat() == Some(v) {
                        left_n += 1;
                        left_pos += usize::from(l);
                    }
                }
                consider(Predicate::Eq { feature, value: v.to_string() }, left_n, left_pos);
            }
        }
    }
    best
}

fn build(rows: &[&[Value]], labels: &[bool], depth: usize, params: ClassTreeParams) -> ClassNode {
    let pos = labels.iter().filter(|&&l| l).count();
    let leaf = ClassNode::Leaf { pos, neg: labels.len() - pos };
    if depth >= params.max_depth || pos == 0 || pos == labels.len() || labels.len() < 2 * params.min_leaf.max(1) {
        return leaf;
    }
    let Some(split) = best_split(rows, labels, params) else { return leaf };
    let (mut yes_rows, mut yes_labels, mut no_rows, mut no_labels) = (vec![], vec![], vec![], vec![]);
    for (r, &l) in rows.iter().zip(labels) {
        if split.predicate.test(r) {
            yes_rows.push(*r);
            yes_labels.push(l);
        } else {
            no_rows.push(*r);
            no_labels.push(l);
        }
    }
    ClassNode::Split {
        yes: Box::new(build(&yes_rows, &yes_labels, depth + 1, params)),
        no: Box::new(build(&no_rows, &no_labels, depth + 1, params)),
        predicate: split.predicate,
    }
}

impl ClassificationTree {
    /// Fits on `rows` (one value per feature, each feature of a single kind)
    /// against boolean `labels`.
    pub fn fit<R: AsRef<[Value]>>(rows: &[R], labels: &[bool], params: ClassTreeParams) -> Self {
        assert_eq!(rows.len(), labels.len(), "one label per row");
        let rows: Vec<&[Value]> = rows.iter().map(AsRef::as_ref).collect();
        ClassificationTree { root: build(&rows, labels, 0, params) }
    }

    fn leaf(&self, row: &[Value]) -> (usize, usize) {
        let mut node = &self.root;
        loop {
            match node {
                ClassNode::Leaf { pos, neg } => return (*pos, *neg),
                ClassNode::Split { predicate, yes, no } => {
                    node = if predicate.test(row) { yes } else { no };
                }
            }
        }
    }

    /// Majority label of the leaf `row` reaches; ties predict false.
    pub fn predict(&self, row: &[Value]) -> bool {
        let (pos, neg) = self.leaf(row);
        pos > neg
    }

    pub fn accuracy<R: AsRef<[Value]>>(&self, rows: &[R], labels: &[bool]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let hits = rows.iter().zip(labels).filter(|(r, &l)| self.predict(r.as_ref()) == l).count();
        hits as f64 / rows.len() as f64
    }

    pub fn depth(&self) -> usize {
        fn go(n: &ClassNode) -> usize {
            match n {
                ClassNode::Leaf { .. } => 0,
                ClassNode::Split { yes, no, .. } => 1 + go(yes).max(go(no)),
            }
        }
        go(&self.root)
    }

    pub fn paths(&self) -> Vec<LeafPath<'_>> {
        fn go<'a>(n: &'a ClassNode, steps: &mut Vec<(&'a Predicate, bool)>, out: &mut Vec<LeafPath<'a>>) {
            match n {
                ClassNode::Leaf { pos, neg } => out.push(LeafPath { steps: steps.clone(), pos: *pos, neg: *neg }),
                ClassNode::Split { predicate, yes, no } => {
                    steps.push((predicate, true));
                    go(yes, steps, out);
                    steps.pop();
                    steps.push((predicate, false));
                    go(no, steps, out);
                    steps.pop();
                }
            }
        }
        let mut out = Vec::new();
        go(&self.root, &mut Vec::new(), &mut out);
        out
    }
}

/// Mean held-out accuracy over `folds` folds, row `i` belonging to fold
/// `i mod folds`. Folds with no training or no test rows are skipped.
pub fn cross_validated_accuracy<R: AsRef<[Value]>>(
    rows: &[R],
    labels: &[bool],
    params: ClassTreeParams,
    folds: usize,
) -> f64 {
    let folds = folds.max(2);
    let (mut hits, mut seen) = (0usize, 0usize);
    for k in 0..folds {
        let (mut train_rows, mut train_labels) = (Vec::new(), Vec::new());
        let mut test = Vec::new();
        for (i, (r, &l)) in rows.iter().zip(labels).enumerate() {
            if i % folds == k {
                test.push((r.as_ref(), l));
            } else {
                train_rows.push(r.as_ref());
                train_labels.push(l);
            }
        }
        if train_rows.is_empty() || test.is_empty() {
            continue;
        }
        let tree = ClassificationTree::fit(&train_rows, &train_labels, params);
        hits += test.iter().filter(|(r, l)| tree.predict(r) == *l).count();
        seen += test.len();
    }
    if seen == 0 {
        0.0
    } else {
        hits as f64 / seen as f64
    }
}
