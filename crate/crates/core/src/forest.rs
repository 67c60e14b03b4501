//! From-scratch CART decision trees and bagged random forests.
//!
//! Everything here is deterministic given the inputs and a seed: feature
//! candidates are evaluated in ascending index order with ascending
//! midpoint thresholds, exact ties keep the first candidate, leaf-vote
//! ties resolve to `OnTask` (the lower class in the fixed order), and each
//! tree derives its own seed from the forest seed, so trees can be trained
//! in parallel with output identical to sequential training.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EngagementLabel, Modality};
use crate::seed;

/// Training-label counts for a node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub on_task: usize,
    pub off_task: usize,
}

impl ClassCounts {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a EngagementLabel>) -> ClassCounts {
        let mut counts = ClassCounts::default();
        for label in labels {
            counts.add(*label);
        }
        counts
    }

    pub fn add(&mut self, label: EngagementLabel) {
        match label {
            EngagementLabel::OnTask => self.on_task += 1,
            EngagementLabel::OffTask => self.off_task += 1,
        }
    }

    pub fn get(&self, label: EngagementLabel) -> usize {
        match label {
            EngagementLabel::OnTask => self.on_task,
            EngagementLabel::OffTask => self.off_task,
        }
    }

    pub fn total(&self) -> usize {
        self.on_task + self.off_task
    }

    pub fn is_pure(&self) -> bool {
        self.on_task == 0 || self.off_task == 0
    }

    /// Majority class; exact tie resolves to `OnTask`.
    pub fn argmax(&self) -> EngagementLabel {
        if self.off_task > self.on_task {
            EngagementLabel::OffTask
        } else {
            EngagementLabel::OnTask
        }
    }
}

/// Per-class vote fractions of a forest; values sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub on_task: f64,
    pub off_task: f64,
}

impl Confidence {
    pub fn get(&self, label: EngagementLabel) -> f64 {
        match label {
            EngagementLabel::OnTask => self.on_task,
            EngagementLabel::OffTask => self.off_task,
        }
    }
}

/// A binary threshold test; values `<= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature_index: usize,
    pub threshold: f64,
}

/// One CART tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        split: Split,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        counts: ClassCounts,
    },
}

impl TreeNode {
    /// Walks the tree and returns the reached leaf's class counts.
    pub fn leaf_counts(&self, x: &[f64]) -> &ClassCounts {
        match self {
            TreeNode::Leaf { counts } => counts,
            TreeNode::Internal { split, left, right } => {
                if x[split.feature_index] <= split.threshold {
                    left.leaf_counts(x)
                } else {
                    right.leaf_counts(x)
                }
            }
        }
    }

    /// The tree's vote for `x`: argmax of the reached leaf's counts.
    pub fn vote(&self, x: &[f64]) -> EngagementLabel {
        self.leaf_counts(x).argmax()
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Highest feature index referenced anywhere in the tree, if any.
    pub fn max_feature_index(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Internal { split, left, right } => {
                let mut m = split.feature_index;
                if let Some(l) = left.max_feature_index() {
                    m = m.max(l);
                }
                if let Some(r) = right.max_feature_index() {
                    m = m.max(r);
                }
                Some(m)
            }
        }
    }
}

/// Random-forest hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features sampled per node; `None` means `round(sqrt(d))`.
    pub mtry: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> ForestParams {
        ForestParams {
            n_trees: 100,
            max_depth: 12,
            min_samples_leaf: 2,
            mtry: None,
        }
    }
}

impl ForestParams {
    fn validate(&self, n_features: usize) -> Result<usize, ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::NonPositiveParam { name: "n_trees" });
        }
        if self.max_depth == 0 {
            return Err(ForestError::NonPositiveParam { name: "max_depth" });
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::NonPositiveParam {
                name: "min_samples_leaf",
            });
        }
        if n_features == 0 {
            return Err(ForestError::NoFeatures);
        }
        let mtry = match self.mtry {
            Some(0) => return Err(ForestError::NonPositiveParam { name: "mtry" }),
            Some(m) => m,
            None => ((n_features as f64).sqrt().round() as usize).max(1),
        };
        if mtry > n_features {
            return Err(ForestError::MtryTooLarge {
                mtry,
                n_features,
            });
        }
        Ok(mtry)
    }
}

/// A trained per-modality random forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub modality: Modality,
    pub trees: Vec<TreeNode>,
    pub feature_names: Vec<String>,
    pub params: ForestParams,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training rows have no features")]
    NoFeatures,
    #[error("class counts are all zero")]
    EmptyCounts,
    #[error("parameter {name} must be positive")]
    NonPositiveParam { name: &'static str },
    #[error("mtry {mtry} exceeds feature count {n_features}")]
    MtryTooLarge { mtry: usize, n_features: usize },
    #[error("feature arity mismatch: expected {expected}, got {got}")]
    ArityMismatch { expected: usize, got: usize },
}

/// A training row: feature values and label.
pub type Row<'a> = (&'a [f64], EngagementLabel);

/// Gini impurity `1 - sum((count/total)^2)`; in `[0, 0.5]` for two classes.
pub fn gini(counts: &ClassCounts) -> Result<f64, ForestError> {
    let total = counts.total();
    if total == 0 {
        return Err(ForestError::EmptyCounts);
    }
    Ok(gini_raw(counts.on_task, counts.off_task))
}

fn gini_raw(on: usize, off: usize) -> f64 {
    let total = (on + off) as f64;
    let p_on = on as f64 / total;
    let p_off = off as f64 / total;
    1.0 - p_on * p_on - p_off * p_off
}

/// Finds the impurity-minimizing threshold split over candidate features.
///
/// Thresholds are midpoints of consecutive distinct sorted values. Only
/// splits leaving at least `min_samples_leaf` rows on each side are
/// considered, and only splits with a strictly positive Gini decrease are
/// returned. Exact ties keep the lower feature index, then the lower
/// threshold.
pub fn best_split(
    rows: &[Row],
    candidate_features: &[usize],
    min_samples_leaf: usize,
) -> Option<(Split, f64)> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let parent = ClassCounts::from_labels(rows.iter().map(|(_, l)| l));
    let parent_gini = gini_raw(parent.on_task, parent.off_task);
    if parent_gini == 0.0 {
        return None;
    }

    let mut candidates: Vec<usize> = candidate_features.to_vec();
    candidates.sort_unstable();
    candidates.dedup();

    let mut best: Option<(Split, f64)> = None;
    let mut column: Vec<(f64, EngagementLabel)> = Vec::with_capacity(n);
    for &f in &candidates {
        column.clear();
        column.extend(rows.iter().map(|(x, l)| (x[f], *l)));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut left = ClassCounts::default();
        for i in 1..n {
            left.add(column[i - 1].1);
            let (prev, cur) = (column[i - 1].0, column[i].0);
            if prev == cur {
                continue;
            }
            if i < min_samples_leaf || n - i < min_samples_leaf {
                continue;
            }
            // Midpoint can round up to `cur` for adjacent floats; fall back
            // to `prev` so the left side stays exactly `values <= threshold`.
            let mid = (prev + cur) / 2.0;
            let threshold = if mid < cur { mid } else { prev };

            let right_on = parent.on_task - left.on_task;
            let right_off = parent.off_task - left.off_task;
            let weighted = (i as f64 / n as f64) * gini_raw(left.on_task, left.off_task)
                + ((n - i) as f64 / n as f64) * gini_raw(right_on, right_off);
            let decrease = parent_gini - weighted;
            if decrease > 0.0 && best.as_ref().is_none_or(|(_, d)| decrease > *d) {
                best = Some((
                    Split {
                        feature_index: f,
                        threshold,
                    },
                    decrease,
                ));
            }
        }
    }
    best
}

struct GrowContext {
    max_depth: usize,
    min_samples_leaf: usize,
    mtry: usize,
    n_features: usize,
}

fn grow(rows: &[Row], depth: usize, ctx: &GrowContext, rng: &mut impl Rng) -> TreeNode {
    let counts = ClassCounts::from_labels(rows.iter().map(|(_, l)| l));
    if depth >= ctx.max_depth || counts.is_pure() || rows.len() < 2 * ctx.min_samples_leaf {
        return TreeNode::Leaf { counts };
    }

    let candidates: Vec<usize> =
        rand::seq::index::sample(rng, ctx.n_features, ctx.mtry).into_vec();
    let Some((split, _)) = best_split(rows, &candidates, ctx.min_samples_leaf) else {
        return TreeNode::Leaf { counts };
    };

    let mut left_rows = Vec::with_capacity(rows.len());
    let mut right_rows = Vec::with_capacity(rows.len());
    for row in rows {
        if row.0[split.feature_index] <= split.threshold {
            left_rows.push(*row);
        } else {
            right_rows.push(*row);
        }
    }
    // Left subtree is grown first: the per-node feature draws consume the
    // generator in pre-order, which pins the tree for a given seed.
    let left = Box::new(grow(&left_rows, depth + 1, ctx, rng));
    let right = Box::new(grow(&right_rows, depth + 1, ctx, rng));
    TreeNode::Internal { split, left, right }
}

/// Trains a single CART tree; deterministic given rows, params, and seed.
pub fn train_tree(
    rows: &[Row],
    params: &ForestParams,
    seed: u64,
) -> Result<TreeNode, ForestError> {
    if rows.is_empty() {
        return Err(ForestError::EmptyTrainingSet);
    }
    let n_features = rows[0].0.len();
    check_arity(rows, n_features)?;
    let mtry = params.validate(n_features)?;
    let ctx = GrowContext {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        mtry,
        n_features,
    };
    let mut rng = seed::rng(seed);
    Ok(grow(rows, 0, &ctx, &mut rng))
}

fn check_arity(rows: &[Row], expected: usize) -> Result<(), ForestError> {
    for (x, _) in rows {
        if x.len() != expected {
            return Err(ForestError::ArityMismatch {
                expected,
                got: x.len(),
            });
        }
    }
    Ok(())
}

impl Forest {
    /// Trains a bagged forest: tree `i` is grown on a with-replacement
    /// bootstrap of the rows, with seeds derived as
    /// `mix(mix(seed, i), 0)` for the bootstrap draw and
    /// `mix(mix(seed, i), 1)` for the tree itself.
    pub fn train(
        modality: Modality,
        feature_names: Vec<String>,
        rows: &[Row],
        params: &ForestParams,
        seed: u64,
    ) -> Result<Forest, ForestError> {
        Forest::train_impl(modality, feature_names, rows, params, seed, true)
    }

    /// Test hook: identical to [`Forest::train`] but every tree sees the
    /// rows as-is instead of a bootstrap sample.
    pub fn train_without_bootstrap(
        modality: Modality,
        feature_names: Vec<String>,
        rows: &[Row],
        params: &ForestParams,
        seed: u64,
    ) -> Result<Forest, ForestError> {
        Forest::train_impl(modality, feature_names, rows, params, seed, false)
    }

    fn train_impl(
        modality: Modality,
        feature_names: Vec<String>,
        rows: &[Row],
        params: &ForestParams,
        seed: u64,
        bootstrap: bool,
    ) -> Result<Forest, ForestError> {
        if rows.is_empty() {
            return Err(ForestError::EmptyTrainingSet);
        }
        let n_features = rows[0].0.len();
        check_arity(rows, n_features)?;
        if feature_names.len() != n_features {
            return Err(ForestError::ArityMismatch {
                expected: feature_names.len(),
                got: n_features,
            });
        }
        params.validate(n_features)?;

        use rayon::prelude::*;
        let trees: Result<Vec<TreeNode>, ForestError> = (0..params.n_trees)
            .into_par_iter()
            .map(|i| {
                let tree_stream = seed::mix(seed, i as u64);
                if bootstrap {
                    let mut boot_rng = seed::rng(seed::mix(tree_stream, 0));
                    let sample: Vec<Row> = (0..rows.len())
                        .map(|_| rows[boot_rng.random_range(0..rows.len())])
                        .collect();
                    train_tree(&sample, params, seed::mix(tree_stream, 1))
                } else {
                    train_tree(rows, params, seed::mix(tree_stream, 1))
                }
            })
            .collect();

        Ok(Forest {
            modality,
            trees: trees?,
            feature_names,
            params: *params,
            seed,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ForestError> {
        if x.len() != self.n_features() {
            return Err(ForestError::ArityMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Per-class tree-vote counts; they always sum to `n_trees`.
    pub fn votes(&self, x: &[f64]) -> Result<ClassCounts, ForestError> {
        self.check_input(x)?;
        let mut votes = ClassCounts::default();
        for tree in &self.trees {
            votes.add(tree.vote(x));
        }
        Ok(votes)
    }

    /// Vote fractions: `votes(label) / n_trees`; sums to 1.
    pub fn confidence(&self, x: &[f64]) -> Result<Confidence, ForestError> {
        let votes = self.votes(x)?;
        let n = self.trees.len() as f64;
        Ok(Confidence {
            on_task: votes.on_task as f64 / n,
            off_task: votes.off_task as f64 / n,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<EngagementLabel, ForestError> {
        Ok(self.votes(x)?.argmax())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(on: usize, off: usize) -> ClassCounts {
        ClassCounts {
            on_task: on,
            off_task: off,
        }
    }

    #[test]
    fn gini_known_values() {
        assert_eq!(gini(&counts(5, 5)).unwrap(), 0.5);
        assert_eq!(gini(&counts(7, 0)).unwrap(), 0.0);
        assert!((gini(&counts(2, 1)).unwrap() - 4.0 / 9.0).abs() < 1e-12);
        assert_eq!(gini(&counts(0, 0)), Err(ForestError::EmptyCounts));
    }

    const ON: EngagementLabel = EngagementLabel::OnTask;
    const OFF: EngagementLabel = EngagementLabel::OffTask;

    #[test]
    fn best_split_four_rows() {
        let xs = [[1.0], [2.0], [3.0], [4.0]];
        let rows: Vec<Row> = vec![
            (&xs[0], ON),
            (&xs[1], ON),
            (&xs[2], OFF),
            (&xs[3], OFF),
        ];
        let (split, decrease) = best_split(&rows, &[0], 1).unwrap();
        assert_eq!(split.feature_index, 0);
        assert_eq!(split.threshold, 2.5);
        assert_eq!(decrease, 0.5);
    }

    #[test]
    fn best_split_none_on_pure_rows() {
        let xs = [[1.0], [2.0], [3.0]];
        let rows: Vec<Row> = xs.iter().map(|x| (&x[..], ON)).collect();
        assert_eq!(best_split(&rows, &[0], 1), None);
    }

    #[test]
    fn best_split_none_on_identical_features() {
        let xs = [[2.0], [2.0], [2.0]];
        let rows: Vec<Row> = vec![(&xs[0], ON), (&xs[1], OFF), (&xs[2], ON)];
        assert_eq!(best_split(&rows, &[0], 1), None);
    }

    #[test]
    fn best_split_honors_min_samples_leaf() {
        let xs = [[1.0], [2.0], [3.0], [4.0]];
        let rows: Vec<Row> = vec![
            (&xs[0], OFF),
            (&xs[1], ON),
            (&xs[2], ON),
            (&xs[3], ON),
        ];
        // Unrestricted optimum is 1.5 (perfect 1/3 split) ...
        let (split, _) = best_split(&rows, &[0], 1).unwrap();
        assert_eq!(split.threshold, 1.5);
        // ... but with min leaf 2 only the 2/2 split remains legal.
        let (split, decrease) = best_split(&rows, &[0], 2).unwrap();
        assert_eq!(split.threshold, 2.5);
        assert!(decrease > 0.0);
    }

    #[test]
    fn best_split_tie_breaks_to_lower_feature_and_threshold() {
        // Features 0 and 1 are copies: any split on one exists on the other
        // with the same decrease. The lower feature index must win.
        let xs = [[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]];
        let rows: Vec<Row> = vec![
            (&xs[0], ON),
            (&xs[1], ON),
            (&xs[2], OFF),
            (&xs[3], OFF),
        ];
        let (split, _) = best_split(&rows, &[1, 0], 1).unwrap();
        assert_eq!(split.feature_index, 0);
        assert_eq!(split.threshold, 2.5);
    }

    #[test]
    fn train_tree_on_pure_rows_is_single_leaf() {
        let xs = [[1.0], [2.0], [5.0]];
        let rows: Vec<Row> = xs.iter().map(|x| (&x[..], ON)).collect();
        let tree = train_tree(&rows, &ForestParams::default(), 7).unwrap();
        assert_eq!(
            tree,
            TreeNode::Leaf {
                counts: counts(3, 0)
            }
        );
    }

    #[test]
    fn train_tree_is_deterministic() {
        let rows = random_rows(60, 5, 11);
        let refs: Vec<Row> = rows.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
        let params = ForestParams {
            min_samples_leaf: 1,
            ..ForestParams::default()
        };
        let a = train_tree(&refs, &params, 99).unwrap();
        let b = train_tree(&refs, &params, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_tree_separable_rows_reach_full_accuracy() {
        let xs = [[1.0], [2.0], [3.0], [4.0]];
        let labels = [ON, ON, OFF, OFF];
        let rows: Vec<Row> = xs.iter().zip(labels).map(|(x, l)| (&x[..], l)).collect();
        let params = ForestParams {
            mtry: Some(1),
            min_samples_leaf: 1,
            ..ForestParams::default()
        };
        let tree = train_tree(&rows, &params, 3).unwrap();
        for (x, label) in &rows {
            assert_eq!(tree.vote(x), *label);
        }
    }

    #[test]
    fn train_tree_rejects_empty_input() {
        assert_eq!(
            train_tree(&[], &ForestParams::default(), 0),
            Err(ForestError::EmptyTrainingSet)
        );
    }

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<(Vec<f64>, EngagementLabel)> {
        let mut rng = crate::seed::rng(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
                // Noisy linear rule keeps both classes present.
                let noisy = x[0] + 0.3 * rng.random_range(-1.0..1.0);
                let label = if noisy > 0.0 { OFF } else { ON };
                (x, label)
            })
            .collect()
    }

    fn leaf_sizes_and_depths(
        node: &TreeNode,
        rows: &[Row],
        depth: usize,
        out: &mut Vec<(usize, usize)>,
    ) {
        match node {
            TreeNode::Leaf { .. } => out.push((rows.len(), depth)),
            TreeNode::Internal { split, left, right } => {
                let (l, r): (Vec<Row>, Vec<Row>) = rows
                    .iter()
                    .copied()
                    .partition(|(x, _)| x[split.feature_index] <= split.threshold);
                // Recompute the decrease this split achieved on its rows.
                let parent = ClassCounts::from_labels(rows.iter().map(|(_, l)| l));
                let lc = ClassCounts::from_labels(l.iter().map(|(_, l)| l));
                let rc = ClassCounts::from_labels(r.iter().map(|(_, l)| l));
                let weighted = (l.len() as f64 / rows.len() as f64)
                    * gini(&lc).unwrap()
                    + (r.len() as f64 / rows.len() as f64) * gini(&rc).unwrap();
                let decrease = gini(&parent).unwrap() - weighted;
                assert!(decrease > 0.0, "non-positive decrease at internal node");
                leaf_sizes_and_depths(left, &l, depth + 1, out);
                leaf_sizes_and_depths(right, &r, depth + 1, out);
            }
        }
    }

    #[test]
    fn tree_respects_depth_and_leaf_bounds() {
        let rows = random_rows(200, 6, 42);
        let refs: Vec<Row> = rows.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
        let params = ForestParams {
            max_depth: 4,
            min_samples_leaf: 5,
            ..ForestParams::default()
        };
        let tree = train_tree(&refs, &params, 1).unwrap();
        let mut leaves = Vec::new();
        leaf_sizes_and_depths(&tree, &refs, 0, &mut leaves);
        let total: usize = leaves.iter().map(|(n, _)| n).sum();
        assert_eq!(total, refs.len());
        for (size, depth) in leaves {
            assert!(depth <= 4);
            assert!(size >= params.min_samples_leaf);
        }
    }

    #[test]
    fn forest_with_one_tree_is_one_bootstrapped_tree() {
        let rows = random_rows(40, 3, 5);
        let refs: Vec<Row> = rows.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
        let params = ForestParams {
            n_trees: 1,
            ..ForestParams::default()
        };
        let forest = Forest::train(
            Modality::Mouse,
            vec!["a".into(), "b".into(), "c".into()],
            &refs,
            &params,
            17,
        )
        .unwrap();
        assert_eq!(forest.trees.len(), 1);
        let x = [0.0, 0.0, 0.0];
        assert_eq!(forest.predict(&x).unwrap(), forest.trees[0].vote(&x));
    }

    #[test]
    fn forest_training_is_byte_identical() {
        let rows = random_rows(50, 4, 23);
        let refs: Vec<Row> = rows.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
        let names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let params = ForestParams {
            n_trees: 8,
            ..ForestParams::default()
        };
        let a = Forest::train(Modality::Appearance, names.clone(), &refs, &params, 3).unwrap();
        let b = Forest::train(Modality::Appearance, names, &refs, &params, 3).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn single_class_forest_is_fully_confident() {
        let xs = [[1.0], [2.0], [3.0]];
        let rows: Vec<Row> = xs.iter().map(|x| (&x[..], OFF)).collect();
        let forest = Forest::train(
            Modality::ContextPerformance,
            vec!["v".into()],
            &rows,
            &ForestParams {
                n_trees: 5,
                ..ForestParams::default()
            },
            2,
        )
        .unwrap();
        let c = forest.confidence(&[9.0]).unwrap();
        assert_eq!(c.off_task, 1.0);
        assert_eq!(c.on_task, 0.0);
    }

    #[test]
    fn forest_rejects_arity_mismatch() {
        let rows = random_rows(10, 2, 1);
        let refs: Vec<Row> = rows.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
        let forest = Forest::train(
            Modality::Mouse,
            vec!["a".into(), "b".into()],
            &refs,
            &ForestParams {
                n_trees: 2,
                ..ForestParams::default()
            },
            0,
        )
        .unwrap();
        assert!(matches!(
            forest.votes(&[1.0]),
            Err(ForestError::ArityMismatch { .. })
        ));
    }

    #[test]
    fn forest_matches_plain_cart_without_bootstrap() {
        let rows = random_rows(80, 4, 31);
        let refs: Vec<Row> = rows.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
        let params = ForestParams {
            n_trees: 1,
            max_depth: usize::MAX,
            min_samples_leaf: 1,
            mtry: Some(4),
        };
        let forest = Forest::train_without_bootstrap(
            Modality::Appearance,
            (0..4).map(|i| format!("f{i}")).collect(),
            &refs,
            &params,
            555,
        )
        .unwrap();
        // With mtry = d the candidate set is always the full feature set,
        // so the forest's single tree equals a plain CART tree.
        let cart = train_tree(&refs, &params, 123).unwrap();
        let accuracy = |predict: &dyn Fn(&[f64]) -> EngagementLabel| {
            refs.iter()
                .filter(|(x, l)| predict(x) == *l)
                .count() as f64
                / refs.len() as f64
        };
        let forest_acc = accuracy(&|x| forest.predict(x).unwrap());
        let cart_acc = accuracy(&|x| cart.vote(x));
        assert_eq!(forest_acc, cart_acc);
    }

    proptest! {
        #[test]
        fn votes_always_sum_to_tree_count(seed in 0u64..200) {
            let rows = random_rows(30, 3, 77);
            let refs: Vec<Row> = rows.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
            let forest = Forest::train(
                Modality::Mouse,
                vec!["a".into(), "b".into(), "c".into()],
                &refs,
                &ForestParams { n_trees: 9, ..ForestParams::default() },
                4,
            ).unwrap();
            let mut rng = crate::seed::rng(seed);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let votes = forest.votes(&x).unwrap();
            prop_assert_eq!(votes.total(), 9);
            let c = forest.confidence(&x).unwrap();
            prop_assert!((c.on_task + c.off_task - 1.0).abs() < 1e-12);
        }
    }
}
