//! Decision-level fusion of the per-modality forests.
//!
//! Two routes produce the fused label. `fuse_pooled` merges every tree of
//! every forest into one pool and takes the majority over all tree votes;
//! `fuse_confidence_sum` sums each forest's per-class vote fractions and
//! takes the argmax. When all forests have the same tree count the two
//! routes agree on every input, ties included; both break exact ties
//! toward `OnTask`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EngagementLabel, Modality};
use crate::forest::{ClassCounts, Forest, ForestError, TreeNode};

/// Tolerance for tie detection on summed confidence fractions. Distinct
/// vote totals differ by at least `1 / n_trees`, many orders of magnitude
/// above this; exact ties accumulate only rounding error, far below it.
const TIE_EPS: f64 = 1e-9;

/// The union of all trees across modality forests, each tagged with its
/// source modality, in (modality order, tree index) order.
#[derive(Debug, Clone)]
pub struct FusionPool<'a> {
    entries: Vec<(Modality, &'a TreeNode)>,
    arity: BTreeMap<Modality, usize>,
}

impl FusionPool<'_> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn modalities(&self) -> impl Iterator<Item = Modality> + '_ {
        self.arity.keys().copied()
    }

    pub fn entries(&self) -> &[(Modality, &TreeNode)] {
        &self.entries
    }
}

/// Per-modality feature vectors supplied to a fusion call.
pub type ModalityFeatures<'a> = BTreeMap<Modality, &'a [f64]>;

/// Summed per-class confidence across forests; totals the forest count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedScores {
    pub on_task: f64,
    pub off_task: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("cannot pool an empty forest set")]
    EmptyForestSet,
    #[error("two forests share modality {0}")]
    DuplicateModality(Modality),
    #[error("no feature vector supplied for modality {0}")]
    MissingModality(Modality),
    #[error("feature vector for {modality} has arity {got}, forest expects {expected}")]
    InputArity {
        modality: Modality,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Forest(#[from] ForestError),
}

/// Concatenates all trees of the given forests into one decision pool.
pub fn pool_trees<'a>(forests: &[&'a Forest]) -> Result<FusionPool<'a>, FusionError> {
    if forests.is_empty() {
        return Err(FusionError::EmptyForestSet);
    }
    let mut sorted: Vec<&Forest> = forests.to_vec();
    sorted.sort_by_key(|f| f.modality);
    let mut arity = BTreeMap::new();
    for f in &sorted {
        if arity.insert(f.modality, f.n_features()).is_some() {
            return Err(FusionError::DuplicateModality(f.modality));
        }
    }
    if sorted
        .windows(2)
        .any(|w| w[0].n_trees() != w[1].n_trees())
    {
        log::warn!(
            "pooling forests with unequal tree counts; pooled voting then \
             weighs modalities by tree count and no longer matches the \
             confidence-sum rule"
        );
    }
    let entries = sorted
        .iter()
        .flat_map(|f| f.trees.iter().map(|t| (f.modality, t)))
        .collect();
    Ok(FusionPool { entries, arity })
}

fn feature_slice<'a>(
    x: &ModalityFeatures<'a>,
    modality: Modality,
    expected: usize,
) -> Result<&'a [f64], FusionError> {
    let slice = x
        .get(&modality)
        .copied()
        .ok_or(FusionError::MissingModality(modality))?;
    if slice.len() != expected {
        return Err(FusionError::InputArity {
            modality,
            expected,
            got: slice.len(),
        });
    }
    Ok(slice)
}

/// Majority vote over the pooled trees; each tree reads the feature vector
/// of its own modality. Exact vote ties resolve to `OnTask`.
pub fn fuse_pooled(
    pool: &FusionPool,
    x: &ModalityFeatures,
) -> Result<(EngagementLabel, ClassCounts), FusionError> {
    let mut slices: BTreeMap<Modality, &[f64]> = BTreeMap::new();
    for (&modality, &arity) in &pool.arity {
        slices.insert(modality, feature_slice(x, modality, arity)?);
    }
    let mut votes = ClassCounts::default();
    for (modality, tree) in &pool.entries {
        votes.add(tree.vote(slices[modality]));
    }
    Ok((votes.argmax(), votes))
}

/// Sums per-forest confidence values and picks the label with the highest
/// total. Ties (within floating-point tolerance) resolve to `OnTask`.
pub fn fuse_confidence_sum(
    forests: &[&Forest],
    x: &ModalityFeatures,
) -> Result<(EngagementLabel, FusedScores), FusionError> {
    if forests.is_empty() {
        return Err(FusionError::EmptyForestSet);
    }
    let mut seen = BTreeMap::new();
    for f in forests {
        if seen.insert(f.modality, ()).is_some() {
            return Err(FusionError::DuplicateModality(f.modality));
        }
    }
    let mut sorted: Vec<&Forest> = forests.to_vec();
    sorted.sort_by_key(|f| f.modality);

    let mut scores = FusedScores {
        on_task: 0.0,
        off_task: 0.0,
    };
    for f in sorted {
        let slice = feature_slice(x, f.modality, f.n_features())?;
        let c = f.confidence(slice)?;
        scores.on_task += c.on_task;
        scores.off_task += c.off_task;
    }
    let label = if scores.off_task > scores.on_task + TIE_EPS {
        EngagementLabel::OffTask
    } else {
        EngagementLabel::OnTask
    };
    Ok((label, scores))
}
