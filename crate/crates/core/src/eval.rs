//! Evaluation protocol: splits, class balancing, metrics, and the
//! experiment runner producing the per-section, per-model F1 report.
//!
//! Two protocol modes exist. `loso` holds each student out once;
//! `holdout` keeps the first 80% of every student's windows (by time) for
//! training. Training sets are rebalanced `k` times by seeded random
//! undersampling; metrics are averaged arithmetically over repeats first,
//! then over folds in student-id order, so the result is independent of
//! execution order and thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EngagementLabel, Modality, SectionType};
use crate::features::{Instance, PerModality};
use crate::forest::{ClassCounts, Forest, ForestError, ForestParams, Row};
use crate::fusion::{fuse_pooled, pool_trees, FusionError, ModalityFeatures};
use crate::seed;

/// Split protocol for the experiment runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Loso,
    Holdout,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Loso => "loso",
            Protocol::Holdout => "holdout",
        })
    }
}

impl FromStr for Protocol {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loso" => Ok(Protocol::Loso),
            "holdout" => Ok(Protocol::Holdout),
            _ => Err(EvalError::UnknownProtocol(s.to_string())),
        }
    }
}

/// How per-class F1 values combine into an OVERALL row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverallScheme {
    Macro,
    Weighted,
}

impl fmt::Display for OverallScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverallScheme::Macro => "macro",
            OverallScheme::Weighted => "weighted",
        })
    }
}

impl FromStr for OverallScheme {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro" => Ok(OverallScheme::Macro),
            "weighted" => Ok(OverallScheme::Weighted),
            _ => Err(EvalError::UnknownScheme(s.to_string())),
        }
    }
}

/// A scored model column in the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Appearance,
    ContextPerformance,
    Mouse,
    Fusion,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Appearance,
        ModelKind::ContextPerformance,
        ModelKind::Mouse,
        ModelKind::Fusion,
    ];

    /// Column header used in rendered tables.
    pub fn short_name(self) -> &'static str {
        match self {
            ModelKind::Appearance => "Appr",
            ModelKind::ContextPerformance => "CP",
            ModelKind::Mouse => "Ms",
            ModelKind::Fusion => "FUSION",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Appearance => "Appearance",
            ModelKind::ContextPerformance => "ContextPerformance",
            ModelKind::Mouse => "Mouse",
            ModelKind::Fusion => "Fusion",
        })
    }
}

impl FromStr for ModelKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Appearance" => Ok(ModelKind::Appearance),
            "ContextPerformance" => Ok(ModelKind::ContextPerformance),
            "Mouse" => Ok(ModelKind::Mouse),
            "Fusion" => Ok(ModelKind::Fusion),
            _ => Err(EvalError::UnknownModel(s.to_string())),
        }
    }
}

/// Binary confusion counts with one class treated as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn from_pairs(
        pairs: &[(EngagementLabel, EngagementLabel)],
        positive: EngagementLabel,
    ) -> ConfusionMatrix {
        let mut m = ConfusionMatrix::default();
        for &(pred, truth) in pairs {
            match (pred == positive, truth == positive) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, true) => m.fn_ += 1,
                (false, false) => m.tn += 1,
            }
        }
        m
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// `F1 = 2tp / (2tp + fp + fn)`. When tp, fp, and fn are all zero the
/// value is undefined; it is reported as 0 with a warning.
pub fn f1_from_confusion(m: &ConfusionMatrix) -> f64 {
    let denom = 2 * m.tp + m.fp + m.fn_;
    if denom == 0 {
        log::warn!("F1 undefined (tp = fp = fn = 0); defining as 0");
        return 0.0;
    }
    2.0 * m.tp as f64 / denom as f64
}

/// Combines the two per-class F1 values into an OVERALL value.
pub fn overall_f1(
    f1_on: f64,
    f1_off: f64,
    supports: &ClassCounts,
    scheme: OverallScheme,
) -> Result<f64, EvalError> {
    match scheme {
        OverallScheme::Macro => Ok((f1_on + f1_off) / 2.0),
        OverallScheme::Weighted => {
            let total = supports.total();
            if total == 0 {
                return Err(EvalError::EmptySupports);
            }
            Ok(
                (supports.on_task as f64 * f1_on + supports.off_task as f64 * f1_off)
                    / total as f64,
            )
        }
    }
}

/// One train/test split. Indices point into the instance slice the fold
/// was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub test_student: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("unknown protocol {0:?} (expected \"loso\" or \"holdout\")")]
    UnknownProtocol(String),
    #[error("unknown overall scheme {0:?} (expected \"macro\" or \"weighted\")")]
    UnknownScheme(String),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("leave-one-subject-out needs at least 2 students, got {got}")]
    TooFewStudents { got: usize },
    #[error("train fraction must be in (0, 1), got {0}")]
    BadTrainFraction(f64),
    #[error("no instances to evaluate")]
    NoInstances,
    #[error("class {label} absent from training set of fold {fold:?}")]
    ClassAbsent {
        fold: String,
        label: EngagementLabel,
    },
    #[error("cannot weight an overall F1 with zero total support")]
    EmptySupports,
    #[error("report cell missing: no {section} windows were scored for {model}")]
    MissingReportCell {
        section: SectionType,
        model: ModelKind,
    },
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// One fold per student, ordered by student id; each student's instances
/// form the test set exactly once.
pub fn loso_folds(instances: &[Instance]) -> Result<Vec<Fold>, EvalError> {
    let mut by_student: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        by_student.entry(&inst.student_id).or_default().push(i);
    }
    if by_student.len() < 2 {
        return Err(EvalError::TooFewStudents {
            got: by_student.len(),
        });
    }
    let folds = by_student
        .iter()
        .map(|(student, test)| Fold {
            test_student: student.to_string(),
            train: instances
                .iter()
                .enumerate()
                .filter(|(_, inst)| inst.student_id != *student)
                .map(|(i, _)| i)
                .collect(),
            test: test.clone(),
        })
        .collect();
    Ok(folds)
}

/// Chronological per-student split: the first `ceil(fraction * n)` of each
/// student's windows (ordered by session, then window index) go to train,
/// the rest to test. Overlapping windows leak across random splits, which
/// is why the split is chronological.
pub fn holdout_split_per_student(
    instances: &[Instance],
    train_fraction: f64,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EvalError::BadTrainFraction(train_fraction));
    }
    let mut by_student: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        by_student.entry(&inst.student_id).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut idxs) in by_student {
        idxs.sort_by(|&a, &b| {
            (&instances[a].session_id, instances[a].window.index)
                .cmp(&(&instances[b].session_id, instances[b].window.index))
        });
        let n_train = (train_fraction * idxs.len() as f64).ceil() as usize;
        train.extend_from_slice(&idxs[..n_train.min(idxs.len())]);
        test.extend_from_slice(&idxs[n_train.min(idxs.len())..]);
    }
    Ok((train, test))
}

/// Builds the fold list for a protocol. Holdout yields a single fold
/// labeled `"holdout"`.
pub fn protocol_folds(
    instances: &[Instance],
    protocol: Protocol,
    train_fraction: f64,
) -> Result<Vec<Fold>, EvalError> {
    match protocol {
        Protocol::Loso => loso_folds(instances),
        Protocol::Holdout => {
            let (train, test) = holdout_split_per_student(instances, train_fraction)?;
            Ok(vec![Fold {
                test_student: "holdout".to_string(),
                train,
                test,
            }])
        }
    }
}

/// Undersamples the majority class uniformly at random (seeded) so both
/// class counts equal the minority count. The returned subset preserves
/// the original order of `train`.
pub fn balance(
    instances: &[Instance],
    train: &[usize],
    fold: &str,
    seed_value: u64,
) -> Result<Vec<usize>, EvalError> {
    let counts = ClassCounts::from_labels(train.iter().map(|&i| &instances[i].label));
    for label in EngagementLabel::ALL {
        if counts.get(label) == 0 {
            return Err(EvalError::ClassAbsent {
                fold: fold.to_string(),
                label,
            });
        }
    }
    let minority = counts.on_task.min(counts.off_task);
    let majority_label = if counts.on_task > counts.off_task {
        EngagementLabel::OnTask
    } else {
        EngagementLabel::OffTask
    };
    let majority_positions: Vec<usize> = (0..train.len())
        .filter(|&p| instances[train[p]].label == majority_label)
        .collect();

    let mut rng = seed::rng(seed_value);
    let mut keep = vec![true; train.len()];
    for p in &majority_positions {
        keep[*p] = false;
    }
    for chosen in rand::seq::index::sample(&mut rng, majority_positions.len(), minority) {
        keep[majority_positions[chosen]] = true;
    }
    Ok(train
        .iter()
        .enumerate()
        .filter(|(p, _)| keep[*p])
        .map(|(_, &i)| i)
        .collect())
}

/// Experiment configuration for [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub protocol: Protocol,
    pub repeats: usize,
    pub master_seed: u64,
    pub forest_params: PerModality<ForestParams>,
    pub fusion: bool,
    pub overall: OverallScheme,
    pub holdout_train_fraction: f64,
}

impl Default for EvalSettings {
    fn default() -> EvalSettings {
        EvalSettings {
            protocol: Protocol::Loso,
            repeats: 10,
            master_seed: 42,
            forest_params: PerModality::splat(ForestParams::default()),
            fusion: true,
            overall: OverallScheme::Weighted,
            holdout_train_fraction: 0.8,
        }
    }
}

impl EvalSettings {
    pub fn models(&self) -> Vec<ModelKind> {
        let mut models = vec![
            ModelKind::Appearance,
            ModelKind::ContextPerformance,
            ModelKind::Mouse,
        ];
        if self.fusion {
            models.push(ModelKind::Fusion);
        }
        models
    }
}

/// Predictions of every model for one test instance in one repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub instance: usize,
    pub truth: EngagementLabel,
    pub section: SectionType,
    pub per_modality: PerModality<EngagementLabel>,
    pub fusion: Option<EngagementLabel>,
    /// Fraction of pooled trees voting OnTask (present when fusion runs).
    pub fused_confidence_on: Option<f64>,
}

/// All predictions from one balanced training repeat of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatPredictions {
    pub repeat: usize,
    pub rows: Vec<PredictionRow>,
}

fn modality_rows<'a>(
    instances: &'a [Instance],
    subset: &[usize],
    modality: Modality,
) -> Vec<Row<'a>> {
    subset
        .iter()
        .map(|&i| {
            (
                instances[i].features.get(modality).values.as_slice(),
                instances[i].label,
            )
        })
        .collect()
}

/// Trains the three modality forests on one balanced subset.
pub fn train_modality_forests(
    instances: &[Instance],
    subset: &[usize],
    params: &PerModality<ForestParams>,
    seed_value: u64,
) -> Result<PerModality<Forest>, EvalError> {
    params.try_map(|modality, p| {
        let rows = modality_rows(instances, subset, modality);
        let names = instances[subset[0]].features.get(modality).names.clone();
        Forest::train(
            modality,
            names,
            &rows,
            p,
            seed::mix(seed_value, 1 + modality.index() as u64),
        )
        .map_err(EvalError::from)
    })
}

/// Runs `k` balanced training repeats for one fold and predicts its test
/// set with every model.
///
/// Repeat `j` derives its seed as `mix(base_seed, j)`; within a repeat,
/// stream 0 seeds the balancing draw and streams 1..=3 seed the
/// appearance, context-performance, and mouse forests.
pub fn run_repeats(
    instances: &[Instance],
    fold: &Fold,
    settings: &EvalSettings,
    base_seed: u64,
) -> Result<Vec<RepeatPredictions>, EvalError> {
    let mut out = Vec::with_capacity(settings.repeats);
    for j in 0..settings.repeats {
        let repeat_seed = seed::mix(base_seed, j as u64);
        let balanced = balance(
            instances,
            &fold.train,
            &fold.test_student,
            seed::mix(repeat_seed, 0),
        )?;
        let forests =
            train_modality_forests(instances, &balanced, &settings.forest_params, repeat_seed)?;
        let forest_refs = [
            &forests.appearance,
            &forests.context_performance,
            &forests.mouse,
        ];
        let pool = if settings.fusion {
            Some(pool_trees(&forest_refs)?)
        } else {
            None
        };

        let mut rows = Vec::with_capacity(fold.test.len());
        for &i in &fold.test {
            let inst = &instances[i];
            let per_modality = forests.try_map(|m, f| {
                f.predict(inst.features.get(m).values.as_slice())
                    .map_err(EvalError::from)
            })?;
            let (fusion, fused_confidence_on) = match &pool {
                Some(pool) => {
                    let x: ModalityFeatures = Modality::ALL
                        .iter()
                        .map(|&m| (m, inst.features.get(m).values.as_slice()))
                        .collect();
                    let (label, votes) = fuse_pooled(pool, &x)?;
                    let conf_on = votes.on_task as f64 / votes.total() as f64;
                    (Some(label), Some(conf_on))
                }
                None => (None, None),
            };
            rows.push(PredictionRow {
                instance: i,
                truth: inst.label,
                section: inst.section,
                per_modality,
                fusion,
                fused_confidence_on,
            });
        }
        out.push(RepeatPredictions { repeat: j, rows });
    }
    Ok(out)
}

/// Row kind within a (section, model) block of the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassRow {
    OnTask,
    OffTask,
    Overall,
}

impl ClassRow {
    pub const ALL: [ClassRow; 3] = [ClassRow::OnTask, ClassRow::OffTask, ClassRow::Overall];

    /// Label used in rendered tables.
    pub fn table_label(self) -> &'static str {
        match self {
            ClassRow::OnTask => "On-Task",
            ClassRow::OffTask => "Off-Task",
            ClassRow::Overall => "OVERALL",
        }
    }
}

impl fmt::Display for ClassRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassRow::OnTask => "OnTask",
            ClassRow::OffTask => "OffTask",
            ClassRow::Overall => "Overall",
        })
    }
}

impl FromStr for ClassRow {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "OnTask" => Ok(ClassRow::OnTask),
            "OffTask" => Ok(ClassRow::OffTask),
            "Overall" => Ok(ClassRow::Overall),
            _ => Err(EvalError::UnknownModel(s.to_string())),
        }
    }
}

/// One value in the final report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub section: SectionType,
    pub model: ModelKind,
    pub row: ClassRow,
    pub f1: f64,
    /// Summed truth-class support over contributing folds.
    pub support: usize,
}

/// Reproducibility metadata attached to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub master_seed: u64,
    pub protocol: Protocol,
    pub fold_count: usize,
    pub repeat_count: usize,
    pub overall_scheme: OverallScheme,
}

/// Per-section, per-model, per-class F1 results plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cells: Vec<ReportCell>,
    pub meta: RunMeta,
}

impl MetricsReport {
    pub fn cell(&self, section: SectionType, model: ModelKind, row: ClassRow) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.section == section && c.model == model && c.row == row)
            .map(|c| c.f1)
    }
}

fn model_prediction(row: &PredictionRow, model: ModelKind) -> Option<EngagementLabel> {
    match model {
        ModelKind::Appearance => Some(row.per_modality.appearance),
        ModelKind::ContextPerformance => Some(row.per_modality.context_performance),
        ModelKind::Mouse => Some(row.per_modality.mouse),
        ModelKind::Fusion => row.fusion,
    }
}

struct SectionModelMetrics {
    f1_on: f64,
    f1_off: f64,
    overall: f64,
    supports: ClassCounts,
}

fn section_model_metrics(
    rows: &[PredictionRow],
    section: SectionType,
    model: ModelKind,
    scheme: OverallScheme,
) -> Result<Option<SectionModelMetrics>, EvalError> {
    let pairs: Vec<(EngagementLabel, EngagementLabel)> = rows
        .iter()
        .filter(|r| r.section == section)
        .filter_map(|r| model_prediction(r, model).map(|p| (p, r.truth)))
        .collect();
    if pairs.is_empty() {
        return Ok(None);
    }
    let on = ConfusionMatrix::from_pairs(&pairs, EngagementLabel::OnTask);
    let off = ConfusionMatrix::from_pairs(&pairs, EngagementLabel::OffTask);
    let f1_on = f1_from_confusion(&on);
    let f1_off = f1_from_confusion(&off);
    let supports = ClassCounts {
        on_task: pairs
            .iter()
            .filter(|(_, t)| *t == EngagementLabel::OnTask)
            .count(),
        off_task: pairs
            .iter()
            .filter(|(_, t)| *t == EngagementLabel::OffTask)
            .count(),
    };
    let overall = overall_f1(f1_on, f1_off, &supports, scheme)?;
    Ok(Some(SectionModelMetrics {
        f1_on,
        f1_off,
        overall,
        supports,
    }))
}

/// Averages per-fold, per-repeat predictions into the final report.
///
/// For each (section, model): repeats are averaged within a fold first,
/// then folds are averaged in student-id order. Folds whose test set has
/// no windows of a section contribute nothing to that section; a section
/// with no contributing folds at all is an error, not a silent omission.
pub fn build_report(
    per_fold: &[Vec<RepeatPredictions>],
    settings: &EvalSettings,
) -> Result<MetricsReport, EvalError> {
    let models = settings.models();
    let mut cells = Vec::new();
    for section in SectionType::ALL {
        for &model in &models {
            let mut fold_on = Vec::new();
            let mut fold_off = Vec::new();
            let mut fold_overall = Vec::new();
            let mut supports = ClassCounts::default();
            for repeats in per_fold {
                let mut on_sum = 0.0;
                let mut off_sum = 0.0;
                let mut overall_sum = 0.0;
                let mut contributed = 0usize;
                let mut fold_supports = ClassCounts::default();
                for rep in repeats {
                    match section_model_metrics(&rep.rows, section, model, settings.overall)? {
                        Some(m) => {
                            on_sum += m.f1_on;
                            off_sum += m.f1_off;
                            overall_sum += m.overall;
                            contributed += 1;
                            fold_supports = m.supports;
                        }
                        None => break,
                    }
                }
                if contributed > 0 {
                    let k = contributed as f64;
                    fold_on.push(on_sum / k);
                    fold_off.push(off_sum / k);
                    fold_overall.push(overall_sum / k);
                    supports.on_task += fold_supports.on_task;
                    supports.off_task += fold_supports.off_task;
                }
            }
            if fold_on.is_empty() {
                return Err(EvalError::MissingReportCell { section, model });
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            cells.push(ReportCell {
                section,
                model,
                row: ClassRow::OnTask,
                f1: mean(&fold_on),
                support: supports.on_task,
            });
            cells.push(ReportCell {
                section,
                model,
                row: ClassRow::OffTask,
                f1: mean(&fold_off),
                support: supports.off_task,
            });
            cells.push(ReportCell {
                section,
                model,
                row: ClassRow::Overall,
                f1: mean(&fold_overall),
                support: supports.total(),
            });
        }
    }
    Ok(MetricsReport {
        cells,
        meta: RunMeta {
            master_seed: settings.master_seed,
            protocol: settings.protocol,
            fold_count: per_fold.len(),
            repeat_count: settings.repeats,
            overall_scheme: settings.overall,
        },
    })
}

/// Runs the full experiment: splits per the protocol, repeats per fold,
/// and report assembly. Deterministic for a given master seed; fold `i`
/// (in student-id order) derives its seed as `mix(master_seed, i)`.
pub fn evaluate(instances: &[Instance], settings: &EvalSettings) -> Result<MetricsReport, EvalError> {
    if instances.is_empty() {
        return Err(EvalError::NoInstances);
    }
    let folds = protocol_folds(instances, settings.protocol, settings.holdout_train_fraction)?;

    use rayon::prelude::*;
    let per_fold: Result<Vec<Vec<RepeatPredictions>>, EvalError> = folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| {
            run_repeats(
                instances,
                fold,
                settings,
                seed::mix(settings.master_seed, i as u64),
            )
        })
        .collect();
    build_report(&per_fold?, settings)
}
