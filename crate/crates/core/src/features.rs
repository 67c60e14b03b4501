//! Per-window feature aggregation and instance assembly.
//!
//! Raw modality streams are reduced to fixed-length vectors by computing a
//! configured set of statistics per channel over the samples falling in a
//! window, plus one global `sample_rate` feature. Windows missing a
//! modality entirely get an all-zero vector: zero activity is itself
//! signal, and fusion always needs all three inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EngagementLabel, Modality, SectionType, TimedSample, Window};

/// An aggregate statistic computed per channel within a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Count,
    Mean,
    /// Population standard deviation (defined for a single sample).
    Std,
    Min,
    Max,
    Range,
}

impl Statistic {
    pub const DEFAULT: [Statistic; 6] = [
        Statistic::Count,
        Statistic::Mean,
        Statistic::Std,
        Statistic::Min,
        Statistic::Max,
        Statistic::Range,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Count => "count",
            Statistic::Mean => "mean",
            Statistic::Std => "std",
            Statistic::Min => "min",
            Statistic::Max => "max",
            Statistic::Range => "range",
        }
    }

    fn compute(self, values: &[f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        let n = values.len() as f64;
        match self {
            Statistic::Count => n,
            Statistic::Mean => values.iter().sum::<f64>() / n,
            Statistic::Std => {
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                var.sqrt()
            }
            Statistic::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Statistic::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Statistic::Range => {
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                max - min
            }
        }
    }
}

/// Channels and statistics extracted for one modality.
///
/// The resulting vector layout is fixed: for each channel in order, each
/// statistic in order, then the trailing `sample_rate` feature
/// (in-window sample count divided by window length).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub channels: Vec<String>,
    #[serde(default = "default_stats")]
    pub stats: Vec<Statistic>,
}

fn default_stats() -> Vec<Statistic> {
    Statistic::DEFAULT.to_vec()
}

impl FeatureSchema {
    pub fn new(channels: Vec<String>, stats: Vec<Statistic>) -> FeatureSchema {
        FeatureSchema { channels, stats }
    }

    pub fn with_default_stats(channels: Vec<String>) -> FeatureSchema {
        FeatureSchema::new(channels, Statistic::DEFAULT.to_vec())
    }

    /// Number of features produced; at least 1 (`sample_rate`).
    pub fn feature_count(&self) -> usize {
        self.channels.len() * self.stats.len() + 1
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.feature_count());
        for ch in &self.channels {
            for st in &self.stats {
                names.push(format!("{ch}.{}", st.name()));
            }
        }
        names.push("sample_rate".to_string());
        names
    }

    /// The all-zero vector used for windows with no samples.
    pub fn zero_vector(&self, modality: Modality, window_index: usize) -> FeatureVector {
        FeatureVector {
            modality,
            window_index,
            names: self.feature_names(),
            values: vec![0.0; self.feature_count()],
        }
    }
}

/// Fixed-length feature vector for one (modality, window).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub modality: Modality,
    pub window_index: usize,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

/// A value per modality, in the fixed modality order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerModality<T> {
    pub appearance: T,
    pub context_performance: T,
    pub mouse: T,
}

impl<T> PerModality<T> {
    pub fn get(&self, m: Modality) -> &T {
        match m {
            Modality::Appearance => &self.appearance,
            Modality::ContextPerformance => &self.context_performance,
            Modality::Mouse => &self.mouse,
        }
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut T {
        match m {
            Modality::Appearance => &mut self.appearance,
            Modality::ContextPerformance => &mut self.context_performance,
            Modality::Mouse => &mut self.mouse,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Modality, &T)> {
        Modality::ALL.iter().map(move |&m| (m, self.get(m)))
    }

    pub fn map<U>(&self, mut f: impl FnMut(Modality, &T) -> U) -> PerModality<U> {
        PerModality {
            appearance: f(Modality::Appearance, &self.appearance),
            context_performance: f(Modality::ContextPerformance, &self.context_performance),
            mouse: f(Modality::Mouse, &self.mouse),
        }
    }

    pub fn try_map<U, E>(
        &self,
        mut f: impl FnMut(Modality, &T) -> Result<U, E>,
    ) -> Result<PerModality<U>, E> {
        Ok(PerModality {
            appearance: f(Modality::Appearance, &self.appearance)?,
            context_performance: f(Modality::ContextPerformance, &self.context_performance)?,
            mouse: f(Modality::Mouse, &self.mouse)?,
        })
    }
}

impl<T: Clone> PerModality<T> {
    pub fn splat(value: T) -> PerModality<T> {
        PerModality {
            appearance: value.clone(),
            context_performance: value.clone(),
            mouse: value,
        }
    }
}

/// One labeled analysis window with all three modality feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub student_id: String,
    pub session_id: String,
    pub window: Window,
    pub section: SectionType,
    pub features: PerModality<FeatureVector>,
    pub label: EngagementLabel,
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("non-finite value {value} in channel {channel:?} of {modality} sample at t={t_s} (session {session_id})")]
    NonFiniteValue {
        session_id: String,
        modality: Modality,
        t_s: f64,
        channel: String,
        value: f64,
    },
    #[error("sample modality {got} does not match requested {expected}")]
    ModalityMismatch { expected: Modality, got: Modality },
    #[error("duplicate feature vector for session {session_id}, window {window_index}, {modality}")]
    DuplicateFeatureVector {
        session_id: String,
        window_index: usize,
        modality: Modality,
    },
    #[error("feature vector for unknown window index {window_index} ({modality}, session {session_id})")]
    UnknownWindow {
        session_id: String,
        window_index: usize,
        modality: Modality,
    },
}

/// Aggregates one modality's samples inside a window into a feature vector.
///
/// Samples with `window.start_s <= t < window.end_s` contribute. A window
/// with no in-window samples yields count 0 and every other statistic 0.
pub fn extract_features(
    samples: &[TimedSample],
    modality: Modality,
    window: &Window,
    schema: &FeatureSchema,
) -> Result<FeatureVector, FeatureError> {
    let mut in_window: Vec<&TimedSample> = Vec::new();
    for s in samples {
        if s.modality != modality {
            return Err(FeatureError::ModalityMismatch {
                expected: modality,
                got: s.modality,
            });
        }
        if window.contains(s.t_s) {
            in_window.push(s);
        }
    }

    let mut values = Vec::with_capacity(schema.feature_count());
    let mut channel_values: Vec<f64> = Vec::with_capacity(in_window.len());
    for ch in &schema.channels {
        channel_values.clear();
        for s in &in_window {
            if let Some(&v) = s.channels.get(ch) {
                if !v.is_finite() {
                    return Err(FeatureError::NonFiniteValue {
                        session_id: s.session_id.clone(),
                        modality,
                        t_s: s.t_s,
                        channel: ch.clone(),
                        value: v,
                    });
                }
                channel_values.push(v);
            }
        }
        // Canonical value order makes the float sums, and therefore the
        // whole vector, invariant under reordering of the input samples.
        channel_values.sort_by(|a, b| a.total_cmp(b));
        for st in &schema.stats {
            values.push(st.compute(&channel_values));
        }
    }
    values.push(in_window.len() as f64 / window.len_s());

    Ok(FeatureVector {
        modality,
        window_index: window.index,
        names: schema.feature_names(),
        values,
    })
}

/// Assembles labeled instances from per-modality feature vectors.
///
/// `labels[i]` is the fused ground truth for `windows[i]`; `None` marks a
/// discarded window, which produces no instance. A window missing a
/// modality's vector gets that schema's all-zero vector.
pub fn build_instances(
    student_id: &str,
    session_id: &str,
    windows: &[Window],
    sections: &[SectionType],
    labels: &[Option<EngagementLabel>],
    vectors: Vec<FeatureVector>,
    schemas: &PerModality<FeatureSchema>,
) -> Result<Vec<Instance>, FeatureError> {
    assert_eq!(windows.len(), labels.len());
    assert_eq!(windows.len(), sections.len());

    let mut by_window: BTreeMap<(usize, usize), FeatureVector> = BTreeMap::new();
    for v in vectors {
        if v.window_index >= windows.len() {
            return Err(FeatureError::UnknownWindow {
                session_id: session_id.to_string(),
                window_index: v.window_index,
                modality: v.modality,
            });
        }
        let key = (v.window_index, v.modality.index());
        if by_window.contains_key(&key) {
            return Err(FeatureError::DuplicateFeatureVector {
                session_id: session_id.to_string(),
                window_index: v.window_index,
                modality: v.modality,
            });
        }
        by_window.insert(key, v);
    }

    let mut instances = Vec::new();
    for (i, window) in windows.iter().enumerate() {
        let Some(label) = labels[i] else { continue };
        let features = schemas.map(|m, schema| {
            by_window
                .remove(&(i, m.index()))
                .unwrap_or_else(|| schema.zero_vector(m, i))
        });
        instances.push(Instance {
            student_id: student_id.to_string(),
            session_id: session_id.to_string(),
            window: *window,
            section: sections[i],
            features,
            label,
        });
    }
    Ok(instances)
}
