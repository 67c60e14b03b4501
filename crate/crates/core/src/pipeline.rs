//! Composes windowing, section assignment, annotation fusion, and feature
//! extraction into labeled instances, session by session.

use thiserror::Error;

use crate::domain::{
    assign_section, fuse_annotations, make_windows, window_annotator_label, AnnotationSpan,
    DomainError, EngagementLabel, Modality, ScheduleSpan, TimedSample,
};
use crate::features::{
    build_instances, extract_features, FeatureError, FeatureSchema, Instance, PerModality,
};
use crate::simulate::SessionData;

/// Analysis window length and hop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowParams {
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for WindowParams {
    fn default() -> WindowParams {
        WindowParams {
            window_s: 8.0,
            hop_s: 4.0,
        }
    }
}

/// One session's raw inputs, as loaded from the data CSVs.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSession {
    pub session_id: String,
    pub student_id: String,
    pub schedule: Vec<ScheduleSpan>,
    /// All modalities, sorted by (modality, t_s).
    pub samples: Vec<TimedSample>,
    pub annotations: Vec<AnnotationSpan>,
}

impl From<&SessionData> for RawSession {
    fn from(s: &SessionData) -> RawSession {
        RawSession {
            session_id: s.session_id.clone(),
            student_id: s.student_id.clone(),
            schedule: s.schedule.clone(),
            samples: s.samples.clone(),
            annotations: s.annotations.clone(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("session {session} has an empty schedule")]
    EmptySchedule { session: String },
    #[error("session {session} has {got} annotators, expected exactly 3")]
    AnnotatorCount { session: String, got: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Builds the labeled instances of one session.
///
/// Session duration is the schedule's end. Each window gets the section
/// with the largest overlap, one mark per annotator, and a fused label;
/// discarded windows are dropped. Per modality, the in-window samples are
/// located by binary search, so samples must be sorted by time within
/// each modality.
pub fn session_instances(
    raw: &RawSession,
    wp: &WindowParams,
    schemas: &PerModality<FeatureSchema>,
) -> Result<Vec<Instance>, PipelineError> {
    let duration_s = raw
        .schedule
        .iter()
        .map(|s| s.end_s)
        .fold(f64::NEG_INFINITY, f64::max);
    if raw.schedule.is_empty() || !duration_s.is_finite() {
        return Err(PipelineError::EmptySchedule {
            session: raw.session_id.clone(),
        });
    }

    let windows = make_windows(duration_s, wp.window_s, wp.hop_s)?;
    let mut sections = Vec::with_capacity(windows.len());
    for w in &windows {
        sections.push(assign_section(w, &raw.schedule)?);
    }

    let labels = window_labels(raw, &windows)?;

    let mut vectors = Vec::with_capacity(windows.len() * 3);
    for modality in Modality::ALL {
        let samples: Vec<TimedSample> = raw
            .samples
            .iter()
            .filter(|s| s.modality == modality)
            .cloned()
            .collect();
        let schema = schemas.get(modality);
        for (w, label) in windows.iter().zip(&labels) {
            if label.is_none() {
                continue;
            }
            let lo = samples.partition_point(|s| s.t_s < w.start_s);
            let hi = samples.partition_point(|s| s.t_s < w.end_s);
            vectors.push(extract_features(&samples[lo..hi], modality, w, schema)?);
        }
    }

    Ok(build_instances(
        &raw.student_id,
        &raw.session_id,
        &windows,
        &sections,
        &labels,
        vectors,
        schemas,
    )?)
}

/// Per-window fused ground truth (`None` = discarded) for one session.
pub fn window_labels(
    raw: &RawSession,
    windows: &[crate::domain::Window],
) -> Result<Vec<Option<EngagementLabel>>, PipelineError> {
    let mut annotator_ids: Vec<&str> = raw
        .annotations
        .iter()
        .map(|a| a.annotator_id.as_str())
        .collect();
    annotator_ids.sort_unstable();
    annotator_ids.dedup();
    if annotator_ids.len() != 3 {
        return Err(PipelineError::AnnotatorCount {
            session: raw.session_id.clone(),
            got: annotator_ids.len(),
        });
    }
    let per_annotator: Vec<Vec<AnnotationSpan>> = annotator_ids
        .iter()
        .map(|id| {
            raw.annotations
                .iter()
                .filter(|a| a.annotator_id == *id)
                .cloned()
                .collect()
        })
        .collect();

    let mut labels = Vec::with_capacity(windows.len());
    for w in windows {
        let marks: Vec<_> = per_annotator
            .iter()
            .map(|spans| window_annotator_label(spans, w))
            .collect();
        labels.push(fuse_annotations(&marks)?);
    }
    Ok(labels)
}

/// Builds instances for every session, ordered by (student, session,
/// window index). Sessions are independent; they may be processed in
/// parallel without affecting the output.
pub fn dataset_instances(
    sessions: &[RawSession],
    wp: &WindowParams,
    schemas: &PerModality<FeatureSchema>,
) -> Result<Vec<Instance>, PipelineError> {
    let mut ordered: Vec<&RawSession> = sessions.iter().collect();
    ordered.sort_by(|a, b| {
        (&a.student_id, &a.session_id).cmp(&(&b.student_id, &b.session_id))
    });

    use rayon::prelude::*;
    let per_session: Result<Vec<Vec<Instance>>, PipelineError> = ordered
        .par_iter()
        .map(|raw| session_instances(raw, wp, schemas))
        .collect();
    Ok(per_session?.into_iter().flatten().collect())
}

/// Fraction of non-discarded windows whose fused label equals the
/// simulated truth; used to sanity-check annotator fusion on synthetic
/// sessions. Returns (agreeing, labeled, total windows).
pub fn fused_truth_agreement(
    session: &SessionData,
    wp: &WindowParams,
) -> Result<(usize, usize, usize), PipelineError> {
    let raw = RawSession::from(session);
    let duration_s = session
        .schedule
        .iter()
        .map(|s| s.end_s)
        .fold(0.0f64, f64::max);
    let windows = make_windows(duration_s, wp.window_s, wp.hop_s)?;
    let labels = window_labels(&raw, &windows)?;
    let mut agree = 0;
    let mut labeled = 0;
    for (w, label) in windows.iter().zip(&labels) {
        if let Some(label) = label {
            labeled += 1;
            if *label == session.truth.window_majority(w) {
                agree += 1;
            }
        }
    }
    Ok((agree, labeled, windows.len()))
}
