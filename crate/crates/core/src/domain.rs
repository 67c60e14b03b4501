//! Core vocabulary: engagement labels, modalities, analysis windows, and
//! multi-annotator ground-truth fusion.
//!
//! Windows are half-open intervals `[start_s, end_s)` laid out on a fixed
//! hop grid. Ground truth for a window is the 2-of-3 majority of the
//! annotators' per-window marks after validity filtering; windows without
//! a valid majority are discarded from training and evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Binary behavioral engagement state of a window.
///
/// `OnTask < OffTask` is the fixed class order used for every deterministic
/// tie-break in the pipeline (leaf votes, fusion, label argmax).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EngagementLabel {
    OnTask,
    OffTask,
}

impl EngagementLabel {
    pub const ALL: [EngagementLabel; 2] = [EngagementLabel::OnTask, EngagementLabel::OffTask];

    pub fn other(self) -> EngagementLabel {
        match self {
            EngagementLabel::OnTask => EngagementLabel::OffTask,
            EngagementLabel::OffTask => EngagementLabel::OnTask,
        }
    }
}

/// One annotator's mark for a window. `Invalid` never reaches final ground
/// truth; it models marks removed by validity filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnnotatorMark {
    OnTask,
    OffTask,
    Invalid,
}

/// Learning-task context of a window: video watching vs. question solving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SectionType {
    Instructional,
    Assessment,
}

impl SectionType {
    pub const ALL: [SectionType; 2] = [SectionType::Instructional, SectionType::Assessment];
}

/// One of the three input data streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    Appearance,
    ContextPerformance,
    Mouse,
}

impl Modality {
    pub const ALL: [Modality; 3] = [
        Modality::Appearance,
        Modality::ContextPerformance,
        Modality::Mouse,
    ];

    /// Position in the fixed modality order.
    pub fn index(self) -> usize {
        match self {
            Modality::Appearance => 0,
            Modality::ContextPerformance => 1,
            Modality::Mouse => 2,
        }
    }
}

macro_rules! impl_token_enum {
    ($ty:ty, $kind:literal, { $($variant:path => $token:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self {
                    $($variant => $token),+
                };
                f.write_str(s)
            }
        }

        impl FromStr for $ty {
            type Err = DomainError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($token => Ok($variant),)+
                    _ => Err(DomainError::UnknownToken {
                        kind: $kind,
                        token: s.to_string(),
                    }),
                }
            }
        }
    };
}

impl_token_enum!(EngagementLabel, "label", {
    EngagementLabel::OnTask => "OnTask",
    EngagementLabel::OffTask => "OffTask",
});

impl_token_enum!(AnnotatorMark, "mark", {
    AnnotatorMark::OnTask => "OnTask",
    AnnotatorMark::OffTask => "OffTask",
    AnnotatorMark::Invalid => "Invalid",
});

impl_token_enum!(SectionType, "section", {
    SectionType::Instructional => "Instructional",
    SectionType::Assessment => "Assessment",
});

impl_token_enum!(Modality, "modality", {
    Modality::Appearance => "Appearance",
    Modality::ContextPerformance => "ContextPerformance",
    Modality::Mouse => "Mouse",
});

/// One timestamped multi-channel reading from one modality stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedSample {
    pub student_id: String,
    pub session_id: String,
    pub modality: Modality,
    pub t_s: f64,
    /// Channel name -> value; names unique within a sample.
    pub channels: BTreeMap<String, f64>,
}

/// A fixed-length analysis window `[start_s, end_s)` on the hop grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl Window {
    pub fn len_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Whether timestamp `t` falls inside the half-open window.
    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }
}

/// A contiguous span `[start_s, end_s)` marked by one annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSpan {
    pub annotator_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub mark: AnnotatorMark,
}

/// A contiguous span of one section type within a session schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpan {
    pub start_s: f64,
    pub end_s: f64,
    pub section: SectionType,
}

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("invalid window parameters: duration={duration_s}, window={window_s}, hop={hop_s} (need duration >= 0, window > 0, 0 < hop <= window, all finite)")]
    InvalidWindowParams {
        duration_s: f64,
        window_s: f64,
        hop_s: f64,
    },
    #[error("window [{start_s}, {end_s}) overlaps no schedule span")]
    NoScheduleOverlap { start_s: f64, end_s: f64 },
    #[error("annotation fusion needs exactly 3 marks, got {got}")]
    AnnotationArity { got: usize },
    #[error("unknown {kind} token {token:?}")]
    UnknownToken { kind: &'static str, token: String },
}

/// Lays out analysis windows over `[0, duration_s)`.
///
/// Window `i` covers `[i*hop, i*hop + window)`; only windows fully inside
/// the session are emitted, so there is never a ragged tail window.
pub fn make_windows(
    duration_s: f64,
    window_s: f64,
    hop_s: f64,
) -> Result<Vec<Window>, DomainError> {
    let ok = duration_s.is_finite()
        && window_s.is_finite()
        && hop_s.is_finite()
        && duration_s >= 0.0
        && window_s > 0.0
        && hop_s > 0.0
        && hop_s <= window_s;
    if !ok {
        return Err(DomainError::InvalidWindowParams {
            duration_s,
            window_s,
            hop_s,
        });
    }

    let mut windows = Vec::new();
    let mut index = 0usize;
    loop {
        let start_s = index as f64 * hop_s;
        let end_s = start_s + window_s;
        if end_s > duration_s {
            break;
        }
        windows.push(Window {
            index,
            start_s,
            end_s,
        });
        index += 1;
    }
    Ok(windows)
}

fn overlap_len(a_start: f64, a_end: f64, b_start: f64, b_end: f64) -> f64 {
    (a_end.min(b_end) - a_start.max(b_start)).max(0.0)
}

/// Assigns a window the section type with the largest time overlap.
///
/// Exact overlap ties go to the earlier-starting schedule span.
pub fn assign_section(
    window: &Window,
    schedule: &[ScheduleSpan],
) -> Result<SectionType, DomainError> {
    let mut best: Option<(f64, f64, SectionType)> = None; // (overlap, span start, section)
    for span in schedule {
        let ov = overlap_len(window.start_s, window.end_s, span.start_s, span.end_s);
        if ov <= 0.0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((best_ov, best_start, _)) => {
                ov > best_ov || (ov == best_ov && span.start_s < best_start)
            }
        };
        if better {
            best = Some((ov, span.start_s, span.section));
        }
    }
    best.map(|(_, _, section)| section)
        .ok_or(DomainError::NoScheduleOverlap {
            start_s: window.start_s,
            end_s: window.end_s,
        })
}

/// Reduces one annotator's spans to a single mark for a window.
///
/// The mark covering the greatest duration wins; uncovered time counts as
/// `Invalid`, and any exact tie for the maximum also yields `Invalid`.
pub fn window_annotator_label(spans: &[AnnotationSpan], window: &Window) -> AnnotatorMark {
    let mut dur_on = 0.0;
    let mut dur_off = 0.0;
    let mut dur_invalid = 0.0;
    for span in spans {
        let ov = overlap_len(window.start_s, window.end_s, span.start_s, span.end_s);
        match span.mark {
            AnnotatorMark::OnTask => dur_on += ov,
            AnnotatorMark::OffTask => dur_off += ov,
            AnnotatorMark::Invalid => dur_invalid += ov,
        }
    }
    let uncovered = (window.len_s() - dur_on - dur_off - dur_invalid).max(0.0);
    dur_invalid += uncovered;

    if dur_on > dur_off && dur_on > dur_invalid {
        AnnotatorMark::OnTask
    } else if dur_off > dur_on && dur_off > dur_invalid {
        AnnotatorMark::OffTask
    } else {
        AnnotatorMark::Invalid
    }
}

/// Fuses exactly three annotator marks into a ground-truth label.
///
/// Returns `Some(label)` iff at least two marks are the same non-`Invalid`
/// label, `None` when the window must be discarded.
pub fn fuse_annotations(
    marks: &[AnnotatorMark],
) -> Result<Option<EngagementLabel>, DomainError> {
    if marks.len() != 3 {
        return Err(DomainError::AnnotationArity { got: marks.len() });
    }
    let on = marks.iter().filter(|m| **m == AnnotatorMark::OnTask).count();
    let off = marks.iter().filter(|m| **m == AnnotatorMark::OffTask).count();
    Ok(if on >= 2 {
        Some(EngagementLabel::OnTask)
    } else if off >= 2 {
        Some(EngagementLabel::OffTask)
    } else {
        None
    })
}
