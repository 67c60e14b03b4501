//! Synthetic classroom-session generator standing in for real data.
//!
//! Each session is a two-state Markov chain (on-task / off-task) sampled
//! at `dt_s` resolution with section-dependent transition probabilities.
//! Modality streams are Gaussian emissions conditioned on (modality,
//! section, state); annotators mark a non-overlapping grid of segments
//! with the segment's true majority state, degraded by per-annotator flip
//! and invalid noise, then adjacent equal marks merge into spans.
//!
//! The generator never claims realism. Its defaults are shaped so mouse
//! and context-performance channels carry no state signal during
//! instructional sections (nothing to interact with while watching a
//! video) but separate during assessment, while appearance separates in
//! both. Everything is deterministic given the master seed: session `i`
//! derives `mix(master_seed, i)`, and within a session streams 0..=4 seed
//! the state track, the three modality emitters, and the annotators.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    make_windows, AnnotationSpan, AnnotatorMark, DomainError, EngagementLabel, Modality,
    ScheduleSpan, SectionType, TimedSample, Window,
};
use crate::features::PerModality;
use crate::seed;

/// A value per section type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerSection<T> {
    pub instructional: T,
    pub assessment: T,
}

impl<T> PerSection<T> {
    pub fn get(&self, section: SectionType) -> &T {
        match section {
            SectionType::Instructional => &self.instructional,
            SectionType::Assessment => &self.assessment,
        }
    }
}

/// Per-step state transition probabilities within one section type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionProbs {
    pub on_to_off: f64,
    pub off_to_on: f64,
}

/// Mean and standard deviation of one Gaussian emission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: f64,
    pub std: f64,
}

/// Emission parameters of one channel for every (section, state) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub name: String,
    pub instructional_on: GaussianSpec,
    pub instructional_off: GaussianSpec,
    pub assessment_on: GaussianSpec,
    pub assessment_off: GaussianSpec,
}

impl ChannelSpec {
    pub fn params(&self, section: SectionType, state: EngagementLabel) -> GaussianSpec {
        match (section, state) {
            (SectionType::Instructional, EngagementLabel::OnTask) => self.instructional_on,
            (SectionType::Instructional, EngagementLabel::OffTask) => self.instructional_off,
            (SectionType::Assessment, EngagementLabel::OnTask) => self.assessment_on,
            (SectionType::Assessment, EngagementLabel::OffTask) => self.assessment_off,
        }
    }
}

/// One modality's sampling rate and channel emission models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityEmissions {
    pub sample_rate_hz: f64,
    pub channels: Vec<ChannelSpec>,
}

impl ModalityEmissions {
    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }
}

/// Flip and invalid probabilities of one simulated annotator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorNoise {
    pub p_flip: f64,
    pub p_invalid: f64,
}

/// One schedule entry; sessions alternate through these in order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub section: SectionType,
    pub duration_s: f64,
}

/// Full simulator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_students: usize,
    pub sessions_per_student: usize,
    pub duration_s: f64,
    /// State-track step; 1 s is fine-grained relative to 8 s windows.
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    /// Segment length of the annotators' non-overlapping marking grid.
    #[serde(default = "default_grid")]
    pub annotation_grid_s: f64,
    pub schedule: Vec<ScheduleEntry>,
    pub transitions: PerSection<TransitionProbs>,
    pub emissions: PerModality<ModalityEmissions>,
    pub annotators: Vec<AnnotatorNoise>,
    pub master_seed: u64,
}

fn default_dt() -> f64 {
    1.0
}

fn default_grid() -> f64 {
    4.0
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("{what} must be a probability in [0, 1], got {value}")]
    InvalidProbability { what: &'static str, value: f64 },
    #[error("{what} must be positive and finite, got {value}")]
    InvalidPositive { what: &'static str, value: f64 },
    #[error("emission std must be finite and >= 0, got {value} (channel {channel:?})")]
    InvalidStd { channel: String, value: f64 },
    #[error("schedule spans sum to {got} s but the session lasts {expected} s")]
    ScheduleCoverage { expected: f64, got: f64 },
    #[error("simulator needs exactly 3 annotators, got {got}")]
    AnnotatorCount { got: usize },
    #[error("session duration {duration_s} is not a whole number of {grid_s} s annotation segments")]
    GridNotAligned { duration_s: f64, grid_s: f64 },
    #[error("annotation grid windows must be sorted and non-overlapping")]
    OverlappingGrid,
    #[error("simulator needs at least one student and one session per student")]
    EmptyDataset,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_students == 0 || self.sessions_per_student == 0 {
            return Err(SimError::EmptyDataset);
        }
        for (what, value) in [
            ("duration_s", self.duration_s),
            ("dt_s", self.dt_s),
            ("annotation_grid_s", self.annotation_grid_s),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::InvalidPositive { what, value });
            }
        }
        let cells = self.duration_s / self.annotation_grid_s;
        if (cells - cells.round()).abs() > 1e-9 {
            return Err(SimError::GridNotAligned {
                duration_s: self.duration_s,
                grid_s: self.annotation_grid_s,
            });
        }
        let total: f64 = self.schedule.iter().map(|e| e.duration_s).sum();
        if (total - self.duration_s).abs() > 1e-9 {
            return Err(SimError::ScheduleCoverage {
                expected: self.duration_s,
                got: total,
            });
        }
        for e in &self.schedule {
            if !(e.duration_s.is_finite() && e.duration_s > 0.0) {
                return Err(SimError::InvalidPositive {
                    what: "schedule span duration",
                    value: e.duration_s,
                });
            }
        }
        for section in SectionType::ALL {
            let t = self.transitions.get(section);
            for (what, value) in [("on_to_off", t.on_to_off), ("off_to_on", t.off_to_on)] {
                if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                    return Err(SimError::InvalidProbability { what, value });
                }
            }
        }
        for (_, em) in self.emissions.iter() {
            if !(em.sample_rate_hz.is_finite() && em.sample_rate_hz > 0.0) {
                return Err(SimError::InvalidPositive {
                    what: "sample_rate_hz",
                    value: em.sample_rate_hz,
                });
            }
            for ch in &em.channels {
                for section in SectionType::ALL {
                    for state in EngagementLabel::ALL {
                        let g = ch.params(section, state);
                        if !(g.std.is_finite() && g.std >= 0.0) || !g.mean.is_finite() {
                            return Err(SimError::InvalidStd {
                                channel: ch.name.clone(),
                                value: g.std,
                            });
                        }
                    }
                }
            }
        }
        if self.annotators.len() != 3 {
            return Err(SimError::AnnotatorCount {
                got: self.annotators.len(),
            });
        }
        for a in &self.annotators {
            for (what, value) in [("p_flip", a.p_flip), ("p_invalid", a.p_invalid)] {
                if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                    return Err(SimError::InvalidProbability { what, value });
                }
            }
        }
        Ok(())
    }

    /// The schedule as absolute spans covering `[0, duration_s)`.
    pub fn schedule_spans(&self) -> Vec<ScheduleSpan> {
        let mut spans = Vec::with_capacity(self.schedule.len());
        let mut t = 0.0;
        for e in &self.schedule {
            spans.push(ScheduleSpan {
                start_s: t,
                end_s: t + e.duration_s,
                section: e.section,
            });
            t += e.duration_s;
        }
        spans
    }
}

fn section_at(spans: &[ScheduleSpan], t: f64) -> SectionType {
    for span in spans {
        if span.start_s <= t && t < span.end_s {
            return span.section;
        }
    }
    // t == duration lands here; clamp to the last span.
    spans.last().map(|s| s.section).unwrap_or(SectionType::Instructional)
}

/// Ground-truth engagement states at `dt_s` resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTrack {
    pub dt_s: f64,
    pub points: Vec<(f64, EngagementLabel)>,
}

impl StateTrack {
    /// State at time `t` (the step containing `t`).
    pub fn state_at(&self, t: f64) -> EngagementLabel {
        let i = (t / self.dt_s) as usize;
        self.points[i.min(self.points.len() - 1)].1
    }

    /// Majority state over `[window.start_s, window.end_s)`; exact step
    /// ties resolve to `OnTask`.
    pub fn window_majority(&self, window: &Window) -> EngagementLabel {
        let i0 = (window.start_s / self.dt_s).ceil() as usize;
        let i1 = ((window.end_s / self.dt_s).ceil() as usize).min(self.points.len());
        let mut on = 0usize;
        let mut off = 0usize;
        for &(_, state) in &self.points[i0.min(i1)..i1] {
            match state {
                EngagementLabel::OnTask => on += 1,
                EngagementLabel::OffTask => off += 1,
            }
        }
        if off > on {
            EngagementLabel::OffTask
        } else {
            EngagementLabel::OnTask
        }
    }
}

/// Samples the two-state Markov chain. The initial state is `OnTask`; the
/// transition into step `i` uses the section of the elapsed interval,
/// i.e. the section at step `i - 1`.
pub fn markov_states(config: &SimConfig, seed_value: u64) -> StateTrack {
    let spans = config.schedule_spans();
    let steps = (config.duration_s / config.dt_s).ceil() as usize;
    let mut rng = seed::rng(seed_value);
    let mut points = Vec::with_capacity(steps);
    let mut state = EngagementLabel::OnTask;
    for i in 0..steps {
        let t = i as f64 * config.dt_s;
        if i > 0 {
            let section = section_at(&spans, t - config.dt_s);
            let p = match state {
                EngagementLabel::OnTask => config.transitions.get(section).on_to_off,
                EngagementLabel::OffTask => config.transitions.get(section).off_to_on,
            };
            if rng.random_range(0.0..1.0) < p {
                state = state.other();
            }
        }
        points.push((t, state));
    }
    StateTrack {
        dt_s: config.dt_s,
        points,
    }
}

/// Emits one modality's sample stream over the whole session.
pub fn emit_modality(
    track: &StateTrack,
    modality: Modality,
    config: &SimConfig,
    student_id: &str,
    session_id: &str,
    seed_value: u64,
) -> Vec<TimedSample> {
    let spans = config.schedule_spans();
    let em = config.emissions.get(modality);
    let mut rng = seed::rng(seed_value);
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 / em.sample_rate_hz;
        if t >= config.duration_s {
            break;
        }
        let section = section_at(&spans, t);
        let state = track.state_at(t);
        let mut channels = std::collections::BTreeMap::new();
        for ch in &em.channels {
            let g = ch.params(section, state);
            // Validation guarantees std >= 0; Normal::new accepts 0.
            let dist = Normal::new(g.mean, g.std).expect("validated emission params");
            channels.insert(ch.name.clone(), dist.sample(&mut rng));
        }
        out.push(TimedSample {
            student_id: student_id.to_string(),
            session_id: session_id.to_string(),
            modality,
            t_s: t,
            channels,
        });
        k += 1;
    }
    out
}

/// Simulates the three annotators over a non-overlapping marking grid.
///
/// Per annotator and grid segment, the segment's true majority state is
/// replaced by `Invalid` with `p_invalid`, otherwise flipped with
/// `p_flip` (two draws are consumed per segment either way). Adjacent
/// segments with equal marks merge into one span.
pub fn simulate_annotators(
    track: &StateTrack,
    grid: &[Window],
    annotators: &[AnnotatorNoise],
    seed_value: u64,
) -> Result<Vec<Vec<AnnotationSpan>>, SimError> {
    for pair in grid.windows(2) {
        if pair[1].start_s < pair[0].end_s {
            return Err(SimError::OverlappingGrid);
        }
    }
    let mut all = Vec::with_capacity(annotators.len());
    for (a_idx, noise) in annotators.iter().enumerate() {
        let annotator_id = format!("a{}", a_idx + 1);
        let mut rng = seed::rng(seed::mix(seed_value, a_idx as u64));
        let mut spans: Vec<AnnotationSpan> = Vec::new();
        for w in grid {
            let truth = track.window_majority(w);
            let u_invalid: f64 = rng.random_range(0.0..1.0);
            let u_flip: f64 = rng.random_range(0.0..1.0);
            let mark = if u_invalid < noise.p_invalid {
                AnnotatorMark::Invalid
            } else if u_flip < noise.p_flip {
                match truth {
                    EngagementLabel::OnTask => AnnotatorMark::OffTask,
                    EngagementLabel::OffTask => AnnotatorMark::OnTask,
                }
            } else {
                match truth {
                    EngagementLabel::OnTask => AnnotatorMark::OnTask,
                    EngagementLabel::OffTask => AnnotatorMark::OffTask,
                }
            };
            match spans.last_mut() {
                Some(last) if last.mark == mark && last.end_s == w.start_s => {
                    last.end_s = w.end_s;
                }
                _ => spans.push(AnnotationSpan {
                    annotator_id: annotator_id.clone(),
                    start_s: w.start_s,
                    end_s: w.end_s,
                    mark,
                }),
            }
        }
        all.push(spans);
    }
    Ok(all)
}

/// All generated data of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionData {
    pub session_id: String,
    pub student_id: String,
    pub schedule: Vec<ScheduleSpan>,
    /// Samples of all modalities, ordered by (modality, t_s).
    pub samples: Vec<TimedSample>,
    /// Spans of all three annotators, flattened.
    pub annotations: Vec<AnnotationSpan>,
    /// Ground truth; kept in memory for checks, never written to CSV.
    pub truth: StateTrack,
}

/// A full synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sessions: Vec<SessionData>,
}

/// Generates one session from a session-level seed (streams 0..=4: state
/// track, appearance, context-performance, mouse, annotators).
pub fn generate_session(
    config: &SimConfig,
    student_id: &str,
    session_id: &str,
    session_seed: u64,
) -> Result<SessionData, SimError> {
    let track = markov_states(config, seed::mix(session_seed, 0));
    let mut samples = Vec::new();
    for m in Modality::ALL {
        samples.extend(emit_modality(
            &track,
            m,
            config,
            student_id,
            session_id,
            seed::mix(session_seed, 1 + m.index() as u64),
        ));
    }
    let grid = make_windows(
        config.duration_s,
        config.annotation_grid_s,
        config.annotation_grid_s,
    )?;
    let annotations = simulate_annotators(
        &track,
        &grid,
        &config.annotators,
        seed::mix(session_seed, 4),
    )?
    .into_iter()
    .flatten()
    .collect();
    Ok(SessionData {
        session_id: session_id.to_string(),
        student_id: student_id.to_string(),
        schedule: config.schedule_spans(),
        samples,
        annotations,
        truth: track,
    })
}

/// Generates the whole dataset; sessions are independent and derive their
/// seeds by index, so generation parallelizes without changing output.
pub fn generate_dataset(config: &SimConfig) -> Result<Dataset, SimError> {
    config.validate()?;
    let jobs: Vec<(String, String, u64)> = (0..config.n_students)
        .flat_map(|s| {
            (0..config.sessions_per_student).map(move |j| {
                let student = format!("stu{:02}", s + 1);
                let session = format!("{student}-s{:02}", j + 1);
                let index = (s * config.sessions_per_student + j) as u64;
                (student, session, index)
            })
        })
        .collect();

    use rayon::prelude::*;
    let sessions: Result<Vec<SessionData>, SimError> = jobs
        .par_iter()
        .map(|(student, session, index)| {
            generate_session(
                config,
                student,
                session,
                seed::mix(config.master_seed, *index),
            )
        })
        .collect();
    Ok(Dataset {
        sessions: sessions?,
    })
}
