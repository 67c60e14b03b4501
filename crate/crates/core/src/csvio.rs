//! CSV file formats and atomic writes.
//!
//! Fixed headers:
//!
//! ```text
//! samples.csv      session_id,student_id,modality,t_s,channel,value
//! annotations.csv  session_id,student_id,annotator_id,start_s,end_s,mark
//! schedule.csv     session_id,start_s,end_s,section
//! predictions.csv  session_id,student_id,window_index,section,label,confidence_on
//! metrics.csv      section,model,class,f1,support
//! ```
//!
//! Samples use a long format (one row per channel reading) so modalities
//! with different channel sets share one schema. Instance files are wide:
//! seven fixed columns, then one column per feature named
//! `<Modality>.<feature name>`, grouped in modality order.
//!
//! Every writer goes through [`write_atomic`]: content lands in a `.tmp`
//! sibling first and is renamed into place, so an interrupted run never
//! leaves a half-written file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::domain::{
    AnnotationSpan, AnnotatorMark, EngagementLabel, Modality, ScheduleSpan, SectionType,
    TimedSample, Window,
};
use crate::eval::{ClassRow, MetricsReport, ModelKind, ReportCell};
use crate::features::{FeatureVector, Instance, PerModality};
use crate::pipeline::RawSession;
use crate::simulate::Dataset;

pub const SAMPLES_HEADER: &str = "session_id,student_id,modality,t_s,channel,value";
pub const ANNOTATIONS_HEADER: &str = "session_id,student_id,annotator_id,start_s,end_s,mark";
pub const SCHEDULE_HEADER: &str = "session_id,start_s,end_s,section";
pub const PREDICTIONS_HEADER: &str =
    "session_id,student_id,window_index,section,label,confidence_on";
pub const METRICS_HEADER: &str = "section,model,class,f1,support";

pub const SAMPLES_FILE: &str = "samples.csv";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        source: csv::Error,
    },
    #[error("{path}: expected header {expected:?}, got {got:?}")]
    BadHeader {
        path: PathBuf,
        expected: String,
        got: String,
    },
    #[error("{path}:{line}: bad {field} value {value:?}: {reason}")]
    BadField {
        path: PathBuf,
        line: u64,
        field: &'static str,
        value: String,
        reason: String,
    },
    #[error("{path}:{line}: duplicate channel {channel:?} for one sample")]
    DuplicateChannel {
        path: PathBuf,
        line: u64,
        channel: String,
    },
    #[error("session {session} appears with students {a:?} and {b:?}")]
    InconsistentStudent {
        session: String,
        a: String,
        b: String,
    },
    #[error("session {session} has no schedule rows")]
    MissingSchedule { session: String },
    #[error("{path}: no feature columns found for modality {modality}")]
    MissingModalityColumns { path: PathBuf, modality: Modality },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CsvError + '_ {
    move |source| CsvError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `content` to `path` via a `.tmp` sibling and an atomic rename.
pub fn write_atomic(path: &Path, content: &[u8]) -> Result<(), CsvError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(content).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

struct RowReader {
    path: PathBuf,
    records: Vec<(u64, csv::StringRecord)>,
}

impl RowReader {
    fn open(path: &Path, expected_header: &str) -> Result<RowReader, CsvError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|source| CsvError::Csv {
                path: path.to_path_buf(),
                source,
            })?;
        let got = reader
            .headers()
            .map_err(|source| CsvError::Csv {
                path: path.to_path_buf(),
                source,
            })?
            .iter()
            .collect::<Vec<_>>()
            .join(",");
        if got != expected_header {
            return Err(CsvError::BadHeader {
                path: path.to_path_buf(),
                expected: expected_header.to_string(),
                got,
            });
        }
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|source| CsvError::Csv {
                path: path.to_path_buf(),
                source,
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            records.push((line, rec));
        }
        Ok(RowReader {
            path: path.to_path_buf(),
            records,
        })
    }

    fn field<T: FromStr>(
        &self,
        line: u64,
        rec: &csv::StringRecord,
        idx: usize,
        field: &'static str,
    ) -> Result<T, CsvError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = rec.get(idx).unwrap_or("");
        raw.parse::<T>().map_err(|e| CsvError::BadField {
            path: self.path.clone(),
            line,
            field,
            value: raw.to_string(),
            reason: e.to_string(),
        })
    }

    fn finite_f64(
        &self,
        line: u64,
        rec: &csv::StringRecord,
        idx: usize,
        field: &'static str,
    ) -> Result<f64, CsvError> {
        let v: f64 = self.field(line, rec, idx, field)?;
        if !v.is_finite() {
            return Err(CsvError::BadField {
                path: self.path.clone(),
                line,
                field,
                value: rec.get(idx).unwrap_or("").to_string(),
                reason: "must be finite".to_string(),
            });
        }
        Ok(v)
    }
}

/// Loads a long-format samples file and reassembles multi-channel samples,
/// sorted by (session, modality, t_s).
pub fn load_samples(path: &Path) -> Result<Vec<TimedSample>, CsvError> {
    let reader = RowReader::open(path, SAMPLES_HEADER)?;
    struct RawRow {
        line: u64,
        session_id: String,
        student_id: String,
        modality: Modality,
        t_s: f64,
        channel: String,
        value: f64,
    }
    let mut rows = Vec::with_capacity(reader.records.len());
    for (line, rec) in &reader.records {
        let line = *line;
        rows.push(RawRow {
            line,
            session_id: rec.get(0).unwrap_or("").to_string(),
            student_id: rec.get(1).unwrap_or("").to_string(),
            modality: reader.field(line, rec, 2, "modality")?,
            t_s: reader.finite_f64(line, rec, 3, "t_s")?,
            channel: rec.get(4).unwrap_or("").to_string(),
            value: reader.field(line, rec, 5, "value")?,
        });
    }
    for r in &rows {
        if r.channel.is_empty() {
            return Err(CsvError::BadField {
                path: reader.path.clone(),
                line: r.line,
                field: "channel",
                value: String::new(),
                reason: "channel name must be non-empty".to_string(),
            });
        }
    }
    rows.sort_by(|a, b| {
        (&a.session_id, a.modality, &a.student_id)
            .cmp(&(&b.session_id, b.modality, &b.student_id))
            .then(a.t_s.total_cmp(&b.t_s))
    });

    let mut samples: Vec<TimedSample> = Vec::new();
    for r in rows {
        let same_sample = samples.last().is_some_and(|s| {
            s.session_id == r.session_id && s.modality == r.modality && s.t_s == r.t_s
        });
        if same_sample {
            let s = samples.last_mut().unwrap();
            if s.student_id != r.student_id {
                return Err(CsvError::InconsistentStudent {
                    session: r.session_id,
                    a: s.student_id.clone(),
                    b: r.student_id,
                });
            }
            if s.channels.insert(r.channel.clone(), r.value).is_some() {
                return Err(CsvError::DuplicateChannel {
                    path: reader.path.clone(),
                    line: r.line,
                    channel: r.channel,
                });
            }
        } else {
            samples.push(TimedSample {
                student_id: r.student_id,
                session_id: r.session_id,
                modality: r.modality,
                t_s: r.t_s,
                channels: BTreeMap::from([(r.channel, r.value)]),
            });
        }
    }
    Ok(samples)
}

/// One annotation row with its session context.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRow {
    pub session_id: String,
    pub student_id: String,
    pub span: AnnotationSpan,
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRow>, CsvError> {
    let reader = RowReader::open(path, ANNOTATIONS_HEADER)?;
    let mut out = Vec::with_capacity(reader.records.len());
    for (line, rec) in &reader.records {
        let line = *line;
        let start_s = reader.finite_f64(line, rec, 3, "start_s")?;
        let end_s = reader.finite_f64(line, rec, 4, "end_s")?;
        if start_s >= end_s {
            return Err(CsvError::BadField {
                path: reader.path.clone(),
                line,
                field: "end_s",
                value: rec.get(4).unwrap_or("").to_string(),
                reason: format!("span must satisfy start_s < end_s (start_s = {start_s})"),
            });
        }
        out.push(AnnotationRow {
            session_id: rec.get(0).unwrap_or("").to_string(),
            student_id: rec.get(1).unwrap_or("").to_string(),
            span: AnnotationSpan {
                annotator_id: rec.get(2).unwrap_or("").to_string(),
                start_s,
                end_s,
                mark: reader.field::<AnnotatorMark>(line, rec, 5, "mark")?,
            },
        });
    }
    Ok(out)
}

/// One schedule row with its session.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRow {
    pub session_id: String,
    pub span: ScheduleSpan,
}

pub fn load_schedule(path: &Path) -> Result<Vec<ScheduleRow>, CsvError> {
    let reader = RowReader::open(path, SCHEDULE_HEADER)?;
    let mut out = Vec::with_capacity(reader.records.len());
    for (line, rec) in &reader.records {
        let line = *line;
        out.push(ScheduleRow {
            session_id: rec.get(0).unwrap_or("").to_string(),
            span: ScheduleSpan {
                start_s: reader.finite_f64(line, rec, 1, "start_s")?,
                end_s: reader.finite_f64(line, rec, 2, "end_s")?,
                section: reader.field::<SectionType>(line, rec, 3, "section")?,
            },
        });
    }
    Ok(out)
}

/// Reads the three raw CSVs from `dir` and groups them into sessions.
pub fn load_raw_sessions(dir: &Path) -> Result<Vec<RawSession>, CsvError> {
    let samples = load_samples(&dir.join(SAMPLES_FILE))?;
    let annotations = load_annotations(&dir.join(ANNOTATIONS_FILE))?;
    let schedule = load_schedule(&dir.join(SCHEDULE_FILE))?;

    let mut students: BTreeMap<String, String> = BTreeMap::new();
    let mut record_student = |session: &str, student: &str| -> Result<(), CsvError> {
        match students.get(session) {
            Some(existing) if existing != student => Err(CsvError::InconsistentStudent {
                session: session.to_string(),
                a: existing.clone(),
                b: student.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                students.insert(session.to_string(), student.to_string());
                Ok(())
            }
        }
    };
    for s in &samples {
        record_student(&s.session_id, &s.student_id)?;
    }
    for a in &annotations {
        record_student(&a.session_id, &a.student_id)?;
    }

    let mut sessions: Vec<RawSession> = Vec::new();
    for (session_id, student_id) in &students {
        let spans: Vec<ScheduleSpan> = schedule
            .iter()
            .filter(|r| &r.session_id == session_id)
            .map(|r| r.span)
            .collect();
        if spans.is_empty() {
            return Err(CsvError::MissingSchedule {
                session: session_id.clone(),
            });
        }
        sessions.push(RawSession {
            session_id: session_id.clone(),
            student_id: student_id.clone(),
            schedule: spans,
            samples: samples
                .iter()
                .filter(|s| &s.session_id == session_id)
                .cloned()
                .collect(),
            annotations: annotations
                .iter()
                .filter(|a| &a.session_id == session_id)
                .map(|a| a.span.clone())
                .collect(),
        });
    }
    Ok(sessions)
}

/// Writes the three raw dataset CSVs into `dir`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<(), CsvError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut samples = String::from(SAMPLES_HEADER);
    samples.push('\n');
    for session in &dataset.sessions {
        for s in &session.samples {
            for (channel, value) in &s.channels {
                samples.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    s.session_id, s.student_id, s.modality, s.t_s, channel, value
                ));
            }
        }
    }
    write_atomic(&dir.join(SAMPLES_FILE), samples.as_bytes())?;

    let mut annotations = String::from(ANNOTATIONS_HEADER);
    annotations.push('\n');
    for session in &dataset.sessions {
        for a in &session.annotations {
            annotations.push_str(&format!(
                "{},{},{},{},{},{}\n",
                session.session_id, session.student_id, a.annotator_id, a.start_s, a.end_s, a.mark
            ));
        }
    }
    write_atomic(&dir.join(ANNOTATIONS_FILE), annotations.as_bytes())?;

    let mut schedule = String::from(SCHEDULE_HEADER);
    schedule.push('\n');
    for session in &dataset.sessions {
        for span in &session.schedule {
            schedule.push_str(&format!(
                "{},{},{},{}\n",
                session.session_id, span.start_s, span.end_s, span.section
            ));
        }
    }
    write_atomic(&dir.join(SCHEDULE_FILE), schedule.as_bytes())?;
    Ok(())
}

const INSTANCE_FIXED_COLUMNS: [&str; 7] = [
    "session_id",
    "student_id",
    "window_index",
    "start_s",
    "end_s",
    "section",
    "label",
];

/// Writes instances as a wide CSV: fixed columns, then one column per
/// feature named `<Modality>.<feature name>` in modality order.
pub fn write_instances(path: &Path, instances: &[Instance]) -> Result<(), CsvError> {
    let mut out = String::new();
    out.push_str(&INSTANCE_FIXED_COLUMNS.join(","));
    if let Some(first) = instances.first() {
        for (m, fv) in first.features.iter() {
            for name in &fv.names {
                out.push_str(&format!(",{m}.{name}"));
            }
        }
    }
    out.push('\n');
    for inst in instances {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            inst.session_id,
            inst.student_id,
            inst.window.index,
            inst.window.start_s,
            inst.window.end_s,
            inst.section,
            inst.label
        ));
        for (_, fv) in inst.features.iter() {
            for v in &fv.values {
                out.push_str(&format!(",{v}"));
            }
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Loads a wide instance CSV back; rows come back sorted by (student,
/// session, window index) regardless of file order.
pub fn load_instances(path: &Path) -> Result<Vec<Instance>, CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|source| CsvError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|source| CsvError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.len() < INSTANCE_FIXED_COLUMNS.len()
        || headers[..INSTANCE_FIXED_COLUMNS.len()] != INSTANCE_FIXED_COLUMNS
    {
        return Err(CsvError::BadHeader {
            path: path.to_path_buf(),
            expected: INSTANCE_FIXED_COLUMNS.join(",") + ",<Modality>.<feature>...",
            got: headers.join(","),
        });
    }

    // Parse feature columns into per-modality name lists and column maps.
    let mut names: PerModality<Vec<String>> = PerModality::splat(Vec::new());
    let mut columns: PerModality<Vec<usize>> = PerModality::splat(Vec::new());
    for (idx, header) in headers.iter().enumerate().skip(INSTANCE_FIXED_COLUMNS.len()) {
        let Some((modality_token, feature)) = header.split_once('.') else {
            return Err(CsvError::BadField {
                path: path.to_path_buf(),
                line: 1,
                field: "header",
                value: header.clone(),
                reason: "feature columns must look like <Modality>.<feature>".to_string(),
            });
        };
        let modality: Modality =
            modality_token
                .parse()
                .map_err(|e: crate::domain::DomainError| CsvError::BadField {
                    path: path.to_path_buf(),
                    line: 1,
                    field: "header",
                    value: header.clone(),
                    reason: e.to_string(),
                })?;
        names.get_mut(modality).push(feature.to_string());
        columns.get_mut(modality).push(idx);
    }
    for m in Modality::ALL {
        if names.get(m).is_empty() {
            return Err(CsvError::MissingModalityColumns {
                path: path.to_path_buf(),
                modality: m,
            });
        }
    }

    let reader_helper = RowReader {
        path: path.to_path_buf(),
        records: {
            let mut records = Vec::new();
            for rec in reader.records() {
                let rec = rec.map_err(|source| CsvError::Csv {
                    path: path.to_path_buf(),
                    source,
                })?;
                let line = rec.position().map(|p| p.line()).unwrap_or(0);
                records.push((line, rec));
            }
            records
        },
    };

    let mut instances = Vec::with_capacity(reader_helper.records.len());
    for (line, rec) in &reader_helper.records {
        let line = *line;
        let window_index: usize = reader_helper.field(line, rec, 2, "window_index")?;
        let features = names.map(|m, feature_names| {
            let values: Vec<f64> = columns
                .get(m)
                .iter()
                .map(|&c| rec.get(c).unwrap_or("").parse::<f64>().unwrap_or(f64::NAN))
                .collect();
            FeatureVector {
                modality: m,
                window_index,
                names: feature_names.clone(),
                values,
            }
        });
        for (m, fv) in features.iter() {
            if let Some(bad) = fv.values.iter().position(|v| !v.is_finite()) {
                return Err(CsvError::BadField {
                    path: path.to_path_buf(),
                    line,
                    field: "feature",
                    value: rec.get(columns.get(m)[bad]).unwrap_or("").to_string(),
                    reason: format!("feature {}.{} must be finite", m, fv.names[bad]),
                });
            }
        }
        instances.push(Instance {
            session_id: rec.get(0).unwrap_or("").to_string(),
            student_id: rec.get(1).unwrap_or("").to_string(),
            window: Window {
                index: window_index,
                start_s: reader_helper.finite_f64(line, rec, 3, "start_s")?,
                end_s: reader_helper.finite_f64(line, rec, 4, "end_s")?,
            },
            section: reader_helper.field(line, rec, 5, "section")?,
            label: reader_helper.field(line, rec, 6, "label")?,
            features,
        });
    }
    instances.sort_by(|a, b| {
        (&a.student_id, &a.session_id, a.window.index).cmp(&(
            &b.student_id,
            &b.session_id,
            b.window.index,
        ))
    });
    Ok(instances)
}

/// One output row of the `predict` command.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput {
    pub session_id: String,
    pub student_id: String,
    pub window_index: usize,
    pub section: SectionType,
    pub label: EngagementLabel,
    /// Fraction of pooled trees voting OnTask.
    pub confidence_on: f64,
}

pub fn write_predictions(path: &Path, rows: &[PredictionOutput]) -> Result<(), CsvError> {
    let mut out = String::from(PREDICTIONS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.session_id, r.student_id, r.window_index, r.section, r.label, r.confidence_on
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Full-precision machine-readable metrics table.
pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<(), CsvError> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for c in &report.cells {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.section, c.model, c.row, c.f1, c.support
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_metrics(path: &Path) -> Result<Vec<ReportCell>, CsvError> {
    let reader = RowReader::open(path, METRICS_HEADER)?;
    let mut cells = Vec::with_capacity(reader.records.len());
    for (line, rec) in &reader.records {
        let line = *line;
        cells.push(ReportCell {
            section: reader.field::<SectionType>(line, rec, 0, "section")?,
            model: reader.field::<ModelKind>(line, rec, 1, "model")?,
            row: reader.field::<ClassRow>(line, rec, 2, "class")?,
            f1: reader.finite_f64(line, rec, 3, "f1")?,
            support: reader.field(line, rec, 4, "support")?,
        });
    }
    Ok(cells)
}
