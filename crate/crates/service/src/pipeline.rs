//! Capture ingestion: scan → signature → identify → attendance or stranger.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Component, Path, PathBuf};
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use ams_core::{
    calibrate_threshold, fit_cca, load_surface, CcaModel, Decision as MatchDecision, Matcher, Matrix, RankedCandidate, Scorer,
    Surface,
};
use chrono::{DateTime, FixedOffset, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attendance::{parse_calendar, AbsenceNotification, AttendanceError, AttendanceLedger, Outbox, SmsGateway};
use crate::config::Config;
use crate::gallery::{
    signatures_of, CaptureInfo, EnrollmentRecord, Gallery, GalleryError, NewStudent, Resolution, StrangerRecord,
    StrangerStatus,
};
use crate::journal::{Journal, JournalEntry, MarkOutcome, Outcome};
use crate::storage::StorageError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Gallery(#[from] GalleryError),
    #[error(transparent)]
    Attendance(#[from] AttendanceError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("scan {0}")]
    Scan(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("calendar {path}: {source}")]
    Calendar {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A scan by archive-relative path or as an inline OFF document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanSource {
    Path(String),
    Inline(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureEvent {
    pub capture_id: String,
    pub camera_id: String,
    pub timestamp: DateTime<FixedOffset>,
    pub scan: ScanSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Matched { student_id: u64 },
    Stranger { stranger_id: u64 },
    Duplicate,
    Failed { reason: String },
    Linked { stranger_id: u64, student_id: u64 },
    Confirmed { stranger_id: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub capture_id: String,
    pub decision: Decision,
    pub distances: Vec<RankedCandidate<f64>>,
    /// Milliseconds per stage.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stage_timings: BTreeMap<String, f64>,
    pub attendance_marked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attendance: Option<MarkOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<NaiveDate>,
}

impl PipelineReport {
    fn bare(capture_id: &str, decision: Decision) -> Self {
        Self {
            capture_id: capture_id.into(),
            decision,
            distances: Vec::new(),
            stage_timings: BTreeMap::new(),
            attendance_marked: false,
            attendance: None,
            date: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttendanceView {
    pub student_id: u64,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub working_days: u64,
    pub present: u64,
    pub percentage: String,
    pub dates: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PercentageRow {
    pub student_id: u64,
    pub name: String,
    pub percentage: String,
}

struct State {
    gallery: Gallery,
    ledger: AttendanceLedger,
    journal: Journal,
    outbox: Outbox,
    cca: Option<CcaModel<f64>>,
    in_flight: BTreeSet<String>,
}

/// Owner of all mutable state. Mutations are serialized by one lock; the
/// expensive scan processing runs outside it on a roster snapshot.
pub struct Service {
    cfg: Config,
    state: Mutex<State>,
}

/// Pairs every later signature of a record (P block) with its first (Q block).
pub fn fit_gallery_cca(gallery: &Gallery, k: usize) -> Option<CcaModel<f64>> {
    let mut p = Vec::new();
    let mut q = Vec::new();
    for r in gallery.students() {
        for s in r.signatures.iter().skip(1) {
            p.push(s.values().to_vec());
            q.push(r.signatures[0].values().to_vec());
        }
    }
    let (p, q) = (Matrix::from_rows(&p).ok()?, Matrix::from_rows(&q).ok()?);
    fit_cca(&p, &q, k).ok()
}

fn local_date(ts: &DateTime<FixedOffset>, tz: chrono_tz::Tz) -> NaiveDate {
    ts.with_timezone(&tz).date_naive()
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl Service {
    pub fn open(cfg: Config) -> Result<Self, ServiceError> {
        let calendar = std::fs::read_to_string(&cfg.calendar_path).map_err(|source| ServiceError::Calendar {
            path: cfg.calendar_path.display().to_string(),
            source,
        })?;
        let working = parse_calendar(&calendar)?;
        let gallery = Gallery::load(&cfg.gallery_path, &cfg.stranger_path)?;
        let ledger = AttendanceLedger::load_marks(working, &cfg.ledger_path)?;
        let journal = Journal::load(&cfg.journal_path)?;
        let outbox = Outbox::load(&cfg.outbox_path)?;
        let cca = if cfg.matcher.cca_enabled {
            fit_gallery_cca(&gallery, cfg.matcher.cca_k)
        } else {
            None
        };
        Ok(Self {
            cfg,
            state: Mutex::new(State {
                gallery,
                ledger,
                journal,
                outbox,
                cca,
                in_flight: BTreeSet::new(),
            }),
        })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn persist(&self, s: &State) -> Result<(), ServiceError> {
        s.gallery.save(&self.cfg.gallery_path, &self.cfg.stranger_path)?;
        s.ledger.save_marks(&self.cfg.ledger_path)?;
        s.journal.save(&self.cfg.journal_path)?;
        Ok(())
    }

    pub fn load_scan(&self, src: &ScanSource) -> Result<Surface<f64>, ServiceError> {
        let text = match src {
            ScanSource::Inline(t) => t.clone(),
            ScanSource::Path(p) => {
                let rel = Path::new(p);
                if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
                    return Err(ServiceError::Scan(format!("{p:?}: must be a plain path inside the archive")));
                }
                let full = self.cfg.scan_archive_dir.join(rel);
                std::fs::read_to_string(&full).map_err(|e| ServiceError::Scan(format!("{p}: {e}")))?
            }
        };
        load_surface(&text).map_err(|e| ServiceError::Scan(e.to_string()))
    }

    pub fn enroll(&self, new: NewStudent, scans: &[ScanSource], at: DateTime<Utc>) -> Result<EnrollmentRecord, ServiceError> {
        self.lock().gallery.check_new(&new)?;
        if scans.is_empty() {
            return Err(GalleryError::NoScans.into());
        }
        let surfaces = scans.iter().map(|s| self.load_scan(s)).collect::<Result<Vec<_>, _>>()?;
        let sigs = signatures_of(&surfaces, &self.cfg.matcher)?;
        let refs = scans
            .iter()
            .filter_map(|s| match s {
                ScanSource::Path(p) => Some(p.clone()),
                ScanSource::Inline(_) => None,
            })
            .collect();
        let mut s = self.lock();
        let record = s.gallery.enroll(new, sigs, refs, at)?.clone();
        if self.cfg.matcher.cca_enabled {
            s.cca = fit_gallery_cca(&s.gallery, self.cfg.matcher.cca_k);
        }
        self.persist(&s)?;
        Ok(record)
    }

    /// Processes one capture with exactly-once effects per capture id.
    pub fn ingest(&self, event: &CaptureEvent) -> Result<PipelineReport, ServiceError> {
        let (roster, cca) = {
            let mut s = self.lock();
            if s.journal.contains(&event.capture_id) || !s.in_flight.insert(event.capture_id.clone()) {
                return Ok(PipelineReport::bare(&event.capture_id, Decision::Duplicate));
            }
            (s.gallery.roster(), s.cca.clone())
        };
        let mut timings = BTreeMap::new();
        let computed = self.identify_capture(event, &roster, cca.as_ref(), &mut timings);

        let t = Instant::now();
        let mut s = self.lock();
        s.in_flight.remove(&event.capture_id);
        let mut report = PipelineReport::bare(&event.capture_id, Decision::Duplicate);
        let outcome = match computed {
            Err(e) => {
                report.decision = Decision::Failed { reason: e.to_string() };
                Outcome::Failed { reason: e.to_string() }
            }
            Ok((signature, result)) => {
                report.distances = result.ranked.clone();
                match result.decision {
                    MatchDecision::Matched { student_id } => {
                        let date = local_date(&event.timestamp, self.cfg.timezone);
                        let mark = match s.ledger.mark_present(student_id, date) {
                            Ok(true) => MarkOutcome::Marked,
                            Ok(false) => MarkOutcome::AlreadyPresent,
                            Err(_) => MarkOutcome::NotWorkingDay,
                        };
                        report.decision = Decision::Matched { student_id };
                        report.attendance_marked = mark == MarkOutcome::Marked;
                        report.attendance = Some(mark);
                        report.date = Some(date);
                        Outcome::Matched {
                            student_id,
                            distance: result.best_distance.unwrap_or(f64::NAN),
                            date,
                            attendance: mark,
                        }
                    }
                    MatchDecision::Stranger => {
                        let info = CaptureInfo {
                            capture_id: event.capture_id.clone(),
                            camera_id: event.camera_id.clone(),
                            timestamp: event.timestamp,
                        };
                        let stranger_id = s.gallery.add_stranger(&info, signature, result.ranked).stranger_id;
                        report.decision = Decision::Stranger { stranger_id };
                        Outcome::Stranger { stranger_id }
                    }
                }
            }
        };
        s.journal.record(JournalEntry {
            capture_id: event.capture_id.clone(),
            camera_id: event.camera_id.clone(),
            timestamp: event.timestamp,
            outcome,
        });
        self.persist(&s)?;
        timings.insert("commit".into(), elapsed_ms(t));
        report.stage_timings = timings;
        Ok(report)
    }

    fn identify_capture(
        &self,
        event: &CaptureEvent,
        roster: &[EnrollmentRecord],
        cca: Option<&CcaModel<f64>>,
        timings: &mut BTreeMap<String, f64>,
    ) -> Result<(ams_core::MomentSignature<f64>, ams_core::MatchResult<f64>), ServiceError> {
        let t = Instant::now();
        let surface = self.load_scan(&event.scan)?;
        timings.insert("load".into(), elapsed_ms(t));
        let t = Instant::now();
        let signature = ams_core::signature_of(&surface, &self.cfg.matcher).map_err(|e| ServiceError::Scan(e.to_string()))?;
        timings.insert("signature".into(), elapsed_ms(t));
        let t = Instant::now();
        let mut matcher = Matcher::from_config(&self.cfg.matcher, cca);
        if self.cfg.matcher.cca_enabled && cca.is_none() {
            matcher.scorer = Scorer::Moment;
        }
        let result = matcher
            .identify(&signature, roster)
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;
        timings.insert("identify".into(), elapsed_ms(t));
        Ok((signature, result))
    }

    /// Resolves a pending stranger; linking also marks the capture date.
    pub fn resolve_and_mark(&self, stranger_id: u64, action: Resolution) -> Result<PipelineReport, ServiceError> {
        let mut s = self.lock();
        let record = s.gallery.resolve_stranger(stranger_id, action)?;
        let mut report = PipelineReport::bare(&record.capture_id, Decision::Confirmed { stranger_id });
        if let StrangerStatus::Linked { student_id } = record.status {
            let date = local_date(&record.timestamp, self.cfg.timezone);
            let mark = match s.ledger.mark_present(student_id, date) {
                Ok(true) => MarkOutcome::Marked,
                Ok(false) => MarkOutcome::AlreadyPresent,
                Err(_) => MarkOutcome::NotWorkingDay,
            };
            report.decision = Decision::Linked { stranger_id, student_id };
            report.attendance_marked = mark == MarkOutcome::Marked;
            report.attendance = Some(mark);
            report.date = Some(date);
        }
        self.persist(&s)?;
        Ok(report)
    }

    pub fn student(&self, id: u64) -> Option<EnrollmentRecord> {
        self.lock().gallery.student(id).cloned()
    }

    pub fn strangers(&self, status: Option<&str>) -> Result<Vec<StrangerRecord>, ServiceError> {
        let keep = |st: &StrangerStatus| match status {
            None => Ok(true),
            Some("pending") => Ok(*st == StrangerStatus::Pending),
            Some("linked") => Ok(matches!(st, StrangerStatus::Linked { .. })),
            Some("confirmed") | Some("confirmed_stranger") => Ok(*st == StrangerStatus::ConfirmedStranger),
            Some(other) => Err(ServiceError::Invalid(format!("unknown status {other:?}"))),
        };
        let s = self.lock();
        let mut out = Vec::new();
        for r in s.gallery.strangers() {
            if keep(&r.status)? {
                out.push(r.clone());
            }
        }
        Ok(out)
    }

    pub fn attendance(&self, student_id: u64, from: NaiveDate, to: NaiveDate) -> Result<AttendanceView, ServiceError> {
        let s = self.lock();
        if s.gallery.student(student_id).is_none() {
            return Err(ServiceError::NotFound(format!("student {student_id}")));
        }
        let pct = s.ledger.attendance_percentage(student_id, from, to)?;
        Ok(AttendanceView {
            student_id,
            from,
            to,
            working_days: pct.working,
            present: pct.present,
            percentage: pct.label(),
            dates: s.ledger.present_dates(student_id, from, to),
        })
    }

    pub fn percentages(&self, from: NaiveDate, to: NaiveDate) -> Result<Vec<PercentageRow>, ServiceError> {
        let s = self.lock();
        s.gallery
            .students()
            .map(|r| {
                Ok(PercentageRow {
                    student_id: r.student_id,
                    name: r.name.clone(),
                    percentage: s.ledger.attendance_percentage(r.student_id, from, to)?.label(),
                })
            })
            .collect()
    }

    /// Present counts keyed `"01"` through `"12"`.
    pub fn monthly(&self, student_id: u64, year: i32) -> Result<BTreeMap<String, u64>, ServiceError> {
        let s = self.lock();
        if s.gallery.student(student_id).is_none() {
            return Err(ServiceError::NotFound(format!("student {student_id}")));
        }
        Ok(s.ledger
            .monthly_breakdown(student_id, year)
            .iter()
            .enumerate()
            .map(|(m, &c)| (format!("{:02}", m + 1), c))
            .collect())
    }

    pub fn calibrate(&self, margin: f64) -> Result<f64, ServiceError> {
        let roster = self.lock().gallery.roster();
        calibrate_threshold(&roster, margin).map_err(|e| ServiceError::Invalid(e.to_string()))
    }

    /// Queues absence notifications for `date` and dispatches all unsent ones.
    pub fn notify_absentees(&self, date: NaiveDate, gateway: &mut dyn SmsGateway) -> Result<Vec<AbsenceNotification>, ServiceError> {
        let mut s = self.lock();
        let roster = s.gallery.roster();
        let batch = s.ledger.absentees(date, &roster)?;
        s.outbox.enqueue(batch);
        let sent = s.outbox.dispatch(date, gateway);
        s.outbox.save(&self.cfg.outbox_path)?;
        Ok(sent)
    }

    /// Absentees for `date` without queueing anything.
    pub fn absentees(&self, date: NaiveDate) -> Result<Vec<AbsenceNotification>, ServiceError> {
        let s = self.lock();
        Ok(s.ledger.absentees(date, &s.gallery.roster())?)
    }

    pub fn outbox(&self) -> Vec<AbsenceNotification> {
        self.lock().outbox.items().cloned().collect()
    }

    pub fn journal_len(&self) -> usize {
        self.lock().journal.len()
    }
}

/// Events from a file or directory: files in lexicographic order, one JSON
/// event per non-empty line.
pub fn read_event_log(path: &Path) -> Result<Vec<CaptureEvent>, ServiceError> {
    let io = |p: &Path, e: std::io::Error| ServiceError::Invalid(format!("{}: {e}", p.display()));
    let mut files: Vec<PathBuf> = if path.is_dir() {
        std::fs::read_dir(path)
            .map_err(|e| io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && matches!(p.extension().and_then(|x| x.to_str()), Some("json" | "jsonl")))
            .collect()
    } else {
        vec![path.to_path_buf()]
    };
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| io(&f, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str(line)
                .map_err(|e| ServiceError::Invalid(format!("{}:{}: {e}", f.display(), i + 1)))?;
            out.push(ev);
        }
    }
    Ok(out)
}
