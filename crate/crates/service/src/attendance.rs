//! Attendance ledger, reports and absence notifications.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gallery::EnrollmentRecord;
use crate::storage::{parse_jsonl, read_optional, render_jsonl, write_atomic, StorageError};

pub const OUTBOX_FORMAT: &str = "ams-outbox";

#[derive(Debug, Error)]
pub enum AttendanceError {
    #[error("{0} is not a working day")]
    NotWorkingDay(NaiveDate),
    #[error("no working days between {0} and {1}")]
    NoWorkingDays(NaiveDate, NaiveDate),
    #[error("calendar line {line}: {message}")]
    Calendar { line: usize, message: String },
    #[error("ledger line {line}: {message}")]
    Ledger { line: usize, message: String },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// One ISO-8601 date per line; `#` starts a comment.
pub fn parse_calendar(text: &str) -> Result<BTreeSet<NaiveDate>, AttendanceError> {
    let mut days = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let d = NaiveDate::parse_from_str(line, "%Y-%m-%d").map_err(|e| AttendanceError::Calendar {
            line: i + 1,
            message: format!("{line:?}: {e}"),
        })?;
        days.insert(d);
    }
    Ok(days)
}

/// Share of working days attended, kept as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Percentage {
    pub present: u64,
    pub working: u64,
}

impl Percentage {
    pub fn new(present: u64, working: u64) -> Option<Self> {
        (working > 0 && present <= working).then_some(Self { present, working })
    }

    pub fn ratio(&self) -> Ratio<u64> {
        Ratio::new(self.present, self.working)
    }

    /// `100 * present / working` in hundredths, rounded half-up.
    pub fn hundredths(&self) -> u64 {
        let r = self.ratio();
        (20_000 * r.numer() + r.denom()) / (2 * r.denom())
    }

    /// Display form with a trailing percent sign, e.g. `17.57%`.
    pub fn label(&self) -> String {
        format!("{self}%")
    }
}

impl fmt::Display for Percentage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = self.hundredths();
        write!(f, "{}.{:02}", h / 100, h % 100)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttendanceLedger {
    working_days: BTreeSet<NaiveDate>,
    marks: BTreeSet<(u64, NaiveDate)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MarkRow {
    student_id: u64,
    date: NaiveDate,
}

impl AttendanceLedger {
    pub fn new(working_days: BTreeSet<NaiveDate>) -> Self {
        Self {
            working_days,
            marks: BTreeSet::new(),
        }
    }

    pub fn working_days(&self) -> &BTreeSet<NaiveDate> {
        &self.working_days
    }

    pub fn is_working_day(&self, d: NaiveDate) -> bool {
        self.working_days.contains(&d)
    }

    pub fn marks(&self) -> impl Iterator<Item = (u64, NaiveDate)> + '_ {
        self.marks.iter().copied()
    }

    pub fn is_present(&self, student: u64, d: NaiveDate) -> bool {
        self.marks.contains(&(student, d))
    }

    /// Returns whether the mark is new.
    pub fn mark_present(&mut self, student: u64, d: NaiveDate) -> Result<bool, AttendanceError> {
        if !self.is_working_day(d) {
            return Err(AttendanceError::NotWorkingDay(d));
        }
        Ok(self.marks.insert((student, d)))
    }

    pub fn working_days_in(&self, from: NaiveDate, to: NaiveDate) -> usize {
        if from > to {
            return 0;
        }
        self.working_days.range(from..=to).count()
    }

    pub fn present_dates(&self, student: u64, from: NaiveDate, to: NaiveDate) -> Vec<NaiveDate> {
        if from > to {
            return Vec::new();
        }
        self.marks
            .range((student, from)..=(student, to))
            .map(|&(_, d)| d)
            .collect()
    }

    pub fn attendance_percentage(&self, student: u64, from: NaiveDate, to: NaiveDate) -> Result<Percentage, AttendanceError> {
        let working = self.working_days_in(from, to) as u64;
        let present = self.present_dates(student, from, to).len() as u64;
        Percentage::new(present, working).ok_or(AttendanceError::NoWorkingDays(from, to))
    }

    /// Present count per month of `year`, January first.
    pub fn monthly_breakdown(&self, student: u64, year: i32) -> [u64; 12] {
        let mut out = [0; 12];
        let (Some(from), Some(to)) = (NaiveDate::from_ymd_opt(year, 1, 1), NaiveDate::from_ymd_opt(year, 12, 31)) else {
            return out;
        };
        for d in self.present_dates(student, from, to) {
            out[d.month0() as usize] += 1;
        }
        out
    }

    /// One queued notification per roster student without a mark on `d`.
    pub fn absentees(&self, d: NaiveDate, roster: &[EnrollmentRecord]) -> Result<Vec<AbsenceNotification>, AttendanceError> {
        if !self.is_working_day(d) {
            return Err(AttendanceError::NotWorkingDay(d));
        }
        Ok(roster
            .iter()
            .filter(|r| !self.is_present(r.student_id, d))
            .map(|r| AbsenceNotification {
                student_id: r.student_id,
                date: d,
                destination: r.parent_contact.clone(),
                text: format!("{} ({}) was absent on {d}.", r.name, r.roll_number),
                status: NotificationStatus::Queued,
            })
            .collect())
    }

    pub fn render_marks(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.marks.is_empty() {
            w.write_record(["student_id", "date"]).expect("in-memory write");
        }
        for &(student_id, date) in &self.marks {
            w.serialize(MarkRow { student_id, date }).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn save_marks(&self, path: &Path) -> Result<(), AttendanceError> {
        Ok(write_atomic(path, self.render_marks().as_bytes())?)
    }

    /// Restores marks onto a calendar; marks outside the calendar are rejected.
    pub fn load_marks(working_days: BTreeSet<NaiveDate>, path: &Path) -> Result<Self, AttendanceError> {
        let mut ledger = Self::new(working_days);
        let Some(text) = read_optional(path)? else {
            return Ok(ledger);
        };
        let mut r = csv::Reader::from_reader(text.as_bytes());
        for (i, row) in r.deserialize::<MarkRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| AttendanceError::Ledger {
                line,
                message: e.to_string(),
            })?;
            ledger.mark_present(row.student_id, row.date).map_err(|e| AttendanceError::Ledger {
                line,
                message: e.to_string(),
            })?;
        }
        Ok(ledger)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum NotificationStatus {
    Queued,
    Sent,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsenceNotification {
    pub student_id: u64,
    pub date: NaiveDate,
    pub destination: String,
    pub text: String,
    pub status: NotificationStatus,
}

impl AbsenceNotification {
    pub fn idempotency_key(&self) -> String {
        format!("{}:{}", self.student_id, self.date)
    }

    pub fn message(&self) -> SmsMessage {
        SmsMessage {
            student_id: self.student_id,
            date: self.date,
            destination: self.destination.clone(),
            idempotency_key: self.idempotency_key(),
            text: self.text.clone(),
        }
    }
}

/// Body posted to the SMS gateway webhook.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmsMessage {
    pub student_id: u64,
    pub date: NaiveDate,
    pub destination: String,
    pub idempotency_key: String,
    pub text: String,
}

pub trait SmsGateway {
    /// `Err` carries the failure reason.
    fn post(&mut self, msg: &SmsMessage) -> Result<(), String>;
}

/// HTTP webhook; any 2xx response counts as delivered.
pub struct WebhookGateway {
    client: reqwest::blocking::Client,
    url: String,
}

impl WebhookGateway {
    pub fn new(url: impl Into<String>) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(10))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self { client, url: url.into() })
    }
}

impl SmsGateway for WebhookGateway {
    fn post(&mut self, msg: &SmsMessage) -> Result<(), String> {
        let resp = self
            .client
            .post(&self.url)
            .header("Idempotency-Key", &msg.idempotency_key)
            .json(msg)
            .send()
            .map_err(|e| e.to_string())?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(format!("gateway answered {}", resp.status()))
        }
    }
}

/// Test gateway that answers from a repeating script of outcomes.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGateway {
    script: Vec<bool>,
    pub calls: Vec<SmsMessage>,
}

impl ScriptedGateway {
    pub fn new(script: Vec<bool>) -> Self {
        Self { script, calls: Vec::new() }
    }

    pub fn accepting() -> Self {
        Self::new(vec![true])
    }
}

impl SmsGateway for ScriptedGateway {
    fn post(&mut self, msg: &SmsMessage) -> Result<(), String> {
        let ok = if self.script.is_empty() {
            true
        } else {
            self.script[self.calls.len() % self.script.len()]
        };
        self.calls.push(msg.clone());
        if ok {
            Ok(())
        } else {
            Err(format!("scripted failure on call {}", self.calls.len()))
        }
    }
}

/// Posts every notification not yet sent, once each. Returns the number of attempts.
pub fn dispatch_notifications(batch: &mut [AbsenceNotification], gateway: &mut dyn SmsGateway) -> usize {
    let mut attempts = 0;
    for n in batch.iter_mut().filter(|n| n.status != NotificationStatus::Sent) {
        attempts += 1;
        n.status = match gateway.post(&n.message()) {
            Ok(()) => NotificationStatus::Sent,
            Err(reason) => NotificationStatus::Failed { reason },
        };
    }
    attempts
}

/// Notifications keyed by `(student_id, date)`; one per key, ever.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outbox {
    items: BTreeMap<(u64, NaiveDate), AbsenceNotification>,
}

impl Outbox {
    /// Adds notifications whose keys are new; returns how many were added.
    pub fn enqueue(&mut self, batch: Vec<AbsenceNotification>) -> usize {
        let mut added = 0;
        for n in batch {
            if let std::collections::btree_map::Entry::Vacant(e) = self.items.entry((n.student_id, n.date)) {
                e.insert(n);
                added += 1;
            }
        }
        added
    }

    pub fn items(&self) -> impl Iterator<Item = &AbsenceNotification> {
        self.items.values()
    }

    /// Dispatches everything queued or failed for `date`.
    pub fn dispatch(&mut self, date: NaiveDate, gateway: &mut dyn SmsGateway) -> Vec<AbsenceNotification> {
        let mut batch: Vec<AbsenceNotification> = self
            .items
            .values()
            .filter(|n| n.date == date && n.status != NotificationStatus::Sent)
            .cloned()
            .collect();
        dispatch_notifications(&mut batch, gateway);
        for n in &batch {
            self.items.insert((n.student_id, n.date), n.clone());
        }
        batch
    }

    pub fn render(&self) -> String {
        render_jsonl(OUTBOX_FORMAT, self.items.values())
    }

    pub fn save(&self, path: &Path) -> Result<(), AttendanceError> {
        Ok(write_atomic(path, self.render().as_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, AttendanceError> {
        let mut out = Outbox::default();
        if let Some(text) = read_optional(path)? {
            let items: Vec<AbsenceNotification> = parse_jsonl(&path.display().to_string(), OUTBOX_FORMAT, &text)?;
            for n in items {
                out.items.insert((n.student_id, n.date), n);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, m, day).unwrap()
    }

    #[test]
    fn percentage_format() {
        assert_eq!(Percentage::new(13, 74).unwrap().to_string(), "17.57");
        assert_eq!(Percentage::new(0, 9).unwrap().label(), "0.00%");
        assert_eq!(Percentage::new(9, 9).unwrap().label(), "100.00%");
        // 1/8 = 12.5% exactly; 1/80 = 1.25% sits on the rounding edge.
        assert_eq!(Percentage::new(1, 8).unwrap().to_string(), "12.50");
        assert_eq!(Percentage::new(1, 80).unwrap().to_string(), "1.25");
        assert_eq!(Percentage::new(1, 800).unwrap().to_string(), "0.13");
        assert_eq!(Percentage::new(2, 3).unwrap().to_string(), "66.67");
        assert!(Percentage::new(1, 0).is_none());
        assert!(Percentage::new(3, 2).is_none());
    }

    #[test]
    fn calendar_parsing() {
        let days = parse_calendar("# term\n2024-01-08\n\n2024-01-09 # tue\n").unwrap();
        assert_eq!(days.len(), 2);
        match parse_calendar("2024-01-08\n2024-13-01\n") {
            Err(AttendanceError::Calendar { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn marks_are_idempotent_and_checked() {
        let mut l = AttendanceLedger::new([d(3, 4), d(3, 5)].into());
        assert!(l.mark_present(1, d(3, 4)).unwrap());
        let once = l.clone();
        assert!(!l.mark_present(1, d(3, 4)).unwrap());
        assert_eq!(l, once);
        assert!(matches!(l.mark_present(1, d(3, 6)), Err(AttendanceError::NotWorkingDay(_))));
        assert!(matches!(
            l.attendance_percentage(1, d(4, 1), d(4, 30)),
            Err(AttendanceError::NoWorkingDays(..))
        ));
        assert_eq!(l.attendance_percentage(1, d(3, 1), d(3, 31)).unwrap().label(), "50.00%");
    }

    #[test]
    fn monthly_counts() {
        let days: BTreeSet<_> = [d(3, 4), d(3, 5), d(3, 6), d(5, 1)].into();
        let mut l = AttendanceLedger::new(days);
        assert_eq!(l.monthly_breakdown(1, 2024), [0; 12]);
        for day in [4, 5, 6] {
            l.mark_present(1, d(3, day)).unwrap();
        }
        l.mark_present(2, d(5, 1)).unwrap();
        let m = l.monthly_breakdown(1, 2024);
        assert_eq!(m[2], 3);
        assert_eq!(m.iter().sum::<u64>(), 3);
        assert_eq!(l.monthly_breakdown(1, 2023), [0; 12]);
    }

    #[test]
    fn ledger_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("marks.csv");
        let days: BTreeSet<_> = [d(3, 4), d(3, 5)].into();
        let mut l = AttendanceLedger::new(days.clone());
        l.save_marks(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "student_id,date\n");
        l.mark_present(2, d(3, 5)).unwrap();
        l.mark_present(1, d(3, 4)).unwrap();
        l.save_marks(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "student_id,date\n1,2024-03-04\n2,2024-03-05\n");
        assert_eq!(AttendanceLedger::load_marks(days, &p).unwrap(), l);
        assert!(matches!(
            AttendanceLedger::load_marks([d(3, 4)].into(), &p),
            Err(AttendanceError::Ledger { line: 3, .. })
        ));
    }

    #[test]
    fn outbox_keeps_one_notification_per_key() {
        let n = |id: u64, status| AbsenceNotification {
            student_id: id,
            date: d(3, 4),
            destination: "+1".into(),
            text: "x".into(),
            status,
        };
        let mut o = Outbox::default();
        assert_eq!(o.enqueue(vec![n(1, NotificationStatus::Queued), n(2, NotificationStatus::Queued)]), 2);
        assert_eq!(o.enqueue(vec![n(1, NotificationStatus::Queued)]), 0);
        let mut gw = ScriptedGateway::new(vec![false, true]);
        let first = o.dispatch(d(3, 4), &mut gw);
        assert!(matches!(first[0].status, NotificationStatus::Failed { .. }));
        assert_eq!(first[1].status, NotificationStatus::Sent);
        let retry = o.dispatch(d(3, 4), &mut gw);
        assert_eq!(retry.len(), 1);
        assert_eq!(retry[0].student_id, 1);
        assert!(matches!(retry[0].status, NotificationStatus::Failed { .. }));
        assert_eq!(gw.calls.iter().map(|c| c.idempotency_key.as_str()).collect::<Vec<_>>(), ["1:2024-03-04", "2:2024-03-04", "1:2024-03-04"]);
    }
}
