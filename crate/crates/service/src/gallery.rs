//! Student and stranger databases.

use std::collections::BTreeMap;
use std::path::Path;

use ams_core::{signature_of, MatchError, MatcherConfig, MomentSignature, RankedCandidate, Surface, Template};
use chrono::{DateTime, FixedOffset, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::storage::{parse_jsonl, read_optional, render_jsonl, write_atomic, StorageError};

pub const GALLERY_FORMAT: &str = "ams-gallery";

pub type Signature = MomentSignature<f64>;

#[derive(Debug, Error)]
pub enum GalleryError {
    #[error("roll number {0:?} is already enrolled")]
    DuplicateRoll(String),
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
    #[error("at least one scan is required")]
    NoScans,
    #[error("signatures of one record must share a degree")]
    MixedDegrees,
    #[error("scan {index}: {source}")]
    Scan {
        index: usize,
        #[source]
        source: MatchError,
    },
    #[error("no student with id {0}")]
    UnknownStudent(u64),
    #[error("no stranger with id {0}")]
    UnknownStranger(u64),
    #[error("stranger {0} is already resolved")]
    AlreadyResolved(u64),
    #[error("{0}: record {1} appears twice")]
    DuplicateId(&'static str, u64),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentRecord {
    pub student_id: u64,
    pub name: String,
    pub roll_number: String,
    pub parent_contact: String,
    pub signatures: Vec<Signature>,
    pub enrolled_at: DateTime<Utc>,
    /// Pointers into the scan archive; the scans themselves are not kept.
    #[serde(default)]
    pub scan_refs: Vec<String>,
}

impl Template<f64> for EnrollmentRecord {
    fn student_id(&self) -> u64 {
        self.student_id
    }

    fn signatures(&self) -> &[Signature] {
        &self.signatures
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum StrangerStatus {
    Pending,
    Linked { student_id: u64 },
    ConfirmedStranger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrangerRecord {
    pub stranger_id: u64,
    pub capture_id: String,
    pub camera_id: String,
    pub timestamp: DateTime<FixedOffset>,
    pub signature: Signature,
    pub status: StrangerStatus,
    /// Nearest enrolled students at capture time, for triage.
    #[serde(default)]
    pub suggestions: Vec<RankedCandidate<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Resolution {
    Link { student_id: u64 },
    Confirm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewStudent {
    pub name: String,
    pub roll_number: String,
    pub parent_contact: String,
}

/// Where a stranger came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureInfo {
    pub capture_id: String,
    pub camera_id: String,
    pub timestamp: DateTime<FixedOffset>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gallery {
    students: BTreeMap<u64, EnrollmentRecord>,
    strangers: BTreeMap<u64, StrangerRecord>,
}

impl Gallery {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn student(&self, id: u64) -> Option<&EnrollmentRecord> {
        self.students.get(&id)
    }

    pub fn stranger(&self, id: u64) -> Option<&StrangerRecord> {
        self.strangers.get(&id)
    }

    /// Students in id order.
    pub fn students(&self) -> impl Iterator<Item = &EnrollmentRecord> {
        self.students.values()
    }

    pub fn strangers(&self) -> impl Iterator<Item = &StrangerRecord> {
        self.strangers.values()
    }

    pub fn roster(&self) -> Vec<EnrollmentRecord> {
        self.students.values().cloned().collect()
    }

    fn next_student_id(&self) -> u64 {
        self.students.keys().next_back().map_or(1, |m| m + 1)
    }

    fn next_stranger_id(&self) -> u64 {
        self.strangers.keys().next_back().map_or(1, |m| m + 1)
    }

    /// Checks everything `enroll` would reject, without touching the database.
    pub fn check_new(&self, new: &NewStudent) -> Result<(), GalleryError> {
        for (field, value) in [
            ("name", &new.name),
            ("roll_number", &new.roll_number),
            ("parent_contact", &new.parent_contact),
        ] {
            if value.trim().is_empty() {
                return Err(GalleryError::EmptyField(field));
            }
        }
        if self.students.values().any(|r| r.roll_number == new.roll_number) {
            return Err(GalleryError::DuplicateRoll(new.roll_number.clone()));
        }
        Ok(())
    }

    pub fn enroll(
        &mut self,
        new: NewStudent,
        signatures: Vec<Signature>,
        scan_refs: Vec<String>,
        enrolled_at: DateTime<Utc>,
    ) -> Result<&EnrollmentRecord, GalleryError> {
        self.check_new(&new)?;
        let first = signatures.first().ok_or(GalleryError::NoScans)?;
        if signatures.iter().any(|s| s.degree() != first.degree()) {
            return Err(GalleryError::MixedDegrees);
        }
        let id = self.next_student_id();
        let record = EnrollmentRecord {
            student_id: id,
            name: new.name,
            roll_number: new.roll_number,
            parent_contact: new.parent_contact,
            signatures,
            enrolled_at,
            scan_refs,
        };
        Ok(self.students.entry(id).or_insert(record))
    }

    pub fn add_stranger(
        &mut self,
        capture: &CaptureInfo,
        signature: Signature,
        suggestions: Vec<RankedCandidate<f64>>,
    ) -> &StrangerRecord {
        let id = self.next_stranger_id();
        let record = StrangerRecord {
            stranger_id: id,
            capture_id: capture.capture_id.clone(),
            camera_id: capture.camera_id.clone(),
            timestamp: capture.timestamp,
            signature,
            status: StrangerStatus::Pending,
            suggestions,
        };
        self.strangers.entry(id).or_insert(record)
    }

    pub fn resolve_stranger(&mut self, id: u64, action: Resolution) -> Result<StrangerRecord, GalleryError> {
        let linked_ok = match action {
            Resolution::Link { student_id } => self.students.contains_key(&student_id).then_some(()).ok_or(GalleryError::UnknownStudent(student_id)),
            Resolution::Confirm => Ok(()),
        };
        let record = self.strangers.get_mut(&id).ok_or(GalleryError::UnknownStranger(id))?;
        if record.status != StrangerStatus::Pending {
            return Err(GalleryError::AlreadyResolved(id));
        }
        linked_ok?;
        record.status = match action {
            Resolution::Link { student_id } => StrangerStatus::Linked { student_id },
            Resolution::Confirm => StrangerStatus::ConfirmedStranger,
        };
        Ok(record.clone())
    }

    pub fn render_students(&self) -> String {
        render_jsonl(GALLERY_FORMAT, self.students.values())
    }

    pub fn render_strangers(&self) -> String {
        render_jsonl(GALLERY_FORMAT, self.strangers.values())
    }

    pub fn save(&self, students: &Path, strangers: &Path) -> Result<(), GalleryError> {
        write_atomic(students, self.render_students().as_bytes())?;
        write_atomic(strangers, self.render_strangers().as_bytes())?;
        Ok(())
    }

    /// Missing files load as empty databases.
    pub fn load(students: &Path, strangers: &Path) -> Result<Self, GalleryError> {
        let mut g = Gallery::new();
        if let Some(text) = read_optional(students)? {
            for r in parse_jsonl::<EnrollmentRecord>(&students.display().to_string(), GALLERY_FORMAT, &text)? {
                let id = r.student_id;
                if g.students.insert(id, r).is_some() {
                    return Err(GalleryError::DuplicateId("students", id));
                }
            }
        }
        if let Some(text) = read_optional(strangers)? {
            for r in parse_jsonl::<StrangerRecord>(&strangers.display().to_string(), GALLERY_FORMAT, &text)? {
                let id = r.stranger_id;
                if g.strangers.insert(id, r).is_some() {
                    return Err(GalleryError::DuplicateId("strangers", id));
                }
            }
        }
        Ok(g)
    }
}

/// Reduces every scan to a signature; fails on the first bad scan.
pub fn signatures_of(scans: &[Surface<f64>], cfg: &MatcherConfig<f64>) -> Result<Vec<Signature>, GalleryError> {
    if scans.is_empty() {
        return Err(GalleryError::NoScans);
    }
    scans
        .iter()
        .enumerate()
        .map(|(index, s)| signature_of(s, cfg).map_err(|source| GalleryError::Scan { index, source }))
        .collect()
}
