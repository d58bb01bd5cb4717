//! Idempotency journal: one entry per capture id ever seen.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, FixedOffset, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::storage::{parse_jsonl, read_optional, render_jsonl, write_atomic, StorageError};

pub const JOURNAL_FORMAT: &str = "ams-journal";

/// What happened to a matched student's attendance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkOutcome {
    Marked,
    AlreadyPresent,
    NotWorkingDay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Matched {
        student_id: u64,
        distance: f64,
        date: NaiveDate,
        attendance: MarkOutcome,
    },
    Stranger {
        stranger_id: u64,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub capture_id: String,
    pub camera_id: String,
    pub timestamp: DateTime<FixedOffset>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Journal {
    entries: BTreeMap<String, JournalEntry>,
}

impl Journal {
    pub fn contains(&self, capture_id: &str) -> bool {
        self.entries.contains_key(capture_id)
    }

    pub fn get(&self, capture_id: &str) -> Option<&JournalEntry> {
        self.entries.get(capture_id)
    }

    /// Returns false if the capture id was already recorded.
    pub fn record(&mut self, entry: JournalEntry) -> bool {
        match self.entries.entry(entry.capture_id.clone()) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(entry);
                true
            }
            std::collections::btree_map::Entry::Occupied(_) => false,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &JournalEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn render(&self) -> String {
        render_jsonl(JOURNAL_FORMAT, self.entries.values())
    }

    pub fn save(&self, path: &Path) -> Result<(), StorageError> {
        write_atomic(path, self.render().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, StorageError> {
        let mut j = Journal::default();
        if let Some(text) = read_optional(path)? {
            for e in parse_jsonl::<JournalEntry>(&path.display().to_string(), JOURNAL_FORMAT, &text)? {
                j.entries.insert(e.capture_id.clone(), e);
            }
        }
        Ok(j)
    }
}
