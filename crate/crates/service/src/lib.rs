//! Attendance workflow around the face-matching core: student and stranger
//! databases, the attendance ledger with reports and absence notifications,
//! the capture pipeline, and its REST and command-line front ends.

pub mod api;
pub mod attendance;
pub mod cli;
pub mod config;
pub mod gallery;
pub mod journal;
pub mod pipeline;
pub mod storage;

pub use attendance::{
    dispatch_notifications, parse_calendar, AbsenceNotification, AttendanceLedger, NotificationStatus, Outbox, Percentage,
    ScriptedGateway, SmsGateway, SmsMessage, WebhookGateway,
};
pub use config::Config;
pub use gallery::{EnrollmentRecord, Gallery, NewStudent, Resolution, StrangerRecord, StrangerStatus};
pub use journal::{Journal, MarkOutcome};
pub use pipeline::{CaptureEvent, Decision, PipelineReport, ScanSource, Service, ServiceError};
