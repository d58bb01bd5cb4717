#![allow(dead_code)]

use std::path::PathBuf;

use ams_core::synth::{apply_expression, apply_rigid, expression_seed, generate_identity, random_rigid};
use ams_core::{save_surface, Surface};
use ams_service::{CaptureEvent, Config, NewStudent, ScanSource, Service};
use chrono::{DateTime, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

/// Seeds 1 and 2 are enrolled; 5 is never enrolled and sits far from both.
pub const ENROLLED: [u64; 2] = [1, 2];
pub const HELD_OUT: u64 = 5;

pub const CALENDAR: &str = "\
# spring term
2024-03-04
2024-03-05
2024-03-06
2024-03-07
2024-04-02
";

pub struct Fixture {
    pub dir: TempDir,
    pub config_path: PathBuf,
}

impl Fixture {
    pub fn new(timezone: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("calendar.txt"), CALENDAR).unwrap();
        std::fs::create_dir_all(dir.path().join("scans")).unwrap();
        let config_path = dir.path().join("ams.conf");
        let text = format!(
            "timezone = {timezone}\ncalendar_path = calendar.txt\ngallery_path = db/students.jsonl\nstranger_path = db/strangers.jsonl\nledger_path = db/attendance.csv\njournal_path = db/journal.jsonl\noutbox_path = db/outbox.jsonl\nscan_archive_dir = scans\n"
        );
        std::fs::write(&config_path, text).unwrap();
        Self { dir, config_path }
    }

    pub fn config(&self) -> Config {
        Config::load(&self.config_path).unwrap()
    }

    pub fn service(&self) -> Service {
        Service::open(self.config()).unwrap()
    }

    /// Writes an OFF scan into the archive and returns its reference.
    pub fn archive(&self, name: &str, s: &Surface<f64>) -> ScanSource {
        std::fs::write(self.dir.path().join("scans").join(name), save_surface(s)).unwrap();
        ScanSource::Path(name.into())
    }

    /// Database and ledger files, in a fixed order.
    pub fn state_bytes(&self) -> Vec<(String, Vec<u8>)> {
        ["students.jsonl", "strangers.jsonl", "attendance.csv", "journal.jsonl"]
            .iter()
            .map(|f| {
                let p = self.dir.path().join("db").join(f);
                (f.to_string(), std::fs::read(&p).unwrap_or_default())
            })
            .collect()
    }
}

/// Identity `seed` under an expression of `magnitude` and a rigid motion.
pub fn face(seed: u64, magnitude: f64, motion: u64) -> Surface<f64> {
    let bent = apply_expression(&generate_identity::<f64>(seed), magnitude, expression_seed(seed, 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(motion);
    let (aa, shift) = random_rigid(&mut rng, 50.0);
    apply_rigid(&bent, aa, shift)
}

pub fn student(seed: u64) -> NewStudent {
    NewStudent {
        name: format!("Student {seed}"),
        roll_number: format!("R{seed:03}"),
        parent_contact: format!("+91-555-{seed:04}"),
    }
}

pub fn enrolled_at() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 9, 0, 0).unwrap()
}

/// Enrols every seed in `ENROLLED` from its neutral scan.
pub fn enroll_all(fx: &Fixture, svc: &Service) {
    for seed in ENROLLED {
        let scan = fx.archive(&format!("enrol-{seed}.off"), &generate_identity::<f64>(seed));
        svc.enroll(student(seed), &[scan], enrolled_at()).unwrap();
    }
}

pub fn event(id: &str, ts: &str, scan: ScanSource) -> CaptureEvent {
    CaptureEvent {
        capture_id: id.into(),
        camera_id: "door-1".into(),
        timestamp: DateTime::parse_from_rfc3339(ts).unwrap(),
        scan,
    }
}
