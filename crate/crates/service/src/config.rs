//! Flat `key = value` configuration.

use std::path::{Path, PathBuf};

use ams_core::MatcherConfig;
use chrono_tz::Tz;
use thiserror::Error;

pub const CONFIG_ENV: &str = "AMS_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} given twice")]
    Repeated { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {message}")]
    Value { line: usize, key: String, message: String },
    #[error("invalid matcher settings: {0}")]
    Matcher(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub matcher: MatcherConfig<f64>,
    pub timezone: Tz,
    pub calendar_path: PathBuf,
    pub gallery_path: PathBuf,
    pub stranger_path: PathBuf,
    pub ledger_path: PathBuf,
    pub journal_path: PathBuf,
    pub outbox_path: PathBuf,
    pub scan_archive_dir: PathBuf,
    pub sms_webhook_url: Option<String>,
    pub listen_addr: String,
}

impl Config {
    /// Defaults with every file under `data_dir`.
    pub fn with_data_dir(data_dir: &Path) -> Self {
        Self {
            matcher: MatcherConfig::default(),
            timezone: Tz::UTC,
            calendar_path: data_dir.join("calendar.txt"),
            gallery_path: data_dir.join("students.jsonl"),
            stranger_path: data_dir.join("strangers.jsonl"),
            ledger_path: data_dir.join("attendance.csv"),
            journal_path: data_dir.join("journal.jsonl"),
            outbox_path: data_dir.join("outbox.jsonl"),
            scan_archive_dir: data_dir.join("scans"),
            sms_webhook_url: None,
            listen_addr: "127.0.0.1:8080".into(),
        }
    }

    /// Parses a config document; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::with_data_dir(&base.join("data"));
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Repeated { line, key: key.into() });
            }
            let bad = |message: String| ConfigError::Value {
                line,
                key: key.into(),
                message,
            };
            let path = || base.join(value);
            match key {
                "degree" => cfg.matcher.degree = value.parse().map_err(|e| bad(format!("{e}")))?,
                "crop_radius_mm" => cfg.matcher.crop_radius = value.parse().map_err(|e| bad(format!("{e}")))?,
                "sample_count" => cfg.matcher.sample_count = value.parse().map_err(|e| bad(format!("{e}")))?,
                "threshold" => cfg.matcher.threshold = value.parse().map_err(|e| bad(format!("{e}")))?,
                "cca_enabled" => cfg.matcher.cca_enabled = value.parse().map_err(|e| bad(format!("{e}")))?,
                "cca_k" => cfg.matcher.cca_k = value.parse().map_err(|e| bad(format!("{e}")))?,
                "rank_len" => cfg.matcher.rank_len = value.parse().map_err(|e| bad(format!("{e}")))?,
                "timezone" => cfg.timezone = value.parse().map_err(|e| bad(format!("{e}")))?,
                "calendar_path" => cfg.calendar_path = path(),
                "gallery_path" => cfg.gallery_path = path(),
                "stranger_path" => cfg.stranger_path = path(),
                "ledger_path" => cfg.ledger_path = path(),
                "journal_path" => cfg.journal_path = path(),
                "outbox_path" => cfg.outbox_path = path(),
                "scan_archive_dir" => cfg.scan_archive_dir = path(),
                "sms_webhook_url" => cfg.sms_webhook_url = (!value.is_empty()).then(|| value.to_string()),
                "listen_addr" => {
                    value
                        .parse::<std::net::SocketAddr>()
                        .map_err(|e| bad(format!("{e}")))?;
                    cfg.listen_addr = value.into();
                }
                _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
            }
        }
        cfg.matcher.validate().map_err(|e| ConfigError::Matcher(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// An explicit path wins over `AMS_CONFIG`; with neither, defaults under `./data`.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from)) {
            Some(p) => Self::load(&p),
            None => Ok(Self::with_data_dir(Path::new("data"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let text = "\
# deployment
degree = 4
crop_radius_mm = 75.5
sample_count = 120
threshold = 2.5e12
cca_enabled = false
cca_k = 2
timezone = Asia/Kolkata
calendar_path = cal.txt
gallery_path = db/students.jsonl
stranger_path = db/strangers.jsonl
scan_archive_dir = /srv/scans
sms_webhook_url = http://127.0.0.1:9000/sms
listen_addr = 0.0.0.0:8081
";
        let c = Config::parse(text, Path::new("/etc/ams")).unwrap();
        assert_eq!(c.matcher.degree, 4);
        assert_eq!(c.matcher.crop_radius, 75.5);
        assert_eq!(c.matcher.sample_count, 120);
        assert_eq!(c.matcher.threshold, 2.5e12);
        assert_eq!(c.matcher.cca_k, 2);
        assert_eq!(c.timezone, chrono_tz::Asia::Kolkata);
        assert_eq!(c.calendar_path, Path::new("/etc/ams/cal.txt"));
        assert_eq!(c.gallery_path, Path::new("/etc/ams/db/students.jsonl"));
        assert_eq!(c.scan_archive_dir, Path::new("/srv/scans"));
        assert_eq!(c.ledger_path, Path::new("/etc/ams/data/attendance.csv"));
        assert_eq!(c.sms_webhook_url.as_deref(), Some("http://127.0.0.1:9000/sms"));
        assert_eq!(c.listen_addr, "0.0.0.0:8081");
    }

    #[test]
    fn rejects_bad_documents() {
        let base = Path::new(".");
        assert!(matches!(Config::parse("degree 4", base), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(Config::parse("\ncolour = red", base), Err(ConfigError::UnknownKey { line: 2, .. })));
        assert!(matches!(Config::parse("degree = x", base), Err(ConfigError::Value { .. })));
        assert!(matches!(Config::parse("degree = 2\ndegree = 3", base), Err(ConfigError::Repeated { .. })));
        assert!(matches!(Config::parse("timezone = Mars/Base", base), Err(ConfigError::Value { .. })));
        assert!(matches!(Config::parse("sample_count = 2", base), Err(ConfigError::Matcher(_))));
        assert!(matches!(Config::parse("threshold = -1", base), Err(ConfigError::Matcher(_))));
        assert!(matches!(Config::parse("listen_addr = nowhere", base), Err(ConfigError::Value { .. })));
    }
}
