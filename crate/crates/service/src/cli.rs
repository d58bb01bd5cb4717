//! `ams` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ams_core::synth::{run_benchmark, BenchSettings};
use ams_core::{fit_cca, Matrix};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Parser, Subcommand};

use crate::attendance::{SmsGateway, WebhookGateway};
use crate::config::Config;
use crate::gallery::NewStudent;
use crate::pipeline::{read_event_log, ScanSource, Service};

#[derive(Debug, Parser)]
#[command(name = "ams", version, about = "Face-scan attendance service")]
pub struct Cli {
    /// Config file; defaults to $AMS_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the REST API.
    Serve,
    /// Enrol a student from one or more OFF scans.
    Enroll {
        #[arg(long)]
        name: String,
        #[arg(long)]
        roll: String,
        #[arg(long)]
        parent: String,
        #[arg(long = "scan", required = true)]
        scans: Vec<PathBuf>,
        /// Enrolment time (RFC 3339); defaults to now.
        #[arg(long)]
        at: Option<DateTime<Utc>>,
    },
    /// Ingest capture events from a JSON Lines file or a directory of them.
    IngestFile {
        path: PathBuf,
        /// Include per-stage timings in the printed reports.
        #[arg(long)]
        timings: bool,
    },
    /// Attendance percentages over a date range, or monthly counts for a year.
    Report {
        #[arg(long)]
        student: Option<u64>,
        #[arg(long, requires = "to")]
        from: Option<NaiveDate>,
        #[arg(long, requires = "from")]
        to: Option<NaiveDate>,
        #[arg(long, requires = "student", conflicts_with = "from")]
        year: Option<i32>,
    },
    /// Derive a match threshold from the enrolled gallery.
    Calibrate {
        #[arg(long, default_value_t = ams_core::matcher::DEFAULT_CALIBRATION_MARGIN)]
        margin: f64,
    },
    /// Canonical correlation analysis of two CSV matrices.
    Cca {
        #[arg(long)]
        p: PathBuf,
        #[arg(long)]
        q: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Directory for correlations.csv, directions_p.csv and directions_q.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic recognition benchmark.
    Bench {
        #[arg(long, default_value_t = 10)]
        identities: usize,
        #[arg(long, default_value_t = 5)]
        expressions: usize,
        /// Directory for report.json and distances.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Queue and send absence notifications for a working day.
    Notify {
        #[arg(long)]
        date: NaiveDate,
        /// List absentees without queueing or sending.
        #[arg(long)]
        dry_run: bool,
    },
}

type CliResult = Result<(), String>;

fn open(cfg: &Option<PathBuf>) -> Result<Service, String> {
    let cfg = Config::resolve(cfg.as_deref()).map_err(|e| format!("config: {e}"))?;
    Service::open(cfg).map_err(|e| e.to_string())
}

fn json_line(out: &mut dyn Write, v: &impl serde::Serialize) -> CliResult {
    let s = serde_json::to_string(v).map_err(|e| e.to_string())?;
    writeln!(out, "{s}").map_err(|e| e.to_string())
}

fn read_matrix(path: &Path) -> Result<Matrix<f64>, String> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| format!("{}:{}: {f:?}: {e}", path.display(), i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_matrix(path: &Path, m: &Matrix<f64>) -> CliResult {
    let mut w = csv::Writer::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))
            .map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

fn execute(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Serve => {
            let svc = Arc::new(open(&cli.config)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(crate::api::serve(svc)).map_err(|e| e.to_string())
        }
        Command::Enroll {
            name,
            roll,
            parent,
            scans,
            at,
        } => {
            let svc = open(&cli.config)?;
            let sources = scans
                .iter()
                .map(|p| std::fs::read_to_string(p).map(ScanSource::Inline).map_err(|e| format!("{}: {e}", p.display())))
                .collect::<Result<Vec<_>, _>>()?;
            let new = NewStudent {
                name,
                roll_number: roll,
                parent_contact: parent,
            };
            let rec = svc.enroll(new, &sources, at.unwrap_or_else(Utc::now)).map_err(|e| e.to_string())?;
            json_line(out, &serde_json::json!({ "student_id": rec.student_id }))
        }
        Command::IngestFile { path, timings } => {
            let svc = open(&cli.config)?;
            for ev in read_event_log(&path).map_err(|e| e.to_string())? {
                let mut report = svc.ingest(&ev).map_err(|e| e.to_string())?;
                if !timings {
                    report.stage_timings.clear();
                }
                json_line(out, &report)?;
            }
            Ok(())
        }
        Command::Report { student, from, to, year } => {
            let svc = open(&cli.config)?;
            match (student, from.zip(to), year) {
                (Some(id), None, Some(y)) => json_line(out, &svc.monthly(id, y).map_err(|e| e.to_string())?),
                (Some(id), Some((f, t)), None) => {
                    let view = svc.attendance(id, f, t).map_err(|e| e.to_string())?;
                    writeln!(out, "{}", view.percentage).map_err(|e| e.to_string())
                }
                (None, Some((f, t)), None) => {
                    for row in svc.percentages(f, t).map_err(|e| e.to_string())? {
                        writeln!(out, "{}\t{}\t{}", row.student_id, row.name, row.percentage).map_err(|e| e.to_string())?;
                    }
                    Ok(())
                }
                _ => Err("report needs --from and --to, or --student with --year".into()),
            }
        }
        Command::Calibrate { margin } => {
            let svc = open(&cli.config)?;
            let tau = svc.calibrate(margin).map_err(|e| e.to_string())?;
            writeln!(out, "{tau:e}").map_err(|e| e.to_string())
        }
        Command::Cca { p, q, k, out: dir } => {
            let model = fit_cca(&read_matrix(&p)?, &read_matrix(&q)?, k).map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            let rho = Matrix::from_rows(&model.correlations().iter().map(|&r| vec![r]).collect::<Vec<_>>())
                .map_err(|e| e.to_string())?;
            write_matrix(&dir.join("correlations.csv"), &rho)?;
            write_matrix(&dir.join("directions_p.csv"), model.directions_p())?;
            write_matrix(&dir.join("directions_q.csv"), model.directions_q())?;
            for r in model.correlations() {
                writeln!(out, "{r}").map_err(|e| e.to_string())?;
            }
            Ok(())
        }
        Command::Bench {
            identities,
            expressions,
            out: dir,
        } => {
            let cfg = match &cli.config {
                Some(_) => Config::resolve(cli.config.as_deref()).map_err(|e| format!("config: {e}"))?.matcher,
                None => ams_core::MatcherConfig::default(),
            };
            let report = run_benchmark(BenchSettings::new(identities, expressions), &cfg).map_err(|e| e.to_string())?;
            if let Some(dir) = dir {
                std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
                let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
                std::fs::write(dir.join("report.json"), json).map_err(|e| e.to_string())?;
                std::fs::write(dir.join("distances.csv"), report.distance_csv()).map_err(|e| e.to_string())?;
            }
            writeln!(
                out,
                "rank1={:.4} intra_mean={:e} inter_mean={:e} ratio={:.3} probes={}",
                report.rank1_accuracy,
                report.intra.mean,
                report.inter.mean,
                report.inter.mean / report.intra.mean,
                report.probes.len()
            )
            .map_err(|e| e.to_string())
        }
        Command::Notify { date, dry_run } => {
            let svc = open(&cli.config)?;
            if dry_run {
                for n in svc.absentees(date).map_err(|e| e.to_string())? {
                    json_line(out, &n)?;
                }
                return Ok(());
            }
            let mut gateway: Box<dyn SmsGateway> = match &svc.config().sms_webhook_url {
                Some(url) => Box::new(WebhookGateway::new(url.clone())?),
                None => return Err("sms_webhook_url is not configured".into()),
            };
            for n in svc.notify_absentees(date, gateway.as_mut()).map_err(|e| e.to_string())? {
                json_line(out, &n)?;
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let target: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}
