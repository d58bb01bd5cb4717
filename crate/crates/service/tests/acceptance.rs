//! Acceptance suite. Prints one PASS/FAIL line per criterion, then fails if any
//! criterion failed.
//!
//! ```text
//! cargo test -p ams-service --test acceptance -- --nocapture
//! ```

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use ams_core::synth::{apply_rigid, expression_magnitude, generate_identity, random_rigid, run_benchmark, BenchSettings};
use ams_core::*;
use ams_service::{AttendanceLedger, Decision as ServiceDecision, MarkOutcome, NotificationStatus, Percentage, ScriptedGateway};
use chrono::{Datelike, Days, NaiveDate};
use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Point3<f64>> {
    (0..n)
        .map(|_| {
            [
                scale * (2.0 * rng.random::<f64>() - 1.0),
                0.7 * scale * (2.0 * rng.random::<f64>() - 1.0),
                0.4 * scale * (2.0 * rng.random::<f64>() - 1.0),
            ]
        })
        .collect()
}

/// Every monomial x^p y^q z^r with p+q+r <= degree, by explicit triple loop.
fn naive_moments(points: &[Point3<f64>], degree: u32) -> Vec<f64> {
    let mut out = Vec::new();
    for total in 0..=degree {
        for p in 0..=total {
            for q in 0..=total - p {
                let r = total - p - q;
                let mut sum = 0.0;
                for pt in points {
                    sum += pt[0].powi(p as i32) * pt[1].powi(q as i32) * pt[2].powi(r as i32);
                }
                out.push(sum / points.len() as f64);
            }
        }
    }
    out
}

fn moment_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(4..=50);
        let degree = rng.random_range(0..=4);
        let form = normalize_pose(&random_points(&mut rng, m, 30.0)).map_err(|e| e.to_string())?;
        let sig = moment_vector(&form, degree).map_err(|e| e.to_string())?;
        let oracle = naive_moments(form.points(), degree);
        check(sig.values().len() == oracle.len(), || "length mismatch".into())?;
        let scale = oracle.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in sig.values().iter().zip(&oracle) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-12, || format!("relative error {worst:e}"))?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("max relative error {worst:.1e} over 100 forms in {elapsed:.2?}"))
}

fn random_signature(rng: &mut ChaCha8Rng, degree: u32) -> MomentSignature<f64> {
    let n = (degree as usize + 1) * (degree as usize + 2) * (degree as usize + 3) / 6;
    let values = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
    MomentSignature::from_values(degree, values).unwrap()
}

fn distance_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..1000 {
        let degree = rng.random_range(0..=5);
        let a = random_signature(&mut rng, degree);
        let b = random_signature(&mut rng, degree);
        let mut oracle = 0.0;
        for (x, y) in a.values().iter().zip(b.values()) {
            let d = x - y;
            oracle += d * d;
        }
        let got = moment_distance(&a, &b).map_err(|e| e.to_string())?;
        check(got == oracle, || format!("{got:e} != {oracle:e}"))?;
        check(moment_distance(&a, &a).unwrap() == 0.0, || "d(a,a) != 0".into())?;
    }
    for _ in 0..1000 {
        let degree = rng.random_range(0..=5);
        let [a, b, c] = [0; 3].map(|_| random_signature(&mut rng, degree));
        let d = |x: &MomentSignature<f64>, y: &MomentSignature<f64>| moment_distance(x, y).unwrap().sqrt();
        let (ac, ab, bc) = (d(&a, &c), d(&a, &b), d(&b, &c));
        check(ac <= (ab + bc) * (1.0 + 1e-12), || format!("triangle {ac} > {ab} + {bc}"))?;
    }
    Ok("1000 pairs exact, 1000 triples satisfy the triangle inequality".into())
}

fn rigid_invariance() -> Outcome {
    let start = Instant::now();
    let cfg = MatcherConfig::<f64>::default();
    let seeds: Vec<u64> = (1..=20).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let motions: Vec<Vec<([f64; 3], [f64; 3])>> = seeds.iter().map(|_| (0..5).map(|_| random_rigid(&mut rng, 200.0)).collect()).collect();
    let per_identity: Vec<Result<(MomentSignature<f64>, Vec<MomentSignature<f64>>), String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .zip(&motions)
            .map(|(&seed, motions)| {
                let cfg = &cfg;
                scope.spawn(move || {
                    let s: Surface<f64> = generate_identity(seed);
                    let base = signature_of(&s, cfg).map_err(|e| e.to_string())?;
                    let moved = motions
                        .iter()
                        .map(|&(aa, t)| signature_of(&apply_rigid(&s, aa, t), cfg).map_err(|e| e.to_string()))
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok((base, moved))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let per_identity = per_identity.into_iter().collect::<Result<Vec<_>, _>>()?;
    let gallery: Vec<GalleryEntry<f64>> = seeds
        .iter()
        .zip(&per_identity)
        .map(|(&id, (base, _))| GalleryEntry {
            student_id: id,
            signatures: vec![base.clone()],
        })
        .collect();
    let matcher = Matcher::from_config(&cfg, None);
    let mut worst: f64 = 0.0;
    let mut same = 0;
    for (base, moved) in &per_identity {
        let expected = matcher.identify(base, &gallery).map_err(|e| e.to_string())?.decision;
        for m in moved {
            worst = worst.max(moment_distance(base, m).unwrap().sqrt() / base.norm());
            if matcher.identify(m, &gallery).map_err(|e| e.to_string())?.decision == expected {
                same += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-6, || format!("relative drift {worst:e}"))?;
    check(same == 100, || format!("{same}/100 identical decisions"))?;
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("max relative drift {worst:.1e}, 100/100 identical decisions in {elapsed:.2?}"))
}

fn mds_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst: f64 = 0.0;
    for n in 10..=50 {
        let pts = random_points(&mut rng, n, 50.0);
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let d = Matrix::from_fn(n, n, |i, j| dist(&pts[i], &pts[j]));
        let x = classical_mds(&d, 3).map_err(|e| e.to_string())?;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((dist(x.row(i), x.row(j)) - d[(i, j)]).abs());
            }
        }
    }
    check(worst <= 1e-9, || format!("max abs error {worst:e}"))?;
    let zero = classical_mds(&Matrix::<f64>::zeros(7, 7), 3).map_err(|e| e.to_string())?;
    let off = (0..7).flat_map(|i| zero.row(i).to_vec()).fold(0.0f64, |a, v| a.max(v.abs()));
    check(off == 0.0, || format!("zero matrix embeds at distance {off:e} from the origin"))?;
    Ok(format!("n = 10..50 max abs error {worst:.1e}; zero matrix maps to the origin"))
}

fn expression_benchmark() -> Outcome {
    let start = Instant::now();
    let report = run_benchmark(BenchSettings::new(10, 5), &MatcherConfig::<f64>::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(report.probes.len() == 40, || format!("{} probes", report.probes.len()))?;
    check((1..5).all(|j| expression_magnitude(j, 5) <= 1.0), || "magnitude above 1".into())?;
    let ratio = report.inter.mean / report.intra.mean;
    let line = format!("rank-1 {:.3}, inter/intra mean {ratio:.2} in {elapsed:.2?}", report.rank1_accuracy);
    check(report.rank1_accuracy >= 0.90, || line.clone())?;
    check(ratio >= 2.0, || line.clone())?;
    within(elapsed, Duration::from_secs(60))?;
    Ok(line)
}

fn latent_blocks(rng: &mut ChaCha8Rng, n: usize, rho: f64) -> (Matrix<f64>, Matrix<f64>) {
    let sigma = (1.0 / rho - 1.0).sqrt();
    let mut g = || -> f64 { StandardNormal.sample(rng) };
    let mut p = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for _ in 0..n {
        let z = g();
        let raw_p = [z + sigma * g(), g(), g()];
        let raw_q = [z + sigma * g(), g()];
        p.push([raw_p[0] + 0.5 * raw_p[1], 2.0 * raw_p[1] - raw_p[2], raw_p[0] - raw_p[2] + 3.0]);
        q.push([raw_q[0] - 0.3 * raw_q[1], raw_q[1] + 1.0]);
    }
    (Matrix::from_rows(&p).unwrap(), Matrix::from_rows(&q).unwrap())
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

fn cca_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let err = |e: CcaError| e.to_string();

    let p: Matrix<f64> = Matrix::from_fn(60, 4, |_, _| StandardNormal.sample(&mut rng));
    let same = fit_cca(&p, &p, 4).map_err(err)?;
    let gap = same.correlations().iter().fold(0.0f64, |a, &r: &f64| a.max((r - 1.0).abs()));
    check(gap <= 1e-8, || format!("identical blocks: |rho - 1| = {gap:e}"))?;

    let (p, q) = latent_blocks(&mut rng, 400, 0.6);
    let m = fit_cca(&p, &q, 2).map_err(err)?;
    let u = project(&m, &p, Block::P).map_err(err)?;
    let v = project(&m, &q, Block::Q).map_err(err)?;
    let mut resid: f64 = 0.0;
    for i in 0..2 {
        resid = resid.max((cov(&u.column(i), &u.column(i)) - 1.0).abs());
        resid = resid.max((cov(&v.column(i), &v.column(i)) - 1.0).abs());
    }
    check(resid <= 1e-8, || format!("constraint residual {resid:e}"))?;

    let (p, q) = latent_blocks(&mut rng, 2000, 0.8);
    let rho1 = fit_cca(&p, &q, 1).map_err(err)?.correlations()[0];
    check((rho1 - 0.8).abs() <= 0.05, || format!("recovered rho1 {rho1}"))?;

    let (p3, q) = latent_blocks(&mut rng, 30, 0.7);
    let p = Matrix::from_fn(30, 2, |i, j| p3[(i, j)]);
    let fitted = fit_cca(&p, &q, 1).map_err(err)?.correlations()[0];
    let pc = [p.column(0), p.column(1)];
    let qc = [q.column(0), q.column(1)];
    let steps = 2000;
    let mut best: f64 = 0.0;
    for i in 0..steps {
        let ta = std::f64::consts::PI * i as f64 / steps as f64;
        let a: Vec<f64> = (0..30).map(|r| ta.cos() * pc[0][r] + ta.sin() * pc[1][r]).collect();
        let va = cov(&a, &a);
        for j in 0..steps {
            let tb = std::f64::consts::PI * j as f64 / steps as f64;
            let b: Vec<f64> = (0..30).map(|r| tb.cos() * qc[0][r] + tb.sin() * qc[1][r]).collect();
            best = best.max(cov(&a, &b).abs() / (va * cov(&b, &b)).sqrt());
        }
    }
    // A grid step of pi/2000 in each angle costs at most about 1e-6 in correlation.
    check(fitted >= best - 1e-12 && fitted - best <= 1e-4, || format!("2x2: fitted {fitted} vs grid {best}"))?;
    Ok(format!(
        "identity gap {gap:.1e}, constraint residual {resid:.1e}, rho1 {rho1:.4} (true 0.8), 2x2 fitted {fitted:.6} vs grid {best:.6}"
    ))
}

fn attendance_arithmetic() -> Outcome {
    let label = |p, w| Percentage::new(p, w).map(|x| x.label()).unwrap_or_default();
    check(label(13, 74) == "17.57%", || format!("13/74 -> {}", label(13, 74)))?;
    for n in [1, 7, 74, 365] {
        check(label(0, n) == "0.00%", || format!("0/{n} -> {}", label(0, n)))?;
        check(label(n, n) == "100.00%", || format!("{n}/{n} -> {}", label(n, n)))?;
    }

    let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    let days: BTreeSet<NaiveDate> = (0..366)
        .map(|i| start + Days::new(i))
        .filter(|d| d.weekday().num_days_from_monday() < 5)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let day_list: Vec<NaiveDate> = days.iter().copied().collect();
    let mut marks: Vec<(u64, NaiveDate)> = (0..500).map(|_| (rng.random_range(1..=5), day_list[rng.random_range(0..day_list.len())])).collect();
    let mut ledger = AttendanceLedger::new(days.clone());
    for &(s, d) in &marks {
        ledger.mark_present(s, d).map_err(|e| e.to_string())?;
    }
    let once = ledger.render_marks();
    for _ in 0..5 {
        marks.shuffle(&mut rng);
        for &(s, d) in &marks {
            check(!ledger.mark_present(s, d).map_err(|e| e.to_string())?, || "replayed mark reported as new".into())?;
        }
    }
    check(ledger.render_marks() == once, || "ledger changed under replay".into())?;
    let last = NaiveDate::from_ymd_opt(2024, 12, 31).unwrap();
    for s in 1..=5 {
        let monthly: u64 = ledger.monthly_breakdown(s, 2024).iter().sum();
        let yearly = ledger.present_dates(s, start, last).len() as u64;
        check(monthly == yearly, || format!("student {s}: months sum {monthly}, year {yearly}"))?;
    }
    Ok("13/74 = 17.57%, 0/N and N/N exact, monthly sums match, replay idempotent".into())
}

fn end_to_end() -> Outcome {
    let err = |e: ams_service::ServiceError| e.to_string();
    let date = NaiveDate::from_ymd_opt(2024, 3, 4).unwrap();
    let run = || -> Result<(Fixture, Vec<ServiceDecision>), String> {
        let fx = Fixture::new("UTC");
        let svc = fx.service();
        enroll_all(&fx, &svc);
        let log = [
            event("e2e-1", "2024-03-04T08:50:00Z", fx.archive("e2e-1.off", &face(2, 0.25, 61))),
            event("e2e-2", "2024-03-04T14:00:00Z", fx.archive("e2e-2.off", &face(2, 0.0, 62))),
            event("e2e-3", "2024-03-04T09:10:00Z", fx.archive("e2e-3.off", &face(HELD_OUT, 0.25, 63))),
        ];
        let mut decisions = Vec::new();
        let mut marks = Vec::new();
        for e in &log {
            let r = svc.ingest(e).map_err(err)?;
            decisions.push(r.decision);
            marks.push(r.attendance);
        }
        check(decisions[0] == ServiceDecision::Matched { student_id: 2 }, || format!("enrolled capture: {:?}", decisions[0]))?;
        check(marks[0] == Some(MarkOutcome::Marked), || "enrolled capture not marked".into())?;
        check(marks[1] == Some(MarkOutcome::AlreadyPresent), || format!("second capture: {:?}", marks[1]))?;
        check(decisions[2] == ServiceDecision::Stranger { stranger_id: 1 }, || format!("held-out: {:?}", decisions[2]))?;
        check(svc.strangers(Some("pending")).map_err(err)?.len() == 1, || "no pending stranger".into())?;
        check(svc.attendance(2, date, date).map_err(err)?.present == 1, || "mark count".into())?;

        let settled = fx.state_bytes();
        for e in &log {
            check(svc.ingest(e).map_err(err)?.decision == ServiceDecision::Duplicate, || "replay not a duplicate".into())?;
        }
        check(fx.state_bytes() == settled, || "replay changed state".into())?;

        let roster: BTreeSet<u64> = ENROLLED.into_iter().collect();
        let present: BTreeSet<u64> = roster.iter().copied().filter(|&s| svc.attendance(s, date, date).map(|v| v.present == 1).unwrap_or(false)).collect();
        let mut gw = ScriptedGateway::accepting();
        let sent = svc.notify_absentees(date, &mut gw).map_err(err)?;
        let absent: BTreeSet<u64> = sent.iter().map(|n| n.student_id).collect();
        check(absent == &roster - &present, || format!("absentees {absent:?}, present {present:?}"))?;
        check(sent.iter().all(|n| n.status == NotificationStatus::Sent), || "undelivered notification".into())?;
        let keys: Vec<&str> = gw.calls.iter().map(|c| c.idempotency_key.as_str()).collect();
        check(keys == ["1:2024-03-04"], || format!("keys {keys:?}"))?;
        Ok((fx, decisions))
    };
    let (a, da) = run()?;
    let (b, db) = run()?;
    check(da == db, || "decisions differ between fresh replays".into())?;
    check(a.state_bytes() == b.state_bytes(), || "databases differ between fresh replays".into())?;
    Ok("match marks once, repeat is a no-op, held-out is pending, replays are byte-identical, absentees keyed".into())
}

#[test]
fn primary_criteria() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("moment oracle equivalence", moment_oracle),
        ("distance formula fidelity", distance_fidelity),
        ("rigid invariance", rigid_invariance),
        ("MDS fidelity", mds_fidelity),
        ("expression robustness benchmark", expression_benchmark),
        ("CCA", cca_checks),
        ("attendance arithmetic", attendance_arithmetic),
        ("end-to-end pipeline", end_to_end),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL {}. {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
