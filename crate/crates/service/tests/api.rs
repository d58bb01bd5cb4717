mod common;

use std::sync::Arc;

use ams_core::save_surface;
use ams_core::synth::generate_identity;
use ams_service::api::router;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::*;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

fn enroll_body(seed: u64, scans: Value) -> Value {
    let s = student(seed);
    json!({
        "name": s.name,
        "roll_number": s.roll_number,
        "parent_contact": s.parent_contact,
        "scans": scans,
        "enrolled_at": "2024-03-01T09:00:00Z",
    })
}

fn capture(id: &str, ts: &str, scan: &str) -> Value {
    json!({ "capture_id": id, "camera_id": "door-1", "timestamp": ts, "scan": { "path": scan } })
}

#[tokio::test]
async fn every_route_answers_with_the_documented_status() {
    let fx = Fixture::new("UTC");
    let app = router(Arc::new(fx.service()));

    fx.archive("e1.off", &generate_identity::<f64>(1));
    let inline = save_surface(&generate_identity::<f64>(2));
    let (s, v) = call(&app, "POST", "/students", Some(enroll_body(1, json!([{ "path": "e1.off" }])))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v, json!({ "student_id": 1 }));
    let (s, v) = call(&app, "POST", "/students", Some(enroll_body(2, json!([{ "inline": inline }])))).await;
    assert_eq!((s, v["student_id"].as_u64()), (StatusCode::CREATED, Some(2)));

    assert_eq!(call(&app, "POST", "/students", Some(enroll_body(1, json!([{ "path": "e1.off" }])))).await.0, StatusCode::CONFLICT);
    assert_eq!(call(&app, "POST", "/students", Some(enroll_body(3, json!([])))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        call(&app, "POST", "/students", Some(enroll_body(3, json!([{ "inline": "OFF\n" }])))).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert!(call(&app, "POST", "/students", Some(json!({ "name": "x" }))).await.0.is_client_error());

    let (s, v) = call(&app, "GET", "/students/1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["roll_number"], "R001");
    assert_eq!(v["scan_refs"], json!(["e1.off"]));
    let (s, v) = call(&app, "GET", "/students/42", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());

    fx.archive("c1.off", &face(1, 0.25, 7));
    let (s, v) = call(&app, "POST", "/captures", Some(capture("c1", "2024-03-04T09:00:00Z", "c1.off"))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["decision"], json!({ "kind": "matched", "student_id": 1 }));
    assert_eq!(v["attendance_marked"], true);
    let (s, v) = call(&app, "POST", "/captures", Some(capture("c1", "2024-03-04T09:00:00Z", "c1.off"))).await;
    assert_eq!((s, &v["decision"]["kind"]), (StatusCode::OK, &json!("duplicate")));
    let (s, v) = call(&app, "POST", "/captures", Some(capture("c2", "2024-03-04T09:00:00Z", "gone.off"))).await;
    assert_eq!((s, &v["decision"]["kind"]), (StatusCode::UNPROCESSABLE_ENTITY, &json!("failed")));

    fx.archive("c3.off", &face(HELD_OUT, 0.25, 8));
    let (_, v) = call(&app, "POST", "/captures", Some(capture("c3", "2024-03-05T09:00:00+00:00", "c3.off"))).await;
    assert_eq!(v["decision"], json!({ "kind": "stranger", "stranger_id": 1 }));

    let (s, v) = call(&app, "GET", "/strangers?status=pending", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 1);
    assert_eq!(v[0]["status"], json!({ "state": "pending" }));
    assert_eq!(call(&app, "GET", "/strangers?status=odd", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "GET", "/strangers", None).await.0, StatusCode::OK);

    let resolve = |id: u64, body: Value| {
        let app = app.clone();
        async move { call(&app, "POST", &format!("/strangers/{id}/resolve"), Some(body)).await }
    };
    assert_eq!(resolve(1, json!({ "action": "link", "student_id": 9 })).await.0, StatusCode::NOT_FOUND);
    assert_eq!(resolve(7, json!({ "action": "confirm" })).await.0, StatusCode::NOT_FOUND);
    let (s, v) = resolve(1, json!({ "action": "link", "student_id": 2 })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["decision"], json!({ "kind": "linked", "stranger_id": 1, "student_id": 2 }));
    assert_eq!(resolve(1, json!({ "action": "confirm" })).await.0, StatusCode::CONFLICT);
    assert!(resolve(1, json!({ "action": "shrug" })).await.0.is_client_error());
    let (_, v) = call(&app, "GET", "/strangers?status=linked", None).await;
    assert_eq!(v[0]["status"], json!({ "state": "linked", "student_id": 2 }));

    let (s, v) = call(&app, "GET", "/attendance/1?from=2024-03-01&to=2024-03-31", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["percentage"], "25.00%");
    assert_eq!(v["dates"], json!(["2024-03-04"]));
    assert_eq!(call(&app, "GET", "/attendance/1?from=2024-03-01", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "GET", "/attendance/1?from=2024-03-01&to=bad", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        call(&app, "GET", "/attendance/1?from=2024-03-09&to=2024-03-10", None).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert_eq!(call(&app, "GET", "/attendance/9?from=2024-03-01&to=2024-03-31", None).await.0, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, "GET", "/reports/percentages?from=2024-03-01&to=2024-04-30", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v[0]["percentage"], "20.00%");
    assert_eq!(v[1]["percentage"], "20.00%");

    let (s, v) = call(&app, "GET", "/reports/monthly/2?year=2024", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["03"], 1);
    assert_eq!(v["04"], 0);
    assert_eq!(v.as_object().unwrap().len(), 12);
    assert_eq!(call(&app, "GET", "/reports/monthly/2", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "GET", "/nowhere", None).await.0, StatusCode::NOT_FOUND);
}
