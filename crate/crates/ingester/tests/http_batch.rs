use std::io::Write;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use flate2::write::GzEncoder;
use flate2::Compression;
use http_body_util::BodyExt;
use miniops_ingester::http::router;
use miniops_ingester::Ingester;
use miniops_mqueue::{Broker, QueueConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn gz(v: &Value) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::default());
    e.write_all(v.to_string().as_bytes()).unwrap();
    e.finish().unwrap()
}

async fn post(app: &axum::Router, body: Vec<u8>, gzip: bool) -> (StatusCode, Value) {
    let mut req = Request::post("/v1/batch").header("content-type", "application/json");
    if gzip {
        req = req.header("content-encoding", "gzip");
    }
    let resp = app.clone().oneshot(req.body(Body::from(body)).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn gzip_batches_ack_reject_and_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let broker = Arc::new(Broker::open(dir.path(), QueueConfig::default()).unwrap());
    let ing = Arc::new(Ingester::new(broker.clone()));
    let app = router(ing.clone());
    let good = json!({
        "batch_id": "b1", "agent_id": "a", "sent_at": 0,
        "records": [{"topic": "metrics", "kind": "metric", "server": "s1", "name": "cpu", "ts": 1, "value": 1.5, "tags": {}}]
    });
    let (s, v) = post(&app, gz(&good), true).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["acked"], "b1");

    let mut bad = good.clone();
    bad["batch_id"] = json!("b2");
    bad["records"][0]["kind"] = json!("log");
    let (s, v) = post(&app, gz(&bad), true).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["index"], 0);

    let (s, _) = post(&app, b"\x1f\x8bgarbage".to_vec(), true).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    ing.set_available(false);
    let mut next = good.clone();
    next["batch_id"] = json!("b3");
    let (s, _) = post(&app, gz(&next), true).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    ing.set_available(true);
    let (s, _) = post(&app, next.to_string().into_bytes(), false).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(broker.head("metrics"), 2);
}
