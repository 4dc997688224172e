#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use miniops_core::ManualClock;
use miniops_gateway::{app, ApiConfig, Gateway, Stack, Upstream, Upstreams};
use serde_json::Value;
use tower::ServiceExt;

pub const TOKEN: &str = "s3cret";
pub const T0: i64 = 1_700_000_000_000;

pub fn stack() -> Arc<Stack> {
    Arc::new(Stack::open(None, Arc::new(ManualClock::new(T0))).unwrap())
}

pub fn gateway_over(upstreams: Upstreams) -> Router {
    app(Gateway::new(ApiConfig::new(TOKEN), upstreams))
}

pub fn gateway(stack: &Stack) -> Router {
    gateway_over(stack.upstreams())
}

/// A port nothing listens on.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}")
}

pub fn remote(url: &str) -> Upstream {
    Upstream::Remote(url.to_string())
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub body: Value,
}

pub async fn call(
    app: &Router,
    method: &str,
    path: &str,
    body: Option<Value>,
    token: Option<&str>,
) -> Reply {
    let mut req = Request::builder().method(method).uri(path);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    Reply {
        status,
        headers,
        body,
    }
}

/// Serves `router` on a loopback port from a background runtime.
pub struct Served {
    pub addr: SocketAddr,
    _rt: tokio::runtime::Runtime,
}

impl Served {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

pub fn serve(router: Router) -> Served {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let listener = rt
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move {
        axum::serve(listener, router).await.unwrap();
    });
    Served { addr, _rt: rt }
}
