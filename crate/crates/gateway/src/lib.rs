//! REST facade over the subsystems.
//!
//! Requests under `/api/...` are looked up in [`routes::ROUTES`], checked for
//! the bearer token when mutating, rewritten to `/v1/...` and handed to the
//! owning upstream, which is either an in-process router or a remote base URL.
//! Status codes and bodies pass through untouched.

pub mod cli;
pub mod health;
pub mod routes;
pub mod stack;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get};
use axum::{Json, Router};
use serde_json::json;
use thiserror::Error;
use tower::ServiceExt;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use health::{HealthReport, QueueLag};
pub use routes::{Route, Subsystem, ROUTES};
pub use stack::Stack;

pub const REQUEST_ID: HeaderName = HeaderName::from_static("x-request-id");
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_AGENT_ADDR: &str = "127.0.0.1:7000";
pub const DEFAULT_CONSOLE_ORIGIN: &str = "http://localhost:5173";
const MAX_BODY: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("MINIOPS_TOKEN must be set to a non-empty value")]
    MissingToken,
    #[error("invalid address '{0}'")]
    Addr(String),
    #[error("invalid upstream url for {0}: '{1}'")]
    Upstream(String, String),
}

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub addr: SocketAddr,
    pub token: String,
    pub cors_origins: Vec<String>,
    /// Static console build served at `/`.
    pub console_dir: Option<PathBuf>,
    pub upstream_timeout: Duration,
    /// Subsystems served from another process instead of in-process.
    pub remote: BTreeMap<Subsystem, String>,
}

impl ApiConfig {
    pub fn new(token: impl Into<String>) -> Self {
        ApiConfig {
            addr: DEFAULT_ADDR.parse().expect("default address"),
            token: token.into(),
            cors_origins: vec![DEFAULT_CONSOLE_ORIGIN.to_string()],
            console_dir: None,
            upstream_timeout: Duration::from_secs(30),
            remote: BTreeMap::new(),
        }
    }

    /// `MINIOPS_TOKEN` (required), `MINIOPS_GATEWAY_ADDR`,
    /// `MINIOPS_CONSOLE_ORIGIN` (comma list) and `MINIOPS_UPSTREAM_<NAME>`.
    pub fn from_env() -> Result<Self, ConfigError> {
        let token = std::env::var("MINIOPS_TOKEN").unwrap_or_default();
        if token.trim().is_empty() {
            return Err(ConfigError::MissingToken);
        }
        let mut c = ApiConfig::new(token.trim());
        if let Ok(a) = std::env::var("MINIOPS_GATEWAY_ADDR") {
            c.addr = a.parse().map_err(|_| ConfigError::Addr(a))?;
        }
        if let Ok(o) = std::env::var("MINIOPS_CONSOLE_ORIGIN") {
            c.cors_origins = o
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
        }
        for s in Subsystem::UPSTREAMS {
            let key = format!("MINIOPS_UPSTREAM_{}", s.name().to_ascii_uppercase());
            if let Ok(url) = std::env::var(&key) {
                if !(url.starts_with("http://") || url.starts_with("https://")) {
                    return Err(ConfigError::Upstream(s.name().into(), url));
                }
                c.remote.insert(s, url.trim_end_matches('/').to_string());
            }
        }
        Ok(c)
    }
}

#[derive(Clone)]
pub enum Upstream {
    Local(Router),
    Remote(String),
}

#[derive(Clone, Default)]
pub struct Upstreams(BTreeMap<Subsystem, Upstream>);

impl Upstreams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, s: Subsystem, up: Upstream) -> Self {
        self.0.insert(s, up);
        self
    }

    pub fn set(&mut self, s: Subsystem, up: Upstream) {
        self.0.insert(s, up);
    }

    pub fn get(&self, s: Subsystem) -> Option<&Upstream> {
        self.0.get(&s)
    }
}

/// What came back from an upstream.
pub struct UpstreamReply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

pub struct Gateway {
    config: ApiConfig,
    upstreams: Upstreams,
    http: reqwest::Client,
    ids: RequestIds,
}

struct RequestIds {
    prefix: u32,
    next: AtomicU64,
}

impl RequestIds {
    fn next(&self) -> String {
        format!(
            "{:08x}-{:08x}",
            self.prefix,
            self.next.fetch_add(1, Ordering::Relaxed)
        )
    }
}

fn acceptable_id(v: &HeaderValue) -> bool {
    let b = v.as_bytes();
    !b.is_empty() && b.len() <= 128 && b.iter().all(|c| c.is_ascii_graphic())
}

fn json_error(status: StatusCode, body: serde_json::Value) -> Response {
    (status, Json(body)).into_response()
}

fn bad_gateway(s: Subsystem, detail: &str) -> Response {
    json_error(
        StatusCode::BAD_GATEWAY,
        json!({"error": format!("upstream {} unavailable: {detail}", s.name()), "upstream": s.name()}),
    )
}

const FORWARDED: [HeaderName; 4] = [
    header::CONTENT_TYPE,
    header::CONTENT_ENCODING,
    header::ACCEPT,
    REQUEST_ID,
];

impl Gateway {
    pub fn new(config: ApiConfig, upstreams: Upstreams) -> Arc<Self> {
        let http = reqwest::Client::builder()
            .timeout(config.upstream_timeout)
            .build()
            .expect("http client");
        Arc::new(Gateway {
            config,
            upstreams,
            http,
            ids: RequestIds {
                prefix: rand::random(),
                next: AtomicU64::new(1),
            },
        })
    }

    pub fn config(&self) -> &ApiConfig {
        &self.config
    }

    fn authorized(&self, headers: &HeaderMap) -> bool {
        let Some(v) = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
        else {
            return false;
        };
        let Some(tok) = v.strip_prefix("Bearer ").map(str::trim) else {
            return false;
        };
        // Length is not secret; compare the rest without an early exit.
        tok.len() == self.config.token.len()
            && tok
                .bytes()
                .zip(self.config.token.bytes())
                .fold(0u8, |acc, (a, b)| acc | (a ^ b))
                == 0
    }

    /// Sends one request to `s`. `Err` means the upstream could not be
    /// reached or is not configured.
    pub async fn call(
        &self,
        s: Subsystem,
        method: Method,
        path_and_query: &str,
        headers: &HeaderMap,
        body: Bytes,
    ) -> Result<UpstreamReply, String> {
        match self.upstreams.get(s) {
            None => Err("not configured".into()),
            Some(Upstream::Local(router)) => {
                let mut req = Request::builder().method(method).uri(path_and_query);
                for h in &FORWARDED {
                    if let Some(v) = headers.get(h) {
                        req = req.header(h, v);
                    }
                }
                let req = req.body(Body::from(body)).map_err(|e| e.to_string())?;
                let resp = router
                    .clone()
                    .oneshot(req)
                    .await
                    .map_err(|e| e.to_string())?;
                let (parts, body) = resp.into_parts();
                let body = to_bytes(body, MAX_BODY).await.map_err(|e| e.to_string())?;
                Ok(UpstreamReply {
                    status: parts.status,
                    headers: parts.headers,
                    body,
                })
            }
            Some(Upstream::Remote(base)) => {
                let mut req = self.http.request(method, format!("{base}{path_and_query}"));
                for h in &FORWARDED {
                    if let Some(v) = headers.get(h) {
                        req = req.header(h, v);
                    }
                }
                let resp = req.body(body).send().await.map_err(|e| e.to_string())?;
                let status = resp.status();
                let mut out = HeaderMap::new();
                if let Some(v) = resp.headers().get(header::CONTENT_TYPE) {
                    out.insert(header::CONTENT_TYPE, v.clone());
                }
                let body = resp.bytes().await.map_err(|e| e.to_string())?;
                Ok(UpstreamReply {
                    status,
                    headers: out,
                    body,
                })
            }
        }
    }
}

async fn request_id(State(g): State<Arc<Gateway>>, mut req: Request, next: Next) -> Response {
    let id = match req.headers().get(&REQUEST_ID) {
        Some(v) if acceptable_id(v) => v.clone(),
        _ => HeaderValue::from_str(&g.ids.next()).expect("ascii id"),
    };
    req.headers_mut().insert(REQUEST_ID, id.clone());
    let mut resp = next.run(req).await;
    resp.headers_mut().insert(REQUEST_ID, id);
    resp
}

async fn forward(State(g): State<Arc<Gateway>>, req: Request) -> Response {
    let (parts, body) = req.into_parts();
    let rest = parts.uri.path().strip_prefix("/api").unwrap_or_default();
    let route = match routes::lookup(parts.method.as_str(), rest) {
        routes::Lookup::Found(r) => r,
        routes::Lookup::WrongMethod(allowed) => {
            let mut resp = json_error(
                StatusCode::METHOD_NOT_ALLOWED,
                json!({"error": format!("{} not allowed on /api{rest}", parts.method), "allowed": allowed}),
            );
            if let Ok(v) = HeaderValue::from_str(&allowed.join(", ")) {
                resp.headers_mut().insert(header::ALLOW, v);
            }
            return resp;
        }
        routes::Lookup::NotFound => {
            return json_error(
                StatusCode::NOT_FOUND,
                json!({"error": format!("no route for {} /api{rest}", parts.method)}),
            )
        }
    };
    if route.mutating && !g.authorized(&parts.headers) {
        let mut resp = json_error(
            StatusCode::UNAUTHORIZED,
            json!({"error": "missing or invalid bearer token"}),
        );
        resp.headers_mut()
            .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
        return resp;
    }
    let body = match to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(_) => {
            return json_error(
                StatusCode::PAYLOAD_TOO_LARGE,
                json!({"error": "request body too large"}),
            )
        }
    };
    let target = match parts.uri.query() {
        Some(q) => format!("/v1{rest}?{q}"),
        None => format!("/v1{rest}"),
    };
    match g
        .call(route.upstream, parts.method, &target, &parts.headers, body)
        .await
    {
        Ok(reply) => {
            let mut resp = Response::new(Body::from(reply.body));
            *resp.status_mut() = reply.status;
            for h in [
                header::CONTENT_TYPE,
                header::CONTENT_ENCODING,
                header::ALLOW,
            ] {
                if let Some(v) = reply.headers.get(&h) {
                    resp.headers_mut().insert(h, v.clone());
                }
            }
            resp
        }
        Err(e) => {
            tracing::warn!(upstream = route.upstream.name(), error = %e, "upstream call failed");
            bad_gateway(route.upstream, &e)
        }
    }
}

async fn health_route(State(g): State<Arc<Gateway>>) -> Json<HealthReport> {
    Json(health::check(&g).await)
}

async fn routes_route() -> Json<serde_json::Value> {
    Json(json!({"routes": ROUTES}))
}

fn cors(origins: &[String]) -> CorsLayer {
    let list: Vec<HeaderValue> = origins
        .iter()
        .filter_map(|o| HeaderValue::from_str(o).ok())
        .collect();
    CorsLayer::new()
        .allow_origin(AllowOrigin::list(list))
        .allow_methods([Method::GET, Method::POST, Method::DELETE])
        .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE, REQUEST_ID])
        .expose_headers([REQUEST_ID])
}

/// The gateway as an axum app.
pub fn app(gateway: Arc<Gateway>) -> Router {
    let mut router = Router::new()
        .route("/api/health", get(health_route))
        .route("/api/routes", get(routes_route))
        .route("/api", any(forward))
        .route("/api/{*rest}", any(forward));
    if let Some(dir) = &gateway.config.console_dir {
        let index = dir.join("index.html");
        router = router.fallback_service(
            tower_http::services::ServeDir::new(dir)
                .fallback(tower_http::services::ServeFile::new(index)),
        );
    }
    router
        .layer(middleware::from_fn_with_state(gateway.clone(), request_id))
        .layer(cors(&gateway.config.cors_origins))
        .with_state(gateway)
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
}
