//! Inbound HTTP API.

use std::convert::Infallible;
use std::future::Future;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use ozy_core::term::{float_preserving, parse_json_strict};
use serde_json::{json, Value as Json};

use crate::address::valid_token;
use crate::envelope::{Envelope, Mode};
use crate::hub::HubEvent;
use crate::reply::AskOutcome;
use crate::runtime::{Container, Delivery, RouteError};

pub const PROCESS_HEADER: &str = "x-ozy-process";

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.0, &json!({ "error": self.1 }))
    }
}

impl From<RouteError> for ApiError {
    fn from(e: RouteError) -> ApiError {
        let status = match &e {
            RouteError::UnknownTenant(_) | RouteError::UnknownProcess(_) | RouteError::UnknownProgram(_) => StatusCode::NOT_FOUND,
            RouteError::Duplicate(_) => StatusCode::CONFLICT,
            RouteError::BadRequest(_) => StatusCode::BAD_REQUEST,
            RouteError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn json_response(status: StatusCode, body: &Json) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], float_preserving(body)).into_response()
}

fn bad(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn authorize(c: &Container, tenant: &str, headers: &HeaderMap) -> Result<(), ApiError> {
    if !valid_token(tenant) {
        return Err(bad(format!("invalid tenant id `{tenant}`")));
    }
    let token = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer "));
    if c.authorize(tenant, token)? {
        Ok(())
    } else {
        Err(ApiError(StatusCode::UNAUTHORIZED, format!("bad or missing bearer token for tenant `{tenant}`")))
    }
}

fn parse_body(body: &str) -> Result<Json, ApiError> {
    parse_json_strict(body).map_err(|e| bad(format!("malformed JSON: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

/// Routes the envelope and, for an Ask, waits for the reply off the async workers.
async fn dispatch(c: &Container, env: Envelope) -> Result<(Delivery, Option<AskOutcome>), ApiError> {
    let c = c.clone();
    let timeout = Duration::from_millis(env.timeout_ms.unwrap_or(c.ask_timeout_ms()));
    blocking(move || {
        let d = c.route(env)?;
        let outcome = d.reply.as_ref().map(|s| s.wait(timeout));
        Ok::<_, RouteError>((d, outcome))
    })
    .await?
    .map_err(ApiError::from)
}

fn with_process(mut r: Response, d: &Delivery) -> Response {
    if let Some(p) = d.process.as_deref().and_then(|p| HeaderValue::from_str(p).ok()) {
        r.headers_mut().insert(PROCESS_HEADER, p);
    }
    r
}

fn outcome_status(o: &AskOutcome) -> StatusCode {
    match o {
        AskOutcome::Value(_) => StatusCode::OK,
        AskOutcome::Failure(_) => StatusCode::UNPROCESSABLE_ENTITY,
        AskOutcome::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
    }
}

fn dead_lettered(d: &Delivery, id: &str) -> Response {
    with_process(json_response(StatusCode::NOT_FOUND, &json!({ "error": "undeliverable", "deadLetter": id, "processId": d.process })), d)
}

async fn create(State(c): State<Container>, Path(t): Path<String>, headers: HeaderMap, body: String) -> Result<Response, ApiError> {
    authorize(&c, &t, &headers)?;
    let env = Envelope::from_json(&t, true, &parse_body(&body)?).map_err(bad)?;
    let (d, outcome) = dispatch(&c, env).await?;
    if let Some(id) = &d.dead_letter {
        return Ok(dead_lettered(&d, id));
    }
    let r = match outcome {
        None => json_response(StatusCode::CREATED, &json!({ "processId": d.process })),
        Some(AskOutcome::Value(v)) => json_response(StatusCode::CREATED, &json!({ "processId": d.process, "reply": v.to_json() })),
        Some(o) => json_response(outcome_status(&o), &json!({ "processId": d.process, "failure": o.failure().map(|f| f.to_json()) })),
    };
    Ok(with_process(r, &d))
}

async fn message(State(c): State<Container>, Path(t): Path<String>, headers: HeaderMap, body: String) -> Result<Response, ApiError> {
    authorize(&c, &t, &headers)?;
    let env = Envelope::from_json(&t, false, &parse_body(&body)?).map_err(bad)?;
    let mode = env.mode;
    let (d, outcome) = dispatch(&c, env).await?;
    if let Some(id) = &d.dead_letter {
        return Ok(dead_lettered(&d, id));
    }
    let r = match (mode, outcome) {
        (Mode::Ask, Some(o)) => {
            let body = match &o {
                AskOutcome::Value(v) => v.to_json(),
                other => other.failure().map(|f| f.to_json()).unwrap_or(Json::Null),
            };
            json_response(outcome_status(&o), &body)
        }
        _ => json_response(StatusCode::ACCEPTED, &json!({ "processId": d.process })),
    };
    Ok(with_process(r, &d))
}

async fn info(State(c): State<Container>, Path((t, p)): Path<(String, String)>, headers: HeaderMap) -> Result<Response, ApiError> {
    authorize(&c, &t, &headers)?;
    if !valid_token(&p) {
        return Err(bad(format!("invalid process id `{p}`")));
    }
    let info = blocking(move || c.process_info(&t, &p)).await??;
    Ok(json_response(StatusCode::OK, &serde_json::to_value(info).expect("process info serializes")))
}

async fn list(State(c): State<Container>, Path(t): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    authorize(&c, &t, &headers)?;
    let all = blocking(move || c.processes(&t)).await??;
    Ok(json_response(StatusCode::OK, &serde_json::to_value(all).expect("process info serializes")))
}

async fn dead_letters(State(c): State<Container>, Path(t): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    authorize(&c, &t, &headers)?;
    let all = blocking(move || c.dead_letters(&t)).await??;
    Ok(json_response(StatusCode::OK, &serde_json::to_value(all).expect("dead letters serialize")))
}

async fn register(State(c): State<Container>, Path(t): Path<String>, headers: HeaderMap, body: String) -> Result<Response, ApiError> {
    authorize(&c, &t, &headers)?;
    let j = parse_body(&body)?;
    let (Some(name), Some(source)) = (j.get("name").and_then(Json::as_str), j.get("source").and_then(Json::as_str)) else {
        return Err(bad("body needs string fields `name` and `source`"));
    };
    let (name, source) = (name.to_string(), source.to_string());
    let n = name.clone();
    blocking(move || c.register_program(&t, &n, &source)).await??;
    Ok(json_response(StatusCode::CREATED, &json!({ "program": name })))
}

async fn programs(State(c): State<Container>, Path(t): Path<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    authorize(&c, &t, &headers)?;
    Ok(json_response(StatusCode::OK, &json!(c.programs(&t)?)))
}

async fn advance(State(c): State<Container>, body: String) -> Result<Response, ApiError> {
    let j = parse_body(&body)?;
    let ms = j.get("ms").and_then(Json::as_i64).ok_or_else(|| bad("body needs an integer field `ms`"))?;
    if !c.clock().is_virtual() {
        return Err(ApiError(StatusCode::CONFLICT, "the container runs on the real clock".into()));
    }
    let now = blocking(move || c.advance(ms)).await??;
    Ok(json_response(StatusCode::OK, &json!({ "now": now })))
}

/// Reports a sink that went away before its stream ended.
struct SinkGuard {
    c: Container,
    tenant: String,
    process: String,
    sid: String,
    done: bool,
}

impl SinkGuard {
    fn disarm(&mut self) {
        self.done = true;
    }
}

impl Drop for SinkGuard {
    fn drop(&mut self) {
        if !self.done {
            self.c.notify_sink_lost(&self.tenant, &self.process, &self.sid);
        }
    }
}

async fn stream(State(c): State<Container>, Path((t, s)): Path<(String, String)>, headers: HeaderMap) -> Result<Response, ApiError> {
    authorize(&c, &t, &headers)?;
    let feed = c.feed(&t, &s).ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown stream `{s}`")))?;
    let rx = feed.watch();
    let closing = c.closing();
    let guard = SinkGuard { c: c.clone(), tenant: t, process: feed.process.clone(), sid: s, done: false };
    let events = futures::stream::unfold((feed, rx, closing, 0usize, guard), |(feed, mut rx, mut closing, idx, mut guard)| async move {
        if guard.done {
            return None;
        }
        loop {
            if let Some(e) = feed.events_from(idx).into_iter().next() {
                let ev = match e {
                    HubEvent::Item(t) => Event::default().data(t.to_json_text()),
                    HubEvent::End => {
                        guard.disarm();
                        Event::default().event("end").data("")
                    }
                };
                return Some((Ok::<_, Infallible>(ev), (feed, rx, closing, idx + 1, guard)));
            }
            tokio::select! {
                changed = rx.changed() => if changed.is_err() { return None },
                _ = closing.changed() => {
                    guard.disarm();
                    return None;
                }
            }
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()).into_response())
}

pub fn router(c: Container) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/admin/clock/advance", post(advance))
        .route("/root/tenants/{t}/processes", post(create).get(list))
        .route("/root/tenants/{t}/processes/{p}", get(info))
        .route("/root/tenants/{t}/messages", post(message))
        .route("/root/tenants/{t}/streams/{s}", get(stream))
        .route("/root/tenants/{t}/deadletters", get(dead_letters))
        .route("/root/tenants/{t}/programs", post(register).get(programs))
        .with_state(c)
}

/// Serves until `shutdown` resolves, then passivates every quiescent process.
pub async fn serve(c: Container, listener: tokio::net::TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    let timers = c.spawn_timer_task();
    let passivator = c.spawn_passivation_task();
    let c2 = c.clone();
    let stop = async move {
        shutdown.await;
        c2.begin_shutdown();
    };
    axum::serve(listener, router(c.clone())).with_graceful_shutdown(stop).await?;
    passivator.abort();
    if let Some(t) = timers {
        t.abort();
    }
    let c3 = c.clone();
    let n = tokio::task::spawn_blocking(move || c3.shutdown()).await.unwrap_or(0);
    tracing::info!(passivated = n, "container stopped");
    Ok(())
}
