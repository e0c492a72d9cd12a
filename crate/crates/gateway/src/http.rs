use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{RawQuery, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::cors::CorsLayer;

use crisis_core::event::{encode_event, Event};
use crisis_core::pattern::{Pattern, Predicate};
use crisis_core::scenario::{milestone_table, run_metrics, ChoiceRequest, ScenarioError};

use crate::engine::Engine;
use crate::GatewayError;

pub async fn bind(host: &str, port: u16) -> Result<TcpListener, GatewayError> {
    TcpListener::bind((host, port)).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => GatewayError::PortInUse(port),
        _ => GatewayError::Io(e),
    })
}

pub fn router(engine: Engine) -> Router {
    Router::new()
        .route("/state/processes", get(processes))
        .route("/state/inventory", get(inventory))
        .route("/proposals", get(proposals))
        .route("/decision-points", get(decision_points))
        .route("/choices", post(choices))
        .route("/history", get(history))
        .route("/metrics", get(metrics))
        .route("/stream", get(stream))
        .layer(CorsLayer::permissive())
        .with_state(engine)
}

pub async fn serve(listener: TcpListener, engine: Engine) -> std::io::Result<()> {
    axum::serve(listener, router(engine)).await
}

fn error(status: StatusCode, kind: &str, message: impl ToString) -> Response {
    (status, Json(json!({"error": kind, "message": message.to_string()}))).into_response()
}

fn ndjson(events: &[Event]) -> Response {
    let mut body = String::new();
    for e in events {
        body.push_str(&encode_event(e).expect("published events are valid"));
        body.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn processes(State(engine): State<Engine>) -> Response {
    engine
        .with_driver(|d| {
            let snapshot = d.orchestrator().snapshot(d.now());
            Json(json!({
                "now": d.now(),
                "paused": d.is_paused(),
                "finished": d.is_finished(),
                "instances": snapshot.instances,
            }))
        })
        .into_response()
}

async fn inventory(State(engine): State<Engine>) -> Response {
    engine
        .with_driver(|d| {
            let inv = d.orchestrator().inventory();
            Json(json!({
                "now": d.now(),
                "stock": inv.stock(),
                "reservations": inv.reservations().collect::<Vec<_>>(),
            }))
        })
        .into_response()
}

async fn proposals(State(engine): State<Engine>) -> Response {
    engine.with_driver(|d| Json(d.sar().proposals().to_vec())).into_response()
}

async fn decision_points(State(engine): State<Engine>) -> Response {
    engine.with_driver(|d| Json(d.decision_points())).into_response()
}

async fn choices(State(engine): State<Engine>, body: Result<Json<ChoiceRequest>, axum::extract::rejection::JsonRejection>) -> Response {
    let Json(request) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "BadRequest", e.body_text()),
    };
    let result = tokio::task::spawn_blocking(move || engine.submit(request)).await;
    match result {
        Ok(Ok(seq)) => Json(json!({"seq": seq})).into_response(),
        Ok(Err(e @ ScenarioError::UnknownPoint(_))) => error(StatusCode::NOT_FOUND, "UnknownPoint", e),
        Ok(Err(e @ ScenarioError::AlreadyDecided(_))) => error(StatusCode::CONFLICT, "AlreadyDecided", e),
        Ok(Err(e @ ScenarioError::Finished)) => error(StatusCode::CONFLICT, "Finished", e),
        Ok(Err(e)) => error(StatusCode::BAD_REQUEST, "Rejected", e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e),
    }
}

/// A history query: `[from, to)` plus a pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryQuery {
    pub from: u64,
    pub to: u64,
    pub pattern: Pattern,
}

/// Parses `from`, `to`, repeated `etype`/`source`, and repeated `where`
/// predicates such as `value>=2`.
pub fn parse_history_query(query: &str) -> Result<HistoryQuery, String> {
    let mut q = HistoryQuery { from: 0, to: u64::MAX, pattern: Pattern::any() };
    for (key, value) in form_urlencoded::parse(query.as_bytes()) {
        let num = || value.parse::<u64>().map_err(|_| format!("{key} must be a non-negative integer"));
        match key.as_ref() {
            "from" => q.from = num()?,
            "to" => q.to = num()?,
            "etype" => q.pattern = q.pattern.with_etypes([value.as_ref()]),
            "source" => q.pattern = q.pattern.with_sources([value.as_ref()]),
            "where" => {
                let p: Predicate = value.parse().map_err(|e| format!("{e}"))?;
                q.pattern = q.pattern.with_predicate(p);
            }
            other => return Err(format!("unknown parameter {other}")),
        }
    }
    if q.from > q.to {
        return Err(format!("from {} is after to {}", q.from, q.to));
    }
    Ok(q)
}

async fn history(State(engine): State<Engine>, RawQuery(query): RawQuery) -> Response {
    let q = match parse_history_query(query.as_deref().unwrap_or("")) {
        Ok(q) => q,
        Err(e) => return error(StatusCode::BAD_REQUEST, "BadQuery", e),
    };
    match engine.broker().query_history(q.from, q.to, &q.pattern) {
        Ok(events) => ndjson(&events),
        Err(e) => error(StatusCode::BAD_REQUEST, "BadQuery", e),
    }
}

async fn metrics(State(engine): State<Engine>) -> Response {
    let (now, finished) = engine.with_driver(|d| (d.now(), d.is_finished()));
    let events = engine.broker().log();
    let m = run_metrics(&events, engine.script());
    let table = milestone_table(&m.milestones);
    Json(json!({"now": now, "finished": finished, "metrics": m, "table": table})).into_response()
}

fn stream_pattern(query: Option<&str>) -> Result<Pattern, String> {
    for (key, value) in form_urlencoded::parse(query.unwrap_or("").as_bytes()) {
        if key == "pattern" {
            if value.trim().is_empty() {
                return Ok(Pattern::any());
            }
            return Pattern::from_json(&value).map_err(|e| format!("bad pattern: {e}"));
        }
    }
    Ok(Pattern::any())
}

async fn stream(ws: WebSocketUpgrade, State(engine): State<Engine>, RawQuery(query): RawQuery) -> Response {
    match stream_pattern(query.as_deref()) {
        Ok(pattern) => ws.on_upgrade(move |socket| session(socket, engine, pattern)),
        Err(e) => error(StatusCode::BAD_REQUEST, "BadPattern", e),
    }
}

async fn session(mut socket: WebSocket, engine: Engine, pattern: Pattern) {
    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel::<Arc<Event>>();
    let id = engine.broker().subscribe(
        pattern,
        Arc::new(move |e: &Arc<Event>| {
            let _ = tx.send(Arc::clone(e));
        }),
    );
    loop {
        tokio::select! {
            Some(event) = rx.recv() => {
                let line = encode_event(&event).expect("published events are valid");
                if socket.send(Message::Text(line.into())).await.is_err() {
                    break;
                }
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = engine.broker().unsubscribe(id);
}
