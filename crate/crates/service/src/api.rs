//! HTTP routes over the session store.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use patchline_core::nlu::PatchForm;
use patchline_core::orders::DispatchInfo;

use crate::error::ApiError;
use crate::session::{Command, FeedEvent};
use crate::store::Store;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.code.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Err(ApiError::bad_request("request body is empty"));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

/// Like [`parse`], but an empty body means the default.
fn parse_or_default<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse(body)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TranscriptBody {
    line: String,
    time: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DispatchBody {
    dispatch: DispatchInfo,
    time: f64,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TimeBody {
    time: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OcrBody {
    text: String,
    time: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlacardBody {
    number: String,
    time: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfirmBody {
    form: PatchForm,
    time: Option<f64>,
}

#[derive(Deserialize)]
struct NowQuery {
    now: Option<f64>,
}

#[derive(Deserialize)]
struct AfterQuery {
    #[serde(default)]
    after: u64,
    timeout_ms: Option<u64>,
}

pub const MAX_POLL_MS: u64 = 30_000;

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/dispatch", post(update_dispatch).put(update_dispatch))
        .route("/sessions/{id}/transcript", post(transcript))
        .route("/sessions/{id}/patch-form", get(patch_form))
        .route("/sessions/{id}/recommendation", get(recommendation))
        .route("/sessions/{id}/timeline", get(timeline))
        .route("/sessions/{id}/reminders", get(reminders))
        .route("/sessions/{id}/reminders/{rid}/ack", post(ack))
        .route("/sessions/{id}/ocr", post(ocr))
        .route("/sessions/{id}/placard", post(placard))
        .route("/sessions/{id}/epcr", get(epcr))
        .route("/sessions/{id}/epcr/confirm", post(confirm))
        .route("/sessions/{id}/events", get(events_stream))
        .route("/sessions/{id}/events/poll", get(events_poll))
        .with_state(store)
}

async fn create_session(State(store): State<Arc<Store>>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let dispatch: DispatchInfo = parse(&body)?;
    Ok((StatusCode::CREATED, Json(store.create(dispatch)?)))
}

async fn list_sessions(State(store): State<Arc<Store>>) -> Json<Value> {
    Json(json!({ "sessions": store.ids() }))
}

async fn get_session(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult {
    Ok(Json(store.get(&id)?.read(|s| s.summary())))
}

async fn update_dispatch(State(store): State<Arc<Store>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let b: DispatchBody = parse(&body)?;
    Ok(Json(store.execute(&id, Command::UpdateDispatch { dispatch: b.dispatch, time: b.time })?))
}

async fn transcript(State(store): State<Arc<Store>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    store.get(&id)?;
    let b: TranscriptBody = parse(&body)?;
    Ok(Json(store.execute(&id, Command::Transcript { line: b.line, time: b.time })?))
}

async fn patch_form(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult {
    Ok(Json(store.get(&id)?.read(|s| serde_json::to_value(&s.form).expect("serializable"))))
}

async fn recommendation(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult {
    let rec = store.get(&id)?.read(|s| s.recommendation.as_ref().map(|r| r.to_wire()));
    match rec {
        Some(r) => Ok(Json(serde_json::to_value(r).expect("serializable"))),
        None => Err(ApiError::insufficient("dispatch does not yet meet the minimum information for a standing order")),
    }
}

async fn timeline(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult {
    Ok(Json(store.get(&id)?.read(|s| serde_json::to_value(&s.timeline).expect("serializable"))))
}

async fn reminders(State(store): State<Arc<Store>>, Path(id): Path<String>, Query(q): Query<NowQuery>) -> ApiResult {
    store.get(&id)?;
    let now = q.now.ok_or_else(|| ApiError::bad_request("query parameter now is required"))?;
    Ok(Json(store.execute(&id, Command::FireReminders { now })?))
}

async fn ack(State(store): State<Arc<Store>>, Path((id, rid)): Path<(String, String)>, body: Bytes) -> ApiResult {
    let reminder_id: u64 = rid.parse().map_err(|_| ApiError::bad_request(format!("bad reminder id {rid:?}")))?;
    let b: TimeBody = parse_or_default(&body)?;
    let time = match b.time {
        Some(t) => t,
        None => store.default_time(&id)?,
    };
    Ok(Json(store.execute(&id, Command::Acknowledge { reminder_id, time })?))
}

async fn ocr(State(store): State<Arc<Store>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    store.get(&id)?;
    let b: OcrBody = parse(&body)?;
    let time = match b.time {
        Some(t) => t,
        None => store.default_time(&id)?,
    };
    Ok(Json(store.execute(&id, Command::Ocr { text: b.text, time })?))
}

async fn placard(State(store): State<Arc<Store>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    store.get(&id)?;
    let b: PlacardBody = parse(&body)?;
    let time = match b.time {
        Some(t) => t,
        None => store.default_time(&id)?,
    };
    Ok(Json(store.execute(&id, Command::Placard { number: b.number, time })?))
}

async fn epcr(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult {
    let (confirmed, document) = store.get(&id)?.read(|s| s.epcr());
    Ok(Json(json!({ "confirmed": confirmed, "epcr": document })))
}

async fn confirm(State(store): State<Arc<Store>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    store.get(&id)?;
    let b: ConfirmBody = parse(&body)?;
    let time = match b.time {
        Some(t) => t,
        None => store.default_time(&id)?,
    };
    Ok(Json(store.execute(&id, Command::Confirm { form: b.form, time })?))
}

fn sse_event(e: &FeedEvent) -> Event {
    Event::default().id(e.seq.to_string()).event(e.kind.clone()).json_data(e).expect("feed events serialize")
}

/// Server-sent events: the backlog after `after`, then live events.
async fn events_stream(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Query(q): Query<AfterQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let slot = store.get(&id)?;
    let rx = slot.subscribe();
    let init = (slot, rx, q.after, Vec::<FeedEvent>::new());
    let s = stream::unfold(init, |(slot, mut rx, mut after, mut pending)| async move {
        loop {
            if !pending.is_empty() {
                let e = pending.remove(0);
                after = e.seq;
                return Some((Ok(sse_event(&e)), (slot, rx, after, pending)));
            }
            pending = slot.events_after(after);
            if pending.is_empty() && rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok(Sse::new(s).keep_alive(KeepAlive::default()))
}

/// Long-poll fallback: waits up to `timeout_ms` for events after `after`.
async fn events_poll(State(store): State<Arc<Store>>, Path(id): Path<String>, Query(q): Query<AfterQuery>) -> ApiResult {
    let slot = store.get(&id)?;
    let mut rx = slot.subscribe();
    let wait = Duration::from_millis(q.timeout_ms.unwrap_or(MAX_POLL_MS).min(MAX_POLL_MS));
    let deadline = tokio::time::Instant::now() + wait;
    loop {
        let events = slot.events_after(q.after);
        if !events.is_empty() {
            let next = events.last().map_or(q.after, |e| e.seq);
            return Ok(Json(json!({ "events": events, "next": next })));
        }
        match tokio::time::timeout_at(deadline, rx.changed()).await {
            Ok(Ok(())) => continue,
            _ => return Ok(Json(json!({ "events": [], "next": q.after }))),
        }
    }
}
