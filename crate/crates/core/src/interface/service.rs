//! Rating service.
//!
//! ```text
//! GET  /api/tasks/{assessor}[?limit=N]  next unrated items (verdict hidden)
//! POST /api/ratings                     {"assessor","item","q1","q2"?}
//! GET  /api/progress                    rated / total per assessor
//! GET  /api/stats                       kappa, chi-squared, percentage tables
//! ```
//!
//! Errors are `{"error": string}` with status 400 (malformed body or
//! invalid answer), 404 (unknown assessor or item not assigned to the
//! assessor) or 409 (item already rated by the assessor).

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::store::{RatingStore, StoreError};
use crate::corpus::McqItem;
use crate::humaneval::{compute_stats, AssignmentPlan, RatingRecord, Q1, Q2};

/// Text shown to assessors for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemText {
    pub question: String,
    pub answer: String,
    pub context: String,
}

impl From<&McqItem> for ItemText {
    fn from(it: &McqItem) -> Self {
        Self {
            question: it.question.clone(),
            answer: it.answer.clone(),
            context: it.context.clone(),
        }
    }
}

pub struct ServiceState {
    plan: AssignmentPlan,
    items: HashMap<String, ItemText>,
    store: RatingStore,
    show_context: bool,
}

impl ServiceState {
    /// Every planned item must have a text.
    pub fn new(
        plan: AssignmentPlan,
        items: HashMap<String, ItemText>,
        store: RatingStore,
        show_context: bool,
    ) -> Result<Self, String> {
        for list in plan.tasks.values() {
            if let Some(missing) = list.iter().find(|i| !items.contains_key(*i)) {
                return Err(format!("planned item {missing:?} has no text"));
            }
        }
        for r in store.snapshot().iter() {
            if !plan
                .tasks_for(&r.assessor)
                .is_some_and(|t| t.contains(&r.item))
            {
                return Err(format!(
                    "rating log contains ({:?}, {:?}), which is not in the plan",
                    r.assessor, r.item
                ));
            }
        }
        Ok(Self {
            plan,
            items,
            store,
            show_context,
        })
    }

    pub fn store(&self) -> &RatingStore {
        &self.store
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskView {
    pub item: String,
    pub question: String,
    pub answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    /// 1-based position of the item in the assessor's list.
    pub position: usize,
    pub total: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TasksResponse {
    pub assessor: String,
    pub rated: usize,
    pub total: usize,
    pub tasks: Vec<TaskView>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingSubmission {
    pub assessor: String,
    pub item: String,
    pub q1: Q1,
    #[serde(default)]
    pub q2: Option<Q2>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AssessorProgress {
    pub assessor: String,
    pub rated: usize,
    pub total: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProgressResponse {
    pub ratings: usize,
    pub total_tasks: usize,
    pub assessors: Vec<AssessorProgress>,
}

#[derive(Debug, Deserialize)]
struct TaskQuery {
    limit: Option<usize>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/api/tasks/{assessor}", get(tasks))
        .route("/api/ratings", post(submit))
        .route("/api/progress", get(progress))
        .route("/api/stats", get(stats))
        .with_state(state)
}

async fn tasks(
    State(st): State<Arc<ServiceState>>,
    Path(assessor): Path<String>,
    Query(q): Query<TaskQuery>,
) -> Response {
    let Some(list) = st.plan.tasks_for(&assessor) else {
        return error(
            StatusCode::NOT_FOUND,
            format!("unknown assessor {assessor:?}"),
        );
    };
    let total = list.len();
    let mut rated = 0;
    let mut pending = Vec::new();
    for (pos, item) in list.iter().enumerate() {
        if st.store.contains(&assessor, item) {
            rated += 1;
            continue;
        }
        if pending.len() < q.limit.unwrap_or(usize::MAX) {
            let text = &st.items[item];
            pending.push(TaskView {
                item: item.clone(),
                question: text.question.clone(),
                answer: text.answer.clone(),
                context: st.show_context.then(|| text.context.clone()),
                position: pos + 1,
                total,
            });
        }
    }
    Json(TasksResponse {
        assessor,
        rated,
        total,
        tasks: pending,
    })
    .into_response()
}

async fn submit(State(st): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let sub: RatingSubmission = match serde_json::from_slice(&body) {
        Ok(s) => s,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let Some(list) = st.plan.tasks_for(&sub.assessor) else {
        return error(
            StatusCode::NOT_FOUND,
            format!("unknown assessor {:?}", sub.assessor),
        );
    };
    if !list.contains(&sub.item) {
        return error(
            StatusCode::NOT_FOUND,
            format!("item {:?} is not assigned to {:?}", sub.item, sub.assessor),
        );
    }
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let record = RatingRecord {
        assessor: sub.assessor,
        item: sub.item,
        q1: sub.q1,
        q2: sub.q2,
        timestamp,
        context_shown: st.show_context,
    };
    if let Err(e) = record.validate() {
        return error(StatusCode::BAD_REQUEST, e.to_string());
    }
    match st.store.append(record.clone()) {
        Ok(()) => Json(record).into_response(),
        Err(e @ StoreError::Duplicate { .. }) => error(StatusCode::CONFLICT, e.to_string()),
        Err(e) => {
            tracing::error!(error = %e, "rating log write failed");
            error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
    }
}

async fn progress(State(st): State<Arc<ServiceState>>) -> Response {
    let snap = st.store.snapshot();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in snap.iter() {
        *counts.entry(r.assessor.as_str()).or_default() += 1;
    }
    let assessors = st
        .plan
        .assessors
        .iter()
        .map(|a| AssessorProgress {
            assessor: a.clone(),
            rated: counts.get(a.as_str()).copied().unwrap_or(0),
            total: st.plan.tasks_for(a).map_or(0, <[String]>::len),
        })
        .collect();
    Json(ProgressResponse {
        ratings: snap.len(),
        total_tasks: st.plan.task_count(),
        assessors,
    })
    .into_response()
}

async fn stats(State(st): State<Arc<ServiceState>>) -> Response {
    match compute_stats(&st.plan, &st.store.snapshot()) {
        Ok(s) => Json(s).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Serve until Ctrl-C.
pub async fn serve(bind: &str, state: Arc<ServiceState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "rating service listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
