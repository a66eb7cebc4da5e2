use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use mcqforge::humaneval::{build_assignment, AssignmentPlan, PlanParams};
use mcqforge::interface::{router, ItemText, RatingStore, ServiceState};

fn plan(n_assessors: usize, shared_n: usize, unique_n: usize, pool: usize) -> AssignmentPlan {
    let acc: Vec<String> = (0..pool).map(|i| format!("acc-{i}")).collect();
    let rej: Vec<String> = (0..pool).map(|i| format!("rej-{i}")).collect();
    build_assignment(
        &acc,
        &rej,
        PlanParams {
            n_assessors,
            shared_n,
            unique_n,
            seed: 11,
        },
    )
    .unwrap()
}

fn texts(plan: &AssignmentPlan) -> HashMap<String, ItemText> {
    plan.tasks
        .values()
        .flatten()
        .map(|id| {
            (
                id.clone(),
                ItemText {
                    question: format!("Question about {id}?"),
                    answer: format!("answer {id}"),
                    context: format!("Context of {id}."),
                },
            )
        })
        .collect()
}

fn state(plan: &AssignmentPlan, store: RatingStore, show_context: bool) -> Arc<ServiceState> {
    Arc::new(ServiceState::new(plan.clone(), texts(plan), store, show_context).unwrap())
}

async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn rate(
    app: &axum::Router,
    assessor: &str,
    item: &str,
    q1: &str,
    q2: Option<&str>,
) -> StatusCode {
    let mut body = json!({ "assessor": assessor, "item": item, "q1": q1 });
    if let Some(q2) = q2 {
        body["q2"] = json!(q2);
    }
    call(app, "POST", "/api/ratings", Some(body)).await.0
}

fn contains_key(v: &Value, key: &str) -> bool {
    match v {
        Value::Object(m) => m.contains_key(key) || m.values().any(|x| contains_key(x, key)),
        Value::Array(a) => a.iter().any(|x| contains_key(x, key)),
        _ => false,
    }
}

#[tokio::test]
async fn tasks_hide_verdict_and_context_by_default() {
    let p = plan(2, 4, 2, 10);
    let app = router(state(&p, RatingStore::in_memory(), false));
    let (status, body) = call(&app, "GET", "/api/tasks/assessor-1", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["total"], 6);
    assert_eq!(body["tasks"].as_array().unwrap().len(), 6);
    for key in ["verdict", "accepted", "rejected", "context"] {
        assert!(!contains_key(&body, key), "payload exposes {key}");
    }
    let (_, limited) = call(&app, "GET", "/api/tasks/assessor-1?limit=1", None).await;
    assert_eq!(limited["tasks"].as_array().unwrap().len(), 1);
    assert_eq!(limited["tasks"][0]["position"], 1);

    let app = router(state(&p, RatingStore::in_memory(), true));
    let (_, body) = call(&app, "GET", "/api/tasks/assessor-2?limit=1", None).await;
    assert!(body["tasks"][0]["context"]
        .as_str()
        .unwrap()
        .starts_with("Context of"));
}

#[tokio::test]
async fn unknown_assessor_is_404() {
    let p = plan(2, 4, 2, 10);
    let app = router(state(&p, RatingStore::in_memory(), false));
    assert_eq!(
        call(&app, "GET", "/api/tasks/nobody", None).await.0,
        StatusCode::NOT_FOUND
    );
    let item = p.shared_items[0].clone();
    assert_eq!(
        rate(&app, "nobody", &item, "neither", None).await,
        StatusCode::NOT_FOUND
    );
    let foreign = p.unique_items["assessor-2"][0].clone();
    assert_eq!(
        rate(&app, "assessor-1", &foreign, "neither", None).await,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn invalid_answers_are_400() {
    let p = plan(2, 4, 2, 10);
    let app = router(state(&p, RatingStore::in_memory(), false));
    let item = p.shared_items[0].clone();
    assert_eq!(
        rate(&app, "assessor-1", &item, "great", Some("yes")).await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        rate(&app, "assessor-1", &item, "neither", Some("maybe")).await,
        StatusCode::BAD_REQUEST
    );
    // q2 may only be skipped after "neither".
    assert_eq!(
        rate(&app, "assessor-1", &item, "understandable_only", None).await,
        StatusCode::BAD_REQUEST
    );
    let (status, _) = call(&app, "POST", "/api/ratings", Some(json!("not an object"))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(
        rate(&app, "assessor-1", &item, "neither", None).await,
        StatusCode::OK
    );
}

#[tokio::test]
async fn duplicate_rating_is_409_and_store_unchanged() {
    let p = plan(2, 4, 2, 10);
    let st = state(&p, RatingStore::in_memory(), false);
    let app = router(st.clone());
    let item = p.shared_items[0].clone();
    assert_eq!(
        rate(
            &app,
            "assessor-1",
            &item,
            "well_formed_and_understandable",
            Some("yes")
        )
        .await,
        StatusCode::OK
    );
    let before = st.store().snapshot();
    assert_eq!(
        rate(&app, "assessor-1", &item, "neither", Some("no")).await,
        StatusCode::CONFLICT
    );
    assert_eq!(*st.store().snapshot(), *before);
    let (_, progress) = call(&app, "GET", "/api/progress", None).await;
    assert_eq!(progress["ratings"], 1);
    let (_, tasks) = call(&app, "GET", "/api/tasks/assessor-1", None).await;
    assert_eq!(tasks["rated"], 1);
    assert!(tasks["tasks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|t| t["item"] != json!(item)));
}

#[tokio::test]
async fn perfect_agreement_on_shared_block_gives_kappa_one() {
    let p = plan(4, 30, 70, 200);
    let app = router(state(&p, RatingStore::in_memory(), false));
    let (_, stats) = call(&app, "GET", "/api/stats", None).await;
    assert!(stats["kappa_q1"].is_null());
    assert!(stats["chi2_q1"].is_null());

    let answers = [
        "well_formed_and_understandable",
        "understandable_only",
        "neither",
    ];
    for (i, item) in p.shared_items.iter().enumerate() {
        for a in &p.assessors {
            let q2 = ["yes", "no", "dont_know"][i % 3];
            assert_eq!(
                rate(&app, a, item, answers[i % 3], Some(q2)).await,
                StatusCode::OK
            );
        }
    }
    let (status, stats) = call(&app, "GET", "/api/stats", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(stats["kappa_q1"]["kappa"], 1.0);
    assert_eq!(stats["kappa_q2"]["kappa"], 1.0);
    assert_eq!(stats["kappa_q1"]["n_subjects"], 30);
    assert_eq!(stats["kappa_q1"]["n_raters"], 4);
    assert!(stats["chi2_q1"]["p_value"].as_f64().is_some());
    let (_, progress) = call(&app, "GET", "/api/progress", None).await;
    assert_eq!(progress["ratings"], 120);
    assert_eq!(progress["total_tasks"], 400);
}

#[tokio::test]
async fn derived_fixture_gives_kappa_055() {
    // Three raters, three shared subjects, two categories used:
    // counts [[3,0],[2,1],[0,3]].
    let p = plan(3, 4, 0, 2);
    let app = router(state(&p, RatingStore::in_memory(), false));
    let s = &p.shared_items;
    let good = "well_formed_and_understandable";
    let only = "understandable_only";
    let plan_rows = [
        (&s[0], [good, good, good]),
        (&s[1], [good, good, only]),
        (&s[2], [only, only, only]),
    ];
    for (item, answers) in plan_rows {
        for (a, q1) in p.assessors.iter().zip(answers) {
            assert_eq!(rate(&app, a, item, q1, Some("yes")).await, StatusCode::OK);
        }
    }
    // The fourth shared item is left incomplete and must not count.
    assert_eq!(
        rate(&app, "assessor-1", &s[3], good, Some("yes")).await,
        StatusCode::OK
    );
    let (_, stats) = call(&app, "GET", "/api/stats", None).await;
    let kappa = stats["kappa_q1"]["kappa"].as_f64().unwrap();
    assert!((kappa - 0.55).abs() < 1e-12, "{kappa}");
    assert_eq!(stats["kappa_q1"]["n_subjects"], 3);
}

#[tokio::test]
async fn replaying_the_log_restores_identical_stats() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("ratings.jsonl");
    let p = plan(2, 4, 2, 10);
    let first = {
        let app = router(state(&p, RatingStore::open(&log).unwrap(), false));
        for (i, (a, list)) in p.tasks.iter().enumerate() {
            for (j, item) in list.iter().enumerate() {
                let q1 = [
                    "well_formed_and_understandable",
                    "understandable_only",
                    "neither",
                ][(i + j) % 3];
                assert_eq!(rate(&app, a, item, q1, Some("no")).await, StatusCode::OK);
            }
        }
        call(&app, "GET", "/api/stats", None).await.1
    };
    let app = router(state(&p, RatingStore::open(&log).unwrap(), false));
    let second = call(&app, "GET", "/api/stats", None).await.1;
    assert_eq!(first, second);
    let (_, progress) = call(&app, "GET", "/api/progress", None).await;
    assert_eq!(progress["ratings"], 12);
}

#[test]
fn state_rejects_items_without_text_and_foreign_log_entries() {
    let p = plan(2, 4, 2, 10);
    let mut t = texts(&p);
    t.remove(&p.shared_items[0]);
    assert!(ServiceState::new(p.clone(), t, RatingStore::in_memory(), false).is_err());

    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("r.jsonl");
    std::fs::write(
        &log,
        "{\"assessor\":\"assessor-1\",\"item\":\"elsewhere\",\"q1\":\"neither\",\"q2\":null,\"timestamp\":0}\n",
    )
    .unwrap();
    assert!(ServiceState::new(
        p.clone(),
        texts(&p),
        RatingStore::open(&log).unwrap(),
        false
    )
    .is_err());
}
