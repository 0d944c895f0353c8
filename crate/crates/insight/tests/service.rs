mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use insight::config::ServiceConfig;
use insight::dataset::DatasetDir;
use insight::engine::{ExecOptions, QueryEngine};
use insight::pipeline::{OnboardRequest, Pipeline, QueryDefaults};
use insight::service::{router, AppState};
use insight::onboard_dir;
use insight_core::embedding::ReferenceEmbedder;
use insight_core::gateway::{SimulatedModel, SimulatedModelConfig};
use insight_core::sql::Guard;
use serde_json::{json, Value};
use tower::ServiceExt;

const CONFIG: &str = r#"
[tokens.admin-t]
user_id = "ada"
roles = ["admin"]

[tokens.analyst-t]
user_id = "ana"
roles = ["analyst"]

[tokens.guest-t]
user_id = "gus"
roles = ["guest"]

[policy]
sales = ["analyst"]
"#;

struct Harness {
    _dir: tempfile::TempDir,
    app: axum::Router,
    pipeline: Arc<Pipeline>,
}

fn harness(model: SimulatedModel, exec: ExecOptions, onboard: bool) -> Harness {
    let dir = common::sales_dir();
    let pipeline = Arc::new(Pipeline::new(
        Arc::new(ReferenceEmbedder::default()),
        Arc::new(model),
        QueryEngine::new(Guard::default(), exec),
        QueryDefaults::default(),
    ));
    if onboard {
        onboard_dir(&pipeline, dir.path(), None).unwrap();
    }
    let config = ServiceConfig::from_toml(CONFIG).unwrap();
    let app = router(Arc::new(AppState::new(pipeline.clone(), &config)));
    Harness { _dir: dir, app, pipeline }
}

fn default_harness() -> Harness {
    harness(common::sim(1.0, 0.0), ExecOptions::default(), true)
}

async fn call(app: &axum::Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn ask(question: &str) -> Value {
    json!({ "dataset_id": "sales", "question": question })
}

#[tokio::test]
async fn health_needs_no_token() {
    let h = default_harness();
    let (s, body) = call(&h.app, "GET", "/v1/health", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["index_entries"], 12);
    assert_eq!(body["datasets"], 1);
}

#[tokio::test]
async fn missing_or_unknown_token_is_401() {
    let h = default_harness();
    assert_eq!(call(&h.app, "POST", "/v1/query", None, Some(ask("x"))).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&h.app, "POST", "/v1/query", Some("nope"), Some(ask("x"))).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&h.app, "GET", "/v1/datasets", None, None).await.0, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn policy_denies_other_roles() {
    let h = default_harness();
    let (s, body) = call(&h.app, "POST", "/v1/query", Some("guest-t"), Some(ask("what were the total sales in north?"))).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(body["error"], "forbidden");
    // a dataset that does not exist looks the same to an unauthorized caller
    let (s, _) = call(&h.app, "POST", "/v1/query", Some("guest-t"), Some(json!({"dataset_id": "hr", "question": "x"}))).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (_, list) = call(&h.app, "GET", "/v1/datasets", Some("guest-t"), None).await;
    assert_eq!(list, json!([]));
}

#[tokio::test]
async fn analyst_gets_an_answer() {
    let h = default_harness();
    let (s, body) = call(&h.app, "POST", "/v1/query", Some("analyst-t"), Some(ask("what were the total sales in north?"))).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert!(body["sql"].as_str().unwrap().contains("SUM(amount)"));
    assert_eq!(body["table"]["rows"].as_array().unwrap().len(), 1);
    assert!(body["timings"]["execute"].is_number());
    assert_eq!(body["demonstrations_used"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn unknown_dataset_is_404_for_admins() {
    let h = default_harness();
    let (s, body) = call(&h.app, "POST", "/v1/query", Some("admin-t"), Some(json!({"dataset_id": "hr", "question": "x"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unknown_dataset");
}

#[tokio::test]
async fn onboarding_is_admin_only_and_conflicts_once_present() {
    let h = harness(common::sim(1.0, 0.0), ExecOptions::default(), false);
    let dir = common::sales_dir();
    let mut body = serde_json::to_value(OnboardRequest::from(DatasetDir::load(dir.path()).unwrap())).unwrap();
    body["allowed_roles"] = json!(["guest"]);

    let (s, _) = call(&h.app, "POST", "/v1/datasets", Some("analyst-t"), Some(body.clone())).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(h.pipeline.health().datasets, 0);

    let (s, summary) = call(&h.app, "POST", "/v1/datasets", Some("admin-t"), Some(body.clone())).await;
    assert_eq!(s, StatusCode::CREATED, "{summary}");
    assert_eq!(summary["entries_added"], 12);

    let (s, err) = call(&h.app, "POST", "/v1/datasets", Some("admin-t"), Some(body)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(err["error"], "conflict");

    // the roles granted at onboarding can now query
    let (s, _) = call(&h.app, "POST", "/v1/query", Some("guest-t"), Some(ask("what were the total sales in north?"))).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn bad_examples_are_422_with_diagnostics() {
    let h = harness(common::sim(1.0, 0.0), ExecOptions::default(), false);
    let dir = common::sales_dir();
    let mut body = serde_json::to_value(OnboardRequest::from(DatasetDir::load(dir.path()).unwrap())).unwrap();
    body["examples"][0]["sql"] = json!("DELETE FROM regions");
    let (s, err) = call(&h.app, "POST", "/v1/datasets", Some("admin-t"), Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "invalid_examples");
    assert_eq!(err["diagnostics"][0]["index"], 0);
}

#[tokio::test]
async fn rejected_sql_is_422_with_verdict() {
    let model = common::sim_with(SimulatedModelConfig { forced_output: Some("DROP TABLE regions".into()), ..Default::default() });
    let h = harness(model, ExecOptions::default(), true);
    let (s, err) = call(&h.app, "POST", "/v1/query", Some("analyst-t"), Some(ask("who manages north?"))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "sanitizer_rejected");
    assert_eq!(err["sql"], "DROP TABLE regions");
    assert_eq!(err["verdict"]["allowed"], false);
    assert!(err["timings"]["sanitize"].is_number());
    assert!(err["timings"].get("execute").is_none());
    assert_eq!(h.pipeline.engine().write_count(), 0);
}

#[tokio::test]
async fn runaway_query_is_504() {
    let sql = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT COUNT(*) FROM c";
    let model = common::sim_with(SimulatedModelConfig { forced_output: Some(sql.into()), ..Default::default() });
    let h = harness(model, ExecOptions { timeout_ms: 50, ..Default::default() }, true);
    let (s, err) = call(&h.app, "POST", "/v1/query", Some("analyst-t"), Some(ask("count forever"))).await;
    assert_eq!(s, StatusCode::GATEWAY_TIMEOUT);
    assert_eq!(err["error"], "timeout");
    assert_eq!(err["sql"], sql);
}

#[tokio::test]
async fn failing_sql_is_422() {
    let model = common::sim_with(SimulatedModelConfig { forced_output: Some("SELECT nope FROM regions".into()), ..Default::default() });
    let h = harness(model, ExecOptions::default(), true);
    let (s, err) = call(&h.app, "POST", "/v1/query", Some("analyst-t"), Some(ask("x"))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "execution_failed");
}
