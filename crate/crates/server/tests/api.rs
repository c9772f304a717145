use std::collections::HashMap;
use std::path::Path;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use dprelease::budgeter::Tier;
use dprelease::engine::{BudgetConfig, Registry};
use dprelease::{PrivacyParams, VariableSpec};
use dprelease_server::{router, AppState, ServiceConfig, TokenGrant};
use serde_json::{json, Value};
use tower::ServiceExt;

const SENTINEL: &str = "61.4142135";

fn schema() -> Vec<VariableSpec> {
    vec![
        VariableSpec::numeric("age", 0.0, 100.0),
        VariableSpec::categorical("sector", ["public", "private"]),
    ]
}

fn setup(dir: &Path, access: &str) -> ServiceConfig {
    let mut csv = String::from("age,sector\n");
    for i in 0..500 {
        let age = if i == 3 {
            SENTINEL.to_string()
        } else {
            (20 + i % 50).to_string()
        };
        csv.push_str(&format!("{age},{}\n", ["public", "private"][i % 2]));
    }
    let path = dir.join("in.csv");
    std::fs::write(&path, csv).unwrap();
    let data = dir.join("data");
    let reg = Registry::new(&data).unwrap();
    reg.ingest("jobs", &path, schema(), false).unwrap();
    reg.set_budget(
        "jobs",
        &BudgetConfig::new(PrivacyParams::new(1.0, 1e-6).unwrap()).with_depositor_epsilon(0.5),
    )
    .unwrap();

    let mut config = ServiceConfig::from_toml(&format!(
        "data_dir = {:?}\n{access}",
        data.display().to_string()
    ))
    .unwrap();
    let grant = |tier, user: Option<&str>| TokenGrant {
        tier,
        user: user.map(String::from),
        datasets: None,
    };
    config.tokens = HashMap::from([
        ("dep-token".to_string(), grant(Tier::Depositor, None)),
        (
            "alice-token".to_string(),
            grant(Tier::SemiTrusted, Some("alice")),
        ),
        (
            "bob-token".to_string(),
            grant(Tier::SemiTrusted, Some("bob")),
        ),
        ("eve-token".to_string(), grant(Tier::Untrusted, Some("eve"))),
        ("zed-token".to_string(), grant(Tier::Untrusted, Some("zed"))),
        (
            "other-token".to_string(),
            TokenGrant {
                datasets: Some(vec!["elsewhere".into()]),
                ..grant(Tier::Depositor, None)
            },
        ),
    ]);
    config
}

fn app(config: &ServiceConfig) -> Router {
    router(AppState::new(config).unwrap())
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    token: Option<&str>,
    body: Option<&Value>,
) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let body = match body {
        Some(b) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(b).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    assert!(
        !text.contains(SENTINEL),
        "raw value in response to {uri}: {text}"
    );
    (status, text)
}

fn plan_body(requests: Value) -> Value {
    json!({
        "global": {"epsilon": 1.0, "delta": 1e-6},
        "depositor_epsilon": 0.5,
        "n": 500,
        "variables": serde_json::to_value(schema()).unwrap(),
        "requests": requests,
    })
}

fn mean(id: &str, eps: f64) -> Value {
    json!({"id": id, "variable": "age", "statistic": "mean", "epsilon": eps})
}

#[tokio::test]
async fn repartition_is_memoryless() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), "");
    let a = app(&config);
    let base = plan_body(json!([
        {"id": "m", "variable": "age", "statistic": "mean"},
        {"id": "h", "variable": "sector", "statistic": "histogram"},
    ]));
    let (s1, r1) = call(&a, "POST", "/repartition", None, Some(&base)).await;
    assert_eq!(s1, StatusCode::OK, "{r1}");
    let (_, r2) = call(&a, "POST", "/repartition", None, Some(&base)).await;
    assert_eq!(r1, r2);

    let mut added = base.clone();
    added["requests"]
        .as_array_mut()
        .unwrap()
        .push(json!({"id": "q", "variable": "age", "statistic": "quantile"}));
    let (_, r3) = call(&a, "POST", "/repartition", None, Some(&added)).await;
    assert_ne!(r1, r3);
    // A fresh service answers the original body identically.
    let (_, r4) = call(&app(&config), "POST", "/repartition", None, Some(&base)).await;
    assert_eq!(r1, r4);

    let plan: Value = serde_json::from_str(&r1).unwrap();
    assert!(plan["total"]["epsilon"].as_f64().unwrap() <= 0.5 * (1.0 + 1e-9));
}

#[tokio::test]
async fn repartition_rejects_bad_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&setup(dir.path(), ""));
    let mut body = plan_body(json!([mean("m", 0.1)]));
    body["global"] = json!({"epsilon": 1e-6, "delta": 0.25});
    let (s, r) = call(&a, "POST", "/repartition", None, Some(&body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        serde_json::from_str::<Value>(&r).unwrap()["code"],
        "global_params_rejected"
    );

    let (s, r) = call(
        &a,
        "POST",
        "/repartition",
        None,
        Some(&json!({"global": 3})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        serde_json::from_str::<Value>(&r).unwrap()["code"],
        "invalid_body"
    );
}

#[tokio::test]
async fn depositor_release_updates_public_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&setup(dir.path(), ""));
    let (s, _) = call(&a, "GET", "/metadata/public/jobs", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let body = json!({"dataset": "jobs", "requests": [mean("m", 0.2)], "total": {"epsilon": 0.0, "delta": 0.0}});
    let (s, r) = call(&a, "POST", "/release", Some("dep-token"), Some(&body)).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    let out: Value = serde_json::from_str(&r).unwrap();
    assert!((out["remaining"]["epsilon"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    let (_, meta) = call(&a, "GET", "/metadata/public/jobs", None, None).await;
    let meta: Value = serde_json::from_str(&meta).unwrap();
    assert_eq!(meta["releases"].as_array().unwrap().len(), 1);
    assert_eq!(meta["releases"][0]["request_id"], "m");

    let (s, _) = call(&a, "GET", "/metadata/public/nope", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(
        &a,
        "POST",
        "/release",
        Some("dep-token"),
        Some(&json!({"dataset": "nope", "requests": []})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn authentication_and_tiers() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&setup(dir.path(), "[access]\nuntrusted_enabled = false\n"));
    let body = json!({"dataset": "jobs", "requests": [mean("m", 0.05)]});
    let (s, _) = call(&a, "POST", "/release", None, Some(&body)).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call(&a, "POST", "/release", Some("forged"), Some(&body)).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call(&a, "POST", "/release", Some("other-token"), Some(&body)).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, r) = call(&a, "POST", "/release", Some("eve-token"), Some(&body)).await;
    assert_eq!(s, StatusCode::FORBIDDEN, "{r}");
    assert_eq!(
        serde_json::from_str::<Value>(&r).unwrap()["code"],
        "tier_forbidden"
    );
}

#[tokio::test]
async fn over_budget_analyst_batch_leaves_ledger_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), "");
    let a = app(&config);
    let ledger = config.data_dir.join("jobs").join("ledger.ndjson");
    let (s, _) = call(
        &a,
        "POST",
        "/release",
        Some("alice-token"),
        Some(&json!({"dataset": "jobs", "requests": [mean("a", 0.1)]})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let before = std::fs::read(&ledger).unwrap();
    let body = json!({"dataset": "jobs", "requests": [mean("b", 0.2)]});
    let (s, r) = call(&a, "POST", "/release", Some("alice-token"), Some(&body)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let err: Value = serde_json::from_str(&r).unwrap();
    assert_eq!(err["code"], "budget_exhausted");
    assert!((err["remaining"]["epsilon"].as_f64().unwrap() - 0.15).abs() < 1e-9);
    assert_eq!(std::fs::read(&ledger).unwrap(), before);

    let (s, r) = call(&a, "GET", "/budget/jobs", Some("alice-token"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        serde_json::from_str::<Value>(&r).unwrap()["account"],
        "user:alice"
    );
}

#[tokio::test]
async fn user_metadata_is_private() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&setup(dir.path(), ""));
    call(
        &a,
        "POST",
        "/release",
        Some("dep-token"),
        Some(&json!({"dataset": "jobs", "requests": [mean("p", 0.1)]})),
    )
    .await;
    let (s, _) = call(
        &a,
        "POST",
        "/release",
        Some("alice-token"),
        Some(&json!({"dataset": "jobs", "requests": [mean("x", 0.1)]})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);

    let (s, own) = call(&a, "GET", "/metadata/user/jobs", Some("alice-token"), None).await;
    assert_eq!(s, StatusCode::OK);
    let own: Value = serde_json::from_str(&own).unwrap();
    assert_eq!(own["releases"].as_array().unwrap().len(), 2);
    let (s, _) = call(
        &a,
        "GET",
        "/metadata/user/jobs?user=alice",
        Some("bob-token"),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, bob) = call(&a, "GET", "/metadata/user/jobs", Some("bob-token"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        serde_json::from_str::<Value>(&bob).unwrap()["releases"]
            .as_array()
            .unwrap()
            .len(),
        1
    );
    let (s, _) = call(&a, "GET", "/metadata/user/jobs", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call(&a, "GET", "/metadata/user/jobs", Some("eve-token"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = call(
        &a,
        "GET",
        "/metadata/user/jobs?user=alice",
        Some("dep-token"),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_shared_pool_batches_have_one_winner() {
    for round in 0..5 {
        let dir = tempfile::tempdir().unwrap();
        let a = app(&setup(dir.path(), ""));
        // Shared pool is half of the analyst share of 0.5.
        let body = |id: &str| json!({"dataset": "jobs", "requests": [mean(id, 0.2)]});
        let (b1, b2) = (body("e"), body("z"));
        let (r1, r2) = tokio::join!(
            call(&a, "POST", "/release", Some("eve-token"), Some(&b1)),
            call(&a, "POST", "/release", Some("zed-token"), Some(&b2)),
        );
        let wins = [r1.0, r2.0]
            .iter()
            .filter(|s| **s == StatusCode::OK)
            .count();
        assert_eq!(wins, 1, "round {round}: {r1:?} {r2:?}");
        assert!([r1.0, r2.0].contains(&StatusCode::CONFLICT));
    }
}

#[tokio::test]
async fn hourly_cap_returns_429() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&setup(dir.path(), "[access]\nhourly_epsilon_cap = 0.1\n"));
    let (s, _) = call(
        &a,
        "POST",
        "/release",
        Some("eve-token"),
        Some(&json!({"dataset": "jobs", "requests": [mean("a", 0.08)]})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (s, r) = call(
        &a,
        "POST",
        "/release",
        Some("eve-token"),
        Some(&json!({"dataset": "jobs", "requests": [mean("b", 0.05)]})),
    )
    .await;
    assert_eq!(s, StatusCode::TOO_MANY_REQUESTS, "{r}");
}
