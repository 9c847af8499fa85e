#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use seam_core::round::{ManualClock, RoundEngine};
use seam_core::store::Store;
use seam_core::{Category, EngineConfig, Example};
use seam_service::{router, AppState, SqliteStore};

pub struct Client {
    pub app: Router,
    pub engine: Arc<RoundEngine<SqliteStore>>,
    pub clock: Arc<ManualClock>,
}

pub struct Reply {
    pub status: StatusCode,
    pub raw: String,
    pub json: Value,
}

impl Client {
    pub fn new(examples: &[Example]) -> Self {
        Self::with_config(examples, EngineConfig::default())
    }

    pub fn with_config(examples: &[Example], cfg: EngineConfig) -> Self {
        let store = Arc::new(SqliteStore::open(":memory:").unwrap());
        for e in examples {
            store.insert_example(e).unwrap();
        }
        let clock = Arc::new(ManualClock::new(1_700_000_000_000));
        let engine = Arc::new(RoundEngine::with_clock(store, cfg, clock.clone(), 11));
        let app = router(
            AppState {
                engine: Arc::clone(&engine),
                clock: clock.clone(),
            },
            None,
        );
        Client { app, engine, clock }
    }

    pub async fn call(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
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
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let raw = String::from_utf8(bytes.to_vec()).unwrap();
        let json = serde_json::from_str(&raw).unwrap_or(Value::Null);
        Reply { status, raw, json }
    }

    pub async fn signup(&self, name: &str) -> (String, String) {
        let r = self
            .call(
                Method::POST,
                "/api/v1/accounts",
                None,
                Some(serde_json::json!({"display_name": name, "account_type": "organic"})),
            )
            .await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.raw);
        (
            r.json["account_id"].as_str().unwrap().to_string(),
            r.json["token"].as_str().unwrap().to_string(),
        )
    }
}

pub fn news_example(id: &str, boundary: Option<u32>) -> Example {
    Example {
        id: id.into(),
        category: Category::News,
        sentences: (1..=10).map(|i| format!("{id}: sentence {i}.")).collect(),
        boundary_index: boundary,
        prompt_source: "wire".into(),
        generator: boundary.map(|_| "secret-generator".to_string()).unwrap_or_default(),
        decoding_p: boundary.map(|b| f64::from(b) / 10.0),
        attention_check: false,
    }
}

/// Fields that must never appear before a round completes.
pub const LEAKY: [&str; 3] = ["boundary_index", "true_boundary", "decoding_p"];

pub fn assert_no_leak(raw: &str) {
    for field in LEAKY {
        assert!(!raw.contains(field), "response leaks {field}: {raw}");
    }
    assert!(!raw.contains("secret-generator"), "response leaks generator: {raw}");
}
