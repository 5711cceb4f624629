//! Remote providers against an in-process mock service.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use lufy_core::scoring::http::HttpProvider;
use lufy_core::scoring::{
    ArousalScorer, Embedder, ExchangeText, Generator, ImportanceEstimator, PerplexityScorer,
    ProviderChoice, ProviderEndpoint, Providers, ProvidersConfig, Task,
};
use lufy_core::Error;

#[derive(Clone, Default)]
struct Mock {
    hits: Arc<AtomicUsize>,
    /// Answer 503 this many times before succeeding.
    failures: Arc<AtomicUsize>,
}

async fn score(State(m): State<Mock>, Json(req): Json<Value>) -> (StatusCode, String) {
    m.hits.fetch_add(1, Ordering::SeqCst);
    if m
        .failures
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |f| f.checked_sub(1))
        .is_ok()
    {
        return (StatusCode::SERVICE_UNAVAILABLE, "busy".into());
    }
    let user = req["user_text"].as_str().unwrap_or_default().to_string();
    let body = match req["kind"].as_str().unwrap_or_default() {
        _ if user == "garbage" => return (StatusCode::OK, "not json".into()),
        "arousal" => json!({"value": 0.625}),
        "perplexity" if user == "low" => json!({"value": 0.5}),
        "perplexity" => json!({"value": 42.0}),
        "importance" if user == "as text" => json!({"text": "Importance: 0.3"}),
        "importance" => json!({"value": 0.9}),
        "embedding" if user == "short" => json!({"vector": [1.0, 0.0]}),
        "embedding" => json!({"vector": [3.0, 0.0, 4.0]}),
        "generation" => json!({"text": format!("{}:{}", req["task"].as_str().unwrap_or("?"), user.len())}),
        _ => return (StatusCode::BAD_REQUEST, "unknown kind".into()),
    };
    (StatusCode::OK, body.to_string())
}

fn spawn(mock: Mock) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new().route("/score", post(score)).with_state(mock);
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn endpoint(base: &str, retries: u32) -> ProviderEndpoint {
    ProviderEndpoint {
        base_url: base.to_string(),
        timeout_ms: 2000,
        retry_limit: retries,
    }
}

fn x(user: &str) -> ExchangeText {
    ExchangeText::new(user, "how was your day?").unwrap()
}

#[test]
fn scalar_vector_and_text_replies() {
    let base = spawn(Mock::default());
    let p = HttpProvider::new(endpoint(&base, 0), 3);
    assert_eq!(p.score_arousal(&x("hi")).unwrap(), 0.625);
    assert_eq!(p.score_perplexity(&x("hi")).unwrap(), 42.0);
    assert_eq!(p.estimate_importance(&x("hi")).unwrap(), 0.9);
    assert_eq!(p.estimate_importance(&x("as text")).unwrap(), 0.3);
    let v = p.embed("anything").unwrap();
    assert_eq!(v, vec![0.6, 0.0, 0.8]);
    assert_eq!(p.complete(Task::Summary, "abcd").unwrap(), "summary:4");
}

#[test]
fn malformed_replies_are_parse_errors() {
    let base = spawn(Mock::default());
    let p = HttpProvider::new(endpoint(&base, 0), 3);
    assert!(matches!(p.score_perplexity(&x("low")), Err(Error::Parse { .. })));
    assert!(matches!(p.embed("short"), Err(Error::Parse { .. })));
    match p.score_arousal(&x("garbage")) {
        Err(Error::Parse { raw, .. }) => assert_eq!(raw, "not json"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn retries_server_errors() {
    let mock = Mock::default();
    mock.failures.store(2, Ordering::SeqCst);
    let base = spawn(mock.clone());
    let p = HttpProvider::new(endpoint(&base, 2), 3);
    assert_eq!(p.score_arousal(&x("hi")).unwrap(), 0.625);
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);

    mock.failures.store(5, Ordering::SeqCst);
    let p = HttpProvider::new(endpoint(&base, 1), 3);
    assert!(matches!(p.score_arousal(&x("hi")), Err(Error::ProviderUnavailable(_))));
}

#[test]
fn unreachable_service_and_fallback() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dead = format!("http://127.0.0.1:{port}");
    let p = HttpProvider::new(endpoint(&dead, 0), 8);
    assert!(matches!(p.score_arousal(&x("hi")), Err(Error::ProviderUnavailable(_))));

    let mut cfg = ProvidersConfig {
        arousal: ProviderChoice::Http(endpoint(&dead, 0)),
        ..Default::default()
    };
    let strict = Providers::from_config(&cfg, 8).unwrap();
    assert!(strict.arousal.score_arousal(&x("hi")).is_err());
    cfg.fallback_to_stub = true;
    let lenient = Providers::from_config(&cfg, 8).unwrap();
    let stub = Providers::stub(8);
    assert_eq!(
        lenient.arousal.score_arousal(&x("I am so happy!")).unwrap(),
        stub.arousal.score_arousal(&x("I am so happy!")).unwrap()
    );
}

#[test]
fn llm_importance_through_remote_generator() {
    let base = spawn(Mock::default());
    let cfg = ProvidersConfig {
        generator: ProviderChoice::Http(endpoint(&base, 0)),
        importance: ProviderChoice::Llm,
        ..Default::default()
    };
    let p = Providers::from_config(&cfg, 8).unwrap();
    // the mock's generation reply is "importance:<len>", which is not a valid rating
    assert!(matches!(p.importance.estimate_importance(&x("hi")), Err(Error::Parse { .. })));
}
