use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use chacha_core::gateway::{
    BackendConfig, ChatMessage, CompletionRequest, Gateway, GatewayError, HttpBackend, Tier,
};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Mock {
    hits: Arc<AtomicUsize>,
    fail_first: usize,
    status: u16,
}

async fn completions(
    State(m): State<Mock>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let n = m.hits.fetch_add(1, Ordering::SeqCst);
    if n < m.fail_first {
        return (StatusCode::from_u16(m.status).unwrap(), Json(json!({"error": "busy"})));
    }
    let auth = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let reply = format!(
        "model={} temp={} auth={auth} last={}",
        body["model"].as_str().unwrap(),
        body["temperature"],
        body["messages"].as_array().unwrap().last().unwrap()["content"].as_str().unwrap()
    );
    (
        StatusCode::OK,
        Json(json!({
            "choices": [{"message": {"role": "assistant", "content": reply}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 7}
        })),
    )
}

async fn serve(mock: Mock) -> String {
    let app = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(mock);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1/chat/completions")
}

fn gateway(endpoint: &str) -> Gateway {
    let backend = Arc::new(HttpBackend::new(endpoint, Some("sk-test".into())).unwrap());
    let mut g = BackendConfig::for_tier(Tier::Generator, "big-model");
    let mut a = BackendConfig::for_tier(Tier::Analyzer, "fast-model");
    for c in [&mut g, &mut a] {
        c.endpoint = endpoint.to_string();
        c.retry_base_delay_ms = 1;
    }
    Gateway::shared(g, a, backend).unwrap()
}

#[tokio::test]
async fn live_round_trip_per_tier() {
    let endpoint = serve(Mock::default()).await;
    let gw = gateway(&endpoint);
    let req = CompletionRequest::new(vec![ChatMessage::system("s"), ChatMessage::user("hello")]);
    let g = gw.complete(Tier::Generator, &req).await.unwrap();
    assert_eq!(
        g.result.content,
        "model=big-model temp=0.7 auth=Bearer sk-test last=hello"
    );
    assert_eq!(g.result.usage.input_tokens, 11);
    let a = gw.complete(Tier::Analyzer, &req).await.unwrap();
    assert!(a.result.content.starts_with("model=fast-model temp=0.0"));
    assert_eq!(gw.usage(Tier::Generator).output_tokens, 7);
}

#[tokio::test]
async fn retries_server_errors() {
    let mock = Mock {
        fail_first: 2,
        status: 503,
        ..Default::default()
    };
    let hits = mock.hits.clone();
    let endpoint = serve(mock).await;
    let gw = gateway(&endpoint);
    let req = CompletionRequest::new(vec![ChatMessage::user("hi")]);
    let out = gw.complete(Tier::Generator, &req).await.unwrap();
    assert_eq!(out.attempts.len(), 3);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn auth_failure_is_a_config_error() {
    let mock = Mock {
        fail_first: usize::MAX,
        status: 401,
        ..Default::default()
    };
    let hits = mock.hits.clone();
    let endpoint = serve(mock).await;
    let gw = gateway(&endpoint);
    let req = CompletionRequest::new(vec![ChatMessage::user("hi")]);
    assert!(matches!(
        gw.complete(Tier::Generator, &req).await,
        Err(GatewayError::Config { .. })
    ));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}
