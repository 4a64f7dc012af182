use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use rtrc::gateway::{ChatBackend, CompletionRequest, GatewayError, HttpBackend, RetryPolicy};
use rtrc::orchestrator::{run_segment, RunSettings};
use rtrc_core::prompt::{Message, PromptSet, Role};
use rtrc_core::protocol::Outcome;
use rtrc_core::{AgentId, Codebook, ParseMode, Segment, Speaker};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Mock {
    hits: Arc<AtomicUsize>,
    /// Status codes to return before answering normally.
    failures: Arc<Mutex<Vec<u16>>>,
    bodies: Arc<Mutex<Vec<Value>>>,
    replies: Arc<Mutex<Vec<String>>>,
}

async fn chat(State(m): State<Mock>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    m.hits.fetch_add(1, Ordering::SeqCst);
    m.bodies.lock().unwrap().push(body);
    if let Some(code) = m.failures.lock().unwrap().pop() {
        return (StatusCode::from_u16(code).unwrap(), Json(json!({"error": "nope"})));
    }
    let mut replies = m.replies.lock().unwrap();
    let content = if replies.is_empty() {
        "<think>r</think>{\"Greeting\": 1}".to_string()
    } else {
        replies.remove(0)
    };
    (
        StatusCode::OK,
        Json(json!({"choices": [{"message": {"content": content}, "finish_reason": "stop"}]})),
    )
}

async fn spawn(mock: Mock) -> String {
    let app = Router::new().route("/v1/chat/completions", post(chat)).with_state(mock);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1")
}

fn fast() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        base_delay: Duration::from_millis(5),
        request_timeout: Duration::from_secs(5),
    }
}

fn request() -> CompletionRequest {
    CompletionRequest {
        agent: AgentId::CoderA,
        request_key: "s/round1/coder_a".into(),
        messages: vec![Message {
            role: Role::User,
            content: "code this".into(),
        }],
        temperature: 0.5,
        max_output_tokens: 64,
        run_seed: Some(9),
    }
}

#[tokio::test]
async fn server_errors_are_retried() {
    let mock = Mock::default();
    mock.failures.lock().unwrap().extend([503, 502]);
    let backend = HttpBackend::new(&spawn(mock.clone()).await, "m", Some("k".into()), fast()).unwrap();
    let resp = backend.complete(&request()).await.unwrap();
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
    assert!(resp.raw_text.contains("Greeting"));
    assert!(!resp.truncated);
    let body = &mock.bodies.lock().unwrap()[0];
    assert_eq!(body["model"], "m");
    assert_eq!(body["seed"], 9);
    assert_eq!(body["max_tokens"], 64);
}

#[tokio::test]
async fn retries_are_bounded() {
    let mock = Mock::default();
    mock.failures.lock().unwrap().extend([500; 10]);
    let backend = HttpBackend::new(&spawn(mock.clone()).await, "m", None, fast()).unwrap();
    let err = backend.complete(&request()).await.unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnreachable { attempts: 4, .. }), "{err}");
    assert_eq!(mock.hits.load(Ordering::SeqCst), 4);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let mock = Mock::default();
    mock.failures.lock().unwrap().push(400);
    let backend = HttpBackend::new(&spawn(mock.clone()).await, "m", None, fast()).unwrap();
    let err = backend.complete(&request()).await.unwrap_err();
    assert!(matches!(err, GatewayError::BackendRejected { status: 400, .. }), "{err}");
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn unreachable_backend() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let backend = HttpBackend::new(&format!("http://{addr}"), "m", None, fast()).unwrap();
    let err = backend.complete(&request()).await.unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnreachable { attempts: 4, .. }), "{err}");
}

#[tokio::test]
async fn round_two_prompt_carries_peer_output() {
    let mock = Mock::default();
    mock.replies.lock().unwrap().extend([
        "<think>peer A reasoning XYZZY</think>{\"Greeting\": 1}".to_string(),
        "<think>peer B reasoning PLUGH</think>{\"Instruction\": 1}".to_string(),
        "<think>a2</think>{\"Greeting\": 1}".to_string(),
        "<think>b2</think>{\"Greeting\": 1}".to_string(),
    ]);
    let backend = HttpBackend::new(&spawn(mock.clone()).await, "m", None, fast()).unwrap();
    let seg = Segment {
        id: "s1".into(),
        session_id: "S".into(),
        speaker: Speaker::Tutor,
        text: "Hello there".into(),
        index_in_session: 0,
    };
    let settings = RunSettings {
        run_id: "r".into(),
        temperature: 0.0,
        max_output_tokens: 64,
        seed: None,
        parallelism: 1,
        parse_mode: ParseMode::Degraded,
    };
    let run = run_segment(&seg, 0, &Codebook::tutoring(), &PromptSet::default(), &backend, &settings).await;
    assert_eq!(run.result.unwrap().outcome, Outcome::Round2Consensus);
    let bodies = mock.bodies.lock().unwrap();
    assert_eq!(bodies.len(), 4);
    let user_text = |i: usize| bodies[i]["messages"].to_string();
    // round 2 for coder A sees coder B's round-1 output, and vice versa
    assert!(user_text(2).contains("PLUGH") && !user_text(2).contains("XYZZY"));
    assert!(user_text(3).contains("XYZZY") && !user_text(3).contains("PLUGH"));
    assert!(!user_text(0).contains("PLUGH"));
}
