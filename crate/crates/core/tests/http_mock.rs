use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use mlprompt_core::llm::{Backend, BackendError, GenerationRequest, HttpBackend, HttpConfig, RequestParams};
use serde_json::Value;

struct Seen {
    headers: Vec<String>,
    body: Value,
}

/// Serves the canned (status, body) pairs in order, one per connection.
fn serve(responses: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                headers,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            let mut stream = reader.into_inner();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (addr, seen)
}

fn backend(base_url: String) -> HttpBackend {
    let config = HttpConfig {
        id: "mock".into(),
        base_url,
        max_retries: 2,
        initial_backoff_ms: 10,
        max_backoff_ms: 50,
        ..HttpConfig::default()
    };
    HttpBackend::new(config, "sk-test").unwrap()
}

fn request() -> GenerationRequest {
    let params = RequestParams {
        timeout: Duration::from_secs(5),
        ..RequestParams::default()
    };
    GenerationRequest::new("give bounds", &params)
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"{\"set\": [[1, 2]]}"}}],"usage":{"prompt_tokens":5,"completion_tokens":7}}"#;

#[test]
fn posts_chat_completion_with_bearer_auth() {
    let (url, seen) = serve(vec![(200, OK)]);
    let out = backend(url).complete(&request()).unwrap();
    assert_eq!(out.text, r#"{"set": [[1, 2]]}"#);
    assert_eq!(out.usage.unwrap().completion_tokens, 7);
    let seen = seen.lock().unwrap();
    assert!(seen[0].headers[0].starts_with("POST /chat/completions "));
    assert!(seen[0]
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("authorization: Bearer sk-test")));
    assert_eq!(seen[0].body["messages"][0]["content"], "give bounds");
    assert_eq!(seen[0].body["messages"][0]["role"], "user");
}

#[test]
fn model_name_override_wins() {
    let (url, seen) = serve(vec![(200, OK)]);
    let mut b = backend(url.clone());
    let config = HttpConfig {
        model_name: Some("other-model".into()),
        ..b.config().clone()
    };
    b = HttpBackend::new(config, "k").unwrap();
    b.complete(&request()).unwrap();
    assert_eq!(seen.lock().unwrap()[0].body["model"], "other-model");
}

#[test]
fn server_errors_are_retried() {
    let (url, seen) = serve(vec![(500, "boom"), (503, "busy"), (200, OK)]);
    let out = backend(url).complete(&request()).unwrap();
    assert!(out.text.contains("set"));
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_are_bounded() {
    let (url, seen) = serve(vec![(429, "{}"), (429, "{}"), (429, "{}"), (200, OK)]);
    let err = backend(url).complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::RateLimited { .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, seen) = serve(vec![(401, "bad key"), (200, OK)]);
    let err = backend(url).complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Auth(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_body_is_reported() {
    let (url, _) = serve(vec![(200, r#"{"choices": []}"#)]);
    let err = backend(url).complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::MalformedResponse(_)), "{err:?}");
}
