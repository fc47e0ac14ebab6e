use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use guidedec::{AutoregressiveModel, MaskedModel, Tokenizer};
use guidedec_remote::{ModelKind, RemoteBackend, RemoteClient, RemoteError};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    method: String,
    target: String,
    body: Value,
}

type Handler = dyn Fn(&str, &str, &Value) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server: one request per connection.
fn serve(handler: Arc<Handler>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            handle(stream, &*handler, &log);
        }
    });
    (format!("http://{addr}"), seen)
}

fn handle(mut stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Seen>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let target = parts.next().unwrap_or_default().to_string();
    let mut length = 0usize;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).unwrap();
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).unwrap();
    let body: Value = if body.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&body).unwrap()
    };
    let (status, payload) = handler(&method, &target, &body);
    log.lock().unwrap().push(Seen {
        method,
        target,
        body,
    });
    let response = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    stream.write_all(response.as_bytes()).unwrap();
}

const VOCAB: [&str; 6] = ["a", "b", "ab", "Ġ", "Ġab", "Ġa"];

fn model_server(declared_ar: usize) -> Arc<Handler> {
    Arc::new(move |method, target, body| {
        let ok = |v: Value| (200, v.to_string());
        match (method, target) {
            ("GET", "/v1/info") => ok(json!({
                "ar_model_name": "toy-ar",
                "mlm_model_name": "toy-mlm",
                "ar_vocab_size": declared_ar,
                "mlm_vocab_size": 6,
                "normalized": false
            })),
            ("GET", "/v1/vocab?model=ar") | ("GET", "/v1/vocab?model=mlm") => ok(json!(VOCAB)),
            ("GET", "/v1/merges?model=ar") | ("GET", "/v1/merges?model=mlm") => {
                ok(json!(["a b", "Ġ a", "Ġ ab"]))
            }
            ("POST", "/v1/ar_scores") => {
                let n = body["context_ids"].as_array().unwrap().len() as f64;
                ok(json!({"scores": [n, 0.0, 0.0, 0.0, 0.0, 0.0]}))
            }
            ("POST", "/v1/mlm_scores") => {
                if body["left_ids"].as_array().unwrap().is_empty() {
                    return (422, r#"{"detail":"empty left context"}"#.to_string());
                }
                ok(json!({"scores": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0], "truncated": true}))
            }
            _ => (404, "{}".to_string()),
        }
    })
}

#[test]
fn connect_builds_models_and_tokenizers() {
    let (url, _) = serve(model_server(6));
    let backend = RemoteBackend::connect(RemoteClient::new(&url)).unwrap();
    assert_eq!(backend.info.ar_model_name, "toy-ar");
    assert_eq!(backend.ar.vocabulary().len(), 6);
    assert!(!backend.ar.normalized());
    assert_eq!(
        backend.ar_tokenizer.encode("ab ab a").unwrap(),
        vec![2, 4, 5]
    );
    assert_eq!(
        backend.mlm_tokenizer.encode_continuation("ab").unwrap(),
        vec![4]
    );
    assert_eq!(backend.ar_tokenizer.decode(&[2, 4, 5]).unwrap(), "ab ab a");
}

#[test]
fn scoring_requests_carry_ids() {
    let (url, seen) = serve(model_server(6));
    let backend = RemoteBackend::connect(RemoteClient::new(&url)).unwrap();
    let ar = backend.ar.score(&[1, 2, 3]).unwrap();
    assert_eq!(ar[0], 3.0);
    let mlm = backend.mlm.score_masked(&[0], &[4, 5]).unwrap();
    assert_eq!(mlm[5], 5.0);

    let seen = seen.lock().unwrap();
    let ar_call = seen.iter().find(|s| s.target == "/v1/ar_scores").unwrap();
    assert_eq!(ar_call.method, "POST");
    assert_eq!(ar_call.body, json!({"context_ids": [1, 2, 3]}));
    let mlm_call = seen.iter().find(|s| s.target == "/v1/mlm_scores").unwrap();
    assert_eq!(mlm_call.body, json!({"left_ids": [0], "right_ids": [4, 5]}));
}

#[test]
fn truncated_flag_is_surfaced() {
    let (url, _) = serve(model_server(6));
    let client = RemoteClient::new(&url);
    assert!(client.mlm_scores(&[1], &[]).unwrap().truncated);
    assert!(!client.ar_scores(&[1]).unwrap().truncated);
}

#[test]
fn http_errors_keep_status_and_body() {
    let (url, _) = serve(model_server(6));
    let client = RemoteClient::new(&url);
    match client.mlm_scores(&[], &[1]) {
        Err(RemoteError::Status { status, body, .. }) => {
            assert_eq!(status, 422);
            assert!(body.contains("empty left context"));
        }
        other => panic!("unexpected {other:?}"),
    }
    let backend = RemoteBackend::connect(client).unwrap();
    let err = backend.mlm.score_masked(&[], &[1]).unwrap_err();
    assert!(matches!(err, guidedec::Error::Backend(ref m) if m.contains("422")));
}

#[test]
fn vocabulary_size_mismatch_is_rejected() {
    let (url, _) = serve(model_server(7));
    let err = RemoteBackend::connect(RemoteClient::new(&url)).unwrap_err();
    assert!(err.to_string().contains("declares 7"));
}

#[test]
fn wrong_score_length_is_an_engine_error() {
    let handler: Arc<Handler> = Arc::new(|_, target, _| match target {
        "/v1/ar_scores" => (200, r#"{"scores":[0.0,1.0]}"#.to_string()),
        _ => (503, "loading".to_string()),
    });
    let (url, _) = serve(handler);
    let client = RemoteClient::new(&url);
    assert!(matches!(
        client.info(),
        Err(RemoteError::Status { status: 503, .. })
    ));
    assert_eq!(client.ar_scores(&[0]).unwrap().scores.len(), 2);
    let _ = client.vocab(ModelKind::Ar).unwrap_err();
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let err = RemoteClient::new(&url).info().unwrap_err();
    assert!(matches!(err, RemoteError::Transport(_)));
}
