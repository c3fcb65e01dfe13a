use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use proptest::prelude::*;
use skr_core::gateway::{
    request_digest, BackendError, Cassette, CassetteEntry, CompletionBackend, EndpointMode, Gateway, GatewayError,
    GenerationRequest, HttpBackend, LlmEndpointConfig,
};

struct Captured {
    request_line: String,
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves one canned HTTP response per connection and records requests.
fn stub_server(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Captured {
                request_line: request_line.trim_end().to_string(),
                auth,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn cfg(mode: EndpointMode) -> LlmEndpointConfig {
    LlmEndpointConfig { model_name: "m".into(), max_tokens: 32, mode, backoff_ms: 1, ..Default::default() }
}

#[test]
fn http_backend_speaks_chat_completions() {
    let ok = r#"{"choices":[{"message":{"role":"assistant","content":"The answer is (b)."}}]}"#;
    let (url, seen) = stub_server(vec![(200, ok.into())]);
    let backend = HttpBackend::new(&url, "sekrit".into(), Duration::from_secs(5));
    let req = GenerationRequest::new("Q: hi\nA:", &cfg(EndpointMode::Live));
    assert_eq!(backend.complete(&req).unwrap(), "The answer is (b).");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].request_line, "POST /v1/chat/completions HTTP/1.1");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sekrit"));
    assert_eq!(
        seen[0].body,
        serde_json::json!({
            "model": "m",
            "messages": [{"role": "user", "content": "Q: hi\nA:"}],
            "temperature": 0.0,
            "max_tokens": 32
        })
    );
}

#[test]
fn http_errors_map_to_auth_and_transport() {
    let (url, _) = stub_server(vec![(401, "{}".into()), (503, "{}".into()), (200, "not json".into())]);
    let backend = HttpBackend::new(&url, "k".into(), Duration::from_secs(5));
    let req = GenerationRequest::new("p", &cfg(EndpointMode::Live));
    assert!(matches!(backend.complete(&req), Err(BackendError::Auth(_))));
    assert!(matches!(backend.complete(&req), Err(BackendError::Transport(_))));
    assert!(matches!(backend.complete(&req), Err(BackendError::Transport(_))));
}

#[test]
fn gateway_retries_transport_errors_over_http() {
    let ok = r#"{"choices":[{"text":"done"}]}"#;
    let (url, seen) = stub_server(vec![(500, "{}".into()), (502, "{}".into()), (200, ok.into())]);
    let backend: Arc<dyn CompletionBackend> = Arc::new(HttpBackend::new(&url, "k".into(), Duration::from_secs(5)));
    let gw = Gateway::new(cfg(EndpointMode::Live), Arc::new(Cassette::in_memory()), Some(backend));
    assert_eq!(gw.generate("p").unwrap(), "done");
    assert_eq!(gw.backend_calls(), 3);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn record_then_replay_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let calls = Arc::new(AtomicUsize::new(0));
    let c2 = calls.clone();
    let backend = move |req: &GenerationRequest| -> Result<String, BackendError> {
        c2.fetch_add(1, Ordering::SeqCst);
        Ok(format!("echo {}", req.prompt))
    };
    let rec = Gateway::new(cfg(EndpointMode::Record), Arc::new(Cassette::open(&path).unwrap()), Some(Arc::new(backend)));
    assert_eq!(rec.generate("one").unwrap(), "echo one");
    assert_eq!(rec.generate("one").unwrap(), "echo one");
    assert_eq!(rec.generate("two").unwrap(), "echo two");
    assert_eq!(calls.load(Ordering::SeqCst), 2);

    let replay = Gateway::from_config(cfg(EndpointMode::Replay), Arc::new(Cassette::open(&path).unwrap())).unwrap();
    assert_eq!(replay.generate("two").unwrap(), "echo two");
    assert!(matches!(replay.generate("three"), Err(GatewayError::CassetteMiss { .. })));
    assert_eq!(replay.backend_calls(), 0);
}

#[test]
fn tampered_cassette_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let req = GenerationRequest::new("p", &cfg(EndpointMode::Replay));
    let mut entry = CassetteEntry::new(&req, "r".into());
    entry.prompt = "changed".into();
    std::fs::write(&path, serde_json::to_string(&entry).unwrap() + "\n").unwrap();
    assert!(Cassette::open(&path).is_err());
}

#[test]
fn concurrency_limit_is_respected() {
    let in_flight = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (f, p) = (in_flight.clone(), peak.clone());
    let backend = move |_: &GenerationRequest| -> Result<String, BackendError> {
        let now = f.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(5));
        f.fetch_sub(1, Ordering::SeqCst);
        Ok("x".into())
    };
    let mut c = cfg(EndpointMode::Live);
    c.concurrency = 2;
    let gw = Arc::new(Gateway::new(c, Arc::new(Cassette::in_memory()), Some(Arc::new(backend))));
    std::thread::scope(|s| {
        for i in 0..16 {
            let gw = gw.clone();
            s.spawn(move || gw.generate(&format!("p{i}")).unwrap());
        }
    });
    assert!(peak.load(Ordering::SeqCst) <= 2);
    assert_eq!(gw.backend_calls(), 16);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cassette_round_trips(pairs in prop::collection::btree_map("\\PC{1,40}", "\\PC{0,40}", 1..12)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = cfg(EndpointMode::Record);
        {
            let cassette = Cassette::open(&path).unwrap();
            for (p, r) in &pairs {
                cassette.append(CassetteEntry::new(&GenerationRequest::new(p.clone(), &c), r.clone())).unwrap();
            }
        }
        let back = Cassette::open(&path).unwrap();
        prop_assert_eq!(back.len(), pairs.len());
        for (p, r) in &pairs {
            let digest = request_digest(&GenerationRequest::new(p.clone(), &c));
            prop_assert_eq!(back.get(&digest), Some(r.clone()));
        }
    }

    #[test]
    fn digest_depends_on_every_field(p in "\\PC{1,20}", t in 0.0f64..2.0, n in 1u32..4096) {
        let base = GenerationRequest { prompt: p.clone(), model_name: "m".into(), temperature: t, max_tokens: n };
        let d = request_digest(&base);
        prop_assert_eq!(d.len(), 64);
        prop_assert_ne!(&d, &request_digest(&GenerationRequest { prompt: format!("{p}x"), ..base.clone() }));
        prop_assert_ne!(&d, &request_digest(&GenerationRequest { model_name: "m2".into(), ..base.clone() }));
        prop_assert_ne!(&d, &request_digest(&GenerationRequest { max_tokens: n + 1, ..base.clone() }));
        prop_assert_ne!(&d, &request_digest(&GenerationRequest { temperature: t + 0.5, ..base }));
    }
}
