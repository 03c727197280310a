use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use dcn_llm::{
    Cassette, CassetteMode, ChatMessage, ChatRequest, ChatResponse, ClientConfig, HttpTransport, LlmClient, LlmError,
    RequestTag, Transport, TransportError,
};

/// Echoes the last message; counts calls; can fail the first few.
struct Echo {
    calls: AtomicUsize,
    fail_first: usize,
    failure: TransportError,
    delay: Duration,
}

impl Echo {
    fn new() -> Self {
        Echo { calls: AtomicUsize::new(0), fail_first: 0, failure: TransportError::Timeout, delay: Duration::ZERO }
    }
}

impl Transport for Echo {
    fn send(&self, req: &ChatRequest, _: Duration) -> Result<ChatResponse, TransportError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(self.delay);
        if n < self.fail_first {
            return Err(self.failure.clone());
        }
        Ok(ChatResponse { text: format!("echo: {}", req.messages.last().unwrap().content), prompt_tokens: 3, completion_tokens: 2 })
    }
}

fn fast() -> ClientConfig {
    ClientConfig { backoff_base_ms: 1, ..ClientConfig::default() }
}

fn req(client: &LlmClient, text: &str, stage: &str) -> ChatRequest {
    client.request(vec![ChatMessage::system("sys"), ChatMessage::user(text)], RequestTag::new("s1", 1, stage))
}

#[test]
fn record_dedups_and_replay_serves_without_network() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let echo = Arc::new(Echo::new());
    let client = LlmClient::with_cassette(fast(), echo.clone(), Cassette::open(&path, CassetteMode::Record).unwrap());
    let a = client.chat(&req(&client, "hello", "draft")).unwrap();
    let b = client.chat(&req(&client, "hello", "judge")).unwrap();
    assert_eq!(a.text, b.text);
    assert_eq!(echo.calls.load(Ordering::SeqCst), 1);
    assert_eq!(client.network_calls(), 1);
    assert_eq!(client.call_ledger().len(), 2);
    client.finish_recording().unwrap();

    let replay = LlmClient::replay(fast(), Cassette::open(&path, CassetteMode::Replay).unwrap());
    assert_eq!(replay.chat(&req(&replay, "hello", "x")).unwrap().text, "echo: hello");
    assert_eq!(replay.network_calls(), 0);
    match replay.chat(&req(&replay, "unseen", "plan")) {
        Err(LlmError::CassetteMiss { tag, .. }) => assert_eq!(tag.stage, "plan"),
        other => panic!("expected a cassette miss, got {other:?}"),
    }
}

#[test]
fn transient_failures_are_retried() {
    let echo = Arc::new(Echo { fail_first: 2, failure: TransportError::Status { status: 503, body: String::new() }, ..Echo::new() });
    let client = LlmClient::new(fast(), echo.clone());
    assert!(client.chat(&req(&client, "x", "draft")).is_ok());
    assert_eq!(client.call_ledger()[0].attempts, 3);

    let echo = Arc::new(Echo { fail_first: 10, ..Echo::new() });
    let client = LlmClient::new(fast(), echo.clone());
    let err = client.chat(&req(&client, "x", "draft")).unwrap_err();
    assert!(matches!(err, LlmError::Timeout { attempts: 4, .. }), "{err}");
    assert_eq!(echo.calls.load(Ordering::SeqCst), 4);

    let echo = Arc::new(Echo { fail_first: 10, failure: TransportError::Status { status: 401, body: "no".into() }, ..Echo::new() });
    let client = LlmClient::new(fast(), echo.clone());
    let err = client.chat(&req(&client, "x", "draft")).unwrap_err();
    assert!(matches!(err, LlmError::Provider { attempts: 1, .. }), "{err}");
    assert!(err.to_string().contains("s1/turn1/draft"));
}

#[test]
fn invalid_requests_are_refused() {
    let client = LlmClient::new(fast(), Arc::new(Echo::new()));
    let mut r = req(&client, "x", "draft");
    r.messages.clear();
    assert!(matches!(client.chat(&r), Err(LlmError::InvalidRequest { .. })));
}

#[test]
fn in_flight_calls_are_bounded() {
    let echo = Arc::new(Echo { delay: Duration::from_millis(15), ..Echo::new() });
    let client = Arc::new(LlmClient::new(ClientConfig { max_concurrency: 4, ..fast() }, echo));
    std::thread::scope(|s| {
        for t in 0..24 {
            let client = client.clone();
            s.spawn(move || {
                for i in 0..3 {
                    client.chat(&req(&client, &format!("{t}-{i}"), "draft")).unwrap();
                }
            });
        }
    });
    let ledger = client.call_ledger();
    assert_eq!(ledger.len(), 72);
    let mut events: Vec<(u64, i32)> = ledger.iter().flat_map(|e| [(e.started_us, 1), (e.finished_us, -1)]).collect();
    events.sort_by_key(|(t, d)| (*t, *d));
    let (mut live, mut peak) = (0, 0);
    for (_, d) in events {
        live += d;
        peak = peak.max(live);
    }
    assert!(peak <= 4, "peak {peak}");
    assert!(peak >= 2, "calls never overlapped");
}

#[test]
fn http_transport_speaks_chat_completions() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = String::new();
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            head.push_str(&line);
            if line == "\r\n" {
                break;
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let reply = r#"{"choices":[{"message":{"role":"assistant","content":"Thought: ok"}}],"usage":{"prompt_tokens":5,"completion_tokens":3}}"#;
        let mut stream = stream;
        write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}", reply.len()).unwrap();
        (head, String::from_utf8(body).unwrap())
    });
    let transport = HttpTransport::new(format!("http://{addr}/v1"), Some("secret".into()));
    let client = LlmClient::new(fast(), Arc::new(transport));
    let resp = client.chat(&req(&client, "hi", "draft")).unwrap();
    assert_eq!(resp.text, "Thought: ok");
    assert_eq!(resp.prompt_tokens, 5);
    let (head, body) = server.join().unwrap();
    assert!(head.starts_with("POST /v1/chat/completions"));
    assert!(head.contains("Bearer secret"));
    let body: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(body["max_tokens"], 1024);
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][1]["content"], "hi");
}
