#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rona_core::datasets::ConsistencyScope;
use rona_core::image::ImagePayload;
use rona_core::metrics::TokenizationPolicy;
use rona_core::prompting::{PromptBundle, Strategy, Task};
use rona_core::providers::{
    CaptionProvider, GenerationOutcome, GenerationStatus, ProviderConfig, ProviderError,
};
use rona_core::runner::{
    build_providers, execute, prepare, GenerationCache, RunConfig, RunResult, RunStamp,
};
use rona_core::scoring::protocol::{HelloResponse, ScoreOp, ScoreRequest};
use rona_core::scoring::{FallbackScorer, ImageTextScorer, ScoreError, Scorer, TextScorer};
use serde_json::{json, Value};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn corpus_data() -> PathBuf {
    fixtures().join("corpus/data")
}

/// Both datasets, two mock models, fallback scorer, every fixture sample.
pub fn corpus_config(scope: ConsistencyScope) -> RunConfig {
    let text = format!(
        r#"
        data_root = {root:?}
        datasets = ["tweet-subtitles", "anna"]
        seed = 42
        workers = 4
        consistency_scope = "{scope}"

        [[models]]
        provider_id = "mock"
        label = "GPT-4o"
        model_id = "gpt-4o-2024-11-20"

        [[models]]
        provider_id = "mock"
        label = "Claude"
        model_id = "claude-3-5-sonnet-v2@20241022"
        "#,
        root = corpus_data().display().to_string(),
        scope = match scope {
            ConsistencyScope::Dataset => "dataset",
            ConsistencyScope::Run => "run",
        },
    );
    RunConfig::from_toml_str(&text, &fixtures(), &[]).expect("corpus config parses")
}

pub fn stamp() -> RunStamp {
    RunStamp {
        run_id: "test-run".into(),
        created_at: "2026-01-01T00:00:00Z".into(),
    }
}

pub fn run_with(
    config: &RunConfig,
    providers: &[Arc<dyn CaptionProvider>],
    cache: &mut GenerationCache,
) -> RunResult {
    let prepared = prepare(config).expect("prepare");
    let scorer = FallbackScorer::new(config.metrics.tokenization);
    execute(&prepared, providers, &scorer, cache, stamp()).expect("execute")
}

pub fn mock_providers(config: &RunConfig) -> Vec<Arc<dyn CaptionProvider>> {
    build_providers(config, None).expect("mock providers")
}

/// Delegates to `inner`, except for one (sample, strategy, task) which it
/// answers with a safety refusal.
pub struct RefusingProvider {
    pub inner: Arc<dyn CaptionProvider>,
    pub sample_id: String,
    pub strategy: Strategy,
    pub task: Task,
    pub refusals: AtomicUsize,
}

impl RefusingProvider {
    pub fn wrap(
        inner: Arc<dyn CaptionProvider>,
        sample_id: &str,
        strategy: Strategy,
        task: Task,
    ) -> Self {
        Self {
            inner,
            sample_id: sample_id.into(),
            strategy,
            task,
            refusals: AtomicUsize::new(0),
        }
    }
}

impl CaptionProvider for RefusingProvider {
    fn config(&self) -> &ProviderConfig {
        self.inner.config()
    }

    fn generate(&self, bundle: &PromptBundle) -> Result<GenerationOutcome, ProviderError> {
        if bundle.sample_id == self.sample_id
            && bundle.strategy == self.strategy
            && bundle.task == self.task
        {
            self.refusals.fetch_add(1, Ordering::SeqCst);
            return Ok(GenerationOutcome {
                status: GenerationStatus::SafetyRejected,
                raw_text: Some("I can't help with that.".into()),
                caption_set: None,
                attempts: 1,
                latency_ms: 0,
                error: None,
            });
        }
        self.inner.generate(bundle)
    }

    fn calls(&self) -> usize {
        self.inner.calls() + self.refusals.load(Ordering::SeqCst)
    }
}

/// Counts scorer invocations; answers with `f(reference, candidate)`.
pub struct CountingScorer<F> {
    pub f: F,
    pub calls: AtomicUsize,
}

impl<F: Fn(&str, &str) -> f64 + Send + Sync> CountingScorer<F> {
    pub fn new(f: F) -> Self {
        Self {
            f,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F: Fn(&str, &str) -> f64 + Send + Sync> TextScorer for CountingScorer<F> {
    fn text_similarity(&self, reference: &str, candidate: &str) -> Result<f64, ScoreError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok((self.f)(reference, candidate))
    }
}

/// Fake scorer server behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerMode {
    /// Answers each collected batch in reverse order.
    Reversing,
    /// Answers the handshake with an unsupported protocol version.
    WrongProtocol,
    /// Hangs up without answering the handshake.
    HangUpAtHello,
    /// Answers the handshake, then exits after reading one request.
    DieAfterOne,
    /// Answers every request with an id nobody asked for, then the real one.
    StrayIds,
}

pub const FAKE_SCORER_ID: &str = "fake-f1+hash";

/// One server reply for one request, scored with the fallback scorer.
pub fn fake_reply(request: &ScoreRequest) -> Value {
    let scorer = FallbackScorer::new(TokenizationPolicy::default());
    let result = match request.op {
        ScoreOp::TextSim => match &request.reference {
            Some(r) => scorer.text_similarity(r, &request.candidate),
            None => Err(ScoreError::Protocol("missing reference".into())),
        },
        ScoreOp::ImageTextSim => match request
            .image_b64
            .as_deref()
            .map(|b| ImagePayload::from_base64(b).and_then(|i| i.dimensions().map(|_| i)))
        {
            Some(Ok(image)) => scorer.image_text_similarity(&image, &request.candidate),
            Some(Err(e)) => Err(ScoreError::ImageUndecodable(e.to_string())),
            None => Err(ScoreError::Protocol("missing image_b64".into())),
        },
    };
    match result {
        Ok(score) => json!({"id": request.id, "score": score, "scorer_id": FAKE_SCORER_ID}),
        Err(ScoreError::ImageUndecodable(m)) => {
            json!({"id": request.id, "error": format!("image could not be decoded: {m}")})
        }
        Err(e) => json!({"id": request.id, "error": e.to_string()}),
    }
}

fn parse_request(line: &str) -> Option<ScoreRequest> {
    serde_json::from_str(line).ok()
}

/// Serves the line protocol on `reader`/`writer` until the client hangs up.
pub fn serve_lines<R: Read + Send, W: Write>(reader: R, mut writer: W, mode: ServerMode) {
    let mut reader = BufReader::new(reader);
    let mut hello = String::new();
    if reader.read_line(&mut hello).unwrap_or(0) == 0 {
        return;
    }
    let protocol = match mode {
        ServerMode::HangUpAtHello => return,
        ServerMode::WrongProtocol => 2,
        _ => 1,
    };
    let reply = HelloResponse {
        scorer_id: FAKE_SCORER_ID.into(),
        protocol,
    };
    if writeln!(writer, "{}", serde_json::to_string(&reply).unwrap())
        .and_then(|_| writer.flush())
        .is_err()
    {
        return;
    }

    // Lines are read on a helper thread so a batch can be collected with a
    // short quiet period and answered out of order.
    let (tx, rx) = mpsc::channel::<String>();
    std::thread::scope(|scope| {
        scope.spawn(move || {
            for line in reader.lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        while let Ok(first) = rx.recv() {
            if mode == ServerMode::DieAfterOne {
                break;
            }
            let mut batch = vec![first];
            while let Ok(line) = rx.recv_timeout(Duration::from_millis(15)) {
                batch.push(line);
            }
            let mut out = String::new();
            for line in batch.iter().rev() {
                let Some(request) = parse_request(line) else {
                    continue;
                };
                if mode == ServerMode::StrayIds {
                    let stray = json!({"id": format!("stray-{}", request.id), "score": 0.5, "scorer_id": FAKE_SCORER_ID});
                    out.push_str(&stray.to_string());
                    out.push('\n');
                }
                out.push_str(&fake_reply(&request).to_string());
                out.push('\n');
            }
            if writer
                .write_all(out.as_bytes())
                .and_then(|_| writer.flush())
                .is_err()
            {
                break;
            }
        }
        // Returning drops the writer, which closes the client's read side.
        drop(writer);
    });
}

/// Starts a fake line server on a pair of OS pipes. Returns the client ends.
pub fn spawn_line_server(
    mode: ServerMode,
) -> (std::io::PipeReader, std::io::PipeWriter, JoinHandle<()>) {
    let (client_reader, server_writer) = std::io::pipe().expect("pipe");
    let (server_reader, client_writer) = std::io::pipe().expect("pipe");
    let handle = std::thread::spawn(move || serve_lines(server_reader, server_writer, mode));
    (client_reader, client_writer, handle)
}

/// Minimal HTTP/1.1 server exposing `POST /score`. Returns its base URL.
pub fn spawn_http_server() -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let base = format!("http://{}", listener.local_addr().unwrap());
    let paths = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&paths);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let seen = Arc::clone(&seen);
            std::thread::spawn(move || handle_http(stream, &seen));
        }
    });
    (base, paths)
}

fn handle_http(stream: TcpStream, seen: &Mutex<Vec<String>>) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut stream = stream;
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
            return;
        }
        let path = request_line
            .split_whitespace()
            .nth(1)
            .unwrap_or("")
            .to_string();
        let mut length = 0usize;
        loop {
            let mut header = String::new();
            if reader.read_line(&mut header).unwrap_or(0) == 0 {
                return;
            }
            let header = header.trim_end();
            if header.is_empty() {
                break;
            }
            if let Some((name, value)) = header.split_once(':') {
                if name.eq_ignore_ascii_case("content-length") {
                    length = value.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        seen.lock().unwrap().push(path.clone());
        let (status, reply) = if path != "/score" {
            ("404 Not Found", json!({"error": "not found"}))
        } else {
            let value: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            if value.get("op").and_then(Value::as_str) == Some("hello") {
                (
                    "200 OK",
                    json!({"scorer_id": FAKE_SCORER_ID, "protocol": 1}),
                )
            } else {
                match serde_json::from_value::<ScoreRequest>(value) {
                    Ok(r) => ("200 OK", fake_reply(&r)),
                    Err(e) => ("400 Bad Request", json!({"error": e.to_string()})),
                }
            }
        };
        let body = reply.to_string();
        let response = format!(
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{body}",
            body.len()
        );
        if stream.write_all(response.as_bytes()).is_err() {
            return;
        }
    }
}

/// The scorer under test: `RONA_SCORER_CMD` (a command line) or
/// `RONA_SCORER_URL` when set, otherwise the in-process fake.
pub enum ScorerUnderTest {
    Fake,
    Command(Vec<String>),
    Url(String),
}

impl ScorerUnderTest {
    pub fn from_env() -> Self {
        if let Ok(cmd) = std::env::var("RONA_SCORER_CMD") {
            let parts: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if !parts.is_empty() {
                return ScorerUnderTest::Command(parts);
            }
        }
        match std::env::var("RONA_SCORER_URL") {
            Ok(url) if !url.is_empty() => ScorerUnderTest::Url(url),
            _ => ScorerUnderTest::Fake,
        }
    }

    pub fn is_fake(&self) -> bool {
        matches!(self, ScorerUnderTest::Fake)
    }
}

/// Solid-colour PNG encoded for the wire.
pub fn test_image(rgb: [u8; 3]) -> ImagePayload {
    ImagePayload::from_bytes(rona_core::image::solid_png(8, 8, rgb)).expect("png decodes")
}

pub fn boxed_scorer(scorer: impl Scorer + 'static) -> Box<dyn Scorer> {
    Box::new(scorer)
}
