use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::protocol::{interpret, HelloRequest, HelloResponse, ScoreRequest, ServerMessage};
use super::{ImageTextScorer, ScoreError, Scorer, TextScorer};
use crate::image::ImagePayload;

/// Requests kept in flight per batch.
pub const DEFAULT_BATCH_WINDOW: usize = 32;

const DEFAULT_RESPONSE_TIMEOUT: Duration = Duration::from_secs(600);

type Reply = Result<f64, ScoreError>;

#[derive(Default)]
struct Pending {
    waiting: HashMap<String, mpsc::Sender<Reply>>,
    closed: Option<String>,
}

struct Shared {
    writer: Mutex<Option<Box<dyn Write + Send>>>,
    pending: Mutex<Pending>,
}

impl Shared {
    fn close(&self, reason: String) {
        let mut pending = self.pending.lock().unwrap();
        for (_, tx) in pending.waiting.drain() {
            let _ = tx.send(Err(ScoreError::Unavailable(reason.clone())));
        }
        pending.closed.get_or_insert(reason);
    }
}

/// Client for a scorer speaking the line protocol over a byte stream.
///
/// One connection is shared by all callers: each request is tagged with a
/// fresh id and its caller blocks until the matching response arrives, in
/// whatever order the server answers.
pub struct LineScorer {
    shared: Arc<Shared>,
    scorer_id: String,
    next_id: AtomicU64,
    batch_window: usize,
    timeout: Duration,
    reader: Option<JoinHandle<()>>,
    child: Option<Child>,
}

impl LineScorer {
    /// Performs the handshake over `reader`/`writer` and starts the response
    /// dispatcher.
    pub fn connect<R, W>(reader: R, mut writer: W) -> Result<Self, ScoreError>
    where
        R: std::io::Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut reader = BufReader::new(reader);
        let hello = serde_json::to_string(&HelloRequest::default()).expect("static json");
        writeln!(writer, "{hello}")
            .and_then(|_| writer.flush())
            .map_err(|e| ScoreError::Unavailable(format!("handshake write failed: {e}")))?;
        let mut line = String::new();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| ScoreError::Unavailable(format!("handshake read failed: {e}")))?;
        if n == 0 {
            return Err(ScoreError::Unavailable(
                "scorer closed the connection during handshake".into(),
            ));
        }
        let hello: HelloResponse = serde_json::from_str(line.trim()).map_err(|e| {
            ScoreError::Protocol(format!("bad handshake reply `{}`: {e}", line.trim()))
        })?;
        let scorer_id = hello.check()?;

        let shared = Arc::new(Shared {
            writer: Mutex::new(Some(Box::new(writer))),
            pending: Mutex::new(Pending::default()),
        });
        let dispatcher = Arc::clone(&shared);
        let handle = std::thread::Builder::new()
            .name("scorer-reader".into())
            .spawn(move || dispatch(reader, &dispatcher))
            .map_err(|e| ScoreError::Unavailable(e.to_string()))?;

        Ok(Self {
            shared,
            scorer_id,
            next_id: AtomicU64::new(0),
            batch_window: DEFAULT_BATCH_WINDOW,
            timeout: DEFAULT_RESPONSE_TIMEOUT,
            reader: Some(handle),
            child: None,
        })
    }

    /// Launches `command` and talks to it over stdin/stdout.
    pub fn spawn(command: &[String]) -> Result<Self, ScoreError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| ScoreError::Unavailable("empty scorer command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ScoreError::Unavailable(format!("failed to start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match Self::connect(stdout, stdin) {
            Ok(mut scorer) => {
                scorer.child = Some(child);
                Ok(scorer)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    pub fn with_batch_window(mut self, window: usize) -> Self {
        self.batch_window = window.max(1);
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn fresh_id(&self) -> String {
        format!("q{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    fn submit(&self, request: &ScoreRequest) -> Result<mpsc::Receiver<Reply>, ScoreError> {
        request.validate()?;
        let (tx, rx) = mpsc::channel();
        {
            let mut pending = self.shared.pending.lock().unwrap();
            if let Some(reason) = &pending.closed {
                return Err(ScoreError::Unavailable(reason.clone()));
            }
            pending.waiting.insert(request.id.clone(), tx);
        }
        let line = serde_json::to_string(request).expect("request serializes");
        let mut writer = self.shared.writer.lock().unwrap();
        let result = match writer.as_mut() {
            Some(w) => writeln!(w, "{line}").and_then(|_| w.flush()),
            None => Err(std::io::Error::other("connection closed")),
        };
        if let Err(e) = result {
            self.shared
                .pending
                .lock()
                .unwrap()
                .waiting
                .remove(&request.id);
            return Err(ScoreError::Unavailable(format!("write failed: {e}")));
        }
        Ok(rx)
    }

    fn await_reply(&self, id: &str, rx: mpsc::Receiver<Reply>, deadline: Instant) -> Reply {
        let wait = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(wait) {
            Ok(reply) => reply,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                self.shared.pending.lock().unwrap().waiting.remove(id);
                Err(ScoreError::Unavailable(format!(
                    "timed out waiting for {id}"
                )))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(ScoreError::Unavailable("scorer connection closed".into()))
            }
        }
    }

    /// Sends requests in windows, keeping up to `batch_window` in flight.
    /// Scores come back in request order.
    pub fn score_all(&self, requests: &[ScoreRequest]) -> Result<Vec<f64>, ScoreError> {
        let mut scores = Vec::with_capacity(requests.len());
        for window in requests.chunks(self.batch_window) {
            let receivers = window
                .iter()
                .map(|r| self.submit(r).map(|rx| (r.id.as_str(), rx)))
                .collect::<Result<Vec<_>, _>>()?;
            let deadline = Instant::now() + self.timeout;
            for (id, rx) in receivers {
                scores.push(self.await_reply(id, rx, deadline)?);
            }
        }
        Ok(scores)
    }
}

fn dispatch<R: BufRead>(reader: R, shared: &Shared) {
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                shared.close(format!("read failed: {e}"));
                return;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let message: ServerMessage = match serde_json::from_str(&line) {
            Ok(m) => m,
            Err(e) => {
                warn!("ignoring unparseable scorer line: {e}");
                continue;
            }
        };
        let Some((id, reply)) = interpret(message) else {
            debug!("ignoring unsolicited handshake message");
            continue;
        };
        let tx = shared.pending.lock().unwrap().waiting.remove(&id);
        match tx {
            Some(tx) => {
                let _ = tx.send(reply);
            }
            None => warn!("scorer answered unknown request id `{id}`"),
        }
    }
    shared.close("scorer closed the connection".into());
}

impl TextScorer for LineScorer {
    fn text_similarity(&self, reference: &str, candidate: &str) -> Result<f64, ScoreError> {
        let request = ScoreRequest::text(self.fresh_id(), reference, candidate);
        Ok(self.score_all(std::slice::from_ref(&request))?[0])
    }

    fn text_similarity_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        let requests: Vec<_> = pairs
            .iter()
            .map(|(r, c)| ScoreRequest::text(self.fresh_id(), r, c))
            .collect();
        self.score_all(&requests)
    }
}

impl ImageTextScorer for LineScorer {
    fn image_text_similarity(
        &self,
        image: &ImagePayload,
        candidate: &str,
    ) -> Result<f64, ScoreError> {
        Ok(self.image_text_similarity_batch(image, &[candidate])?[0])
    }

    fn image_text_similarity_batch(
        &self,
        image: &ImagePayload,
        candidates: &[&str],
    ) -> Result<Vec<f64>, ScoreError> {
        let encoded = image.to_base64();
        let requests: Vec<_> = candidates
            .iter()
            .map(|c| ScoreRequest::image_text(self.fresh_id(), encoded.clone(), c))
            .collect();
        Ok(self
            .score_all(&requests)?
            .into_iter()
            .map(|s| s.max(0.0))
            .collect())
    }
}

impl Scorer for LineScorer {
    fn scorer_id(&self) -> &str {
        &self.scorer_id
    }
}

impl Drop for LineScorer {
    fn drop(&mut self) {
        // Closing stdin is the shutdown signal.
        self.shared.writer.lock().unwrap().take();
        if let Some(mut child) = self.child.take() {
            let give_up = Instant::now() + Duration::from_secs(2);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < give_up => {
                        std::thread::sleep(Duration::from_millis(20))
                    }
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
            if let Some(handle) = self.reader.take() {
                let _ = handle.join();
            }
        }
    }
}
