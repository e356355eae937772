//! JSON-lines client for oracles that live in another process.
//!
//! A server is anything that reads newline-terminated JSON messages and answers
//! them in order: a subprocess on stdio, or a listener on a local Unix socket.
//!
//! ```text
//! -> {"type":"hello","version":1}
//! <- {"type":"hello_ack","oracle":"qed","fp_len":4096,"aux":["sa"]}
//! -> {"type":"eval","id":1,"fps":["0f3a...", "..."]}
//! <- {"type":"result","id":1,"scores":[0.71,0.42],"aux":{"sa":[0.15,0.22]}}
//! <- {"type":"error","id":1,"message":"..."}            (instead of a result)
//! -> {"type":"shutdown"}
//! ```
//!
//! Fingerprints travel in canonical hex (see [`Fingerprint::to_hex`]). One
//! request is in flight at a time. Budget and caching stay on the client, so a
//! fingerprint never crosses the wire twice in a run when the client sits
//! behind a [`BudgetedOracle`](crate::BudgetedOracle).

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::os::unix::net::UnixStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::fingerprint::Fingerprint;
use crate::oracle::{Oracle, OracleError};

pub const PROTOCOL_VERSION: u64 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_MAX_LINE: usize = 16 * 1024 * 1024;
/// How long `shutdown` waits for the server to go away.
pub const SHUTDOWN_GRACE: Duration = Duration::from_secs(2);

/// Longest excerpt of an offending line kept in an error message.
const QUOTE_LIMIT: usize = 200;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("transport error: {0}")]
    Io(String),
    #[error("failed to start oracle server `{command}`: {message}")]
    Spawn { command: String, message: String },
    #[error("timed out after {after:?} waiting for {waiting_for}")]
    Timeout { waiting_for: &'static str, after: Duration },
    #[error("oracle server closed the connection")]
    Closed,
    #[error("malformed message ({reason}): {line:?}")]
    Malformed { line: String, reason: String },
    #[error("message exceeds the {limit}-byte line limit")]
    LineTooLong { limit: usize },
    #[error("expected a `{expected}` message, got {line:?}")]
    Unexpected { expected: &'static str, line: String },
    #[error("server speaks protocol version {theirs}, client speaks {ours}")]
    VersionMismatch { ours: u64, theirs: u64 },
    #[error("server fingerprint length {actual} does not match the run's {expected}")]
    FpLenMismatch { expected: usize, actual: usize },
    #[error("result id {actual} does not answer request {expected}")]
    IdMismatch { expected: u64, actual: u64 },
    #[error("server returned {actual} scores for {expected} fingerprints")]
    Arity { expected: usize, actual: usize },
    #[error("aux scorer `{name}` returned {actual} values for {expected} fingerprints")]
    AuxArity { name: String, expected: usize, actual: usize },
    #[error("server returned score {score} at index {index}, outside [0, 1]")]
    ScoreOutOfRange { index: usize, score: f64 },
    #[error("fingerprint of length {actual} sent to a server of length {expected}")]
    FingerprintLength { expected: usize, actual: usize },
    #[error("oracle server error: {0}")]
    Server(String),
    #[error("endpoint used before a successful handshake")]
    NotConnected,
    #[error("endpoint has been shut down")]
    ShutDown,
    #[error("endpoint is unusable after an earlier protocol failure")]
    Broken,
}

impl ProtocolError {
    /// Errors after which the request/response stream can no longer be trusted.
    fn desyncs(&self) -> bool {
        !matches!(
            self,
            ProtocolError::Server(_)
                | ProtocolError::ScoreOutOfRange { .. }
                | ProtocolError::FingerprintLength { .. }
                | ProtocolError::NotConnected
                | ProtocolError::ShutDown
        )
    }
}

fn quote(line: &[u8]) -> String {
    let s = String::from_utf8_lossy(line);
    let s = s.trim_end_matches(['\n', '\r']);
    if s.chars().count() > QUOTE_LIMIT {
        let cut: String = s.chars().take(QUOTE_LIMIT).collect();
        format!("{cut}...")
    } else {
        s.to_string()
    }
}

/// Where the server lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transport {
    /// Program and arguments; the server speaks on its stdin/stdout.
    Command(Vec<String>),
    Socket(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointOptions {
    /// Per-message wait, including the handshake.
    pub timeout: Duration,
    pub max_line: usize,
}

impl Default for EndpointOptions {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            max_line: DEFAULT_MAX_LINE,
        }
    }
}

/// What the server announced in its `hello_ack`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleDescriptor {
    pub oracle: String,
    pub fp_len: usize,
    pub aux: Vec<String>,
}

/// Scores for one batch, in request order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReply {
    pub scores: Vec<f64>,
    pub aux: BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Incoming {
    HelloAck {
        oracle: String,
        fp_len: usize,
        #[serde(default)]
        aux: Vec<String>,
        #[serde(default)]
        version: Option<u64>,
    },
    Result {
        id: u64,
        scores: Vec<f64>,
        #[serde(default)]
        aux: BTreeMap<String, Vec<f64>>,
    },
    Error {
        #[serde(default)]
        message: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Fresh,
    Ready,
    Broken,
    ShutDown,
}

type LineResult = Result<Vec<u8>, ProtocolError>;

/// Reads newline-terminated lines on a helper thread so waits can time out.
fn spawn_reader(input: Box<dyn Read + Send>, max_line: usize) -> Receiver<LineResult> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(input);
        loop {
            let mut buf = Vec::new();
            let res = (&mut reader).take(max_line as u64 + 1).read_until(b'\n', &mut buf);
            let msg = match res {
                Err(e) => Err(ProtocolError::Io(e.to_string())),
                Ok(0) => Err(ProtocolError::Closed),
                Ok(_) if buf.last() != Some(&b'\n') && buf.len() > max_line => {
                    Err(ProtocolError::LineTooLong { limit: max_line })
                }
                Ok(_) if buf.last() != Some(&b'\n') => Err(ProtocolError::Closed),
                Ok(_) => Ok(buf),
            };
            let stop = msg.is_err();
            if tx.send(msg).is_err() || stop {
                return;
            }
        }
    });
    rx
}

/// One connection to an oracle server.
pub struct BridgeClient {
    writer: Option<Box<dyn Write + Send>>,
    lines: Receiver<LineResult>,
    child: Option<Child>,
    options: EndpointOptions,
    descriptor: Option<OracleDescriptor>,
    next_id: u64,
    state: State,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("descriptor", &self.descriptor)
            .field("state", &self.state)
            .finish()
    }
}

impl BridgeClient {
    pub fn open(transport: &Transport, options: EndpointOptions) -> Result<Self, ProtocolError> {
        match transport {
            Transport::Command(argv) => Self::spawn(argv, options),
            Transport::Socket(path) => Self::connect(path, options),
        }
    }

    pub fn spawn(argv: &[String], options: EndpointOptions) -> Result<Self, ProtocolError> {
        let command = argv.join(" ");
        let (prog, args) = argv.split_first().ok_or_else(|| ProtocolError::Spawn {
            command: command.clone(),
            message: "empty command".into(),
        })?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ProtocolError::Spawn {
                command: command.clone(),
                message: e.to_string(),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::from_streams(stdout, stdin, options);
        client.child = Some(child);
        Ok(client)
    }

    pub fn connect(path: &Path, options: EndpointOptions) -> Result<Self, ProtocolError> {
        let stream = UnixStream::connect(path)
            .map_err(|e| ProtocolError::Io(format!("connecting to {}: {e}", path.display())))?;
        let reader = stream.try_clone().map_err(|e| ProtocolError::Io(e.to_string()))?;
        Ok(Self::from_streams(reader, stream, options))
    }

    /// Wraps an already-open byte stream pair.
    pub fn from_streams<R, W>(reader: R, writer: W, options: EndpointOptions) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self {
            lines: spawn_reader(Box::new(reader), options.max_line),
            writer: Some(Box::new(writer)),
            child: None,
            options,
            descriptor: None,
            next_id: 1,
            state: State::Fresh,
        }
    }

    pub fn descriptor(&self) -> Option<&OracleDescriptor> {
        self.descriptor.as_ref()
    }

    fn send(&mut self, msg: &serde_json::Value) -> Result<(), ProtocolError> {
        let mut line = serde_json::to_vec(msg).map_err(|e| ProtocolError::Io(e.to_string()))?;
        line.push(b'\n');
        if line.len() > self.options.max_line {
            return Err(ProtocolError::LineTooLong {
                limit: self.options.max_line,
            });
        }
        let w = self.writer.as_mut().ok_or(ProtocolError::ShutDown)?;
        w.write_all(&line)
            .and_then(|_| w.flush())
            .map_err(|e| ProtocolError::Io(e.to_string()))
    }

    fn recv(&mut self, waiting_for: &'static str) -> Result<(Incoming, Vec<u8>), ProtocolError> {
        let line = match self.lines.recv_timeout(self.options.timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => {
                return Err(ProtocolError::Timeout {
                    waiting_for,
                    after: self.options.timeout,
                })
            }
            Err(RecvTimeoutError::Disconnected) => return Err(ProtocolError::Closed),
        };
        let text = std::str::from_utf8(&line).map_err(|_| ProtocolError::Malformed {
            line: quote(&line),
            reason: "not UTF-8".into(),
        })?;
        let msg = serde_json::from_str(text.trim_end()).map_err(|e| ProtocolError::Malformed {
            line: quote(&line),
            reason: e.to_string(),
        })?;
        Ok((msg, line))
    }

    fn guard<T>(&mut self, res: Result<T, ProtocolError>) -> Result<T, ProtocolError> {
        if let Err(e) = &res {
            if e.desyncs() {
                self.state = State::Broken;
            }
        }
        res
    }

    /// Sends `hello` and waits for `hello_ack`.
    pub fn handshake(&mut self) -> Result<OracleDescriptor, ProtocolError> {
        match self.state {
            State::Ready => return Ok(self.descriptor.clone().expect("ready implies descriptor")),
            State::ShutDown => return Err(ProtocolError::ShutDown),
            State::Broken => return Err(ProtocolError::Broken),
            State::Fresh => {}
        }
        let res = self.handshake_inner();
        let res = self.guard(res);
        if res.is_err() && self.state == State::Fresh {
            self.state = State::Broken;
        }
        res
    }

    fn handshake_inner(&mut self) -> Result<OracleDescriptor, ProtocolError> {
        self.send(&json!({"type": "hello", "version": PROTOCOL_VERSION}))?;
        let (msg, line) = self.recv("hello_ack")?;
        match msg {
            Incoming::HelloAck {
                oracle,
                fp_len,
                aux,
                version,
            } => {
                if let Some(v) = version.filter(|&v| v != PROTOCOL_VERSION) {
                    return Err(ProtocolError::VersionMismatch {
                        ours: PROTOCOL_VERSION,
                        theirs: v,
                    });
                }
                if fp_len == 0 || fp_len % 4 != 0 {
                    return Err(ProtocolError::Malformed {
                        line: quote(&line),
                        reason: "fp_len must be a positive multiple of 4".into(),
                    });
                }
                let d = OracleDescriptor { oracle, fp_len, aux };
                self.descriptor = Some(d.clone());
                self.state = State::Ready;
                Ok(d)
            }
            Incoming::Error { message } => Err(ProtocolError::Server(message.unwrap_or_default())),
            Incoming::Result { .. } => Err(ProtocolError::Unexpected {
                expected: "hello_ack",
                line: quote(&line),
            }),
        }
    }

    /// Handshake, then insist on the run's fingerprint length.
    pub fn handshake_expect(&mut self, fp_len: usize) -> Result<OracleDescriptor, ProtocolError> {
        let d = self.handshake()?;
        if d.fp_len != fp_len {
            return Err(ProtocolError::FpLenMismatch {
                expected: fp_len,
                actual: d.fp_len,
            });
        }
        Ok(d)
    }

    /// Scores `fps` with one request. An empty batch sends nothing.
    pub fn eval_batch(&mut self, fps: &[Fingerprint]) -> Result<EvalReply, ProtocolError> {
        let fp_len = match (self.state, &self.descriptor) {
            (State::Ready, Some(d)) => d.fp_len,
            (State::Fresh, _) => return Err(ProtocolError::NotConnected),
            (State::ShutDown, _) => return Err(ProtocolError::ShutDown),
            _ => return Err(ProtocolError::Broken),
        };
        if fps.is_empty() {
            return Ok(EvalReply::default());
        }
        if let Some(fp) = fps.iter().find(|fp| fp.len() != fp_len) {
            return Err(ProtocolError::FingerprintLength {
                expected: fp_len,
                actual: fp.len(),
            });
        }
        let res = self.eval_inner(fps);
        self.guard(res)
    }

    fn eval_inner(&mut self, fps: &[Fingerprint]) -> Result<EvalReply, ProtocolError> {
        let id = self.next_id;
        self.next_id += 1;
        let hex: Vec<String> = fps
            .iter()
            .map(|fp| fp.to_hex().expect("length checked against a multiple of 4"))
            .collect();
        self.send(&json!({"type": "eval", "id": id, "fps": hex}))?;
        let (msg, line) = self.recv("result")?;
        match msg {
            Incoming::Result { id: got, scores, aux } => {
                if got != id {
                    return Err(ProtocolError::IdMismatch {
                        expected: id,
                        actual: got,
                    });
                }
                if scores.len() != fps.len() {
                    return Err(ProtocolError::Arity {
                        expected: fps.len(),
                        actual: scores.len(),
                    });
                }
                for (name, values) in &aux {
                    if values.len() != fps.len() {
                        return Err(ProtocolError::AuxArity {
                            name: name.clone(),
                            expected: fps.len(),
                            actual: values.len(),
                        });
                    }
                }
                if let Some((index, &score)) = scores
                    .iter()
                    .enumerate()
                    .find(|(_, s)| !(s.is_finite() && (0.0..=1.0).contains(*s)))
                {
                    return Err(ProtocolError::ScoreOutOfRange { index, score });
                }
                Ok(EvalReply { scores, aux })
            }
            Incoming::Error { message } => Err(ProtocolError::Server(message.unwrap_or_default())),
            Incoming::HelloAck { .. } => Err(ProtocolError::Unexpected {
                expected: "result",
                line: quote(&line),
            }),
        }
    }

    /// Best-effort goodbye. Idempotent; a no-op before the handshake.
    pub fn shutdown(&mut self) {
        match self.state {
            State::ShutDown => return,
            State::Fresh => {
                self.release();
                return;
            }
            State::Ready | State::Broken => {}
        }
        let _ = self.send(&json!({"type": "shutdown"}));
        self.state = State::ShutDown;
        self.release();
    }

    fn release(&mut self) {
        // Closing our end lets a well-behaved server see EOF.
        self.writer = None;
        if self.state == State::Fresh {
            self.state = State::ShutDown;
        }
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + SHUTDOWN_GRACE;
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
        }
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// An [`Oracle`] served by another process.
///
/// Aux scores that arrive with results are kept so reports can ask for them
/// later through [`Oracle::aux_score`].
pub struct ExternalOracle {
    client: Mutex<BridgeClient>,
    descriptor: OracleDescriptor,
    aux: Mutex<HashMap<Fingerprint, BTreeMap<String, f64>>>,
}

impl std::fmt::Debug for ExternalOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalOracle").field("descriptor", &self.descriptor).finish()
    }
}

impl ExternalOracle {
    /// Opens the transport and completes the handshake. With `fp_len` set, a
    /// server of any other length is rejected before any evaluation.
    pub fn connect(transport: &Transport, options: EndpointOptions, fp_len: Option<usize>) -> Result<Self, ProtocolError> {
        Self::from_client(BridgeClient::open(transport, options)?, fp_len)
    }

    pub fn from_client(mut client: BridgeClient, fp_len: Option<usize>) -> Result<Self, ProtocolError> {
        let descriptor = match fp_len {
            Some(l) => client.handshake_expect(l)?,
            None => client.handshake()?,
        };
        Ok(Self {
            client: Mutex::new(client),
            descriptor,
            aux: Mutex::new(HashMap::new()),
        })
    }

    pub fn descriptor(&self) -> &OracleDescriptor {
        &self.descriptor
    }

    pub fn shutdown(&self) {
        self.client.lock().unwrap_or_else(|e| e.into_inner()).shutdown();
    }
}

impl Oracle for ExternalOracle {
    fn name(&self) -> &str {
        &self.descriptor.oracle
    }

    fn fp_len(&self) -> usize {
        self.descriptor.fp_len
    }

    fn evaluate(&self, fp: &Fingerprint) -> Result<f64, OracleError> {
        Ok(self.evaluate_batch(std::slice::from_ref(fp))?[0])
    }

    fn evaluate_batch(&self, fps: &[Fingerprint]) -> Result<Vec<f64>, OracleError> {
        let reply = self.client.lock().unwrap_or_else(|e| e.into_inner()).eval_batch(fps)?;
        if !reply.aux.is_empty() {
            let mut cache = self.aux.lock().unwrap_or_else(|e| e.into_inner());
            for (i, fp) in fps.iter().enumerate() {
                let entry = cache.entry(fp.clone()).or_default();
                for (name, values) in &reply.aux {
                    entry.insert(name.clone(), values[i]);
                }
            }
        }
        Ok(reply.scores)
    }

    fn aux_names(&self) -> Vec<String> {
        self.descriptor.aux.clone()
    }

    fn aux_score(&self, name: &str, fp: &Fingerprint) -> Option<f64> {
        self.aux
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(fp)
            .and_then(|m| m.get(name).copied())
    }
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Request {
    Hello {
        #[serde(default)]
        version: Option<u64>,
    },
    Eval {
        id: u64,
        fps: Vec<String>,
    },
    Shutdown,
}

/// Serves `oracle` over the same protocol until `shutdown` or end of input.
///
/// Bad requests get an `error` reply and the loop continues. This is the
/// reference server behind `fpopt serve`.
pub fn serve<R: BufRead, W: Write>(oracle: &dyn Oracle, input: R, mut output: W) -> std::io::Result<()> {
    let mut reply = |v: serde_json::Value| -> std::io::Result<()> {
        serde_json::to_writer(&mut output, &v)?;
        output.write_all(b"\n")?;
        output.flush()
    };
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Request>(&line) {
            Ok(Request::Hello { version }) => {
                if version.is_some_and(|v| v != PROTOCOL_VERSION) {
                    reply(json!({"type": "error", "message": format!("unsupported version {version:?}")}))?;
                } else {
                    reply(json!({
                        "type": "hello_ack",
                        "oracle": oracle.name(),
                        "fp_len": oracle.fp_len(),
                        "aux": oracle.aux_names(),
                        "version": PROTOCOL_VERSION,
                    }))?;
                }
            }
            Ok(Request::Eval { id, fps }) => {
                let scored = fps
                    .iter()
                    .map(|h| {
                        Fingerprint::from_hex_with_len(h, oracle.fp_len()).map_err(|e| e.to_string())
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .and_then(|fps| {
                        let scores = oracle.evaluate_batch(&fps).map_err(|e| e.to_string())?;
                        let aux = oracle
                            .aux_names()
                            .into_iter()
                            .map(|name| {
                                let vals = fps.iter().map(|fp| oracle.aux_score(&name, fp)).collect::<Option<Vec<f64>>>();
                                vals.map(|v| (name.clone(), v)).ok_or(format!("aux scorer {name} failed"))
                            })
                            .collect::<Result<BTreeMap<_, _>, _>>()?;
                        Ok((scores, aux))
                    });
                match scored {
                    Ok((scores, aux)) if aux.is_empty() => reply(json!({"type": "result", "id": id, "scores": scores}))?,
                    Ok((scores, aux)) => reply(json!({"type": "result", "id": id, "scores": scores, "aux": aux}))?,
                    Err(message) => reply(json!({"type": "error", "id": id, "message": message}))?,
                }
            }
            Ok(Request::Shutdown) => return Ok(()),
            Err(e) => reply(json!({"type": "error", "message": format!("bad request: {e}")}))?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::OneMax;
    use std::io::{BufReader, Write};

    fn opts(ms: u64) -> EndpointOptions {
        EndpointOptions {
            timeout: Duration::from_millis(ms),
            max_line: 1 << 16,
        }
    }

    /// Client connected to a scripted server: for each request line the
    /// script returns the raw reply (without newline), or `None` to stay silent.
    fn scripted<F>(mut script: F) -> BridgeClient
    where
        F: FnMut(&str) -> Option<String> + Send + 'static,
    {
        let (a, b) = UnixStream::pair().unwrap();
        thread::spawn(move || {
            let mut out = b.try_clone().unwrap();
            for line in BufReader::new(b).lines() {
                let Ok(line) = line else { return };
                if let Some(r) = script(&line) {
                    if out.write_all(format!("{r}\n").as_bytes()).is_err() {
                        return;
                    }
                }
            }
        });
        let r = a.try_clone().unwrap();
        BridgeClient::from_streams(r, a, opts(2000))
    }

    fn served(oracle: OneMax) -> BridgeClient {
        let (a, b) = UnixStream::pair().unwrap();
        thread::spawn(move || {
            let out = b.try_clone().unwrap();
            serve(&oracle, BufReader::new(b), out).unwrap();
        });
        let r = a.try_clone().unwrap();
        BridgeClient::from_streams(r, a, opts(5000))
    }

    const ACK: &str = r#"{"type":"hello_ack","oracle":"t","fp_len":8,"aux":[]}"#;

    #[test]
    fn handshake_reports_descriptor() {
        let mut c = served(OneMax::new(4096));
        let d = c.handshake().unwrap();
        assert_eq!(d.fp_len, 4096);
        assert_eq!(d.oracle, "onemax");
        assert!(matches!(c.handshake_expect(64), Err(ProtocolError::FpLenMismatch { expected: 64, actual: 4096 })));
    }

    #[test]
    fn batch_scores_in_order_and_empty_batch_is_silent() {
        let mut c = served(OneMax::new(8));
        c.handshake().unwrap();
        let fps: Vec<_> = ["00000000", "11110000", "11111111"]
            .iter()
            .map(|s| Fingerprint::from_bit_str(s).unwrap())
            .collect();
        assert_eq!(c.eval_batch(&fps).unwrap().scores, vec![0.0, 0.5, 1.0]);
        assert_eq!(c.eval_batch(&[]).unwrap(), EvalReply::default());
        assert_eq!(c.next_id, 2);
    }

    #[test]
    fn garbage_is_quoted() {
        let mut c = scripted(|_| Some("not json \u{1}at all".into()));
        let err = c.handshake().unwrap_err();
        assert!(matches!(err, ProtocolError::Malformed { .. }));
        assert!(err.to_string().contains("not json"), "{err}");
        assert!(matches!(c.handshake(), Err(ProtocolError::Broken)));
    }

    #[test]
    fn version_mismatch() {
        let mut c = scripted(|_| Some(r#"{"type":"hello_ack","oracle":"t","fp_len":8,"version":2}"#.into()));
        assert!(matches!(c.handshake(), Err(ProtocolError::VersionMismatch { theirs: 2, .. })));
    }

    #[test]
    fn timeout() {
        let (a, _b) = UnixStream::pair().unwrap();
        let r = a.try_clone().unwrap();
        let mut c = BridgeClient::from_streams(r, a, opts(50));
        assert!(matches!(c.handshake(), Err(ProtocolError::Timeout { .. })));
    }

    fn reply_to_eval(body: &'static str) -> BridgeClient {
        let mut c = scripted(move |line| {
            if line.contains("hello") {
                Some(ACK.into())
            } else {
                Some(body.into())
            }
        });
        c.handshake().unwrap();
        c
    }

    fn three() -> Vec<Fingerprint> {
        (0..3).map(|i| Fingerprint::from_bits((0..8).map(|b| b == i)).unwrap()).collect()
    }

    #[test]
    fn result_validation() {
        let mut c = reply_to_eval(r#"{"type":"result","id":1,"scores":[0.1,1.2,0.3]}"#);
        assert!(matches!(c.eval_batch(&three()), Err(ProtocolError::ScoreOutOfRange { index: 1, .. })));

        let mut c = reply_to_eval(r#"{"type":"result","id":1,"scores":[0.1,0.2]}"#);
        assert!(matches!(c.eval_batch(&three()), Err(ProtocolError::Arity { expected: 3, actual: 2 })));

        let mut c = reply_to_eval(r#"{"type":"result","id":7,"scores":[0.1,0.2,0.3]}"#);
        assert!(matches!(c.eval_batch(&three()), Err(ProtocolError::IdMismatch { expected: 1, actual: 7 })));

        let mut c = reply_to_eval(r#"{"type":"error","message":"model not loaded"}"#);
        let err = c.eval_batch(&three()).unwrap_err();
        assert!(err.to_string().contains("model not loaded"));

        let mut c = reply_to_eval(r#"{"type":"result","id":1,"scores":[0,0,0],"aux":{"sa":[0.5]}}"#);
        assert!(matches!(c.eval_batch(&three()), Err(ProtocolError::AuxArity { .. })));
    }

    #[test]
    fn wrong_length_fingerprint_is_rejected_locally() {
        let mut c = reply_to_eval(r#"{"type":"result","id":1,"scores":[0.5]}"#);
        let fp = Fingerprint::zeros(12).unwrap();
        assert!(matches!(c.eval_batch(&[fp]), Err(ProtocolError::FingerprintLength { .. })));
    }

    #[test]
    fn shutdown_semantics() {
        let mut c = served(OneMax::new(8));
        assert!(matches!(c.eval_batch(&three()), Err(ProtocolError::NotConnected)));
        c.handshake().unwrap();
        c.shutdown();
        c.shutdown();
        assert!(matches!(c.eval_batch(&three()), Err(ProtocolError::ShutDown)));

        let mut fresh = served(OneMax::new(8));
        fresh.shutdown();
        fresh.shutdown();
    }

    #[test]
    fn overlong_line_is_a_clean_error() {
        let long = format!("{{\"type\":\"hello_ack\",\"oracle\":\"{}\"}}", "x".repeat(1 << 17));
        let mut c = scripted(move |_| Some(long.clone()));
        assert!(matches!(c.handshake(), Err(ProtocolError::LineTooLong { .. })));
    }

    #[test]
    fn external_oracle_caches_aux() {
        let c = scripted(|line| {
            if line.contains("hello") {
                Some(r#"{"type":"hello_ack","oracle":"t","fp_len":8,"aux":["sa"]}"#.into())
            } else {
                Some(r#"{"type":"result","id":1,"scores":[0.25],"aux":{"sa":[0.5]}}"#.into())
            }
        });
        let o = ExternalOracle::from_client(c, Some(8)).unwrap();
        let fp = Fingerprint::zeros(8).unwrap();
        assert_eq!(o.evaluate(&fp).unwrap(), 0.25);
        assert_eq!(o.aux_names(), vec!["sa".to_string()]);
        assert_eq!(o.aux_score("sa", &fp), Some(0.5));
        assert_eq!(o.aux_score("sa", &Fingerprint::ones(8).unwrap()), None);
    }

    #[test]
    fn serve_reports_bad_requests_and_keeps_going() {
        let input = b"{\"type\":\"eval\",\"id\":3,\"fps\":[\"zz\"]}\nnonsense\n{\"type\":\"hello\",\"version\":1}\n{\"type\":\"shutdown\"}\n{\"type\":\"hello\"}\n";
        let mut out = Vec::new();
        serve(&OneMax::new(8), &input[..], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("\"error\"") && lines[0].contains("\"id\":3"));
        assert!(lines[1].contains("\"error\""));
        assert!(lines[2].contains("hello_ack"));
    }
}
