//! Client for a prior running in a companion process, spoken to over its
//! standard input and output.

use std::io::{self, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::priors::protocol::{self, Opcode};
use crate::priors::schedule::AlphaSchedule;
use crate::priors::Prior;
use crate::tensor::{Shape, VideoTensor};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Clone, Debug)]
pub struct ExternalPriorConfig {
    /// Shell command line, run through `sh -c`.
    pub command: String,
    pub model_id: String,
    /// Per-call limit, handshake included.
    pub timeout: Duration,
    pub schedule: AlphaSchedule,
}

impl ExternalPriorConfig {
    pub fn new(command: impl Into<String>, model_id: impl Into<String>) -> Self {
        ExternalPriorConfig {
            command: command.into(),
            model_id: model_id.into(),
            timeout: DEFAULT_TIMEOUT,
            schedule: AlphaSchedule::default(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

/// Reads from chunks delivered by a background thread, honouring a deadline.
struct ChannelReader {
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
    deadline: Instant,
}

impl Read for ChannelReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos >= self.buf.len() {
            let wait = self.deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(wait) {
                Ok(chunk) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(io::Error::new(io::ErrorKind::TimedOut, "deadline passed"))
                }
                Err(RecvTimeoutError::Disconnected) => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Writes on a background thread so a stalled peer cannot block the caller.
struct ChannelWriter {
    tx: Sender<Vec<u8>>,
    done: Receiver<io::Result<()>>,
}

impl ChannelWriter {
    fn spawn(mut stdin: ChildStdin) -> Self {
        let (tx, rx) = mpsc::channel::<Vec<u8>>();
        let (done_tx, done) = mpsc::channel();
        thread::spawn(move || {
            for msg in rx {
                let r = stdin.write_all(&msg).and_then(|_| stdin.flush());
                let failed = r.is_err();
                if done_tx.send(r).is_err() || failed {
                    break;
                }
            }
        });
        ChannelWriter { tx, done }
    }

    fn send(&self, bytes: Vec<u8>, deadline: Instant) -> Result<()> {
        if self.tx.send(bytes).is_err() {
            return Err(Error::Protocol("prior process closed its input".into()));
        }
        match self.done.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
            Ok(Ok(())) => Ok(()),
            Ok(Err(e)) => Err(Error::Protocol(format!("writing to prior process: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(Duration::ZERO)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::Protocol("prior process closed its input".into()))
            }
        }
    }
}

struct Connection {
    child: Child,
    writer: ChannelWriter,
    reader: ChannelReader,
    broken: Option<String>,
}

impl Connection {
    fn fail(&mut self, e: &Error) {
        self.broken = Some(e.to_string());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A [`Prior`] whose consistency map lives in another process.
///
/// Calls are serialised; after a timeout or protocol violation the
/// connection is closed and every later call fails.
pub struct ExternalPrior {
    model_id: String,
    schedule: AlphaSchedule,
    latent: Option<Shape>,
    timeout: Duration,
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for ExternalPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalPrior")
            .field("model_id", &self.model_id)
            .field("latent", &self.latent)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ExternalPrior {
    pub fn connect(cfg: &ExternalPriorConfig) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&cfg.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Prior(format!("cannot start '{}': {e}", cfg.command)))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut chunk = vec![0u8; 1 << 16];
            loop {
                match stdout.read(&mut chunk) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        if tx.send(chunk[..n].to_vec()).is_err() {
                            break;
                        }
                    }
                }
            }
        });
        let mut conn = Connection {
            child,
            writer: ChannelWriter::spawn(stdin),
            reader: ChannelReader {
                rx,
                buf: Vec::new(),
                pos: 0,
                deadline: Instant::now(),
            },
            broken: None,
        };
        let deadline = Instant::now() + cfg.timeout;
        conn.reader.deadline = deadline;
        let mut hello = Vec::new();
        protocol::write_hello(&mut hello, &cfg.model_id)?;
        let latent = conn
            .writer
            .send(hello, deadline)
            .and_then(|_| protocol::read_hello_reply(&mut conn.reader));
        let latent = match latent {
            Ok(l) => l,
            Err(e) => {
                let e = with_timeout(e, cfg.timeout);
                conn.fail(&e);
                return Err(e);
            }
        };
        Ok(ExternalPrior {
            model_id: cfg.model_id.clone(),
            schedule: cfg.schedule.clone(),
            latent,
            timeout: cfg.timeout,
            conn: Mutex::new(conn),
        })
    }

    /// Latent shape announced in the handshake, `None` meaning "as input".
    pub fn declared_latent(&self) -> Option<Shape> {
        self.latent
    }

    fn call(&self, opcode: Opcode, z: &VideoTensor, t: usize) -> Result<VideoTensor> {
        self.schedule.check_timestep(t)?;
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(reason) = &conn.broken {
            return Err(Error::Prior(format!("connection closed earlier: {reason}")));
        }
        let deadline = Instant::now() + self.timeout;
        conn.reader.deadline = deadline;
        let bytes = protocol::encode_request(opcode, t as u32, z);
        let result = conn
            .writer
            .send(bytes, deadline)
            .and_then(|_| protocol::read_response(&mut conn.reader));
        match result {
            Ok(out) if out.shape() == z.shape() => Ok(out),
            Ok(out) => {
                let e = Error::Protocol(format!(
                    "response carries {} bytes for {}, request had {} bytes for {}",
                    out.len() * 4,
                    out.shape(),
                    z.len() * 4,
                    z.shape()
                ));
                conn.fail(&e);
                Err(e)
            }
            // the server answered with an error frame; the stream is still in sync
            Err(e @ Error::Prior(_)) => Err(e),
            Err(e) => {
                let e = with_timeout(e, self.timeout);
                conn.fail(&e);
                Err(e)
            }
        }
    }
}

fn with_timeout(e: Error, timeout: Duration) -> Error {
    match e {
        Error::Timeout(_) => Error::Timeout(timeout),
        other => other,
    }
}

impl Drop for ExternalPrior {
    fn drop(&mut self) {
        let conn = self.conn.get_mut().unwrap_or_else(|p| p.into_inner());
        if conn.broken.is_none() {
            let _ = conn.child.kill();
            let _ = conn.child.wait();
        }
    }
}

impl Prior for ExternalPrior {
    fn name(&self) -> String {
        format!("external:{}", self.model_id)
    }

    fn schedule(&self) -> &AlphaSchedule {
        &self.schedule
    }

    fn latent_shape(&self, pixel: Shape) -> Shape {
        self.latent.unwrap_or(pixel)
    }

    fn consistency(&self, z: &VideoTensor, t: usize) -> Result<VideoTensor> {
        self.call(Opcode::Consistency, z, t)
    }

    fn has_eps_predictor(&self) -> bool {
        true
    }

    fn eps_predict(&self, z: &VideoTensor, t: usize) -> Result<VideoTensor> {
        self.call(Opcode::EpsPredict, z, t)
    }
}
