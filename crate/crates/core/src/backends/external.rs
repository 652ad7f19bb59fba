//! Backends living in another process, reached over a child's standard
//! streams or a TCP socket. One request is in flight per connection.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::protocol::{self, ProtocolError};
use super::{BackendDescriptor, BackendError, BlurClassifier, DetectorBackend};
use crate::eval::FrameAnnotation;
use crate::geometry::{ScoredBox, Source};
use crate::media::{BlurVerdict, Frame};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    /// Spawn `argv[0]` with the remaining arguments; talk over stdin/stdout.
    Command(Vec<String>),
    /// Connect to `host:port`.
    Tcp(String),
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Command(argv) => write!(f, "cmd:{}", argv.join(" ")),
            Endpoint::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

struct Connection {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Lazily connected request/response channel. Any error that leaves the
/// stream in an unknown state drops the connection; the next call
/// reconnects (or respawns the child).
pub struct ProtocolClient {
    endpoint: Endpoint,
    conn: Option<Connection>,
}

impl ProtocolClient {
    pub fn new(endpoint: Endpoint) -> Result<Self, BackendError> {
        if let Endpoint::Command(argv) = &endpoint {
            if argv.is_empty() {
                return Err(BackendError::Config("external command is empty".into()));
            }
        }
        Ok(Self { endpoint, conn: None })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn open(&self) -> Result<Connection, ProtocolError> {
        debug!("connecting to {}", self.endpoint);
        match &self.endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                Ok(Connection {
                    reader: Box::new(BufReader::new(stream.try_clone()?)),
                    writer: Box::new(BufWriter::new(stream)),
                    child: None,
                })
            }
            Endpoint::Command(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Connection {
                    reader: Box::new(BufReader::new(stdout)),
                    writer: Box::new(BufWriter::new(stdin)),
                    child: Some(child),
                })
            }
        }
    }

    /// Drops the current connection, if any.
    pub fn reset(&mut self) {
        if self.conn.take().is_some() {
            warn!("resetting connection to {}", self.endpoint);
        }
    }

    /// Sends one request body and returns the response body.
    pub fn round_trip(&mut self, body: &[u8]) -> Result<Vec<u8>, ProtocolError> {
        if self.conn.is_none() {
            self.conn = Some(self.open()?);
        }
        let conn = self.conn.as_mut().expect("connected");
        let result = protocol::write_message(&mut conn.writer, body)
            .and_then(|()| protocol::read_message(&mut conn.reader))
            .and_then(|r| r.ok_or(ProtocolError::Closed));
        if result.is_err() {
            self.reset();
        }
        result
    }

    fn call<T>(
        &mut self,
        body: &[u8],
        decode: impl FnOnce(&[u8]) -> Result<T, ProtocolError>,
    ) -> Result<T, ProtocolError> {
        let response = self.round_trip(body)?;
        decode(&response).inspect_err(|e| {
            if e.requires_reset() {
                self.reset();
            }
        })
    }
}

pub struct ExternalDetector {
    client: ProtocolClient,
    source: Source,
}

impl ExternalDetector {
    pub fn new(endpoint: Endpoint, source: Source) -> Result<Self, BackendError> {
        Ok(Self {
            client: ProtocolClient::new(endpoint)?,
            source,
        })
    }
}

impl DetectorBackend for ExternalDetector {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: format!("external({})", self.client.endpoint()),
            simulated_latency_ms: 0.0,
        }
    }

    fn detect(&mut self, frame: &Frame, _truth: Option<&FrameAnnotation>) -> Result<Vec<ScoredBox>, BackendError> {
        let (idx, w, h, source) = (frame.frame_index, frame.width, frame.height, self.source);
        Ok(self.client.call(&protocol::encode_request(frame), |b| {
            protocol::decode_response(b, idx, w, h, source)
        })?)
    }
}

pub struct ExternalBlurClassifier {
    client: ProtocolClient,
}

impl ExternalBlurClassifier {
    pub fn new(endpoint: Endpoint) -> Result<Self, BackendError> {
        Ok(Self {
            client: ProtocolClient::new(endpoint)?,
        })
    }
}

impl BlurClassifier for ExternalBlurClassifier {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: format!("external-blur({})", self.client.endpoint()),
            simulated_latency_ms: 0.0,
        }
    }

    fn classify(&mut self, frame: &Frame) -> Result<BlurVerdict, BackendError> {
        let idx = frame.frame_index;
        Ok(self.client.call(&protocol::encode_blur_request(frame), |b| {
            protocol::decode_blur_response(b, idx)
        })?)
    }
}
