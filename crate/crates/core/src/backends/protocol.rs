//! Length-prefixed JSON messages exchanged with external backends.
//!
//! Each message is a 4-byte big-endian body length followed by a UTF-8 JSON
//! object carrying a `"type"` field:
//!
//! | type           | direction | fields                                          |
//! |----------------|-----------|-------------------------------------------------|
//! | `detect`       | request   | `frame_index`, `width`, `height`, `pixels_b64`  |
//! | `blur`         | request   | same as `detect`                                |
//! | `detections`   | response  | `frame_index`, `boxes: [{x, y, w, h, score}]`   |
//! | `blur_verdict` | response  | `blurry`, optional `frame_index` echo           |
//! | `error`        | response  | `message`                                       |
//!
//! Pixels are RGB8 row-major, base64 (standard alphabet, padded).

use std::io::{self, Read, Write};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{BoundingBox, Label, ScoredBox, Source};
use crate::media::{BlurVerdict, Frame};

/// Upper bound on a single message body.
pub const MAX_MESSAGE_BYTES: u32 = 256 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("framing: {0}")]
    Framing(String),
    #[error("malformed JSON body: {0}")]
    Json(String),
    #[error("message is missing field `{0}`")]
    MissingField(&'static str),
    #[error("expected message type `{expected}`, got `{got}`")]
    UnexpectedType { expected: &'static str, got: String },
    #[error("desynchronised: expected frame {expected}, peer answered for frame {got}; connection must be reset")]
    Desync { expected: u64, got: u64 },
    #[error("invalid box at index {index}: {reason}")]
    InvalidBox { index: usize, reason: String },
    #[error("peer reported error: {0}")]
    Remote(String),
    #[error("peer closed the connection")]
    Closed,
}

impl ProtocolError {
    /// Errors after which the byte stream can no longer be trusted.
    pub fn requires_reset(&self) -> bool {
        !matches!(self, ProtocolError::InvalidBox { .. } | ProtocolError::Remote(_))
    }
}

pub fn write_message<W: Write + ?Sized>(w: &mut W, body: &[u8]) -> Result<(), ProtocolError> {
    let len = u32::try_from(body.len())
        .ok()
        .filter(|&n| n <= MAX_MESSAGE_BYTES)
        .ok_or_else(|| ProtocolError::Framing(format!("body of {} bytes exceeds limit", body.len())))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(body)?;
    w.flush()?;
    Ok(())
}

/// Reads one message body. `Ok(None)` on a clean end of stream at a message
/// boundary.
pub fn read_message<R: Read + ?Sized>(r: &mut R) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(ProtocolError::Framing(format!(
                    "stream ended inside length prefix ({got} of 4 bytes)"
                )))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(prefix);
    if len > MAX_MESSAGE_BYTES {
        return Err(ProtocolError::Framing(format!("declared length {len} exceeds limit")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Framing(format!("stream ended inside {len}-byte body")),
        _ => e.into(),
    })?;
    Ok(Some(body))
}

/// Parsed body: a JSON object with a string `type`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolMessage {
    pub kind: String,
    pub body: Value,
}

impl ProtocolMessage {
    pub fn parse(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let body: Value = serde_json::from_slice(bytes).map_err(|e| ProtocolError::Json(e.to_string()))?;
        let kind = body
            .get("type")
            .and_then(Value::as_str)
            .ok_or(ProtocolError::MissingField("type"))?
            .to_owned();
        Ok(Self { kind, body })
    }

    fn expect(self, expected: &'static str) -> Result<Value, ProtocolError> {
        if self.kind == "error" {
            let msg = self
                .body
                .get("message")
                .and_then(Value::as_str)
                .unwrap_or("unspecified");
            return Err(ProtocolError::Remote(msg.to_owned()));
        }
        if self.kind != expected {
            return Err(ProtocolError::UnexpectedType {
                expected,
                got: self.kind,
            });
        }
        Ok(self.body)
    }
}

#[derive(Serialize)]
struct FrameRequest<'a> {
    #[serde(rename = "type")]
    kind: &'a str,
    frame_index: u64,
    width: u32,
    height: u32,
    pixels_b64: String,
}

fn encode_frame_request(kind: &str, frame: &Frame) -> Vec<u8> {
    serde_json::to_vec(&FrameRequest {
        kind,
        frame_index: frame.frame_index,
        width: frame.width,
        height: frame.height,
        pixels_b64: BASE64.encode(&frame.pixels),
    })
    .expect("request serialises")
}

pub fn encode_request(frame: &Frame) -> Vec<u8> {
    encode_frame_request("detect", frame)
}

pub fn encode_blur_request(frame: &Frame) -> Vec<u8> {
    encode_frame_request("blur", frame)
}

/// A request as seen by a backend server.
#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Detect(Frame),
    Blur(Frame),
}

pub fn decode_request(bytes: &[u8], fps: f64) -> Result<Request, ProtocolError> {
    let msg = ProtocolMessage::parse(bytes)?;
    let detect = match msg.kind.as_str() {
        "detect" => true,
        "blur" => false,
        other => {
            return Err(ProtocolError::UnexpectedType {
                expected: "detect|blur",
                got: other.to_owned(),
            })
        }
    };
    let body = msg.body;
    let uint = |field: &'static str| {
        body.get(field)
            .and_then(Value::as_u64)
            .ok_or(ProtocolError::MissingField(field))
    };
    let frame_index = uint("frame_index")?;
    let width = u32::try_from(uint("width")?).map_err(|_| ProtocolError::Json("width out of range".into()))?;
    let height = u32::try_from(uint("height")?).map_err(|_| ProtocolError::Json("height out of range".into()))?;
    let b64 = body
        .get("pixels_b64")
        .and_then(Value::as_str)
        .ok_or(ProtocolError::MissingField("pixels_b64"))?;
    let pixels = BASE64
        .decode(b64)
        .map_err(|e| ProtocolError::Json(format!("pixels_b64: {e}")))?;
    let frame = Frame::new(frame_index, fps, width, height, pixels).map_err(|e| ProtocolError::Json(e.to_string()))?;
    Ok(if detect {
        Request::Detect(frame)
    } else {
        Request::Blur(frame)
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct WireBox {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
}

#[derive(Serialize)]
struct DetectionsOut {
    #[serde(rename = "type")]
    kind: &'static str,
    frame_index: u64,
    boxes: Vec<WireBox>,
}

pub fn encode_response(frame_index: u64, boxes: &[ScoredBox]) -> Vec<u8> {
    let boxes = boxes
        .iter()
        .map(|b| WireBox {
            x: b.bbox.x(),
            y: b.bbox.y(),
            w: b.bbox.w(),
            h: b.bbox.h(),
            score: b.score,
            label: Some(b.label),
        })
        .collect();
    serde_json::to_vec(&DetectionsOut {
        kind: "detections",
        frame_index,
        boxes,
    })
    .expect("response serialises")
}

/// Validates a `detections` response for `expected_frame_index` on a
/// `width`×`height` frame; boxes are tagged with `source`.
pub fn decode_response(
    bytes: &[u8],
    expected_frame_index: u64,
    width: u32,
    height: u32,
    source: Source,
) -> Result<Vec<ScoredBox>, ProtocolError> {
    let body = ProtocolMessage::parse(bytes)?.expect("detections")?;
    let got = body
        .get("frame_index")
        .and_then(Value::as_u64)
        .ok_or(ProtocolError::MissingField("frame_index"))?;
    if got != expected_frame_index {
        return Err(ProtocolError::Desync {
            expected: expected_frame_index,
            got,
        });
    }
    let boxes = body
        .get("boxes")
        .and_then(Value::as_array)
        .ok_or(ProtocolError::MissingField("boxes"))?;
    boxes
        .iter()
        .enumerate()
        .map(|(index, v)| {
            let invalid = |reason: String| ProtocolError::InvalidBox { index, reason };
            let wire: WireBox = serde_json::from_value(v.clone()).map_err(|e| invalid(e.to_string()))?;
            let bbox = BoundingBox::within(wire.x, wire.y, wire.w, wire.h, width, height)
                .map_err(|e| invalid(e.to_string()))?;
            ScoredBox::new(bbox, wire.score, source, wire.label.unwrap_or(Label::Polyp))
                .map_err(|e| invalid(e.to_string()))
        })
        .collect()
}

#[derive(Serialize)]
struct BlurVerdictOut {
    #[serde(rename = "type")]
    kind: &'static str,
    frame_index: u64,
    blurry: bool,
}

pub fn encode_blur_response(frame_index: u64, verdict: BlurVerdict) -> Vec<u8> {
    serde_json::to_vec(&BlurVerdictOut {
        kind: "blur_verdict",
        frame_index,
        blurry: verdict.is_blurry(),
    })
    .expect("response serialises")
}

/// Validates a `blur_verdict` response; a `frame_index` echo, when present,
/// must match.
pub fn decode_blur_response(bytes: &[u8], expected_frame_index: u64) -> Result<BlurVerdict, ProtocolError> {
    let body = ProtocolMessage::parse(bytes)?.expect("blur_verdict")?;
    if let Some(got) = body.get("frame_index") {
        let got = got
            .as_u64()
            .ok_or(ProtocolError::Json("frame_index is not an integer".into()))?;
        if got != expected_frame_index {
            return Err(ProtocolError::Desync {
                expected: expected_frame_index,
                got,
            });
        }
    }
    match body.get("blurry").and_then(Value::as_bool) {
        Some(true) => Ok(BlurVerdict::Blurry),
        Some(false) => Ok(BlurVerdict::Clear),
        None => Err(ProtocolError::MissingField("blurry")),
    }
}

pub fn encode_error(message: &str) -> Vec<u8> {
    serde_json::to_vec(&serde_json::json!({ "type": "error", "message": message })).expect("error serialises")
}
