//! Server side of the framed protocol, used to host an in-process backend
//! behind a byte stream (reference server, tests).

use std::collections::HashMap;
use std::io::{Read, Write};

use log::warn;

use super::protocol::{self, ProtocolError, Request};
use super::{BlurClassifier, DetectorBackend};
use crate::eval::FrameAnnotation;

/// Answers requests until the peer closes the stream. Backend failures are
/// reported to the peer as `error` messages; transport and framing errors
/// end the session.
pub fn serve<R: Read, W: Write>(
    mut reader: R,
    mut writer: W,
    fps: f64,
    detector: &mut dyn DetectorBackend,
    gate: &mut dyn BlurClassifier,
    truth: &HashMap<u64, FrameAnnotation>,
) -> Result<u64, ProtocolError> {
    let mut served = 0;
    while let Some(body) = protocol::read_message(&mut reader)? {
        let reply = match protocol::decode_request(&body, fps) {
            Ok(Request::Detect(frame)) => match detector.detect(&frame, truth.get(&frame.frame_index)) {
                Ok(boxes) => protocol::encode_response(frame.frame_index, &boxes),
                Err(e) => protocol::encode_error(&e.to_string()),
            },
            Ok(Request::Blur(frame)) => match gate.classify(&frame) {
                Ok(v) => protocol::encode_blur_response(frame.frame_index, v),
                Err(e) => protocol::encode_error(&e.to_string()),
            },
            Err(e) => {
                warn!("rejecting request: {e}");
                protocol::encode_error(&e.to_string())
            }
        };
        protocol::write_message(&mut writer, &reply)?;
        served += 1;
    }
    Ok(served)
}
