//! Detector and blur-classifier backends.
//!
//! A backend sees one frame at a time. The synthetic detector additionally
//! reads the frame's ground truth; external backends ignore it.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::eval::FrameAnnotation;
use crate::geometry::ScoredBox;
use crate::media::{BlurVerdict, Frame, MediaError};

pub mod external;
pub mod protocol;
pub mod rng;
pub mod server;
pub mod synthetic;

pub use external::{Endpoint, ExternalBlurClassifier, ExternalDetector};
pub use protocol::ProtocolError;
pub use synthetic::{SyntheticDetector, SyntheticDetectorConfig};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("{backend} failed on frame {frame_index}: {source}")]
    Frame {
        backend: String,
        frame_index: u64,
        #[source]
        source: Box<BackendError>,
    },
}

impl BackendError {
    pub fn on_frame(self, backend: &str, frame_index: u64) -> Self {
        match self {
            e @ BackendError::Frame { .. } => e,
            e => BackendError::Frame {
                backend: backend.to_owned(),
                frame_index,
                source: Box::new(e),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendDescriptor {
    pub name: String,
    /// Cost charged to the pipeline clock per call, on top of measured time.
    pub simulated_latency_ms: f64,
}

pub trait DetectorBackend: Send {
    fn descriptor(&self) -> BackendDescriptor;

    fn detect(&mut self, frame: &Frame, truth: Option<&FrameAnnotation>) -> Result<Vec<ScoredBox>, BackendError>;
}

pub trait BlurClassifier: Send {
    fn descriptor(&self) -> BackendDescriptor;

    fn classify(&mut self, frame: &Frame) -> Result<BlurVerdict, BackendError>;
}

impl<T: DetectorBackend + ?Sized> DetectorBackend for Box<T> {
    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }

    fn detect(&mut self, frame: &Frame, truth: Option<&FrameAnnotation>) -> Result<Vec<ScoredBox>, BackendError> {
        (**self).detect(frame, truth)
    }
}

impl<T: BlurClassifier + ?Sized> BlurClassifier for Box<T> {
    fn descriptor(&self) -> BackendDescriptor {
        (**self).descriptor()
    }

    fn classify(&mut self, frame: &Frame) -> Result<BlurVerdict, BackendError> {
        (**self).classify(frame)
    }
}

/// Variance-of-Laplacian gate.
#[derive(Debug, Clone)]
pub struct HeuristicBlurGate {
    pub threshold: f64,
    pub simulated_latency_ms: f64,
}

impl HeuristicBlurGate {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            simulated_latency_ms: 0.0,
        }
    }
}

impl BlurClassifier for HeuristicBlurGate {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: "heuristic-blur".into(),
            simulated_latency_ms: self.simulated_latency_ms,
        }
    }

    fn classify(&mut self, frame: &Frame) -> Result<BlurVerdict, BackendError> {
        Ok(crate::media::heuristic_blur_gate(frame, self.threshold)?)
    }
}

/// Shared call counter handed out by [`Counted`].
#[derive(Debug, Clone, Default)]
pub struct InvocationCounter(Arc<AtomicU64>);

impl InvocationCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

/// Wraps a backend and counts its invocations.
pub struct Counted<B> {
    inner: B,
    counter: InvocationCounter,
}

impl<B> Counted<B> {
    pub fn new(inner: B) -> (Self, InvocationCounter) {
        let counter = InvocationCounter::default();
        (
            Self {
                inner,
                counter: counter.clone(),
            },
            counter,
        )
    }
}

impl<B: DetectorBackend> DetectorBackend for Counted<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }

    fn detect(&mut self, frame: &Frame, truth: Option<&FrameAnnotation>) -> Result<Vec<ScoredBox>, BackendError> {
        self.counter.bump();
        self.inner.detect(frame, truth)
    }
}

impl<B: BlurClassifier> BlurClassifier for Counted<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }

    fn classify(&mut self, frame: &Frame) -> Result<BlurVerdict, BackendError> {
        self.counter.bump();
        self.inner.classify(frame)
    }
}
