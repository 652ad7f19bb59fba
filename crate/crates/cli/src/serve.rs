//! Reference external backend: a synthetic detector plus the heuristic blur
//! gate behind the framed protocol.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;

use log::{info, warn};
use scopeline::backends::server::serve;
use scopeline::backends::{HeuristicBlurGate, SyntheticDetector, SyntheticDetectorConfig};
use scopeline::eval::FrameAnnotation;
use scopeline::geometry::Source;

use crate::run::load_annotations;
use crate::{CliError, ServeArgs};

pub struct Backend {
    pub detector: SyntheticDetector,
    pub gate: HeuristicBlurGate,
    pub truth: HashMap<u64, FrameAnnotation>,
    pub fps: f64,
}

pub fn build_backend(args: &ServeArgs) -> Result<Backend, CliError> {
    let mut cfg = match &args.detector_config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<SyntheticDetectorConfig>(&text)
                .map_err(|e| CliError::Config(format!("invalid detector config {}: {e}", path.display())))?
        }
        None => SyntheticDetectorConfig::default(),
    };
    if args.noise_free {
        cfg = SyntheticDetectorConfig {
            simulated_latency_ms: cfg.simulated_latency_ms,
            ..SyntheticDetectorConfig::noise_free(cfg.seed)
        };
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let detector = SyntheticDetector::new(cfg, Source::DetectorA).map_err(|e| CliError::Config(e.to_string()))?;

    let truth = match &args.annotations {
        None => HashMap::new(),
        Some(path) => {
            let mut all = load_annotations(path)?;
            let video = match (&args.video_id, all.len()) {
                (Some(v), _) => v.clone(),
                (None, 0) => String::new(),
                (None, 1) => all.keys().next().expect("one video").clone(),
                (None, n) => {
                    return Err(CliError::Config(format!(
                        "{} covers {n} videos; pick one with --video-id",
                        path.display()
                    )))
                }
            };
            all.remove(&video).unwrap_or_default().into_iter().collect()
        }
    };
    if !(args.fps > 0.0 && args.fps.is_finite()) {
        return Err(CliError::Config(format!("--fps must be positive, got {}", args.fps)));
    }
    Ok(Backend {
        detector,
        gate: HeuristicBlurGate::new(args.blur_threshold),
        truth,
        fps: args.fps,
    })
}

/// Serves stdin/stdout until EOF, or accepts TCP connections one at a time
/// forever. In TCP mode the bound address is printed on stdout first.
pub fn cmd_serve(args: &ServeArgs) -> Result<(), CliError> {
    let mut backend = build_backend(args)?;
    let Backend {
        detector,
        gate,
        truth,
        fps,
    } = &mut backend;
    match &args.listen {
        None => {
            let stdin = io::stdin().lock();
            let stdout = io::stdout().lock();
            let served = serve(
                BufReader::new(stdin),
                BufWriter::new(stdout),
                *fps,
                detector,
                gate,
                truth,
            )
            .map_err(|e| CliError::Data(format!("protocol error: {e}")))?;
            info!("served {served} requests");
            Ok(())
        }
        Some(addr) => {
            let listener =
                TcpListener::bind(addr).map_err(|e| CliError::Config(format!("cannot listen on {addr}: {e}")))?;
            let local = listener
                .local_addr()
                .map_err(|e| CliError::Config(format!("cannot listen on {addr}: {e}")))?;
            let mut stdout = io::stdout();
            let _ = writeln!(stdout, "{local}");
            let _ = stdout.flush();
            info!("listening on {local}");
            for stream in listener.incoming() {
                let stream = match stream {
                    Ok(s) => s,
                    Err(e) => {
                        warn!("accept failed: {e}");
                        continue;
                    }
                };
                let _ = stream.set_nodelay(true);
                let reader = match stream.try_clone() {
                    Ok(r) => BufReader::new(r),
                    Err(e) => {
                        warn!("cannot clone socket: {e}");
                        continue;
                    }
                };
                match serve(reader, BufWriter::new(stream), *fps, detector, gate, truth) {
                    Ok(n) => info!("connection closed after {n} requests"),
                    Err(e) => warn!("connection dropped: {e}"),
                }
            }
            Ok(())
        }
    }
}
