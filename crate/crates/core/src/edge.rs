//! Edge side of the deployment: runs the discriminator on small-model
//! traces and uploads difficult images to the cloud server.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::detect::{finalize, FinalDetection};
use crate::discriminator::{discriminate, CaseLabel, ThresholdSet};
use crate::eval::{evaluate, ApMode, EvalError, MetricsReport};
use crate::ingest::Dataset;
use crate::sim::{BytesPerImage, Route, RouteDecision, SimError};
use crate::wire::{read_frame, write_frame, DetectRequest, Message, WireError};
use crate::REPORT_CUTOFF;

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("no small-model trace for image {0:?}")]
    MissingSmallTrace(String),
    #[error("cloud answered for {got:?} while {expected:?} was pending")]
    IdMismatch { expected: String, got: String },
    #[error("cloud rejected {image:?}: {reason}")]
    Remote { image: String, reason: String },
    #[error("cloud unreachable at {addr} after {attempts} attempts: {source}")]
    Unreachable { addr: String, attempts: u32, source: WireError },
    #[error("no cloud address given and offline mode is off")]
    NoCloud,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone)]
pub struct EdgeConfig {
    pub thresholds: ThresholdSet,
    /// `host:port` of the cloud server.
    pub connect: Option<String>,
    /// Upload size stand-in sent with each request.
    pub padding: BytesPerImage,
    /// Never contact the cloud; difficult images keep their edge result.
    pub offline: bool,
    pub mode: ApMode,
    pub max_attempts: u32,
    pub retry_delay: Duration,
}

impl EdgeConfig {
    pub fn new(thresholds: ThresholdSet, connect: Option<String>) -> Self {
        Self {
            thresholds,
            connect,
            padding: BytesPerImage::Fixed(0),
            offline: false,
            mode: ApMode::default(),
            max_attempts: 3,
            retry_delay: Duration::from_millis(100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeReport {
    pub metrics: MetricsReport,
    /// Route actually taken by each image.
    pub routes: Vec<RouteDecision>,
    pub frames_sent: u64,
    pub wire_bytes_sent: u64,
    pub wire_bytes_received: u64,
    pub upload_padding_bytes: u64,
    /// Difficult images answered at the edge because the cloud was not used.
    pub fallback_count: u64,
    /// Not serialized, so reports compare byte for byte across runs.
    #[serde(skip)]
    pub wall_time_s: f64,
}

struct Link {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Link {
    fn open(addr: &str) -> Result<Self, WireError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    fn round_trip(&mut self, msg: &Message) -> Result<(usize, Message, usize), WireError> {
        let sent = write_frame(&mut self.writer, &msg.to_frame())?;
        let frame = read_frame(&mut self.reader)?
            .ok_or_else(|| WireError::Io(std::io::ErrorKind::UnexpectedEof.into()))?;
        let received = frame.wire_len();
        Ok((sent, Message::from_frame(&frame)?, received))
    }
}

#[derive(Default)]
struct Counters {
    frames_sent: u64,
    wire_bytes_sent: u64,
    wire_bytes_received: u64,
    upload_padding_bytes: u64,
}

/// Asks the cloud for one image, reconnecting on transport failures.
fn fetch(
    link: &mut Option<Link>,
    addr: &str,
    req: DetectRequest,
    cfg: &EdgeConfig,
    counters: &mut Counters,
) -> Result<Vec<FinalDetection>, EdgeError> {
    let image_id = req.image_id.clone();
    let padding = req.padding_bytes;
    let msg = Message::DetectRequest(req);
    let attempts = cfg.max_attempts.max(1);
    let mut last = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(cfg.retry_delay);
        }
        if link.is_none() {
            match Link::open(addr) {
                Ok(l) => *link = Some(l),
                Err(e) => {
                    last = Some(e);
                    continue;
                }
            }
        }
        let l = link.as_mut().expect("link is open");
        match l.round_trip(&msg) {
            Ok((sent, reply, received)) => {
                counters.frames_sent += 1;
                counters.wire_bytes_sent += sent as u64;
                counters.wire_bytes_received += received as u64;
                counters.upload_padding_bytes += padding;
                return match reply {
                    Message::DetectResponse(r) if r.image_id == image_id => Ok(r.detections),
                    Message::DetectResponse(r) => Err(EdgeError::IdMismatch { expected: image_id, got: r.image_id }),
                    Message::Error(e) => Err(EdgeError::Remote { image: image_id, reason: e.reason }),
                    other => Err(EdgeError::Remote { image: image_id, reason: format!("unexpected reply {other:?}") }),
                };
            }
            Err(e) => {
                *link = None;
                last = Some(e);
            }
        }
    }
    Err(EdgeError::Unreachable {
        addr: addr.to_string(),
        attempts,
        source: last.expect("at least one attempt"),
    })
}

/// Processes every image of the dataset in id order. With the cloud
/// reachable, the metrics equal the in-process simulation of semantic
/// routing.
pub fn run_edge(dataset: &Dataset, cfg: &EdgeConfig) -> Result<EdgeReport, EdgeError> {
    let start = Instant::now();
    let addr = match (&cfg.connect, cfg.offline) {
        (_, true) => None,
        (Some(a), false) => Some(a.as_str()),
        (None, false) => return Err(EdgeError::NoCloud),
    };
    let mut link: Option<Link> = None;
    let mut counters = Counters::default();
    let mut merged = BTreeMap::new();
    let mut routes = Vec::new();
    let mut fallback_count = 0u64;
    for id in dataset.image_ids() {
        let rec = dataset.small.get(id).ok_or_else(|| EdgeError::MissingSmallTrace(id.clone()))?;
        let route = match (discriminate(rec, &cfg.thresholds), addr) {
            (CaseLabel::Easy, _) => Route::Edge,
            (CaseLabel::Difficult, None) => {
                fallback_count += 1;
                Route::Edge
            }
            (CaseLabel::Difficult, Some(_)) => Route::Cloud,
        };
        let dets = match (route, addr) {
            (Route::Cloud, Some(a)) => {
                let padding = match &cfg.padding {
                    BytesPerImage::Fixed(b) => *b,
                    BytesPerImage::PerImage(m) => m.get(id).copied().unwrap_or(0),
                };
                fetch(&mut link, a, DetectRequest::new(id.clone(), padding), cfg, &mut counters)?
            }
            _ => finalize(rec, REPORT_CUTOFF),
        };
        merged.insert(id.clone(), dets);
        routes.push(RouteDecision { image_id: id.clone(), route });
    }
    let mut metrics = evaluate(&merged, &dataset.truths, dataset.class_count(), cfg.mode)?;
    let cloud = routes.iter().filter(|r| r.route == Route::Cloud).count();
    metrics.difficult_count = cloud as u64;
    metrics.upload_ratio = if routes.is_empty() { 0.0 } else { cloud as f64 / routes.len() as f64 };
    Ok(EdgeReport {
        metrics,
        routes,
        frames_sent: counters.frames_sent,
        wire_bytes_sent: counters.wire_bytes_sent,
        wire_bytes_received: counters.wire_bytes_received,
        upload_padding_bytes: counters.upload_padding_bytes,
        fallback_count,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::CloudServer;
    use crate::sim::{route_semantic, simulate, ChannelModel};
    use crate::synth::{generate, SynthConfig};

    fn small_dataset() -> Dataset {
        generate(&SynthConfig { image_count: 40, ..SynthConfig::default() }).unwrap()
    }

    fn thresholds() -> ThresholdSet {
        ThresholdSet::new(0.13, 2, 0.05).unwrap()
    }

    #[test]
    fn loopback_matches_simulation() {
        let ds = small_dataset();
        let server = CloudServer::bind("127.0.0.1:0", &ds.big, REPORT_CUTOFF).unwrap().spawn().unwrap();
        let mut cfg = EdgeConfig::new(thresholds(), Some(server.addr().to_string()));
        cfg.padding = BytesPerImage::Fixed(1000);
        let rep = run_edge(&ds, &cfg).unwrap();
        let decisions = route_semantic(&ds, &thresholds()).unwrap();
        let sim = simulate(&ds, &decisions, &ChannelModel::default(), ApMode::default()).unwrap();
        assert_eq!(rep.metrics, sim.metrics);
        assert_eq!(rep.routes, decisions);
        assert_eq!(rep.upload_padding_bytes, 1000 * sim.metrics.difficult_count);
        assert_eq!(rep.frames_sent, sim.metrics.difficult_count);
        assert_eq!(rep.fallback_count, 0);
        server.shutdown().unwrap();
    }

    #[test]
    fn offline_falls_back() {
        let ds = small_dataset();
        let mut cfg = EdgeConfig::new(thresholds(), None);
        cfg.offline = true;
        let rep = run_edge(&ds, &cfg).unwrap();
        let difficult = route_semantic(&ds, &thresholds()).unwrap().iter().filter(|d| d.route == Route::Cloud).count();
        assert_eq!(rep.fallback_count as usize, difficult);
        assert_eq!(rep.frames_sent, 0);
        assert!(rep.routes.iter().all(|r| r.route == Route::Edge));
        assert!(matches!(run_edge(&ds, &EdgeConfig::new(thresholds(), None)), Err(EdgeError::NoCloud)));
    }

    #[test]
    fn unreachable_cloud_is_an_error() {
        let ds = small_dataset();
        // bind then drop to get a port nobody listens on
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut cfg = EdgeConfig::new(thresholds(), Some(format!("127.0.0.1:{port}")));
        cfg.max_attempts = 2;
        cfg.retry_delay = Duration::from_millis(1);
        assert!(matches!(run_edge(&ds, &cfg), Err(EdgeError::Unreachable { attempts: 2, .. })));
    }

    #[test]
    fn unknown_image_is_reported() {
        let ds = small_dataset();
        let mut big = ds.big.clone();
        big.clear();
        let server = CloudServer::bind("127.0.0.1:0", &big, REPORT_CUTOFF).unwrap().spawn().unwrap();
        let cfg = EdgeConfig::new(thresholds(), Some(server.addr().to_string()));
        match run_edge(&ds, &cfg) {
            Err(EdgeError::Remote { reason, .. }) => assert_eq!(reason, crate::cloud::UNKNOWN_IMAGE),
            other => panic!("expected remote error, got {other:?}"),
        }
    }
}
