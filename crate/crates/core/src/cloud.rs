//! Cloud side of the deployment: serves big-model results over TCP.

use std::collections::BTreeMap;
use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crate::detect::{finalize, DetectionRecord, FinalDetection};
use crate::wire::{read_frame, write_frame, DetectResponse, ErrorPayload, Message, WireError};

pub const UNKNOWN_IMAGE: &str = "unknown_image";

/// Cloud server backed by big-model traces. Results are finalized once at
/// bind time so every response for an image is byte-identical.
pub struct CloudServer {
    listener: TcpListener,
    results: Arc<BTreeMap<String, Vec<FinalDetection>>>,
}

impl CloudServer {
    pub fn bind<A: ToSocketAddrs>(
        addr: A,
        big: &BTreeMap<String, DetectionRecord>,
        cutoff: f64,
    ) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let results = big.iter().map(|(id, rec)| (id.clone(), finalize(rec, cutoff))).collect();
        Ok(Self { listener, results: Arc::new(results) })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until the process exits, one thread each.
    pub fn serve(self) -> io::Result<()> {
        let stop = Arc::new(AtomicBool::new(false));
        self.accept_loop(&stop)
    }

    /// Serves on a background thread until the handle is shut down.
    pub fn spawn(self) -> io::Result<CloudHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = thread::spawn(move || self.accept_loop(&flag));
        Ok(CloudHandle { addr, stop, thread: Some(thread) })
    }

    fn accept_loop(&self, stop: &AtomicBool) -> io::Result<()> {
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            };
            let results = Arc::clone(&self.results);
            thread::spawn(move || {
                let _ = handle_connection(stream, &results);
            });
        }
        Ok(())
    }
}

pub struct CloudHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl CloudHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> io::Result<()> {
        let Some(thread) = self.thread.take() else { return Ok(()) };
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        thread.join().unwrap_or_else(|_| Err(io::Error::other("cloud server thread panicked")))
    }
}

impl Drop for CloudHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

fn handle_connection(stream: TcpStream, results: &BTreeMap<String, Vec<FinalDetection>>) -> Result<(), WireError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(WireError::Io(e)) => return Err(WireError::Io(e)),
            Err(e) => return reject(&mut writer, &e),
        };
        let reply = match Message::from_frame(&frame) {
            Ok(Message::Ping) => Message::Pong,
            Ok(Message::DetectRequest(req)) => match results.get(&req.image_id) {
                Some(dets) => Message::DetectResponse(DetectResponse { image_id: req.image_id, detections: dets.clone() }),
                None => Message::Error(ErrorPayload { reason: UNKNOWN_IMAGE.into(), image_id: Some(req.image_id) }),
            },
            Ok(other) => {
                let e = WireError::BadPayload(format!("unexpected message from client: {other:?}"));
                return reject(&mut writer, &e);
            }
            Err(e) => return reject(&mut writer, &e),
        };
        write_frame(&mut writer, &reply.to_frame())?;
    }
}

/// Sends an error frame for a protocol violation and closes the connection.
fn reject(w: &mut BufWriter<TcpStream>, e: &WireError) -> Result<(), WireError> {
    let msg = Message::Error(ErrorPayload { reason: format!("protocol error {}: {e}", e.code()), image_id: None });
    let _ = write_frame(w, &msg.to_frame());
    let _ = w.get_ref().shutdown(Shutdown::Both);
    Ok(())
}
