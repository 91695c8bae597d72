//! Cloud-side frame ingestion.
//!
//! [`IngestCore`] owns the store and the quality monitor and is the single
//! writer. The TCP gateway runs one reader thread per connection; readers
//! split bytes into lines and forward them over a channel to the writer
//! thread, so the store's order is the order of arrival at the writer and
//! per-connection order is preserved. The in-process loopback calls the same
//! core directly.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, ErrorKind, Read};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::frame::decode_frame;
use super::store::{Reject, Store, StoredRecord};
use crate::pipeline::{mean, population_sd};

/// Accumulates bytes and yields complete newline-terminated lines; a partial
/// trailing line waits for its newline.
#[derive(Debug, Default, Clone)]
pub struct LineSplitter {
    buf: Vec<u8>,
}

impl LineSplitter {
    pub fn push(&mut self, bytes: &[u8]) -> Vec<Vec<u8>> {
        self.buf.extend_from_slice(bytes);
        let mut lines = Vec::new();
        while let Some(pos) = self.buf.iter().position(|b| *b == b'\n') {
            lines.push(self.buf.drain(..=pos).collect());
        }
        lines
    }

    /// Bytes still waiting for a newline.
    pub fn pending(&self) -> &[u8] {
        &self.buf
    }

    pub fn take_pending(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

/// Rolling z-score check per (device, channel).
#[derive(Debug, Clone)]
pub struct QualityMonitor {
    window: usize,
    threshold: f64,
    min_history: usize,
    history: BTreeMap<(String, String), VecDeque<f64>>,
    flagged: Vec<u64>,
}

impl Default for QualityMonitor {
    fn default() -> Self {
        Self::new(20, 3.0)
    }
}

impl QualityMonitor {
    pub fn new(window: usize, threshold: f64) -> Self {
        Self {
            window: window.max(2),
            threshold,
            min_history: 5.min(window.max(2)),
            history: BTreeMap::new(),
            flagged: Vec::new(),
        }
    }

    /// Scores `value` against the stream's recent history, then records it.
    /// Returns true when the value is an outlier.
    pub fn observe(&mut self, device: &str, channel: &str, value: f64, recv_tick: u64) -> bool {
        let h = self
            .history
            .entry((device.to_string(), channel.to_string()))
            .or_default();
        let mut outlier = false;
        if h.len() >= self.min_history {
            let v: Vec<f64> = h.iter().copied().collect();
            let sd = population_sd(&v);
            if sd > 0.0 && ((value - mean(&v)) / sd).abs() > self.threshold {
                outlier = true;
            }
        }
        if outlier {
            self.flagged.push(recv_tick);
        } else {
            // outliers stay out of the reference window
            h.push_back(value);
            if h.len() > self.window {
                h.pop_front();
            }
        }
        outlier
    }

    /// Receive ticks of flagged records.
    pub fn flagged(&self) -> &[u64] {
        &self.flagged
    }
}

/// Decoding, stamping and persistence shared by the TCP gateway and the
/// in-process loopback.
#[derive(Debug)]
pub struct IngestCore {
    pub store: Store,
    pub quality: QualityMonitor,
    next_recv: u64,
}

impl IngestCore {
    pub fn new(store: Store) -> Self {
        Self {
            store,
            quality: QualityMonitor::default(),
            next_recv: 0,
        }
    }

    /// Logical receive clock: one tick per line handled.
    pub fn recv_clock(&self) -> u64 {
        self.next_recv
    }

    /// Decodes and stores one line. Malformed lines go to the rejects log.
    pub fn ingest_line(&mut self, session: u64, line: &[u8]) -> io::Result<Option<StoredRecord>> {
        let recv_tick = self.next_recv;
        self.next_recv += 1;
        match decode_frame(line) {
            Ok(frame) => {
                self.quality.observe(
                    &frame.device_id,
                    &frame.channel,
                    frame.value_f64(),
                    recv_tick,
                );
                let rec = StoredRecord::from_frame(frame, recv_tick, session);
                self.store.append(rec.clone())?;
                Ok(Some(rec))
            }
            Err(e) => {
                self.store.append_reject(Reject {
                    recv_tick,
                    session,
                    reason: e.to_string(),
                    raw: line.to_vec(),
                })?;
                Ok(None)
            }
        }
    }

    /// Splits `bytes` with `splitter` and ingests every complete line.
    pub fn ingest_bytes(
        &mut self,
        session: u64,
        splitter: &mut LineSplitter,
        bytes: &[u8],
    ) -> io::Result<Vec<StoredRecord>> {
        let mut out = Vec::new();
        for line in splitter.push(bytes) {
            out.extend(self.ingest_line(session, &line)?);
        }
        Ok(out)
    }
}

enum WriterMsg {
    Line { session: u64, line: Vec<u8> },
}

pub struct GatewayHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: JoinHandle<io::Result<()>>,
    writer: JoinHandle<io::Result<IngestCore>>,
}

impl GatewayHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, waits for open connections to reach EOF and returns
    /// the core with everything stored.
    pub fn shutdown(self) -> io::Result<IngestCore> {
        self.stop.store(true, Ordering::SeqCst);
        self.acceptor
            .join()
            .map_err(|_| io::Error::other("acceptor panicked"))??;
        let mut core = self
            .writer
            .join()
            .map_err(|_| io::Error::other("writer panicked"))??;
        core.store.flush()?;
        Ok(core)
    }
}

const POLL: Duration = Duration::from_millis(2);

fn serve_connection(
    mut stream: TcpStream,
    session: u64,
    tx: Sender<WriterMsg>,
    stop: Arc<AtomicBool>,
) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_millis(50)))?;
    let mut splitter = LineSplitter::default();
    let mut buf = [0u8; 4096];
    loop {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                for line in splitter.push(&buf[..n]) {
                    if tx.send(WriterMsg::Line { session, line }).is_err() {
                        return Ok(());
                    }
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(_) => break,
        }
    }
    let rest = splitter.take_pending();
    if !rest.is_empty() {
        // unterminated tail: the decoder reports it as a reject
        let _ = tx.send(WriterMsg::Line {
            session,
            line: rest,
        });
    }
    Ok(())
}

/// Binds `bind` (e.g. `127.0.0.1:8000`, or port 0 for any free port) and
/// serves until [`GatewayHandle::shutdown`]. Sessions are numbered from 1 in
/// accept order.
pub fn spawn_gateway(bind: &str, core: IngestCore) -> io::Result<GatewayHandle> {
    let listener = TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel::<WriterMsg>();

    let writer = thread::spawn(move || {
        let mut core = core;
        for WriterMsg::Line { session, line } in rx {
            core.ingest_line(session, &line)?;
        }
        Ok(core)
    });

    let stop_acc = Arc::clone(&stop);
    let acceptor = thread::spawn(move || {
        let mut readers = Vec::new();
        let mut session = 0u64;
        loop {
            let stopping = stop_acc.load(Ordering::SeqCst);
            match listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    session += 1;
                    let (tx, stop) = (tx.clone(), Arc::clone(&stop_acc));
                    readers.push(thread::spawn(move || {
                        serve_connection(stream, session, tx, stop)
                    }));
                    continue;
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    // backlog drained after the stop flag: done accepting
                    if stopping {
                        break;
                    }
                    thread::sleep(POLL);
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        for r in readers {
            r.join()
                .map_err(|_| io::Error::other("reader panicked"))??;
        }
        drop(tx);
        Ok(())
    });

    Ok(GatewayHandle {
        addr,
        stop,
        acceptor,
        writer,
    })
}
