use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::stats::{stats_report, write_records_csv, DelayRecord, DelayStats, Direction};
use super::{LinkQueue, NetemError, TrafficClassModel};
use crate::modbus::{adu_len, MAX_ADU_LEN};

/// Splits a byte stream into Modbus ADUs. Input that cannot be an MBAP
/// header switches the stream to raw chunks for good.
#[derive(Debug, Default)]
struct Framer {
    buf: Vec<u8>,
    degraded: bool,
}

impl Framer {
    fn push(&mut self, data: &[u8]) {
        self.buf.extend_from_slice(data);
    }

    fn next(&mut self) -> Option<Vec<u8>> {
        if self.buf.is_empty() {
            return None;
        }
        if !self.degraded {
            if self.buf.len() >= 4 && self.buf[2..4] != [0, 0] {
                self.degraded = true;
            } else if let Some(total) = adu_len(&self.buf) {
                if !(8..=MAX_ADU_LEN).contains(&total) {
                    self.degraded = true;
                } else if self.buf.len() >= total {
                    return Some(self.buf.drain(..total).collect());
                } else {
                    return None;
                }
            } else {
                return None;
            }
            log::warn!("stream is not Modbus-TCP; forwarding raw chunks");
        }
        Some(std::mem::take(&mut self.buf))
    }
}

#[derive(Debug, Default)]
struct ProxyShared {
    records: Vec<DelayRecord>,
    next_index: [u64; 2],
}

/// A running delay proxy.
#[derive(Debug)]
pub struct ProxyHandle {
    addr: SocketAddr,
    shared: Arc<Mutex<ProxyShared>>,
    stop: Arc<AtomicBool>,
    dropped_partial: Arc<AtomicU64>,
    degraded: Arc<AtomicU64>,
    thread: Option<JoinHandle<()>>,
}

impl ProxyHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn records(&self) -> Vec<DelayRecord> {
        self.shared.lock().unwrap_or_else(|e| e.into_inner()).records.clone()
    }

    pub fn stats(&self) -> std::collections::BTreeMap<Direction, Result<DelayStats, NetemError>> {
        stats_report(&self.records())
    }

    /// Bytes of incomplete frames discarded at disconnect.
    pub fn dropped_partial_bytes(&self) -> u64 {
        self.dropped_partial.load(Ordering::Relaxed)
    }

    /// Chunks forwarded without MBAP framing.
    pub fn degraded_chunks(&self) -> u64 {
        self.degraded.load(Ordering::Relaxed)
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), NetemError> {
        write_records_csv(&self.records(), path)
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(100));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ProxyHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}

struct Pipe {
    direction: Direction,
    queue: LinkQueue,
    epoch: Instant,
    min_bytes: usize,
    shared: Arc<Mutex<ProxyShared>>,
    stop: Arc<AtomicBool>,
    dropped_partial: Arc<AtomicU64>,
    degraded: Arc<AtomicU64>,
}

fn ms_since(epoch: Instant) -> f64 {
    epoch.elapsed().as_secs_f64() * 1e3
}

/// Sleeps until `deadline_ms` on the epoch clock, spinning for the last
/// stretch to stay within a fraction of a millisecond.
fn wait_until(epoch: Instant, deadline_ms: f64) {
    loop {
        let left = deadline_ms - ms_since(epoch);
        if left <= 0.0 {
            return;
        }
        if left > 1.0 {
            std::thread::sleep(Duration::from_secs_f64((left - 0.5) / 1e3));
        } else {
            std::thread::yield_now();
        }
    }
}

impl Pipe {
    /// Reads from `src`, stamps each message and hands it to the writer in
    /// arrival order.
    fn run(mut self, mut src: TcpStream, dst: TcpStream) {
        let (tx, rx) = channel::<(f64, Vec<u8>)>();
        let epoch = self.epoch;
        let writer = std::thread::spawn(move || Self::write_loop(rx, dst, epoch));
        let _ = src.set_read_timeout(Some(Duration::from_millis(100)));
        let mut framer = Framer::default();
        let mut chunk = [0u8; 4096];
        let dir_index = self.direction as usize;
        loop {
            if self.stop.load(Ordering::Relaxed) {
                break;
            }
            let n = match src.read(&mut chunk) {
                Ok(0) => break,
                Ok(n) => n,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
                Err(_) => break,
            };
            let arrival_ms = ms_since(self.epoch);
            framer.push(&chunk[..n]);
            while let Some(msg) = framer.next() {
                if framer.degraded {
                    self.degraded.fetch_add(1, Ordering::Relaxed);
                }
                let release_ms = self.queue.offer(arrival_ms, msg.len().max(self.min_bytes));
                {
                    let mut shared = self.shared.lock().unwrap_or_else(|e| e.into_inner());
                    let msg_index = shared.next_index[dir_index];
                    shared.next_index[dir_index] += 1;
                    shared.records.push(DelayRecord {
                        direction: self.direction,
                        msg_index,
                        bytes: msg.len(),
                        arrival_us: arrival_ms * 1e3,
                        release_us: release_ms * 1e3,
                        delay_us: (release_ms - arrival_ms) * 1e3,
                    });
                }
                if tx.send((release_ms, msg)).is_err() {
                    break;
                }
            }
        }
        if !framer.buf.is_empty() {
            log::warn!("{}: dropping {} bytes of an incomplete frame", self.direction, framer.buf.len());
            self.dropped_partial.fetch_add(framer.buf.len() as u64, Ordering::Relaxed);
        }
        drop(tx);
        let _ = writer.join();
        let _ = src.shutdown(Shutdown::Read);
    }

    fn write_loop(rx: Receiver<(f64, Vec<u8>)>, mut dst: TcpStream, epoch: Instant) {
        while let Ok((release_ms, msg)) = rx.recv() {
            wait_until(epoch, release_ms);
            if dst.write_all(&msg).is_err() {
                break;
            }
        }
        let _ = dst.shutdown(Shutdown::Write);
    }
}

/// Starts a proxy on `listen` that forwards every connection to `target`,
/// delaying each Modbus ADU by the class model. Directions get independent
/// queues seeded from `model.seed`; `min_bytes` pads short messages.
pub fn forward_with_delay(
    listen: &str,
    target: SocketAddr,
    model: TrafficClassModel,
    min_bytes: usize,
) -> Result<ProxyHandle, NetemError> {
    // validate before binding
    LinkQueue::new(model.clone())?;
    let listener = TcpListener::bind(listen).map_err(|e| NetemError::Io(format!("bind {listen}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| NetemError::Io(e.to_string()))?;
    let epoch = Instant::now();
    let shared = Arc::new(Mutex::new(ProxyShared::default()));
    let stop = Arc::new(AtomicBool::new(false));
    let dropped_partial = Arc::new(AtomicU64::new(0));
    let degraded = Arc::new(AtomicU64::new(0));
    let (shared2, stop2, dropped2, degraded2) = (shared.clone(), stop.clone(), dropped_partial.clone(), degraded.clone());
    let thread = std::thread::Builder::new()
        .name("netem-proxy".into())
        .spawn(move || {
            let mut conn_index = 0u64;
            for client in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(client) = client else { continue };
                let upstream = match TcpStream::connect_timeout(&target, Duration::from_secs(2)) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("target {target} unreachable: {e}");
                        let _ = client.shutdown(Shutdown::Both);
                        continue;
                    }
                };
                let _ = client.set_nodelay(true);
                let _ = upstream.set_nodelay(true);
                for (direction, src, dst) in [
                    (Direction::Request, client.try_clone(), upstream.try_clone()),
                    (Direction::Response, upstream.try_clone(), client.try_clone()),
                ] {
                    let (Ok(src), Ok(dst)) = (src, dst) else { continue };
                    let mut m = model.clone();
                    m.seed = model.seed.wrapping_add(2 * conn_index + direction as u64);
                    let pipe = Pipe {
                        direction,
                        queue: LinkQueue::new(m).expect("validated"),
                        epoch,
                        min_bytes,
                        shared: shared2.clone(),
                        stop: stop2.clone(),
                        dropped_partial: dropped2.clone(),
                        degraded: degraded2.clone(),
                    };
                    std::thread::spawn(move || pipe.run(src, dst));
                }
                conn_index += 1;
            }
        })
        .map_err(|e| NetemError::Io(e.to_string()))?;
    Ok(ProxyHandle { addr, shared, stop, dropped_partial, degraded, thread: Some(thread) })
}
