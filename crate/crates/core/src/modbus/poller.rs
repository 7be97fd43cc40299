use std::collections::BTreeMap;
use std::io::{self, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::master::{MasterConfig, MasterEvent, MasterSession, UnitReading};
use super::slave::read_adu;

#[derive(Debug, Default)]
struct Shared {
    latest: BTreeMap<u8, UnitReading>,
    events: Vec<MasterEvent>,
    completed: Vec<UnitReading>,
}

/// Periodic poller running a [`MasterSession`] over a real TCP connection.
/// Times in readings are milliseconds since `epoch`.
#[derive(Debug)]
pub struct PollerHandle {
    epoch: Instant,
    shared: Arc<Mutex<Shared>>,
    writes: Sender<(u8, u16, Vec<u16>)>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl PollerHandle {
    pub fn now_ms(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * 1e3
    }

    pub fn latest(&self) -> BTreeMap<u8, UnitReading> {
        self.shared.lock().unwrap_or_else(|e| e.into_inner()).latest.clone()
    }

    pub fn take_events(&self) -> Vec<MasterEvent> {
        std::mem::take(&mut self.shared.lock().unwrap_or_else(|e| e.into_inner()).events)
    }

    pub fn take_completed(&self) -> Vec<UnitReading> {
        std::mem::take(&mut self.shared.lock().unwrap_or_else(|e| e.into_inner()).completed)
    }

    pub fn write(&self, unit: u8, address: u16, values: Vec<u16>) {
        let _ = self.writes.send((unit, address, values));
    }

    pub fn stop(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for PollerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

struct Poller {
    endpoint: SocketAddr,
    session: MasterSession,
    period_ms: f64,
    epoch: Instant,
    shared: Arc<Mutex<Shared>>,
    writes: Receiver<(u8, u16, Vec<u16>)>,
    stop: Arc<AtomicBool>,
}

impl Poller {
    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * 1e3
    }

    fn publish(&mut self) {
        let events = self.session.take_events();
        let completed = self.session.take_completed();
        let mut shared = self.shared.lock().unwrap_or_else(|e| e.into_inner());
        for r in &completed {
            shared.latest.insert(r.unit, r.clone());
        }
        shared.completed.extend(completed);
        shared.events.extend(events);
    }

    fn run(mut self) {
        let mut stream: Option<TcpStream> = None;
        let mut backoff_ms = 10.0;
        let mut next_cycle = self.now();
        while !self.stop.load(Ordering::Relaxed) {
            let Some(conn) = stream.as_mut() else {
                match TcpStream::connect_timeout(&self.endpoint, Duration::from_millis(500)) {
                    Ok(s) => {
                        let _ = s.set_nodelay(true);
                        stream = Some(s);
                        backoff_ms = 10.0;
                        self.shared.lock().unwrap_or_else(|e| e.into_inner()).events.push(MasterEvent::Connected);
                    }
                    Err(e) => {
                        self.shared
                            .lock()
                            .unwrap_or_else(|e| e.into_inner())
                            .events
                            .push(MasterEvent::ConnectionLost { reason: e.to_string() });
                        std::thread::sleep(Duration::from_secs_f64(backoff_ms / 1e3));
                        backoff_ms = (backoff_ms * 2.0).min(1000.0);
                    }
                }
                continue;
            };
            let now = self.now();
            if now >= next_cycle {
                self.session.start_cycle();
                next_cycle += self.period_ms;
                if next_cycle < now {
                    next_cycle = now + self.period_ms;
                }
            }
            while let Ok((unit, address, values)) = self.writes.try_recv() {
                self.session.queue_write(unit, address, values);
            }
            let mut failed: Option<io::Error> = None;
            if let Some(bytes) = self.session.poll_transmit(now) {
                if let Err(e) = conn.write_all(&bytes) {
                    failed = Some(e);
                }
            }
            if failed.is_none() {
                let wake = self.session.next_deadline().unwrap_or(next_cycle).min(next_cycle);
                let wait = (wake - self.now()).clamp(1.0, 50.0);
                let _ = conn.set_read_timeout(Some(Duration::from_secs_f64(wait / 1e3)));
                match read_adu(conn) {
                    Ok(Some(adu)) => {
                        let t = self.now();
                        self.session.handle_response(t, &adu);
                    }
                    Ok(None) => failed = Some(io::ErrorKind::UnexpectedEof.into()),
                    Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                    Err(e) => failed = Some(e),
                }
                let t = self.now();
                self.session.handle_timeout(t);
            }
            if let Some(e) = failed {
                self.session.connection_lost();
                self.shared
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .events
                    .push(MasterEvent::ConnectionLost { reason: e.to_string() });
                stream = None;
            }
            self.publish();
        }
    }
}

/// Starts polling `endpoint` every `period_ms` wall milliseconds.
pub fn poll_master(endpoint: SocketAddr, config: MasterConfig, period_ms: f64, epoch: Instant) -> PollerHandle {
    let shared = Arc::new(Mutex::new(Shared::default()));
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = channel();
    let poller = Poller {
        endpoint,
        session: MasterSession::new(config),
        period_ms: period_ms.max(1.0),
        epoch,
        shared: shared.clone(),
        writes: rx,
        stop: stop.clone(),
    };
    let thread = std::thread::Builder::new().name("modbus-poller".into()).spawn(move || poller.run()).expect("spawn poller");
    PollerHandle { epoch, shared, writes: tx, stop, thread: Some(thread) }
}
