use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::frame::{decode_frame, encode_frame, ModbusFrame, Pdu};
use super::registers::reg;

#[derive(Debug, Clone, PartialEq)]
pub struct MasterConfig {
    pub units: Vec<u8>,
    /// Registers read per unit, starting at register 0.
    pub read_count: u16,
    pub timeout_ms: f64,
    pub retries: u32,
}

impl MasterConfig {
    pub fn new(units: Vec<u8>) -> Self {
        Self { units, read_count: reg::MEASUREMENT_COUNT, timeout_ms: 250.0, retries: 1 }
    }
}

/// Answered read of one unit. Times are in the session's millisecond clock.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitReading {
    pub unit: u8,
    pub regs: Vec<u16>,
    pub sent_ms: f64,
    pub received_ms: f64,
}

impl UnitReading {
    pub fn round_trip_ms(&self) -> f64 {
        self.received_ms - self.sent_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MasterEvent {
    Timeout { unit: u8, transaction_id: u16, retry: bool },
    /// Response that matched no outstanding request, e.g. a late answer to a
    /// request already retried.
    Unmatched { transaction_id: u16 },
    Exception { unit: u8, function: u8, code: u8 },
    Malformed { reason: String },
    CycleSkipped,
    ConnectionLost { reason: String },
    Connected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Read,
    Write,
}

#[derive(Debug, Clone)]
struct Request {
    unit: u8,
    kind: Kind,
    pdu: Pdu,
    attempts: u32,
}

#[derive(Debug, Clone)]
struct InFlight {
    request: Request,
    transaction_id: u16,
    sent_ms: f64,
}

/// Sans-IO Modbus master: strict request-response on one connection.
///
/// The caller feeds it time and bytes; it decides what to send. Writes are
/// queued ahead of reads. A new poll cycle is skipped while the previous one
/// is still queued, so a slow link stretches the cycle instead of building a
/// backlog. A timed-out request is retried with a fresh transaction id, and
/// responses are only accepted for the transaction currently in flight.
#[derive(Debug, Clone)]
pub struct MasterSession {
    config: MasterConfig,
    next_txn: u16,
    queue: VecDeque<Request>,
    in_flight: Option<InFlight>,
    latest: BTreeMap<u8, UnitReading>,
    events: Vec<MasterEvent>,
    completed: Vec<UnitReading>,
}

impl MasterSession {
    pub fn new(config: MasterConfig) -> Self {
        Self {
            config,
            next_txn: 1,
            queue: VecDeque::new(),
            in_flight: None,
            latest: BTreeMap::new(),
            events: Vec::new(),
            completed: Vec::new(),
        }
    }

    pub fn config(&self) -> &MasterConfig {
        &self.config
    }

    fn reads_pending(&self) -> bool {
        self.queue.iter().any(|r| r.kind == Kind::Read)
            || self.in_flight.as_ref().is_some_and(|f| f.request.kind == Kind::Read)
    }

    /// Queues one read per unit unless the previous cycle is unfinished.
    /// Returns whether a cycle was started.
    pub fn start_cycle(&mut self) -> bool {
        if self.reads_pending() {
            self.events.push(MasterEvent::CycleSkipped);
            return false;
        }
        for &unit in &self.config.units {
            self.queue.push_back(Request {
                unit,
                kind: Kind::Read,
                pdu: Pdu::ReadRequest { address: 0, count: self.config.read_count },
                attempts: 0,
            });
        }
        true
    }

    pub fn queue_write(&mut self, unit: u8, address: u16, values: Vec<u16>) {
        let pos = self.queue.iter().position(|r| r.kind == Kind::Read).unwrap_or(self.queue.len());
        self.queue.insert(pos, Request { unit, kind: Kind::Write, pdu: Pdu::WriteRequest { address, values }, attempts: 0 });
    }

    fn fresh_txn(&mut self) -> u16 {
        let t = self.next_txn;
        self.next_txn = self.next_txn.wrapping_add(1);
        t
    }

    /// Bytes to send now, if the link is idle and work is queued.
    pub fn poll_transmit(&mut self, now_ms: f64) -> Option<Vec<u8>> {
        if self.in_flight.is_some() {
            return None;
        }
        let mut request = self.queue.pop_front()?;
        request.attempts += 1;
        let transaction_id = self.fresh_txn();
        let frame = ModbusFrame::from_pdu(transaction_id, request.unit, &request.pdu);
        self.in_flight = Some(InFlight { request, transaction_id, sent_ms: now_ms });
        Some(encode_frame(&frame))
    }

    /// Deadline of the outstanding request.
    pub fn next_deadline(&self) -> Option<f64> {
        self.in_flight.as_ref().map(|f| f.sent_ms + self.config.timeout_ms)
    }

    /// Expires the outstanding request if its deadline has passed; it is
    /// re-queued at the front while retries remain.
    pub fn handle_timeout(&mut self, now_ms: f64) {
        let Some(f) = &self.in_flight else { return };
        if now_ms < f.sent_ms + self.config.timeout_ms {
            return;
        }
        let f = self.in_flight.take().expect("checked above");
        let retry = f.request.attempts <= self.config.retries;
        self.events.push(MasterEvent::Timeout { unit: f.request.unit, transaction_id: f.transaction_id, retry });
        if retry {
            self.queue.push_front(f.request);
        }
    }

    /// Consumes one response ADU.
    pub fn handle_response(&mut self, now_ms: f64, bytes: &[u8]) {
        let frame = match decode_frame(bytes) {
            Ok((f, _)) => f,
            Err(e) => {
                self.events.push(MasterEvent::Malformed { reason: e.to_string() });
                return;
            }
        };
        let matches = self
            .in_flight
            .as_ref()
            .is_some_and(|f| f.transaction_id == frame.transaction_id && f.request.unit == frame.unit_id);
        if !matches {
            self.events.push(MasterEvent::Unmatched { transaction_id: frame.transaction_id });
            return;
        }
        let f = self.in_flight.take().expect("matched");
        match Pdu::parse_response(frame.function, &frame.payload) {
            Ok(Pdu::ReadResponse { values }) if f.request.kind == Kind::Read => {
                let reading = UnitReading { unit: f.request.unit, regs: values, sent_ms: f.sent_ms, received_ms: now_ms };
                self.completed.push(reading.clone());
                self.latest.insert(f.request.unit, reading);
            }
            Ok(Pdu::WriteResponse { .. }) if f.request.kind == Kind::Write => {}
            Ok(Pdu::Exception { function, code }) => {
                self.events.push(MasterEvent::Exception { unit: f.request.unit, function, code })
            }
            Ok(other) => self.events.push(MasterEvent::Malformed { reason: format!("unexpected response {other:?}") }),
            Err(e) => self.events.push(MasterEvent::Malformed { reason: e.to_string() }),
        }
    }

    pub fn latest(&self, unit: u8) -> Option<&UnitReading> {
        self.latest.get(&unit)
    }

    /// Age of a unit's newest answered read, measured from when that read
    /// was sent.
    pub fn age_ms(&self, unit: u8, now_ms: f64) -> Option<f64> {
        self.latest.get(&unit).map(|r| now_ms - r.sent_ms)
    }

    pub fn take_events(&mut self) -> Vec<MasterEvent> {
        std::mem::take(&mut self.events)
    }

    /// Reads answered since the last call, in arrival order.
    pub fn take_completed(&mut self) -> Vec<UnitReading> {
        std::mem::take(&mut self.completed)
    }

    pub fn idle(&self) -> bool {
        self.in_flight.is_none() && self.queue.is_empty()
    }

    /// Drops the outstanding request after a connection loss; it is
    /// re-queued so the new connection sends it again.
    pub fn connection_lost(&mut self) {
        if let Some(f) = self.in_flight.take() {
            self.queue.push_front(f.request);
        }
    }
}
