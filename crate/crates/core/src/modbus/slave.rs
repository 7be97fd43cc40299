use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::frame::{adu_len, decode_frame, encode_frame, ModbusFrame, Pdu, MAX_ADU_LEN};
use super::registers::{reg, RegisterView, PCC_UNIT};
use super::{exception, ModbusError};
use crate::plant::PlantCommand;

/// Units whose register 10 accepts dispatch commands.
#[derive(Debug, Clone, Default)]
pub struct SlaveConfig {
    pub battery_units: Vec<u8>,
}

/// Result of handling one request.
#[derive(Debug, Clone, PartialEq)]
pub struct SlaveReply {
    pub response: ModbusFrame,
    pub commands: Vec<PlantCommand>,
    /// The request was malformed; the connection should be closed after
    /// sending the response.
    pub close: bool,
}

fn reply(req: &ModbusFrame, pdu: Pdu) -> ModbusFrame {
    ModbusFrame::from_pdu(req.transaction_id, req.unit_id, &pdu)
}

fn fail(req: &ModbusFrame, code: u8) -> SlaveReply {
    SlaveReply { response: reply(req, Pdu::Exception { function: req.function, code }), commands: vec![], close: false }
}

/// Answers one request frame against the current register image. Writes
/// become plant commands; the caller routes them to the plant.
pub fn handle_request(view: &RegisterView, config: &SlaveConfig, req: &ModbusFrame) -> SlaveReply {
    let pdu = match req.pdu() {
        Ok(p) => p,
        Err(ModbusError::UnsupportedFunction(_)) => return fail(req, exception::ILLEGAL_FUNCTION),
        Err(_) => {
            let mut r = fail(req, exception::ILLEGAL_DATA_VALUE);
            r.close = true;
            return r;
        }
    };
    let image = view.current();
    let Some(regs) = image.unit(req.unit_id) else {
        return fail(req, exception::ILLEGAL_DATA_ADDRESS);
    };
    match pdu {
        Pdu::ReadRequest { address, count } => {
            if count == 0 || count > 125 {
                return fail(req, exception::ILLEGAL_DATA_VALUE);
            }
            let end = u32::from(address) + u32::from(count);
            if end > u32::from(reg::COUNT) {
                return fail(req, exception::ILLEGAL_DATA_ADDRESS);
            }
            let values = regs[usize::from(address)..end as usize].to_vec();
            SlaveReply { response: reply(req, Pdu::ReadResponse { values }), commands: vec![], close: false }
        }
        Pdu::WriteRequest { address, values } => {
            let count = values.len() as u16;
            if count == 0 || count > 123 {
                return fail(req, exception::ILLEGAL_DATA_VALUE);
            }
            let end = u32::from(address) + u32::from(count);
            if req.unit_id == PCC_UNIT || address < reg::COMMAND || end > u32::from(reg::COUNT) {
                return fail(req, exception::ILLEGAL_DATA_ADDRESS);
            }
            let mut commands = Vec::new();
            for (k, &v) in values.iter().enumerate() {
                let a = address + k as u16;
                if a == reg::COMMAND {
                    if !config.battery_units.contains(&req.unit_id) {
                        return fail(req, exception::ILLEGAL_DATA_ADDRESS);
                    }
                    let d = v as i16;
                    if !(-1..=1).contains(&d) {
                        return fail(req, exception::ILLEGAL_DATA_VALUE);
                    }
                    commands.push(PlantCommand::Dispatch { bus: req.unit_id, d: i32::from(d) });
                } else {
                    if v > 1 {
                        return fail(req, exception::ILLEGAL_DATA_VALUE);
                    }
                    commands.push(PlantCommand::Breaker { bus: req.unit_id, closed: v == 1 });
                }
            }
            SlaveReply { response: reply(req, Pdu::WriteResponse { address, count }), commands, close: false }
        }
        _ => fail(req, exception::ILLEGAL_FUNCTION),
    }
}

fn interrupted(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted)
}

/// Fills `buf[from..]`; read timeouts are retried once a frame has started.
fn fill(stream: &mut impl Read, buf: &mut [u8], mut got: usize) -> io::Result<usize> {
    while got < buf.len() {
        match stream.read(&mut buf[got..]) {
            Ok(0) => return Ok(got),
            Ok(n) => got += n,
            Err(e) if got > 0 && interrupted(&e) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

/// Reads one MBAP-delimited ADU. `Ok(None)` on clean end of stream; a read
/// timeout before the first byte is returned as an error.
pub fn read_adu(stream: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut buf = vec![0u8; 6];
    match fill(stream, &mut buf, 0)? {
        0 => return Ok(None),
        6 => {}
        _ => return Err(io::ErrorKind::UnexpectedEof.into()),
    }
    let total = adu_len(&buf).expect("six header bytes");
    if !(8..=MAX_ADU_LEN).contains(&total) {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("MBAP length {total}")));
    }
    buf.resize(total, 0);
    if fill(stream, &mut buf, 6)? < total {
        return Err(io::ErrorKind::UnexpectedEof.into());
    }
    Ok(Some(buf))
}

/// A running Modbus-TCP server.
#[derive(Debug)]
pub struct SlaveHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    requests: Arc<AtomicU64>,
    thread: Option<JoinHandle<()>>,
}

impl SlaveHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn requests_served(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(100));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for SlaveHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}

fn serve_connection(
    mut stream: TcpStream,
    view: RegisterView,
    config: Arc<SlaveConfig>,
    commands: Sender<PlantCommand>,
    stop: Arc<AtomicBool>,
    requests: Arc<AtomicU64>,
) {
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
    loop {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let adu = match read_adu(&mut stream) {
            Ok(Some(a)) => a,
            Ok(None) => break,
            Err(e) if interrupted(&e) => continue,
            Err(e) => {
                log::debug!("slave connection closed: {e}");
                break;
            }
        };
        requests.fetch_add(1, Ordering::Relaxed);
        let reply = match decode_frame(&adu) {
            Ok((frame, _)) => handle_request(&view, &config, &frame),
            Err(e) => {
                log::warn!("malformed request: {e}");
                let bogus = ModbusFrame::new(u16::from_be_bytes([adu[0], adu[1]]), adu[6], adu[7], vec![]);
                let mut r = fail(&bogus, exception::ILLEGAL_DATA_VALUE);
                r.close = true;
                r
            }
        };
        for cmd in &reply.commands {
            if commands.send(*cmd).is_err() {
                log::warn!("plant command queue closed");
            }
        }
        if stream.write_all(&encode_frame(&reply.response)).is_err() || reply.close {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}

/// Serves the register view on `endpoint`, one thread per connection.
pub fn serve_slave(
    view: RegisterView,
    config: SlaveConfig,
    endpoint: &str,
    commands: Sender<PlantCommand>,
) -> io::Result<SlaveHandle> {
    let listener = TcpListener::bind(endpoint)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let requests = Arc::new(AtomicU64::new(0));
    let config = Arc::new(config);
    let (stop2, requests2) = (stop.clone(), requests.clone());
    let thread = std::thread::Builder::new().name("modbus-slave".into()).spawn(move || {
        for conn in listener.incoming() {
            if stop2.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let (v, c, tx, s, r) = (view.clone(), config.clone(), commands.clone(), stop2.clone(), requests2.clone());
                    let _ = std::thread::Builder::new()
                        .name("modbus-conn".into())
                        .spawn(move || serve_connection(stream, v, c, tx, s, r));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    })?;
    Ok(SlaveHandle { addr, stop, requests, thread: Some(thread) })
}
