//! Modbus-TCP: byte-exact framing, the register map, a slave serving plant
//! snapshots and a master that polls them.
//!
//! Only function codes 0x03 (read holding registers) and 0x10 (write
//! multiple registers) are implemented. Unit ids are bus ids; unit 1 is the
//! point of common coupling.

mod frame;
mod master;
mod poller;
mod registers;
mod slave;

pub use frame::{adu_len, decode_frame, encode_frame, ModbusFrame, Pdu, MAX_ADU_LEN, MBAP_LEN};
pub use master::{MasterConfig, MasterEvent, MasterSession, UnitReading};
pub use poller::{poll_master, PollerHandle};
pub use registers::{reg, reg_decode, reg_encode, RegKind, RegisterImage, RegisterView, UnitMeasurement, PCC_UNIT};
pub use slave::{handle_request, read_adu, serve_slave, SlaveConfig, SlaveHandle, SlaveReply};

use thiserror::Error;

pub const FC_READ_HOLDING: u8 = 0x03;
pub const FC_WRITE_MULTIPLE: u8 = 0x10;

/// Exception codes used by the slave.
pub mod exception {
    pub const ILLEGAL_FUNCTION: u8 = 0x01;
    pub const ILLEGAL_DATA_ADDRESS: u8 = 0x02;
    pub const ILLEGAL_DATA_VALUE: u8 = 0x03;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModbusError {
    #[error("short buffer: need {needed} bytes, have {got}")]
    ShortBuffer { needed: usize, got: usize },
    #[error("protocol id {0} is not Modbus")]
    ProtocolId(u16),
    #[error("invalid MBAP length {0}")]
    Length(u16),
    #[error("unsupported function code {0:#04x}")]
    UnsupportedFunction(u8),
    #[error("malformed PDU: {0}")]
    Malformed(String),
}

#[cfg(test)]
mod tests;
