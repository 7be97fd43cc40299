use super::{ModbusError, FC_READ_HOLDING, FC_WRITE_MULTIPLE};

/// MBAP header length including the unit id.
pub const MBAP_LEN: usize = 7;
/// Largest ADU the standard allows.
pub const MAX_ADU_LEN: usize = 260;

/// One Modbus-TCP application data unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModbusFrame {
    pub transaction_id: u16,
    pub protocol_id: u16,
    /// Byte count of unit id, function code and payload.
    pub length: u16,
    pub unit_id: u8,
    pub function: u8,
    pub payload: Vec<u8>,
}

impl ModbusFrame {
    pub fn new(transaction_id: u16, unit_id: u8, function: u8, payload: Vec<u8>) -> Self {
        let length = (payload.len() + 2) as u16;
        Self { transaction_id, protocol_id: 0, length, unit_id, function, payload }
    }

    pub fn pdu(&self) -> Result<Pdu, ModbusError> {
        Pdu::parse(self.function, &self.payload)
    }

    pub fn from_pdu(transaction_id: u16, unit_id: u8, pdu: &Pdu) -> Self {
        let (function, payload) = pdu.encode();
        Self::new(transaction_id, unit_id, function, payload)
    }

    pub fn wire_len(&self) -> usize {
        MBAP_LEN + 1 + self.payload.len()
    }
}

pub fn encode_frame(frame: &ModbusFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.wire_len());
    out.extend_from_slice(&frame.transaction_id.to_be_bytes());
    out.extend_from_slice(&frame.protocol_id.to_be_bytes());
    out.extend_from_slice(&frame.length.to_be_bytes());
    out.push(frame.unit_id);
    out.push(frame.function);
    out.extend_from_slice(&frame.payload);
    out
}

/// Total ADU length announced by a buffer's MBAP header, if complete enough
/// to tell.
pub fn adu_len(buf: &[u8]) -> Option<usize> {
    (buf.len() >= 6).then(|| 6 + usize::from(u16::from_be_bytes([buf[4], buf[5]])))
}

/// Decodes one frame from the start of `buf`, returning it with the number
/// of bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(ModbusFrame, usize), ModbusError> {
    if buf.len() < MBAP_LEN + 1 {
        return Err(ModbusError::ShortBuffer { needed: MBAP_LEN + 1, got: buf.len() });
    }
    let transaction_id = u16::from_be_bytes([buf[0], buf[1]]);
    let protocol_id = u16::from_be_bytes([buf[2], buf[3]]);
    let length = u16::from_be_bytes([buf[4], buf[5]]);
    if protocol_id != 0 {
        return Err(ModbusError::ProtocolId(protocol_id));
    }
    if length < 2 || 6 + usize::from(length) > MAX_ADU_LEN {
        return Err(ModbusError::Length(length));
    }
    let total = 6 + usize::from(length);
    if buf.len() < total {
        return Err(ModbusError::ShortBuffer { needed: total, got: buf.len() });
    }
    let frame = ModbusFrame {
        transaction_id,
        protocol_id,
        length,
        unit_id: buf[6],
        function: buf[7],
        payload: buf[8..total].to_vec(),
    };
    Ok((frame, total))
}

/// Function-level content of a frame. Requests and responses share function
/// codes, so the direction decides which variant a payload parses to; see
/// [`Pdu::parse`] and [`Pdu::parse_response`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pdu {
    ReadRequest { address: u16, count: u16 },
    WriteRequest { address: u16, values: Vec<u16> },
    ReadResponse { values: Vec<u16> },
    WriteResponse { address: u16, count: u16 },
    Exception { function: u8, code: u8 },
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

impl Pdu {
    /// Parses a request PDU.
    pub fn parse(function: u8, payload: &[u8]) -> Result<Self, ModbusError> {
        match function {
            FC_READ_HOLDING => {
                if payload.len() != 4 {
                    return Err(ModbusError::Malformed(format!("read request payload of {} bytes", payload.len())));
                }
                Ok(Pdu::ReadRequest { address: be16(payload, 0), count: be16(payload, 2) })
            }
            FC_WRITE_MULTIPLE => {
                if payload.len() < 5 {
                    return Err(ModbusError::Malformed(format!("write request payload of {} bytes", payload.len())));
                }
                let count = usize::from(be16(payload, 2));
                let bytes = usize::from(payload[4]);
                if bytes != payload.len() - 5 || bytes != 2 * count {
                    return Err(ModbusError::Malformed(format!("write of {count} registers carries {bytes} bytes")));
                }
                let values = (0..count).map(|k| be16(payload, 5 + 2 * k)).collect();
                Ok(Pdu::WriteRequest { address: be16(payload, 0), values })
            }
            f => Err(ModbusError::UnsupportedFunction(f)),
        }
    }

    /// Parses a response PDU, including exception responses.
    pub fn parse_response(function: u8, payload: &[u8]) -> Result<Self, ModbusError> {
        if function & 0x80 != 0 {
            if payload.len() != 1 {
                return Err(ModbusError::Malformed("exception payload".into()));
            }
            return Ok(Pdu::Exception { function: function & 0x7f, code: payload[0] });
        }
        match function {
            FC_READ_HOLDING => {
                let n = payload.first().copied().map(usize::from);
                match n {
                    Some(n) if n % 2 == 0 && payload.len() == n + 1 => {
                        Ok(Pdu::ReadResponse { values: (0..n / 2).map(|k| be16(payload, 1 + 2 * k)).collect() })
                    }
                    _ => Err(ModbusError::Malformed("read response byte count".into())),
                }
            }
            FC_WRITE_MULTIPLE => {
                if payload.len() != 4 {
                    return Err(ModbusError::Malformed("write response payload".into()));
                }
                Ok(Pdu::WriteResponse { address: be16(payload, 0), count: be16(payload, 2) })
            }
            f => Err(ModbusError::UnsupportedFunction(f)),
        }
    }

    pub fn encode(&self) -> (u8, Vec<u8>) {
        let mut p = Vec::new();
        let function = match self {
            Pdu::ReadRequest { address, count } => {
                p.extend_from_slice(&address.to_be_bytes());
                p.extend_from_slice(&count.to_be_bytes());
                FC_READ_HOLDING
            }
            Pdu::WriteRequest { address, values } => {
                p.extend_from_slice(&address.to_be_bytes());
                p.extend_from_slice(&(values.len() as u16).to_be_bytes());
                p.push((2 * values.len()) as u8);
                for v in values {
                    p.extend_from_slice(&v.to_be_bytes());
                }
                FC_WRITE_MULTIPLE
            }
            Pdu::ReadResponse { values } => {
                p.push((2 * values.len()) as u8);
                for v in values {
                    p.extend_from_slice(&v.to_be_bytes());
                }
                FC_READ_HOLDING
            }
            Pdu::WriteResponse { address, count } => {
                p.extend_from_slice(&address.to_be_bytes());
                p.extend_from_slice(&count.to_be_bytes());
                FC_WRITE_MULTIPLE
            }
            Pdu::Exception { function, code } => {
                p.push(*code);
                function | 0x80
            }
        };
        (function, p)
    }
}
