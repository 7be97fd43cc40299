use super::*;
use crate::model::ScenarioConfig;
use crate::plant::{Plant, PlantCommand};

// Reference ADUs produced by pymodbus 3.16.1 (`ReadHoldingRegistersRequest`
// and friends, `FramerSocket.buildFrame`).
const READ_REQ: &str = "000700000006030300000006";
const WRITE_REQ: &str = "12340000000b0210000a000204ffff0001";
const READ_RESP: &str = "00070000000f02030c0fa0000000a00000138801f4";
const WRITE_RESP: &str = "123400000006021000 0a0002";
const EXC_RESP: &str = "000900000003 03e301";

fn hex_bytes(s: &str) -> Vec<u8> {
    hex::decode(s.replace(' ', "")).unwrap()
}

#[test]
fn read_request_matches_reference() {
    let frame = ModbusFrame::from_pdu(7, 3, &Pdu::ReadRequest { address: 0, count: 6 });
    assert_eq!(encode_frame(&frame), hex_bytes(READ_REQ));
}

#[test]
fn write_request_matches_reference() {
    let frame = ModbusFrame::from_pdu(0x1234, 2, &Pdu::WriteRequest { address: 10, values: vec![0xffff, 1] });
    assert_eq!(encode_frame(&frame), hex_bytes(WRITE_REQ));
    let (back, used) = decode_frame(&hex_bytes(WRITE_REQ)).unwrap();
    assert_eq!(used, 17);
    assert_eq!(back.pdu().unwrap(), Pdu::WriteRequest { address: 10, values: vec![0xffff, 1] });
}

#[test]
fn responses_match_reference() {
    let read = ModbusFrame::from_pdu(7, 2, &Pdu::ReadResponse { values: vec![4000, 0, 160, 0, 5000, 500] });
    assert_eq!(encode_frame(&read), hex_bytes(READ_RESP));
    let write = ModbusFrame::from_pdu(0x1234, 2, &Pdu::WriteResponse { address: 10, count: 2 });
    assert_eq!(encode_frame(&write), hex_bytes(WRITE_RESP));
    let exc = ModbusFrame::from_pdu(9, 3, &Pdu::Exception { function: 0x63, code: 1 });
    assert_eq!(encode_frame(&exc), hex_bytes(EXC_RESP));
    let (f, _) = decode_frame(&hex_bytes(EXC_RESP)).unwrap();
    assert_eq!(Pdu::parse_response(f.function, &f.payload).unwrap(), Pdu::Exception { function: 0x63, code: 1 });
}

#[test]
fn decode_errors() {
    assert!(matches!(decode_frame(&[0, 1, 0]), Err(ModbusError::ShortBuffer { .. })));
    let mut bad = hex_bytes(READ_REQ);
    bad[3] = 1;
    assert_eq!(decode_frame(&bad), Err(ModbusError::ProtocolId(1)));
    let truncated = &hex_bytes(READ_REQ)[..10];
    assert!(matches!(decode_frame(truncated), Err(ModbusError::ShortBuffer { needed: 12, got: 10 })));
    assert_eq!(Pdu::parse(0x63, &[]), Err(ModbusError::UnsupportedFunction(0x63)));
}

#[test]
fn register_encoding_examples() {
    assert_eq!(reg_encode(-1.0, RegKind::Command), (0xffff, false));
    assert_eq!(reg_encode(400.0, RegKind::Voltage), (4000, false));
    assert_eq!(reg_encode(0.9531, RegKind::Soc), (9531, false));
    assert_eq!(reg_encode(-380.0, RegKind::SignedPower), ((-380i16) as u16, false));
    assert_eq!(reg_encode(70_000.0, RegKind::Power), (65_535, true));
    assert_eq!(reg_encode(-40_000.0, RegKind::SignedPower), (0x8000, true));
    assert_eq!(reg_encode(1.2, RegKind::Soc), (10_000, true));
    assert_eq!(reg_encode(f64::NAN, RegKind::Voltage), (0, true));
    assert_eq!(reg_decode(0xffff, RegKind::Command), -1.0);
    assert_eq!(reg_decode(9531, RegKind::Soc), 0.9531);
}

#[test]
fn register_round_trip_is_exhaustive() {
    for kind in [RegKind::Voltage, RegKind::Power, RegKind::SignedPower, RegKind::Energy] {
        for raw in 0..=u16::MAX {
            assert_eq!(reg_encode(reg_decode(raw, kind), kind), (raw, false), "{kind:?} {raw}");
        }
    }
    for raw in 0..=10_000u16 {
        assert_eq!(reg_encode(reg_decode(raw, RegKind::Soc), RegKind::Soc), (raw, false));
    }
}

fn init_view() -> (RegisterView, SlaveConfig, f64) {
    let config = ScenarioConfig::table1(1);
    let plant = Plant::new(&config).unwrap();
    let snap = plant.snapshot();
    let load = snap.bus(2).unwrap().p_load;
    (RegisterView::new(RegisterImage::from_snapshot(&snap, &[])), SlaveConfig { battery_units: vec![2, 3, 4, 5] }, load)
}

fn request(unit: u8, pdu: Pdu) -> ModbusFrame {
    ModbusFrame::from_pdu(1, unit, &pdu)
}

#[test]
fn slave_serves_initial_state() {
    let (view, cfg, load) = init_view();
    let r = handle_request(&view, &cfg, &request(2, Pdu::ReadRequest { address: 0, count: 6 }));
    let Pdu::ReadResponse { values } = Pdu::parse_response(r.response.function, &r.response.payload).unwrap() else {
        panic!("not a read response")
    };
    let drop = 1.257 * load / 400.0;
    assert_eq!(values[0], reg_encode(400.0 - drop, RegKind::Voltage).0);
    assert_eq!(&values[1..], &[0, load.round() as u16, 0, 5000, 500]);
}

#[test]
fn slave_routes_writes_and_rejects_read_only() {
    let (view, cfg, _) = init_view();
    let r = handle_request(&view, &cfg, &request(2, Pdu::WriteRequest { address: 10, values: vec![0xffff] }));
    assert_eq!(r.commands, vec![PlantCommand::Dispatch { bus: 2, d: -1 }]);
    assert_eq!(r.response.function, FC_WRITE_MULTIPLE);

    let r = handle_request(&view, &cfg, &request(2, Pdu::WriteRequest { address: 0, values: vec![1] }));
    assert_eq!(r.response.function, 0x90);
    assert_eq!(r.response.payload, vec![exception::ILLEGAL_DATA_ADDRESS]);
    assert!(r.commands.is_empty());

    let r = handle_request(&view, &cfg, &request(3, Pdu::WriteRequest { address: 10, values: vec![2] }));
    assert_eq!(r.response.payload, vec![exception::ILLEGAL_DATA_VALUE]);

    let r = handle_request(&view, &cfg, &request(4, Pdu::WriteRequest { address: 11, values: vec![0] }));
    assert_eq!(r.commands, vec![PlantCommand::Breaker { bus: 4, closed: false }]);
}

#[test]
fn slave_exceptions() {
    let (view, cfg, _) = init_view();
    let unsupported = ModbusFrame::new(9, 3, 0x63, vec![]);
    let r = handle_request(&view, &cfg, &unsupported);
    assert_eq!(encode_frame(&r.response), hex_bytes(EXC_RESP));
    let r = handle_request(&view, &cfg, &request(9, Pdu::ReadRequest { address: 0, count: 6 }));
    assert_eq!(r.response.payload, vec![exception::ILLEGAL_DATA_ADDRESS]);
    let r = handle_request(&view, &cfg, &request(2, Pdu::ReadRequest { address: 8, count: 6 }));
    assert_eq!(r.response.payload, vec![exception::ILLEGAL_DATA_ADDRESS]);
    let r = handle_request(&view, &cfg, &request(2, Pdu::ReadRequest { address: 0, count: 0 }));
    assert_eq!(r.response.payload, vec![exception::ILLEGAL_DATA_VALUE]);
    let malformed = ModbusFrame::new(5, 2, FC_READ_HOLDING, vec![0, 0]);
    let r = handle_request(&view, &cfg, &malformed);
    assert!(r.close);
    let r = handle_request(&view, &cfg, &request(1, Pdu::ReadRequest { address: 0, count: 4 }));
    let Pdu::ReadResponse { values } = Pdu::parse_response(r.response.function, &r.response.payload).unwrap() else {
        panic!()
    };
    assert_eq!(values[0], 4000);
}

fn answer(view: &RegisterView, bytes: &[u8]) -> Vec<u8> {
    let (frame, _) = decode_frame(bytes).unwrap();
    encode_frame(&handle_request(view, &SlaveConfig { battery_units: vec![2, 3, 4, 5] }, &frame).response)
}

#[test]
fn master_cycle_and_write_priority() {
    let (view, _, _) = init_view();
    let mut m = MasterSession::new(MasterConfig::new(vec![2, 3]));
    assert!(m.start_cycle());
    assert!(!m.start_cycle());
    m.queue_write(2, reg::COMMAND, vec![1]);
    let first = m.poll_transmit(0.0).unwrap();
    assert_eq!(first[7], FC_WRITE_MULTIPLE);
    assert!(m.poll_transmit(0.5).is_none(), "strict request-response");
    m.handle_response(1.0, &answer(&view, &first));
    let read = m.poll_transmit(1.0).unwrap();
    m.handle_response(3.0, &answer(&view, &read));
    assert_eq!(m.latest(2).unwrap().regs[4], 5000);
    assert_eq!(m.age_ms(2, 10.0), Some(9.0));
    assert_eq!(m.latest(2).unwrap().round_trip_ms(), 2.0);
}

#[test]
fn late_response_to_retried_request_is_ignored() {
    let (view, _, _) = init_view();
    let mut m = MasterSession::new(MasterConfig::new(vec![2]));
    m.start_cycle();
    let first = m.poll_transmit(0.0).unwrap();
    m.handle_timeout(250.0);
    let retry = m.poll_transmit(250.0).unwrap();
    assert_ne!(first[..2], retry[..2], "retry uses a fresh transaction id");
    // the answer to the first attempt arrives after the retry went out
    m.handle_response(260.0, &answer(&view, &first));
    assert!(m.latest(2).is_none());
    assert!(m.take_events().iter().any(|e| matches!(e, MasterEvent::Unmatched { .. })));
    m.handle_response(270.0, &answer(&view, &retry));
    assert_eq!(m.latest(2).unwrap().sent_ms, 250.0);
}

#[test]
fn retries_are_bounded() {
    let mut m = MasterSession::new(MasterConfig::new(vec![2]));
    m.start_cycle();
    m.poll_transmit(0.0).unwrap();
    m.handle_timeout(300.0);
    m.poll_transmit(300.0).unwrap();
    m.handle_timeout(600.0);
    assert!(m.poll_transmit(600.0).is_none());
    let timeouts: Vec<bool> = m
        .take_events()
        .into_iter()
        .filter_map(|e| if let MasterEvent::Timeout { retry, .. } = e { Some(retry) } else { None })
        .collect();
    assert_eq!(timeouts, vec![true, false]);
    assert!(m.idle());
}
