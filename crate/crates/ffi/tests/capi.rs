use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr::null_mut;

use dcgrid_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe {
        dcg_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn default_scenario() -> *mut DcgScenario {
    let mut s = null_mut();
    assert_eq!(unsafe { dcg_scenario_default(1, &mut s) }, DcgStatus::Ok);
    s
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(dcg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn short_virtual_run_reports_metrics() {
    let s = default_scenario();
    unsafe {
        assert_eq!(dcg_scenario_set_duration(s, 1800.0), DcgStatus::Ok);
        let class = CString::new("DS1").unwrap();
        assert_eq!(dcg_scenario_set_network(s, class.as_ptr(), 0.25), DcgStatus::Ok);
        let mut m = DcgRunSummary::default();
        assert_eq!(dcg_run_virtual(s, &mut m), DcgStatus::Ok, "{}", last_error());
        assert_eq!(m.samples, 180);
        assert_eq!(m.ticks, 5);
        assert_eq!(m.soc_violations + m.voltage_violations + m.balance_violations, 0);
        // short polling frames, so well under the 178-byte calibration delay
        assert!(m.delay_mean_ms > 2.0 && m.delay_mean_ms < 3.1, "{m:?}");
        dcg_scenario_free(s);
    }
}

#[test]
fn bad_arguments_report_status_and_message() {
    let s = default_scenario();
    unsafe {
        let class = CString::new("DS9").unwrap();
        assert_eq!(dcg_scenario_set_network(s, class.as_ptr(), 0.0), DcgStatus::InvalidArgument);
        assert!(last_error().contains("DS9"));
        let ds0 = CString::new("DS0").unwrap();
        assert_eq!(dcg_scenario_set_network(s, ds0.as_ptr(), 1.0), DcgStatus::InvalidArgument);
        assert_eq!(dcg_scenario_set_duration(null_mut(), 1.0), DcgStatus::NullPointer);
        let missing = CString::new("/nonexistent/scenario.toml").unwrap();
        let mut out = null_mut();
        assert_eq!(dcg_scenario_load(missing.as_ptr(), &mut out), DcgStatus::InvalidScenario);
        assert!(out.is_null());
        dcg_scenario_free(s);
        dcg_scenario_free(null_mut());
    }
}

#[test]
fn scenario_save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("s.toml").to_str().unwrap()).unwrap();
    let s = default_scenario();
    unsafe {
        assert_eq!(dcg_scenario_set_duration(s, 600.0), DcgStatus::Ok);
        assert_eq!(dcg_scenario_save(s, path.as_ptr()), DcgStatus::Ok);
        let mut back = null_mut();
        assert_eq!(dcg_scenario_load(path.as_ptr(), &mut back), DcgStatus::Ok, "{}", last_error());
        let (mut a, mut b) = (DcgRunSummary::default(), DcgRunSummary::default());
        assert_eq!(dcg_run_virtual(s, &mut a), DcgStatus::Ok);
        assert_eq!(dcg_run_virtual(back, &mut b), DcgStatus::Ok);
        assert_eq!(a, b);
        dcg_scenario_free(s);
        dcg_scenario_free(back);
    }
}

#[test]
fn plant_follows_dispatch_commands() {
    let s = default_scenario();
    unsafe {
        let mut p = null_mut();
        assert_eq!(dcg_plant_new(s, &mut p), DcgStatus::Ok);
        let mut applied = 0;
        assert_eq!(dcg_plant_dispatch(p, 2, -1, &mut applied), DcgStatus::Ok);
        assert_eq!(applied, -1);
        assert_eq!(dcg_plant_dispatch(p, 3, 2, null_mut()), DcgStatus::InvalidArgument);
        assert_eq!(dcg_plant_advance(p, 1.0), DcgStatus::Ok);
        let (mut t, mut v, mut pcc, mut n) = (0.0, 0.0, 0.0, 0usize);
        let mut buses = [DcgBusReading::default(); 4];
        assert_eq!(dcg_plant_measure(p, &mut t, &mut v, &mut pcc, buses.as_mut_ptr(), 4, &mut n), DcgStatus::Ok);
        assert_eq!(n, 4);
        assert!((t - 1.0).abs() < 1e-9);
        assert!((v - 400.0).abs() < 1.0);
        // a 1 kWh battery charges at 0.4 kW
        assert!((buses[0].p_bess + 400.0).abs() < 4.0, "{:?}", buses[0]);
        assert!(buses[1].soc.is_finite());
        assert_eq!(dcg_plant_measure(p, &mut t, &mut v, &mut pcc, buses.as_mut_ptr(), 2, &mut n), DcgStatus::BufferTooSmall);
        assert_eq!(n, 4);
        dcg_plant_free(p);
        dcg_scenario_free(s);
    }
}

#[test]
fn dispatch_charges_cheap_and_discharges_dear() {
    let battery = DcgBattery { capacity_wh: 1000.0, soc_min: 0.15, soc_max: 0.95, eta: 0.95, p_dispatch_w: 400.0, e0_wh: 150.0 };
    let c_grid = [0.1, 0.3];
    let c_bess = [0.0, 0.0];
    let load = [500.0, 500.0];
    let mut plan = [9i32; 2];
    let mut cost = 0.0;
    let status = unsafe {
        dcg_dispatch(&battery, 1, c_grid.as_ptr(), c_bess.as_ptr(), load.as_ptr(), 2, plan.as_mut_ptr(), &mut cost)
    };
    assert_eq!(status, DcgStatus::Ok, "{}", last_error());
    assert_eq!(plan, [-1, 1]);
    let expected = (0.1 * 900.0 + 0.3 * 100.0) / 1000.0;
    assert!((cost - expected).abs() < 1e-12, "{cost}");

    let bad = DcgBattery { e0_wh: 10.0, ..battery };
    let status = unsafe {
        dcg_dispatch(&bad, 1, c_grid.as_ptr(), c_bess.as_ptr(), load.as_ptr(), 2, plan.as_mut_ptr(), &mut cost)
    };
    assert_eq!(status, DcgStatus::Optimization);
}

#[test]
fn modbus_request_matches_reference_bytes() {
    let mut buf = [0u8; 12];
    let mut n = 0;
    assert_eq!(unsafe { dcg_modbus_read_request(7, 3, 0, 6, buf.as_mut_ptr(), buf.len(), &mut n) }, DcgStatus::Ok);
    assert_eq!(&buf[..n], &[0x00, 0x07, 0x00, 0x00, 0x00, 0x06, 0x03, 0x03, 0x00, 0x00, 0x00, 0x06]);
    let mut h = DcgFrameHeader::default();
    assert_eq!(unsafe { dcg_modbus_decode(buf.as_ptr(), n, &mut h) }, DcgStatus::Ok);
    assert_eq!(h, DcgFrameHeader { transaction_id: 7, unit_id: 3, function: 3, frame_len: 12 });
    assert_eq!(unsafe { dcg_modbus_decode(buf.as_ptr(), 5, &mut h) }, DcgStatus::Protocol);
    let mut small = [0u8; 4];
    assert_eq!(
        unsafe { dcg_modbus_read_request(7, 3, 0, 6, small.as_mut_ptr(), small.len(), &mut n) },
        DcgStatus::BufferTooSmall
    );
    assert_eq!(n, 12);
}

/// Compiles `tests/c/smoke.c` against the generated header and the static
/// library, then runs it.
#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libdcgrid_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "{cc} failed");
    let out = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("applied=-1 n=4") && stdout.contains("frame=12 txn=7 unit=3"), "{stdout}");
}
