use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use crossfit_sc_ffi::*;

fn last_error() -> String {
    let p = cfsc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Column-major controls for a 12-period, 3-unit panel with a wiggly treated unit.
fn toy_data() -> (Vec<f64>, Vec<f64>) {
    let t = 12;
    let mut controls = Vec::new();
    for i in 0..3 {
        for s in 0..t {
            controls.push((s as f64 * (0.7 + i as f64)).sin() + i as f64);
        }
    }
    let treated = (0..t)
        .map(|s| 0.5 * controls[s] + 0.5 * controls[t + s] + 0.1 * ((s * s) % 5) as f64)
        .collect();
    (treated, controls)
}

#[test]
fn crossfit_round_trip_through_handles() {
    let (y, x) = toy_data();
    let mut panel = ptr::null_mut();
    let status = unsafe { cfsc_panel_from_data(y.as_ptr(), x.as_ptr(), 12, 3, 8, &mut panel) };
    assert_eq!(status, CfscStatus::Ok);
    assert_eq!(unsafe { cfsc_panel_periods(panel) }, 12);
    assert_eq!(unsafe { cfsc_panel_n_controls(panel) }, 3);

    let mut res = ptr::null_mut();
    let status = unsafe { cfsc_crossfit(panel, CfscMethod::Sc, 2, 0.1, f64::NAN, 0.0, &mut res) };
    assert_eq!(status, CfscStatus::Ok);
    let att = unsafe { cfsc_result_att(res) };
    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(unsafe { cfsc_result_ci(res, &mut lo, &mut hi) }, CfscStatus::Ok);
    assert!(lo < att && att < hi);
    assert!(unsafe { cfsc_result_sigma_hat(res) } > 0.0);
    let p = unsafe { cfsc_result_p_value(res) };
    assert!((0.0..=1.0).contains(&p));

    // the handle must agree with the library called directly
    let direct = {
        let yv = csv_panel(&y, &x);
        crossfit_sc::crossfit_att(&yv, &crossfit_sc::EstimationConfig::new(crossfit_sc::Method::Sc, 2)).unwrap()
    };
    assert_eq!(direct.tau_hat, att);
    assert_eq!(direct.ci, (lo, hi));

    let json = unsafe { cfsc_result_to_json(res) };
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["method"], "SC");
    assert_eq!(value["K"], 2);
    unsafe {
        cfsc_string_free(json);
        cfsc_result_free(res);
        cfsc_panel_free(panel);
    }
}

fn csv_panel(y: &[f64], x: &[f64]) -> crossfit_sc::Panel {
    let t = y.len();
    let mut csv = String::from("t,treated,c1,c2,c3\n");
    for s in 0..t {
        csv.push_str(&format!("{},{},{},{},{}\n", s + 1, y[s], x[s], x[t + s], x[2 * t + s]));
    }
    crossfit_sc::load_panel(csv.as_bytes(), "treated", 8).unwrap()
}

#[test]
fn csv_loading_and_errors() {
    let (y, x) = toy_data();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    csv_panel(&y, &x).write_csv(std::fs::File::create(&path).unwrap()).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let treated = CString::new("treated").unwrap();
    let mut panel = ptr::null_mut();
    assert_eq!(unsafe { cfsc_panel_from_csv(cpath.as_ptr(), treated.as_ptr(), 8, &mut panel) }, CfscStatus::Ok);
    assert_eq!(unsafe { cfsc_panel_n_controls(panel) }, 3);
    unsafe { cfsc_panel_free(panel) };

    let missing = CString::new("nope").unwrap();
    let mut panel = ptr::null_mut();
    let status = unsafe { cfsc_panel_from_csv(cpath.as_ptr(), missing.as_ptr(), 8, &mut panel) };
    assert_eq!(status, CfscStatus::InvalidArgument);
    assert!(last_error().contains("nope"));
    assert!(panel.is_null());

    let nofile = CString::new(dir.path().join("absent.csv").to_str().unwrap()).unwrap();
    let status = unsafe { cfsc_panel_from_csv(nofile.as_ptr(), treated.as_ptr(), 8, &mut panel) };
    assert_eq!(status, CfscStatus::Io);

    let status = unsafe { cfsc_panel_from_csv(ptr::null(), treated.as_ptr(), 8, &mut panel) };
    assert_eq!(status, CfscStatus::NullPointer);
}

#[test]
fn invalid_config_and_degenerate_status() {
    let (y, x) = toy_data();
    let mut panel = ptr::null_mut();
    unsafe { cfsc_panel_from_data(y.as_ptr(), x.as_ptr(), 12, 3, 8, &mut panel) };
    let mut res = ptr::null_mut();
    let status = unsafe { cfsc_crossfit(panel, CfscMethod::Mcl, 2, 0.1, 0.5, 0.0, &mut res) };
    assert_eq!(status, CfscStatus::InvalidArgument);
    assert!(res.is_null());
    let status = unsafe { cfsc_crossfit(panel, CfscMethod::Did, 1, 0.1, f64::NAN, 0.0, &mut res) };
    assert_eq!(status, CfscStatus::InvalidArgument);
    unsafe { cfsc_panel_free(panel) };

    // treated = mean of controls + 2 exactly: every fold recovers the same effect
    let t = 10;
    let x: Vec<f64> = (0..2 * t).map(|j| ((j * 7) % 5) as f64 + 0.3 * j as f64).collect();
    let y: Vec<f64> = (0..t).map(|s| 0.5 * (x[s] + x[t + s]) + 2.0).collect();
    let mut panel = ptr::null_mut();
    unsafe { cfsc_panel_from_data(y.as_ptr(), x.as_ptr(), t, 2, 6, &mut panel) };
    let status = unsafe { cfsc_crossfit(panel, CfscMethod::Did, 3, 0.1, f64::NAN, 0.0, &mut res) };
    assert_eq!(status, CfscStatus::DegenerateVariance);
    assert!(!res.is_null());
    assert!(unsafe { cfsc_result_att(res) }.abs() < 1e-9);
    assert!(unsafe { cfsc_result_sigma_hat(res) }.is_nan());
    let (mut lo, mut hi) = (0.0, 0.0);
    unsafe { cfsc_result_ci(res, &mut lo, &mut hi) };
    assert!(lo.is_nan() && hi.is_nan());
    let json = unsafe { cfsc_result_to_json(res) };
    let value: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    assert!(value["ci"].is_null());
    unsafe {
        cfsc_string_free(json);
        cfsc_result_free(res);
        cfsc_panel_free(panel);
    }
}

#[test]
fn distribution_wrappers() {
    let mut v = 0.0;
    assert_eq!(unsafe { cfsc_t_quantile(0.95, 1, &mut v) }, CfscStatus::Ok);
    assert!((v - (std::f64::consts::PI * 0.45).tan()).abs() < 1e-9);
    assert_eq!(unsafe { cfsc_t_cdf(v, 1, &mut v) }, CfscStatus::Ok);
    assert!((v - 0.95).abs() < 1e-12);
    assert_eq!(unsafe { cfsc_t_quantile(1.5, 3, &mut v) }, CfscStatus::InvalidArgument);
    assert!(last_error().contains("1.5"));
    assert_eq!(unsafe { cfsc_t_cdf(0.0, 3, ptr::null_mut()) }, CfscStatus::NullPointer);
    assert_eq!(unsafe { cfsc_expected_ci_length(2, 0.1, 15.0 / 28.0, 1.0, &mut v) }, CfscStatus::Ok);
    assert!((v - 12.487).abs() < 0.01);
}

#[test]
fn null_handles_are_tolerated() {
    unsafe {
        cfsc_panel_free(ptr::null_mut());
        cfsc_result_free(ptr::null_mut());
        cfsc_string_free(ptr::null_mut());
        assert!(cfsc_result_att(ptr::null()).is_nan());
        assert_eq!(cfsc_panel_periods(ptr::null()), 0);
        assert!(cfsc_result_to_json(ptr::null()).is_null());
    }
    let version = unsafe { CStr::from_ptr(cfsc_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

fn header_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include").join("crossfit_sc.h")
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(header_path()).unwrap();
    for name in [
        "cfsc_last_error",
        "cfsc_version",
        "cfsc_panel_from_csv",
        "cfsc_panel_from_data",
        "cfsc_panel_periods",
        "cfsc_panel_n_controls",
        "cfsc_panel_free",
        "cfsc_crossfit",
        "cfsc_result_att",
        "cfsc_result_sigma_hat",
        "cfsc_result_p_value",
        "cfsc_result_ci",
        "cfsc_result_to_json",
        "cfsc_result_free",
        "cfsc_string_free",
        "cfsc_t_cdf",
        "cfsc_t_quantile",
        "cfsc_expected_ci_length",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct CfscPanel CfscPanel;"));
    assert!(header.contains("CFSC_STATUS_DEGENERATE_VARIANCE = 4"));
}

#[test]
fn header_compiles_as_c() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"crossfit_sc.h\"\nint main(void) { CfscPanel *p = 0; cfsc_panel_free(p); return CFSC_STATUS_OK; }\n",
    )
    .unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header_path().parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
