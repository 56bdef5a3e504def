use pnsim_wasm_demo::{ber_point_json, compare_json, psd_view_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn psd_view_defaults() {
    let v = parse(&psd_view_json("").unwrap());
    let f = v["freq_hz"].as_array().unwrap();
    let p = v["psd_dbc_hz"].as_array().unwrap();
    assert_eq!(f.len(), p.len());
    assert!((f[0].as_f64().unwrap() - 1e3).abs() < 1e-6);
    assert!((f.last().unwrap().as_f64().unwrap() - 245.76e6).abs() < 1.0);
    // the shipped mask falls off towards high offsets
    assert!(p[0].as_f64().unwrap() > p.last().unwrap().as_f64().unwrap() + 20.0);
    assert_eq!(v["phase_rad"].as_array().unwrap().len(), 512);
    assert!(v["phase_rms_rad"].as_f64().unwrap() > 0.0);
}

#[test]
fn psd_view_zero_power_and_carrier() {
    let req = r#"{"psd": {"psd0_dbc_hz": "-inf", "f_carrier_ref_hz": 1e9, "zeros": [], "poles": []}}"#;
    let v = parse(&psd_view_json(req).unwrap());
    assert!(v["phase_rad"].as_array().unwrap().iter().all(|x| x.as_f64() == Some(0.0)));
    assert_eq!(v["psd_dbc_hz"][0].as_f64(), Some(-300.0));

    let a = parse(&psd_view_json(r#"{"carrier_hz": 140e9}"#).unwrap());
    let b = parse(&psd_view_json(r#"{"carrier_hz": 280e9}"#).unwrap());
    let d = b["psd_dbc_hz"][10].as_f64().unwrap() - a["psd_dbc_hz"][10].as_f64().unwrap();
    assert!((d - 20.0 * 2f64.log10()).abs() < 1e-9, "{d}");
}

#[test]
fn compare_returns_all_estimators() {
    let v = parse(&compare_json(r#"{"link": {"snr_db": 30, "seed": 4}}"#).unwrap());
    let labels: Vec<&str> = v["estimates"].as_array().unwrap().iter().map(|e| e["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["cpee", "ci", "li", "dct5", "if"]);
    assert_eq!(v["truth_rad"].as_array().unwrap().len(), 256);
    assert_eq!(v["pilot_index"].as_array().unwrap().len(), 16);
    for e in v["estimates"].as_array().unwrap() {
        assert_eq!(e["phase_rad"].as_array().unwrap().len(), 256);
        let mse = e["mse"].as_f64().unwrap();
        assert!(mse.is_finite() && mse < 0.5, "{}: {mse}", e["label"]);
    }
}

#[test]
fn ber_point_is_reproducible() {
    let req = r#"{"link": {"snr_db": 10, "seed": 3}, "estimator": {"name": "cpee"}, "frames": 4}"#;
    let a = ber_point_json(req).unwrap();
    assert_eq!(a, ber_point_json(req).unwrap());
    let v = parse(&a);
    assert_eq!(v["n_frames"], 4);
    let ber = v["ber"].as_f64().unwrap();
    assert!(ber > 0.0 && ber < 0.2, "{ber}");
}

#[test]
fn bad_requests_are_errors() {
    assert!(psd_view_json(r#"{"n_fft": 100}"#).is_err());
    assert!(compare_json(r#"{"link": {"pattern": {"type": "distributed", "l": 3}}}"#).is_err());
    assert!(ber_point_json(r#"{"estimator": {"name": "if"}, "training_frames": 5}"#).is_err());
    assert!(ber_point_json(r#"{"bogus": 1}"#).is_err());
}
