#![allow(dead_code)]

use std::path::PathBuf;

use pnsim::pn_model::{PhaseNoiseModel, PsdSpec};
use statrs::function::erf::erfc;

pub fn q(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Exact bit error rate of unit-energy Gray 16-QAM at the given Es/N0.
pub fn awgn_ber_16qam(es_n0_db: f64) -> f64 {
    let es_n0 = 10f64.powf(es_n0_db / 10.0);
    // half distance over per-dimension noise std: d = 1/sqrt(10), sigma^2 = N0/2
    let x = (2.0 * es_n0 / 10.0).sqrt();
    (3.0 * q(x) + 2.0 * q(3.0 * x) - q(5.0 * x)) / 4.0
}

/// Lowest Es/N0 (dB) where the closed form reaches `target`.
pub fn awgn_requirement_16qam(target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if awgn_ber_16qam(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

pub fn shipped_psd(name: &str) -> PsdSpec {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", "psd", name].iter().collect();
    PsdSpec::load(p).unwrap()
}

pub fn shipped_model(name: &str) -> PhaseNoiseModel {
    PhaseNoiseModel::symmetric(shipped_psd(name))
}

/// `(mean, standard error)` of a sample.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
