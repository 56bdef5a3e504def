//! Browser demo for `pnsim`.
//!
//! Each exported function takes a JSON request and returns a JSON reply.
//! Requests other than the PSD view nest the link parameters under `link`.
//! The plain `*_json` functions carry the logic and run natively too; the
//! `#[wasm_bindgen]` wrappers only convert errors into JS exceptions.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use pnsim::channel::{add_noise_in_place, SnrPoint};
use pnsim::covariance::train_covariances;
use pnsim::engine::{run_point, EstimatorChoice, LinkSetup, StopRule, TrialMetrics};
use pnsim::estimators::{Method, PhaseTracker, PhiAvMode};
use pnsim::oracle::{phi_prime_from_alpha, Oracle};
use pnsim::pn_model::{PhaseNoiseModel, PsdSpec};
use pnsim::ptrs::{pilot_sequence, PatternSpec};
use pnsim::rng::{derive_seed, rng_from};
use pnsim::waveform::{random_block, FrameConfig};
use pnsim::C64;

const DEFAULT_PSD: &str = include_str!("../../../configs/psd/pn_140ghz.json");
const PSD_POINTS: usize = 200;

/// Link parameters shared by all requests.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Link {
    pub psd: Option<PsdSpec>,
    pub carrier_hz: Option<f64>,
    pub n_fft: usize,
    pub n_active: usize,
    pub n_symbols: usize,
    pub mod_order: u32,
    pub fs: f64,
    pub pattern: PatternSpec,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for Link {
    fn default() -> Self {
        Self {
            psd: None,
            carrier_hz: None,
            n_fft: 512,
            n_active: 256,
            n_symbols: 2,
            mod_order: 4,
            fs: 491.52e6,
            pattern: PatternSpec::Distributed { l: 16 },
            snr_db: 20.0,
            seed: 1,
        }
    }
}

impl Link {
    fn psd(&self) -> pnsim::Result<PsdSpec> {
        let spec = match &self.psd {
            Some(p) => p.clone(),
            None => PsdSpec::from_json(DEFAULT_PSD)?,
        };
        match self.carrier_hz {
            Some(f) => spec.carrier_scale(f),
            None => Ok(spec),
        }
    }

    fn frame(&self, n_symbols: usize) -> pnsim::Result<FrameConfig> {
        let cfg = FrameConfig {
            n_fft: self.n_fft,
            n_active: self.n_active,
            n_symbols,
            mod_order: self.mod_order,
            fs: self.fs,
            ..FrameConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Serialize)]
pub struct PsdView {
    pub freq_hz: Vec<f64>,
    pub psd_dbc_hz: Vec<f64>,
    pub time_us: Vec<f64>,
    pub phase_rad: Vec<f64>,
    pub phase_rms_rad: f64,
}

/// PSD curve on a log grid up to `fs/2` and one symbol of phase trace.
pub fn psd_view_json(request: &str) -> pnsim::Result<String> {
    let link: Link = parse(request)?;
    let spec = link.psd()?;
    let frame = link.frame(1)?;
    let (lo, hi) = (1e3f64.log10(), (frame.fs / 2.0).log10());
    let freq_hz: Vec<f64> = (0..PSD_POINTS)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (PSD_POINTS - 1) as f64))
        .collect();
    let psd_dbc_hz = freq_hz.iter().map(|&f| spec.eval_db(f)).collect::<pnsim::Result<Vec<_>>>()?;
    let trace = PhaseNoiseModel::symmetric(spec).frame_trace(frame.n_fft, frame.fs, link.seed)?;
    let view = PsdView {
        freq_hz,
        psd_dbc_hz: psd_dbc_hz.into_iter().map(finite_or_floor).collect(),
        time_us: (0..trace.len()).map(|i| i as f64 / frame.fs * 1e6).collect(),
        phase_rms_rad: trace.variance().sqrt(),
        phase_rad: trace.into_samples(),
    };
    Ok(serde_json::to_string(&view)?)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareRequest {
    pub link: Link,
    pub n_d: usize,
    pub training_frames: usize,
}

impl Default for CompareRequest {
    fn default() -> Self {
        Self { link: Link::default(), n_d: 5, training_frames: 100 }
    }
}

#[derive(Debug, Serialize)]
pub struct EstimateCurve {
    pub label: String,
    pub phase_rad: Vec<f64>,
    pub mse: f64,
}

#[derive(Debug, Serialize)]
pub struct CompareView {
    pub pilot_index: Vec<usize>,
    pub truth_rad: Vec<f64>,
    pub estimates: Vec<EstimateCurve>,
}

/// Run every estimator on one received symbol and return the phase tracks.
pub fn compare_json(request: &str) -> pnsim::Result<String> {
    let req: CompareRequest = parse(request)?;
    let link = &req.link;
    let frame = link.frame(1)?;
    let pattern = link.pattern.build(frame.n_active)?;
    let pn = PhaseNoiseModel::symmetric(link.psd()?);
    let snr = SnrPoint::new(link.snr_db)?;
    let setup = LinkSetup::new(frame.clone(), pn.clone());
    let sigma2 = setup.symbol_noise_variance(snr);

    let trace = pn.frame_trace(frame.symbol_len(), frame.fs, derive_seed(link.seed, &[1]))?;
    let phi = &trace.samples()[frame.body_range(0)];
    let pilots = pilot_sequence(pattern.k(), derive_seed(link.seed, &[2]))?;
    let mut block = random_block(frame.n_active, frame.mod_order, derive_seed(link.seed, &[3]))?;
    for (&i, &p) in pattern.indices().iter().zip(&pilots) {
        block[i] = p;
    }
    let oracle = Oracle::new(&frame)?;
    let mut r = oracle.received(phi, &block)?;
    add_noise_in_place(&mut r, sigma2, &mut rng_from(derive_seed(link.seed, &[4])));
    let (truth, _) = phi_prime_from_alpha(&oracle.alpha(phi)?);

    let cov = train_covariances(&frame, &pn, req.training_frames, sigma2, derive_seed(link.seed, &[5]))?;
    let methods = [
        Method::Cpee,
        Method::Ci,
        Method::Li,
        Method::Dct { n_d: req.n_d.clamp(1, pattern.k()), phi_av: PhiAvMode::Derotated },
        Method::If,
    ];

    let mut estimates = Vec::new();
    for m in methods {
        let mut tracker = PhaseTracker::new(m, &pattern, Some(&cov))?;
        let est = tracker.estimate(&r, &pilots)?;
        let phase_rad: Vec<f64> = (0..frame.n_active)
            .map(|i| if est.len() == 1 { est.phi_hat[0] } else { est.phi_hat[i] })
            .collect();
        let mse = phase_rad
            .iter()
            .zip(&truth)
            .map(|(&a, &b)| (C64::from_polar(1.0, a) - C64::from_polar(1.0, b)).norm_sqr())
            .sum::<f64>()
            / frame.n_active as f64;
        estimates.push(EstimateCurve { label: m.label(), phase_rad, mse });
    }
    let view = CompareView { pilot_index: pattern.indices().to_vec(), truth_rad: truth, estimates };
    Ok(serde_json::to_string(&view)?)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BerRequest {
    pub link: Link,
    pub estimator: EstimatorChoice,
    pub frames: usize,
    pub training_frames: usize,
}

impl Default for BerRequest {
    fn default() -> Self {
        Self {
            link: Link::default(),
            estimator: EstimatorChoice::Li,
            frames: 20,
            training_frames: 100,
        }
    }
}

/// One Monte Carlo operating point with a fixed frame budget.
pub fn ber_point_json(request: &str) -> pnsim::Result<String> {
    let req: BerRequest = parse(request)?;
    let link = &req.link;
    let frame = link.frame(link.n_symbols)?;
    let pattern = link.pattern.build(frame.n_active)?;
    let mut setup = LinkSetup::new(frame.clone(), PhaseNoiseModel::symmetric(link.psd()?));
    setup.stop = StopRule::fixed(req.frames.max(1));
    if req.estimator.needs_covariance() {
        setup.covariance = Some(train_covariances(
            &frame,
            &setup.pn,
            req.training_frames,
            0.0,
            derive_seed(link.seed, &[5]),
        )?);
    }
    let m: TrialMetrics = run_point(&setup, &pattern, req.estimator, SnrPoint::new(link.snr_db)?, link.seed)?;
    Ok(serde_json::to_string(&m)?)
}

fn parse<T: for<'de> Deserialize<'de>>(request: &str) -> pnsim::Result<T> {
    let text = if request.trim().is_empty() { "{}" } else { request };
    serde_json::from_str(text).map_err(|e| pnsim::Error::Config(format!("bad request: {e}")))
}

// JSON has no infinities; the zero-power PSD is drawn at a floor instead.
fn finite_or_floor(db: f64) -> f64 {
    if db.is_finite() {
        db
    } else {
        -300.0
    }
}

fn js_err(e: pnsim::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub fn psd_view(request: &str) -> Result<String, JsValue> {
    psd_view_json(request).map_err(js_err)
}

#[wasm_bindgen]
pub fn compare_estimators(request: &str) -> Result<String, JsValue> {
    compare_json(request).map_err(js_err)
}

#[wasm_bindgen]
pub fn ber_point(request: &str) -> Result<String, JsValue> {
    ber_point_json(request).map_err(js_err)
}
