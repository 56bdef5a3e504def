//! Oscillator phase-noise model.
//!
//! The power spectral density follows the multi pole-zero family
//!
//! ```text
//! S(f) = S0 * prod_n [1 + (f / fz_n)^az_n] / prod_m [1 + (f / fp_m)^ap_m]
//! ```
//!
//! with `S0` given in dBc/Hz at a reference carrier and rescaled by
//! `20 log10(fc / fc_ref)` for other carriers. `S(f)` is interpreted as the
//! two-sided density of the phase process in rad²/Hz, so the variance of a
//! trace sampled at `fs` is the integral of `S` over `(-fs/2, fs/2)`.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::rng::{derive_seed, rng_from};
use crate::{Error, Result, C64};

/// One zero or pole of the PSD: corner frequency and roll-off exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corner {
    pub f_hz: f64,
    pub exp: f64,
}

impl Corner {
    pub fn new(f_hz: f64, exp: f64) -> Self {
        Self { f_hz, exp }
    }

    #[inline]
    fn factor_db(&self, f: f64) -> f64 {
        10.0 * (1.0 + (f / self.f_hz).powf(self.exp)).log10()
    }
}

/// Parametric phase-noise PSD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    /// Level at the reference carrier, dBc/Hz. `-inf` disables the model.
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psd0_dbc_hz: f64,
    pub f_carrier_ref_hz: f64,
    /// Carrier the spectrum is evaluated at; defaults to the reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_carrier_hz: Option<f64>,
    #[serde(default)]
    pub zeros: Vec<Corner>,
    #[serde(default)]
    pub poles: Vec<Corner>,
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if *v == f64::NEG_INFINITY {
        s.serialize_str("-inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t.trim() == "-inf" => Ok(f64::NEG_INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!(
            "expected a number or \"-inf\", got {t:?}"
        ))),
    }
}

impl PsdSpec {
    pub fn new(psd0_dbc_hz: f64, f_carrier_ref_hz: f64, zeros: Vec<Corner>, poles: Vec<Corner>) -> Result<Self> {
        let spec = Self {
            model_id: None,
            psd0_dbc_hz,
            f_carrier_ref_hz,
            f_carrier_hz: None,
            zeros,
            poles,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A spectrum with no power at all.
    pub fn zero_power(f_carrier_ref_hz: f64) -> Self {
        Self {
            model_id: Some("zero-power".into()),
            psd0_dbc_hz: f64::NEG_INFINITY,
            f_carrier_ref_hz,
            f_carrier_hz: None,
            zeros: Vec::new(),
            poles: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.psd0_dbc_hz.is_nan() || self.psd0_dbc_hz == f64::INFINITY {
            return Err(Error::Validation("psd0 must be finite or -inf".into()));
        }
        if !(self.f_carrier_ref_hz > 0.0 && self.f_carrier_ref_hz.is_finite()) {
            return Err(Error::Validation("reference carrier must be > 0".into()));
        }
        if let Some(fc) = self.f_carrier_hz {
            if !(fc > 0.0 && fc.is_finite()) {
                return Err(Error::Validation("carrier must be > 0".into()));
            }
        }
        for c in self.zeros.iter().chain(&self.poles) {
            if !(c.f_hz > 0.0 && c.f_hz.is_finite()) || !(c.exp > 0.0 && c.exp.is_finite()) {
                return Err(Error::Validation(format!(
                    "corner frequencies and exponents must be positive, got {c:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("PsdSpec serializes")
    }

    pub fn carrier_hz(&self) -> f64 {
        self.f_carrier_hz.unwrap_or(self.f_carrier_ref_hz)
    }

    /// Carrier-dependent offset applied on top of `psd0`, in dB.
    pub fn carrier_offset_db(&self) -> f64 {
        20.0 * (self.carrier_hz() / self.f_carrier_ref_hz).log10()
    }

    pub fn is_zero_power(&self) -> bool {
        self.psd0_dbc_hz == f64::NEG_INFINITY
    }

    /// PSD at offset frequency `f` in dBc/Hz, carrier scaling included.
    pub fn eval_db(&self, f: f64) -> Result<f64> {
        if !(f > 0.0) {
            return Err(Error::Domain(format!("PSD evaluated at f = {f} Hz; need f > 0")));
        }
        Ok(self.eval_db_unchecked(f))
    }

    fn eval_db_unchecked(&self, f: f64) -> f64 {
        let z: f64 = self.zeros.iter().map(|c| c.factor_db(f)).sum();
        let p: f64 = self.poles.iter().map(|c| c.factor_db(f)).sum();
        self.psd0_dbc_hz + self.carrier_offset_db() + z - p
    }

    /// Linear two-sided density in rad²/Hz. Symmetric in `f`; zero at DC.
    pub fn eval_linear(&self, f: f64) -> f64 {
        let f = f.abs();
        if f == 0.0 || self.is_zero_power() {
            return 0.0;
        }
        10f64.powf(self.eval_db_unchecked(f) / 10.0)
    }

    /// Rebase the spectrum onto a new carrier.
    pub fn carrier_scale(&self, f_new: f64) -> Result<Self> {
        if !(f_new > 0.0) {
            return Err(Error::Domain(format!("carrier must be > 0, got {f_new}")));
        }
        let mut out = self.clone();
        out.psd0_dbc_hz = self.psd0_dbc_hz + 20.0 * (f_new / self.f_carrier_ref_hz).log10();
        out.f_carrier_ref_hz = f_new;
        out.f_carrier_hz = Some(f_new);
        Ok(out)
    }

    /// Copy with `psd0` shifted by `db`.
    pub fn offset_db(&self, db: f64) -> Self {
        let mut out = self.clone();
        out.psd0_dbc_hz += db;
        out
    }

    /// Variance of a trace of `n_samples` at `fs` produced by
    /// [`generate_trace`]: sum of the per-bin powers, DC excluded.
    pub fn discrete_variance(&self, n_samples: usize, fs: f64) -> f64 {
        let df = fs / n_samples as f64;
        (1..n_samples)
            .map(|k| {
                let kk = k.min(n_samples - k);
                self.eval_linear(kk as f64 * df) * df
            })
            .sum()
    }
}

/// Sampled phase trajectory in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PnTrace {
    samples: Vec<f64>,
    fs: f64,
}

impl PnTrace {
    pub fn new(samples: Vec<f64>, fs: f64) -> Self {
        Self { samples, fs }
    }

    pub fn zeros(n: usize, fs: f64) -> Self {
        Self::new(vec![0.0; n], fs)
    }

    pub fn constant(n: usize, fs: f64, phase: f64) -> Self {
        Self::new(vec![phase; n], fs)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn variance(&self) -> f64 {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        self.samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }
}

/// Synthesize a phase-noise trace by shaping complex white Gaussian noise in
/// the frequency domain.
///
/// Bins are filled Hermitian-symmetrically so the inverse transform is real;
/// the DC bin is left empty. The trace is circular: its last sample joins
/// smoothly onto the first.
pub fn generate_trace(spec: &PsdSpec, n_samples: usize, fs: f64, seed: u64) -> Result<PnTrace> {
    if n_samples < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {n_samples}")));
    }
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::Domain(format!("sampling rate must be > 0, got {fs}")));
    }
    spec.validate()?;
    if spec.is_zero_power() {
        return Ok(PnTrace::zeros(n_samples, fs));
    }

    let n = n_samples;
    let df = fs / n as f64;
    let mut rng = rng_from(seed);
    let mut bins = vec![C64::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let power = spec.eval_linear(k as f64 * df) * df;
        if 2 * k == n {
            let g: f64 = rng.sample(StandardNormal);
            bins[k] = C64::new(power.sqrt() * g, 0.0);
        } else {
            let a = (power / 2.0).sqrt();
            let (g1, g2): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            bins[k] = C64::new(a * g1, a * g2);
            bins[n - k] = bins[k].conj();
        }
    }

    FftPlanner::new().plan_fft_inverse(n).process(&mut bins);
    Ok(PnTrace::new(bins.into_iter().map(|c| c.re).collect(), fs))
}

/// Random-walk (Wiener) phase noise: `phi[n] = phi[n-1] + N(0, step_variance)`,
/// starting at zero.
pub fn wiener_trace(step_variance: f64, n_samples: usize, fs: f64, seed: u64) -> Result<PnTrace> {
    if !(step_variance >= 0.0 && step_variance.is_finite()) {
        return Err(Error::Domain(format!("step variance must be >= 0, got {step_variance}")));
    }
    if n_samples < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {n_samples}")));
    }
    let sd = step_variance.sqrt();
    let mut rng = rng_from(seed);
    let mut acc = 0.0;
    let samples = (0..n_samples)
        .map(|i| {
            if i > 0 {
                let g: f64 = rng.sample(StandardNormal);
                acc += sd * g;
            }
            acc
        })
        .collect();
    Ok(PnTrace::new(samples, fs))
}

/// Total phase seen after down-conversion: transmitter plus receiver noise.
pub fn combine_tx_rx(tx: &PnTrace, rx: &PnTrace) -> Result<PnTrace> {
    if tx.len() != rx.len() {
        return Err(Error::Shape(format!(
            "tx trace has {} samples, rx trace {}",
            tx.len(),
            rx.len()
        )));
    }
    if (tx.fs - rx.fs).abs() > 1e-12 * tx.fs.abs().max(rx.fs.abs()) {
        return Err(Error::Shape(format!("sampling rates differ: {} vs {}", tx.fs, rx.fs)));
    }
    let samples = tx.samples.iter().zip(&rx.samples).map(|(a, b)| a + b).collect();
    Ok(PnTrace::new(samples, tx.fs))
}

/// Two-sided periodogram of a real trace at bins `0..=n/2`, in rad²/Hz.
pub fn periodogram(trace: &PnTrace) -> Vec<f64> {
    let n = trace.len();
    let mut buf: Vec<C64> = trace.samples.iter().map(|&x| C64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / (n as f64 * trace.fs);
    buf[..=n / 2].iter().map(|c| c.norm_sqr() * scale).collect()
}

/// Length multiplier for synthesized PSD traces. Generating a longer
/// circular trace and keeping its head restores the low-frequency content
/// below `fs / n` and hides the wrap-around continuity.
pub const TRACE_SPAN: usize = 4;

/// Phase-noise source for a link: disabled, independent transmitter and
/// receiver oscillators drawn from PSD masks, or a Wiener random walk.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseNoiseModel {
    Off,
    Psd { tx: PsdSpec, rx: PsdSpec },
    Wiener { step_variance: f64 },
}

impl PhaseNoiseModel {
    /// Same mask at both ends, independent realizations.
    pub fn symmetric(spec: PsdSpec) -> Self {
        PhaseNoiseModel::Psd { tx: spec.clone(), rx: spec }
    }

    pub fn model_id(&self) -> String {
        match self {
            PhaseNoiseModel::Off => "off".into(),
            PhaseNoiseModel::Psd { tx, rx } => {
                let id = |s: &PsdSpec| s.model_id.clone().unwrap_or_else(|| "psd".into());
                if tx == rx {
                    id(tx)
                } else {
                    format!("{}+{}", id(tx), id(rx))
                }
            }
            PhaseNoiseModel::Wiener { step_variance } => format!("wiener-{step_variance:e}"),
        }
    }

    pub fn is_off(&self) -> bool {
        match self {
            PhaseNoiseModel::Off => true,
            PhaseNoiseModel::Psd { tx, rx } => tx.is_zero_power() && rx.is_zero_power(),
            PhaseNoiseModel::Wiener { step_variance } => *step_variance == 0.0,
        }
    }

    /// Combined phase trace over one frame of `n` samples.
    pub fn frame_trace(&self, n: usize, fs: f64, seed: u64) -> Result<PnTrace> {
        match self {
            PhaseNoiseModel::Off => Ok(PnTrace::zeros(n, fs)),
            PhaseNoiseModel::Psd { tx, rx } => {
                let head = |spec: &PsdSpec, s: u64| -> Result<PnTrace> {
                    let mut t = generate_trace(spec, n * TRACE_SPAN, fs, s)?;
                    t.samples.truncate(n);
                    Ok(t)
                };
                let a = head(tx, derive_seed(seed, &[1]))?;
                let b = head(rx, derive_seed(seed, &[2]))?;
                combine_tx_rx(&a, &b)
            }
            PhaseNoiseModel::Wiener { step_variance } => wiener_trace(*step_variance, n, fs, seed),
        }
    }
}
