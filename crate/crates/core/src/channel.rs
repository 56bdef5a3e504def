//! Flat line-of-sight channel: multiplicative phase noise and AWGN.
//!
//! SNR is referenced to a unit-power transmit signal over the full sampled
//! bandwidth: noise variance per time sample is `10^(-snr_db / 10)`. With the
//! unitary chain of [`crate::waveform`] the active block carries power
//! `N_a / N_p`; the engine rescales by `sqrt(N_p / N_a)` before the channel so
//! the full-band SNR is exact, which leaves a per-subcarrier SNR that is
//! higher by `10 log10(N_p / N_a)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::pn_model::PnTrace;
use crate::rng::rng_from;
use crate::waveform::TimeSignal;
use crate::{Error, Result, C64};

/// Full-band signal-to-noise ratio in dB. `+inf` bypasses the noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub snr_db: f64,
}

impl SnrPoint {
    pub fn new(snr_db: f64) -> Result<Self> {
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(Error::Domain(format!("SNR must be finite or +inf, got {snr_db}")));
        }
        Ok(Self { snr_db })
    }

    pub fn noiseless() -> Self {
        Self { snr_db: f64::INFINITY }
    }

    /// Per-sample noise variance for a unit-power signal.
    pub fn noise_variance(&self) -> f64 {
        if self.snr_db == f64::INFINITY {
            0.0
        } else {
            10f64.powf(-self.snr_db / 10.0)
        }
    }
}

/// `y[p] = x[p] exp(j phi[p])`.
pub fn apply_phase_noise(x: &TimeSignal, phi: &PnTrace) -> Result<TimeSignal> {
    let mut y = x.clone();
    apply_phase_noise_in_place(&mut y.samples, phi.samples())?;
    Ok(y)
}

pub fn apply_phase_noise_in_place(x: &mut [C64], phi: &[f64]) -> Result<()> {
    if x.len() != phi.len() {
        return Err(Error::Shape(format!(
            "signal has {} samples, phase trace {}",
            x.len(),
            phi.len()
        )));
    }
    for (s, &p) in x.iter_mut().zip(phi) {
        *s *= C64::from_polar(1.0, p);
    }
    Ok(())
}

/// Add circular complex Gaussian noise of total variance `sigma2` per sample.
pub fn add_noise_in_place<R: Rng>(x: &mut [C64], sigma2: f64, rng: &mut R) {
    if sigma2 == 0.0 {
        return;
    }
    let sd = (sigma2 / 2.0).sqrt();
    for s in x.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *s += C64::new(sd * re, sd * im);
    }
}

pub fn add_awgn(x: &TimeSignal, snr: SnrPoint, seed: u64) -> TimeSignal {
    let mut y = x.clone();
    add_noise_in_place(&mut y.samples, snr.noise_variance(), &mut rng_from(seed));
    y
}
