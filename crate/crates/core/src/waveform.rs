//! DFT-s-OFDM transmit and receive chains plus Gray-mapped square QAM.
//!
//! Transmit: `N_a`-point DFT spreading, localized mapping onto bins
//! `offset..offset + N_a` of an `N_p`-point inverse FFT, cyclic prefix.
//! Receive mirrors it. All transforms are unitary (scaled by `1/sqrt(N)`), so
//! a unit-energy constellation yields an average time-domain sample power of
//! `N_a / N_p`.
//!
//! # QAM bit mapping
//!
//! For `m` bits per symbol, the first `m/2` bits (MSB first) select the
//! in-phase level and the remaining `m/2` the quadrature level. Each half is
//! Gray-decoded to a level index `i` in `0..L` (`L = 2^(m/2)`) placed at
//! amplitude `(L - 1 - 2i) / sqrt(2 (L² - 1) / 3)`. For QPSK this gives
//! `00 -> (1 + j)/sqrt(2)`, `01 -> (1 - j)/sqrt(2)`, `10 -> (-1 + j)/sqrt(2)`,
//! `11 -> (-1 - j)/sqrt(2)`; for 16-QAM the per-axis order is
//! `00, 01, 11, 10 -> +3, +1, -1, -3`.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

fn default_n_fft() -> usize {
    2048
}
fn default_n_active() -> usize {
    1024
}
fn default_n_symbols() -> usize {
    5
}
fn default_mod_order() -> u32 {
    4
}
fn default_fs() -> f64 {
    1966.08e6
}

/// Waveform dimensions. Defaults follow a numerology-6 sub-THz setup:
/// 2048-point FFT, 1024 active carriers, 1966.08 MHz sampling, 16-QAM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    #[serde(default = "default_n_fft")]
    pub n_fft: usize,
    #[serde(default = "default_n_active")]
    pub n_active: usize,
    #[serde(default)]
    pub cp_len: usize,
    #[serde(default = "default_n_symbols")]
    pub n_symbols: usize,
    /// Bits per QAM symbol.
    #[serde(default = "default_mod_order")]
    pub mod_order: u32,
    #[serde(default = "default_fs")]
    pub fs: f64,
    /// First FFT bin of the localized allocation.
    #[serde(default)]
    pub subcarrier_offset: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            n_fft: default_n_fft(),
            n_active: default_n_active(),
            cp_len: 0,
            n_symbols: default_n_symbols(),
            mod_order: default_mod_order(),
            fs: default_fs(),
            subcarrier_offset: 0,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_active == 0 || self.n_active >= self.n_fft {
            return Err(Error::Config(format!(
                "active carriers must satisfy 0 < N_a < N_p (N_a = {}, N_p = {})",
                self.n_active, self.n_fft
            )));
        }
        if self.subcarrier_offset + self.n_active > self.n_fft {
            return Err(Error::Config(format!(
                "allocation {}..{} exceeds FFT size {}",
                self.subcarrier_offset,
                self.subcarrier_offset + self.n_active,
                self.n_fft
            )));
        }
        if ![2, 4, 6, 8].contains(&self.mod_order) {
            return Err(Error::Config(format!(
                "modulation order must be 2, 4, 6 or 8 bits, got {}",
                self.mod_order
            )));
        }
        if self.n_symbols == 0 {
            return Err(Error::Config("a frame needs at least one symbol".into()));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::Config(format!("sampling rate must be > 0, got {}", self.fs)));
        }
        Ok(())
    }

    pub fn symbol_len(&self) -> usize {
        self.n_fft + self.cp_len
    }

    pub fn frame_len(&self) -> usize {
        self.n_symbols * self.symbol_len()
    }

    /// Ratio `N_a / N_p`: average time-domain power of a unit-energy block.
    pub fn occupancy(&self) -> f64 {
        self.n_active as f64 / self.n_fft as f64
    }

    /// Range of trace samples covering the body (CP excluded) of symbol `i`.
    pub fn body_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = i * self.symbol_len() + self.cp_len;
        start..start + self.n_fft
    }
}

/// Complex baseband samples at rate `fs`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    pub samples: Vec<C64>,
    pub fs: f64,
}

impl TimeSignal {
    pub fn new(samples: Vec<C64>, fs: f64) -> Self {
        Self { samples, fs }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        self.energy() / self.samples.len().max(1) as f64
    }
}

fn check_order(mod_order: u32) -> Result<()> {
    if [2, 4, 6, 8].contains(&mod_order) {
        Ok(())
    } else {
        Err(Error::Config(format!("unsupported modulation order {mod_order}")))
    }
}

#[inline]
fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

#[inline]
fn gray_inverse(mut g: usize) -> usize {
    let mut i = g;
    while g > 0 {
        g >>= 1;
        i ^= g;
    }
    i
}

fn axis_scale(levels: usize) -> f64 {
    let l = levels as f64;
    (2.0 * (l * l - 1.0) / 3.0).sqrt()
}

/// Constellation point for symbol value `index` (bits read MSB first).
pub fn constellation_point(index: usize, mod_order: u32) -> C64 {
    let half = mod_order / 2;
    let levels = 1usize << half;
    let mask = levels - 1;
    let i_idx = gray_inverse((index >> half) & mask);
    let q_idx = gray_inverse(index & mask);
    let top = (levels - 1) as f64;
    let s = axis_scale(levels);
    C64::new((top - 2.0 * i_idx as f64) / s, (top - 2.0 * q_idx as f64) / s)
}

/// Full constellation indexed by symbol value.
pub fn constellation(mod_order: u32) -> Result<Vec<C64>> {
    check_order(mod_order)?;
    Ok((0..1usize << mod_order).map(|i| constellation_point(i, mod_order)).collect())
}

/// Map bits (one per byte, 0 or 1) onto unit-energy Gray QAM symbols.
pub fn qam_map(bits: &[u8], mod_order: u32) -> Result<Vec<C64>> {
    check_order(mod_order)?;
    let m = mod_order as usize;
    if !bits.len().is_multiple_of(m) {
        return Err(Error::Shape(format!(
            "{} bits is not a multiple of {m} bits per symbol",
            bits.len()
        )));
    }
    Ok(bits
        .chunks_exact(m)
        .map(|chunk| {
            let index = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
            constellation_point(index, mod_order)
        })
        .collect())
}

/// `n` uniformly drawn constellation points.
pub fn random_block(n: usize, mod_order: u32, seed: u64) -> Result<Vec<C64>> {
    check_order(mod_order)?;
    let mut rng = crate::rng::rng_from(seed);
    Ok((0..n)
        .map(|_| constellation_point(rand::Rng::random_range(&mut rng, 0..1usize << mod_order), mod_order))
        .collect())
}

/// Nearest-point level index on one axis.
#[inline]
fn slice_axis(x: f64, levels: usize) -> usize {
    let top = (levels - 1) as f64;
    let i = ((top - x * axis_scale(levels)) / 2.0).round();
    // NaN casts to 0
    (i.max(0.0) as usize).min(levels - 1)
}

/// Hard decision to the nearest constellation point, returned as its
/// symbol value.
pub fn qam_decide(symbol: C64, mod_order: u32) -> usize {
    let half = mod_order / 2;
    let levels = 1usize << half;
    let i = gray(slice_axis(symbol.re, levels));
    let q = gray(slice_axis(symbol.im, levels));
    (i << half) | q
}

/// Minimum-distance hard demapping back to bits.
pub fn qam_demap_hard(symbols: &[C64], mod_order: u32) -> Result<Vec<u8>> {
    check_order(mod_order)?;
    let m = mod_order as usize;
    let mut bits = Vec::with_capacity(symbols.len() * m);
    for &s in symbols {
        let v = qam_decide(s, mod_order);
        bits.extend((0..m).rev().map(|b| ((v >> b) & 1) as u8));
    }
    Ok(bits)
}

/// DFT-s-OFDM modem with cached FFT plans.
#[derive(Clone)]
pub struct Modem {
    cfg: FrameConfig,
    spread_fwd: Arc<dyn Fft<f64>>,
    spread_inv: Arc<dyn Fft<f64>>,
    ofdm_fwd: Arc<dyn Fft<f64>>,
    ofdm_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Modem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Modem").field("cfg", &self.cfg).finish()
    }
}

impl Modem {
    pub fn new(cfg: &FrameConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg: cfg.clone(),
            spread_fwd: planner.plan_fft_forward(cfg.n_active),
            spread_inv: planner.plan_fft_inverse(cfg.n_active),
            ofdm_fwd: planner.plan_fft_forward(cfg.n_fft),
            ofdm_inv: planner.plan_fft_inverse(cfg.n_fft),
        })
    }

    pub fn config(&self) -> &FrameConfig {
        &self.cfg
    }

    /// One DFT-s-OFDM symbol including its cyclic prefix.
    pub fn modulate_symbol(&self, block: &[C64]) -> Result<Vec<C64>> {
        let cfg = &self.cfg;
        if block.len() != cfg.n_active {
            return Err(Error::Shape(format!(
                "block has {} symbols, expected {}",
                block.len(),
                cfg.n_active
            )));
        }
        let mut spread = block.to_vec();
        self.spread_fwd.process(&mut spread);
        let mut bins = vec![C64::new(0.0, 0.0); cfg.n_fft];
        bins[cfg.subcarrier_offset..cfg.subcarrier_offset + cfg.n_active].copy_from_slice(&spread);
        self.ofdm_inv.process(&mut bins);
        let scale = 1.0 / ((cfg.n_active * cfg.n_fft) as f64).sqrt();
        let mut out = Vec::with_capacity(cfg.symbol_len());
        out.extend(bins[cfg.n_fft - cfg.cp_len..].iter().map(|c| c * scale));
        out.extend(bins.iter().map(|c| c * scale));
        Ok(out)
    }

    /// Concatenate `n_symbols` modulated blocks into one frame.
    pub fn modulate_frame(&self, blocks: &[Vec<C64>]) -> Result<TimeSignal> {
        if blocks.len() != self.cfg.n_symbols {
            return Err(Error::Shape(format!(
                "frame needs {} blocks, got {}",
                self.cfg.n_symbols,
                blocks.len()
            )));
        }
        let mut samples = Vec::with_capacity(self.cfg.frame_len());
        for b in blocks {
            samples.extend(self.modulate_symbol(b)?);
        }
        Ok(TimeSignal::new(samples, self.cfg.fs))
    }

    /// Receive one symbol body (CP already removed).
    pub fn demodulate_body(&self, body: &[C64]) -> Result<Vec<C64>> {
        let cfg = &self.cfg;
        if body.len() != cfg.n_fft {
            return Err(Error::Shape(format!(
                "symbol body has {} samples, expected {}",
                body.len(),
                cfg.n_fft
            )));
        }
        let mut bins = body.to_vec();
        self.ofdm_fwd.process(&mut bins);
        let mut r = bins[cfg.subcarrier_offset..cfg.subcarrier_offset + cfg.n_active].to_vec();
        self.spread_inv.process(&mut r);
        let scale = 1.0 / ((cfg.n_active * cfg.n_fft) as f64).sqrt();
        r.iter_mut().for_each(|c| *c *= scale);
        Ok(r)
    }

    /// Receive a whole frame: one block of `N_a` values per symbol.
    pub fn demodulate(&self, signal: &TimeSignal) -> Result<Vec<Vec<C64>>> {
        let cfg = &self.cfg;
        let sym = cfg.symbol_len();
        if signal.is_empty() || !signal.len().is_multiple_of(sym) {
            return Err(Error::Shape(format!(
                "signal length {} is not a positive multiple of the symbol length {sym}",
                signal.len()
            )));
        }
        signal
            .samples
            .chunks_exact(sym)
            .map(|chunk| self.demodulate_body(&chunk[cfg.cp_len..]))
            .collect()
    }
}

/// Modulate a single block.
pub fn modulate(block: &[C64], cfg: &FrameConfig) -> Result<TimeSignal> {
    let modem = Modem::new(cfg)?;
    Ok(TimeSignal::new(modem.modulate_symbol(block)?, cfg.fs))
}

/// Demodulate a signal made of whole symbols.
pub fn demodulate(signal: &TimeSignal, cfg: &FrameConfig) -> Result<Vec<Vec<C64>>> {
    Modem::new(cfg)?.demodulate(signal)
}
