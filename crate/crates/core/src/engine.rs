//! Monte Carlo link simulation.
//!
//! One frame is `N_DFT` DFT-s-OFDM symbols sharing one continuous phase-noise
//! trace. Per frame the engine draws data, inserts pilots, modulates, applies
//! the combined transmitter and receiver phase noise, adds AWGN, demodulates,
//! estimates and removes the phase, and slices the data positions.
//!
//! Seeding follows common random numbers: every random stream of frame `f`
//! is derived from `(master seed, f, stream)` only, so all estimators and
//! all SNR points of a sweep see the same data, phase noise and normalized
//! noise. Frames are processed in fixed batches which are reduced in batch
//! order, making results independent of the worker count.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{add_noise_in_place, SnrPoint};
use crate::covariance::CovarianceSet;
use crate::estimators::{correct, Method, PhaseEstimate, PhaseTracker, PhiAvMode};
use crate::oracle::{phi_prime_from_alpha, Oracle};
use crate::pn_model::PhaseNoiseModel;
use crate::ptrs::{pilot_sequence, PatternSpec, PtrsPattern};
use crate::rng::{derive_seed, frame_stream_seed, rng_from, Stream};
use crate::waveform::{constellation_point, qam_decide, FrameConfig, Modem};
use crate::{Error, Result, C64};

/// Frames per reduction batch.
pub const FRAME_BATCH: usize = 4;
pub const DEFAULT_MIN_ERRORS: u64 = 100;
pub const DEFAULT_MAX_FRAMES: usize = 2000;
pub const DEFAULT_SNR_CAP_DB: f64 = 40.0;

/// Estimator selection as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum EstimatorChoice {
    Cpee,
    Ci,
    Li,
    Dct {
        #[serde(default = "default_n_d")]
        n_d: usize,
        #[serde(default)]
        phi_av: PhiAvMode,
    },
    If,
    /// Oracle phase `arg(alpha)`; a reference bound, not a receiver.
    Genie,
}

fn default_n_d() -> usize {
    5
}

impl EstimatorChoice {
    pub fn label(&self) -> String {
        match self {
            EstimatorChoice::Genie => "genie".into(),
            other => other.method().expect("not genie").label(),
        }
    }

    pub fn method(&self) -> Option<Method> {
        Some(match *self {
            EstimatorChoice::Cpee => Method::Cpee,
            EstimatorChoice::Ci => Method::Ci,
            EstimatorChoice::Li => Method::Li,
            EstimatorChoice::Dct { n_d, phi_av } => Method::Dct { n_d, phi_av },
            EstimatorChoice::If => Method::If,
            EstimatorChoice::Genie => return None,
        })
    }

    pub fn needs_covariance(&self) -> bool {
        matches!(self, EstimatorChoice::If)
    }

    /// Cross-field checks that do not need any simulation.
    pub fn check(&self, pattern: &PtrsPattern) -> Result<()> {
        if let EstimatorChoice::Dct { n_d, .. } = *self {
            if n_d == 0 || n_d > pattern.k() {
                return Err(Error::Config(format!(
                    "DCT estimator with N_D = {n_d} on pattern {} with K = {} pilots: requires 1 <= N_D <= K",
                    pattern.spec().label(),
                    pattern.k()
                )));
            }
        }
        Ok(())
    }
}

/// How pilot values vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotMode {
    /// One pilot sequence for the whole run; the interpolation filter is
    /// built once.
    #[default]
    Fixed,
    /// Fresh pilots per symbol; the filter is rebuilt per symbol.
    PerSymbol,
}

/// When to stop accumulating frames for one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub min_errors: u64,
    pub min_frames: usize,
    pub max_frames: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            min_errors: DEFAULT_MIN_ERRORS,
            min_frames: 1,
            max_frames: DEFAULT_MAX_FRAMES,
        }
    }
}

impl StopRule {
    pub fn fixed(frames: usize) -> Self {
        Self {
            min_errors: u64::MAX,
            min_frames: frames,
            max_frames: frames,
        }
    }

    fn done(&self, frames: usize, errors: u64) -> bool {
        frames >= self.max_frames || (frames >= self.min_frames && errors >= self.min_errors)
    }
}

/// Everything about the link that stays fixed across operating points.
#[derive(Debug, Clone)]
pub struct LinkSetup {
    pub frame: FrameConfig,
    pub pn: PhaseNoiseModel,
    /// Phase statistics for the interpolation filter; the noise term is
    /// replaced per SNR point.
    pub covariance: Option<CovarianceSet>,
    pub pilot_mode: PilotMode,
    pub stop: StopRule,
}

impl LinkSetup {
    pub fn new(frame: FrameConfig, pn: PhaseNoiseModel) -> Self {
        Self {
            frame,
            pn,
            covariance: None,
            pilot_mode: PilotMode::Fixed,
            stop: StopRule::default(),
        }
    }

    /// Amplitude gain that brings the transmit signal to unit mean power.
    pub fn tx_gain(&self) -> f64 {
        (self.frame.n_fft as f64 / self.frame.n_active as f64).sqrt()
    }

    /// Noise variance on each demodulated symbol at `snr`.
    pub fn symbol_noise_variance(&self, snr: SnrPoint) -> f64 {
        snr.noise_variance() * self.frame.n_active as f64 / self.frame.n_fft as f64
    }
}

/// Counters of one frame, summed over its data positions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameOutcome {
    pub bit_errors: u64,
    pub n_bits: u64,
    pub symbol_errors: u64,
    pub n_symbols: u64,
    /// Sum of `|e^{j phi_hat} - e^{j phi'}|^2`.
    pub phase_sq_err: f64,
    /// Sum of `|s_hat - s|^2`.
    pub err_energy: f64,
    pub sig_energy: f64,
}

impl FrameOutcome {
    pub fn phase_mse(&self) -> f64 {
        self.phase_sq_err / self.n_symbols.max(1) as f64
    }

    fn add(&mut self, o: &FrameOutcome) {
        self.bit_errors += o.bit_errors;
        self.n_bits += o.n_bits;
        self.symbol_errors += o.symbol_errors;
        self.n_symbols += o.n_symbols;
        self.phase_sq_err += o.phase_sq_err;
        self.err_energy += o.err_energy;
        self.sig_energy += o.sig_energy;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialMetrics {
    pub ber: f64,
    pub ser: f64,
    pub phase_mse: f64,
    pub evm: f64,
    pub bit_errors: u64,
    pub n_bits: u64,
    pub symbol_errors: u64,
    pub n_symbols: u64,
    pub n_frames: usize,
}

impl TrialMetrics {
    fn from_totals(t: &FrameOutcome, frames: usize) -> Self {
        let ratio = |a: f64, b: u64| if b == 0 { 0.0 } else { a / b as f64 };
        Self {
            ber: ratio(t.bit_errors as f64, t.n_bits),
            ser: ratio(t.symbol_errors as f64, t.n_symbols),
            phase_mse: ratio(t.phase_sq_err, t.n_symbols),
            evm: if t.sig_energy > 0.0 { (t.err_energy / t.sig_energy).sqrt() } else { 0.0 },
            bit_errors: t.bit_errors,
            n_bits: t.n_bits,
            symbol_errors: t.symbol_errors,
            n_symbols: t.n_symbols,
            n_frames: frames,
        }
    }

    /// Binomial standard error of the BER estimate.
    pub fn ber_std_error(&self) -> f64 {
        if self.n_bits == 0 {
            return 0.0;
        }
        (self.ber * (1.0 - self.ber) / self.n_bits as f64).sqrt()
    }
}

/// Per-point simulation state shared read-only across workers.
struct PointSim<'a> {
    setup: &'a LinkSetup,
    modem: Modem,
    oracle: Oracle,
    pattern: PtrsPattern,
    data_pos: Vec<usize>,
    tracker: Option<PhaseTracker>,
    fixed_pilots: Option<Vec<C64>>,
    snr: SnrPoint,
    seed: u64,
}

impl<'a> PointSim<'a> {
    fn new(setup: &'a LinkSetup, pattern: &PtrsPattern, est: EstimatorChoice, snr: SnrPoint, seed: u64) -> Result<Self> {
        setup.frame.validate()?;
        if pattern.n_active() != setup.frame.n_active {
            return Err(Error::Config(format!(
                "pattern built for N_a = {}, frame has N_a = {}",
                pattern.n_active(),
                setup.frame.n_active
            )));
        }
        est.check(pattern)?;
        let fixed_pilots = match setup.pilot_mode {
            PilotMode::Fixed => Some(pilot_sequence(pattern.k(), derive_seed(seed, &[Stream::Pilots as u64]))?),
            PilotMode::PerSymbol => None,
        };
        let tracker = match est.method() {
            None => None,
            Some(m) => {
                let cov = match (&setup.covariance, est.needs_covariance()) {
                    (Some(c), true) => {
                        if c.n_active() != setup.frame.n_active {
                            return Err(Error::Config(format!(
                                "covariance set is {0}x{0}, frame has N_a = {1}",
                                c.n_active(),
                                setup.frame.n_active
                            )));
                        }
                        Some(c.with_noise(setup.symbol_noise_variance(snr))?)
                    }
                    (None, true) => {
                        return Err(Error::Config("the interpolation filter needs a covariance set".into()));
                    }
                    _ => None,
                };
                let mut t = PhaseTracker::new(m, pattern, cov.as_ref())?;
                if let Some(p) = &fixed_pilots {
                    t.prime(p)?;
                }
                Some(t)
            }
        };
        let mask = pattern.pilot_mask();
        Ok(Self {
            setup,
            modem: Modem::new(&setup.frame)?,
            oracle: Oracle::new(&setup.frame)?,
            pattern: pattern.clone(),
            data_pos: (0..mask.len()).filter(|&i| !mask[i]).collect(),
            tracker,
            fixed_pilots,
            snr,
            seed,
        })
    }

    fn frame(&self, f: usize, tracker: &mut Option<PhaseTracker>) -> Result<FrameOutcome> {
        let cfg = &self.setup.frame;
        let m = cfg.mod_order;
        let fi = f as u64;
        let mut data_rng = rng_from(frame_stream_seed(self.seed, fi, Stream::Data));
        let pilot_seed = frame_stream_seed(self.seed, fi, Stream::Pilots);
        let n_points = 1usize << m;

        let mut values = Vec::with_capacity(cfg.n_symbols);
        let mut blocks = Vec::with_capacity(cfg.n_symbols);
        let mut pilots_per_sym = Vec::with_capacity(cfg.n_symbols);
        for sym in 0..cfg.n_symbols {
            let pilots = match &self.fixed_pilots {
                Some(p) => p.clone(),
                None => pilot_sequence(self.pattern.k(), derive_seed(pilot_seed, &[sym as u64]))?,
            };
            let v: Vec<usize> = (0..self.data_pos.len()).map(|_| rand::Rng::random_range(&mut data_rng, 0..n_points)).collect();
            let mut block = vec![C64::new(0.0, 0.0); cfg.n_active];
            for (&i, p) in self.pattern.indices().iter().zip(&pilots) {
                block[i] = *p;
            }
            for (&i, &idx) in self.data_pos.iter().zip(&v) {
                block[i] = constellation_point(idx, m);
            }
            values.push(v);
            blocks.push(block);
            pilots_per_sym.push(pilots);
        }

        let mut tx = self.modem.modulate_frame(&blocks)?;
        let g = self.setup.tx_gain();
        let trace = self
            .setup
            .pn
            .frame_trace(cfg.frame_len(), cfg.fs, frame_stream_seed(self.seed, fi, Stream::TxPhaseNoise))?;
        for (x, &p) in tx.samples.iter_mut().zip(trace.samples()) {
            *x *= C64::from_polar(g, p);
        }
        let mut noise_rng = rng_from(frame_stream_seed(self.seed, fi, Stream::Noise));
        add_noise_in_place(&mut tx.samples, self.snr.noise_variance(), &mut noise_rng);
        let inv = 1.0 / g;
        tx.samples.iter_mut().for_each(|x| *x *= inv);
        let rx = self.modem.demodulate(&tx)?;

        let mut out = FrameOutcome::default();
        for sym in 0..cfg.n_symbols {
            let alpha = self.oracle.alpha(&trace.samples()[cfg.body_range(sym)])?;
            let (truth, _) = phi_prime_from_alpha(&alpha);
            let est = match tracker {
                Some(t) => t.estimate(&rx[sym], &pilots_per_sym[sym])?,
                None => PhaseEstimate { phi_hat: truth.clone() },
            };
            let corrected = correct(&rx[sym], &est)?;
            let phi_at = |i: usize| if est.len() == 1 { est.phi_hat[0] } else { est.phi_hat[i] };
            for (&i, &sent) in self.data_pos.iter().zip(&values[sym]) {
                let decided = qam_decide(corrected[i], m);
                let diff = (decided ^ sent).count_ones() as u64;
                out.bit_errors += diff;
                out.symbol_errors += (diff > 0) as u64;
                let s = constellation_point(sent, m);
                out.err_energy += (corrected[i] - s).norm_sqr();
                out.sig_energy += s.norm_sqr();
                out.phase_sq_err += (C64::from_polar(1.0, phi_at(i)) - C64::from_polar(1.0, truth[i])).norm_sqr();
            }
            out.n_bits += self.data_pos.len() as u64 * m as u64;
            out.n_symbols += self.data_pos.len() as u64;
        }
        Ok(out)
    }

    fn batch(&self, b: usize, max_frames: usize) -> Result<Vec<FrameOutcome>> {
        let mut tracker = self.tracker.clone();
        (b * FRAME_BATCH..((b + 1) * FRAME_BATCH).min(max_frames))
            .map(|f| self.frame(f, &mut tracker))
            .collect()
    }
}

/// Evaluate batches `0, 1, 2, ...` and feed them in order to `absorb` until
/// it returns `true` or `n_batches` are consumed.
fn run_batches<T: Send>(
    n_batches: usize,
    eval: impl Fn(usize) -> Result<T> + Sync,
    mut absorb: impl FnMut(T) -> bool,
) -> Result<()> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let wave = rayon::current_num_threads().max(1);
        let mut start = 0;
        while start < n_batches {
            let end = (start + wave).min(n_batches);
            let parts: Vec<Result<T>> = (start..end).into_par_iter().map(&eval).collect();
            for p in parts {
                if absorb(p?) {
                    return Ok(());
                }
            }
            start = end;
        }
        Ok(())
    }
    #[cfg(not(feature = "parallel"))]
    {
        for b in 0..n_batches {
            if absorb(eval(b)?) {
                break;
            }
        }
        Ok(())
    }
}

/// Run `f` on a pool of `workers` threads (0 = library default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    {
        if workers == 0 {
            return Ok(f());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Resource(format!("cannot start {workers} workers: {e}")))?;
        Ok(pool.install(f))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        Ok(f())
    }
}

/// Per-frame outcomes of one operating point, in frame order.
pub fn run_frames(
    setup: &LinkSetup,
    pattern: &PtrsPattern,
    estimator: EstimatorChoice,
    snr: SnrPoint,
    seed: u64,
) -> Result<Vec<FrameOutcome>> {
    let sim = PointSim::new(setup, pattern, estimator, snr, seed)?;
    let stop = setup.stop;
    if stop.max_frames == 0 {
        return Err(Error::Config("frame cap must be >= 1".into()));
    }
    let mut frames = Vec::new();
    let mut errors = 0u64;
    run_batches(
        stop.max_frames.div_ceil(FRAME_BATCH),
        |b| sim.batch(b, stop.max_frames),
        |batch| {
            for o in batch {
                errors += o.bit_errors;
                frames.push(o);
                if stop.done(frames.len(), errors) {
                    return true;
                }
            }
            false
        },
    )?;
    Ok(frames)
}

pub fn run_point(
    setup: &LinkSetup,
    pattern: &PtrsPattern,
    estimator: EstimatorChoice,
    snr: SnrPoint,
    seed: u64,
) -> Result<TrialMetrics> {
    let frames = run_frames(setup, pattern, estimator, snr, seed)?;
    let mut total = FrameOutcome::default();
    frames.iter().for_each(|o| total.add(o));
    Ok(TrialMetrics::from_totals(&total, frames.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub estimator: String,
    pub pattern: String,
    pub k: usize,
    pub snr_db: f64,
    pub metrics: TrialMetrics,
    pub seed: u64,
    /// Wall-clock seconds; kept out of the CSV so reruns compare equal.
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: &str =
    "estimator,pattern,k,snr_db,ber,ser,phase_mse,evm,bit_errors,n_bits,symbol_errors,n_symbols,n_frames,seed";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{:e},{:e},{:e},{:e},{},{},{},{},{},{}",
                r.estimator,
                r.pattern,
                r.k,
                r.snr_db,
                m.ber,
                m.ser,
                m.phase_mse,
                m.evm,
                m.bit_errors,
                m.n_bits,
                m.symbol_errors,
                m.n_symbols,
                m.n_frames,
                r.seed
            );
        }
        out
    }

    /// Parse a CSV written by [`SweepResult::to_csv`]. Runtimes are not
    /// stored there and come back as zero.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(SWEEP_CSV_HEADER) {
            return Err(Error::Parse("sweep CSV header mismatch".into()));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse(format!("malformed sweep row {}", n + 1));
            if f.len() != 14 {
                return Err(bad());
            }
            let fl = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            let int = |i: usize| f[i].parse::<u64>().map_err(|_| bad());
            rows.push(SweepRow {
                estimator: f[0].to_string(),
                pattern: f[1].to_string(),
                k: int(2)? as usize,
                snr_db: fl(3)?,
                metrics: TrialMetrics {
                    ber: fl(4)?,
                    ser: fl(5)?,
                    phase_mse: fl(6)?,
                    evm: fl(7)?,
                    bit_errors: int(8)?,
                    n_bits: int(9)?,
                    symbol_errors: int(10)?,
                    n_symbols: int(11)?,
                    n_frames: int(12)? as usize,
                },
                seed: int(13)?,
                runtime_s: 0.0,
            });
        }
        Ok(Self { rows })
    }

    pub fn csv_sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }
}

/// Cartesian product `patterns x estimators x snr_grid`, rows in that
/// nesting order.
pub fn sweep(
    setup: &LinkSetup,
    patterns: &[PatternSpec],
    estimators: &[EstimatorChoice],
    snr_grid: &[f64],
    seed: u64,
) -> Result<SweepResult> {
    if patterns.is_empty() || estimators.is_empty() || snr_grid.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let built: Vec<PtrsPattern> = patterns
        .iter()
        .map(|p| p.build(setup.frame.n_active))
        .collect::<Result<_>>()?;
    let snrs: Vec<SnrPoint> = snr_grid.iter().map(|&s| SnrPoint::new(s)).collect::<Result<_>>()?;
    for p in &built {
        for e in estimators {
            e.check(p)?;
            if e.needs_covariance() && setup.covariance.is_none() {
                return Err(Error::Config("the interpolation filter needs a covariance set".into()));
            }
        }
    }
    let mut rows = Vec::new();
    for p in &built {
        for e in estimators {
            for snr in &snrs {
                let t0 = Instant::now();
                let metrics = run_point(setup, p, *e, *snr, seed)?;
                rows.push(SweepRow {
                    estimator: e.label(),
                    pattern: p.spec().label(),
                    k: p.k(),
                    snr_db: snr.snr_db,
                    metrics,
                    seed,
                    runtime_s: t0.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(SweepResult { rows })
}

/// Options for [`snr_for_target_ber`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub cap_db: f64,
    pub floor_db: f64,
    pub tolerance_db: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            cap_db: DEFAULT_SNR_CAP_DB,
            floor_db: -20.0,
            tolerance_db: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SnrSearch {
    /// `snr_db` is the upper bracket end, the lowest SNR verified to meet
    /// the target.
    Reached {
        snr_db: f64,
        bracket: (f64, f64),
        ber_at: (f64, f64),
        /// Worst relative standard error of the two bracket BERs.
        rel_std_error: f64,
        evaluations: usize,
    },
    Unreachable { cap_db: f64, ber_at_cap: f64 },
}

impl SnrSearch {
    pub fn snr_db(&self) -> Option<f64> {
        match self {
            SnrSearch::Reached { snr_db, .. } => Some(*snr_db),
            SnrSearch::Unreachable { .. } => None,
        }
    }
}

/// Bisection for the SNR where BER crosses `target_ber`.
pub fn snr_for_target_ber(
    setup: &LinkSetup,
    pattern: &PtrsPattern,
    estimator: EstimatorChoice,
    target_ber: f64,
    seed: u64,
    opts: SearchOptions,
) -> Result<SnrSearch> {
    if !(target_ber > 0.0 && target_ber < 0.5) {
        return Err(Error::Domain(format!("target BER must lie in (0, 0.5), got {target_ber}")));
    }
    if !(opts.floor_db < opts.cap_db && opts.tolerance_db > 0.0) {
        return Err(Error::Config("search needs floor < cap and a positive tolerance".into()));
    }
    let mut evaluations = 0;
    let mut eval = |snr: f64| -> Result<TrialMetrics> {
        evaluations += 1;
        run_point(setup, pattern, estimator, SnrPoint::new(snr)?, seed)
    };
    let rse = |m: &TrialMetrics| {
        if m.ber > 0.0 {
            m.ber_std_error() / m.ber
        } else {
            f64::INFINITY
        }
    };
    let at_cap = eval(opts.cap_db)?;
    if at_cap.ber > target_ber {
        return Ok(SnrSearch::Unreachable {
            cap_db: opts.cap_db,
            ber_at_cap: at_cap.ber,
        });
    }
    let (mut hi, mut m_hi) = (opts.cap_db, at_cap);
    // walk down in 10 dB steps to find a failing lower end
    let mut lo = hi;
    let mut m_lo;
    loop {
        lo = (lo - 10.0).max(opts.floor_db);
        m_lo = eval(lo)?;
        if m_lo.ber > target_ber {
            break;
        }
        hi = lo;
        m_hi = m_lo;
        if lo <= opts.floor_db {
            return Ok(SnrSearch::Reached {
                snr_db: lo,
                bracket: (lo, lo),
                ber_at: (m_lo.ber, m_lo.ber),
                rel_std_error: rse(&m_lo),
                evaluations,
            });
        }
    }
    while hi - lo > opts.tolerance_db {
        let mid = 0.5 * (lo + hi);
        let m = eval(mid)?;
        if m.ber > target_ber {
            lo = mid;
            m_lo = m;
        } else {
            hi = mid;
            m_hi = m;
        }
    }
    Ok(SnrSearch::Reached {
        snr_db: hi,
        bracket: (lo, hi),
        ber_at: (m_lo.ber, m_hi.ber),
        rel_std_error: rse(&m_lo).max(if m_hi.ber > 0.0 { rse(&m_hi) } else { 0.0 }),
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pn_model::PhaseNoiseModel;

    fn small(pn: PhaseNoiseModel) -> LinkSetup {
        let frame = FrameConfig {
            n_fft: 64,
            n_active: 32,
            cp_len: 0,
            n_symbols: 2,
            mod_order: 4,
            fs: 64e6,
            subcarrier_offset: 0,
        };
        let mut s = LinkSetup::new(frame, pn);
        s.stop = StopRule::fixed(8);
        s
    }

    fn all_estimators() -> Vec<EstimatorChoice> {
        vec![
            EstimatorChoice::Cpee,
            EstimatorChoice::Ci,
            EstimatorChoice::Li,
            EstimatorChoice::Dct { n_d: 3, phi_av: PhiAvMode::Derotated },
            EstimatorChoice::If,
            EstimatorChoice::Genie,
        ]
    }

    #[test]
    fn clean_link_is_error_free() {
        let mut s = small(PhaseNoiseModel::Off);
        s.covariance = Some(CovarianceSet::common_phase(32, 0.0).unwrap());
        let p = crate::ptrs::distributed_pattern(32, 8).unwrap();
        for e in all_estimators() {
            let m = run_point(&s, &p, e, SnrPoint::noiseless(), 3).unwrap();
            assert_eq!(m.ber, 0.0, "{e:?}");
            assert!(m.phase_mse < 1e-20, "{e:?}: {}", m.phase_mse);
            assert!(m.evm < 1e-12);
            assert_eq!(m.n_symbols, 8 * 2 * 28);
            assert_eq!(m.n_bits, m.n_symbols * 4);
        }
    }

    #[test]
    fn dct_incompatibility_is_config_error() {
        let s = small(PhaseNoiseModel::Off);
        let p = crate::ptrs::distributed_pattern(32, 16).unwrap();
        let e = EstimatorChoice::Dct { n_d: 5, phi_av: PhiAvMode::Derotated };
        assert!(matches!(run_point(&s, &p, e, SnrPoint::noiseless(), 1), Err(Error::Config(_))));
    }

    #[test]
    fn reproducible_and_schedule_free() {
        let mut s = small(PhaseNoiseModel::Wiener { step_variance: 1e-4 });
        s.stop = StopRule { min_errors: 5, min_frames: 1, max_frames: 40 };
        let pats = [PatternSpec::Distributed { l: 4 }];
        let ests = [EstimatorChoice::Li, EstimatorChoice::Cpee];
        let a = with_workers(1, || sweep(&s, &pats, &ests, &[5.0, 10.0], 9)).unwrap().unwrap();
        let b = with_workers(3, || sweep(&s, &pats, &ests, &[5.0, 10.0], 9)).unwrap().unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 4);
        let back = SweepResult::from_csv(&a.to_csv()).unwrap();
        assert_eq!(back.to_csv(), a.to_csv());
    }

    #[test]
    fn genie_never_loses() {
        let s = small(PhaseNoiseModel::Wiener { step_variance: 4e-3 });
        let p = crate::ptrs::distributed_pattern(32, 8).unwrap();
        let g = run_point(&s, &p, EstimatorChoice::Genie, SnrPoint::new(20.0).unwrap(), 4).unwrap();
        for e in [EstimatorChoice::Cpee, EstimatorChoice::Li] {
            let m = run_point(&s, &p, e, SnrPoint::new(20.0).unwrap(), 4).unwrap();
            assert!(g.ber <= m.ber, "{e:?}: {} vs {}", g.ber, m.ber);
            assert!(g.phase_mse <= m.phase_mse);
        }
    }

    #[test]
    fn near_coin_flip_target_is_cheap() {
        let s = small(PhaseNoiseModel::Off);
        let p = crate::ptrs::distributed_pattern(32, 8).unwrap();
        let r = snr_for_target_ber(&s, &p, EstimatorChoice::Cpee, 0.49, 1, SearchOptions::default()).unwrap();
        let snr = r.snr_db().unwrap();
        assert!(snr < -5.0, "{snr}");
        assert!(snr_for_target_ber(&s, &p, EstimatorChoice::Cpee, 0.5, 1, SearchOptions::default()).is_err());
    }
}
