//! Second-order statistics for the interpolation filter.
//!
//! `R_phi = E[Phi' Phi'^H]` and `R_beta = E[beta beta^H]` are trained by
//! Monte Carlo: each DFT-s-OFDM symbol of a simulated frame contributes one
//! exact `(alpha, beta)` pair from [`crate::oracle`], so training needs no
//! thermal noise. `R_w` is analytic.
//!
//! Training symbols are all random data (no pilots), so a trained set is
//! independent of the pilot layout and can serve every pattern.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::oracle::{phi_prime_from_alpha, Oracle};
use crate::pn_model::PhaseNoiseModel;
use crate::rng::{derive_seed, rng_from};
use crate::waveform::{constellation, FrameConfig};
use crate::{Error, Result, C64};

/// Tolerance on `|R - R^H|` entries.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Eigenvalues may dip to `-PSD_TOL * trace / N_a`.
pub const PSD_TOL: f64 = 1e-8;
pub const MIN_TRAINING_FRAMES: usize = 100;
pub const DEFAULT_TRAINING_FRAMES: usize = 2000;
/// Symbols per accumulation batch; fixed so results do not depend on the
/// number of workers.
const BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMeta {
    pub model_id: String,
    pub n_active: usize,
    pub n_frames: usize,
    pub sigma2: f64,
    pub seed: u64,
    pub cfg_hash: String,
    /// `||mean(beta)||` over training, `NaN` for analytic sets.
    pub beta_mean_norm: f64,
}

impl CovarianceMeta {
    pub fn analytic(model_id: &str, n_active: usize, sigma2: f64) -> Self {
        Self {
            model_id: model_id.to_string(),
            n_active,
            n_frames: 0,
            sigma2,
            seed: 0,
            cfg_hash: String::new(),
            beta_mean_norm: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    pub r_phi: DMatrix<C64>,
    pub r_beta: DMatrix<C64>,
    pub r_w: DMatrix<C64>,
    pub meta: CovarianceMeta,
}

/// `sigma2 * I`.
pub fn rw_model(sigma2: f64, n_active: usize) -> Result<DMatrix<C64>> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain(format!("noise variance must be >= 0, got {sigma2}")));
    }
    Ok(DMatrix::identity(n_active, n_active) * C64::new(sigma2, 0.0))
}

/// Short content hash of the frame parameters that affect training.
pub fn cfg_hash(cfg: &FrameConfig) -> String {
    let text = format!(
        "{}:{}:{}:{}:{}:{}:{}",
        cfg.n_fft, cfg.n_active, cfg.cp_len, cfg.n_symbols, cfg.mod_order, cfg.fs, cfg.subcarrier_offset
    );
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

fn check_hermitian_psd(name: &str, m: &DMatrix<C64>) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Validation(format!("{name} is not square")));
    }
    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Validation(format!("{name} has non-finite entries")));
    }
    let asym = crate::estimators::hermitian_asymmetry(m);
    if asym > HERMITIAN_TOL {
        return Err(Error::Validation(format!("{name} is not Hermitian (asymmetry {asym:.3e})")));
    }
    if n == 0 {
        return Ok(());
    }
    // R + tol I admits a Cholesky factor iff min eig(R) > -tol
    let trace = m.trace().re.max(0.0);
    let shift = PSD_TOL * trace / n as f64;
    let floor = if shift > 0.0 { shift } else { f64::MIN_POSITIVE };
    if !is_positive_definite(m, floor) {
        return Err(Error::Validation(format!(
            "{name} is not positive semidefinite (eigenvalue below -{shift:.3e})"
        )));
    }
    Ok(())
}

/// Hermitian Cholesky of `m + shift I` on the upper triangle, failing on the
/// first pivot that is not strictly positive.
pub fn is_positive_definite(m: &DMatrix<C64>, shift: f64) -> bool {
    let n = m.nrows();
    // row-major upper triangle: u[i][j] for j >= i
    let mut u: Vec<Vec<C64>> = (0..n).map(|i| (i..n).map(|j| m[(i, j)]).collect()).collect();
    for i in 0..n {
        u[i][0].re += shift;
    }
    for k in 0..n {
        let pivot = u[k][0].re;
        if !(pivot > 0.0) {
            return false;
        }
        let d = pivot.sqrt();
        let row: Vec<C64> = u[k].iter().map(|v| v / d).collect();
        for i in k + 1..n {
            let f = row[i - k].conj();
            let target = &mut u[i];
            for (t, r) in target.iter_mut().zip(&row[i - k..]) {
                *t -= f * r;
            }
        }
    }
    true
}

impl CovarianceSet {
    pub fn n_active(&self) -> usize {
        self.r_phi.nrows()
    }

    /// Hermitian symmetry, PSD-ness, consistent shapes, unit `R_phi` diagonal.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_active();
        for (name, m) in [("R_phi", &self.r_phi), ("R_beta", &self.r_beta), ("R_w", &self.r_w)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Validation(format!("{name} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
            }
            check_hermitian_psd(name, m)?;
        }
        if let Some(i) = (0..n).find(|&i| (self.r_phi[(i, i)].re - 1.0).abs() > 1e-10) {
            return Err(Error::Validation(format!("R_phi diagonal entry {i} is {}, expected 1", self.r_phi[(i, i)])));
        }
        Ok(())
    }

    /// Same phase statistics at another noise level.
    pub fn with_noise(&self, sigma2: f64) -> Result<Self> {
        let mut out = self.clone();
        out.r_w = rw_model(sigma2, self.n_active())?;
        out.meta.sigma2 = sigma2;
        Ok(out)
    }

    /// Statistics of a phase process that is constant across the block.
    pub fn common_phase(n_active: usize, sigma2: f64) -> Result<Self> {
        Ok(Self {
            r_phi: DMatrix::from_element(n_active, n_active, C64::new(1.0, 0.0)),
            r_beta: DMatrix::zeros(n_active, n_active),
            r_w: rw_model(sigma2, n_active)?,
            meta: CovarianceMeta::analytic("common-phase", n_active, sigma2),
        })
    }

    /// Whether the sample mean of `beta` is small enough to treat `beta` as
    /// zero mean: the RMS entry of `mean(beta)` stays below 10 % of the RMS
    /// entry of `beta`, i.e. `||mean(beta)|| < 0.1 sqrt(tr R_beta)`.
    pub fn beta_mean_negligible(&self) -> bool {
        let m = self.meta.beta_mean_norm;
        m.is_nan() || m <= 1e-12 || m < 0.1 * self.r_beta.trace().re.max(0.0).sqrt()
    }

    /// CSV cache: `#`-prefixed header lines, a column header, then one row
    /// per upper-triangle entry of each matrix.
    pub fn to_csv(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        let _ = writeln!(out, "# model_id={}", m.model_id);
        let _ = writeln!(out, "# n_active={}", m.n_active);
        let _ = writeln!(out, "# n_frames={}", m.n_frames);
        let _ = writeln!(out, "# sigma2={:e}", m.sigma2);
        let _ = writeln!(out, "# seed={}", m.seed);
        let _ = writeln!(out, "# cfg_hash={}", m.cfg_hash);
        let _ = writeln!(out, "# beta_mean_norm={:e}", m.beta_mean_norm);
        out.push_str("matrix,row,col,re,im\n");
        for (name, mat) in [("r_phi", &self.r_phi), ("r_beta", &self.r_beta), ("r_w", &self.r_w)] {
            for i in 0..mat.nrows() {
                for j in i..mat.ncols() {
                    let v = mat[(i, j)];
                    // `+ 0.0` folds negative zero
                    let _ = writeln!(out, "{name},{i},{j},{:e},{:e}", v.re + 0.0, v.im + 0.0);
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut lines = text.lines().peekable();
        while let Some(line) = lines.peek() {
            let Some(kv) = line.strip_prefix('#') else { break };
            if let Some((k, v)) = kv.trim().split_once('=') {
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
            lines.next();
        }
        let get = |k: &str| header.get(k).cloned().ok_or_else(|| Error::Parse(format!("cache header lacks {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Parse(format!("bad {k} in cache header"))) };
        let n: usize = get("n_active")?.parse().map_err(|_| Error::Parse("bad n_active".into()))?;
        let meta = CovarianceMeta {
            model_id: get("model_id")?,
            n_active: n,
            n_frames: num("n_frames")? as usize,
            sigma2: num("sigma2")?,
            seed: get("seed")?.parse().map_err(|_| Error::Parse("bad seed".into()))?,
            cfg_hash: get("cfg_hash")?,
            beta_mean_norm: num("beta_mean_norm")?,
        };
        match lines.next() {
            Some("matrix,row,col,re,im") => {}
            other => return Err(Error::Parse(format!("unexpected column header {other:?}"))),
        }
        let mut mats = [DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
        let mut seen = [0usize; 3];
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse(format!("malformed cache row {}: {line}", ln + 1));
            if f.len() != 5 {
                return Err(bad());
            }
            let which = match f[0] {
                "r_phi" => 0,
                "r_beta" => 1,
                "r_w" => 2,
                _ => return Err(bad()),
            };
            let i: usize = f[1].parse().map_err(|_| bad())?;
            let j: usize = f[2].parse().map_err(|_| bad())?;
            let re: f64 = f[3].parse().map_err(|_| bad())?;
            let im: f64 = f[4].parse().map_err(|_| bad())?;
            if i > j || j >= n {
                return Err(bad());
            }
            mats[which][(i, j)] = C64::new(re, im);
            if i != j {
                mats[which][(j, i)] = C64::new(re, -im);
            }
            seen[which] += 1;
        }
        let want = n * (n + 1) / 2;
        if seen.iter().any(|&c| c != want) {
            return Err(Error::Validation(format!("cache holds {seen:?} entries per matrix, expected {want}")));
        }
        let [r_phi, r_beta, r_w] = mats;
        let set = Self { r_phi, r_beta, r_w, meta };
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Running sums for `sum x x^H` kept as real and imaginary parts so the
/// heavy lifting is two real matrix products per batch.
struct OuterAccumulator {
    re: DMatrix<f64>,
    im: DMatrix<f64>,
}

impl OuterAccumulator {
    fn new(n: usize) -> Self {
        Self {
            re: DMatrix::zeros(n, n),
            im: DMatrix::zeros(n, n),
        }
    }

    /// Add `X X^H` for the columns of `X = xr + j xi`.
    fn add_batch(&mut self, xr: &DMatrix<f64>, xi: &DMatrix<f64>) {
        // Re: xr xr^T + xi xi^T ; Im: xi xr^T - xr xi^T
        self.re.gemm(1.0, xr, &xr.transpose(), 1.0);
        self.re.gemm(1.0, xi, &xi.transpose(), 1.0);
        let cross = xi * xr.transpose();
        self.im += &cross - cross.transpose();
    }

    fn add(&mut self, other: &OuterAccumulator) {
        self.re += &other.re;
        self.im += &other.im;
    }

    fn finish(&self, count: usize) -> DMatrix<C64> {
        let n = self.re.nrows();
        let s = 1.0 / count as f64;
        let mut m = DMatrix::from_fn(n, n, |i, j| C64::new(self.re[(i, j)], self.im[(i, j)]) * s);
        // enforce exact Hermitian symmetry
        for i in 0..n {
            m[(i, i)].im = 0.0;
            for j in i + 1..n {
                let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                m[(i, j)] = avg;
                m[(j, i)] = avg.conj();
            }
        }
        m
    }
}

struct BatchStats {
    phi: OuterAccumulator,
    beta: OuterAccumulator,
    beta_sum: Vec<C64>,
    count: usize,
}

/// Training for the frames of one batch index.
fn train_batch(
    oracle: &Oracle,
    pn: &PhaseNoiseModel,
    points: &[C64],
    frames: std::ops::Range<usize>,
    seed: u64,
) -> Result<BatchStats> {
    let cfg = oracle.config();
    let na = cfg.n_active;
    let cols = frames.len() * cfg.n_symbols;
    let mut pr = DMatrix::zeros(na, cols);
    let mut pi = DMatrix::zeros(na, cols);
    let mut br = DMatrix::zeros(na, cols);
    let mut bi = DMatrix::zeros(na, cols);
    let mut beta_sum = vec![C64::new(0.0, 0.0); na];
    let mut col = 0;
    for f in frames {
        let trace = pn.frame_trace(cfg.frame_len(), cfg.fs, derive_seed(seed, &[f as u64, 1]))?;
        let mut rng = rng_from(derive_seed(seed, &[f as u64, 2]));
        for sym in 0..cfg.n_symbols {
            let phi = &trace.samples()[cfg.body_range(sym)];
            let s: Vec<C64> = (0..na).map(|_| points[rng.random_range(0..points.len())]).collect();
            let alpha = oracle.alpha(phi)?;
            let r = oracle.received(phi, &s)?;
            let (phi_p, _) = phi_prime_from_alpha(&alpha);
            for n in 0..na {
                let e = C64::from_polar(1.0, phi_p[n]);
                let b = r[n] - s[n] * alpha[n];
                pr[(n, col)] = e.re;
                pi[(n, col)] = e.im;
                br[(n, col)] = b.re;
                bi[(n, col)] = b.im;
                beta_sum[n] += b;
            }
            col += 1;
        }
    }
    let mut phi_acc = OuterAccumulator::new(na);
    phi_acc.add_batch(&pr, &pi);
    let mut beta_acc = OuterAccumulator::new(na);
    beta_acc.add_batch(&br, &bi);
    Ok(BatchStats {
        phi: phi_acc,
        beta: beta_acc,
        beta_sum,
        count: cols,
    })
}

fn frames_per_batch(cfg: &FrameConfig) -> usize {
    BATCH.div_ceil(cfg.n_symbols).max(1)
}

/// Train `R_phi` and `R_beta` from `n_frames` independent frames. `R_w` is
/// set to `sigma2 * I`.
///
/// Frames are grouped into fixed batches whose partial sums are added in
/// batch order, so the result is identical for any worker count.
pub fn train_covariances(
    cfg: &FrameConfig,
    pn: &PhaseNoiseModel,
    n_frames: usize,
    sigma2: f64,
    seed: u64,
) -> Result<CovarianceSet> {
    cfg.validate()?;
    if n_frames < MIN_TRAINING_FRAMES {
        return Err(Error::Config(format!(
            "training needs at least {MIN_TRAINING_FRAMES} frames, got {n_frames}"
        )));
    }
    let oracle = Oracle::new(cfg)?;
    let points = constellation(cfg.mod_order)?;
    let na = cfg.n_active;
    let fpb = frames_per_batch(cfg);
    let batches: Vec<std::ops::Range<usize>> = (0..n_frames.div_ceil(fpb))
        .map(|b| b * fpb..((b + 1) * fpb).min(n_frames))
        .collect();

    let mut phi = OuterAccumulator::new(na);
    let mut beta = OuterAccumulator::new(na);
    let mut beta_sum = vec![C64::new(0.0, 0.0); na];
    let mut count = 0;
    let mut absorb = |st: BatchStats| {
        phi.add(&st.phi);
        beta.add(&st.beta);
        for (a, b) in beta_sum.iter_mut().zip(&st.beta_sum) {
            *a += b;
        }
        count += st.count;
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        // bounded waves keep memory at a few partial matrices per worker
        let wave = rayon::current_num_threads().max(1) * 2;
        for chunk in batches.chunks(wave) {
            let parts: Vec<Result<BatchStats>> = chunk
                .par_iter()
                .map(|r| train_batch(&oracle, pn, &points, r.clone(), seed))
                .collect();
            for p in parts {
                absorb(p?);
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    for r in &batches {
        absorb(train_batch(&oracle, pn, &points, r.clone(), seed)?);
    }

    let mut r_phi = phi.finish(count);
    for i in 0..na {
        // |Phi'_n| = 1 exactly; remove rounding
        r_phi[(i, i)] = C64::new(1.0, 0.0);
    }
    let r_beta = beta.finish(count);
    let beta_mean_norm = beta_sum.iter().map(|b| (b / count as f64).norm_sqr()).sum::<f64>().sqrt();
    let set = CovarianceSet {
        r_phi,
        r_beta,
        r_w: rw_model(sigma2, na)?,
        meta: CovarianceMeta {
            model_id: pn.model_id(),
            n_active: na,
            n_frames,
            sigma2,
            seed,
            cfg_hash: cfg_hash(cfg),
            beta_mean_norm,
        },
    };
    set.validate()?;
    Ok(set)
}
