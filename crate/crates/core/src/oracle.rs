//! Analytic ground truth for one DFT-s-OFDM symbol under phase noise.
//!
//! After FFT and inverse DFT the noiseless received block is
//! `r = H_eff s` with
//!
//! ```text
//! H_eff = D_a^H Map^T F_p diag(exp(j phi)) F_p^H Map D_a
//! ```
//!
//! so `r_k = alpha_k s_k + beta_k` where `alpha_k = H_eff[k, k]` is the
//! rotation term and `beta_k = sum_{n != k} H_eff[k, n] s_n` the
//! inter-carrier interference.
//!
//! Two independent evaluation paths are provided: the explicit dense matrix
//! chain, and the closed triple sums
//!
//! ```text
//! A_k     = sum_f sum_m sum_p exp(j2pi (m-f) p / N_p) exp(-j2pi (m-f) k / N_a) exp(j phi_p)
//! B_{n,k} = sum_f sum_m sum_p exp(j2pi (m-f) p / N_p) exp(j2pi (k f - n m) / N_a) exp(j phi_p)
//! ```
//!
//! with `alpha_k = A_k / (N_a N_p)` and `H_eff[k, n] = B_{n,k} / (N_a N_p)`.
//! With unitary transforms the two agree with a scale constant of exactly 1
//! ([`CONVENTION_SCALE`]) when `m` runs over the `N_a` allocated bins
//! ([`SumRange::Allocated`]). Letting `m` run over all `N_p` FFT bins
//! ([`SumRange::FullFft`]) also reduces to the identity for constant phase,
//! but not for time-varying phase; [`SumRange::FullFft`] is kept so the
//! discrepancy can be measured.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::{Fft, FftPlanner};

use crate::waveform::{FrameConfig, Modem};
use crate::{Error, Result, C64};

/// Ratio between the triple-sum normalization `1/(N_a N_p)` and the unitary
/// matrix chain.
pub const CONVENTION_SCALE: f64 = 1.0;

/// Largest FFT size the brute-force triple sums accept.
pub const BRUTE_FORCE_MAX_NFFT: usize = 64;

/// Index range of the receive-bin summation variable `m` in the triple sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumRange {
    /// `m` over the `N_a` allocated bins, matching the physical receiver.
    Allocated,
    /// `m` over all `N_p` FFT bins.
    FullFft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceDecomposition {
    pub alpha: Vec<C64>,
    pub beta: Vec<C64>,
    /// Dense effective matrix, when it was formed.
    pub h_eff: Option<DMatrix<C64>>,
}

impl InterferenceDecomposition {
    /// `s_k alpha_k + beta_k`.
    pub fn reconstruct(&self, s: &[C64]) -> Vec<C64> {
        s.iter()
            .zip(self.alpha.iter().zip(&self.beta))
            .map(|(s, (a, b))| s * a + b)
            .collect()
    }
}

fn check_body(phi: &[f64], cfg: &FrameConfig) -> Result<()> {
    cfg.validate()?;
    if phi.len() != cfg.n_fft {
        return Err(Error::Shape(format!(
            "phase segment has {} samples, expected one symbol body of {}",
            phi.len(),
            cfg.n_fft
        )));
    }
    Ok(())
}

/// Dense `N_a x N_a` effective matrix built as an explicit product of the
/// unitary transform matrices.
pub fn effective_matrix(phi: &[f64], cfg: &FrameConfig) -> Result<DMatrix<C64>> {
    check_body(phi, cfg)?;
    let (na, np, off) = (cfg.n_active, cfg.n_fft, cfg.subcarrier_offset);
    let unit = |num: f64, den: usize| C64::from_polar(1.0, 2.0 * PI * num / den as f64);
    let d_a = DMatrix::from_fn(na, na, |f, k| unit(-((f * k) as f64), na) / (na as f64).sqrt());
    let f_p = DMatrix::from_fn(np, np, |m, p| unit(-((m * p) as f64), np) / (np as f64).sqrt());
    let map = DMatrix::from_fn(np, na, |m, f| {
        if m == f + off {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let rot = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        np,
        phi.iter().map(|&p| C64::from_polar(1.0, p)),
    ));
    let tx = &map * &d_a;
    Ok(tx.adjoint() * &f_p * rot * f_p.adjoint() * tx)
}

/// Literal evaluation of the rotation and interference triple sums.
pub fn alpha_beta_sums(phi: &[f64], s: &[C64], cfg: &FrameConfig, range: SumRange) -> Result<InterferenceDecomposition> {
    check_body(phi, cfg)?;
    if cfg.n_fft > BRUTE_FORCE_MAX_NFFT {
        return Err(Error::Resource(format!(
            "triple sums are limited to N_p <= {BRUTE_FORCE_MAX_NFFT}, requested {}",
            cfg.n_fft
        )));
    }
    let (na, np) = (cfg.n_active, cfg.n_fft);
    if s.len() != na {
        return Err(Error::Shape(format!("data vector has {} entries, expected {na}", s.len())));
    }
    let m_count = match range {
        SumRange::Allocated => na,
        SumRange::FullFft => np,
    };
    // exp(j2pi x/N) for integer x, reduced modulo N
    let tw_p: Vec<C64> = (0..np).map(|x| C64::from_polar(1.0, 2.0 * PI * x as f64 / np as f64)).collect();
    let tw_a: Vec<C64> = (0..na).map(|x| C64::from_polar(1.0, 2.0 * PI * x as f64 / na as f64)).collect();
    let rp = |x: i64| tw_p[x.rem_euclid(np as i64) as usize];
    let ra = |x: i64| tw_a[x.rem_euclid(na as i64) as usize];
    let e_phi: Vec<C64> = phi.iter().map(|&p| C64::from_polar(1.0, p)).collect();

    // inner[d] = sum_p exp(j2pi d p / N_p) exp(j phi_p), indexed by d = m - f
    let d_min = -(na as i64 - 1);
    let d_max = m_count as i64 - 1;
    let inner: Vec<C64> = (d_min..=d_max)
        .map(|d| (0..np).map(|p| rp(d * p as i64) * e_phi[p]).sum())
        .collect();
    let at = |d: i64| inner[(d - d_min) as usize];

    let norm = CONVENTION_SCALE / (na * np) as f64;
    let mut h = DMatrix::zeros(na, na);
    for k in 0..na as i64 {
        for n in 0..na as i64 {
            let mut acc = C64::new(0.0, 0.0);
            for f in 0..na as i64 {
                for m in 0..m_count as i64 {
                    let phase = if n == k {
                        ra(-(m - f) * k)
                    } else {
                        ra(k * f - n * m)
                    };
                    acc += at(m - f) * phase;
                }
            }
            h[(k as usize, n as usize)] = acc * norm;
        }
    }
    let alpha: Vec<C64> = (0..na).map(|k| h[(k, k)]).collect();
    let beta = (0..na)
        .map(|k| (0..na).filter(|&n| n != k).map(|n| h[(k, n)] * s[n]).sum())
        .collect();
    Ok(InterferenceDecomposition {
        alpha,
        beta,
        h_eff: Some(h),
    })
}

/// Decomposition from the dense effective matrix.
pub fn decompose_dense(phi: &[f64], s: &[C64], cfg: &FrameConfig) -> Result<InterferenceDecomposition> {
    let h = effective_matrix(phi, cfg)?;
    if s.len() != cfg.n_active {
        return Err(Error::Shape(format!("data vector has {} entries, expected {}", s.len(), cfg.n_active)));
    }
    let alpha: Vec<C64> = (0..cfg.n_active).map(|k| h[(k, k)]).collect();
    let beta = (0..cfg.n_active)
        .map(|k| (0..cfg.n_active).filter(|&n| n != k).map(|n| h[(k, n)] * s[n]).sum())
        .collect();
    Ok(InterferenceDecomposition {
        alpha,
        beta,
        h_eff: Some(h),
    })
}

/// `phi'_k = arg(alpha_k)` together with `max_k ||alpha_k| - 1|`.
pub fn true_phi_prime(decomp: &InterferenceDecomposition) -> (Vec<f64>, f64) {
    phi_prime_from_alpha(&decomp.alpha)
}

pub fn phi_prime_from_alpha(alpha: &[C64]) -> (Vec<f64>, f64) {
    let residual = alpha.iter().map(|a| (a.norm() - 1.0).abs()).fold(0.0, f64::max);
    (alpha.iter().map(|a| a.arg()).collect(), residual)
}

/// Fast per-symbol oracle for full-size frames.
///
/// `F_p diag(exp(j phi)) F_p^H` is circulant with first column
/// `c = FFT(exp(j phi)) / N_p`, which reduces the diagonal of `H_eff` to a
/// triangularly weighted sum
/// `alpha_k = (1/N_a) sum_{|d| < N_a} (N_a - |d|) c[d mod N_p] exp(j2pi d k / N_a)`,
/// evaluated with one FFT of each size. The interference follows from the
/// noiseless chain output as `beta = r - s * alpha`.
#[derive(Clone)]
pub struct Oracle {
    modem: Modem,
    fft_p: Arc<dyn Fft<f64>>,
    ifft_a: Arc<dyn Fft<f64>>,
}

impl Oracle {
    pub fn new(cfg: &FrameConfig) -> Result<Self> {
        let mut planner = FftPlanner::new();
        Ok(Self {
            modem: Modem::new(cfg)?,
            fft_p: planner.plan_fft_forward(cfg.n_fft),
            ifft_a: planner.plan_fft_inverse(cfg.n_active),
        })
    }

    pub fn config(&self) -> &FrameConfig {
        self.modem.config()
    }

    /// Rotation terms for one symbol body of phase samples.
    pub fn alpha(&self, phi: &[f64]) -> Result<Vec<C64>> {
        let cfg = self.modem.config();
        check_body(phi, cfg)?;
        let (na, np) = (cfg.n_active, cfg.n_fft);
        let mut c: Vec<C64> = phi.iter().map(|&p| C64::from_polar(1.0, p)).collect();
        self.fft_p.process(&mut c);
        let mut g: Vec<C64> = (0..na)
            .map(|e| c[e] * (na - e) as f64 + c[np - na + e] * e as f64)
            .collect();
        self.ifft_a.process(&mut g);
        let scale = 1.0 / (na * np) as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        Ok(g)
    }

    /// Noiseless received block through the modem with phase noise.
    pub fn received(&self, phi: &[f64], s: &[C64]) -> Result<Vec<C64>> {
        let cfg = self.modem.config();
        check_body(phi, cfg)?;
        let tx = self.modem.modulate_symbol(s)?;
        let body: Vec<C64> = tx[cfg.cp_len..]
            .iter()
            .zip(phi)
            .map(|(x, &p)| x * C64::from_polar(1.0, p))
            .collect();
        self.modem.demodulate_body(&body)
    }

    pub fn decompose(&self, phi: &[f64], s: &[C64]) -> Result<InterferenceDecomposition> {
        let alpha = self.alpha(phi)?;
        let r = self.received(phi, s)?;
        let beta = r
            .iter()
            .zip(s.iter().zip(&alpha))
            .map(|(r, (s, a))| r - s * a)
            .collect();
        Ok(InterferenceDecomposition { alpha, beta, h_eff: None })
    }
}

/// Largest relative deviation `max |a - b| / max |b|` between two vectors.
pub fn max_relative_deviation(a: &[C64], b: &[C64]) -> f64 {
    let scale = b.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pn_model::wiener_trace;

    fn cfg(np: usize, na: usize, off: usize) -> FrameConfig {
        FrameConfig {
            n_fft: np,
            n_active: na,
            cp_len: 0,
            n_symbols: 1,
            mod_order: 2,
            fs: 1.0,
            subcarrier_offset: off,
        }
    }

    fn data(n: usize, seed: u64) -> Vec<C64> {
        crate::ptrs::pilot_sequence(n, seed).unwrap()
    }

    #[test]
    fn zero_phase_gives_identity() {
        let c = cfg(16, 8, 0);
        let phi = vec![0.0; 16];
        let h = effective_matrix(&phi, &c).unwrap();
        assert!((h - DMatrix::<C64>::identity(8, 8)).norm() < 1e-12);
        for range in [SumRange::Allocated, SumRange::FullFft] {
            let d = alpha_beta_sums(&phi, &data(8, 1), &c, range).unwrap();
            assert!(d.alpha.iter().all(|a| (a - 1.0).norm() < 1e-12));
            assert!(d.beta.iter().all(|b| b.norm() < 1e-12));
        }
    }

    #[test]
    fn constant_phase_commutes() {
        let c = cfg(16, 8, 2);
        let phi = vec![0.7; 16];
        let h = effective_matrix(&phi, &c).unwrap();
        let expect = DMatrix::<C64>::identity(8, 8) * C64::from_polar(1.0, 0.7);
        assert!((h - expect).norm() < 1e-12);
        for range in [SumRange::Allocated, SumRange::FullFft] {
            let d = alpha_beta_sums(&phi, &data(8, 2), &c, range).unwrap();
            assert!(d.alpha.iter().all(|a| (a - C64::from_polar(1.0, 0.7)).norm() < 1e-12));
            assert!(d.beta.iter().all(|b| b.norm() < 1e-12));
        }
    }

    #[test]
    fn allocated_sums_match_dense_chain() {
        let c = cfg(16, 8, 3);
        for seed in 0..5 {
            let phi = wiener_trace(0.05, 16, 1.0, seed).unwrap().into_samples();
            let s = data(8, seed + 10);
            let dense = decompose_dense(&phi, &s, &c).unwrap();
            let sums = alpha_beta_sums(&phi, &s, &c, SumRange::Allocated).unwrap();
            let hd = dense.h_eff.as_ref().unwrap();
            let hs = sums.h_eff.as_ref().unwrap();
            assert!((hd - hs).norm() / hd.norm() < 1e-12);
        }
    }

    #[test]
    fn fast_oracle_matches_dense() {
        for (np, na, off) in [(16, 8, 0), (16, 8, 5), (32, 12, 7), (64, 63, 1)] {
            let c = cfg(np, na, off);
            let oracle = Oracle::new(&c).unwrap();
            let phi = wiener_trace(0.02, np, 1.0, na as u64).unwrap().into_samples();
            let s = data(na, 3);
            let dense = decompose_dense(&phi, &s, &c).unwrap();
            let fast = oracle.decompose(&phi, &s).unwrap();
            assert!(max_relative_deviation(&fast.alpha, &dense.alpha) < 1e-12);
            assert!(max_relative_deviation(&fast.beta, &dense.beta) < 1e-10);
        }
    }

    #[test]
    fn brute_force_cap() {
        let c = cfg(128, 64, 0);
        let err = alpha_beta_sums(&vec![0.0; 128], &data(64, 1), &c, SumRange::Allocated);
        assert!(matches!(err, Err(Error::Resource(_))));
    }

    #[test]
    fn residual_shrinks_with_power() {
        let c = cfg(64, 32, 0);
        let oracle = Oracle::new(&c).unwrap();
        let base = wiener_trace(1.0, 64, 1.0, 77).unwrap().into_samples();
        let mut last = f64::INFINITY;
        for scale in [0.3, 0.1, 0.03] {
            let phi: Vec<f64> = base.iter().map(|p| p * scale).collect();
            let (_, res) = phi_prime_from_alpha(&oracle.alpha(&phi).unwrap());
            assert!(res < last, "{res} !< {last}");
            last = res;
        }
    }

    #[test]
    fn phi_prime_of_trivial_cases() {
        let c = cfg(16, 8, 0);
        let oracle = Oracle::new(&c).unwrap();
        let d = oracle.decompose(&vec![0.0; 16], &data(8, 1)).unwrap();
        let (p, res) = true_phi_prime(&d);
        assert!(p.iter().all(|x| x.abs() < 1e-14) && res < 1e-14);
        let d = oracle.decompose(&vec![-0.4; 16], &data(8, 1)).unwrap();
        let (p, _) = true_phi_prime(&d);
        assert!(p.iter().all(|x| (x + 0.4).abs() < 1e-14));
    }
}
