//! Pilot-based phase estimators and the common de-rotation step.
//!
//! Every estimator maps the pilot observations of one received block to a
//! length-`N_a` phase estimate which [`correct`] removes from the block:
//!
//! - CPE estimation: one common angle `arg(sum a_i)` for the whole block.
//! - Constant interpolation: each pilot phase held until the next pilot.
//! - Linear interpolation: unwrapped pilot phases joined by straight lines,
//!   extended past the outer pilots with the slope of the nearest segment.
//! - DCT fitting: common phase plus a least-squares fit of the residual
//!   pilot phases onto the first `N_D` orthonormal DCT-II basis vectors.
//! - Interpolation filter: the LMMSE matrix `Z = R_phi M_p^H A^+` applied to
//!   the pilot observations, `phi_hat = arg(Z a_p)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::covariance::CovarianceSet;
use crate::ptrs::{group_average, PtrsPattern, SamplingMatrix};
use crate::{Error, Result, C64};

/// De-rotated pilot observations `a_i = r_i s_i^* / |s_i|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    pub a_p: Vec<C64>,
    pub chi_p: Vec<usize>,
    /// `s_i^* / |s_i|^2` for each pilot.
    pub s_p: Vec<C64>,
}

impl PilotObservation {
    pub fn k(&self) -> usize {
        self.a_p.len()
    }

    /// Phases `arg(a_i)`.
    pub fn phases(&self) -> Vec<f64> {
        self.a_p.iter().map(|a| a.arg()).collect()
    }

    /// Replace each contiguous group by its mean observation placed at
    /// `index_of(group)`.
    fn grouped(&self, pattern: &PtrsPattern, use_starts: bool) -> Result<PilotObservation> {
        let g = group_average(&self.a_p, pattern)?;
        let n = g.values.len();
        Ok(PilotObservation {
            a_p: g.values,
            chi_p: if use_starts { g.starts } else { g.centers },
            s_p: vec![C64::new(1.0, 0.0); n],
        })
    }
}

pub fn observe_pilots(r: &[C64], pattern: &PtrsPattern, pilots: &[C64]) -> Result<PilotObservation> {
    if r.len() != pattern.n_active() {
        return Err(Error::Shape(format!(
            "received block has {} values, pattern expects {}",
            r.len(),
            pattern.n_active()
        )));
    }
    if pilots.len() != pattern.k() {
        return Err(Error::Shape(format!("{} pilot values for K = {}", pilots.len(), pattern.k())));
    }
    let s_p: Vec<C64> = pilots.iter().map(|s| s.conj() / s.norm_sqr()).collect();
    let a_p = pattern.indices().iter().zip(&s_p).map(|(&i, sp)| r[i] * sp).collect();
    Ok(PilotObservation {
        a_p,
        chi_p: pattern.indices().to_vec(),
        s_p,
    })
}

/// Per-position phase estimate in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEstimate {
    pub phi_hat: Vec<f64>,
}

impl PhaseEstimate {
    pub fn constant(n: usize, phase: f64) -> Self {
        Self { phi_hat: vec![phase; n] }
    }

    pub fn len(&self) -> usize {
        self.phi_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_hat.is_empty()
    }
}

/// Common phase error: `arg(sum_i a_i)`.
pub fn cpee_estimate(obs: &PilotObservation) -> Result<f64> {
    if obs.k() == 0 {
        return Err(Error::Degenerate("no pilots to estimate from".into()));
    }
    let sum: C64 = obs.a_p.iter().sum();
    if sum.norm() == 0.0 {
        return Err(Error::Degenerate("pilot observations sum to zero; phase undefined".into()));
    }
    Ok(sum.arg())
}

/// Piecewise-constant phase: pilot `j`'s phase covers `p_j..p_{j+1}`.
pub fn ci_estimate(obs: &PilotObservation, n_active: usize) -> Result<PhaseEstimate> {
    if obs.chi_p.first() != Some(&0) {
        return Err(Error::Config(
            "constant interpolation needs a pilot at index 0 so every position is covered".into(),
        ));
    }
    let mut phi = vec![0.0; n_active];
    for (j, (&start, a)) in obs.chi_p.iter().zip(&obs.a_p).enumerate() {
        let end = obs.chi_p.get(j + 1).copied().unwrap_or(n_active);
        phi[start..end].fill(a.arg());
    }
    Ok(PhaseEstimate { phi_hat: phi })
}

/// Wrap an angle difference into `(-pi, pi]`.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Unwrap so that consecutive differences lie in `(-pi, pi]`.
pub fn unwrap_phases(phases: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phases.len());
    for (i, &p) in phases.iter().enumerate() {
        if i == 0 {
            out.push(p);
        } else {
            let prev: f64 = out[i - 1];
            out.push(prev + wrap_angle(p - prev));
        }
    }
    out
}

/// Piecewise-linear phase through the unwrapped pilot phases. A single pilot
/// degenerates to a constant.
pub fn li_estimate(obs: &PilotObservation, n_active: usize) -> Result<PhaseEstimate> {
    let k = obs.k();
    if k == 0 {
        return Err(Error::Degenerate("no pilots to interpolate".into()));
    }
    let ph = unwrap_phases(&obs.phases());
    if k == 1 {
        return Ok(PhaseEstimate::constant(n_active, ph[0]));
    }
    let x = &obs.chi_p;
    let mut phi = Vec::with_capacity(n_active);
    let mut seg = 0;
    for n in 0..n_active {
        while seg + 2 < k && n >= x[seg + 1] {
            seg += 1;
        }
        let (x0, x1) = (x[seg] as f64, x[seg + 1] as f64);
        let slope = (ph[seg + 1] - ph[seg]) / (x1 - x0);
        phi.push(ph[seg] + slope * (n as f64 - x0));
    }
    Ok(PhaseEstimate { phi_hat: phi })
}

/// How the common term of the DCT estimator is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiAvMode {
    /// `arg(sum_i r_i s_i^* / |s_i|^2)`.
    #[default]
    Derotated,
    /// `arg(sum_i r_i)`, ignoring the pilot values.
    RawSum,
}

/// Orthonormal DCT-II basis over the block and sampled at the pilots, with
/// the least-squares fitting matrix `(Psi_K^T Psi_K)^-1 Psi_K^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    pub psi_na: DMatrix<f64>,
    pub psi_k: DMatrix<f64>,
    fit: DMatrix<f64>,
    condition: f64,
}

/// `psi_n(k) = c_n sqrt(2/N) cos(pi n (2k + 1) / (2N))`, `c_0 = 1/sqrt(2)`.
pub fn dct_basis_value(n: usize, k: usize, len: usize) -> f64 {
    let c = if n == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
    c * (2.0 / len as f64).sqrt() * (PI * n as f64 * (2 * k + 1) as f64 / (2 * len) as f64).cos()
}

/// Normal matrices with a larger condition number are rejected.
pub const DCT_MAX_CONDITION: f64 = 1e12;

impl DctBasis {
    pub fn new(n_active: usize, chi_p: &[usize], n_d: usize) -> Result<Self> {
        let k = chi_p.len();
        if n_d == 0 {
            return Err(Error::Config("DCT fitting needs at least one coefficient".into()));
        }
        if n_d > k {
            return Err(Error::Config(format!(
                "DCT coefficient count N_D = {n_d} exceeds the pilot count K = {k}; \
                 the least-squares normal matrix is only invertible for N_D <= K"
            )));
        }
        if chi_p.iter().any(|&i| i >= n_active) {
            return Err(Error::Config("pilot index outside the block".into()));
        }
        let psi_na = DMatrix::from_fn(n_active, n_d, |row, n| dct_basis_value(n, row, n_active));
        let psi_k = DMatrix::from_fn(k, n_d, |row, n| psi_na[(chi_p[row], n)]);
        let normal = psi_k.transpose() * &psi_k;
        let sv = normal.clone().singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= DCT_MAX_CONDITION) {
            return Err(Error::Numerical(format!(
                "DCT normal matrix is singular for these pilots (condition number {condition:.3e})"
            )));
        }
        let inv = normal
            .try_inverse()
            .ok_or_else(|| Error::Numerical(format!("DCT normal matrix not invertible (condition {condition:.3e})")))?;
        let fit = inv * psi_k.transpose();
        Ok(Self {
            psi_na,
            psi_k,
            fit,
            condition,
        })
    }

    pub fn n_d(&self) -> usize {
        self.psi_na.ncols()
    }

    /// Condition number of `Psi_K^T Psi_K`.
    pub fn condition(&self) -> f64 {
        self.condition
    }
}

/// DCT-based estimate: `phi_av + Psi_Na x_p`.
pub fn dct_estimate(obs: &PilotObservation, basis: &DctBasis, r_p: &[C64], mode: PhiAvMode) -> Result<PhaseEstimate> {
    if obs.k() != basis.psi_k.nrows() {
        return Err(Error::Shape(format!(
            "{} observations for a basis sampled at {} pilots",
            obs.k(),
            basis.psi_k.nrows()
        )));
    }
    let sum: C64 = match mode {
        PhiAvMode::Derotated => obs.a_p.iter().sum(),
        PhiAvMode::RawSum => {
            if r_p.len() != obs.k() {
                return Err(Error::Shape("raw pilot vector length differs from K".into()));
            }
            r_p.iter().sum()
        }
    };
    if sum.norm() == 0.0 {
        return Err(Error::Degenerate("pilot sum is zero; common phase undefined".into()));
    }
    let phi_av = sum.arg();
    let rot = C64::from_polar(1.0, -phi_av);
    let resid = DVector::from_iterator(obs.k(), obs.a_p.iter().map(|a| (a * rot).arg()));
    let x = &basis.fit * resid;
    let fitted = &basis.psi_na * x;
    Ok(PhaseEstimate {
        phi_hat: fitted.iter().map(|v| phi_av + v).collect(),
    })
}

/// Largest tolerated `|A - A^H|` entry for covariance inputs.
pub const HERMITIAN_TOL: f64 = 1e-8;
/// Condition number above which the filter normal matrix is regularized.
pub const RIDGE_CONDITION: f64 = 1e12;
/// Relative ridge `eps` in `A + eps trace(A)/K I`.
pub const RIDGE_EPS: f64 = 1e-10;

pub fn hermitian_asymmetry(m: &DMatrix<C64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// The `N_a x K` interpolation filter.
#[derive(Debug, Clone, PartialEq)]
pub struct IfFilter {
    pub z: DMatrix<C64>,
    /// Whether the ridge term was needed.
    pub regularized: bool,
}

/// Pilot-independent parts of the filter design, so the filter can be
/// rebuilt cheaply for new pilot values.
#[derive(Debug, Clone)]
pub struct IfDesign {
    /// `R_phi^H M_p^H`.
    cross: DMatrix<C64>,
    /// `M_p R_phi^H M_p^H`.
    p: DMatrix<C64>,
    /// `M_p R_beta^H M_p^H`.
    q_base: DMatrix<C64>,
    /// `M_p R_w^H M_p^H`.
    v_base: DMatrix<C64>,
}

impl IfDesign {
    pub fn new(cov: &CovarianceSet, m_p: &SamplingMatrix) -> Result<Self> {
        let na = m_p.n_active();
        for (name, m) in [("R_phi", &cov.r_phi), ("R_beta", &cov.r_beta), ("R_w", &cov.r_w)] {
            if m.nrows() != na || m.ncols() != na {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {na}x{na}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let asym = hermitian_asymmetry(m);
            if asym > HERMITIAN_TOL {
                return Err(Error::Validation(format!("{name} is not Hermitian (asymmetry {asym:.3e})")));
            }
        }
        let rows = m_p.rows();
        let k = rows.len();
        // entries of R^H are conj(R[j, i])
        let adj = |r: &DMatrix<C64>, i: usize, j: usize| r[(j, i)].conj();
        let cross = DMatrix::from_fn(na, k, |i, j| adj(&cov.r_phi, i, rows[j]));
        let proj = |r: &DMatrix<C64>| DMatrix::from_fn(k, k, |i, j| adj(r, rows[i], rows[j]));
        Ok(Self {
            cross,
            p: proj(&cov.r_phi),
            q_base: proj(&cov.r_beta),
            v_base: proj(&cov.r_w),
        })
    }

    pub fn k(&self) -> usize {
        self.p.nrows()
    }

    /// `A = P + Q + V` for pilot factors `s_p`.
    pub fn normal_matrix(&self, s_p: &[C64]) -> Result<DMatrix<C64>> {
        let k = self.k();
        if s_p.len() != k {
            return Err(Error::Shape(format!("{} pilot factors for K = {k}", s_p.len())));
        }
        Ok(DMatrix::from_fn(k, k, |i, j| {
            let w = s_p[i] * s_p[j].conj();
            self.p[(i, j)] + (self.q_base[(i, j)] + self.v_base[(i, j)]) * w
        }))
    }

    pub fn filter(&self, s_p: &[C64]) -> Result<IfFilter> {
        let a = self.normal_matrix(s_p)?;
        let k = self.k();
        let herm = (&a + a.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(herm.clone()).eigenvalues;
        let (lmax, lmin) = (eig.max(), eig.min());
        let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
        let mut a_reg = herm;
        let mut ridge = 0.0;
        if !(condition <= RIDGE_CONDITION) {
            let trace = a_reg.trace().re;
            if !(trace > 0.0) {
                return Err(Error::Degenerate("filter normal matrix has no energy".into()));
            }
            ridge = RIDGE_EPS * trace / k as f64;
            for i in 0..k {
                a_reg[(i, i)] += ridge;
            }
        }
        // Z = cross A^-1, solved as A Z^H = cross^H
        let rhs = self.cross.adjoint();
        // nalgebra's complex Cholesky does not reject negative pivots, so
        // only use it when the spectrum is known to be positive
        let zh = match a_reg.clone().cholesky().filter(|_| lmin + ridge > 0.0) {
            Some(ch) => ch.solve(&rhs),
            None => a_reg
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numerical("filter normal matrix is singular".into()))?,
        };
        let z = zh.adjoint();
        if z.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Numerical("interpolation filter has non-finite entries".into()));
        }
        Ok(IfFilter { z, regularized: ridge > 0.0 })
    }
}

/// `Z = R_phi^H M_p^H (P + Q + V)^+`.
pub fn build_if_filter(cov: &CovarianceSet, m_p: &SamplingMatrix, s_p: &[C64]) -> Result<IfFilter> {
    IfDesign::new(cov, m_p)?.filter(s_p)
}

/// `phi_hat = arg(Z a_p)`.
pub fn if_estimate(filter: &IfFilter, obs: &PilotObservation) -> Result<PhaseEstimate> {
    if filter.z.ncols() != obs.k() {
        return Err(Error::Shape(format!("filter has {} columns, {} observations", filter.z.ncols(), obs.k())));
    }
    let a = DVector::from_column_slice(&obs.a_p);
    let v = &filter.z * a;
    if v.iter().any(|c| c.norm() == 0.0) {
        return Err(Error::Degenerate("filtered pilot vector has a zero entry; phase undefined".into()));
    }
    Ok(PhaseEstimate {
        phi_hat: v.iter().map(|c| c.arg()).collect(),
    })
}

/// `s_hat_n = r_n exp(-j phi_hat_n)`; a length-1 estimate is broadcast.
pub fn correct(r: &[C64], phi_hat: &PhaseEstimate) -> Result<Vec<C64>> {
    match phi_hat.len() {
        1 => {
            let rot = C64::from_polar(1.0, -phi_hat.phi_hat[0]);
            Ok(r.iter().map(|x| x * rot).collect())
        }
        n if n == r.len() => Ok(r
            .iter()
            .zip(&phi_hat.phi_hat)
            .map(|(x, &p)| x * C64::from_polar(1.0, -p))
            .collect()),
        n => Err(Error::Shape(format!("{n} phase values for {} received symbols", r.len()))),
    }
}

/// Estimator choice with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cpee,
    Ci,
    Li,
    Dct { n_d: usize, phi_av: PhiAvMode },
    If,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Cpee => "cpee".into(),
            Method::Ci => "ci".into(),
            Method::Li => "li".into(),
            Method::Dct { n_d, .. } => format!("dct{n_d}"),
            Method::If => "if".into(),
        }
    }
}

/// A ready-to-run estimator bound to a pilot pattern.
///
/// Under contiguous patterns CPEE, CI and LI work on per-group averages
/// (CI anchored at group starts, LI at group centers) while DCT and the
/// interpolation filter use every pilot individually.
#[derive(Debug, Clone)]
pub struct PhaseTracker {
    method: Method,
    pattern: PtrsPattern,
    dct: Option<DctBasis>,
    design: Option<IfDesign>,
    cached: Option<(Vec<C64>, IfFilter)>,
}

impl PhaseTracker {
    /// Build a tracker. The interpolation filter needs a covariance set whose
    /// `r_w` already reflects the operating noise level.
    pub fn new(method: Method, pattern: &PtrsPattern, cov: Option<&CovarianceSet>) -> Result<Self> {
        let dct = match method {
            Method::Dct { n_d, .. } => Some(DctBasis::new(pattern.n_active(), pattern.indices(), n_d)?),
            _ => None,
        };
        let design = match method {
            Method::If => {
                let cov = cov.ok_or_else(|| Error::Config("the interpolation filter needs covariances".into()))?;
                Some(IfDesign::new(cov, &pattern.sampling_matrix())?)
            }
            _ => None,
        };
        Ok(Self {
            method,
            pattern: pattern.clone(),
            dct,
            design,
            cached: None,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Build the interpolation filter for `pilots` ahead of time. No-op for
    /// the other methods.
    pub fn prime(&mut self, pilots: &[C64]) -> Result<()> {
        if let Some(design) = &self.design {
            let s_p: Vec<C64> = pilots.iter().map(|s| s.conj() / s.norm_sqr()).collect();
            let f = design.filter(&s_p)?;
            self.cached = Some((s_p, f));
        }
        Ok(())
    }

    pub fn estimate(&mut self, r: &[C64], pilots: &[C64]) -> Result<PhaseEstimate> {
        let n = self.pattern.n_active();
        let obs = observe_pilots(r, &self.pattern, pilots)?;
        let grouped = self.pattern.is_contiguous();
        match self.method {
            Method::Cpee => {
                let o = if grouped { obs.grouped(&self.pattern, false)? } else { obs };
                Ok(PhaseEstimate::constant(n, cpee_estimate(&o)?))
            }
            Method::Ci => {
                let o = if grouped { obs.grouped(&self.pattern, true)? } else { obs };
                ci_estimate(&o, n)
            }
            Method::Li => {
                let o = if grouped { obs.grouped(&self.pattern, false)? } else { obs };
                li_estimate(&o, n)
            }
            Method::Dct { phi_av, .. } => {
                let r_p: Vec<C64> = self.pattern.indices().iter().map(|&i| r[i]).collect();
                dct_estimate(&obs, self.dct.as_ref().expect("basis built"), &r_p, phi_av)
            }
            Method::If => {
                let reuse = matches!(&self.cached, Some((s, _)) if *s == obs.s_p);
                if !reuse {
                    let f = self.design.as_ref().expect("design built").filter(&obs.s_p)?;
                    self.cached = Some((obs.s_p.clone(), f));
                }
                if_estimate(&self.cached.as_ref().expect("filter cached").1, &obs)
            }
        }
    }
}
