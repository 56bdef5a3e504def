//! Phase-tracking reference signal layouts.
//!
//! Pilots live in the pre-DFT domain, so their indices address the `N_a`
//! spread symbols of one DFT-s-OFDM block. Two layouts are supported:
//! distributed (one pilot every `L` symbols starting at 0) and contiguous
//! (`N_G` evenly spaced groups of `N_S` adjacent pilots).

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::rng::rng_from;
use crate::{Error, Result, C64};

/// Pattern description as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum PatternSpec {
    Distributed { l: usize },
    Contiguous { ng: usize, ns: usize },
}

impl PatternSpec {
    pub fn build(&self, n_active: usize) -> Result<PtrsPattern> {
        match *self {
            PatternSpec::Distributed { l } => distributed_pattern(n_active, l),
            PatternSpec::Contiguous { ng, ns } => contiguous_pattern(n_active, ng, ns),
        }
    }

    /// Short label used in result tables, e.g. `L64` or `G2S2`.
    pub fn label(&self) -> String {
        match *self {
            PatternSpec::Distributed { l } => format!("L{l}"),
            PatternSpec::Contiguous { ng, ns } => format!("G{ng}S{ns}"),
        }
    }

    pub fn pilot_count(&self, n_active: usize) -> usize {
        match *self {
            PatternSpec::Distributed { l } => n_active / l.max(1),
            PatternSpec::Contiguous { ng, ns } => ng * ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtrsPattern {
    spec: PatternSpec,
    chi_p: Vec<usize>,
    n_active: usize,
}

impl PtrsPattern {
    pub fn spec(&self) -> PatternSpec {
        self.spec
    }

    /// Ordered pilot indices.
    pub fn indices(&self) -> &[usize] {
        &self.chi_p
    }

    pub fn k(&self) -> usize {
        self.chi_p.len()
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn is_contiguous(&self) -> bool {
        matches!(self.spec, PatternSpec::Contiguous { .. })
    }

    /// `true` at pilot positions, length `N_a`.
    pub fn pilot_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_active];
        for &i in &self.chi_p {
            mask[i] = true;
        }
        mask
    }

    pub fn data_count(&self) -> usize {
        self.n_active - self.k()
    }

    pub fn sampling_matrix(&self) -> SamplingMatrix {
        SamplingMatrix {
            rows: self.chi_p.clone(),
            n_active: self.n_active,
        }
    }
}

/// One pilot every `l_spacing` symbols: `{0, L, 2L, ...}`.
pub fn distributed_pattern(n_active: usize, l_spacing: usize) -> Result<PtrsPattern> {
    if l_spacing == 0 || n_active == 0 || !n_active.is_multiple_of(l_spacing) {
        return Err(Error::Config(format!(
            "pilot spacing L = {l_spacing} must divide N_a = {n_active}"
        )));
    }
    Ok(PtrsPattern {
        spec: PatternSpec::Distributed { l: l_spacing },
        chi_p: (0..n_active / l_spacing).map(|i| i * l_spacing).collect(),
        n_active,
    })
}

/// `n_groups` groups of `group_size` adjacent pilots, group `g` starting at
/// `floor(g * N_a / N_G)`.
pub fn contiguous_pattern(n_active: usize, n_groups: usize, group_size: usize) -> Result<PtrsPattern> {
    if n_groups == 0 || group_size == 0 {
        return Err(Error::Config("contiguous pattern needs N_G >= 1 and N_S >= 1".into()));
    }
    if n_groups * group_size > n_active {
        return Err(Error::Config(format!(
            "N_G * N_S = {} pilots exceed N_a = {n_active}",
            n_groups * group_size
        )));
    }
    let starts: Vec<usize> = (0..n_groups).map(|g| g * n_active / n_groups).collect();
    for (g, &s) in starts.iter().enumerate() {
        let next = starts.get(g + 1).copied().unwrap_or(n_active);
        if s + group_size > next {
            return Err(Error::Config(format!(
                "group {g} ({s}..{}) overruns the next group start {next}",
                s + group_size
            )));
        }
    }
    Ok(PtrsPattern {
        spec: PatternSpec::Contiguous {
            ng: n_groups,
            ns: group_size,
        },
        chi_p: starts.iter().flat_map(|&s| s..s + group_size).collect(),
        n_active,
    })
}

/// Seeded unit-modulus QPSK pilot values.
pub fn pilot_sequence(k: usize, seed: u64) -> Result<Vec<C64>> {
    if k == 0 {
        return Err(Error::Domain("pilot count must be >= 1".into()));
    }
    let mut rng = rng_from(seed);
    Ok((0..k)
        .map(|_| {
            let q: u8 = rng.random_range(0..4);
            let re = if q & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if q & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            C64::new(re, im)
        })
        .collect())
}

/// The `K x N_a` 0/1 selection matrix `M_p`, stored as its row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMatrix {
    rows: Vec<usize>,
    n_active: usize,
}

impl SamplingMatrix {
    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// `M_p v`.
    pub fn select<T: Copy>(&self, v: &[T]) -> Vec<T> {
        self.rows.iter().map(|&i| v[i]).collect()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.k(), self.n_active);
        for (r, &c) in self.rows.iter().enumerate() {
            m[(r, c)] = 1.0;
        }
        m
    }

    /// `M_p R M_p^H` for an `N_a x N_a` matrix `R`.
    pub fn project(&self, r: &DMatrix<C64>) -> DMatrix<C64> {
        let k = self.k();
        DMatrix::from_fn(k, k, |i, j| r[(self.rows[i], self.rows[j])])
    }

    /// `R M_p^H`: the pilot columns of `R`.
    pub fn right_adjoint(&self, r: &DMatrix<C64>) -> DMatrix<C64> {
        DMatrix::from_fn(r.nrows(), self.k(), |i, j| r[(i, self.rows[j])])
    }
}

/// Per-group means of contiguous pilot observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAverage {
    pub values: Vec<C64>,
    /// Representative index of each group: floor of its mean index.
    pub centers: Vec<usize>,
    /// First index of each group.
    pub starts: Vec<usize>,
}

/// Average the `K` pilot observations (in pattern order) within each group.
pub fn group_average(pilot_values: &[C64], pattern: &PtrsPattern) -> Result<GroupAverage> {
    let ns = match pattern.spec {
        PatternSpec::Contiguous { ns, .. } => ns,
        PatternSpec::Distributed { .. } => {
            return Err(Error::Usage("group averaging requires a contiguous pattern".into()))
        }
    };
    if pilot_values.len() != pattern.k() {
        return Err(Error::Shape(format!(
            "{} pilot values for a pattern with K = {}",
            pilot_values.len(),
            pattern.k()
        )));
    }
    let mut out = GroupAverage {
        values: Vec::new(),
        centers: Vec::new(),
        starts: Vec::new(),
    };
    for (vals, idx) in pilot_values.chunks(ns).zip(pattern.chi_p.chunks(ns)) {
        out.values.push(vals.iter().sum::<C64>() / ns as f64);
        out.centers.push(idx.iter().sum::<usize>() / ns);
        out.starts.push(idx[0]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distributed_layouts() {
        let p = distributed_pattern(12, 4).unwrap();
        assert_eq!(p.indices(), &[0, 4, 8]);
        assert_eq!(p.k(), 3);
        assert_eq!(distributed_pattern(1024, 64).unwrap().k(), 16);
        assert_eq!(distributed_pattern(1024, 8).unwrap().k(), 128);
        assert_eq!(distributed_pattern(12, 12).unwrap().indices(), &[0]);
        assert!(matches!(distributed_pattern(1024, 3), Err(Error::Config(_))));
        assert!(distributed_pattern(12, 0).is_err());
    }

    #[test]
    fn contiguous_layouts() {
        let p = contiguous_pattern(12, 3, 2).unwrap();
        assert_eq!(p.indices(), &[0, 1, 4, 5, 8, 9]);
        assert_eq!(contiguous_pattern(12, 1, 1).unwrap().indices(), &[0]);
        let q = contiguous_pattern(1024, 2, 2).unwrap();
        assert_eq!(q.indices(), &[0, 1, 512, 513]);
        assert!(contiguous_pattern(12, 3, 5).is_err());
        assert!(contiguous_pattern(10, 3, 4).is_err());
        assert!(contiguous_pattern(12, 0, 1).is_err());
    }

    #[test]
    fn pilots_are_unit_qpsk_and_seeded() {
        let a = pilot_sequence(64, 5).unwrap();
        assert!(a.iter().all(|c| (c.norm() - 1.0).abs() < 1e-15));
        assert_eq!(a, pilot_sequence(64, 5).unwrap());
        for s in 0..100u64 {
            assert_ne!(pilot_sequence(16, 2 * s).unwrap(), pilot_sequence(16, 2 * s + 1).unwrap());
        }
        assert!(pilot_sequence(0, 1).is_err());
    }

    #[test]
    fn sampling_matrix_properties() {
        let p = distributed_pattern(12, 4).unwrap();
        let m = p.sampling_matrix();
        let v: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert_eq!(m.select(&v), vec![0.0, 4.0, 8.0]);
        let d = m.dense();
        assert_eq!(&d * d.transpose(), DMatrix::identity(3, 3));
        let mtm = d.transpose() * &d;
        for i in 0..12 {
            for j in 0..12 {
                let expect = if i == j && i % 4 == 0 { 1.0 } else { 0.0 };
                assert_eq!(mtm[(i, j)], expect);
            }
        }
        for r in 0..3 {
            assert_eq!(d.row(r).sum(), 1.0);
        }
    }

    #[test]
    fn projections_match_dense_products() {
        let p = contiguous_pattern(12, 3, 2).unwrap();
        let m = p.sampling_matrix();
        let r = DMatrix::from_fn(12, 12, |i, j| C64::new(i as f64 + 0.5 * j as f64, i as f64 - j as f64));
        let d = m.dense().map(|x| C64::new(x, 0.0));
        assert_eq!(m.project(&r), &d * &r * d.adjoint());
        assert_eq!(m.right_adjoint(&r), &r * d.adjoint());
    }

    #[test]
    fn group_means() {
        let p = contiguous_pattern(12, 3, 2).unwrap();
        let v = C64::new(0.3, -0.2);
        let g = group_average(&[v; 6], &p).unwrap();
        assert_eq!(g.values, vec![v; 3]);
        assert_eq!(g.centers, vec![0, 4, 8]);
        assert_eq!(g.starts, vec![0, 4, 8]);

        let p1 = contiguous_pattern(12, 1, 2).unwrap();
        let g = group_average(&[C64::from_polar(1.0, 0.1), C64::from_polar(1.0, -0.1)], &p1).unwrap();
        assert!(g.values[0].re > 0.0 && g.values[0].im.abs() < 1e-16);

        let p4 = contiguous_pattern(64, 2, 4).unwrap();
        let vals: Vec<C64> = (0..8).map(|i| C64::new(i as f64 * 0.37, 1.0 / (i as f64 + 1.0))).collect();
        let g = group_average(&vals, &p4).unwrap();
        let direct: C64 = vals[4..].iter().sum::<C64>() / 4.0;
        assert!((g.values[1] - direct).norm() < 1e-15);
        assert_eq!(g.centers, vec![1, 33]);

        let d = distributed_pattern(12, 4).unwrap();
        assert!(matches!(group_average(&[v; 3], &d), Err(Error::Usage(_))));
    }

    #[test]
    fn pattern_spec_serde() {
        let d: PatternSpec = serde_json::from_str(r#"{"type":"distributed","l":64}"#).unwrap();
        assert_eq!(d, PatternSpec::Distributed { l: 64 });
        let c: PatternSpec = serde_json::from_str(r#"{"type":"contiguous","ng":2,"ns":4}"#).unwrap();
        assert_eq!(c.label(), "G2S4");
        assert_eq!(c.pilot_count(1024), 8);
    }
}
