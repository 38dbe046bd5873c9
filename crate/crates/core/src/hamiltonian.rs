//! Parent Hamiltonians on the orbital lattice `{0, ..., pN - p}`.
//!
//! `H_L` is built twice: from the ordered four-index sum
//! `sum F((n1-n2)g) F((k1-k2)g) c*_{k1} c*_{k2} c_{n2} c_{n1}` and as
//! `sum_S B_S* B_S` with `B_S = sum_{a+b=S} F((b-a)g) c_a c_b`. Terms with an
//! index off the lattice are dropped (free boundary). For `p = 3` there are also
//! the monomer-dimer operator, the Tao-Thouless state and the perturbation
//! series around it.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::eigen::{self, EigenOptions};
use crate::error::{Error, Result};
use crate::expansion::{amplitudes, expand, AmplitudeTable};
use crate::fock::{apply, apply_word, Op};
use crate::lattice::{Caps, ModelParams, OccupationConfig};

/// Default cap on sector dimension.
pub const MAX_SECTOR_DIM: usize = 200_000;

/// Eigenvalues at or below this (times the operator scale) count as kernel.
pub const KERNEL_TOLERANCE: f64 = 1e-9;

/// Physicists' Hermite polynomial by the three-term recurrence.
pub fn hermite(n: usize, t: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * t);
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = 2.0 * t * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `F(t) = sum_k H_k(t) exp(-t^2/4)` over `k < p`, by default only the `k`
/// with the parity of `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FormFactor {
    pub p: u32,
    pub gamma: f64,
    pub full_sum: bool,
}

impl FormFactor {
    pub fn new(p: u32, gamma: f64) -> Self {
        Self { p, gamma, full_sum: false }
    }

    pub fn with_full_sum(self, full_sum: bool) -> Self {
        Self { full_sum, ..self }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let parity = (self.p % 2) as usize;
        let s: f64 = (0..self.p as usize)
            .filter(|k| self.full_sum || k % 2 == parity)
            .map(|k| hermite(k, t))
            .sum();
        s * (-t * t / 4.0).exp()
    }

    /// `F(d * gamma)` for an integer index difference.
    pub fn at(&self, d: i64) -> f64 {
        self.eval(d as f64 * self.gamma)
    }
}

pub fn form_factor(t: f64, p: u32) -> f64 {
    FormFactor::new(p, 1.0).eval(t)
}

/// Fixed-`N` occupation basis on `sites` orbitals, optionally restricted to
/// one total index (momentum).
#[derive(Debug, Clone)]
pub struct SectorBasis {
    pub p: u32,
    pub n: usize,
    pub sites: usize,
    pub momentum: Option<u64>,
    pub states: Vec<OccupationConfig>,
    index: HashMap<Vec<u32>, usize>,
}

fn binomial_f64(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl SectorBasis {
    pub fn new(p: u32, n: usize, sites: usize, momentum: Option<u64>, cap: usize) -> Result<Self> {
        if p == 0 || n == 0 || sites == 0 {
            return Err(Error::InvalidParams("sector needs p, N and sites >= 1".into()));
        }
        let fermionic = p % 2 == 1;
        let full = if fermionic { binomial_f64(sites, n) } else { binomial_f64(sites + n - 1, n) };
        if full > cap as f64 {
            return Err(Error::CapExceeded(format!("sector dimension {full} exceeds cap {cap}")));
        }
        let mut states = Vec::new();
        let mut cur = vec![0u32; sites];
        fill(&mut cur, 0, n as u32, 0, fermionic, momentum, &mut states);
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self {
            p,
            n,
            sites,
            momentum,
            states: states.into_iter().map(OccupationConfig).collect(),
            index,
        })
    }

    /// The sector of `Psi_N`: lattice `{0..pN-p}` at total index `pN(N-1)/2`.
    pub fn ground_sector(params: &ModelParams) -> Result<Self> {
        Self::new(params.p, params.n, params.lattice_len(), Some(params.total_index()), MAX_SECTOR_DIM)
    }

    /// All momenta on the lattice `{0..pN-p}`.
    pub fn full(params: &ModelParams) -> Result<Self> {
        Self::new(params.p, params.n, params.lattice_len(), None, MAX_SECTOR_DIM)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_fermionic(&self) -> bool {
        self.p % 2 == 1
    }

    pub fn index_of(&self, n: &[u32]) -> Option<usize> {
        self.index.get(n).copied()
    }

    /// Range of total index reachable in this sector.
    pub fn momentum_range(&self) -> (u64, u64) {
        let n = self.n as u64;
        let top = (self.sites - 1) as u64;
        if self.is_fermionic() {
            (n * (n - 1) / 2, n * top - n * (n - 1) / 2)
        } else {
            (0, n * top)
        }
    }

    /// The coefficients of `Psi_N` in this basis.
    pub fn embed(&self, table: &AmplitudeTable) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.len()];
        for e in &table.entries {
            if e.occupation.0.len() != self.sites {
                return Err(Error::LengthMismatch { expected: self.sites, got: e.occupation.0.len() });
            }
            let i = self
                .index_of(&e.occupation.0)
                .ok_or_else(|| Error::InvalidParams(format!("state {:?} not in sector", e.occupation.0)))?;
            v[i] = e.amplitude;
        }
        Ok(v)
    }
}

fn fill(
    cur: &mut Vec<u32>,
    site: usize,
    left: u32,
    momentum: u64,
    fermionic: bool,
    target: Option<u64>,
    out: &mut Vec<Vec<u32>>,
) {
    if let Some(t) = target {
        if momentum > t {
            return;
        }
    }
    if site == cur.len() {
        if left == 0 && target.is_none_or(|t| t == momentum) {
            out.push(cur.clone());
        }
        return;
    }
    let top = if fermionic { left.min(1) } else { left };
    for k in (0..=top).rev() {
        cur[site] = k;
        fill(cur, site + 1, left - k, momentum + k as u64 * site as u64, fermionic, target, out);
    }
    cur[site] = 0;
}

/// Real sparse matrix as sorted, merged `(row, col, value)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseOperator {
    /// Sorts by position and sums duplicates in input order, so the result is
    /// bitwise reproducible for a fixed input sequence.
    pub fn from_triplets(dim: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|&(i, j, _)| (i, j));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(t.len());
        for (i, j, v) in t {
            match entries.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => entries.push((i, j, v)),
            }
        }
        entries.retain(|e| e.2 != 0.0);
        Self { dim, entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { dim: self.dim, entries: self.entries.iter().map(|&(i, j, v)| (i, j, v * s)).collect() }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for &(i, j, v) in &self.entries {
            if i == j {
                d[i] += v;
            }
        }
        d
    }

    /// Largest entry-wise difference over the union of both patterns.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, v) in &self.entries {
            *m.entry((i, j)).or_default() += v;
        }
        for &(i, j, v) in &other.entries {
            *m.entry((i, j)).or_default() -= v;
        }
        let dim_gap = if self.dim == other.dim { 0.0 } else { f64::INFINITY };
        m.values().fold(dim_gap, |a, v| a.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let t: Vec<_> = self.entries.iter().map(|&(i, j, v)| (j, i, v)).collect();
        self.max_abs_diff(&Self::from_triplets(self.dim, t))
    }
}

/// A two-annihilator operator `sum coef * c_a c_b` (with `c_b` acting first).
pub type PairOperator = Vec<(f64, usize, usize)>;

/// Assembles `sum_B B* B` from a list of pair operators.
fn sum_of_squares(basis: &SectorBasis, bops: &[PairOperator]) -> SparseOperator {
    let fermionic = basis.is_fermionic();
    let per_b: Vec<Vec<(usize, usize, f64)>> = bops
        .par_iter()
        .map(|b| {
            // image of every basis column under B, grouped by target state
            let mut images: BTreeMap<Vec<u32>, Vec<(usize, f64)>> = BTreeMap::new();
            for (col, s) in basis.states.iter().enumerate() {
                for &(coef, a, bb) in b {
                    let mut x = s.0.clone();
                    if let Some(f) = apply_word(&[Op::Annihilate(a), Op::Annihilate(bb)], &mut x, fermionic) {
                        images.entry(x).or_default().push((col, coef * f));
                    }
                }
            }
            let mut t = Vec::new();
            for (_, mut list) in images {
                list.sort_by_key(|e| e.0);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(list.len());
                for (c, v) in list {
                    match merged.last_mut() {
                        Some(last) if last.0 == c => last.1 += v,
                        _ => merged.push((c, v)),
                    }
                }
                for &(i, vi) in &merged {
                    for &(j, vj) in &merged {
                        t.push((i, j, vi * vj));
                    }
                }
            }
            t
        })
        .collect();
    SparseOperator::from_triplets(basis.len(), per_b.into_iter().flatten().collect())
}

/// `B_S = sum_{a+b=S} F((b-a) gamma) c_a c_b` on the lattice, `S = 0..2(L-1)`.
pub fn b_operators(ff: &FormFactor, sites: usize) -> Vec<PairOperator> {
    (0..=2 * (sites - 1))
        .map(|s| {
            (s.saturating_sub(sites - 1)..=s.min(sites - 1))
                .map(|a| (ff.at(s as i64 - 2 * a as i64), a, s - a))
                .filter(|e| e.0 != 0.0)
                .collect()
        })
        .collect()
}

/// `H_L` as `sum_S B_S* B_S`.
pub fn build_h_squares(ff: &FormFactor, basis: &SectorBasis) -> SparseOperator {
    sum_of_squares(basis, &b_operators(ff, basis.sites))
}

/// `H_L` from the ordered sum over `(k1, k2, n1, n2)` with `k1 + k2 = n1 + n2`.
pub fn build_h_pairwise(ff: &FormFactor, basis: &SectorBasis) -> SparseOperator {
    let fermionic = basis.is_fermionic();
    let l = basis.sites as i64;
    let cols: Vec<Vec<(usize, usize, f64)>> = basis
        .states
        .par_iter()
        .enumerate()
        .map(|(col, s)| {
            let mut t = Vec::new();
            for n1 in 0..l {
                for n2 in 0..l {
                    let fn_ = ff.at(n1 - n2);
                    if fn_ == 0.0 {
                        continue;
                    }
                    let mut x = s.0.clone();
                    let Some(f1) = apply(Op::Annihilate(n1 as usize), &mut x, fermionic) else { continue };
                    let Some(f2) = apply(Op::Annihilate(n2 as usize), &mut x, fermionic) else { continue };
                    let total = n1 + n2;
                    for k1 in (total - (l - 1)).max(0)..=total.min(l - 1) {
                        let k2 = total - k1;
                        let fk = ff.at(k1 - k2);
                        if fk == 0.0 {
                            continue;
                        }
                        let mut y = x.clone();
                        let word = [Op::Create(k1 as usize), Op::Create(k2 as usize)];
                        let Some(f3) = apply_word(&word, &mut y, fermionic) else { continue };
                        if let Some(row) = basis.index_of(&y) {
                            t.push((row, col, fn_ * fk * f1 * f2 * f3));
                        }
                    }
                }
            }
            t
        })
        .collect();
    SparseOperator::from_triplets(basis.len(), cols.into_iter().flatten().collect())
}

/// Both builds of `H_L` and their largest entry-wise deviation.
#[derive(Debug, Clone)]
pub struct HamiltonianBuilds {
    pub pairwise: SparseOperator,
    pub squares: SparseOperator,
    pub max_deviation: f64,
}

pub fn build_h(ff: &FormFactor, basis: &SectorBasis) -> HamiltonianBuilds {
    let pairwise = build_h_pairwise(ff, basis);
    let squares = build_h_squares(ff, basis);
    let max_deviation = pairwise.max_abs_diff(&squares);
    HamiltonianBuilds { pairwise, squares, max_deviation }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Number of eigenvalues at or below `KERNEL_TOLERANCE` times the operator scale.
pub fn kernel_dimension(op: &SparseOperator) -> Result<usize> {
    if op.dim == 0 {
        return Ok(0);
    }
    let threshold = KERNEL_TOLERANCE * eigen::operator_scale(op).max(1.0);
    let opts = EigenOptions::default();
    let mut count = 2.min(op.dim);
    loop {
        let vals = eigen::lowest_eigenvalues(op, count, &opts)?;
        let k = vals.iter().take_while(|&&v| v <= threshold).count();
        if k < vals.len() || count == op.dim {
            return Ok(k);
        }
        count = (2 * count).min(op.dim);
    }
}

pub fn spectrum(op: &SparseOperator, count: usize) -> Result<Vec<f64>> {
    eigen::lowest_eigenvalues(op, count, &EigenOptions::default())
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundReport {
    /// `||H psi|| / ||psi||`.
    pub residual: f64,
    pub kernel_dimension: usize,
    pub min_eigenvalue: f64,
}

pub fn residual(op: &SparseOperator, psi: &[f64]) -> Result<f64> {
    if psi.len() != op.dim {
        return Err(Error::LengthMismatch { expected: op.dim, got: psi.len() });
    }
    let n = norm(psi);
    if n == 0.0 {
        return Err(Error::InvalidParams("zero vector".into()));
    }
    Ok(norm(&op.apply(psi)) / n)
}

pub fn ground_check(op: &SparseOperator, psi: &[f64]) -> Result<GroundReport> {
    let residual = residual(op, psi)?;
    let kernel_dimension = kernel_dimension(op)?;
    let min_eigenvalue = spectrum(op, 1)?.first().copied().unwrap_or(0.0);
    Ok(GroundReport { residual, kernel_dimension, min_eigenvalue })
}

/// Kernel dimension and smallest eigenvalue summed over every momentum block
/// of the full `N`-particle space, blocks solved in parallel.
#[derive(Debug, Clone, Serialize)]
pub struct SectorScan {
    pub kernel_dimension: usize,
    pub min_eigenvalue: f64,
    /// `(momentum, kernel dimension)` for blocks with a nonzero kernel.
    pub kernels: Vec<(u64, usize)>,
}

pub fn sector_scan<F>(p: u32, n: usize, sites: usize, build: F) -> Result<SectorScan>
where
    F: Fn(&SectorBasis) -> SparseOperator + Sync,
{
    let probe = SectorBasis::new(p, 1, sites, None, MAX_SECTOR_DIM)?;
    let (lo, hi) = SectorBasis { n, ..probe }.momentum_range();
    let blocks: Vec<(u64, usize, f64)> = (lo..=hi)
        .into_par_iter()
        .map(|m| {
            let basis = SectorBasis::new(p, n, sites, Some(m), MAX_SECTOR_DIM)?;
            if basis.is_empty() {
                return Ok((m, 0, f64::INFINITY));
            }
            let op = build(&basis);
            let k = kernel_dimension(&op)?;
            let min = spectrum(&op, 1)?[0];
            Ok((m, k, min))
        })
        .collect::<Result<_>>()?;
    Ok(SectorScan {
        kernel_dimension: blocks.iter().map(|b| b.1).sum(),
        min_eigenvalue: blocks.iter().map(|b| b.2).fold(f64::INFINITY, f64::min),
        kernels: blocks.iter().filter(|b| b.1 > 0).map(|b| (b.0, b.1)).collect(),
    })
}

fn require_p3(params: &ModelParams) -> Result<()> {
    if params.p != 3 {
        return Err(Error::Unsupported(format!("needs p = 3, got p = {}", params.p)));
    }
    Ok(())
}

/// The monomer-dimer operator `H^MD = sum_k [4 e^{-3g^2/2} n_k n_{k+2} + B_k* B_k]`
/// with `B_k = c_{k+2} c_{k+1} + 3 e^{-2g^2} c_{k+3} c_k`, free boundary.
pub fn build_monomer_dimer_h(gamma: f64, basis: &SectorBasis) -> SparseOperator {
    let l = basis.sites as i64;
    let t = 3.0 * (-2.0 * gamma * gamma).exp();
    let on = |k: i64| (0..l).contains(&k);
    let bops: Vec<PairOperator> = (-3..l)
        .map(|k| {
            let mut b = Vec::new();
            if on(k + 1) && on(k + 2) {
                b.push((1.0, (k + 2) as usize, (k + 1) as usize));
            }
            if on(k) && on(k + 3) {
                b.push((t, (k + 3) as usize, k as usize));
            }
            b
        })
        .filter(|b| !b.is_empty())
        .collect();
    let squares = sum_of_squares(basis, &bops);
    let w = 4.0 * (-1.5 * gamma * gamma).exp();
    let mut trip = squares.entries;
    for (i, s) in basis.states.iter().enumerate() {
        let d: u32 = s.0.windows(3).map(|x| x[0] * x[2]).sum();
        if d > 0 {
            trip.push((i, i, w * d as f64));
        }
    }
    SparseOperator::from_triplets(basis.len(), trip)
}

/// Monomer-dimer tilings of `{0..n-1}` as lists of dimer start positions.
pub fn monomer_dimer_tilings(n: usize) -> Vec<Vec<usize>> {
    fn go(pos: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos >= n {
            out.push(cur.clone());
            return;
        }
        go(pos + 1, n, cur, out);
        if pos + 1 < n {
            cur.push(pos);
            go(pos + 2, n, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, &mut Vec::new(), &mut out);
    out
}

/// `Psi^MD`: monomer at `k` creates `c*_{3k}`, dimer on `{k, k+1}` creates
/// `-3 e^{-2g^2} c*_{3k+1} c*_{3k+2}`. Every term is already in increasing
/// orbital order, so no reordering signs arise.
pub fn monomer_dimer_state(gamma: f64, basis: &SectorBasis) -> Result<Vec<f64>> {
    let w = -3.0 * (-2.0 * gamma * gamma).exp();
    let mut v = vec![0.0; basis.len()];
    for dimers in monomer_dimer_tilings(basis.n) {
        let mut occ = vec![0u32; basis.sites];
        let mut k = 0;
        while k < basis.n {
            if dimers.contains(&k) {
                occ[3 * k + 1] = 1;
                occ[3 * k + 2] = 1;
                k += 2;
            } else {
                occ[3 * k] = 1;
                k += 1;
            }
        }
        let i = basis
            .index_of(&occ)
            .ok_or_else(|| Error::InvalidParams("monomer-dimer term outside the sector".into()))?;
        v[i] += w.powi(dimers.len() as i32);
    }
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct MonomerDimer {
    pub basis: SectorBasis,
    pub hamiltonian: SparseOperator,
    pub state: Vec<f64>,
}

pub fn build_monomer_dimer(params: &ModelParams) -> Result<MonomerDimer> {
    require_p3(params)?;
    let basis = SectorBasis::ground_sector(params)?;
    let hamiltonian = build_monomer_dimer_h(params.gamma, &basis);
    let state = monomer_dimer_state(params.gamma, &basis)?;
    Ok(MonomerDimer { basis, hamiltonian, state })
}

/// `Psi^TT = c*_0 c*_3 ... c*_{3N-3} |0>`.
pub fn tao_thouless(params: &ModelParams, basis: &SectorBasis) -> Result<Vec<f64>> {
    require_p3(params)?;
    let root = params.root_config().to_occupation(basis.sites);
    let i = basis
        .index_of(&root.0)
        .ok_or_else(|| Error::InvalidParams("root configuration not in sector".into()))?;
    let mut v = vec![0.0; basis.len()];
    v[i] = 1.0;
    Ok(v)
}

/// `H^TT = sum_k e^{-g^2/2} n_k n_{k+1} + 4 e^{-2g^2} n_k n_{k+2}`.
pub fn build_htt(params: &ModelParams, basis: &SectorBasis) -> Result<SparseOperator> {
    require_p3(params)?;
    let g2 = params.gamma * params.gamma;
    let (w1, w2) = ((-0.5 * g2).exp(), 4.0 * (-2.0 * g2).exp());
    let trip = basis
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let d1: u32 = s.0.windows(2).map(|x| x[0] * x[1]).sum();
            let d2: u32 = s.0.windows(3).map(|x| x[0] * x[2]).sum();
            (i, i, w1 * d1 as f64 + w2 * d2 as f64)
        })
        .collect();
    Ok(SparseOperator::from_triplets(basis.len(), trip))
}

/// `H_L` rescaled so that its distance-one and distance-two diagonal terms
/// equal those of `H^TT`: for `p = 3`, `4 F(g)^2 = 16 g^2 e^{-g^2/2}`.
pub fn htt_scale(gamma: f64) -> f64 {
    16.0 * gamma * gamma
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    pub gamma: f64,
    pub n: usize,
    /// `||Psi^(k) - Psi_N||` with `Psi_N` scaled to unit overlap with `Psi^TT`.
    pub distances: Vec<f64>,
    #[serde(skip)]
    pub partial_sums: Vec<Vec<f64>>,
    #[serde(skip)]
    pub exact: Vec<f64>,
}

impl PerturbationReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.distances.windows(2).all(|w| w[1] < w[0])
    }
}

/// Partial sums `sum_{j<=k} (-T)^j Psi^TT` with `T = Q (H^TT)^-1 Q V`, where
/// `V = H_L / (16 g^2) - H^TT` and `Q` projects off `Psi^TT`.
pub fn perturbation_series(params: &ModelParams, order: usize) -> Result<PerturbationReport> {
    require_p3(params)?;
    let basis = SectorBasis::ground_sector(params)?;
    let table = amplitudes(&expand(3, params.n, &Caps::default())?, params.gamma)?;
    let tt = tao_thouless(params, &basis)?;
    let root = tt.iter().position(|&x| x == 1.0).expect("unit root entry");

    let mut exact = basis.embed(&table)?;
    let overlap = exact[root];
    exact.iter_mut().for_each(|x| *x /= overlap);

    let ff = FormFactor::new(3, params.gamma);
    let h = build_h_pairwise(&ff, &basis).scaled(1.0 / htt_scale(params.gamma));
    let htt = build_htt(params, &basis)?;
    let energies = htt.diagonal();
    for (i, &e) in energies.iter().enumerate() {
        if i != root && e <= 0.0 {
            return Err(Error::Singular(format!(
                "state {:?} has zero diagonal energy besides the root",
                basis.states[i].0
            )));
        }
    }
    let v = SparseOperator::from_triplets(
        basis.len(),
        h.entries.iter().copied().chain(htt.entries.iter().map(|&(i, j, x)| (i, j, -x))).collect(),
    );

    let mut term = tt.clone();
    let mut sum = tt;
    let distance = |s: &[f64]| norm(&s.iter().zip(&exact).map(|(a, b)| a - b).collect::<Vec<_>>());
    let mut distances = vec![distance(&sum)];
    let mut partial_sums = vec![sum.clone()];
    for _ in 0..order {
        let mut next = v.apply(&term);
        next[root] = 0.0;
        for (i, x) in next.iter_mut().enumerate() {
            if i != root {
                *x /= -energies[i];
            }
        }
        term = next;
        sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
        distances.push(distance(&sum));
        partial_sums.push(sum.clone());
    }
    Ok(PerturbationReport { gamma: params.gamma, n: params.n, distances, partial_sums, exact })
}

/// `Psi_N` on its ground sector with `H_L` (pairwise build).
pub fn laughlin_vector(params: &ModelParams, basis: &SectorBasis) -> Result<Vec<f64>> {
    let table = amplitudes(&expand(params.p, params.n, &Caps::default())?, params.gamma)?;
    basis.embed(&table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(p: u32, g: f64, n: usize) -> ModelParams {
        ModelParams::new(p, g, n).unwrap()
    }

    #[test]
    fn hermite_values() {
        assert_eq!(hermite(0, 0.7), 1.0);
        assert_eq!(hermite(1, 0.7), 1.4);
        assert!((hermite(3, 0.7) - (8.0 * 0.343 - 12.0 * 0.7)).abs() < 1e-14);
        assert!((hermite(4, 1.1) - (16.0 * 1.1f64.powi(4) - 48.0 * 1.21 + 12.0)).abs() < 1e-12);
    }

    #[test]
    fn form_factor_examples() {
        assert_eq!(form_factor(0.0, 3), 0.0);
        assert!((form_factor(2.0, 3) - 4.0 * (-1.0f64).exp()).abs() < 1e-15);
        for g in [0.5, 1.0, 1.7] {
            let ff = FormFactor::new(3, g);
            let ratio = ff.at(3) / ff.at(1);
            assert!((ratio / (3.0 * (-2.0 * g * g).exp()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_particle_block() {
        let g = 0.8;
        let pr = params(3, g, 2);
        let basis = SectorBasis::ground_sector(&pr).unwrap();
        assert_eq!(basis.len(), 2);
        let ff = FormFactor::new(3, g);
        let b = build_h(&ff, &basis);
        assert!(b.max_deviation < 1e-12);
        let vals = spectrum(&b.pairwise, 2).unwrap();
        let top = 4.0 * (ff.at(1).powi(2) + ff.at(3).powi(2));
        assert!(vals[0].abs() < 1e-14);
        assert!((vals[1] / top - 1.0).abs() < 1e-12, "{vals:?} vs {top}");
        let psi = laughlin_vector(&pr, &basis).unwrap();
        let i03 = basis.index_of(&[1, 0, 0, 1]).unwrap();
        let i12 = basis.index_of(&[0, 1, 1, 0]).unwrap();
        assert_eq!(psi[i03], 1.0);
        assert!((psi[i12] + 3.0 * (-2.0 * g * g).exp()).abs() < 1e-15);
        assert!(residual(&b.pairwise, &psi).unwrap() < 1e-14);
    }

    #[test]
    fn builds_agree_and_are_positive() {
        for (p, nmax) in [(2u32, 4usize), (3, 4), (4, 3)] {
            for n in 2..=nmax {
                let pr = params(p, 1.0, n);
                let basis = SectorBasis::full(&pr).unwrap();
                let b = build_h(&FormFactor::new(p, 1.0), &basis);
                assert!(b.max_deviation < 1e-12, "p={p} N={n}: {}", b.max_deviation);
                assert!(b.pairwise.max_asymmetry() < 1e-14);
            }
        }
    }

    #[test]
    fn ground_state_is_unique_kernel() {
        for p in [2u32, 3] {
            for n in 2..=4 {
                let pr = params(p, 1.0, n);
                let ff = FormFactor::new(p, 1.0);
                let basis = SectorBasis::ground_sector(&pr).unwrap();
                let h = build_h_pairwise(&ff, &basis);
                let psi = laughlin_vector(&pr, &basis).unwrap();
                let rep = ground_check(&h, &psi).unwrap();
                assert!(rep.residual < 1e-8, "p={p} N={n} residual {}", rep.residual);
                let scan = sector_scan(p, n, pr.lattice_len(), |b| build_h_pairwise(&ff, b)).unwrap();
                assert_eq!(scan.kernel_dimension, 1, "p={p} N={n}: {:?}", scan.kernels);
                assert_eq!(scan.kernels, vec![(pr.total_index(), 1)]);
                assert!(scan.min_eigenvalue >= -1e-10);
            }
        }
    }

    #[test]
    fn bosonic_residual_at_five() {
        let pr = params(2, 1.0, 5);
        let basis = SectorBasis::ground_sector(&pr).unwrap();
        let h = build_h_pairwise(&FormFactor::new(2, 1.0), &basis);
        let psi = laughlin_vector(&pr, &basis).unwrap();
        assert!(residual(&h, &psi).unwrap() < 1e-8);
    }

    #[test]
    fn random_vector_is_not_a_ground_state() {
        let pr = params(3, 1.0, 4);
        let basis = SectorBasis::ground_sector(&pr).unwrap();
        let h = build_h_pairwise(&FormFactor::new(3, 1.0), &basis);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!(residual(&h, &v).unwrap() > 1e-2);
        assert!(matches!(residual(&h, &vec![0.0; basis.len()]), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn full_sum_gives_same_operator() {
        for p in [2u32, 3, 4] {
            let pr = params(p, 0.9, 3);
            let basis = SectorBasis::full(&pr).unwrap();
            let ff = FormFactor::new(p, 0.9);
            let a = build_h_squares(&ff, &basis);
            let b = build_h_squares(&ff.with_full_sum(true), &basis);
            assert!(a.max_abs_diff(&b) < 1e-12, "p={p}");
        }
    }

    #[test]
    fn monomer_dimer_state_properties() {
        let fib = [0usize, 1, 1, 2, 3, 5, 8, 13, 21];
        for n in 1..=6 {
            assert_eq!(monomer_dimer_tilings(n).len(), fib[n + 1]);
            let pr = params(3, 1.0, n);
            let md = build_monomer_dimer(&pr).unwrap();
            assert_eq!(md.state.iter().filter(|x| **x != 0.0).count(), fib[n + 1]);
            let r = residual(&md.hamiltonian, &md.state).unwrap();
            assert!(r < 1e-10, "N={n}: {r}");
            for (i, s) in md.basis.states.iter().enumerate() {
                if md.state[i] != 0.0 {
                    assert!(s.0.windows(3).all(|w| w[0] * w[2] == 0));
                }
            }
        }
        let pr = params(3, 1.3, 2);
        let md = build_monomer_dimer(&pr).unwrap();
        let psi = laughlin_vector(&pr, &md.basis).unwrap();
        assert!(md.state.iter().zip(&psi).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(build_monomer_dimer(&params(2, 1.0, 3)).is_err());
    }

    #[test]
    fn monomer_dimer_is_positive() {
        let pr = params(3, 1.0, 4);
        let scan = sector_scan(3, 4, pr.lattice_len(), |b| build_monomer_dimer_h(1.0, b)).unwrap();
        assert!(scan.min_eigenvalue >= -1e-10);
        assert!(scan.kernels.contains(&(pr.total_index(), 1)) || scan.kernel_dimension >= 1);
    }

    #[test]
    fn tao_thouless_is_unique_diagonal_zero_mode() {
        for n in 2..=4 {
            let pr = params(3, 1.0, n);
            let basis = SectorBasis::ground_sector(&pr).unwrap();
            let tt = tao_thouless(&pr, &basis).unwrap();
            let htt = build_htt(&pr, &basis).unwrap();
            assert_eq!(residual(&htt, &tt).unwrap(), 0.0);
            assert_eq!(htt.diagonal().iter().filter(|&&e| e == 0.0).count(), 1);
            assert_eq!(kernel_dimension(&htt).unwrap(), 1);
            let psi = laughlin_vector(&pr, &basis).unwrap();
            let overlap: f64 = tt.iter().zip(&psi).map(|(a, b)| a * b).sum();
            assert!(overlap > 0.0);
        }
    }

    #[test]
    fn rescaled_leading_diagonal_matches() {
        let g = 1.4;
        let ff = FormFactor::new(3, g);
        let s = htt_scale(g);
        assert!((4.0 * ff.at(1).powi(2) / s - (-0.5 * g * g).exp()).abs() < 1e-15);
        assert!((4.0 * ff.at(2).powi(2) / s - 4.0 * (-2.0 * g * g).exp()).abs() < 1e-15);
    }

    #[test]
    fn perturbation_converges_at_large_gamma() {
        let rep = perturbation_series(&params(3, 2.0, 3), 4).unwrap();
        assert!(rep.strictly_decreasing(), "{:?}", rep.distances);
        assert!(rep.distances[4] < 1e-6, "{:?}", rep.distances);
        let d0: f64 = rep.exact.iter().zip(&rep.partial_sums[0]).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((rep.distances[0] - d0.sqrt()).abs() < 1e-15);
    }
}
