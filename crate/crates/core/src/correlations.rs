//! Lattice and continuum expectations in the Laughlin state.
//!
//! Finite-`N` values come straight from the amplitude tables. Infinite-volume
//! values are averages of rod expectations over the stationary renewal
//! process: a rod of `n` particles starts at a given renewal point with
//! probability `mu^-1 p_n`, and two rods are bridged by the renewal function.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};
use crate::expansion::{is_irreducible, AmplitudeTable};
use crate::fock::{apply_word, Observable};
use crate::lattice::{partition_of, RodPartition};
use crate::renewal::RenewalModel;

/// Default absolute tolerance of [`detect_period`].
pub const PERIOD_TOLERANCE: f64 = 1e-8;

/// Largest sector handled by the dense quasi-state decomposition.
pub const QUASI_STATE_MAX_DIM: usize = 4000;

/// `<n_k>` for `k = 0, ..., pN - p`.
pub fn occupation_finite(table: &AmplitudeTable) -> Vec<f64> {
    let mut occ = vec![0.0; table.sites()];
    for e in &table.entries {
        let w = e.amplitude * e.amplitude;
        for (k, &n) in e.occupation.0.iter().enumerate() {
            if n > 0 {
                occ[k] += w * n as f64;
            }
        }
    }
    let c = table.norm_squared();
    occ.iter_mut().for_each(|x| *x /= c);
    occ
}

/// `<prod_i n_{k_i}>` (plain product of occupation operators).
pub fn diagonal_moment(table: &AmplitudeTable, sites: &[usize]) -> Result<f64> {
    if let Some(&k) = sites.iter().find(|&&k| k >= table.sites()) {
        return Err(Error::MalformedObservable(format!("site {k} outside the lattice")));
    }
    let mut s = 0.0;
    for e in &table.entries {
        let v: f64 = sites.iter().map(|&k| e.occupation.0[k] as f64).product();
        s += e.amplitude * e.amplitude * v;
    }
    Ok(s / table.norm_squared())
}

/// `<Psi, O Psi> / C_N` for a normal-ordered monomial `O`.
///
/// Monomials that change the particle number or the total index vanish.
pub fn moments_finite(table: &AmplitudeTable, obs: &Observable) -> Result<f64> {
    if obs.max_site() >= table.sites() {
        return Err(Error::MalformedObservable(format!(
            "site {} outside the lattice of {} sites",
            obs.max_site(),
            table.sites()
        )));
    }
    if !obs.conserves_momentum() {
        return Ok(0.0);
    }
    let fermionic = table.params.is_fermionic();
    let mut s = 0.0;
    for e in &table.entries {
        let mut n = e.occupation.0.clone();
        if let Some(f) = apply_word(&obs.ops, &mut n, fermionic) {
            let target = table.amplitude_of(&crate::lattice::OccupationConfig(n));
            s += target * f * e.amplitude;
        }
    }
    Ok(s / table.norm_squared())
}

/// One partition's share of the decomposition.
#[derive(Debug, Clone)]
pub struct QuasiStateBlock {
    pub partition: RodPartition,
    /// `p_N(X) = ||u_X||^2 / C_N`.
    pub weight: f64,
    /// `||u_X||^2`.
    pub norm_squared: f64,
    /// `sum_{(Y,Z): R(Y) cap R(Z) = R(X)} |u_Y><u_Z|`, unnormalized so that
    /// `p_N(X) omega_X = pair_sum / C_N` also when `u_X = 0`.
    pub pair_sum: DMatrix<f64>,
}

impl QuasiStateBlock {
    /// `omega_X` as a matrix on the support basis, when `u_X != 0`.
    pub fn omega(&self) -> Option<DMatrix<f64>> {
        (self.norm_squared > 0.0).then(|| &self.pair_sum / self.norm_squared)
    }

    /// `omega_X(a)` for a diagonal observable given by its value on each
    /// basis state.
    pub fn expect_diagonal(&self, values: &[f64]) -> Option<f64> {
        if self.norm_squared == 0.0 {
            return None;
        }
        let s: f64 = values.iter().enumerate().map(|(i, v)| self.pair_sum[(i, i)] * v).sum();
        Some(s / self.norm_squared)
    }
}

/// `|Psi_N><Psi_N| / C_N = sum_X p_N(X) omega_X` on the support of `Psi_N`.
#[derive(Debug, Clone)]
pub struct QuasiStateDecomposition {
    pub p: u32,
    pub n: usize,
    /// Basis: the configurations of the amplitude table, in table order.
    pub basis: Vec<crate::lattice::OccupationConfig>,
    pub norm: f64,
    pub blocks: Vec<QuasiStateBlock>,
}

impl QuasiStateDecomposition {
    pub fn block(&self, x: &RodPartition) -> Option<&QuasiStateBlock> {
        self.blocks.iter().find(|b| &b.partition == x)
    }

    /// Max-norm distance between `sum_X p_N(X) omega_X` and `|Psi><Psi|/C_N`.
    pub fn reconstruction_error(&self, table: &AmplitudeTable) -> f64 {
        let dim = self.basis.len();
        let mut total = DMatrix::<f64>::zeros(dim, dim);
        for b in &self.blocks {
            total += &b.pair_sum / self.norm;
        }
        let psi: Vec<f64> = table.entries.iter().map(|e| e.amplitude).collect();
        let mut worst = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                worst = worst.max((total[(i, j)] - psi[i] * psi[j] / self.norm).abs());
            }
        }
        worst
    }

    /// Occupation of `site` in every basis state, for [`QuasiStateBlock::expect_diagonal`].
    pub fn site_values(&self, site: usize) -> Vec<f64> {
        self.basis.iter().map(|n| n.0.get(site).copied().unwrap_or(0) as f64).collect()
    }
}

pub fn quasi_state(table: &AmplitudeTable) -> Result<QuasiStateDecomposition> {
    let dim = table.len();
    if dim > QUASI_STATE_MAX_DIM {
        return Err(Error::CapExceeded(format!(
            "quasi-state sector dimension {dim} exceeds {QUASI_STATE_MAX_DIM}"
        )));
    }
    let params = table.params;
    let p = params.p;
    // u_Y as sparse lists of (basis index, amplitude)
    let mut classes: BTreeMap<Vec<u32>, Vec<(usize, f64)>> = BTreeMap::new();
    for (i, e) in table.entries.iter().enumerate() {
        let x = partition_of(&e.config, &params)?;
        classes.entry(x.renewal_set(p)).or_default().push((i, e.amplitude));
    }
    let mut blocks: BTreeMap<Vec<u32>, DMatrix<f64>> = BTreeMap::new();
    for (ry, uy) in &classes {
        for (rz, uz) in &classes {
            let meet: Vec<u32> = ry.iter().filter(|r| rz.contains(r)).copied().collect();
            let m = blocks.entry(meet).or_insert_with(|| DMatrix::zeros(dim, dim));
            for &(i, a) in uy {
                for &(j, b) in uz {
                    m[(i, j)] += a * b;
                }
            }
        }
    }
    let norm = table.norm_squared();
    let mut out = Vec::new();
    for (set, pair_sum) in blocks {
        let partition = RodPartition::from_renewal_set(p, &set)?;
        let norm_squared = classes
            .get(&set)
            .map_or(0.0, |u| u.iter().map(|(_, a)| a * a).sum());
        out.push(QuasiStateBlock { partition, weight: norm_squared / norm, norm_squared, pair_sum });
    }
    Ok(QuasiStateDecomposition {
        p,
        n: params.n,
        basis: table.entries.iter().map(|e| e.occupation.clone()).collect(),
        norm,
        blocks: out,
    })
}

/// Occupations and pair moments inside a single irreducible rod.
#[derive(Debug, Clone, Serialize)]
pub struct RodExpectations {
    pub p: u32,
    /// `nu[n - 1][s] = nu_n(s)` on the `pn` rod sites, `None` when `alpha_n = 0`.
    /// Sites beyond `pn - p` are always empty, and `nu_n(s) = nu_n(pn - p - s)`.
    pub nu: Vec<Option<Vec<f64>>>,
    /// `pair[n - 1][s][t] = <n_s n_t>` in the rod state.
    pub pair: Vec<Option<Vec<Vec<f64>>>>,
    /// Rod sizes skipped because no irreducible configuration carries weight.
    pub skipped: Vec<usize>,
}

impl RodExpectations {
    pub fn nmax(&self) -> usize {
        self.nu.len()
    }

    pub fn nu(&self, n: usize, s: usize) -> f64 {
        self.nu
            .get(n.wrapping_sub(1))
            .and_then(|v| v.as_ref())
            .and_then(|v| v.get(s).copied())
            .unwrap_or(0.0)
    }

    pub fn pair(&self, n: usize, s: usize, t: usize) -> f64 {
        self.pair
            .get(n.wrapping_sub(1))
            .and_then(|v| v.as_ref())
            .and_then(|v| v.get(s).and_then(|row| row.get(t)).copied())
            .unwrap_or(0.0)
    }
}

/// `nu_n(s) = sum_{irreducible} A^2 n_s / alpha_n` for tables `N = 1..=nmax`.
pub fn rod_expectations(tables: &[AmplitudeTable]) -> Result<RodExpectations> {
    let p = tables.first().ok_or(Error::MissingTable(1))?.params.p;
    let mut nu = Vec::with_capacity(tables.len());
    let mut pair = Vec::with_capacity(tables.len());
    let mut skipped = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        if t.params.n != i + 1 || t.params.p != p {
            return Err(Error::MissingTable(i + 1));
        }
        let len = p as usize * t.params.n;
        let mut occ = vec![0.0; len];
        let mut pm = vec![vec![0.0; len]; len];
        let mut alpha = 0.0;
        for e in t.entries.iter().filter(|e| is_irreducible(&e.config, p)) {
            let w = e.amplitude * e.amplitude;
            alpha += w;
            let sites: Vec<(usize, f64)> = e
                .occupation
                .0
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(k, &n)| (k, n as f64))
                .collect();
            for &(k, nk) in &sites {
                occ[k] += w * nk;
                for &(l, nl) in &sites {
                    pm[k][l] += w * nk * nl;
                }
            }
        }
        if alpha > 0.0 {
            occ.iter_mut().for_each(|x| *x /= alpha);
            pm.iter_mut().flatten().for_each(|x| *x /= alpha);
            nu.push(Some(occ));
            pair.push(Some(pm));
        } else {
            skipped.push(i + 1);
            nu.push(None);
            pair.push(None);
        }
    }
    Ok(RodExpectations { p, nu, pair, skipped })
}

fn check_rods(model: &RenewalModel, rods: &RodExpectations) -> Result<()> {
    if rods.p != model.p {
        return Err(Error::InvalidParams(format!("rods for p={} but model for p={}", rods.p, model.p)));
    }
    if rods.nmax() < model.nmax() {
        return Err(Error::LengthMismatch { expected: model.nmax(), got: rods.nmax() });
    }
    Ok(())
}

/// Infinite-volume occupations over one period.
#[derive(Debug, Clone, Serialize)]
pub struct InfiniteOccupations {
    pub p: u32,
    /// `values[k] = <n_k>` for `k = 0..p`; other sites follow by periodicity.
    pub values: Vec<f64>,
    /// Lattice fraction covered by rods beyond the truncation.
    pub truncation_error: f64,
}

impl InfiniteOccupations {
    pub fn at(&self, k: i64) -> f64 {
        self.values[k.rem_euclid(self.p as i64) as usize]
    }
}

/// `<n_k> = mu^-1 sum_n p_n sum_{j<n} nu_n(k + pj)` for `k = 0..p`.
pub fn occupation_infinite(
    model: &RenewalModel,
    rods: &RodExpectations,
    allow_unconverged: bool,
) -> Result<InfiniteOccupations> {
    model.ensure_converged(allow_unconverged)?;
    check_rods(model, rods)?;
    let p = model.p as usize;
    let values = (0..p)
        .map(|k| {
            let mut s = 0.0;
            for n in 1..=model.nmax() {
                let inner: f64 = (0..n).map(|j| rods.nu(n, k + p * j)).sum();
                s += model.p_n(n) * inner;
            }
            s / model.mu
        })
        .collect();
    Ok(InfiniteOccupations { p: model.p, values, truncation_error: model.covered_tail_fraction() })
}

/// `<n_k n_l>` in the infinite-volume state and the truncated correlation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairCorrelation {
    pub k: i64,
    pub l: i64,
    pub pair: f64,
    pub truncated: f64,
    pub truncation_error: f64,
}

/// Same-rod plus split (left rod, renewal bridge, right rod) contributions.
pub fn pair_infinite(
    model: &RenewalModel,
    rods: &RodExpectations,
    k: i64,
    l: i64,
    allow_unconverged: bool,
) -> Result<PairCorrelation> {
    let occ = occupation_infinite(model, rods, allow_unconverged)?;
    let p = model.p as i64;
    let (lo, hi) = if k <= l { (k, l) } else { (l, k) };
    let shift = lo.div_euclid(p) * p;
    let (a, b) = ((lo - shift) as usize, (hi - shift) as usize);
    let pu = p as usize;
    let nmax = model.nmax();
    let u = model.renewal_values(b / pu + 1);

    let mut same = 0.0;
    for n in 1..=nmax {
        for j in 0..n {
            let (s, t) = (a + pu * j, b + pu * j);
            if t < pu * n {
                same += model.p_n(n) * rods.pair(n, s, t);
            }
        }
    }
    let mut split = 0.0;
    for n1 in 1..=nmax {
        for j in 0..n1 {
            let left = model.p_n(n1) * rods.nu(n1, a + pu * j);
            if left == 0.0 {
                continue;
            }
            let end = n1 - j;
            for s2 in end..=b / pu {
                let offset = b - pu * s2;
                let bridge = u[s2 - end];
                let right: f64 =
                    (offset / pu + 1..=nmax).map(|n2| model.p_n(n2) * rods.nu(n2, offset)).sum();
                split += left * bridge * right;
            }
        }
    }
    let pair = (same + split) / model.mu;
    Ok(PairCorrelation {
        k,
        l,
        pair,
        truncated: pair - occ.at(k) * occ.at(l),
        truncation_error: 2.0 * model.covered_tail_fraction(),
    })
}

/// Finite-`N` occupations assembled from the renewal description,
/// `sum_{s,n} u_s p_n u_{N-s-n} / u_N nu_n(k - ps)`.
pub fn occupation_finite_renewal(model: &RenewalModel, rods: &RodExpectations, n: usize) -> Result<Vec<f64>> {
    check_rods(model, rods)?;
    if n == 0 || n > model.nmax() {
        return Err(Error::MissingTable(n));
    }
    let p = model.p as usize;
    let mut occ = vec![0.0; p * n];
    for s in 0..n {
        for len in 1..=n - s {
            let w = model.un[s] * model.p_n(len) * model.un[n - s - len] / model.un[n];
            for t in 0..p * len {
                occ[p * s + t] += w * rods.nu(len, t);
            }
        }
    }
    occ.truncate(p * (n - 1) + 1);
    Ok(occ)
}

/// Finite-vs-infinite comparison at one site of an `N`-particle table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BulkComparison {
    pub site: usize,
    pub finite: f64,
    pub infinite: f64,
    pub difference: f64,
    /// `3 mu sup_{j >= d} |u_j - 1/mu| + truncation`, with `d` the distance to
    /// the nearer edge in periods.
    pub epsilon: f64,
}

pub fn bulk_comparison(
    table: &AmplitudeTable,
    model: &RenewalModel,
    rods: &RodExpectations,
    site: usize,
    allow_unconverged: bool,
) -> Result<BulkComparison> {
    let finite = occupation_finite(table);
    if site >= finite.len() {
        return Err(Error::MalformedObservable(format!("site {site} outside the lattice")));
    }
    let inf = occupation_infinite(model, rods, allow_unconverged)?;
    let infinite = inf.at(site as i64);
    let dist = site.min(finite.len() - 1 - site) / model.p as usize;
    let limit = 1.0 / model.mu;
    let sup = model.un.iter().skip(dist).map(|u| (u - limit).abs()).fold(0.0, f64::max);
    Ok(BulkComparison {
        site,
        finite: finite[site],
        infinite,
        difference: (finite[site] - infinite).abs(),
        epsilon: 3.0 * model.mu * sup + inf.truncation_error,
    })
}

/// Normalized lowest-Landau-level orbital `psi_k(x, y)` centred at `k gamma`.
pub fn orbital(k: i64, gamma: f64, x: f64, y: f64) -> Complex64 {
    let radius = 1.0 / gamma;
    let norm = 1.0 / (2.0 * PI * radius * PI.sqrt()).sqrt();
    let g = (-(x - k as f64 * gamma).powi(2) / 2.0).exp() * norm;
    Complex64::from_polar(g, k as f64 * gamma * y)
}

/// `rho_1(x) = (2 pi R)^-1 pi^-1/2 sum_k <n_k> exp(-(x - k gamma)^2)` for
/// occupations of sites `first_site, first_site + 1, ...`.
pub fn density_profile(occupations: &[f64], first_site: i64, gamma: f64, xs: &[f64]) -> Vec<f64> {
    let pref = gamma / (2.0 * PI * PI.sqrt());
    xs.iter()
        .map(|&x| {
            occupations
                .iter()
                .enumerate()
                .map(|(i, &n)| n * (-(x - (first_site + i as i64) as f64 * gamma).powi(2)).exp())
                .sum::<f64>()
                * pref
        })
        .collect()
}

/// Density of a `p`-periodic occupation pattern, summing all orbitals within
/// 40 magnetic lengths of each point.
pub fn periodic_density_profile(period: &[f64], gamma: f64, xs: &[f64]) -> Vec<f64> {
    let p = period.len() as i64;
    let pref = gamma / (2.0 * PI * PI.sqrt());
    xs.iter()
        .map(|&x| {
            let centre = (x / gamma).round() as i64;
            let reach = (40.0 / gamma).ceil() as i64 + 1;
            (centre - reach..=centre + reach)
                .map(|k| period[k.rem_euclid(p) as usize] * (-(x - k as f64 * gamma).powi(2)).exp())
                .sum::<f64>()
                * pref
        })
        .collect()
}

/// `rho_1(z; z') = sum_k <n_k> psi_k(z) conj(psi_k(z'))`.
pub fn one_particle_matrix(occupations: &[f64], first_site: i64, gamma: f64, z: (f64, f64), w: (f64, f64)) -> Complex64 {
    occupations
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let k = first_site + i as i64;
            orbital(k, gamma, z.0, z.1) * orbital(k, gamma, w.0, w.1).conj() * n
        })
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct OffDiagonalReport {
    /// `max |rho_1(z; z')| exp((x - x')^2 / 4)` over the grid.
    pub k_fit: f64,
    /// `gamma / (2 pi^{3/2}) max_k <n_k> (1 + sqrt(pi) / gamma)`.
    pub k_bound: f64,
    /// Grid point `(x, x', y - y')` attaining `k_fit`.
    pub worst: (f64, f64, f64),
    pub passed: bool,
}

/// Scans `|rho_1(z; z')| <= K exp(-(x - x')^2 / 4)` on `xs x xs x dys`.
pub fn offdiag_bound_check(occupations: &[f64], first_site: i64, gamma: f64, xs: &[f64], dys: &[f64]) -> OffDiagonalReport {
    let mut k_fit = 0.0f64;
    let mut worst = (0.0, 0.0, 0.0);
    for &x in xs {
        for &xp in xs {
            for &dy in dys {
                let v = one_particle_matrix(occupations, first_site, gamma, (x, dy), (xp, 0.0)).norm();
                let ratio = v * ((x - xp).powi(2) / 4.0).exp();
                if ratio > k_fit {
                    k_fit = ratio;
                    worst = (x, xp, dy);
                }
            }
        }
    }
    let max_n = occupations.iter().copied().fold(0.0, f64::max);
    let k_bound = gamma / (2.0 * PI * PI.sqrt()) * max_n * (1.0 + PI.sqrt() / gamma);
    OffDiagonalReport { k_fit, k_bound, worst, passed: k_fit <= k_bound * (1.0 + 1e-12) }
}

/// `||psi_k||^2` restricted to `a <= x <= b`, `(erf(b - k gamma) - erf(a - k gamma)) / 2`.
pub fn orbital_weight(k: i64, gamma: f64, a: f64, b: f64) -> f64 {
    let c = k as f64 * gamma;
    let (lo, hi) = (a - c, b - c);
    let tail = |t: f64| if t == f64::INFINITY { 0.0 } else if t == f64::NEG_INFINITY { 2.0 } else { erfc(t) };
    if lo >= 0.0 {
        0.5 * (tail(lo) - tail(hi))
    } else if hi <= 0.0 {
        0.5 * (tail(-hi) - tail(-lo))
    } else {
        let e = |t: f64| if t.is_infinite() { t.signum() } else { erf(t) };
        0.5 * (e(hi) - e(lo))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DomainReport {
    pub a: f64,
    pub b: f64,
    pub weights: Vec<f64>,
    /// `C_N^Lambda = sum_n A^2 prod_k w_k^{n_k}`.
    pub norm: f64,
    /// `<c*_k J c_k> / <J>` with `J = prod_k w_k^{n_k}`.
    pub occupations: Vec<f64>,
}

/// Correlations of the state with all particles confined to `a <= x <= b`.
pub fn domain_weighted(table: &AmplitudeTable, a: f64, b: f64) -> Result<DomainReport> {
    if a.is_nan() || b.is_nan() || a >= b {
        return Err(Error::InvalidParams(format!("empty domain [{a}, {b}]")));
    }
    let gamma = table.params.gamma;
    let sites = table.sites();
    let weights: Vec<f64> = (0..sites).map(|k| orbital_weight(k as i64, gamma, a, b)).collect();
    let mut norm = 0.0;
    let mut occ = vec![0.0; sites];
    for e in &table.entries {
        let w2 = e.amplitude * e.amplitude;
        let occupied: Vec<(usize, u32)> =
            e.occupation.0.iter().enumerate().filter(|(_, &n)| n > 0).map(|(k, &n)| (k, n)).collect();
        norm += w2 * occupied.iter().map(|&(k, n)| weights[k].powi(n as i32)).product::<f64>();
        for &(k, nk) in &occupied {
            let rest: f64 = occupied
                .iter()
                .map(|&(l, nl)| weights[l].powi(if l == k { nl as i32 - 1 } else { nl as i32 }))
                .product();
            occ[k] += w2 * nk as f64 * rest;
        }
    }
    if norm <= 0.0 {
        return Err(Error::InvalidParams(format!("domain [{a}, {b}] carries no weight")));
    }
    occ.iter_mut().for_each(|x| *x /= norm);
    Ok(DomainReport { a, b, weights, norm, occupations: occ })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PeriodSource {
    Occupations,
    PairMoments,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodReport {
    pub period: usize,
    /// Smallest deviation among the shifts below `period` (infinite for period 1).
    pub margin: f64,
    pub tolerance: f64,
    /// Period declared with margin at least ten times the tolerance.
    pub conclusive: bool,
    pub source: PeriodSource,
    /// `max_k |<n_{k+s}> - <n_k>|` for `s = 1..p-1`.
    pub occupation_shift_differences: Vec<f64>,
    /// Same for the pair moments `<n_k n_{k+d}>` over all tested `d`.
    pub pair_shift_differences: Vec<f64>,
}

fn shift_differences(rows: &[Vec<f64>], p: usize) -> Vec<f64> {
    (1..p)
        .map(|s| {
            rows.iter()
                .flat_map(|v| (0..p).map(move |k| (v[(k + s) % p] - v[k]).abs()))
                .fold(0.0, f64::max)
        })
        .collect()
}

fn smallest_period(diffs: &[f64], p: usize, tol: f64) -> (usize, f64) {
    let period = diffs.iter().position(|&d| d <= tol).map_or(p, |i| i + 1);
    let margin = diffs[..period - 1].iter().copied().fold(f64::INFINITY, f64::min);
    (period, margin)
}

/// Smallest shift `s` (a divisor of `p`) leaving the per-period occupations,
/// and when those are flat the pair moments `pairs[d][k] = <n_k n_{k+d}>`,
/// invariant within `tol`.
pub fn detect_period(occupations: &[f64], pairs: &[Vec<f64>], tol: f64) -> PeriodReport {
    let p = occupations.len();
    let occ_diffs = shift_differences(&[occupations.to_vec()], p);
    let pair_diffs = shift_differences(pairs, p);
    let (period, margin) = smallest_period(&occ_diffs, p, tol);
    let report = |period, margin, source| PeriodReport {
        period,
        margin,
        tolerance: tol,
        conclusive: period == 1 && p == 1 || period > 1 && margin >= 10.0 * tol,
        source,
        occupation_shift_differences: occ_diffs.clone(),
        pair_shift_differences: pair_diffs.clone(),
    };
    if (period > 1 && margin >= 10.0 * tol) || pairs.is_empty() {
        return report(period, margin, PeriodSource::Occupations);
    }
    let combined: Vec<f64> = occ_diffs.iter().zip(&pair_diffs).map(|(a, b)| a.max(*b)).collect();
    let (period, margin) = smallest_period(&combined, p, tol);
    report(period, margin, PeriodSource::PairMoments)
}

/// Period of the infinite-volume state from occupations and pair moments
/// at distances `1..=max_distance`.
pub fn period_test(
    model: &RenewalModel,
    rods: &RodExpectations,
    max_distance: usize,
    tol: f64,
    allow_unconverged: bool,
) -> Result<PeriodReport> {
    let occ = occupation_infinite(model, rods, allow_unconverged)?;
    let p = model.p as i64;
    let mut pairs = Vec::with_capacity(max_distance);
    for d in 1..=max_distance as i64 {
        let row = (0..p)
            .map(|k| pair_infinite(model, rods, k, k + d, allow_unconverged).map(|c| c.pair))
            .collect::<Result<Vec<f64>>>()?;
        pairs.push(row);
    }
    Ok(detect_period(&occ.values, &pairs, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::amplitude_sequence;
    use crate::fock::Op;
    use crate::lattice::{enumerate_partitions, Caps, OrbitalConfig};
    use crate::renewal::Precision;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    fn tables(p: u32, gamma: f64, nmax: usize) -> Vec<AmplitudeTable> {
        amplitude_sequence(p, gamma, nmax, &Caps::default()).unwrap()
    }

    #[test]
    fn two_particle_occupations() {
        let gamma: f64 = 0.9;
        let t = tables(3, gamma, 2);
        let occ = occupation_finite(&t[1]);
        let q = 9.0 * (-4.0 * gamma * gamma).exp();
        let expected = [1.0 / (1.0 + q), q / (1.0 + q), q / (1.0 + q), 1.0 / (1.0 + q)];
        for (a, b) in occ.iter().zip(expected) {
            assert!(close(*a, b, 1e-14));
        }
    }

    #[test]
    fn occupations_sum_and_reflect() {
        for (p, n) in [(1u32, 6usize), (2, 5), (3, 5), (4, 4)] {
            let t = tables(p, 0.7, n);
            let occ = occupation_finite(&t[n - 1]);
            assert!(close(occ.iter().sum(), n as f64, 1e-12));
            for k in 0..occ.len() {
                assert!(close(occ[k], occ[occ.len() - 1 - k], 1e-12));
            }
            if p == 1 {
                assert!(occ.iter().all(|&x| close(x, 1.0, 1e-14)));
            }
        }
    }

    #[test]
    fn moment_examples() {
        let gamma: f64 = 1.1;
        let t = tables(3, gamma, 2);
        let q = 9.0 * (-4.0 * gamma * gamma).exp();
        let nn = moments_finite(&t[1], &Observable::pair_density(0, 3)).unwrap();
        assert!(close(nn, 1.0 / (1.0 + q), 1e-14));
        let hop = moments_finite(&t[1], &Observable::parse("c*1 c*2 c3 c0").unwrap()).unwrap();
        assert!(close(hop, -3.0 * (-2.0 * gamma * gamma).exp() / (1.0 + q), 1e-14));
        let zero = moments_finite(&t[1], &Observable::parse("c*0 c1").unwrap()).unwrap();
        assert_eq!(zero, 0.0);
        let out = Observable::new(vec![Op::Create(9), Op::Annihilate(9)]).unwrap();
        assert!(matches!(moments_finite(&t[1], &out), Err(Error::MalformedObservable(_))));
    }

    #[test]
    fn densities_match_occupations_and_moments_are_hermitian() {
        for p in [2u32, 3] {
            let t = tables(p, 0.8, 4);
            let table = &t[3];
            let occ = occupation_finite(table);
            for (k, &o) in occ.iter().enumerate() {
                let m = moments_finite(table, &Observable::density(k)).unwrap();
                assert!(close(m, o, 1e-13));
                let d = diagonal_moment(table, &[k, k]).unwrap();
                if p % 2 == 1 {
                    assert!(close(d, o, 1e-13));
                } else {
                    // factorial moment <n(n-1)> >= 0
                    assert!(d - o >= -1e-13);
                }
            }
            // <c*_a c*_b c_c c_d> = <c*_d c*_c c_b c_a> for a real state
            let sites = table.sites();
            for a in 0..sites {
                for b in 0..sites {
                    for c in 0..sites {
                        if a + b < c || a + b - c >= sites {
                            continue;
                        }
                        let d = a + b - c;
                        let f = Observable::new(vec![Op::Create(a), Op::Create(b), Op::Annihilate(c), Op::Annihilate(d)]).unwrap();
                        let g = Observable::new(vec![Op::Create(d), Op::Create(c), Op::Annihilate(b), Op::Annihilate(a)]).unwrap();
                        assert!(close(moments_finite(table, &f).unwrap(), moments_finite(table, &g).unwrap(), 1e-13));
                    }
                }
            }
        }
    }

    #[test]
    fn quasi_state_two_particles() {
        let gamma: f64 = 0.8;
        let t = tables(3, gamma, 2);
        let qs = quasi_state(&t[1]).unwrap();
        let v = RodPartition::new(vec![1, 1]).unwrap();
        let w = RodPartition::new(vec![2]).unwrap();
        let q = 9.0 * (-4.0 * gamma * gamma).exp();
        let bv = qs.block(&v).unwrap();
        assert!(close(bv.weight, 1.0 / (1.0 + q), 1e-14));
        let ov = bv.omega().unwrap();
        let i03 = qs.basis.iter().position(|n| n.to_orbitals() == OrbitalConfig(vec![0, 3])).unwrap();
        let i12 = 1 - i03;
        assert!(close(ov[(i03, i03)], 1.0, 1e-15));
        assert_eq!(ov[(i12, i12)], 0.0);
        assert_eq!(ov[(i03, i12)], 0.0);
        let ow = qs.block(&w).unwrap().omega().unwrap();
        let expected = -(2.0 * gamma * gamma).exp() / 3.0;
        assert!(close(ow[(i03, i12)], expected, 1e-13));
        assert!(close(ow[(i12, i03)], expected, 1e-13));
        assert!(close(ow[(i12, i12)], 1.0, 1e-14));
        let n1 = qs.block(&w).unwrap().expect_diagonal(&qs.site_values(1)).unwrap();
        assert!(close(n1, 1.0, 1e-14));
        assert!(qs.reconstruction_error(&t[1]) < 1e-15);
    }

    #[test]
    fn quasi_state_reconstruction_and_locality() {
        for p in [2u32, 3] {
            let t = tables(p, 0.6, 4);
            let rods = rod_expectations(&t).unwrap();
            for n in 1..=4 {
                let qs = quasi_state(&t[n - 1]).unwrap();
                assert!(qs.reconstruction_error(&t[n - 1]) < 1e-12, "p={p} N={n}");
                let total: f64 = qs.blocks.iter().map(|b| b.weight).sum();
                assert!(close(total, 1.0, 1e-12));
                let caps = Caps::default();
                assert!(qs.blocks.len() <= enumerate_partitions(n, &caps).unwrap().len());
                // omega_X(n_site) is the rod expectation of the covering rod,
                // wherever the rod sits and whatever the other rods are
                for b in &qs.blocks {
                    for (start, len) in b.partition.rods(p) {
                        for s in 0..p as usize * len {
                            let site = start as usize + s;
                            if site >= t[n - 1].sites() {
                                continue;
                            }
                            let v = b.expect_diagonal(&qs.site_values(site)).unwrap();
                            assert!(close(v, rods.nu(len, s), 1e-12), "p={p} X={} site={site}", b.partition);
                        }
                    }
                    // rods are uncorrelated under omega_X
                    let rs: Vec<(u32, usize)> = b.partition.rods(p).collect();
                    if rs.len() >= 2 {
                        let (s0, _) = rs[0];
                        let (s1, l1) = rs[1];
                        let a = s0 as usize;
                        let c = s1 as usize + p as usize * l1 / 2;
                        if c < t[n - 1].sites() {
                            let vals: Vec<f64> = qs
                                .basis
                                .iter()
                                .map(|occ| (occ.0[a] * occ.0[c]) as f64)
                                .collect();
                            let joint = b.expect_diagonal(&vals).unwrap();
                            let prod = b.expect_diagonal(&qs.site_values(a)).unwrap()
                                * b.expect_diagonal(&qs.site_values(c)).unwrap();
                            assert!(close(joint, prod, 1e-12));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rod_expectation_examples() {
        let t = tables(3, 1.0, 4);
        let rods = rod_expectations(&t).unwrap();
        assert_eq!(rods.nu[0].as_ref().unwrap(), &vec![1.0, 0.0, 0.0]);
        assert_eq!(rods.nu[1].as_ref().unwrap(), &vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        for n in 1..=4 {
            let nu = rods.nu[n - 1].as_ref().unwrap();
            assert!(close(nu.iter().sum(), n as f64, 1e-13));
            // the rod state lives on sites 0..=pn-p and is symmetric about its centre
            let last = 3 * n - 3;
            for s in 0..=last {
                assert!(close(nu[s], nu[last - s], 1e-13));
            }
            assert!(nu[last + 1..].iter().all(|&x| x == 0.0));
        }
        let t = tables(1, 1.0, 3);
        let rods = rod_expectations(&t).unwrap();
        assert_eq!(rods.skipped, vec![2, 3]);
    }

    fn laughlin(p: u32, gamma: f64, nmax: usize) -> (Vec<AmplitudeTable>, RenewalModel, RodExpectations) {
        let t = tables(p, gamma, nmax);
        let (m, _) = RenewalModel::from_tables(&t, Precision::Double).unwrap();
        let rods = rod_expectations(&t).unwrap();
        (t, m, rods)
    }

    #[test]
    fn finite_occupations_from_renewal_agree() {
        let (t, m, rods) = laughlin(3, 0.8, 6);
        for n in 1..=6 {
            let a = occupation_finite(&t[n - 1]);
            let b = occupation_finite_renewal(&m, &rods, n).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!(close(*x, *y, 1e-11));
            }
        }
    }

    #[test]
    fn infinite_occupations() {
        let (_, m, rods) = laughlin(1, 1.0, 5);
        let occ = occupation_infinite(&m, &rods, false).unwrap();
        assert_eq!(occ.values, vec![1.0]);
        let c = pair_infinite(&m, &rods, 0, 4, false).unwrap();
        assert!(c.truncated.abs() < 1e-14);

        let (t, m, rods) = laughlin(3, 1.0, 8);
        let occ = occupation_infinite(&m, &rods, false).unwrap();
        assert!(close(occ.values.iter().sum(), 1.0, 1e-12));
        assert!(close(occ.values[1], occ.values[2], 1e-12));
        let cmp = bulk_comparison(&t[7], &m, &rods, 10, false).unwrap();
        assert!(cmp.difference <= cmp.epsilon);
    }

    #[test]
    fn pair_infinite_consistency() {
        let (_, m, rods) = laughlin(3, 1.0, 8);
        let occ = occupation_infinite(&m, &rods, false).unwrap();
        for k in 0..3 {
            let c = pair_infinite(&m, &rods, k, k, false).unwrap();
            assert!(close(c.pair, occ.at(k), 1e-12));
            // translation by a period and symmetry in the arguments
            let a = pair_infinite(&m, &rods, k, k + 4, false).unwrap().pair;
            let b = pair_infinite(&m, &rods, k + 3, k + 7, false).unwrap().pair;
            let c2 = pair_infinite(&m, &rods, k + 4, k, false).unwrap().pair;
            assert!(close(a, b, 1e-14));
            assert_eq!(a, c2);
        }
        // sum over a period of the pair density equals the density times particles per period
        let (_, m2, rods2) = laughlin(2, 1.0, 8);
        let occ2 = occupation_infinite(&m2, &rods2, false).unwrap();
        let c = pair_infinite(&m2, &rods2, 0, 0, false).unwrap();
        assert!(c.pair >= occ2.at(0));
    }

    #[test]
    fn pair_infinite_matches_finite_bulk() {
        let (t, m, rods) = laughlin(3, 1.5, 8);
        let table = &t[7];
        for (k, l) in [(9usize, 10usize), (9, 12), (10, 13), (9, 11)] {
            let fin = diagonal_moment(table, &[k, l]).unwrap();
            let inf = pair_infinite(&m, &rods, k as i64, l as i64, false).unwrap().pair;
            assert!((fin - inf).abs() < 1e-6, "{k},{l}: {fin} vs {inf}");
        }
    }

    #[test]
    fn unconverged_model_is_refused() {
        let (_, m, rods) = laughlin(3, 0.3, 4);
        assert!(!m.is_converged());
        assert!(matches!(occupation_infinite(&m, &rods, false), Err(Error::Unconverged { .. })));
        assert!(occupation_infinite(&m, &rods, true).is_ok());
    }

    #[test]
    fn density_examples() {
        let gamma: f64 = 0.7;
        let xs: Vec<f64> = (0..40).map(|i| -3.0 + 0.25 * i as f64).collect();
        let rho = periodic_density_profile(&[1.0], gamma, &xs);
        // Poisson summation: ripple of relative size 2 exp(-pi^2 / gamma^2)
        let expected = gamma / (2.0 * PI * PI.sqrt()) * (PI.sqrt() / gamma);
        let ripple = 2.0 * (-PI * PI / (gamma * gamma)).exp();
        for r in &rho {
            assert!((r - expected).abs() <= 1.01 * ripple * expected);
        }
        // one particle per period of length p gamma around the circumference 2 pi R
        let period = [0.5, 0.3, 0.2];
        let h = 3.0 * gamma / 3000.0;
        let grid: Vec<f64> = (0..3000).map(|i| (i as f64 + 0.5) * h).collect();
        let integral: f64 = periodic_density_profile(&period, gamma, &grid).iter().sum::<f64>() * h;
        assert!(close(integral * 2.0 * PI / gamma, 1.0, 1e-10));
        // finite profile integrates to N
        let t = tables(3, gamma, 4);
        let occ = occupation_finite(&t[3]);
        let h = 0.01;
        let grid: Vec<f64> = (0..3000).map(|i| -10.0 + i as f64 * h).collect();
        let total: f64 = density_profile(&occ, 0, gamma, &grid).iter().sum::<f64>() * h * 2.0 * PI / gamma;
        assert!(close(total, 4.0, 1e-9));
    }

    #[test]
    fn offdiag_examples() {
        let gamma: f64 = 0.8;
        let occ = vec![1.0; 40];
        // filled level at y = y': exact Gaussian factorization
        let (x, xp) = (12.0, 13.5);
        let v = one_particle_matrix(&occ, 0, gamma, (x, 0.0), (xp, 0.0));
        let direct: f64 = (0..40)
            .map(|k| {
                let c = k as f64 * gamma;
                (-((x - c).powi(2) + (xp - c).powi(2)) / 2.0).exp()
            })
            .sum::<f64>()
            * gamma
            / (2.0 * PI * PI.sqrt());
        assert!(close(v.re, direct, 1e-13));
        assert!(v.im.abs() < 1e-15);
        let mid = 0.5 * (x + xp);
        let factored = (-(x - xp).powi(2) / 4.0).exp()
            * (0..40).map(|k| (-(k as f64 * gamma - mid).powi(2)).exp()).sum::<f64>()
            * gamma
            / (2.0 * PI * PI.sqrt());
        assert!(close(v.re, factored, 1e-13));

        let t = tables(3, 1.0, 6);
        let occ = occupation_finite(&t[5]);
        let xs: Vec<f64> = (0..31).map(|i| -2.0 + 0.6 * i as f64).collect();
        let report = offdiag_bound_check(&occ, 0, 1.0, &xs, &[0.0, 0.5, 1.3]);
        assert!(report.passed, "{report:?}");
        // diagonal point is bounded by its own density
        let d = one_particle_matrix(&occ, 0, 1.0, (3.0, 0.0), (3.0, 0.0)).re;
        assert!(close(d, density_profile(&occ, 0, 1.0, &[3.0])[0], 1e-13));
    }

    #[test]
    fn domain_examples() {
        let gamma: f64 = 0.9;
        assert!(close(orbital_weight(3, gamma, 3.0 * gamma, f64::INFINITY), 0.5, 1e-15));
        assert_eq!(orbital_weight(3, gamma, f64::NEG_INFINITY, f64::INFINITY), 1.0);
        assert!(orbital_weight(0, gamma, 30.0, 31.0) >= 0.0);
        let t = tables(3, gamma, 4);
        let full = domain_weighted(&t[3], f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let occ = occupation_finite(&t[3]);
        for (a, b) in full.occupations.iter().zip(&occ) {
            assert!(close(*a, *b, 1e-14));
        }
        assert!(close(full.norm, t[3].norm_squared(), 1e-14));
        let half = domain_weighted(&t[3], 0.0, f64::INFINITY).unwrap();
        let counted: f64 = half.occupations.iter().zip(&half.weights).map(|(o, w)| o * w).sum();
        assert!(close(counted, 4.0, 1e-12));
        assert!(domain_weighted(&t[3], 1.0, 1.0).is_err());
    }

    #[test]
    fn domain_norm_matches_quadrature_for_one_particle() {
        // C_1^Lambda = ||psi_0||^2 on [a, b], against a midpoint rule
        let gamma: f64 = 1.3;
        let t = tables(2, gamma, 1);
        let (a, b) = (-0.4, 0.9);
        let rep = domain_weighted(&t[0], a, b).unwrap();
        let m = 20000;
        let h = (b - a) / m as f64;
        let quad: f64 = (0..m)
            .map(|i| {
                let x: f64 = a + (i as f64 + 0.5) * h;
                (-x * x).exp()
            })
            .sum::<f64>()
            * h
            / PI.sqrt();
        assert!(close(rep.norm, quad, 1e-8));
    }

    #[test]
    fn period_detection() {
        let r = detect_period(&[1.0], &[], PERIOD_TOLERANCE);
        assert_eq!(r.period, 1);
        assert!(r.conclusive);
        let r = detect_period(&[0.5, 0.25, 0.25], &[], PERIOD_TOLERANCE);
        assert_eq!(r.period, 3);
        assert!(r.conclusive);
        let r = detect_period(&[0.25, 0.25, 0.25, 0.25], &[vec![0.1, 0.2, 0.1, 0.2]], PERIOD_TOLERANCE);
        assert_eq!(r.period, 2);
        assert_eq!(r.source, PeriodSource::PairMoments);
        let (_, m, rods) = laughlin(3, 1.0, 8);
        let r = period_test(&m, &rods, 3, PERIOD_TOLERANCE, false).unwrap();
        assert_eq!(r.period, 3);
        assert!(r.margin >= 10.0 * PERIOD_TOLERANCE);
    }

    #[test]
    fn truncated_correlations_decay() {
        let (_, m, rods) = laughlin(3, 1.0, 8);
        let vals: Vec<f64> = (1..=20)
            .map(|k| pair_infinite(&m, &rods, 0, k, false).unwrap().truncated.abs())
            .collect();
        assert!(vals[14] < 1e-3);
        assert!(vals[19] < vals[0]);
    }
}
