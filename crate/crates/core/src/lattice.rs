//! Orbital-lattice domain types.
//!
//! An `N`-particle basis label is either an [`OrbitalConfig`] (the weakly
//! increasing list of occupied orbital indices) or an [`OccupationConfig`]
//! (occupation numbers per site). Both live on the lattice `{0, ..., pN - p}`.
//! Renewal points and rod partitions describe where an admissible
//! configuration splits into independent blocks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a Laughlin state at filling `1/p` on a cylinder with
/// `gamma = l / R` (magnetic length fixed to one).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub p: u32,
    pub gamma: f64,
    pub n: usize,
}

impl ModelParams {
    pub fn new(p: u32, gamma: f64, n: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParams("p must be at least 1".into()));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParams(format!("gamma must be positive, got {gamma}")));
        }
        if n == 0 {
            return Err(Error::InvalidParams("N must be at least 1".into()));
        }
        Ok(Self { p, gamma, n })
    }

    /// Odd `p` gives fermions, even `p` bosons.
    pub fn is_fermionic(&self) -> bool {
        self.p % 2 == 1
    }

    /// Cylinder radius `R = 1 / gamma`.
    pub fn radius(&self) -> f64 {
        1.0 / self.gamma
    }

    /// Number of lattice sites, `pN - p + 1`.
    pub fn lattice_len(&self) -> usize {
        self.p as usize * (self.n - 1) + 1
    }

    /// Largest orbital index, `pN - p`.
    pub fn max_orbital(&self) -> u32 {
        self.p * (self.n as u32 - 1)
    }

    /// Total orbital index `pN(N-1)/2` shared by every admissible configuration.
    pub fn total_index(&self) -> u64 {
        triangular(self.p, self.n)
    }

    /// The root configuration `(0, p, 2p, ..., p(N-1))`.
    pub fn root_config(&self) -> OrbitalConfig {
        OrbitalConfig((0..self.n as u32).map(|j| j * self.p).collect())
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..*self }
    }
}

/// `p k (k-1) / 2`, the minimal partial sum of the first `k` indices.
pub fn triangular(p: u32, k: usize) -> u64 {
    let k = k as u64;
    p as u64 * k * k.saturating_sub(1) / 2
}

/// Size caps for the combinatorial enumerations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    pub max_n_small_p: usize,
    pub max_n_p3: usize,
    pub max_n_large_p: usize,
    pub max_partition_n: usize,
    pub max_configs: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_n_small_p: 10,
            max_n_p3: 8,
            max_n_large_p: 6,
            max_partition_n: 16,
            max_configs: 2_000_000,
        }
    }
}

impl Caps {
    pub fn max_n(&self, p: u32) -> usize {
        match p {
            0..=2 => self.max_n_small_p,
            3 => self.max_n_p3,
            _ => self.max_n_large_p,
        }
    }

    pub fn check(&self, p: u32, n: usize) -> Result<()> {
        let cap = self.max_n(p);
        if n > cap {
            return Err(Error::CapExceeded(format!("N = {n} exceeds cap {cap} for p = {p}")));
        }
        Ok(())
    }
}

/// Sorted list of occupied orbitals `m_1 <= ... <= m_N`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrbitalConfig(pub Vec<u32>);

impl OrbitalConfig {
    /// Builds the canonical (sorted) representative.
    pub fn new(mut m: Vec<u32>) -> Self {
        m.sort_unstable();
        Self(m)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_repeats(&self) -> bool {
        self.0.windows(2).any(|w| w[0] == w[1])
    }

    pub fn is_canonical(&self, fermionic: bool) -> bool {
        if fermionic {
            self.0.windows(2).all(|w| w[0] < w[1])
        } else {
            self.0.windows(2).all(|w| w[0] <= w[1])
        }
    }

    pub fn index_sum(&self) -> u64 {
        self.0.iter().map(|&m| m as u64).sum()
    }

    pub fn index_square_sum(&self) -> u64 {
        self.0.iter().map(|&m| (m as u64) * (m as u64)).sum()
    }

    /// Occupation numbers on `sites` lattice sites.
    pub fn to_occupation(&self, sites: usize) -> OccupationConfig {
        let mut n = vec![0u32; sites];
        for &m in &self.0 {
            n[m as usize] += 1;
        }
        OccupationConfig(n)
    }
}

impl fmt::Display for OrbitalConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|m| m.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Occupation numbers `n_0, ..., n_{L-1}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OccupationConfig(pub Vec<u32>);

impl OccupationConfig {
    pub fn particles(&self) -> usize {
        self.0.iter().map(|&n| n as usize).sum()
    }

    pub fn to_orbitals(&self) -> OrbitalConfig {
        let mut m = Vec::with_capacity(self.particles());
        for (site, &count) in self.0.iter().enumerate() {
            m.extend(std::iter::repeat_n(site as u32, count as usize));
        }
        OrbitalConfig(m)
    }

    /// `prod_i n_i!`, the bosonic normalization of a repeated-index monomial.
    pub fn factorial_product(&self) -> f64 {
        self.0
            .iter()
            .map(|&n| (1..=n).map(|k| k as f64).product::<f64>())
            .product()
    }
}

/// Tiling of `{0, ..., pN - 1}` by rods of lengths `p n_1, ..., p n_D`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RodPartition {
    pub lengths: Vec<usize>,
}

impl RodPartition {
    pub fn new(lengths: Vec<usize>) -> Result<Self> {
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::InvalidParams(format!("rod lengths must be positive: {lengths:?}")));
        }
        Ok(Self { lengths })
    }

    /// Number of particles `sum n_i`.
    pub fn particles(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Renewal set `{0, p n_1, p(n_1 + n_2), ..., pN}`.
    pub fn renewal_set(&self, p: u32) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.lengths.len() + 1);
        let mut acc = 0u32;
        out.push(0);
        for &n in &self.lengths {
            acc += p * n as u32;
            out.push(acc);
        }
        out
    }

    /// Inverse of [`renewal_set`](Self::renewal_set).
    pub fn from_renewal_set(p: u32, points: &[u32]) -> Result<Self> {
        if points.len() < 2 || points[0] != 0 {
            return Err(Error::InvalidParams(format!("renewal set must start at 0: {points:?}")));
        }
        let mut lengths = Vec::with_capacity(points.len() - 1);
        for w in points.windows(2) {
            if w[1] <= w[0] || (w[1] - w[0]) % p != 0 {
                return Err(Error::InvalidParams(format!("bad renewal set {points:?} for p = {p}")));
            }
            lengths.push(((w[1] - w[0]) / p) as usize);
        }
        Self::new(lengths)
    }

    /// `(first site, particle count)` for every rod, left to right.
    pub fn rods(&self, p: u32) -> impl Iterator<Item = (u32, usize)> + '_ {
        let mut start = 0u32;
        self.lengths.iter().map(move |&n| {
            let s = start;
            start += p * n as u32;
            (s, n)
        })
    }
}

impl fmt::Display for RodPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.lengths.iter().map(|m| m.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

fn check_len(m: &OrbitalConfig, params: &ModelParams) -> Result<()> {
    if m.len() != params.n {
        return Err(Error::LengthMismatch { expected: params.n, got: m.len() });
    }
    Ok(())
}

/// Partial-sum dominance `sum_{j<=k} m_j >= p k(k-1)/2` with equality at `k = N`.
pub fn is_admissible(m: &OrbitalConfig, params: &ModelParams) -> Result<bool> {
    check_len(m, params)?;
    if m.0.iter().any(|&x| x > params.max_orbital()) {
        return Ok(false);
    }
    let mut partial = 0u64;
    for (k, &x) in m.0.iter().enumerate() {
        partial += x as u64;
        if partial < triangular(params.p, k + 1) {
            return Ok(false);
        }
    }
    Ok(partial == params.total_index())
}

/// Renewal points `pk` with `sum_{j<=k} m_j = p k(k-1)/2`, from partial sums.
pub fn renewal_points(m: &OrbitalConfig, params: &ModelParams) -> Result<Vec<u32>> {
    if !is_admissible(m, params)? {
        return Err(Error::Inadmissible(m.0.clone()));
    }
    Ok(renewal_points_unchecked(m.as_slice(), params.p))
}

pub(crate) fn renewal_points_unchecked(m: &[u32], p: u32) -> Vec<u32> {
    let mut out = vec![0];
    let mut partial = 0u64;
    for (k, &x) in m.iter().enumerate() {
        partial += x as u64;
        if partial == triangular(p, k + 1) {
            out.push(p * (k as u32 + 1));
        }
    }
    out
}

/// Renewal points read off occupation numbers: `pk` renews iff exactly `k`
/// particles sit left of `pk` and their index sum is `p k(k-1)/2`.
pub fn renewal_points_from_occupations(n: &OccupationConfig, p: u32) -> Vec<u32> {
    let total = n.particles();
    let mut out = Vec::new();
    for k in 0..=total {
        let edge = (p as usize * k).min(n.0.len());
        let (count, moment) = n.0[..edge]
            .iter()
            .enumerate()
            .fold((0usize, 0u64), |(c, s), (j, &nj)| (c + nj as usize, s + j as u64 * nj as u64));
        if count == k && moment == triangular(p, k) {
            out.push(p * k as u32);
        }
    }
    out
}

/// Rod partition delimited by consecutive renewal points.
pub fn partition_of(m: &OrbitalConfig, params: &ModelParams) -> Result<RodPartition> {
    let points = renewal_points(m, params)?;
    RodPartition::from_renewal_set(params.p, &points)
}

/// All `2^{N-1}` compositions of `N`, in lexicographic order of the rod lengths.
pub fn enumerate_partitions(n: usize, caps: &Caps) -> Result<Vec<RodPartition>> {
    if n == 0 {
        return Err(Error::InvalidParams("N must be at least 1".into()));
    }
    if n > caps.max_partition_n {
        return Err(Error::CapExceeded(format!(
            "partition enumeration for N = {n} exceeds cap {}",
            caps.max_partition_n
        )));
    }
    fn rec(rest: usize, prefix: &mut Vec<usize>, out: &mut Vec<RodPartition>) {
        if rest == 0 {
            out.push(RodPartition { lengths: prefix.clone() });
            return;
        }
        for first in 1..=rest {
            prefix.push(first);
            rec(rest - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(1 << (n - 1));
    rec(n, &mut Vec::new(), &mut out);
    Ok(out)
}

/// Shifts every index by `p * shift` (a magnetic translation by `shift` periods).
///
/// Panics if an index would become negative.
pub fn translate_config(m: &OrbitalConfig, p: u32, shift: i64) -> OrbitalConfig {
    let delta = p as i64 * shift;
    OrbitalConfig(
        m.0.iter()
            .map(|&x| {
                let y = x as i64 + delta;
                assert!(y >= 0, "translation moved orbital {x} below zero");
                y as u32
            })
            .collect(),
    )
}

/// Depth-first enumeration of all canonical admissible configurations for
/// `params`, in lexicographic order.
pub fn enumerate_admissible(params: &ModelParams, caps: &Caps) -> Result<Vec<OrbitalConfig>> {
    let n = params.n;
    let top = params.max_orbital() as u64;
    let total = params.total_index();
    let strict = params.is_fermionic() as u64;
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);

    struct Ctx<'a> {
        n: usize,
        p: u32,
        top: u64,
        total: u64,
        strict: u64,
        cap: usize,
        out: &'a mut Vec<OrbitalConfig>,
    }

    fn dfs(ctx: &mut Ctx<'_>, current: &mut Vec<u32>, sum: u64) -> Result<()> {
        let k = current.len();
        if k == ctx.n {
            if sum == ctx.total {
                if ctx.out.len() >= ctx.cap {
                    return Err(Error::CapExceeded(format!(
                        "more than {} admissible configurations",
                        ctx.cap
                    )));
                }
                ctx.out.push(OrbitalConfig(current.clone()));
            }
            return Ok(());
        }
        let lo = match current.last() {
            Some(&last) => last as u64 + ctx.strict,
            None => 0,
        };
        let rest = (ctx.n - k - 1) as u64;
        for m in lo..=ctx.top {
            let s = sum + m;
            if s < triangular(ctx.p, k + 1) {
                continue;
            }
            // cheapest completion: the remaining entries as small as allowed
            let min_rest = rest * m + ctx.strict * rest * (rest + 1) / 2;
            if s + min_rest > ctx.total {
                break;
            }
            if s + rest * ctx.top < ctx.total {
                continue;
            }
            current.push(m as u32);
            dfs(ctx, current, s)?;
            current.pop();
        }
        Ok(())
    }

    let mut ctx = Ctx { n, p: params.p, top, total, strict, cap: caps.max_configs, out: &mut out };
    dfs(&mut ctx, &mut current, 0)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: u32, n: usize) -> ModelParams {
        ModelParams::new(p, 1.0, n).unwrap()
    }

    fn cfg(m: &[u32]) -> OrbitalConfig {
        OrbitalConfig::new(m.to_vec())
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ModelParams::new(0, 1.0, 2).is_err());
        assert!(ModelParams::new(3, 0.0, 2).is_err());
        assert!(ModelParams::new(3, f64::NAN, 2).is_err());
        assert!(ModelParams::new(3, 1.0, 0).is_err());
    }

    #[test]
    fn admissibility_examples() {
        assert!(is_admissible(&cfg(&[0, 3]), &params(3, 2)).unwrap());
        assert!(!is_admissible(&cfg(&[0, 2]), &params(3, 2)).unwrap());
        assert!(is_admissible(&cfg(&[0, 1, 2]), &params(1, 3)).unwrap());
        assert!(matches!(
            is_admissible(&cfg(&[0, 1, 2]), &params(3, 2)),
            Err(Error::LengthMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn renewal_point_examples() {
        assert_eq!(renewal_points(&cfg(&[0, 3]), &params(3, 2)).unwrap(), vec![0, 3, 6]);
        assert_eq!(renewal_points(&cfg(&[1, 2]), &params(3, 2)).unwrap(), vec![0, 6]);
        assert_eq!(renewal_points(&cfg(&[0, 1, 2]), &params(1, 3)).unwrap(), vec![0, 1, 2, 3]);
        assert!(matches!(
            renewal_points(&cfg(&[0, 2]), &params(3, 2)),
            Err(Error::Inadmissible(_))
        ));
    }

    #[test]
    fn partition_examples() {
        assert_eq!(partition_of(&cfg(&[0, 3]), &params(3, 2)).unwrap().lengths, vec![1, 1]);
        assert_eq!(partition_of(&cfg(&[1, 2]), &params(3, 2)).unwrap().lengths, vec![2]);
        let filled: Vec<u32> = (0..6).collect();
        assert_eq!(partition_of(&cfg(&filled), &params(1, 6)).unwrap().lengths, vec![1; 6]);
    }

    #[test]
    fn partitions_are_compositions() {
        let caps = Caps::default();
        assert_eq!(enumerate_partitions(1, &caps).unwrap(), vec![RodPartition { lengths: vec![1] }]);
        let two: Vec<Vec<usize>> =
            enumerate_partitions(2, &caps).unwrap().into_iter().map(|x| x.lengths).collect();
        assert_eq!(two, vec![vec![1, 1], vec![2]]);
        assert_eq!(enumerate_partitions(3, &caps).unwrap().len(), 4);
        assert_eq!(enumerate_partitions(7, &caps).unwrap().len(), 64);
        assert!(enumerate_partitions(caps.max_partition_n + 1, &caps).is_err());
    }

    #[test]
    fn translation_examples() {
        assert_eq!(translate_config(&cfg(&[0, 3]), 3, 1), cfg(&[3, 6]));
        assert_eq!(translate_config(&cfg(&[1, 2]), 3, 0), cfg(&[1, 2]));
        assert_eq!(translate_config(&cfg(&[1, 2]), 3, 2), cfg(&[7, 8]));
    }

    #[test]
    fn renewal_set_round_trip() {
        let caps = Caps::default();
        for p in 1..=4 {
            for x in enumerate_partitions(6, &caps).unwrap() {
                let set = x.renewal_set(p);
                assert_eq!(*set.last().unwrap(), p * 6);
                assert_eq!(RodPartition::from_renewal_set(p, &set).unwrap(), x);
            }
        }
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let caps = Caps::default();
        for p in 1..=3u32 {
            for n in 1..=4usize {
                let prm = params(p, n);
                let fast = enumerate_admissible(&prm, &caps).unwrap();
                // brute force over the full cube of sorted tuples
                let top = prm.max_orbital();
                let mut brute = Vec::new();
                let mut idx = vec![0u32; n];
                loop {
                    let c = OrbitalConfig(idx.clone());
                    if c.is_canonical(prm.is_fermionic()) && is_admissible(&c, &prm).unwrap() {
                        brute.push(c);
                    }
                    let mut pos = 0;
                    loop {
                        if pos == n {
                            break;
                        }
                        idx[pos] += 1;
                        if idx[pos] <= top {
                            break;
                        }
                        idx[pos] = 0;
                        pos += 1;
                    }
                    if pos == n {
                        break;
                    }
                }
                brute.sort();
                assert_eq!(fast, brute, "p={p} N={n}");
            }
        }
    }

    #[test]
    fn admissible_counts() {
        let caps = Caps::default();
        assert_eq!(enumerate_admissible(&params(3, 6), &caps).unwrap().len(), 247);
        assert_eq!(enumerate_admissible(&params(2, 6), &caps).unwrap().len(), 247);
        assert_eq!(enumerate_admissible(&params(1, 5), &caps).unwrap().len(), 1);
    }

    #[test]
    fn occupation_criterion_agrees_with_partial_sums() {
        let caps = Caps::default();
        for p in 1..=4u32 {
            for n in 1..=6usize {
                if n > caps.max_n(p) {
                    continue;
                }
                let prm = params(p, n);
                for m in enumerate_admissible(&prm, &caps).unwrap() {
                    let occ = m.to_occupation(prm.lattice_len());
                    assert_eq!(
                        renewal_points(&m, &prm).unwrap(),
                        renewal_points_from_occupations(&occ, p),
                        "p={p} m={m}"
                    );
                    assert_eq!(occ.to_orbitals(), m);
                }
            }
        }
    }

    #[test]
    fn dominance_implies_square_sum_bound() {
        let caps = Caps::default();
        for p in 1..=3u32 {
            for n in 1..=6usize {
                let prm = params(p, n);
                let root = prm.root_config().index_square_sum();
                for m in enumerate_admissible(&prm, &caps).unwrap() {
                    assert_eq!(m.index_sum(), prm.total_index());
                    assert!(m.index_square_sum() <= root, "p={p} m={m}");
                }
            }
        }
    }
}
