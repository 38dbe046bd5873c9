//! Exact monomial expansion of `prod_{j<k} (Z_k - Z_j)^p` and the Gaussian
//! weighted amplitudes of the Laughlin state in the orbital basis.
//!
//! Coefficients are kept as arbitrary precision integers on the canonical
//! (weakly increasing) exponent vector. For odd `p` the polynomial is
//! antisymmetric and the stored value is the coefficient of the increasing
//! representative `Z_1^{m_1} ... Z_N^{m_N}`; for even `p` it is symmetric.
//!
//! The expansion adds one variable at a time:
//!
//! ```text
//! P_k(Z_1..Z_k) = P_{k-1}(Z_1..Z_{k-1}) * prod_{j<k} (Z_k - Z_j)^p
//! ```
//!
//! so the coefficient of a canonical key `m` is a sum over the binomial
//! exponents `e_j` taken from the last factors, looked up in the `k - 1`
//! table after canonicalizing `m_j - e_j`. Every key is computed
//! independently, which makes the parallel evaluation deterministic.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::{Complex, Complex64};
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::{
    enumerate_admissible, is_admissible, renewal_points_unchecked, Caps, ModelParams,
    OccupationConfig, OrbitalConfig,
};

/// Exact integer coefficients `c_N(m)` keyed by canonical configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoefficientTable {
    pub p: u32,
    pub n: usize,
    pub entries: BTreeMap<OrbitalConfig, BigInt>,
}

impl CoefficientTable {
    pub fn get(&self, m: &OrbitalConfig) -> Option<&BigInt> {
        self.entries.get(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_fermionic(&self) -> bool {
        self.p % 2 == 1
    }

    /// Parameters with a placeholder `gamma`; coefficients do not depend on it.
    pub fn shape(&self) -> ModelParams {
        ModelParams { p: self.p, gamma: 1.0, n: self.n }
    }

    fn trivial(p: u32) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(OrbitalConfig(vec![0]), BigInt::one());
        Self { p, n: 1, entries }
    }
}

/// Expands the `p`-th power of the `N`-variable Vandermonde product.
pub fn expand(p: u32, n: usize, caps: &Caps) -> Result<CoefficientTable> {
    Ok(expand_sequence(p, n, caps)?.pop().expect("sequence is non-empty"))
}

/// Tables for every particle number `1..=n`, computed in one pass.
pub fn expand_sequence(p: u32, n: usize, caps: &Caps) -> Result<Vec<CoefficientTable>> {
    if p == 0 || n == 0 {
        return Err(Error::InvalidParams(format!("expansion needs p >= 1 and N >= 1 (p={p}, N={n})")));
    }
    caps.check(p, n)?;
    let mut out = vec![CoefficientTable::trivial(p)];
    for k in 2..=n {
        let next = extend(out.last().unwrap(), k, caps)?;
        out.push(next);
    }
    Ok(out)
}

fn signed_binomials(p: u32) -> Vec<i64> {
    let mut row = vec![1i64; p as usize + 1];
    for e in 1..=p as usize {
        row[e] = row[e - 1] * (p as i64 - e as i64 + 1) / e as i64;
    }
    row.iter().enumerate().map(|(e, &b)| if e % 2 == 0 { b } else { -b }).collect()
}

fn extend(prev: &CoefficientTable, k: usize, caps: &Caps) -> Result<CoefficientTable> {
    let p = prev.p;
    let params = ModelParams { p, gamma: 1.0, n: k };
    let keys = enumerate_admissible(&params, caps)?;
    let lookup: HashMap<&[u32], &BigInt> =
        prev.entries.iter().map(|(m, c)| (m.as_slice(), c)).collect();
    let ctx = GatherCtx {
        p,
        fermionic: prev.is_fermionic(),
        binom: signed_binomials(p),
        lookup: &lookup,
    };
    let coeffs: Vec<BigInt> = keys.par_iter().map(|m| ctx.coefficient(m.as_slice())).collect();
    let entries = keys
        .into_iter()
        .zip(coeffs)
        .filter(|(_, c)| !c.is_zero())
        .collect();
    Ok(CoefficientTable { p, n: k, entries })
}

struct GatherCtx<'a> {
    p: u32,
    fermionic: bool,
    binom: Vec<i64>,
    lookup: &'a HashMap<&'a [u32], &'a BigInt>,
}

impl GatherCtx<'_> {
    fn coefficient(&self, m: &[u32]) -> BigInt {
        let k = m.len();
        let last = m[k - 1] as i64;
        let target = self.p as i64 * (k as i64 - 1) - last;
        if target < 0 {
            return BigInt::zero();
        }
        let head = &m[..k - 1];
        let caps: Vec<i64> = head.iter().map(|&x| (x as i64).min(self.p as i64)).collect();
        let mut suffix = vec![0i64; head.len() + 1];
        for j in (0..head.len()).rev() {
            suffix[j] = suffix[j + 1] + caps[j];
        }
        let mut acc = BigInt::zero();
        let mut scratch = vec![0u32; head.len()];
        self.walk(head, &caps, &suffix, 0, target, 1, &mut scratch, &mut acc);
        acc
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(
        &self,
        head: &[u32],
        caps: &[i64],
        suffix: &[i64],
        j: usize,
        remaining: i64,
        weight: i64,
        scratch: &mut [u32],
        acc: &mut BigInt,
    ) {
        if j == head.len() {
            if remaining == 0 {
                if let Some((sign, key)) = self.canonical(scratch) {
                    if let Some(c) = self.lookup.get(key.as_slice()) {
                        *acc += *c * (weight * sign);
                    }
                }
            }
            return;
        }
        let hi = caps[j].min(remaining);
        let lo = (remaining - suffix[j + 1]).max(0);
        for e in lo..=hi {
            scratch[j] = head[j] - e as u32;
            self.walk(head, caps, suffix, j + 1, remaining - e, weight * self.binom[e as usize], scratch, acc);
        }
    }

    /// Sorts an exponent vector, returning the permutation sign (fermions) or
    /// `None` when an antisymmetric polynomial vanishes on it.
    fn canonical(&self, v: &[u32]) -> Option<(i64, Vec<u32>)> {
        let mut key = v.to_vec();
        let mut sign = 1i64;
        for i in 1..key.len() {
            let mut j = i;
            while j > 0 && key[j - 1] > key[j] {
                key.swap(j - 1, j);
                sign = -sign;
                j -= 1;
            }
        }
        if self.fermionic {
            if key.windows(2).any(|w| w[0] == w[1]) {
                return None;
            }
            Some((sign, key))
        } else {
            Some((1, key))
        }
    }
}

/// One row of an [`AmplitudeTable`].
#[derive(Debug, Clone)]
pub struct AmplitudeEntry {
    pub config: OrbitalConfig,
    pub occupation: OccupationConfig,
    pub coefficient: BigInt,
    /// `D = p^2 sum_j (j-1)^2 - sum_j m_j^2 >= 0`.
    pub deficit: u64,
    /// `a_N(m) = c_N(m) exp(-gamma^2 D / 2)`.
    pub a: f64,
    /// `A_N(n) = a_N(m) / sqrt(prod n_i!)`, the coefficient of the normalized
    /// occupation state.
    pub amplitude: f64,
}

/// Gaussian-weighted amplitudes of the Laughlin state on the orbital lattice.
#[derive(Debug, Clone)]
pub struct AmplitudeTable {
    pub params: ModelParams,
    pub entries: Vec<AmplitudeEntry>,
    index: HashMap<OccupationConfig, usize>,
}

impl AmplitudeTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sites(&self) -> usize {
        self.params.lattice_len()
    }

    pub fn amplitude_of(&self, n: &OccupationConfig) -> f64 {
        self.index.get(n).map_or(0.0, |&i| self.entries[i].amplitude)
    }

    pub fn position(&self, n: &OccupationConfig) -> Option<usize> {
        self.index.get(n).copied()
    }

    /// `C_N = ||Psi_N||^2` on the infinite cylinder.
    pub fn norm_squared(&self) -> f64 {
        self.entries.iter().map(|e| e.amplitude * e.amplitude).sum()
    }
}

/// Root exponent `p^2 sum_{j=1}^N (j-1)^2`.
pub fn root_square_sum(p: u32, n: usize) -> u64 {
    let p = p as u64;
    (0..n as u64).map(|j| p * p * j * j).sum()
}

/// Attaches the Gaussian orbital weights to a coefficient table.
pub fn amplitudes(table: &CoefficientTable, gamma: f64) -> Result<AmplitudeTable> {
    let params = ModelParams::new(table.p, gamma, table.n)?;
    let root = root_square_sum(table.p, table.n);
    let sites = params.lattice_len();
    let mut entries = Vec::with_capacity(table.len());
    let mut index = HashMap::with_capacity(table.len());
    for (m, c) in &table.entries {
        let deficit = root
            .checked_sub(m.index_square_sum())
            .ok_or_else(|| Error::CrossCheck(format!("configuration {m} exceeds the root square sum")))?;
        let occupation = m.to_occupation(sites);
        let c_f = c.to_f64().unwrap_or(f64::NAN);
        let a = c_f * (-0.5 * gamma * gamma * deficit as f64).exp();
        let amplitude = a / occupation.factorial_product().sqrt();
        index.insert(occupation.clone(), entries.len());
        entries.push(AmplitudeEntry {
            config: m.clone(),
            occupation,
            coefficient: c.clone(),
            deficit,
            a,
            amplitude,
        });
    }
    Ok(AmplitudeTable { params, entries, index })
}

/// Amplitude tables for every particle number `1..=nmax`.
pub fn amplitude_sequence(p: u32, gamma: f64, nmax: usize, caps: &Caps) -> Result<Vec<AmplitudeTable>> {
    expand_sequence(p, nmax, caps)?
        .iter()
        .map(|t| amplitudes(t, gamma))
        .collect()
}

/// Whether a configuration has no renewal points besides `0` and `pN`.
pub fn is_irreducible(m: &OrbitalConfig, p: u32) -> bool {
    renewal_points_unchecked(m.as_slice(), p).len() == 2
}

/// A factorizable key whose coefficient differs from the product of its blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductRuleViolation {
    pub config: OrbitalConfig,
    pub split: usize,
    pub coefficient: BigInt,
    pub product: BigInt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductRuleReport {
    pub p: u32,
    pub n: usize,
    /// Number of (configuration, interior renewal point) pairs checked.
    pub checked: usize,
    pub violations: Vec<ProductRuleViolation>,
}

impl ProductRuleReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `c_N(m) = c_k(m_1..m_k) c_{N-k}(m_{k+1}-pk, ..., m_N-pk)` at every
/// interior renewal point of every key of the largest table in `tables`.
pub fn verify_product_rule(tables: &[CoefficientTable]) -> Result<ProductRuleReport> {
    let target = tables
        .iter()
        .max_by_key(|t| t.n)
        .ok_or_else(|| Error::InvalidParams("no tables supplied".into()))?;
    let p = target.p;
    let find = |k: usize| -> Result<&CoefficientTable> {
        tables.iter().find(|t| t.n == k && t.p == p).ok_or(Error::MissingTable(k))
    };
    let zero = BigInt::zero();
    let mut checked = 0;
    let mut violations = Vec::new();
    for (m, c) in &target.entries {
        let points = renewal_points_unchecked(m.as_slice(), p);
        for &r in &points[1..points.len() - 1] {
            let k = (r / p) as usize;
            let left = OrbitalConfig(m.0[..k].to_vec());
            let right = OrbitalConfig(m.0[k..].iter().map(|&x| x - r).collect());
            let lc = find(k)?.get(&left).unwrap_or(&zero);
            let rc = find(target.n - k)?.get(&right).unwrap_or(&zero);
            let product = lc * rc;
            checked += 1;
            if &product != c {
                violations.push(ProductRuleViolation {
                    config: m.clone(),
                    split: k,
                    coefficient: c.clone(),
                    product,
                });
            }
        }
    }
    Ok(ProductRuleReport { p, n: target.n, checked, violations })
}

/// Compares the table against direct multiplication of `prod_{j<k}(Z_k - Z_j)^p`
/// at each point and returns the worst relative deviation.
pub fn evaluate_oracle(table: &CoefficientTable, points: &[Vec<Complex64>]) -> Result<f64> {
    let n = table.n;
    let mut worst = 0.0f64;
    for (idx, z) in points.iter().enumerate() {
        if z.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: z.len() });
        }
        let mut direct = Complex64::one();
        for k in 0..n {
            for j in 0..k {
                direct *= (z[k] - z[j]).powu(table.p);
            }
        }
        let mut sum = Complex64::zero();
        for (m, c) in &table.entries {
            let c = c.to_f64().ok_or(Error::Overflow(idx))?;
            sum += symmetrized_monomial(m, z, table.is_fermionic()) * c;
        }
        let scale = direct.norm();
        if !scale.is_finite() || !sum.norm().is_finite() || scale == 0.0 {
            return Err(Error::Overflow(idx));
        }
        worst = worst.max((sum - direct).norm() / scale);
    }
    Ok(worst)
}

/// `det[Z_j^{m_i}]` for fermions, or the sum over distinct arrangements
/// `perm[Z_j^{m_i}] / prod n_i!` for bosons.
fn symmetrized_monomial(m: &OrbitalConfig, z: &[Complex64], fermionic: bool) -> Complex64 {
    let n = z.len();
    let mat = DMatrix::from_fn(n, n, |i, j| z[j].powu(m.0[i]));
    if fermionic {
        mat.determinant()
    } else {
        let occ_norm: f64 = {
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            for &x in &m.0 {
                *counts.entry(x).or_default() += 1;
            }
            counts.values().map(|&c| (1..=c).map(f64::from).product::<f64>()).product()
        };
        permanent(&mat) / occ_norm
    }
}

/// Ryser's formula.
fn permanent(mat: &DMatrix<Complex64>) -> Complex64 {
    let n = mat.nrows();
    let mut total = Complex64::zero();
    for subset in 1u32..(1 << n) {
        let mut prod = Complex64::one();
        for i in 0..n {
            let mut row = Complex64::zero();
            for j in 0..n {
                if subset & (1 << j) != 0 {
                    row += mat[(i, j)];
                }
            }
            prod *= row;
        }
        let sign = if (n as u32 - subset.count_ones()).is_multiple_of(2) { 1.0 } else { -1.0 };
        total += prod * sign;
    }
    total
}

type GaussInt = Complex<BigInt>;

/// Exact `a / b` in the Gaussian integers when `b` divides `a`.
fn gauss_div_exact(a: &GaussInt, b: &GaussInt) -> GaussInt {
    let num = a * b.conj();
    let d = b.norm_sqr();
    Complex::new(&num.re / &d, &num.im / &d)
}

/// Fraction-free (Bareiss) determinant over the Gaussian integers.
fn gauss_determinant(mut m: Vec<Vec<GaussInt>>) -> GaussInt {
    let n = m.len();
    let mut negate = false;
    let mut prev = GaussInt::one();
    for k in 0..n.saturating_sub(1) {
        if m[k][k].is_zero() {
            match (k + 1..n).find(|&r| !m[r][k].is_zero()) {
                Some(r) => {
                    m.swap(k, r);
                    negate = !negate;
                }
                None => return GaussInt::zero(),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let v = &m[i][j] * &m[k][k] - &m[i][k] * &m[k][j];
                m[i][j] = gauss_div_exact(&v, &prev);
            }
        }
        prev = m[k][k].clone();
    }
    let det = m[n - 1][n - 1].clone();
    if negate {
        -det
    } else {
        det
    }
}

fn gauss_permanent(m: &[Vec<GaussInt>]) -> GaussInt {
    let n = m.len();
    let mut total = GaussInt::zero();
    for subset in 1u32..(1 << n) {
        let mut prod = GaussInt::one();
        for row in m {
            let mut acc = GaussInt::zero();
            for (j, x) in row.iter().enumerate() {
                if subset & (1 << j) != 0 {
                    acc += x;
                }
            }
            prod *= acc;
        }
        if (n as u32 - subset.count_ones()).is_multiple_of(2) {
            total += prod;
        } else {
            total -= prod;
        }
    }
    total
}

/// Result of [`evaluate_oracle_exact`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    /// `max |S - D| / |D|`, `S` the exact expansion sum rounded to double and
    /// `D` the product evaluated in double precision.
    pub max_relative_error: f64,
    /// The expansion sum equals the exact product at every point.
    pub exact_identity: bool,
}

/// Evaluates the expansion exactly at Gaussian-integer points and compares
/// with the product `prod_{j<k} (Z_k - Z_j)^p`. The polynomial is
/// homogeneous, so integer points lose no generality, and the exact sum
/// sidesteps the cancellation that ruins a floating-point evaluation of
/// large-coefficient expansions near coincident points.
pub fn evaluate_oracle_exact(table: &CoefficientTable, points: &[Vec<(i64, i64)>]) -> Result<OracleReport> {
    let n = table.n;
    let top = table.entries.keys().flat_map(|m| m.0.iter().copied()).max().unwrap_or(0) as usize;
    let mut worst = 0.0f64;
    let mut exact_identity = true;
    for (idx, pt) in points.iter().enumerate() {
        if pt.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: pt.len() });
        }
        let z: Vec<GaussInt> = pt.iter().map(|&(a, b)| Complex::new(BigInt::from(a), BigInt::from(b))).collect();
        let powers: Vec<Vec<GaussInt>> = z
            .iter()
            .map(|zj| {
                let mut row = vec![GaussInt::one()];
                for e in 1..=top {
                    let next = &row[e - 1] * zj;
                    row.push(next);
                }
                row
            })
            .collect();
        let mut sum = GaussInt::zero();
        for (m, c) in &table.entries {
            let mat: Vec<Vec<GaussInt>> =
                m.0.iter().map(|&e| (0..n).map(|j| powers[j][e as usize].clone()).collect()).collect();
            let term = if table.is_fermionic() {
                gauss_determinant(mat)
            } else {
                let f: BigInt = m.to_occupation(top + 1).0.iter().map(|&k| factorial(k)).product();
                let perm = gauss_permanent(&mat);
                Complex::new(&perm.re / &f, &perm.im / &f)
            };
            sum += term * c;
        }
        let mut exact = GaussInt::one();
        let mut direct = Complex64::one();
        for k in 0..n {
            for j in 0..k {
                let d = &z[k] - &z[j];
                let df = Complex64::new((pt[k].0 - pt[j].0) as f64, (pt[k].1 - pt[j].1) as f64);
                for _ in 0..table.p {
                    exact *= &d;
                }
                direct *= df.powu(table.p);
            }
        }
        exact_identity &= sum == exact;
        let sum_f = Complex64::new(
            sum.re.to_f64().ok_or(Error::Overflow(idx))?,
            sum.im.to_f64().ok_or(Error::Overflow(idx))?,
        );
        let scale = direct.norm();
        if !scale.is_finite() || scale == 0.0 {
            return Err(Error::Overflow(idx));
        }
        worst = worst.max((sum_f - direct).norm() / scale);
    }
    Ok(OracleReport { max_relative_error: worst, exact_identity })
}

fn factorial(k: u32) -> BigInt {
    (1..=k).map(BigInt::from).product()
}

const CACHE_MAGIC: &str = "LAUGHLIN-COEFF";
const CACHE_VERSION: &str = "v1";

fn cache_lines(table: &CoefficientTable) -> Vec<String> {
    let mut lines = Vec::with_capacity(table.len() + 1);
    lines.push(format!(
        "{CACHE_MAGIC} {CACHE_VERSION} p={} N={} count={}",
        table.p,
        table.n,
        table.len()
    ));
    for (m, c) in &table.entries {
        let idx: Vec<String> = m.0.iter().map(|x| x.to_string()).collect();
        lines.push(format!("{}:{}", idx.join(","), c));
    }
    lines
}

fn digest_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> String {
    let mut hasher = Sha256::new();
    for line in lines {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Serializes a table in the line-oriented cache format.
pub fn cache_string(table: &CoefficientTable) -> String {
    let lines = cache_lines(table);
    let checksum = digest_lines(lines.iter().map(String::as_str));
    let mut out = String::new();
    for line in &lines {
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(&format!("checksum={checksum}\n"));
    out
}

pub fn save_cache(table: &CoefficientTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(cache_string(table).as_bytes())?;
    Ok(())
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<CoefficientTable> {
    parse_cache(&fs::read_to_string(path)?)
}

/// Loads a cache file and checks that its header matches `(p, N)`.
pub fn load_cache_for(path: impl AsRef<Path>, p: u32, n: usize) -> Result<CoefficientTable> {
    let table = load_cache(path)?;
    if table.p != p || table.n != n {
        return Err(Error::CacheMetadata(format!(
            "header records p={} N={}, expected p={p} N={n}",
            table.p, table.n
        )));
    }
    Ok(table)
}

/// File name of the cached table for `(p, N)` inside a cache directory.
pub fn cache_file_name(p: u32, n: usize) -> String {
    format!("coeff_p{p}_n{n}.txt")
}

/// Loads `(p, N)` from `dir` when present, otherwise expands and, with a
/// directory given, writes the cache file.
pub fn load_or_expand(dir: Option<&Path>, p: u32, n: usize, caps: &Caps) -> Result<CoefficientTable> {
    let Some(dir) = dir else { return expand(p, n, caps) };
    let path = dir.join(cache_file_name(p, n));
    if path.exists() {
        return load_cache_for(&path, p, n);
    }
    let table = expand(p, n, caps)?;
    save_cache(&table, &path)?;
    Ok(table)
}

/// Like [`load_or_expand`] for every `N` in `1..=nmax`.
pub fn load_or_expand_sequence(dir: Option<&Path>, p: u32, nmax: usize, caps: &Caps) -> Result<Vec<CoefficientTable>> {
    if dir.is_none() {
        return expand_sequence(p, nmax, caps);
    }
    (1..=nmax).map(|n| load_or_expand(dir, p, n, caps)).collect()
}

fn header_field<'a>(token: Option<&'a str>, key: &str) -> Result<&'a str> {
    token
        .and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| Error::CacheMetadata(format!("header is missing field `{key}`")))
}

pub fn parse_cache(text: &str) -> Result<CoefficientTable> {
    let lines: Vec<&str> = text.lines().collect();
    let (last, body) = lines
        .split_last()
        .ok_or_else(|| Error::CacheMetadata("empty cache file".into()))?;
    let found = digest_lines(body.iter().copied());
    let expected = match last.strip_prefix("checksum=") {
        Some(sum) => sum.to_string(),
        None => "<missing>".to_string(),
    };
    if expected != found {
        return Err(Error::Checksum { expected, found });
    }
    let (header, rows) = body
        .split_first()
        .ok_or_else(|| Error::CacheMetadata("missing header".into()))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some(CACHE_MAGIC) {
        return Err(Error::CacheMetadata(format!("bad magic in header `{header}`")));
    }
    let version = tokens.next().unwrap_or("");
    if version != CACHE_VERSION {
        return Err(Error::CacheMetadata(format!("unsupported version `{version}`")));
    }
    let parse_num = |s: &str, key: &str| -> Result<u64> {
        s.parse().map_err(|_| Error::CacheMetadata(format!("field `{key}` is not a number: `{s}`")))
    };
    let p = parse_num(header_field(tokens.next(), "p")?, "p")? as u32;
    let n = parse_num(header_field(tokens.next(), "N")?, "N")? as usize;
    let count = parse_num(header_field(tokens.next(), "count")?, "count")? as usize;
    if p == 0 || n == 0 {
        return Err(Error::CacheMetadata("p and N must be positive".into()));
    }
    if rows.len() != count {
        return Err(Error::CacheMetadata(format!("header count {count} but {} entries", rows.len())));
    }
    let params = ModelParams { p, gamma: 1.0, n };
    let mut entries = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let line = i + 2;
        let bad = |reason: String| Error::MalformedEntry { line, reason };
        let (idx, value) = row.split_once(':').ok_or_else(|| bad("missing `:`".into()))?;
        let m: Vec<u32> = idx
            .split(',')
            .map(|s| s.parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("bad index list: {e}")))?;
        let m = OrbitalConfig(m);
        if m.len() != n || !m.is_canonical(p % 2 == 1) {
            return Err(bad(format!("{m} is not a canonical {n}-particle configuration")));
        }
        if !is_admissible(&m, &params)? {
            return Err(bad(format!("{m} is not admissible")));
        }
        let c: BigInt = value.parse().map_err(|e| bad(format!("bad integer: {e}")))?;
        if entries.insert(m, c).is_some() {
            return Err(bad("duplicate key".into()));
        }
    }
    Ok(CoefficientTable { p, n, entries })
}

/// Largest coefficient magnitude, useful for reporting growth.
pub fn max_abs_coefficient(table: &CoefficientTable) -> BigInt {
    table.entries.values().map(|c| c.abs()).max().unwrap_or_default()
}
