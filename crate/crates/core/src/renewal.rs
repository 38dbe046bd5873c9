//! Renewal-process description of the state.
//!
//! The norms `C_N` split over rod partitions as
//! `C_N = sum_X prod_i alpha_{n_i}`, where `alpha_n` is the total weight of
//! irreducible `n`-particle configurations. With the activity `r` solving
//! `sum_n alpha_n r^n = 1`, the numbers `p_n = alpha_n r^n` form the
//! waiting-time distribution of a renewal process on `N`, and
//! `u_N = C_N r^N` is its renewal function.

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expansion::{is_irreducible, AmplitudeTable};
use crate::lattice::RodPartition;

/// Models whose estimated tail mass exceeds this are flagged unconverged.
pub const TAIL_MASS_THRESHOLD: f64 = 0.01;

/// Relative tolerance of the direct-vs-recursive weight cross-check.
pub const ALPHA_TOLERANCE: f64 = 1e-10;

/// `C_1, ..., C_Nmax`, the squared norms on the infinite cylinder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormSequence {
    pub p: u32,
    pub gamma: f64,
    pub c: Vec<f64>,
}

impl NormSequence {
    pub fn nmax(&self) -> usize {
        self.c.len()
    }

    /// `C_n` with the convention `C_0 = 1`.
    pub fn get(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.c[n - 1]
        }
    }

    /// Smallest `C_{N+M} - C_N C_M` relative to `C_N C_M` over `N + M <= Nmax`.
    pub fn min_supermultiplicative_margin(&self) -> f64 {
        let mut worst = f64::INFINITY;
        for total in 2..=self.nmax() {
            for n in 1..total {
                let prod = self.get(n) * self.get(total - n);
                worst = worst.min((self.get(total) - prod) / prod);
            }
        }
        worst
    }

    /// `max_{N,M} C_{N+M} / (C_N C_M)` over the computed range.
    pub fn submultiplicative_constant(&self) -> f64 {
        let mut best = 1.0f64;
        for total in 2..=self.nmax() {
            for n in 1..total {
                best = best.max(self.get(total) / (self.get(n) * self.get(total - n)));
            }
        }
        best
    }
}

fn check_sequence(tables: &[AmplitudeTable]) -> Result<()> {
    if tables.is_empty() {
        return Err(Error::MissingTable(1));
    }
    let p = tables[0].params.p;
    for (i, t) in tables.iter().enumerate() {
        if t.params.n != i + 1 || t.params.p != p || t.params.gamma != tables[0].params.gamma {
            return Err(Error::MissingTable(i + 1));
        }
    }
    Ok(())
}

/// `C_N = sum_n A_N(n)^2` for tables ordered `N = 1..=Nmax`.
pub fn norms(tables: &[AmplitudeTable]) -> Result<NormSequence> {
    check_sequence(tables)?;
    Ok(NormSequence {
        p: tables[0].params.p,
        gamma: tables[0].params.gamma,
        c: tables.iter().map(AmplitudeTable::norm_squared).collect(),
    })
}

/// Arithmetic used for the recursive route to `alpha_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Precision {
    /// Double precision recursion on the floating norms.
    Double,
    /// Exact integer polynomials in `t = exp(-gamma^2)`.
    Exact,
}

/// `alpha_n` from the irreducible configurations and from the norm recursion.
#[derive(Debug, Clone, Serialize)]
pub struct IrreducibleWeights {
    pub precision: Precision,
    /// Direct route, `alpha[n - 1] = alpha_n`.
    pub alpha: Vec<f64>,
    /// `alpha_N = C_N - sum_{k<N} alpha_k C_{N-k}`.
    pub recursive: Vec<f64>,
    /// `max_n |direct - recursive| / |direct|` (zero when both vanish).
    pub relative_residual: f64,
    /// `max_n |direct - recursive| / C_n`, the natural error scale of the
    /// floating recursion.
    pub scaled_residual: f64,
    /// Exact mode only: whether the two integer polynomials coincide.
    pub exact_match: Option<bool>,
}

/// Computes `alpha_n` two ways and fails if they disagree.
///
/// In double precision the recursion cancels terms of size `C_n`, so the
/// tolerance is applied to `scaled_residual`; the exact mode compares the
/// polynomials coefficient by coefficient and then the evaluated values.
pub fn irreducible_weights(
    norms: &NormSequence,
    tables: &[AmplitudeTable],
    precision: Precision,
) -> Result<IrreducibleWeights> {
    check_sequence(tables)?;
    if norms.nmax() != tables.len() {
        return Err(Error::LengthMismatch { expected: tables.len(), got: norms.nmax() });
    }
    let p = norms.p;
    let alpha: Vec<f64> = tables
        .iter()
        .map(|t| {
            t.entries
                .iter()
                .filter(|e| is_irreducible(&e.config, p))
                .map(|e| e.amplitude * e.amplitude)
                .sum()
        })
        .collect();

    let (recursive, exact_match) = match precision {
        Precision::Double => (alpha_recursion(&norms.c), None),
        Precision::Exact => {
            let exact = ExactNorms::new(tables);
            let t = (-norms.gamma * norms.gamma).exp();
            let rec = exact.alpha_recursive();
            let matched = rec == exact.alpha_direct();
            (rec.iter().enumerate().map(|(i, poly)| poly.eval(t, i + 1)).collect(), Some(matched))
        }
    };

    let mut relative_residual = 0.0f64;
    let mut scaled_residual = 0.0f64;
    for (n, (&d, &r)) in alpha.iter().zip(&recursive).enumerate() {
        let diff = (d - r).abs();
        if diff > 0.0 {
            relative_residual = relative_residual.max(diff / d.abs().max(f64::MIN_POSITIVE));
        }
        scaled_residual = scaled_residual.max(diff / norms.get(n + 1));
    }
    let weights = IrreducibleWeights {
        precision,
        alpha,
        recursive,
        relative_residual,
        scaled_residual,
        exact_match,
    };
    let failed = match precision {
        Precision::Double => weights.scaled_residual > ALPHA_TOLERANCE,
        Precision::Exact => {
            weights.exact_match != Some(true) || weights.relative_residual > ALPHA_TOLERANCE
        }
    };
    if failed {
        return Err(Error::CrossCheck(format!(
            "irreducible weights disagree: relative {:.3e}, scaled {:.3e}, exact {:?}",
            weights.relative_residual, weights.scaled_residual, weights.exact_match
        )));
    }
    Ok(weights)
}

/// `alpha_N = C_N - sum_{k=1}^{N-1} alpha_k C_{N-k}`.
pub fn alpha_recursion(c: &[f64]) -> Vec<f64> {
    let mut alpha: Vec<f64> = Vec::with_capacity(c.len());
    for n in 1..=c.len() {
        let mut a = c[n - 1];
        for k in 1..n {
            a -= alpha[k - 1] * c[n - k - 1];
        }
        alpha.push(a);
    }
    alpha
}

/// Inverse of [`alpha_recursion`]: `C_N = sum_{k=1}^{N} alpha_k C_{N-k}`.
pub fn norms_from_alpha(alpha: &[f64]) -> Vec<f64> {
    let mut c: Vec<f64> = Vec::with_capacity(alpha.len());
    for n in 1..=alpha.len() {
        let mut s = alpha[n - 1];
        for k in 1..n {
            s += alpha[k - 1] * c[n - k - 1];
        }
        c.push(s);
    }
    c
}

/// Integer polynomial in `s = t^2 = exp(-2 gamma^2)`, dense by degree.
///
/// Squared amplitudes are `c^2 / prod n_i! * t^D` with `D` always even, so
/// `N! A^2` is an integer multiple of a power of `s`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IntPoly(pub Vec<BigInt>);

impl IntPoly {
    fn add_term(&mut self, degree: usize, coeff: BigInt) {
        if self.0.len() <= degree {
            self.0.resize(degree + 1, BigInt::zero());
        }
        self.0[degree] += coeff;
    }

    fn trim(&mut self) {
        while self.0.last().is_some_and(Zero::is_zero) {
            self.0.pop();
        }
    }

    fn mul(&self, other: &Self) -> Self {
        if self.0.is_empty() || other.0.is_empty() {
            return Self::default();
        }
        let mut out = vec![BigInt::zero(); self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.0.iter().enumerate() {
                if !b.is_zero() {
                    out[i + j] += a * b;
                }
            }
        }
        let mut p = Self(out);
        p.trim();
        p
    }

    fn scaled_sub(&mut self, other: &Self, scale: &BigInt) {
        for (i, c) in other.0.iter().enumerate() {
            self.add_term(i, -(c * scale));
        }
        self.trim();
    }

    pub fn has_nonnegative_coefficients(&self) -> bool {
        self.0.iter().all(|c| c.sign() != num_bigint::Sign::Minus)
    }

    /// Evaluates `P(t^2) / n!`.
    pub fn eval(&self, t: f64, n: usize) -> f64 {
        let s = t * t;
        let mut acc = 0.0f64;
        for c in self.0.iter().rev() {
            acc = acc * s + c.to_f64().unwrap_or(f64::INFINITY);
        }
        acc / factorial_f64(n)
    }
}

fn factorial_f64(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::from(1), |acc, k| acc * k)
}

fn binomial(n: usize, k: usize) -> BigInt {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Exact `N! C_N` and `N! alpha_N` as integer polynomials in `exp(-2 gamma^2)`.
#[derive(Debug, Clone)]
pub struct ExactNorms {
    pub p: u32,
    /// `scaled_norms[N - 1] = N! C_N`.
    pub scaled_norms: Vec<IntPoly>,
    scaled_alpha_direct: Vec<IntPoly>,
}

impl ExactNorms {
    pub fn new(tables: &[AmplitudeTable]) -> Self {
        let p = tables[0].params.p;
        let mut scaled_norms = Vec::with_capacity(tables.len());
        let mut scaled_alpha_direct = Vec::with_capacity(tables.len());
        for t in tables {
            let nfact = factorial(t.params.n);
            let mut norm = IntPoly::default();
            let mut alpha = IntPoly::default();
            for e in &t.entries {
                debug_assert!(e.deficit % 2 == 0);
                let occ: BigInt = e.occupation.0.iter().map(|&k| factorial(k as usize)).product();
                let w = &e.coefficient * &e.coefficient * &nfact / occ;
                let degree = (e.deficit / 2) as usize;
                if is_irreducible(&e.config, p) {
                    alpha.add_term(degree, w.clone());
                }
                norm.add_term(degree, w);
            }
            norm.trim();
            alpha.trim();
            scaled_norms.push(norm);
            scaled_alpha_direct.push(alpha);
        }
        Self { p, scaled_norms, scaled_alpha_direct }
    }

    pub fn alpha_direct(&self) -> &[IntPoly] {
        &self.scaled_alpha_direct
    }

    /// `N! alpha_N = N! C_N - sum_k binom(N, k) (k! alpha_k) ((N-k)! C_{N-k})`.
    pub fn alpha_recursive(&self) -> Vec<IntPoly> {
        let mut out: Vec<IntPoly> = Vec::with_capacity(self.scaled_norms.len());
        for n in 1..=self.scaled_norms.len() {
            let mut a = self.scaled_norms[n - 1].clone();
            for k in 1..n {
                let prod = out[k - 1].mul(&self.scaled_norms[n - k - 1]);
                a.scaled_sub(&prod, &binomial(n, k));
            }
            out.push(a);
        }
        out
    }

    /// Whether `C_{N+M} - C_N C_M` has nonnegative coefficients for all
    /// `N + M <= Nmax`.
    pub fn supermultiplicative(&self) -> bool {
        let nmax = self.scaled_norms.len();
        for total in 2..=nmax {
            for n in 1..total {
                let mut diff = self.scaled_norms[total - 1].clone();
                let prod = self.scaled_norms[n - 1].mul(&self.scaled_norms[total - n - 1]);
                diff.scaled_sub(&prod, &binomial(total, n));
                if !diff.has_nonnegative_coefficients() {
                    return false;
                }
            }
        }
        true
    }
}

/// Activity and mean rod length of a weight sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Activity {
    pub r: f64,
    pub mu: f64,
}

/// Solves `sum_n alpha_n r^n = 1` on `(0, 1]` by bisection.
pub fn solve_activity(alpha: &[f64]) -> Result<Activity> {
    if alpha.first().is_none_or(|&a| a.is_nan() || a <= 0.0) {
        return Err(Error::InvalidParams("alpha_1 must be positive".into()));
    }
    if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::InvalidParams("weights must be finite and nonnegative".into()));
    }
    let f = |r: f64| alpha.iter().rev().fold(0.0, |acc, &a| (acc + a) * r) - 1.0;
    let total = f(1.0);
    if total < 0.0 {
        return Err(Error::NoRoot(format!(
            "sum of truncated weights is {:.6} < 1; the tail dominates",
            total + 1.0
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = if total == 0.0 { 1.0 } else { hi };
    let mu = alpha
        .iter()
        .enumerate()
        .map(|(i, &a)| (i + 1) as f64 * a * r.powi(i as i32 + 1))
        .sum();
    Ok(Activity { r, mu })
}

/// The renewal process extracted from `alpha_1, ..., alpha_Nmax`.
#[derive(Debug, Clone, Serialize)]
pub struct RenewalModel {
    pub p: u32,
    pub gamma: f64,
    pub alpha: Vec<f64>,
    /// `norms[N - 1] = C_N`.
    pub norms: Vec<f64>,
    pub r: f64,
    pub mu: f64,
    /// `pn[n - 1] = alpha_n r^n`.
    pub pn: Vec<f64>,
    /// `un[N] = C_N r^N` for `N = 0..=Nmax`.
    pub un: Vec<f64>,
    /// Root of the sequence truncated at `Nmax - 1`, when `Nmax > 1`.
    pub r_previous: Option<f64>,
    /// Estimated mass of `p_n` at and beyond `n = Nmax`.
    pub tail_mass: f64,
    pub c_sub: f64,
}

impl RenewalModel {
    /// Builds the model from amplitude tables `N = 1..=Nmax`, cross-checking
    /// the irreducible weights at the requested precision.
    pub fn from_tables(tables: &[AmplitudeTable], precision: Precision) -> Result<(Self, IrreducibleWeights)> {
        let c = norms(tables)?;
        let weights = irreducible_weights(&c, tables, precision)?;
        let model = Self::assemble(c.p, c.gamma, weights.alpha.clone(), c.c.clone())?;
        Ok((model, weights))
    }

    /// Builds the model from weights alone; norms follow from the recursion.
    pub fn from_alpha(p: u32, gamma: f64, alpha: Vec<f64>) -> Result<Self> {
        let c = norms_from_alpha(&alpha);
        Self::assemble(p, gamma, alpha, c)
    }

    fn assemble(p: u32, gamma: f64, alpha: Vec<f64>, norms: Vec<f64>) -> Result<Self> {
        let Activity { r, mu } = solve_activity(&alpha)?;
        let pn: Vec<f64> = alpha.iter().enumerate().map(|(i, &a)| a * r.powi(i as i32 + 1)).collect();
        let un: Vec<f64> = std::iter::once(1.0)
            .chain(norms.iter().enumerate().map(|(i, &c)| c * r.powi(i as i32 + 1)))
            .collect();
        let r_previous = if alpha.len() > 1 {
            solve_activity(&alpha[..alpha.len() - 1]).ok().map(|a| a.r)
        } else {
            None
        };
        let tail_mass = tail_mass_estimate(&pn);
        let seq = NormSequence { p, gamma, c: norms.clone() };
        let c_sub = seq.submultiplicative_constant();
        Ok(Self { p, gamma, alpha, norms, r, mu, pn, un, r_previous, tail_mass, c_sub })
    }

    pub fn nmax(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_converged(&self) -> bool {
        self.tail_mass <= TAIL_MASS_THRESHOLD
    }

    /// Refuses unconverged models unless `allow` is set.
    pub fn ensure_converged(&self, allow: bool) -> Result<()> {
        if !allow && !self.is_converged() {
            return Err(Error::Unconverged { tail_mass: self.tail_mass, threshold: TAIL_MASS_THRESHOLD });
        }
        Ok(())
    }

    /// `p_n`, zero outside `1..=Nmax`.
    pub fn p_n(&self, n: usize) -> f64 {
        if n == 0 || n > self.nmax() {
            0.0
        } else {
            self.pn[n - 1]
        }
    }

    /// Renewal function for any gap; beyond `Nmax` it continues by the
    /// convolution recursion of the truncated distribution.
    pub fn u(&self, n: usize) -> f64 {
        if n < self.un.len() {
            self.un[n]
        } else {
            self.renewal_values(n)[n]
        }
    }

    /// `u_0, ..., u_len` with the convolution continuation past `Nmax`.
    pub fn renewal_values(&self, len: usize) -> Vec<f64> {
        let mut u: Vec<f64> = self.un.iter().take(len + 1).copied().collect();
        while u.len() <= len {
            let m = u.len();
            let next = (1..=self.nmax().min(m)).map(|k| self.pn[k - 1] * u[m - k]).sum();
            u.push(next);
        }
        u
    }

    /// Estimated fraction of lattice covered by rods of length `>= Nmax`,
    /// `mu^-1 sum_{n >= Nmax} n p_n` with the geometric tail of
    /// [`tail_mass`](Self::tail_mass).
    pub fn covered_tail_fraction(&self) -> f64 {
        let n = self.nmax();
        let last = self.pn[n - 1];
        if last == 0.0 {
            return 0.0;
        }
        if n < 2 || self.pn[n - 2] <= 0.0 || last >= self.pn[n - 2] {
            return 1.0;
        }
        let q = last / self.pn[n - 2];
        let s = last * (n as f64 / (1.0 - q) + q / ((1.0 - q) * (1.0 - q)));
        (s / self.mu).min(1.0)
    }

    /// `p_N(X) = prod alpha_{n_i} / C_N`.
    pub fn partition_probability(&self, x: &RodPartition, n: usize) -> Result<f64> {
        if x.particles() != n {
            return Err(Error::LengthMismatch { expected: n, got: x.particles() });
        }
        if n > self.nmax() {
            return Err(Error::MissingTable(n));
        }
        let prod: f64 = x.lengths.iter().map(|&k| self.alpha[k - 1]).product();
        Ok(prod / self.norms[n - 1])
    }

    /// Same probability through the renewal process, `prod p_{n_i} / u_N`.
    pub fn conditioned_probability(&self, x: &RodPartition) -> Result<f64> {
        let n = x.particles();
        if n > self.nmax() {
            return Err(Error::MissingTable(n));
        }
        let prod: f64 = x.lengths.iter().map(|&k| self.pn[k - 1]).product();
        Ok(prod / self.un[n])
    }

    fn rod_product(&self, lengths: &[usize]) -> Result<f64> {
        if lengths.contains(&0) {
            return Err(Error::MalformedObservable("rod lengths must be positive".into()));
        }
        if let Some(&n) = lengths.iter().find(|&&n| n > self.nmax()) {
            return Err(Error::MalformedObservable(format!("rod length {n} exceeds Nmax = {}", self.nmax())));
        }
        Ok(lengths.iter().map(|&n| self.pn[n - 1]).product())
    }

    /// Probability of an event under the shift-invariant renewal measure.
    pub fn stationary_event_probability(&self, event: &StationaryEvent) -> Result<f64> {
        match event {
            StationaryEvent::RenewalAt => Ok(1.0 / self.mu),
            StationaryEvent::PinnedRods { lengths } => {
                if lengths.is_empty() {
                    return Err(Error::MalformedObservable("no rods given".into()));
                }
                Ok(self.rod_product(lengths)? / self.mu)
            }
            StationaryEvent::TwoWindows { left, gap, right } => {
                if left.is_empty() || right.is_empty() {
                    return Err(Error::MalformedObservable("both windows need rods".into()));
                }
                Ok(self.rod_product(left)? * self.u(*gap) * self.rod_product(right)? / self.mu)
            }
            StationaryEvent::NoRenewalIn { window } => {
                if *window == 0 {
                    return Err(Error::MalformedObservable("empty window".into()));
                }
                let d = *window;
                let s: f64 = (d + 1..=self.nmax()).map(|n| (n - d) as f64 * self.pn[n - 1]).sum();
                Ok(s / self.mu)
            }
        }
    }

    /// Probability that an `N`-particle system has no renewal point at
    /// `p(start + 1), ..., p(start + d)`: a single rod covers the window.
    pub fn finite_no_renewal_probability(&self, n: usize, start: usize, d: usize) -> Result<f64> {
        if n > self.nmax() || start + d >= n || d == 0 {
            return Err(Error::MalformedObservable(format!(
                "window {start}+1..={} does not fit inside N = {n}",
                start + d
            )));
        }
        let mut total = 0.0;
        for s in 0..=start {
            for len in (start + d + 1 - s)..=(n - s) {
                total += self.un[s] * self.pn[len - 1] * self.un[n - s - len];
            }
        }
        Ok(total / self.un[n])
    }

    /// Bound `c_sub sum_{k>=d} k p_k` on the long-interval probability.
    pub fn long_interval_bound(&self, d: usize) -> f64 {
        let s: f64 = (d.max(1)..=self.nmax()).map(|k| k as f64 * self.pn[k - 1]).sum();
        self.c_sub * s
    }
}

/// Mass of `p_n` at `n >= Nmax`, extrapolated geometrically from the last two
/// terms; one when the tail does not decay.
fn tail_mass_estimate(pn: &[f64]) -> f64 {
    let n = pn.len();
    let last = pn[n - 1];
    if last == 0.0 {
        return 0.0;
    }
    if n < 2 || pn[n - 2] <= 0.0 {
        return 1.0;
    }
    let q = last / pn[n - 2];
    if q >= 1.0 {
        return 1.0;
    }
    (last / (1.0 - q)).min(1.0)
}

/// Events for the stationary renewal measure (positions in units of `p`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StationaryEvent {
    /// A renewal at 0.
    RenewalAt,
    /// Renewal at 0 followed by rods of the given lengths.
    PinnedRods { lengths: Vec<usize> },
    /// Rods `left` from 0, then after `gap` particles' worth of lattice a
    /// second block of rods `right`.
    TwoWindows { left: Vec<usize>, gap: usize, right: Vec<usize> },
    /// No renewal at `1, ..., window`.
    NoRenewalIn { window: usize },
}

/// Renewal function computed two ways with convergence diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct RenewalFunction {
    /// `C_N r^N`.
    pub direct: Vec<f64>,
    /// `u_N = sum_k p_k u_{N-k}`.
    pub convolution: Vec<f64>,
    pub max_deviation: f64,
    /// `sup_{d <= k <= Nmax} |u_k - 1/mu|` indexed by `d`.
    pub sup_deviation: Vec<f64>,
}

impl RenewalFunction {
    /// Whether `|u_N - 1/mu|` has a decreasing trend: the running supremum is
    /// non-increasing and its last value is below its first.
    pub fn decreasing_trend(&self) -> bool {
        let s = &self.sup_deviation;
        s.len() >= 2 && s.windows(2).all(|w| w[1] <= w[0]) && s[s.len() - 1] < s[0]
    }
}

pub fn renewal_function(model: &RenewalModel) -> RenewalFunction {
    let direct = model.un.clone();
    let mut convolution = vec![1.0];
    for n in 1..=model.nmax() {
        let next = (1..=n).map(|k| model.pn[k - 1] * convolution[n - k]).sum();
        convolution.push(next);
    }
    let max_deviation = direct
        .iter()
        .zip(&convolution)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let limit = 1.0 / model.mu;
    let dev: Vec<f64> = direct.iter().map(|u| (u - limit).abs()).collect();
    let mut sup_deviation = vec![0.0; dev.len()];
    let mut running = 0.0f64;
    for d in (0..dev.len()).rev() {
        running = running.max(dev[d]);
        sup_deviation[d] = running;
    }
    RenewalFunction { direct, convolution, max_deviation, sup_deviation }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::amplitude_sequence;
    use crate::lattice::{enumerate_partitions, partition_of, Caps, ModelParams};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn small_norms() {
        let caps = Caps::default();
        for gamma in [0.5, 1.0, 1.5] {
            let t = amplitude_sequence(3, gamma, 2, &caps).unwrap();
            let c = norms(&t).unwrap();
            assert_eq!(c.get(1), 1.0);
            assert!(close(c.get(2), 1.0 + 9.0 * (-4.0 * gamma * gamma).exp(), 1e-14));
            let t = amplitude_sequence(2, gamma, 2, &caps).unwrap();
            let c = norms(&t).unwrap();
            assert!(close(c.get(2), 1.0 + 2.0 * (-2.0 * gamma * gamma).exp(), 1e-14));
        }
    }

    #[test]
    fn weights_examples() {
        let caps = Caps::default();
        let gamma: f64 = 0.9;
        let t = amplitude_sequence(3, gamma, 4, &caps).unwrap();
        let c = norms(&t).unwrap();
        for precision in [Precision::Double, Precision::Exact] {
            let w = irreducible_weights(&c, &t, precision).unwrap();
            assert_eq!(w.alpha[0], 1.0);
            assert!(close(w.alpha[1], 9.0 * (-4.0 * gamma * gamma).exp(), 1e-14));
        }
        let t = amplitude_sequence(1, gamma, 6, &caps).unwrap();
        let c = norms(&t).unwrap();
        let w = irreducible_weights(&c, &t, Precision::Exact).unwrap();
        assert_eq!(w.alpha, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn exact_polynomials_match_for_bosons_and_fermions() {
        let caps = Caps::default();
        for p in 2..=4u32 {
            let nmax = if p == 4 { 4 } else { 6 };
            let t = amplitude_sequence(p, 0.7, nmax, &caps).unwrap();
            let exact = ExactNorms::new(&t);
            assert_eq!(exact.alpha_recursive(), exact.alpha_direct(), "p={p}");
            assert!(exact.supermultiplicative());
            for a in exact.alpha_direct() {
                assert!(a.has_nonnegative_coefficients());
            }
            // evaluated exact norms reproduce the floating sums
            let c = norms(&t).unwrap();
            let tt = (-0.49f64).exp();
            for (n, poly) in exact.scaled_norms.iter().enumerate() {
                assert!(close(poly.eval(tt, n + 1), c.get(n + 1), 1e-13));
            }
        }
    }

    #[test]
    fn corrupted_table_fails_cross_check() {
        let caps = Caps::default();
        let mut t = amplitude_sequence(3, 1.0, 3, &caps).unwrap();
        let e = t[2].entries.iter_mut().find(|e| !is_irreducible(&e.config, 3)).unwrap();
        e.amplitude *= 1.5;
        let c = norms(&t).unwrap();
        assert!(matches!(irreducible_weights(&c, &t, Precision::Double), Err(Error::CrossCheck(_))));
    }

    #[test]
    fn activity_examples() {
        let a = solve_activity(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(a.r, 1.0);
        assert_eq!(a.mu, 1.0);
        let a = solve_activity(&[1.0, 1.0]).unwrap();
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        assert!(close(a.r, golden, 1e-12));
        assert!(close(a.mu, golden + 2.0 * golden * golden, 1e-12));
        assert!(close(a.mu, 1.381966011250105, 1e-12));
        assert!(matches!(solve_activity(&[0.5]), Err(Error::NoRoot(_))));
        assert!(solve_activity(&[]).is_err());
    }

    #[test]
    fn toy_renewal_function() {
        let m = RenewalModel::from_alpha(1, 1.0, vec![1.0, 1.0]).unwrap();
        let r = m.r;
        assert!(close(m.un[1], r, 1e-12));
        assert!(close(m.un[2], 2.0 * r * r, 1e-12));
        assert!(close(m.un[2], 0.7639320225002103, 1e-12));
        let f = renewal_function(&m);
        assert!(f.max_deviation < 1e-15);
        assert!(m.u(40) - 1.0 / m.mu < 1e-12);
    }

    #[test]
    fn filled_level_model() {
        let caps = Caps::default();
        let t = amplitude_sequence(1, 1.0, 8, &caps).unwrap();
        let (m, _) = RenewalModel::from_tables(&t, Precision::Exact).unwrap();
        assert_eq!(m.r, 1.0);
        assert_eq!(m.mu, 1.0);
        assert!(m.un.iter().all(|&u| u == 1.0));
        assert_eq!(m.tail_mass, 0.0);
        assert!(m.is_converged());
    }

    #[test]
    fn laughlin_model_properties() {
        let caps = Caps::default();
        let t = amplitude_sequence(3, 1.0, 8, &caps).unwrap();
        let (m, w) = RenewalModel::from_tables(&t, Precision::Exact).unwrap();
        assert_eq!(w.exact_match, Some(true));
        assert!(m.pn.iter().all(|&p| p >= 0.0));
        assert!(close(m.pn.iter().sum::<f64>(), 1.0, 1e-12));
        assert!(m.mu >= 1.0);
        let f = renewal_function(&m);
        assert!(f.max_deviation < 1e-10);
        assert!(m.c_sub >= 1.0);
        let c = norms(&t).unwrap();
        assert!(c.min_supermultiplicative_margin() >= -1e-14);
        assert!(m.r_previous.unwrap() >= m.r);
    }

    #[test]
    fn tail_mass_decreases_with_nmax() {
        let caps = Caps::default();
        let t = amplitude_sequence(3, 1.0, 8, &caps).unwrap();
        let mut last = f64::INFINITY;
        for nmax in 3..=8 {
            let (m, _) = RenewalModel::from_tables(&t[..nmax], Precision::Double).unwrap();
            assert!(m.tail_mass >= 0.0);
            assert!(m.tail_mass <= last, "Nmax={nmax}");
            last = m.tail_mass;
        }
    }

    #[test]
    fn partition_probabilities() {
        let caps = Caps::default();
        let gamma: f64 = 1.2;
        let t = amplitude_sequence(3, gamma, 6, &caps).unwrap();
        let (m, _) = RenewalModel::from_tables(&t, Precision::Double).unwrap();
        let q = 9.0 * (-4.0 * gamma * gamma).exp();
        let v = RodPartition::new(vec![1, 1]).unwrap();
        let w = RodPartition::new(vec![2]).unwrap();
        assert!(close(m.partition_probability(&v, 2).unwrap(), 1.0 / (1.0 + q), 1e-12));
        assert!(close(m.partition_probability(&w, 2).unwrap(), q / (1.0 + q), 1e-12));
        for n in 1..=6 {
            let parts = enumerate_partitions(n, &caps).unwrap();
            let total: f64 = parts.iter().map(|x| m.partition_probability(x, n).unwrap()).sum();
            assert!(close(total, 1.0, 1e-12));
            for x in &parts {
                let a = m.partition_probability(x, n).unwrap();
                let b = m.conditioned_probability(x).unwrap();
                assert!(close(a, b, 1e-10));
            }
        }
        assert!(m.partition_probability(&v, 3).is_err());
    }

    #[test]
    fn partition_probability_matches_config_enumeration() {
        // sum of A^2 over configurations with partition X, divided by C_N
        let caps = Caps::default();
        let t = amplitude_sequence(3, 0.8, 5, &caps).unwrap();
        let (m, _) = RenewalModel::from_tables(&t, Precision::Double).unwrap();
        let table = &t[4];
        let params = ModelParams::new(3, 0.8, 5).unwrap();
        let c = table.norm_squared();
        for x in enumerate_partitions(5, &caps).unwrap() {
            let direct: f64 = table
                .entries
                .iter()
                .filter(|e| partition_of(&e.config, &params).unwrap() == x)
                .map(|e| e.amplitude * e.amplitude)
                .sum::<f64>()
                / c;
            assert!(close(m.partition_probability(&x, 5).unwrap(), direct, 1e-10));
        }
    }

    #[test]
    fn stationary_events() {
        let m = RenewalModel::from_alpha(3, 1.0, vec![1.0, 0.3, 0.05, 0.004]).unwrap();
        assert!(close(m.stationary_event_probability(&StationaryEvent::RenewalAt).unwrap(), 1.0 / m.mu, 1e-15));
        let one = StationaryEvent::PinnedRods { lengths: vec![1] };
        assert!(close(m.stationary_event_probability(&one).unwrap(), m.pn[0] / m.mu, 1e-15));
        let two = StationaryEvent::TwoWindows { left: vec![1], gap: 0, right: vec![2] };
        let pinned = StationaryEvent::PinnedRods { lengths: vec![1, 2] };
        assert!(close(
            m.stationary_event_probability(&two).unwrap(),
            m.stationary_event_probability(&pinned).unwrap(),
            1e-14
        ));
        let bad = StationaryEvent::PinnedRods { lengths: vec![9] };
        assert!(matches!(m.stationary_event_probability(&bad), Err(Error::MalformedObservable(_))));
        for d in 1..4 {
            let p = m.stationary_event_probability(&StationaryEvent::NoRenewalIn { window: d }).unwrap();
            assert!(p <= m.long_interval_bound(d));
        }
    }

    #[test]
    fn finite_no_renewal_matches_enumeration() {
        let caps = Caps::default();
        let n = 6;
        let t = amplitude_sequence(3, 0.7, n, &caps).unwrap();
        let (m, _) = RenewalModel::from_tables(&t, Precision::Double).unwrap();
        let table = &t[n - 1];
        let c = table.norm_squared();
        for (start, d) in [(0, 1), (1, 2), (2, 3), (0, 5)] {
            let direct: f64 = table
                .entries
                .iter()
                .filter(|e| {
                    let pts = crate::lattice::renewal_points_unchecked(e.config.as_slice(), 3);
                    (start + 1..=start + d).all(|k| !pts.contains(&(3 * k as u32)))
                })
                .map(|e| e.amplitude * e.amplitude)
                .sum::<f64>()
                / c;
            let via = m.finite_no_renewal_probability(n, start, d).unwrap();
            assert!(close(via, direct, 1e-10), "start={start} d={d}");
            assert!(via <= m.long_interval_bound(d));
        }
    }

    #[test]
    fn unconverged_guard() {
        let m = RenewalModel::from_alpha(3, 0.2, vec![1.0, 1.0]).unwrap();
        assert!(!m.is_converged());
        assert!(matches!(m.ensure_converged(false), Err(Error::Unconverged { .. })));
        assert!(m.ensure_converged(true).is_ok());
    }
}
