//! Metropolis sampling of `|Psi_N(z_1, ..., z_N)|^2` on the cylinder.
//!
//! With `z = x + iy`, `y` periodic with period `2 pi R`, `R = 1/gamma`:
//!
//! `ln |Psi|^2 = 2p sum_{j<k} [gamma max(x_j, x_k) + ln |1 - e^{gamma (x_min - x_max) + i gamma dy}|] - sum_k x_k^2`
//!
//! The pair logarithm is evaluated as
//! `0.5 ln(expm1(a)^2 + 4 e^a sin^2(b/2))`, which neither overflows nor loses
//! precision for close particles.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::correlations::{occupation_finite, orbital_weight};
use crate::error::{Error, Result};
use crate::expansion::AmplitudeTable;
use crate::lattice::ModelParams;

/// Acceptance rates outside this band are flagged.
pub const ACCEPTANCE_BAND: (f64, f64) = (0.01, 0.99);

/// Pilot tuning target band.
pub const TUNING_BAND: (f64, f64) = (0.30, 0.60);

/// Minimum number of batches per chain for batch-means error bars.
pub const MIN_BATCHES: usize = 50;

fn pair_log(p: u32, gamma: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lo, hi) = if a.0 <= b.0 { (a.0, b.0) } else { (b.0, a.0) };
    let s = gamma * (lo - hi);
    let t = gamma * (a.1 - b.1);
    let em1 = s.exp_m1();
    let sin = (0.5 * t).sin();
    let arg = em1 * em1 + 4.0 * s.exp() * sin * sin;
    if arg == 0.0 {
        return f64::NEG_INFINITY;
    }
    2.0 * p as f64 * (gamma * hi + 0.5 * arg.ln())
}

/// `ln |Psi_N|^2` up to an additive constant; `-inf` at coincident points.
pub fn log_weight(coords: &[(f64, f64)], p: u32, gamma: f64) -> f64 {
    let mut w = -coords.iter().map(|c| c.0 * c.0).sum::<f64>();
    for j in 0..coords.len() {
        for k in j + 1..coords.len() {
            w += pair_log(p, gamma, coords[j], coords[k]);
        }
    }
    w
}

/// Same weight written with sorted abscissae,
/// `-sum_k (x_(k) - (k-1) p gamma)^2 + pair logarithms`; differs from
/// [`log_weight`] by `sum_k ((k-1) p gamma)^2`.
pub fn log_weight_sorted_form(coords: &[(f64, f64)], p: u32, gamma: f64) -> f64 {
    let mut xs: Vec<f64> = coords.iter().map(|c| c.0).collect();
    xs.sort_by(f64::total_cmp);
    let mut w = -xs
        .iter()
        .enumerate()
        .map(|(k, x)| (x - k as f64 * p as f64 * gamma).powi(2))
        .sum::<f64>();
    for j in 0..coords.len() {
        for k in j + 1..coords.len() {
            let (a, b) = (coords[j], coords[k]);
            let (lo, hi) = if a.0 <= b.0 { (a.0, b.0) } else { (b.0, a.0) };
            let s = gamma * (lo - hi);
            let sin = (0.5 * gamma * (a.1 - b.1)).sin();
            w += p as f64 * (s.exp_m1().powi(2) + 4.0 * s.exp() * sin * sin).ln();
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlasmaState {
    pub coords: Vec<(f64, f64)>,
    pub log_weight: f64,
}

impl PlasmaState {
    pub fn new(mut coords: Vec<(f64, f64)>, p: u32, gamma: f64) -> Self {
        let circ = 2.0 * PI / gamma;
        for c in &mut coords {
            c.1 = c.1.rem_euclid(circ);
        }
        let log_weight = log_weight(&coords, p, gamma);
        Self { coords, log_weight }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct McConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub seed: u64,
    pub chains: usize,
    /// Adjust the proposal widths by pilot runs before burn-in.
    pub tune: bool,
    pub batches: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            sweeps: 20_000,
            burn_in: 2_000,
            thin: 1,
            sigma_x: 0.5,
            sigma_y: 0.5,
            seed: 1,
            chains: 4,
            tune: true,
            batches: MIN_BATCHES,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.sweeps == 0 || self.thin == 0 || self.chains == 0 {
            return bad("sweeps, thinning and chain count must be positive");
        }
        if !(self.sigma_x >= 0.0 && self.sigma_y >= 0.0) {
            return bad("proposal widths must be non-negative");
        }
        if self.batches < MIN_BATCHES {
            return bad("at least 50 batches are needed");
        }
        if self.sweeps / self.thin < self.batches {
            return bad("fewer recorded samples than batches");
        }
        Ok(())
    }
}

/// Quantities accumulated on every recorded sample.
#[derive(Debug, Clone, Serialize)]
pub enum McObservable {
    /// Particles per unit length in `x` bins (integrated over `y`).
    Density { edges: Vec<f64> },
    /// Particle counts in equal `y` bins over the circumference.
    YMarginal { bins: usize },
    /// Particle counts in `a <= x < b` intervals.
    Annuli { intervals: Vec<(f64, f64)> },
    /// Histogram of `K(xbar)` for each `xbar = (k - 1/2) p gamma`; the values
    /// for one `xbar` are indicators of `K = -k, ..., N - k`.
    Excess { xbars: Vec<f64> },
    /// `sum_j (cos, sin)(2 pi x_j / period)` over particles with `lo <= x < hi`.
    Fourier { period: f64, lo: f64, hi: f64 },
    /// `sum_j x_j` and `sum_j x_j^2`.
    XMoments,
}

impl McObservable {
    fn width(&self, n: usize) -> usize {
        match self {
            McObservable::Density { edges } => edges.len().saturating_sub(1),
            McObservable::YMarginal { bins } => *bins,
            McObservable::Annuli { intervals } => intervals.len(),
            McObservable::Excess { xbars } => xbars.len() * (n + 1),
            McObservable::Fourier { .. } | McObservable::XMoments => 2,
        }
    }

    fn validate(&self, params: &ModelParams) -> Result<()> {
        match self {
            McObservable::Density { edges } if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) => {
                Err(Error::InvalidParams("density bins need increasing edges".into()))
            }
            McObservable::YMarginal { bins: 0 } => Err(Error::InvalidParams("zero y bins".into())),
            McObservable::Excess { xbars } => xbars.iter().try_for_each(|&x| excess_index(x, params).map(|_| ())),
            McObservable::Fourier { period, lo, hi } if !(*period > 0.0 && hi > lo) => {
                Err(Error::InvalidParams("bad Fourier window".into()))
            }
            _ => Ok(()),
        }
    }

    fn accumulate(&self, coords: &[(f64, f64)], params: &ModelParams, out: &mut [f64]) {
        match self {
            McObservable::Density { edges } => {
                for &(x, _) in coords {
                    if let Some(b) = bin_of(edges, x) {
                        out[b] += 1.0 / (edges[b + 1] - edges[b]);
                    }
                }
            }
            McObservable::YMarginal { bins } => {
                let circ = 2.0 * PI / params.gamma;
                for &(_, y) in coords {
                    let b = ((y / circ * *bins as f64) as usize).min(bins - 1);
                    out[b] += 1.0;
                }
            }
            McObservable::Annuli { intervals } => {
                for (i, &(a, b)) in intervals.iter().enumerate() {
                    out[i] += coords.iter().filter(|c| a <= c.0 && c.0 < b).count() as f64;
                }
            }
            McObservable::Excess { xbars } => {
                let n = params.n;
                for (i, &xbar) in xbars.iter().enumerate() {
                    let left = coords.iter().filter(|c| c.0 <= xbar).count();
                    out[i * (n + 1) + left] += 1.0;
                }
            }
            McObservable::Fourier { period, lo, hi } => {
                for &(x, _) in coords {
                    if *lo <= x && x < *hi {
                        let ph = 2.0 * PI * x / period;
                        out[0] += ph.cos();
                        out[1] += ph.sin();
                    }
                }
            }
            McObservable::XMoments => {
                for &(x, _) in coords {
                    out[0] += x;
                    out[1] += x * x;
                }
            }
        }
    }
}

fn bin_of(edges: &[f64], x: f64) -> Option<usize> {
    if x < edges[0] || x >= edges[edges.len() - 1] {
        return None;
    }
    Some(edges.partition_point(|&e| e <= x) - 1)
}

/// The `k` of `xbar = (k - 1/2) p gamma`.
pub fn excess_index(xbar: f64, params: &ModelParams) -> Result<usize> {
    let step = params.p as f64 * params.gamma;
    let k = (xbar / step + 0.5).round();
    if !xbar.is_finite() || k < 0.0 || (xbar - (k - 0.5) * step).abs() > 1e-9 * step.max(1.0) {
        return Err(Error::InvalidParams(format!("xbar = {xbar} is not of the form (k - 1/2) p gamma")));
    }
    Ok(k as usize)
}

/// `K(xbar) = #{j : x_j <= xbar} - k`.
pub fn particle_excess(xs: &[f64], xbar: f64, params: &ModelParams) -> Result<i64> {
    let k = excess_index(xbar, params)?;
    Ok(xs.iter().filter(|&&x| x <= xbar).count() as i64 - k as i64)
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainReport {
    pub chain: usize,
    pub seed: u64,
    pub stream: u64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub acceptance: f64,
    pub final_state: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservableEstimate {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub params: ModelParams,
    pub config: McConfig,
    pub chains: Vec<ChainReport>,
    pub acceptance: f64,
    /// Split-chain potential scale reduction of the log-weight trace.
    pub r_hat: f64,
    pub samples: usize,
    pub estimates: Vec<ObservableEstimate>,
    pub flags: Vec<String>,
}

struct ChainOutput {
    report: ChainReport,
    batch_sums: Vec<Vec<Vec<f64>>>,
    batch_counts: Vec<usize>,
    trace: Vec<f64>,
}

fn sweep(state: &mut PlasmaState, rng: &mut ChaCha8Rng, params: &ModelParams, sx: f64, sy: f64) -> usize {
    let (p, g) = (params.p, params.gamma);
    let circ = 2.0 * PI / g;
    let mut accepted = 0;
    for i in 0..state.coords.len() {
        let old = state.coords[i];
        let dx: f64 = rng.sample::<f64, _>(StandardNormal) * sx;
        let dy: f64 = (rng.random::<f64>() - 0.5) * 2.0 * sy;
        let new = (old.0 + dx, (old.1 + dy).rem_euclid(circ));
        let mut delta = old.0 * old.0 - new.0 * new.0;
        for (j, &c) in state.coords.iter().enumerate() {
            if j != i {
                delta += pair_log(p, g, new, c) - pair_log(p, g, old, c);
            }
        }
        let u: f64 = rng.random();
        if delta.is_finite() && (delta >= 0.0 || u < delta.exp()) {
            state.coords[i] = new;
            state.log_weight += delta;
            accepted += 1;
        }
    }
    accepted
}

fn initial_state(params: &ModelParams, rng: &mut ChaCha8Rng) -> PlasmaState {
    let step = params.p as f64 * params.gamma;
    let circ = 2.0 * PI / params.gamma;
    let coords = (0..params.n)
        .map(|j| (j as f64 * step + 0.1 * rng.sample::<f64, _>(StandardNormal), rng.random::<f64>() * circ))
        .collect();
    PlasmaState::new(coords, params.p, params.gamma)
}

fn run_chain(params: &ModelParams, mc: &McConfig, observables: &[McObservable], chain: usize) -> ChainOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    rng.set_stream(chain as u64);
    let n = params.n;
    let circ = 2.0 * PI / params.gamma;
    let mut state = initial_state(params, &mut rng);
    let (mut sx, mut sy) = (mc.sigma_x, mc.sigma_y.min(circ / 2.0));

    if mc.tune && sx > 0.0 {
        for _ in 0..40 {
            let pilot = 100;
            let acc: usize = (0..pilot).map(|_| sweep(&mut state, &mut rng, params, sx, sy)).sum();
            let rate = acc as f64 / (pilot * n) as f64;
            if (TUNING_BAND.0..=TUNING_BAND.1).contains(&rate) {
                break;
            }
            let f = if rate < TUNING_BAND.0 { 0.7 } else { 1.4 };
            sx *= f;
            sy = (sy * f).min(circ / 2.0);
        }
    }
    for _ in 0..mc.burn_in {
        sweep(&mut state, &mut rng, params, sx, sy);
    }

    let recorded = mc.sweeps / mc.thin;
    let per_batch = recorded / mc.batches;
    let widths: Vec<usize> = observables.iter().map(|o| o.width(n)).collect();
    let mut batch_sums: Vec<Vec<Vec<f64>>> =
        (0..mc.batches).map(|_| widths.iter().map(|&w| vec![0.0; w]).collect()).collect();
    let mut batch_counts = vec![0usize; mc.batches];
    let mut trace = Vec::with_capacity(recorded);
    let mut accepted = 0usize;
    for s in 0..recorded * mc.thin {
        accepted += sweep(&mut state, &mut rng, params, sx, sy);
        if (s + 1) % mc.thin != 0 {
            continue;
        }
        let r = (s + 1) / mc.thin - 1;
        let b = (r / per_batch).min(mc.batches - 1);
        for (o, acc) in observables.iter().zip(batch_sums[b].iter_mut()) {
            o.accumulate(&state.coords, params, acc);
        }
        batch_counts[b] += 1;
        trace.push(state.log_weight);
    }
    ChainOutput {
        report: ChainReport {
            chain,
            seed: mc.seed,
            stream: chain as u64,
            sigma_x: sx,
            sigma_y: sy,
            acceptance: accepted as f64 / ((recorded * mc.thin * n) as f64),
            final_state: state.coords,
        },
        batch_sums,
        batch_counts,
        trace,
    }
}

/// Split-chain `R-hat` over equal-length traces.
pub fn split_r_hat(traces: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = traces
        .iter()
        .flat_map(|t| {
            let h = t.len() / 2;
            [&t[..h], &t[h..2 * h]]
        })
        .filter(|h| h.len() >= 2)
        .collect();
    if halves.len() < 2 {
        return f64::NAN;
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0) as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / h.len() as f64).collect();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let m = halves.len() as f64;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (h.len() as f64 - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Runs independent chains in parallel and combines batch means; chain `c`
/// uses ChaCha8 seeded with `seed` on stream `c`.
pub fn metropolis_run(params: &ModelParams, mc: &McConfig, observables: &[McObservable]) -> Result<McReport> {
    mc.validate()?;
    for o in observables {
        o.validate(params)?;
    }
    let outputs: Vec<ChainOutput> =
        (0..mc.chains).into_par_iter().map(|c| run_chain(params, mc, observables, c)).collect();

    let mut estimates = Vec::with_capacity(observables.len());
    for (oi, o) in observables.iter().enumerate() {
        let w = o.width(params.n);
        let batch_means: Vec<Vec<f64>> = outputs
            .iter()
            .flat_map(|c| {
                c.batch_sums
                    .iter()
                    .zip(&c.batch_counts)
                    .map(move |(sums, &cnt)| sums[oi].iter().map(|s| s / cnt as f64).collect())
            })
            .collect();
        let nb = batch_means.len() as f64;
        let mean: Vec<f64> = (0..w).map(|i| batch_means.iter().map(|b| b[i]).sum::<f64>() / nb).collect();
        let stderr = (0..w)
            .map(|i| {
                let var = batch_means.iter().map(|b| (b[i] - mean[i]).powi(2)).sum::<f64>() / (nb - 1.0);
                (var / nb).sqrt()
            })
            .collect();
        estimates.push(ObservableEstimate { mean, stderr });
    }

    let acceptance = outputs.iter().map(|c| c.report.acceptance).sum::<f64>() / outputs.len() as f64;
    let mut flags = Vec::new();
    for c in &outputs {
        if c.report.acceptance < ACCEPTANCE_BAND.0 || c.report.acceptance > ACCEPTANCE_BAND.1 {
            flags.push(format!("chain {} acceptance {:.4} outside [0.01, 0.99]", c.report.chain, c.report.acceptance));
        }
    }
    let traces: Vec<Vec<f64>> = outputs.iter().map(|c| c.trace.clone()).collect();
    let r_hat = split_r_hat(&traces);
    if r_hat > 1.05 {
        flags.push(format!("split R-hat {r_hat:.4} above 1.05"));
    }
    let samples = outputs.iter().map(|c| c.trace.len()).sum();
    Ok(McReport {
        params: *params,
        config: mc.clone(),
        chains: outputs.into_iter().map(|c| c.report).collect(),
        acceptance,
        r_hat,
        samples,
        estimates,
        flags,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExcessStats {
    pub xbar: f64,
    pub k: usize,
    /// `(K, probability)` for `K = -k, ..., N - k`.
    pub histogram: Vec<(i64, f64)>,
    pub stderr: Vec<f64>,
    pub p_zero: f64,
    pub p_zero_stderr: f64,
    /// `(n, P(|K| >= n))` for `n >= 1`.
    pub tail: Vec<(usize, f64)>,
}

fn stats_from_histogram(xbar: f64, k: usize, probs: &[f64], errs: &[f64]) -> ExcessStats {
    let histogram: Vec<(i64, f64)> =
        probs.iter().enumerate().map(|(left, &pr)| (left as i64 - k as i64, pr)).collect();
    let max_abs = histogram.iter().map(|h| h.0.unsigned_abs() as usize).max().unwrap_or(0);
    let tail = (1..=max_abs)
        .map(|n| (n, histogram.iter().filter(|h| h.0.unsigned_abs() as usize >= n).map(|h| h.1).sum()))
        .collect();
    ExcessStats {
        xbar,
        k,
        p_zero: probs.get(k).copied().unwrap_or(0.0),
        p_zero_stderr: errs.get(k).copied().unwrap_or(0.0),
        histogram,
        stderr: errs.to_vec(),
        tail,
    }
}

/// Excess statistics of an explicit sample of configurations.
pub fn measure_excess(samples: &[Vec<(f64, f64)>], xbars: &[f64], params: &ModelParams) -> Result<Vec<ExcessStats>> {
    if samples.is_empty() {
        return Err(Error::InvalidParams("empty sample".into()));
    }
    xbars
        .iter()
        .map(|&xbar| {
            let k = excess_index(xbar, params)?;
            let mut counts = vec![0.0; params.n + 1];
            for s in samples {
                counts[s.iter().filter(|c| c.0 <= xbar).count()] += 1.0;
            }
            let probs: Vec<f64> = counts.iter().map(|c| c / samples.len() as f64).collect();
            let errs: Vec<f64> = probs.iter().map(|q| (q * (1.0 - q) / samples.len() as f64).sqrt()).collect();
            Ok(stats_from_histogram(xbar, k, &probs, &errs))
        })
        .collect()
}

/// Excess statistics from an `Excess` observable estimate.
pub fn excess_from_estimate(est: &ObservableEstimate, xbars: &[f64], params: &ModelParams) -> Result<Vec<ExcessStats>> {
    let w = params.n + 1;
    xbars
        .iter()
        .enumerate()
        .map(|(i, &xbar)| {
            let k = excess_index(xbar, params)?;
            Ok(stats_from_histogram(xbar, k, &est.mean[i * w..(i + 1) * w], &est.stderr[i * w..(i + 1) * w]))
        })
        .collect()
}

/// Exact distribution of `#{j : x_j <= xbar}` from the orbital expansion:
/// the generating function `sum_n A^2 prod_k (1 - w_k + s w_k)^{n_k} / C`
/// with `w_k` the weight of orbital `k` left of `xbar`.
pub fn exact_left_counts(table: &AmplitudeTable, xbar: f64) -> Vec<f64> {
    let n = table.params.n;
    let g = table.params.gamma;
    let w: Vec<f64> = (0..table.sites()).map(|k| orbital_weight(k as i64, g, f64::NEG_INFINITY, xbar)).collect();
    let mut total = vec![0.0; n + 1];
    for e in &table.entries {
        let mut poly = vec![1.0];
        for (k, &nk) in e.occupation.0.iter().enumerate() {
            for _ in 0..nk {
                let mut next = vec![0.0; poly.len() + 1];
                for (i, c) in poly.iter().enumerate() {
                    next[i] += c * (1.0 - w[k]);
                    next[i + 1] += c * w[k];
                }
                poly = next;
            }
        }
        let a2 = e.amplitude * e.amplitude;
        for (t, c) in total.iter_mut().zip(&poly) {
            *t += a2 * c;
        }
    }
    let norm = table.norm_squared();
    total.iter_mut().for_each(|t| *t /= norm);
    total
}

pub fn exact_p_zero(table: &AmplitudeTable, xbar: f64) -> Result<f64> {
    let k = excess_index(xbar, &table.params)?;
    Ok(exact_left_counts(table, xbar).get(k).copied().unwrap_or(0.0))
}

/// Expected particle counts in `a <= x < b`, `sum_m <n_m> w_m(a, b)`.
pub fn exact_annulus_counts(table: &AmplitudeTable, intervals: &[(f64, f64)]) -> Vec<f64> {
    let occ = occupation_finite(table);
    let g = table.params.gamma;
    intervals
        .iter()
        .map(|&(a, b)| occ.iter().enumerate().map(|(m, n)| n * orbital_weight(m as i64, g, a, b)).sum())
        .collect()
}

/// Bins centred on the orbitals, `[(m - 1/2) gamma, (m + 1/2) gamma)`, with
/// the outer bins extended to infinity.
pub fn orbital_annuli(params: &ModelParams) -> Vec<(f64, f64)> {
    let l = params.lattice_len();
    let g = params.gamma;
    (0..l)
        .map(|m| {
            let a = if m == 0 { f64::NEG_INFINITY } else { (m as f64 - 0.5) * g };
            let b = if m + 1 == l { f64::INFINITY } else { (m as f64 + 0.5) * g };
            (a, b)
        })
        .collect()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Golub-Welsch).
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let j = nalgebra::DMatrix::from_fn(n, n, |a, b| {
        if a + 1 == b || b + 1 == a {
            let k = a.max(b) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = nalgebra::SymmetricEigen::new(j);
    let mut nodes: Vec<(f64, f64)> =
        (0..n).map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2))).collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes
}

/// Quadrature of `P(exactly one particle left of xbar)` for `N = 2`
/// straight from `|Psi_2|^2`, independent of the orbital expansion. `x` uses
/// Gauss-Legendre panels split at `xbar`, `y` the periodic trapezoid rule.
pub fn two_particle_quadrature(p: u32, gamma: f64, xbar: f64, panels: usize, ny: usize) -> f64 {
    let lo = (xbar - 1.0).min(-7.0);
    let hi = (p as f64 * gamma + 7.0).max(xbar + 1.0);
    let gl = gauss_legendre(20);
    let mut xs: Vec<(f64, f64, bool)> = Vec::new();
    for (a, b, left) in [(lo, xbar, true), (xbar, hi, false)] {
        let h = (b - a) / panels as f64;
        for i in 0..panels {
            let c = a + (i as f64 + 0.5) * h;
            xs.extend(gl.iter().map(|&(t, w)| (c + 0.5 * h * t, 0.5 * h * w, left)));
        }
    }
    let hy = 2.0 * PI / gamma / ny as f64;
    let mut z = 0.0;
    let mut one_left = 0.0;
    for &(x1, w1, l1) in &xs {
        for &(x2, w2, l2) in &xs {
            let inner: f64 = (0..ny).map(|t| log_weight(&[(x1, 0.0), (x2, t as f64 * hy)], p, gamma).exp()).sum();
            let v = w1 * w2 * inner;
            z += v;
            if l1 != l2 {
                one_left += v;
            }
        }
    }
    one_left / z
}
