//! `laughlin`: command-line front end for laughlin-core.
//!
//! Every subcommand validates its configuration, writes CSV tables and JSON
//! summaries into the output directory, and finishes with a manifest naming
//! the inputs, outputs (with SHA-256 digests) and wall time.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use laughlin_core::correlations::{
    domain_weighted, occupation_finite, occupation_infinite, pair_infinite, period_test, rod_expectations,
    PERIOD_TOLERANCE,
};
use laughlin_core::expansion::{
    amplitudes, cache_file_name, evaluate_oracle_exact, expand, load_cache_for, max_abs_coefficient, save_cache,
    verify_product_rule, AmplitudeTable, CoefficientTable,
};
use laughlin_core::hamiltonian::{
    build_h, build_monomer_dimer, ground_check, kernel_dimension, laughlin_vector, perturbation_series, residual,
    spectrum, FormFactor, SectorBasis,
};
use laughlin_core::lattice::{Caps, ModelParams};
use laughlin_core::plasma::{excess_from_estimate, metropolis_run, McConfig, McObservable};
use laughlin_core::renewal::{norms, renewal_function, ExactNorms, Precision, RenewalModel};
use laughlin_core::verify::{self, VerifyOptions};
use laughlin_core::Error;

const EXIT_VERIFY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CAP: u8 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(name = "laughlin", version, about = "Exact and Monte Carlo tools for the Laughlin state on a cylinder")]
#[command(after_help = "Parameters may also be given as key=value, e.g. `laughlin expand p=3 N=6`.")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Serialize)]
struct Global {
    /// Coefficient cache directory [default: <out-dir>/cache]
    #[arg(long, global = true, env = "LAUGHLIN_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// Directory for CSV/JSON outputs and manifests
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (default: all cores); outputs do not depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Proceed with renewal models whose truncated tail mass is too large,
    /// and accept flagged Monte Carlo runs
    #[arg(long, global = true)]
    override_unconverged: bool,
    /// Fail instead of expanding when a coefficient table is not cached
    #[arg(long, global = true)]
    no_compute: bool,
}

#[derive(Debug, Subcommand, Serialize)]
enum Command {
    /// Expand prod (Z_k - Z_j)^p and cache the integer coefficients
    Expand(ExpandArgs),
    /// Norms C_N on the infinite cylinder
    Norms(SeqArgs),
    /// Irreducible weights, activity, waiting times and renewal function
    Renewal(SeqArgs),
    /// Finite and infinite-volume correlations
    Corr(CorrArgs),
    /// Parent Hamiltonian checks, spectra and the perturbation series
    Ham(HamArgs),
    /// Metropolis sampling of |Psi_N|^2
    Mcmc(McArgs),
    /// Run the acceptance suite (and parameter checks when p/nmax/gamma are given)
    VerifyAll(VerifyArgs),
}

#[derive(Debug, Args, Serialize)]
struct ExpandArgs {
    #[arg(long)]
    p: u32,
    #[arg(long)]
    n: usize,
}

#[derive(Debug, Args, Serialize)]
struct SeqArgs {
    #[arg(long)]
    p: u32,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    nmax: usize,
}

#[derive(Debug, Args, Serialize)]
struct CorrArgs {
    #[arg(long)]
    p: u32,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Particle number of the finite system
    #[arg(long)]
    n: usize,
    /// Truncation of the renewal model for infinite-volume quantities [default: n]
    #[arg(long)]
    nmax: Option<usize>,
    /// Largest distance for infinite-volume pair correlations [default: 5p]
    #[arg(long)]
    max_distance: Option<usize>,
    /// Finite domain `a:b` for the x coordinate (`inf` allowed); repeatable
    #[arg(long = "domain", value_parser = parse_domain)]
    domains: Vec<(f64, f64)>,
}

#[derive(Debug, Args, Serialize)]
struct HamArgs {
    #[arg(long)]
    p: u32,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    n: usize,
    /// Use every momentum sector instead of the ground-state sector
    #[arg(long)]
    full_space: bool,
    #[arg(long)]
    check_ground_state: bool,
    /// Number of lowest eigenvalues to report
    #[arg(long)]
    spectrum: Option<usize>,
    /// Check the monomer-dimer Hamiltonian and state (p = 3)
    #[arg(long)]
    monomer_dimer: bool,
    /// Order of the Tao-Thouless perturbation series (p = 3)
    #[arg(long)]
    perturbation_order: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct McArgs {
    #[arg(long)]
    p: u32,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 20_000)]
    sweeps: usize,
    #[arg(long, default_value_t = 2_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma_x: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma_y: f64,
    /// Keep the proposal widths fixed
    #[arg(long)]
    no_tune: bool,
    #[arg(long, default_value_t = 50)]
    batches: usize,
    /// Density bins per lattice period p*gamma
    #[arg(long, default_value_t = 8)]
    bins_per_period: usize,
}

#[derive(Debug, Args, Serialize)]
struct VerifyArgs {
    #[arg(long)]
    p: Option<u32>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    nmax: Option<usize>,
    /// Run only these acceptance criteria (comma separated ids)
    #[arg(long, value_delimiter = ',')]
    only: Vec<u8>,
    /// Skip the acceptance suite and run only the parameter checks
    #[arg(long)]
    skip_acceptance: bool,
}

fn parse_domain(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected a:b")?;
    let num = |t: &str| -> Result<f64, String> {
        match t.trim() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            v => v.parse().map_err(|e| format!("{v}: {e}")),
        }
    };
    let (a, b) = (num(a)?, num(b)?);
    if a >= b {
        return Err(format!("empty domain {a}:{b}"));
    }
    Ok((a, b))
}

/// Rewrites `key=value` arguments as `--key value`; `N` becomes `n` and
/// `Nmax` becomes `nmax`.
fn normalize_args(args: impl IntoIterator<Item = OsString>) -> Vec<OsString> {
    let mut out = Vec::new();
    for a in args {
        let rewritten = a.to_str().and_then(|s| {
            let (k, v) = s.split_once('=')?;
            let ok = !k.is_empty()
                && !k.starts_with('-')
                && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            ok.then(|| (k.to_ascii_lowercase().replace('_', "-"), v.to_string()))
        });
        match rewritten {
            Some((k, v)) => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
            None => out.push(a),
        }
    }
    out
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    fn verify(message: impl Into<String>) -> Self {
        Self { code: EXIT_VERIFY, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidParams(_)
            | Error::LengthMismatch { .. }
            | Error::Inadmissible(_)
            | Error::MalformedObservable(_)
            | Error::Unsupported(_) => EXIT_CONFIG,
            Error::CapExceeded(_) => EXIT_CAP,
            _ => EXIT_VERIFY,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::verify(format!("i/o error: {e}"))
    }
}

type CliResult<T> = Result<T, Failure>;

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Run<'a> {
    global: &'a Global,
    caps: Caps,
    cache_dir: PathBuf,
    outputs: Vec<Value>,
    inputs: Vec<Value>,
}

impl<'a> Run<'a> {
    fn new(global: &'a Global) -> Self {
        let cache_dir = global.cache_dir.clone().unwrap_or_else(|| global.out_dir.join("cache"));
        Self { global, caps: Caps::default(), cache_dir, outputs: Vec::new(), inputs: Vec::new() }
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        fs::create_dir_all(&self.global.out_dir)?;
        let path = self.global.out_dir.join(name);
        fs::write(&path, contents)?;
        self.outputs.push(json!({ "file": name, "bytes": contents.len(), "sha256": sha256_hex(contents.as_bytes()) }));
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::verify(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut s = header.join(",");
        s.push('\n');
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.write(name, &s)
    }

    /// Cached table if present, otherwise expanded and cached unless
    /// `--no-compute` is set.
    fn table(&mut self, p: u32, n: usize) -> CliResult<CoefficientTable> {
        let path = self.cache_dir.join(cache_file_name(p, n));
        let table = if path.exists() {
            load_cache_for(&path, p, n)?
        } else if self.global.no_compute {
            return Err(Failure::config(format!(
                "no cached table for p={p} N={n} in {} and --no-compute is set",
                self.cache_dir.display()
            )));
        } else {
            let t = expand(p, n, &self.caps)?;
            fs::create_dir_all(&self.cache_dir)?;
            save_cache(&t, &path)?;
            t
        };
        let bytes = fs::read(&path)?;
        self.inputs.push(json!({ "file": path.display().to_string(), "sha256": sha256_hex(&bytes) }));
        Ok(table)
    }

    fn amplitude_sequence(&mut self, p: u32, gamma: f64, nmax: usize) -> CliResult<Vec<AmplitudeTable>> {
        (1..=nmax).map(|n| Ok(amplitudes(&self.table(p, n)?, gamma)?)).collect()
    }

    fn finish(&mut self, cli: &Cli, wall: f64, status: u8) -> CliResult<()> {
        let name = format!("{}.manifest.json", command_name(&cli.command));
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": command_name(&cli.command),
            "config": cli,
            "cache_dir": self.cache_dir.display().to_string(),
            "threads": rayon::current_num_threads(),
            "exit_status": status,
            "wall_time_seconds": wall,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let mut s = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::verify(e.to_string()))?;
        s.push('\n');
        fs::create_dir_all(&self.global.out_dir)?;
        fs::write(self.global.out_dir.join(name), s)?;
        Ok(())
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Expand(_) => "expand",
        Command::Norms(_) => "norms",
        Command::Renewal(_) => "renewal",
        Command::Corr(_) => "corr",
        Command::Ham(_) => "ham",
        Command::Mcmc(_) => "mcmc",
        Command::VerifyAll(_) => "verify-all",
    }
}

fn params(p: u32, gamma: f64, n: usize) -> CliResult<ModelParams> {
    Ok(ModelParams::new(p, gamma, n)?)
}

fn cmd_expand(run: &mut Run, a: &ExpandArgs) -> CliResult<()> {
    params(a.p, 1.0, a.n)?;
    run.caps.check(a.p, a.n)?;
    let t = run.table(a.p, a.n)?;
    let path = run.cache_dir.join(cache_file_name(a.p, a.n));
    let summary = json!({
        "p": a.p,
        "n": a.n,
        "entries": t.len(),
        "max_abs_coefficient": max_abs_coefficient(&t).to_string(),
        "cache_file": path.display().to_string(),
        "cache_sha256": sha256_hex(&fs::read(&path)?),
    });
    println!("p={} N={}: {} nonzero coefficients cached in {}", a.p, a.n, t.len(), path.display());
    run.write_json("expand.json", &summary)
}

fn cmd_norms(run: &mut Run, a: &SeqArgs) -> CliResult<()> {
    params(a.p, a.gamma, a.nmax)?;
    let tables = run.amplitude_sequence(a.p, a.gamma, a.nmax)?;
    let c = norms(&tables)?;
    let exact = ExactNorms::new(&tables);
    let rows: Vec<Vec<String>> = c.c.iter().enumerate().map(|(i, &v)| vec![(i + 1).to_string(), fmt_f(v)]).collect();
    run.write_csv("norms.csv", &["n", "c_n"], &rows)?;
    run.write_json(
        "norms.json",
        &json!({
            "p": a.p,
            "gamma": a.gamma,
            "nmax": a.nmax,
            "min_supermultiplicative_margin": c.min_supermultiplicative_margin(),
            "supermultiplicative_exact": exact.supermultiplicative(),
            "submultiplicative_constant": c.submultiplicative_constant(),
        }),
    )
}

fn renewal_model(run: &mut Run, p: u32, gamma: f64, nmax: usize) -> CliResult<(Vec<AmplitudeTable>, RenewalModel)> {
    let tables = run.amplitude_sequence(p, gamma, nmax)?;
    let (model, _) = RenewalModel::from_tables(&tables, Precision::Exact)?;
    Ok((tables, model))
}

fn cmd_renewal(run: &mut Run, a: &SeqArgs) -> CliResult<()> {
    params(a.p, a.gamma, a.nmax)?;
    let tables = run.amplitude_sequence(a.p, a.gamma, a.nmax)?;
    let (model, weights) = RenewalModel::from_tables(&tables, Precision::Exact)?;
    let rf = renewal_function(&model);
    let rows: Vec<Vec<String>> = (1..=model.nmax())
        .map(|n| vec![n.to_string(), fmt_f(model.alpha[n - 1]), fmt_f(model.p_n(n))])
        .collect();
    run.write_csv("renewal_weights.csv", &["n", "alpha_n", "p_n"], &rows)?;
    let rows: Vec<Vec<String>> = (0..rf.direct.len())
        .map(|n| vec![n.to_string(), fmt_f(rf.direct[n]), fmt_f(rf.convolution[n]), fmt_f(rf.sup_deviation[n])])
        .collect();
    run.write_csv("renewal_function.csv", &["n", "u_direct", "u_convolution", "sup_deviation_from_limit"], &rows)?;
    run.write_json(
        "renewal.json",
        &json!({
            "p": model.p,
            "gamma": model.gamma,
            "nmax": model.nmax(),
            "r": model.r,
            "mu": model.mu,
            "r_previous": model.r_previous,
            "tail_mass": model.tail_mass,
            "converged": model.is_converged(),
            "c_sub": model.c_sub,
            "alpha_relative_residual": weights.relative_residual,
            "alpha_exact_match": weights.exact_match,
            "renewal_function_max_deviation": rf.max_deviation,
            "renewal_function_decreasing_trend": rf.decreasing_trend(),
        }),
    )?;
    println!(
        "p={} gamma={} Nmax={}: r={:.12} mu={:.12} tail mass {:.2e}{}",
        model.p,
        model.gamma,
        model.nmax(),
        model.r,
        model.mu,
        model.tail_mass,
        if model.is_converged() { "" } else { " (unconverged)" }
    );
    Ok(())
}

fn cmd_corr(run: &mut Run, a: &CorrArgs) -> CliResult<()> {
    params(a.p, a.gamma, a.n)?;
    let nmax = a.nmax.unwrap_or(a.n);
    if nmax == 0 {
        return Err(Failure::config("nmax must be positive"));
    }
    let allow = run.global.override_unconverged;
    let finite = amplitudes(&run.table(a.p, a.n)?, a.gamma)?;
    let occ = occupation_finite(&finite);
    let (tables, model) = renewal_model(run, a.p, a.gamma, nmax)?;
    let rods = rod_expectations(&tables)?;
    let inf = occupation_infinite(&model, &rods, allow)?;

    let rows: Vec<Vec<String>> =
        occ.iter().enumerate().map(|(k, &v)| vec![k.to_string(), fmt_f(v), fmt_f(inf.at(k as i64))]).collect();
    run.write_csv("occupations.csv", &["k", "finite", "infinite"], &rows)?;

    let max_d = a.max_distance.unwrap_or(5 * a.p as usize);
    let mut rows = Vec::new();
    for d in 1..=max_d as i64 {
        for k in 0..a.p as i64 {
            let c = pair_infinite(&model, &rods, k, k + d, allow)?;
            rows.push(vec![k.to_string(), d.to_string(), fmt_f(c.pair), fmt_f(c.truncated)]);
        }
    }
    run.write_csv("pairs_infinite.csv", &["k", "distance", "pair", "truncated"], &rows)?;

    if !a.domains.is_empty() {
        let reports = a
            .domains
            .iter()
            .map(|&(lo, hi)| domain_weighted(&finite, lo, hi))
            .collect::<Result<Vec<_>, _>>()?;
        let mut header = vec!["k".to_string()];
        header.extend(a.domains.iter().map(|(lo, hi)| format!("domain[{lo}:{hi}]")));
        let rows: Vec<Vec<String>> = (0..finite.sites())
            .map(|k| std::iter::once(k.to_string()).chain(reports.iter().map(|r| fmt_f(r.occupations[k]))).collect())
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        run.write_csv("domain_occupations.csv", &header, &rows)?;
    }

    let period = period_test(&model, &rods, max_d, PERIOD_TOLERANCE, allow)?;
    run.write_json(
        "corr.json",
        &json!({
            "p": a.p,
            "gamma": a.gamma,
            "n": a.n,
            "nmax": nmax,
            "infinite_occupations": inf.values,
            "infinite_sum": inf.values.iter().sum::<f64>(),
            "truncation_error": inf.truncation_error,
            "period": period,
        }),
    )?;
    println!("p={} gamma={} N={}: infinite-volume period {}", a.p, a.gamma, a.n, period.period);
    Ok(())
}

fn cmd_ham(run: &mut Run, a: &HamArgs) -> CliResult<()> {
    let pr = params(a.p, a.gamma, a.n)?;
    let basis = if a.full_space { SectorBasis::full(&pr)? } else { SectorBasis::ground_sector(&pr)? };
    let ff = FormFactor::new(a.p, a.gamma);
    let builds = build_h(&ff, &basis);
    let h = &builds.pairwise;
    let mut out = json!({
        "p": a.p,
        "gamma": a.gamma,
        "n": a.n,
        "space": if a.full_space { "full" } else { "ground-sector" },
        "dimension": basis.len(),
        "nonzeros": h.nnz(),
        "build_max_deviation": builds.max_deviation,
        "max_asymmetry": h.max_asymmetry(),
    });
    if a.check_ground_state {
        let psi = laughlin_vector(&pr, &basis)?;
        out["ground_state"] = serde_json::to_value(ground_check(h, &psi)?).expect("serializable");
    }
    if let Some(k) = a.spectrum {
        let vals = spectrum(h, k)?;
        let rows: Vec<Vec<String>> = vals.iter().enumerate().map(|(i, &v)| vec![i.to_string(), fmt_f(v)]).collect();
        run.write_csv("spectrum.csv", &["index", "eigenvalue"], &rows)?;
        out["spectrum"] = json!(vals);
    }
    if a.monomer_dimer {
        let md = build_monomer_dimer(&pr)?;
        out["monomer_dimer"] = json!({
            "residual": residual(&md.hamiltonian, &md.state)?,
            "kernel_dimension": kernel_dimension(&md.hamiltonian)?,
        });
    }
    if let Some(order) = a.perturbation_order {
        let rep = perturbation_series(&pr, order)?;
        out["perturbation"] = json!({
            "distances": rep.distances,
            "strictly_decreasing": rep.strictly_decreasing(),
        });
    }
    run.write_json("ham.json", &out)?;
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    Ok(())
}

fn cmd_mcmc(run: &mut Run, a: &McArgs) -> CliResult<()> {
    let pr = params(a.p, a.gamma, a.n)?;
    let mc = McConfig {
        sweeps: a.sweeps,
        burn_in: a.burn_in,
        thin: a.thin,
        sigma_x: a.sigma_x,
        sigma_y: a.sigma_y,
        seed: run.global.seed,
        chains: a.chains,
        tune: !a.no_tune,
        batches: a.batches,
    };
    if a.bins_per_period == 0 {
        return Err(Failure::config("bins-per-period must be positive"));
    }
    let period = a.p as f64 * a.gamma;
    let (lo, hi) = (-3.0, period * (a.n as f64 - 1.0) + 3.0);
    let nbins = ((hi - lo) / period * a.bins_per_period as f64).ceil() as usize;
    let width = (hi - lo) / nbins as f64;
    let edges: Vec<f64> = (0..=nbins).map(|i| lo + i as f64 * width).collect();
    let xbars: Vec<f64> = (1..a.n).map(|k| (k as f64 - 0.5) * period).collect();
    let mut obs = vec![McObservable::Density { edges: edges.clone() }];
    if !xbars.is_empty() {
        obs.push(McObservable::Excess { xbars: xbars.clone() });
    }
    let rep = metropolis_run(&pr, &mc, &obs)?;

    let dens = &rep.estimates[0];
    let rows: Vec<Vec<String>> = (0..nbins)
        .map(|i| vec![fmt_f(edges[i]), fmt_f(edges[i + 1]), fmt_f(dens.mean[i]), fmt_f(dens.stderr[i])])
        .collect();
    run.write_csv("density.csv", &["x_lo", "x_hi", "density", "stderr"], &rows)?;
    let excess = if xbars.is_empty() { Vec::new() } else { excess_from_estimate(&rep.estimates[1], &xbars, &pr)? };
    let mut rows = Vec::new();
    for e in &excess {
        for (i, &(k, prob)) in e.histogram.iter().enumerate() {
            rows.push(vec![fmt_f(e.xbar), k.to_string(), fmt_f(prob), fmt_f(e.stderr[i])]);
        }
    }
    run.write_csv("excess.csv", &["xbar", "excess", "probability", "stderr"], &rows)?;
    let rows: Vec<Vec<String>> = rep
        .chains
        .iter()
        .map(|c| {
            vec![
                c.chain.to_string(),
                c.seed.to_string(),
                c.stream.to_string(),
                fmt_f(c.sigma_x),
                fmt_f(c.sigma_y),
                fmt_f(c.acceptance),
            ]
        })
        .collect();
    run.write_csv("chains.csv", &["chain", "seed", "stream", "sigma_x", "sigma_y", "acceptance"], &rows)?;
    run.write_json(
        "mcmc.json",
        &json!({
            "params": rep.params,
            "config": rep.config,
            "acceptance": rep.acceptance,
            "r_hat": rep.r_hat,
            "samples": rep.samples,
            "flags": rep.flags,
            "p_zero": excess.iter().map(|e| json!({"xbar": e.xbar, "p": e.p_zero, "stderr": e.p_zero_stderr})).collect::<Vec<_>>(),
        }),
    )?;
    println!("acceptance {:.3}, split R-hat {:.4}, {} samples", rep.acceptance, rep.r_hat, rep.samples);
    if !rep.flags.is_empty() {
        for f in &rep.flags {
            eprintln!("warning: {f}");
        }
        if !run.global.override_unconverged {
            return Err(Failure::verify("sampler diagnostics flagged the run (use --override-unconverged to accept)"));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CheckRow {
    suite: &'static str,
    id: String,
    name: String,
    passed: bool,
    summary: String,
}

/// Consistency checks at user-chosen `p`, `gamma`, `Nmax`.
fn parameter_checks(run: &mut Run, p: u32, gamma: f64, nmax: usize) -> CliResult<Vec<CheckRow>> {
    params(p, gamma, nmax)?;
    let mut rows = Vec::new();
    let mut push = |id: &str, name: &str, passed: bool, summary: String| {
        rows.push(CheckRow { suite: "parameters", id: id.into(), name: name.into(), passed, summary });
    };
    let coeffs = (1..=nmax).map(|n| run.table(p, n)).collect::<CliResult<Vec<_>>>()?;

    if p >= 2 {
        let rep = verify_product_rule(&coeffs)?;
        push("P1", "product rule", rep.passed(), format!("{} factorizations, {} violations", rep.checked, rep.violations.len()));
    }

    let mut worst = 0.0f64;
    let mut exact = true;
    for (i, t) in coeffs.iter().enumerate() {
        let n = i + 1;
        let pts: Vec<Vec<(i64, i64)>> = (0..5i64)
            .map(|s| (0..n as i64).map(|j| (3 * j * j - 7 * s + 1, 5 * j + s * s - 2)).collect())
            .collect();
        let r = evaluate_oracle_exact(t, &pts)?;
        worst = worst.max(r.max_relative_error);
        exact &= r.exact_identity;
    }
    push("P2", "polynomial oracle", exact && worst < 1e-9, format!("exact identity {exact}, max relative error {worst:.2e}"));

    let tables = coeffs.iter().map(|t| amplitudes(t, gamma)).collect::<Result<Vec<_>, _>>()?;
    let renewal = RenewalModel::from_tables(&tables, Precision::Exact);
    match renewal {
        Ok((model, w)) => {
            let rf = renewal_function(&model);
            let exact_norms = ExactNorms::new(&tables);
            let ok = w.relative_residual < 1e-10 && rf.max_deviation < 1e-10 && exact_norms.supermultiplicative();
            push(
                "P3",
                "renewal consistency",
                ok,
                format!(
                    "alpha residual {:.2e}, u_N deviation {:.2e}, supermultiplicative {}; r={:.12} mu={:.12} tail {:.2e}",
                    w.relative_residual,
                    rf.max_deviation,
                    exact_norms.supermultiplicative(),
                    model.r,
                    model.mu,
                    model.tail_mass
                ),
            );
        }
        Err(e) => push("P3", "renewal consistency", false, e.to_string()),
    }

    let mut worst = 0.0f64;
    let mut dims = Vec::new();
    for n in 1..=nmax.min(4) {
        let pr = params(p, gamma, n)?;
        let basis = SectorBasis::ground_sector(&pr)?;
        let ff = FormFactor::new(p, gamma);
        let h = build_h(&ff, &basis);
        let psi = basis.embed(&tables[n - 1])?;
        worst = worst.max(residual(&h.pairwise, &psi)?);
        dims.push(kernel_dimension(&h.pairwise)?);
    }
    let ok = worst < 1e-8 && dims.iter().all(|&d| d == 1);
    push("P4", "parent Hamiltonian kernel", ok, format!("max residual {worst:.2e}, ground-sector kernels {dims:?}"));
    Ok(rows)
}

fn cmd_verify(run: &mut Run, a: &VerifyArgs) -> CliResult<()> {
    let mut rows = Vec::new();
    let timing_start = Instant::now();
    match (a.p, a.nmax) {
        (Some(p), Some(nmax)) => rows.extend(parameter_checks(run, p, a.gamma.unwrap_or(1.0), nmax)?),
        (None, None) if a.gamma.is_none() => {}
        _ => return Err(Failure::config("parameter checks need both p and nmax")),
    }
    if !a.skip_acceptance {
        let opts =
            VerifyOptions { seed: run.global.seed, cache_dir: Some(run.cache_dir.clone()), caps: run.caps };
        fs::create_dir_all(&run.cache_dir)?;
        let ids: Vec<u8> = if a.only.is_empty() { (1..=12).collect() } else { a.only.clone() };
        if let Some(bad) = ids.iter().find(|&&i| !(1..=12).contains(&i)) {
            return Err(Failure::config(format!("no acceptance criterion {bad}")));
        }
        for id in ids {
            let r = verify::criterion(id, &opts);
            println!("{r}");
            rows.push(CheckRow {
                suite: "acceptance",
                id: id.to_string(),
                name: r.name.to_string(),
                passed: r.passed,
                summary: r.summary,
            });
        }
    }
    for r in rows.iter().filter(|r| r.suite == "parameters") {
        println!("check {} [{}] {}: {}", r.id, if r.passed { "PASS" } else { "FAIL" }, r.name, r.summary);
    }
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.suite.into(), r.id.clone(), r.name.clone(), r.passed.to_string(), csv_quote(&r.summary)])
        .collect();
    run.write_csv("verify.csv", &["suite", "id", "name", "passed", "summary"], &csv_rows)?;
    run.write_json("verify.json", &rows)?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.id.as_str()).collect();
    println!(
        "{}/{} checks passed in {:.1} s",
        rows.len() - failed.len(),
        rows.len(),
        timing_start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::verify(format!("failed checks: {}", failed.join(", "))))
    }
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn dispatch(run: &mut Run, cmd: &Command) -> CliResult<()> {
    match cmd {
        Command::Expand(a) => cmd_expand(run, a),
        Command::Norms(a) => cmd_norms(run, a),
        Command::Renewal(a) => cmd_renewal(run, a),
        Command::Corr(a) => cmd_corr(run, a),
        Command::Ham(a) => cmd_ham(run, a),
        Command::Mcmc(a) => cmd_mcmc(run, a),
        Command::VerifyAll(a) => cmd_verify(run, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse_from(normalize_args(std::env::args_os())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    if let Some(t) = cli.global.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let start = Instant::now();
    let mut run = Run::new(&cli.global);
    let result = dispatch(&mut run, &cli.command);
    let status = match &result {
        Ok(()) => 0,
        Err(f) => f.code,
    };
    // a config error leaves nothing worth describing
    if status != EXIT_CONFIG {
        if let Err(f) = run.finish(&cli, start.elapsed().as_secs_f64(), status) {
            eprintln!("error: could not write manifest: {}", f.message);
        }
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_arguments() {
        let args: Vec<OsString> = ["laughlin", "verify-all", "p=3", "Nmax=5", "gamma=1", "--seed", "4"]
            .iter()
            .map(OsString::from)
            .collect();
        let got: Vec<String> = normalize_args(args).into_iter().map(|a| a.into_string().unwrap()).collect();
        assert_eq!(got, ["laughlin", "verify-all", "--p", "3", "--nmax", "5", "--gamma", "1", "--seed", "4"]);
    }

    #[test]
    fn flags_with_equals_untouched() {
        let args = vec![OsString::from("--out-dir=x=y")];
        assert_eq!(normalize_args(args), vec![OsString::from("--out-dir=x=y")]);
    }

    #[test]
    fn domains() {
        assert_eq!(parse_domain("0:15").unwrap(), (0.0, 15.0));
        assert_eq!(parse_domain("-inf:2.5").unwrap(), (f64::NEG_INFINITY, 2.5));
        assert!(parse_domain("3:1").is_err());
        assert!(parse_domain("3").is_err());
    }

    #[test]
    fn csv_fields_are_quoted() {
        assert_eq!(csv_quote("a, b"), "\"a, b\"");
        assert_eq!(csv_quote("plain"), "plain");
    }
}
