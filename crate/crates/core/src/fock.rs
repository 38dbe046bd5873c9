//! Creation and annihilation operators on occupation-number states.
//!
//! Fermionic states are ordered products `c*_{m_1} ... c*_{m_N} |0>` with
//! `m_1 < ... < m_N`, so `c*_k` and `c_k` pick up `(-1)^{sum_{j<k} n_j}`.
//! Bosonic states are normalized, giving the usual `sqrt(n)` factors.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Create(usize),
    Annihilate(usize),
}

impl Op {
    pub fn site(self) -> usize {
        match self {
            Op::Create(k) | Op::Annihilate(k) => k,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Create(k) => write!(f, "c*{k}"),
            Op::Annihilate(k) => write!(f, "c{k}"),
        }
    }
}

/// Applies one operator in place and returns its matrix element, or `None`
/// when the result vanishes or leaves the lattice.
pub fn apply(op: Op, n: &mut [u32], fermionic: bool) -> Option<f64> {
    let k = op.site();
    if k >= n.len() {
        return None;
    }
    let sign = if fermionic && n[..k].iter().sum::<u32>() % 2 == 1 { -1.0 } else { 1.0 };
    match op {
        Op::Create(_) => {
            if fermionic {
                if n[k] != 0 {
                    return None;
                }
                n[k] = 1;
                Some(sign)
            } else {
                n[k] += 1;
                Some((n[k] as f64).sqrt())
            }
        }
        Op::Annihilate(_) => {
            if n[k] == 0 {
                return None;
            }
            n[k] -= 1;
            if fermionic {
                Some(sign)
            } else {
                Some(((n[k] + 1) as f64).sqrt())
            }
        }
    }
}

/// Applies a word of operators right to left (the rightmost acts first).
pub fn apply_word(ops: &[Op], n: &mut [u32], fermionic: bool) -> Option<f64> {
    let mut factor = 1.0;
    for &op in ops.iter().rev() {
        factor *= apply(op, n, fermionic)?;
    }
    Some(factor)
}

/// A normal-ordered monomial `c*_{k_1} ... c*_{k_a} c_{n_b} ... c_{n_1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observable {
    pub ops: Vec<Op>,
}

impl Observable {
    /// Checks that every creation operator stands left of every annihilator.
    pub fn new(ops: Vec<Op>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::MalformedObservable("empty operator word".into()));
        }
        let first_annihilator = ops.iter().position(|o| matches!(o, Op::Annihilate(_)));
        if let Some(i) = first_annihilator {
            if ops[i..].iter().any(|o| matches!(o, Op::Create(_))) {
                return Err(Error::MalformedObservable(format!(
                    "not normal ordered: {}",
                    ops.iter().map(Op::to_string).collect::<Vec<_>>().join(" ")
                )));
            }
        }
        Ok(Self { ops })
    }

    /// `c*_k c_k`.
    pub fn density(k: usize) -> Self {
        Self { ops: vec![Op::Create(k), Op::Annihilate(k)] }
    }

    /// `c*_k c*_l c_l c_k`, which equals `n_k n_l` for `k != l`.
    pub fn pair_density(k: usize, l: usize) -> Self {
        Self { ops: vec![Op::Create(k), Op::Create(l), Op::Annihilate(l), Op::Annihilate(k)] }
    }

    /// Parses whitespace separated tokens `c*K` / `cK`, e.g. `"c*1 c*2 c3 c0"`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut ops = Vec::new();
        for tok in s.split_whitespace() {
            let bad = || Error::MalformedObservable(format!("bad token `{tok}`"));
            let op = if let Some(rest) = tok.strip_prefix("c*") {
                Op::Create(rest.parse().map_err(|_| bad())?)
            } else if let Some(rest) = tok.strip_prefix('c') {
                Op::Annihilate(rest.parse().map_err(|_| bad())?)
            } else {
                return Err(bad());
            };
            ops.push(op);
        }
        Self::new(ops)
    }

    /// Whether the monomial conserves particle number and total index
    /// (the momentum around the cylinder).
    pub fn conserves_momentum(&self) -> bool {
        let (mut dn, mut dk) = (0i64, 0i64);
        for op in &self.ops {
            match *op {
                Op::Create(k) => {
                    dn += 1;
                    dk += k as i64;
                }
                Op::Annihilate(k) => {
                    dn -= 1;
                    dk -= k as i64;
                }
            }
        }
        dn == 0 && dk == 0
    }

    pub fn max_site(&self) -> usize {
        self.ops.iter().map(|o| o.site()).max().unwrap_or(0)
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.ops.iter().map(Op::to_string).collect();
        write!(f, "{}", s.join(" "))
    }
}
