//! Lowest eigenpairs of real symmetric sparse operators.
//!
//! Small matrices go through a dense symmetric eigensolver. Larger ones use
//! Lanczos with full reorthogonalization; converged vectors are locked and the
//! next run is kept orthogonal to them, so degenerate eigenvalues (kernel
//! dimensions in particular) come out with their multiplicity.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::hamiltonian::SparseOperator;

/// Dimension up to which the dense solver is used.
pub const DENSE_LIMIT: usize = 600;

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    /// Residual tolerance relative to the operator scale.
    pub tol: f64,
    /// Maximum Krylov dimension per locked vector.
    pub max_iter: usize,
    /// Force Lanczos even for small operators.
    pub force_lanczos: bool,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 2000, force_lanczos: false }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    // twice is enough
    for _ in 0..2 {
        for q in against {
            let c = dot(v, q);
            axpy(v, -c, q);
        }
    }
}

/// Deterministic, non-degenerate start vector.
fn start_vector(dim: usize, salt: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let x = (i + 1) as f64 * 0.618_033_988_749_895 + salt as f64 * 0.414_213_562_373_095;
            1.0 + 0.5 * (x - x.floor())
        })
        .collect()
}

/// Bound on the spectral radius (max absolute row sum).
pub fn operator_scale(op: &SparseOperator) -> f64 {
    let mut rows = vec![0.0f64; op.dim];
    for &(i, _, v) in &op.entries {
        rows[i] += v.abs();
    }
    rows.into_iter().fold(0.0, f64::max)
}

/// The `count` lowest eigenpairs in ascending order.
pub fn lowest_eigenpairs(op: &SparseOperator, count: usize, opts: &EigenOptions) -> Result<Eigenpairs> {
    let count = count.min(op.dim);
    if count == 0 {
        return Ok(Eigenpairs { values: vec![], vectors: vec![] });
    }
    if op.dim <= DENSE_LIMIT && !opts.force_lanczos {
        return Ok(dense_lowest(&op.to_dense(), count));
    }
    let scale = operator_scale(op).max(f64::MIN_POSITIVE);
    let mut locked: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for salt in 0..count {
        let (value, vector) = lanczos_lowest(op, &locked, salt, scale, opts)?;
        values.push(value);
        locked.push(vector);
    }
    // locking can emit values slightly out of order when they are degenerate
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    Ok(Eigenpairs {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: order.iter().map(|&i| locked[i].clone()).collect(),
    })
}

pub fn lowest_eigenvalues(op: &SparseOperator, count: usize, opts: &EigenOptions) -> Result<Vec<f64>> {
    Ok(lowest_eigenpairs(op, count, opts)?.values)
}

fn dense_lowest(m: &DMatrix<f64>, count: usize) -> Eigenpairs {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let take = &order[..count];
    Eigenpairs {
        values: take.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors: take.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect(),
    }
}

fn lanczos_lowest(
    op: &SparseOperator,
    locked: &[Vec<f64>],
    salt: usize,
    scale: f64,
    opts: &EigenOptions,
) -> Result<(f64, Vec<f64>)> {
    let dim = op.dim;
    let mut v = start_vector(dim, salt);
    orthogonalize(&mut v, locked);
    let nv = norm(&v);
    if nv == 0.0 {
        return Err(Error::NoConvergence(0));
    }
    v.iter_mut().for_each(|x| *x /= nv);

    let limit = opts.max_iter.min(dim - locked.len());
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    loop {
        let k = basis.len() - 1;
        let mut w = op.apply(&basis[k]);
        let a = dot(&w, &basis[k]);
        alphas.push(a);
        orthogonalize(&mut w, locked);
        orthogonalize(&mut w, &basis);
        let b = norm(&w);

        let m = alphas.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alphas[i]
            } else if i + 1 == j {
                betas[i]
            } else if j + 1 == i {
                betas[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let (imin, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty tridiagonal");
        let last = eig.eigenvectors[(m - 1, imin)];
        let residual = (b * last).abs();
        let exhausted = b <= 1e-14 * scale || m >= limit;
        if residual <= opts.tol * scale || exhausted {
            if residual > opts.tol * scale * 1e3 && !exhausted {
                return Err(Error::NoConvergence(m));
            }
            let mut x = vec![0.0; dim];
            for (j, q) in basis.iter().enumerate() {
                axpy(&mut x, eig.eigenvectors[(j, imin)], q);
            }
            orthogonalize(&mut x, locked);
            let nx = norm(&x);
            x.iter_mut().for_each(|e| *e /= nx);
            if m >= opts.max_iter && residual > opts.tol * scale * 1e3 {
                return Err(Error::NoConvergence(m));
            }
            let value = dot(&x, &op.apply(&x));
            return Ok((value, x));
        }
        betas.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        basis.push(w);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(dim: usize) -> SparseOperator {
        let mut t = Vec::new();
        for i in 0..dim {
            t.push((i, i, 2.0));
            if i + 1 < dim {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        SparseOperator::from_triplets(dim, t)
    }

    #[test]
    fn lanczos_matches_closed_form() {
        let dim = 120;
        let op = laplacian(dim);
        let opts = EigenOptions { force_lanczos: true, ..Default::default() };
        let vals = lowest_eigenvalues(&op, 3, &opts).unwrap();
        for (k, v) in vals.iter().enumerate() {
            let exact = 2.0 - 2.0 * (std::f64::consts::PI * (k + 1) as f64 / (dim + 1) as f64).cos();
            assert!((v - exact).abs() < 1e-10, "{k}: {v} vs {exact}");
        }
        let dense = lowest_eigenvalues(&op, 3, &EigenOptions::default()).unwrap();
        for (a, b) in vals.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_kernel_is_resolved() {
        // three zeros scattered along a diagonal whose other entries are >= 1
        let dim = 50;
        let t: Vec<(usize, usize, f64)> =
            (0..dim).map(|i| (i, i, if i % 17 == 3 { 0.0 } else { 1.0 + i as f64 })).collect();
        let op = SparseOperator::from_triplets(dim, t);
        let opts = EigenOptions { force_lanczos: true, ..Default::default() };
        let vals = lowest_eigenvalues(&op, 4, &opts).unwrap();
        assert!(vals[..3].iter().all(|v| v.abs() < 1e-12));
        assert!((vals[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reproducible() {
        let op = laplacian(80);
        let opts = EigenOptions { force_lanczos: true, ..Default::default() };
        let a = lowest_eigenvalues(&op, 2, &opts).unwrap();
        let b = lowest_eigenvalues(&op, 2, &opts).unwrap();
        assert_eq!(a, b);
    }
}
