//! Small dense linear-algebra helpers shared by the graph, core and stepsize modules.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of `(m + m') / 2`, eigenvalues sorted ascending.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteMatrix);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let n = m.nrows();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    symmetric_eigen(m).map(|(v, _)| v)
}

/// Largest eigenvalue magnitude of a symmetric matrix.
pub fn spectral_radius_sym(m: &DMatrix<f64>) -> Result<f64> {
    let ev = symmetric_eigenvalues(m)?;
    Ok(ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix. Eigenvalues at or
/// below `1e-9 * rho` are treated as zero.
pub fn pseudo_inverse_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = symmetric_eigen(m)?;
    let rho = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-9 * rho;
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &v) in vals.iter().enumerate() {
        if v > tol {
            let col = vecs.column(k);
            out += (col * col.transpose()) / v;
        }
    }
    Ok(out)
}

pub fn matrix_power(m: &DMatrix<f64>, power: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..power {
        out = &out * m;
    }
    out
}

/// Golden-section minimisation of a unimodal function on `[lo, hi]`.
pub fn golden_section_min<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Frobenius norm of a matrix; for single-column matrices this is the Euclidean norm.
pub fn frob(m: &DMatrix<f64>) -> f64 {
    m.norm()
}
