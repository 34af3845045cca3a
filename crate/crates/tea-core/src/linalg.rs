//! Dense linear algebra kernels: SVD (one-sided Jacobi, with a Gram-matrix
//! shortcut for short fat/thin unfoldings), symmetric Jacobi eigensolver,
//! and a ridge-regularized SPD solver.
//!
//! All routines are deterministic: fixed sweep orders, no pivot randomness,
//! and a fixed sign convention (the entry of largest magnitude in each
//! singular/eigen-vector is made non-negative).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::tensor::Matrix;

const JACOBI_SWEEPS: usize = 60;
const JACOBI_TOL: f64 = 1e-14;

/// Gram shortcut threshold on the short dimension; above this the SVD runs
/// on the matrix directly.
const GRAM_DIM_LIMIT: usize = 64;

/// Left singular vectors and singular values of `a`.
///
/// `u` is `m × k` with orthonormal columns, `s` holds the `k = min(m, n)`
/// singular values in descending order. Columns past the numerical rank are
/// filled with an orthonormal completion so `uᵀu = I` always holds.
pub struct SvdLeft {
    pub u: Matrix,
    pub s: Vec<f64>,
}

pub fn svd_left(a: &Matrix) -> SvdLeft {
    let (m, n) = (a.rows(), a.cols());
    let k = m.min(n);
    if k <= GRAM_DIM_LIMIT {
        svd_left_gram(a)
    } else {
        svd_left_jacobi(a)
    }
}

/// Gram route: eigen-decompose `A·Aᵀ` (or `Aᵀ·A` when `n < m`) and recover
/// the left factor. Identical to the direct route within tolerance, much
/// cheaper when the short dimension is small and the other is long.
fn svd_left_gram(a: &Matrix) -> SvdLeft {
    let (m, n) = (a.rows(), a.cols());
    if m <= n {
        let g = gram_aat(a);
        let (mut vals, u) = sym_eig(&g);
        for v in vals.iter_mut() {
            *v = libm::sqrt(v.max(0.0));
        }
        SvdLeft {
            u: fix_signs(u),
            s: vals,
        }
    } else {
        // Eigenvectors of AᵀA are the right factor; map back through A.
        let at = a.transpose();
        let g = gram_aat(&at);
        let (mut vals, v) = sym_eig(&g);
        for x in vals.iter_mut() {
            *x = libm::sqrt(x.max(0.0));
        }
        let av = a.matmul(&v).expect("gram svd: shape agreement");
        let u = normalize_and_complete(av, &vals);
        SvdLeft {
            u: fix_signs(u),
            s: vals,
        }
    }
}

/// Direct route: one-sided Jacobi on the thin orientation.
fn svd_left_jacobi(a: &Matrix) -> SvdLeft {
    let (m, n) = (a.rows(), a.cols());
    if m >= n {
        let (u, s, _v) = one_sided_jacobi(a);
        SvdLeft {
            u: fix_signs(u),
            s,
        }
    } else {
        // A = (Aᵀ)ᵀ = V Σ Uᵀ, so the right factor of Aᵀ is our left factor.
        let (_u, s, v) = one_sided_jacobi(&a.transpose());
        SvdLeft {
            u: fix_signs(v),
            s,
        }
    }
}

fn gram_aat(a: &Matrix) -> Matrix {
    let m = a.rows();
    let mut g = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let dot: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum();
            g.set(i, j, dot);
            g.set(j, i, dot);
        }
    }
    g
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues in
/// descending order and the matching orthonormal eigenvectors as columns.
pub fn sym_eig(g: &Matrix) -> (Vec<f64>, Matrix) {
    let n = g.rows();
    debug_assert_eq!(n, g.cols());
    let mut a = g.clone();
    let mut v = Matrix::identity(n);
    let scale = {
        let f = a.frobenius_norm();
        if f == 0.0 {
            1.0
        } else {
            f
        }
    };
    for _ in 0..JACOBI_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.at(p, q) * a.at(p, q);
            }
        }
        if libm::sqrt(off) <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq.abs() <= JACOBI_TOL * scale * 1e-2 {
                    continue;
                }
                let app = a.at(p, p);
                let aqq = a.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + libm::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                // Rotate rows/cols p,q of A and columns p,q of V.
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.at(j, j)
            .partial_cmp(&a.at(i, i))
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let vals: Vec<f64> = order.iter().map(|&i| a.at(i, i)).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (newc, &oldc) in order.iter().enumerate() {
        for r in 0..n {
            vecs.set(r, newc, v.at(r, oldc));
        }
    }
    (vals, vecs)
}

/// One-sided Jacobi on `a` with `rows >= cols`: returns `(U, Σ, V)` with
/// `A = U diag(Σ) Vᵀ`, singular values descending.
fn one_sided_jacobi(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (m, n) = (a.rows(), a.cols());
    debug_assert!(m >= n);
    // Work column-major for cheap column rotations.
    let mut w: Vec<Vec<f64>> = (0..n).map(|c| (0..m).map(|r| a.at(r, c)).collect()).collect();
    let mut v = Matrix::identity(n);
    let scale2: f64 = {
        let f: f64 = a.data().iter().map(|x| x * x).sum();
        if f == 0.0 {
            1.0
        } else {
            f
        }
    };
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for r in 0..m {
                    app += w[p][r] * w[p][r];
                    aqq += w[q][r] * w[q][r];
                    apq += w[p][r] * w[q][r];
                }
                if apq.abs() <= JACOBI_TOL * libm::sqrt(app * aqq).max(JACOBI_TOL * scale2) {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + libm::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for r in 0..m {
                    let wp = w[p][r];
                    let wq = w[q][r];
                    w[p][r] = c * wp - s * wq;
                    w[q][r] = s * wp + c * wq;
                }
                for r in 0..n {
                    let vp = v.at(r, p);
                    let vq = v.at(r, q);
                    v.set(r, p, c * vp - s * vq);
                    v.set(r, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut norms: Vec<f64> = w
        .iter()
        .map(|col| libm::sqrt(col.iter().map(|x| x * x).sum()))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        norms[j]
            .partial_cmp(&norms[i])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut u = Matrix::zeros(m, n);
    let mut vv = Matrix::zeros(n, n);
    let mut s = vec![0.0; n];
    for (newc, &oldc) in order.iter().enumerate() {
        s[newc] = norms[oldc];
        if norms[oldc] > 0.0 {
            for r in 0..m {
                u.set(r, newc, w[oldc][r] / norms[oldc]);
            }
        }
        for r in 0..n {
            vv.set(r, newc, v.at(r, oldc));
        }
    }
    norms.clear();
    let u = complete_zero_columns(u, &s);
    (u, s, vv)
}

/// Normalize the columns of `av` by the singular values; columns belonging
/// to (numerically) zero singular values get an orthonormal completion.
fn normalize_and_complete(mut av: Matrix, s: &[f64]) -> Matrix {
    let tol = s.first().copied().unwrap_or(0.0) * 1e-13;
    for c in 0..av.cols() {
        if s[c] > tol && s[c] > 0.0 {
            for r in 0..av.rows() {
                let v = av.at(r, c) / s[c];
                av.set(r, c, v);
            }
        } else {
            for r in 0..av.rows() {
                av.set(r, c, 0.0);
            }
        }
    }
    complete_zero_columns(av, s)
}

/// Replace all-zero columns with unit vectors orthogonal to the existing
/// columns, chosen deterministically from the canonical basis.
fn complete_zero_columns(mut u: Matrix, s: &[f64]) -> Matrix {
    let tol = s.first().copied().unwrap_or(0.0) * 1e-13;
    let (m, n) = (u.rows(), u.cols());
    for c in 0..n {
        let norm2: f64 = (0..m).map(|r| u.at(r, c) * u.at(r, c)).sum();
        if s[c] > tol && norm2 > 0.5 {
            continue;
        }
        // Gram-Schmidt each basis vector against the current columns and
        // take the first with a meaningful remainder.
        'basis: for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            for c2 in 0..n {
                if c2 == c {
                    continue;
                }
                let dot: f64 = (0..m).map(|r| cand[r] * u.at(r, c2)).sum();
                for (r, cv) in cand.iter_mut().enumerate() {
                    *cv -= dot * u.at(r, c2);
                }
            }
            let norm = libm::sqrt(cand.iter().map(|x| x * x).sum());
            if norm > 1e-6 {
                for (r, cv) in cand.iter().enumerate() {
                    u.set(r, c, cv / norm);
                }
                break 'basis;
            }
        }
    }
    u
}

/// Make the largest-magnitude entry of each column non-negative.
fn fix_signs(mut u: Matrix) -> Matrix {
    for c in 0..u.cols() {
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for r in 0..u.rows() {
            let a = u.at(r, c).abs();
            if a > best_abs {
                best_abs = a;
                best = r;
            }
        }
        if u.at(best, c) < 0.0 {
            for r in 0..u.rows() {
                let v = -u.at(r, c);
                u.set(r, c, v);
            }
        }
    }
    u
}

/// Solve `X (A + ridge·I) = B` for X (i.e. right-division by an SPD matrix)
/// via Cholesky. The ridge is escalated on breakdown so collinear Gram
/// systems never crash.
pub fn solve_spd_right(b: &Matrix, a: &Matrix, ridge: f64) -> Result<Matrix> {
    if a.rows() != a.cols() || b.cols() != a.rows() {
        return Err(TensorError::ShapeError(
            "solve_spd_right: dimension mismatch".into(),
        ));
    }
    let n = a.rows();
    let mut lam = ridge.max(0.0);
    for _attempt in 0..8 {
        if let Some(l) = cholesky(a, lam) {
            // Solve (L Lᵀ) xᵀ = bᵀ row by row of B.
            let mut out = Matrix::zeros(b.rows(), n);
            for r in 0..b.rows() {
                let mut y = vec![0.0; n];
                for i in 0..n {
                    let mut sum = b.at(r, i);
                    for k in 0..i {
                        sum -= l.at(i, k) * y[k];
                    }
                    y[i] = sum / l.at(i, i);
                }
                for i in (0..n).rev() {
                    let mut sum = y[i];
                    for k in (i + 1)..n {
                        sum -= l.at(k, i) * out.at(r, k);
                    }
                    out.set(r, i, sum / l.at(i, i));
                }
            }
            return Ok(out);
        }
        lam = if lam == 0.0 { 1e-12 } else { lam * 100.0 };
    }
    Err(TensorError::DecompositionError(
        "Cholesky failed even with escalated ridge".into(),
    ))
}

fn cholesky(a: &Matrix, ridge: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.at(i, j) + if i == j { ridge } else { 0.0 };
            for k in 0..j {
                sum -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l.set(i, j, libm::sqrt(sum));
            } else {
                l.set(i, j, sum / l.at(j, j));
            }
        }
    }
    Some(l)
}

/// ‖UᵀU − I‖_F, the column-orthonormality defect.
pub fn orthonormality_defect(u: &Matrix) -> f64 {
    let n = u.cols();
    let mut defect = 0.0;
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = (0..u.rows()).map(|r| u.at(r, i) * u.at(r, j)).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            defect += (dot - want) * (dot - want);
        }
    }
    libm::sqrt(defect)
}
