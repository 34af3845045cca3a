//! Low-rank decomposition engines: Tucker (HOSVD and HOOI), canonical
//! polyadic (ALS), and Tensor-Train (TT-SVD).
//!
//! All three are deterministic given (input, parameters, seed). Per-mode
//! SVDs run sequentially in mode order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::linalg::{solve_spd_right, svd_left, SvdLeft};
use crate::rng::SeededRng;
use crate::tensor::{mode_n_product, outer_product, unfold, DenseTensor, Matrix};

pub const HOOI_DEFAULT_TOL: f64 = 1e-8;
pub const HOOI_DEFAULT_MAX_ITER: usize = 50;
pub const CP_DEFAULT_TOL: f64 = 1e-8;
pub const CP_DEFAULT_MAX_ITER: usize = 500;
/// Ridge on the ALS Gram systems; keeps collinear factors solvable.
pub const CP_RIDGE: f64 = 1e-10;

/// Tucker factorization: core tensor plus per-mode loading matrices with
/// orthonormal columns.
#[derive(Debug, Clone)]
pub struct TuckerFactors {
    pub core: DenseTensor,
    pub loadings: Vec<Matrix>,
    pub ranks: Vec<usize>,
}

impl TuckerFactors {
    /// Shape of the represented full tensor.
    pub fn shape(&self) -> Vec<usize> {
        self.loadings.iter().map(|u| u.rows()).collect()
    }
}

/// CP factorization: weight per rank-1 component plus unit-column loadings.
#[derive(Debug, Clone)]
pub struct CpFactors {
    pub weights: Vec<f64>,
    pub loadings: Vec<Matrix>,
}

impl CpFactors {
    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    /// Shape of the represented full tensor.
    pub fn shape(&self) -> Vec<usize> {
        self.loadings.iter().map(|u| u.rows()).collect()
    }
}

/// Tensor-Train factorization as a chain of order-3 cores of shape
/// `R_{i-1} × D_i × R_i`, including the trailing boundary core with
/// `D_{M+1} = R_{M+1} = 1`.
#[derive(Debug, Clone)]
pub struct TtFactors {
    pub cores: Vec<DenseTensor>,
}

fn check_ranks(shape: &[usize], ranks: &[usize]) -> Result<()> {
    if ranks.len() != shape.len() {
        return Err(TensorError::InvalidArgument(format!(
            "expected {} ranks, got {}",
            shape.len(),
            ranks.len()
        )));
    }
    for (&r, &d) in ranks.iter().zip(shape) {
        if r == 0 || r > d {
            return Err(TensorError::InvalidRank { rank: r, extent: d });
        }
    }
    Ok(())
}

/// One-shot higher-order SVD: loading `U_m` holds the top `R_m` left
/// singular vectors of the mode-m unfolding; the core is the projection
/// `t ×_1 U_1ᵀ ×_2 … ×_M U_Mᵀ`.
pub fn hosvd(t: &DenseTensor, ranks: &[usize]) -> Result<TuckerFactors> {
    check_ranks(t.shape(), ranks)?;
    let mut loadings = Vec::with_capacity(t.order());
    for mode in 0..t.order() {
        let SvdLeft { u, .. } = svd_left(&unfold(t, mode)?);
        loadings.push(take_columns(&u, ranks[mode]));
    }
    let core = project_core(t, &loadings)?;
    Ok(TuckerFactors {
        core,
        loadings,
        ranks: ranks.to_vec(),
    })
}

/// Higher-order orthogonal iteration initialized from [`hosvd`]. Returns the
/// factors together with the per-iteration fit history
/// (`fit = ‖core‖_F / ‖t‖_F`, monotone non-decreasing).
pub fn hooi(
    t: &DenseTensor,
    ranks: &[usize],
    max_iter: usize,
    tol: f64,
) -> Result<(TuckerFactors, Vec<f64>)> {
    if max_iter == 0 {
        return Err(TensorError::InvalidArgument("hooi: max_iter must be >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(TensorError::InvalidArgument("hooi: tol must be > 0".into()));
    }
    let mut factors = hosvd(t, ranks)?;
    let norm = t.frobenius_norm();
    if norm == 0.0 {
        return Ok((factors, vec![0.0]));
    }
    let mut fits = vec![factors.core.frobenius_norm() / norm];
    for _ in 0..max_iter {
        for mode in 0..t.order() {
            // Project all modes except `mode`, then refresh its loading.
            let mut y = t.clone();
            for (k, u) in factors.loadings.iter().enumerate() {
                if k != mode {
                    y = mode_n_product(&y, &u.transpose(), k)?;
                }
            }
            let SvdLeft { u, .. } = svd_left(&unfold(&y, mode)?);
            factors.loadings[mode] = take_columns(&u, ranks[mode]);
        }
        factors.core = project_core(t, &factors.loadings)?;
        let fit = factors.core.frobenius_norm() / norm;
        let prev = *fits.last().expect("non-empty fit history");
        fits.push(fit);
        if (fit - prev).abs() < tol {
            break;
        }
    }
    Ok((factors, fits))
}

/// `C ×_1 U_1 ×_2 … ×_M U_M`.
pub fn tucker_reconstruct(f: &TuckerFactors) -> Result<DenseTensor> {
    let mut out = f.core.clone();
    for (mode, u) in f.loadings.iter().enumerate() {
        out = mode_n_product(&out, u, mode)?;
    }
    Ok(out)
}

fn project_core(t: &DenseTensor, loadings: &[Matrix]) -> Result<DenseTensor> {
    let mut core = t.clone();
    for (mode, u) in loadings.iter().enumerate() {
        core = mode_n_product(&core, &u.transpose(), mode)?;
    }
    Ok(core)
}

fn take_columns(u: &Matrix, r: usize) -> Matrix {
    let mut out = Matrix::zeros(u.rows(), r);
    for row in 0..u.rows() {
        for col in 0..r {
            out.set(row, col, u.at(row, col));
        }
    }
    out
}

/// Alternating least squares for a rank-`R` CP model. Returns the factors
/// and the per-sweep relative residual history (monotone non-increasing).
pub fn cp_als(
    t: &DenseTensor,
    rank: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<(CpFactors, Vec<f64>)> {
    if rank == 0 {
        return Err(TensorError::InvalidRank { rank, extent: 0 });
    }
    let order = t.order();
    let norm = t.frobenius_norm();
    let mut rng = SeededRng::new(seed);
    let mut loadings: Vec<Matrix> = t
        .shape()
        .iter()
        .map(|&d| {
            let mut m = Matrix::zeros(d, rank);
            for c in 0..rank {
                let mut col: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
                let n = libm::sqrt(col.iter().map(|x| x * x).sum());
                for v in col.iter_mut() {
                    *v /= n.max(1e-300);
                }
                for (r, &v) in col.iter().enumerate() {
                    m.set(r, c, v);
                }
            }
            m
        })
        .collect();
    let mut weights = vec![0.0; rank];
    let mut history = Vec::new();

    for _sweep in 0..max_iter {
        for mode in 0..order {
            let m = mttkrp(t, &loadings, mode)?;
            let gram = hadamard_grams(&loadings, mode, rank);
            let b = solve_spd_right(&m, &gram, CP_RIDGE)?;
            // Split magnitudes into the weight vector, keep unit columns.
            for c in 0..rank {
                let col_norm =
                    libm::sqrt((0..b.rows()).map(|r| b.at(r, c) * b.at(r, c)).sum());
                weights[c] = col_norm;
                if col_norm > 1e-300 {
                    for r in 0..b.rows() {
                        loadings[mode].set(r, c, b.at(r, c) / col_norm);
                    }
                } else {
                    weights[c] = 0.0;
                    for r in 0..b.rows() {
                        loadings[mode].set(r, c, if r == 0 { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        let factors = CpFactors {
            weights: weights.clone(),
            loadings: loadings.clone(),
        };
        let resid = cp_reconstruct(&factors)?.sub(t)?.frobenius_norm();
        let rel = if norm > 0.0 { resid / norm } else { resid };
        let done = history
            .last()
            .map(|&prev: &f64| (prev - rel).abs() < tol)
            .unwrap_or(false);
        history.push(rel);
        if done || rel <= 1e-14 {
            break;
        }
    }
    let mut factors = CpFactors { weights, loadings };
    // The ridge uniformly shrinks each solve by ~λ; one exact global
    // rescale of the weights removes that bias.
    let recon = cp_reconstruct(&factors)?;
    let denom = recon.inner(&recon)?;
    if denom > 0.0 {
        let alpha = t.inner(&recon)? / denom;
        for w in factors.weights.iter_mut() {
            *w *= alpha;
        }
    }
    Ok((factors, history))
}

/// `Σ_r c_r · u_{1r} ∘ … ∘ u_{Mr}`.
pub fn cp_reconstruct(f: &CpFactors) -> Result<DenseTensor> {
    let shape: Vec<usize> = f.loadings.iter().map(|u| u.rows()).collect();
    let mut out = DenseTensor::zeros(shape);
    for (r, &w) in f.weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let cols: Vec<Vec<f64>> = f
            .loadings
            .iter()
            .map(|u| (0..u.rows()).map(|i| u.at(i, r)).collect())
            .collect();
        let views: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        out = out.add(&outer_product(&views)?.scale(w))?;
    }
    Ok(out)
}

/// A CP model is a Tucker model whose core is super-diagonal with the CP
/// weights on the diagonal.
pub fn cp_to_tucker(f: &CpFactors) -> TuckerFactors {
    let rank = f.weights.len();
    let order = f.loadings.len();
    let mut core = DenseTensor::zeros(vec![rank; order]);
    for (r, &w) in f.weights.iter().enumerate() {
        core.set(&vec![r; order], w);
    }
    TuckerFactors {
        core,
        loadings: f.loadings.clone(),
        ranks: vec![rank; order],
    }
}

/// Matricized-tensor-times-Khatri-Rao-product for mode `skip`.
fn mttkrp(t: &DenseTensor, loadings: &[Matrix], skip: usize) -> Result<Matrix> {
    let rank = loadings[0].cols();
    let unfolded = unfold(t, skip)?;
    let kr = khatri_rao_skip(t.shape(), loadings, skip, rank);
    unfolded.matmul(&kr)
}

/// Khatri-Rao product of all loadings except `skip`, with row ordering
/// matching the unfolding's column convention (earliest mode fastest).
fn khatri_rao_skip(shape: &[usize], loadings: &[Matrix], skip: usize, rank: usize) -> Matrix {
    let rows: usize = shape
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != skip)
        .map(|(_, &d)| d)
        .product();
    let mut kr = Matrix::zeros(rows, rank);
    for j in 0..rows {
        for r in 0..rank {
            let mut stride = 1;
            let mut p = 1.0;
            for (k, &d) in shape.iter().enumerate() {
                if k == skip {
                    continue;
                }
                let ik = (j / stride) % d;
                stride *= d;
                p *= loadings[k].at(ik, r);
            }
            kr.set(j, r, p);
        }
    }
    kr
}

fn hadamard_grams(loadings: &[Matrix], skip: usize, rank: usize) -> Matrix {
    let mut out = Matrix::new(rank, rank, vec![1.0; rank * rank]).expect("square");
    for (k, u) in loadings.iter().enumerate() {
        if k == skip {
            continue;
        }
        for i in 0..rank {
            for j in 0..rank {
                let dot: f64 = (0..u.rows()).map(|r| u.at(r, i) * u.at(r, j)).sum();
                out.set(i, j, out.at(i, j) * dot);
            }
        }
    }
    out
}

/// Truncation policy for [`tt_svd`].
#[derive(Debug, Clone)]
pub enum TtTruncation {
    /// Relative target: total error ≤ eps · ‖t‖_F, budgeted as
    /// eps/√(M−1) · ‖t‖_F per SVD step.
    Eps(f64),
    /// Hard caps on the internal TT ranks R_1 … R_{M-1}.
    MaxRanks(Vec<usize>),
}

/// Sequential-SVD Tensor-Train factorization.
pub fn tt_svd(t: &DenseTensor, trunc: &TtTruncation) -> Result<TtFactors> {
    let order = t.order();
    match trunc {
        TtTruncation::Eps(e) if !(*e > 0.0) => {
            return Err(TensorError::InvalidArgument("tt_svd: eps must be > 0".into()))
        }
        TtTruncation::MaxRanks(r) => {
            if r.len() != order.saturating_sub(1) {
                return Err(TensorError::InvalidArgument(format!(
                    "tt_svd: expected {} internal ranks, got {}",
                    order.saturating_sub(1),
                    r.len()
                )));
            }
            if r.iter().any(|&x| x == 0) {
                return Err(TensorError::InvalidRank { rank: 0, extent: 1 });
            }
        }
        _ => {}
    }
    let norm = t.frobenius_norm();
    let delta = match trunc {
        TtTruncation::Eps(e) => e / libm::sqrt((order.max(2) - 1) as f64) * norm,
        TtTruncation::MaxRanks(_) => 0.0,
    };
    let mut cores = Vec::with_capacity(order + 1);
    let mut data = t.data().to_vec();
    let mut r_prev = 1usize;
    for (i, &d) in t.shape().iter().enumerate().take(order - 1) {
        let rows = r_prev * d;
        let cols = data.len() / rows;
        let a = Matrix::new(rows, cols, data)?;
        let SvdLeft { u, s } = svd_left(&a);
        let k = rows.min(cols);
        let r = match trunc {
            TtTruncation::MaxRanks(ranks) => ranks[i].min(k),
            TtTruncation::Eps(_) => {
                // Keep the smallest leading block whose discarded tail fits
                // in the per-step budget.
                let mut keep = k;
                let mut tail = 0.0;
                for j in (0..k).rev() {
                    if libm::sqrt(tail + s[j] * s[j]) <= delta {
                        tail += s[j] * s[j];
                        keep = j;
                    } else {
                        break;
                    }
                }
                keep.max(1)
            }
        };
        let u_r = take_columns(&u, r);
        cores.push(DenseTensor::new(vec![r_prev, d, r], {
            let mut c = vec![0.0; r_prev * d * r];
            for row in 0..rows {
                for col in 0..r {
                    c[row * r + col] = u_r.at(row, col);
                }
            }
            c
        })?);
        // Remainder for the next step: B = U_rᵀ A.
        let b = u_r.transpose().matmul(&a)?;
        data = b.data().to_vec();
        r_prev = r;
    }
    let last_d = *t.shape().last().expect("order >= 1");
    cores.push(DenseTensor::new(vec![r_prev, last_d, 1], data)?);
    // Boundary core with D = R = 1 per the augmented-chain convention.
    cores.push(DenseTensor::new(vec![1, 1, 1], vec![1.0])?);
    Ok(TtFactors { cores })
}

impl TtFactors {
    /// Internal order (number of data modes, excluding the boundary core).
    pub fn order(&self) -> usize {
        self.cores.len() - 1
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[2]).collect()
    }

    /// Shape of the represented full tensor (middle extents of the data
    /// cores, excluding the boundary core).
    pub fn shape(&self) -> Vec<usize> {
        self.cores[..self.order()]
            .iter()
            .map(|c| c.shape()[1])
            .collect()
    }
}

/// Evaluate one entry of the represented tensor via the matrix-product
/// chain, without materializing anything larger than a rank-sized vector.
pub fn tt_element(f: &TtFactors, idx: &[usize]) -> Result<f64> {
    if idx.len() != f.order() {
        return Err(TensorError::InvalidArgument(format!(
            "expected {} indices, got {}",
            f.order(),
            idx.len()
        )));
    }
    let mut v = vec![1.0f64];
    for (core, &i) in f.cores.iter().zip(idx.iter().chain(core::iter::once(&0))) {
        let (rl, d, rr) = (core.shape()[0], core.shape()[1], core.shape()[2]);
        if i >= d || v.len() != rl {
            return Err(TensorError::ShapeError("tt_element: index/rank mismatch".into()));
        }
        let mut next = vec![0.0; rr];
        for (a, row) in v.iter().enumerate() {
            for (b, out) in next.iter_mut().enumerate() {
                *out += row * core.get(&[a, i, b]);
            }
        }
        v = next;
    }
    Ok(v[0])
}

/// Materialize the full tensor by contracting the chain left to right.
pub fn tt_reconstruct(f: &TtFactors) -> Result<DenseTensor> {
    let shape: Vec<usize> = f.cores[..f.order()].iter().map(|c| c.shape()[1]).collect();
    // Accumulate (Π D_so_far) × R_i.
    let mut acc = Matrix::new(1, 1, vec![1.0])?;
    for core in &f.cores {
        let (rl, d, rr) = (core.shape()[0], core.shape()[1], core.shape()[2]);
        let core_m = Matrix::new(rl, d * rr, core.data().to_vec())?;
        let prod = acc.matmul(&core_m)?; // (P) × (d·rr)
        let p = prod.rows();
        acc = Matrix::new(p * d, rr, prod.data().to_vec())?;
    }
    DenseTensor::new(shape, acc.data().to_vec())
}

/// Relative Frobenius reconstruction error of a Tucker factorization.
pub fn tucker_relative_error(t: &DenseTensor, f: &TuckerFactors) -> Result<f64> {
    let norm = t.frobenius_norm();
    let err = tucker_reconstruct(f)?.sub(t)?.frobenius_norm();
    Ok(if norm > 0.0 { err / norm } else { err })
}

/// Builds a random CP tensor with unit-norm factors; used for
/// generate-then-recover exercises.
pub fn synthetic_cp_tensor(shape: &[usize], rank: usize, seed: u64) -> (DenseTensor, CpFactors) {
    let mut rng = SeededRng::new(seed);
    let mut loadings = Vec::new();
    for &d in shape {
        let mut m = Matrix::zeros(d, rank);
        for c in 0..rank {
            let col: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let n = libm::sqrt(col.iter().map(|x| x * x).sum::<f64>()).max(1e-300);
            for (r, v) in col.iter().enumerate() {
                m.set(r, c, v / n);
            }
        }
        loadings.push(m);
    }
    let weights: Vec<f64> = (0..rank).map(|_| rng.uniform(0.5, 2.0)).collect();
    let f = CpFactors { weights, loadings };
    let t = cp_reconstruct(&f).expect("consistent shapes");
    (t, f)
}

/// Super-diagonal check used by tests and invariant assertions.
pub fn loading_orthonormality_defect(f: &TuckerFactors) -> f64 {
    f.loadings
        .iter()
        .map(crate::linalg::orthonormality_defect)
        .fold(0.0, f64::max)
}
