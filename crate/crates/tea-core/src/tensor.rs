//! Dense order-M tensors and the multilinear primitives everything else
//! builds on.
//!
//! Storage is row-major with the last index fastest. Mode-k unfolding uses
//! the Kolda–Bader cyclical convention: element `(i_1, …, i_M)` of the tensor
//! maps to row `i_k` and column `j = Σ_{m≠k} i_m · J_m` of the unfolding,
//! where `J_m = Π_{p<m, p≠k} D_p` (all indices 0-based), i.e. the earliest
//! non-unfolded index varies fastest along the columns.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};

/// Dense real-valued tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidArgument(format!(
                "shape must be non-empty with positive extents, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(TensorError::ShapeError(format!(
                "data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len]).expect("zeros: invalid shape")
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Linear offset of a multi-index (row-major, last index fastest).
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order());
        let mut off = 0;
        for (i, (&ix, &d)) in idx.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < d, "index {ix} out of bounds at mode {i}");
            let _ = i;
            off = off * d + ix;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    /// Reinterpret with a new shape of the same total length. Free in
    /// row-major storage.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(shape_mismatch(&self.shape, &other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_mismatch(&self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

fn shape_mismatch(a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeError(format!("shapes {a:?} and {b:?} do not agree"))
}

/// Order-2 tensor with dedicated row/column accessors. Interchangeable with
/// an order-2 [`DenseTensor`] via `From`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(TensorError::InvalidArgument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(TensorError::ShapeError(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols]).expect("zeros: invalid dims")
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.at(r, c));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeError(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(r, k);
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }
}

impl From<Matrix> for DenseTensor {
    fn from(m: Matrix) -> Self {
        DenseTensor::new(vec![m.rows, m.cols], m.data).expect("matrix is a valid order-2 tensor")
    }
}

impl TryFrom<DenseTensor> for Matrix {
    type Error = TensorError;

    fn try_from(t: DenseTensor) -> Result<Self> {
        if t.order() != 2 {
            return Err(TensorError::ShapeError(format!(
                "expected order-2 tensor, got order {}",
                t.order()
            )));
        }
        Matrix::new(t.shape[0], t.shape[1], t.data)
    }
}

/// Iterate all multi-indices of `shape` in row-major order (last fastest).
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; shape.len()];
    loop {
        f(&idx);
        let mut m = shape.len();
        loop {
            if m == 0 {
                return;
            }
            m -= 1;
            idx[m] += 1;
            if idx[m] < shape[m] {
                break;
            }
            idx[m] = 0;
        }
    }
}

/// Column index of a multi-index in the mode-k unfolding (Kolda–Bader).
fn unfold_col(idx: &[usize], shape: &[usize], mode: usize) -> usize {
    let mut col = 0;
    let mut stride = 1;
    for m in 0..shape.len() {
        if m == mode {
            continue;
        }
        col += idx[m] * stride;
        stride *= shape[m];
    }
    col
}

/// Mode-k unfolding (matricization) of `t`, of shape `D_k × Π_{m≠k} D_m`.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    if mode >= t.order() {
        return Err(TensorError::InvalidMode {
            mode,
            order: t.order(),
        });
    }
    let rows = t.shape()[mode];
    let cols = t.len() / rows;
    let mut m = Matrix::zeros(rows, cols);
    let mut off = 0;
    for_each_index(t.shape(), |idx| {
        m.set(idx[mode], unfold_col(idx, t.shape(), mode), t.data[off]);
        off += 1;
    });
    Ok(m)
}

/// Exact inverse of [`unfold`].
pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    if mode >= shape.len() {
        return Err(TensorError::InvalidMode {
            mode,
            order: shape.len(),
        });
    }
    let total: usize = shape.iter().product();
    if m.rows() != shape[mode] || m.rows() * m.cols() != total {
        return Err(TensorError::ShapeError(format!(
            "{}x{} matrix inconsistent with shape {:?} at mode {}",
            m.rows(),
            m.cols(),
            shape,
            mode
        )));
    }
    let mut t = DenseTensor::zeros(shape.to_vec());
    let mut off = 0;
    for_each_index(shape, |idx| {
        t.data[off] = m.at(idx[mode], unfold_col(idx, shape, mode));
        off += 1;
    });
    Ok(t)
}

/// Mode-k product `t ×_k u`: contracts mode `k` of `t` with the columns of
/// `u`, replacing extent `D_k` with `u.rows()`.
pub fn mode_n_product(t: &DenseTensor, u: &Matrix, mode: usize) -> Result<DenseTensor> {
    if mode >= t.order() {
        return Err(TensorError::InvalidMode {
            mode,
            order: t.order(),
        });
    }
    if u.cols() != t.shape()[mode] {
        return Err(TensorError::ShapeError(format!(
            "matrix with {} columns cannot contract mode {} of extent {}",
            u.cols(),
            mode,
            t.shape()[mode]
        )));
    }
    let unfolded = unfold(t, mode)?;
    let product = u.matmul(&unfolded)?;
    let mut new_shape = t.shape().to_vec();
    new_shape[mode] = u.rows();
    fold(&product, mode, &new_shape)
}

/// Contracts the trailing feature modes of `x` (shape `L × f_1 × … × f_F`)
/// against the matching leading modes of `w` (shape `f_1 × … × f_F × A`),
/// producing the `L × A` matrix `out[ℓ,a] = Σ x[ℓ,·]·w[·,a]`.
pub fn contract_feature_modes(x: &DenseTensor, w: &DenseTensor) -> Result<Matrix> {
    if x.order() < 2 || w.order() < 2 {
        return Err(TensorError::ShapeError(
            "contract_feature_modes needs order >= 2 operands".into(),
        ));
    }
    let feat = &x.shape()[1..];
    let wfeat = &w.shape()[..w.order() - 1];
    if feat != wfeat {
        return Err(TensorError::ShapeError(format!(
            "feature modes {:?} of x do not match leading modes {:?} of w",
            feat, wfeat
        )));
    }
    let l = x.shape()[0];
    let a = w.shape()[w.order() - 1];
    let f: usize = feat.iter().product();
    // Row-major storage makes both reshapes free.
    let xm = Matrix::new(l, f, x.data().to_vec())?;
    let wm = Matrix::new(f, a, w.data().to_vec())?;
    xm.matmul(&wm)
}

/// Outer product `v_1 ∘ v_2 ∘ … ∘ v_M`.
pub fn outer_product(vectors: &[&[f64]]) -> Result<DenseTensor> {
    if vectors.is_empty() {
        return Err(TensorError::InvalidArgument(
            "outer product of an empty vector list".into(),
        ));
    }
    if vectors.iter().any(|v| v.is_empty()) {
        return Err(TensorError::InvalidArgument(
            "outer product with an empty vector".into(),
        ));
    }
    let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
    let mut t = DenseTensor::zeros(shape.clone());
    let mut off = 0;
    for_each_index(&shape, |idx| {
        let mut p = 1.0;
        for (m, &i) in idx.iter().enumerate() {
            p *= vectors[m][i];
        }
        t.data[off] = p;
        off += 1;
    });
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_tensor(shape: &[usize], seed: u64) -> DenseTensor {
        let mut rng = SeededRng::new(seed);
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.uniform(-1.0, 1.0)).collect();
        DenseTensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn unfold_mode0_of_matrix_is_identity() {
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = unfold(&t, 0).unwrap();
        assert_eq!(m.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((m.rows(), m.cols()), (2, 2));
    }

    #[test]
    fn unfold_zero_tensor_shape() {
        let t = DenseTensor::zeros(vec![2, 3, 4]);
        let m = unfold(&t, 1).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 8));
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unfold_mode_out_of_range() {
        let t = DenseTensor::zeros(vec![2, 2]);
        assert!(matches!(
            unfold(&t, 2),
            Err(TensorError::InvalidMode { mode: 2, order: 2 })
        ));
    }

    /// Brute-force enumerator applying the Kolda–Bader column formula
    /// directly, independent of the implementation's traversal.
    fn unfold_oracle(t: &DenseTensor, mode: usize) -> Matrix {
        let rows = t.shape()[mode];
        let cols = t.len() / rows;
        let mut m = Matrix::zeros(rows, cols);
        for_each_index(t.shape(), |idx| {
            let mut col = 0;
            let mut stride = 1;
            for k in 0..t.order() {
                if k != mode {
                    col += idx[k] * stride;
                    stride *= t.shape()[k];
                }
            }
            m.set(idx[mode], col, t.get(idx));
        });
        m
    }

    #[test]
    fn unfold_2x2x2_matches_enumeration_oracle() {
        let t =
            DenseTensor::new(vec![2, 2, 2], (1..=8).map(|v| v as f64).collect()).unwrap();
        for mode in 0..3 {
            let got = unfold(&t, mode).unwrap();
            let want = unfold_oracle(&t, mode);
            assert_eq!(got, want, "mode {mode}");
        }
        // Spot-check mode-0 explicitly: row-major data 1..8 with KB columns
        // (i1 fastest over the remaining modes i2, i3 -> i2 fastest).
        let m0 = unfold(&t, 0).unwrap();
        assert_eq!(m0.row(0), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(m0.row(1), &[5.0, 7.0, 6.0, 8.0]);
    }

    #[test]
    fn fold_round_trip_3x4x5_every_mode() {
        let t = random_tensor(&[3, 4, 5], 7);
        for mode in 0..3 {
            let back = fold(&unfold(&t, mode).unwrap(), mode, t.shape()).unwrap();
            assert_eq!(back, t, "mode {mode}");
        }
    }

    #[test]
    fn fold_shape_mismatch() {
        let m = Matrix::zeros(3, 5);
        assert!(matches!(
            fold(&m, 0, &[3, 4]),
            Err(TensorError::ShapeError(_))
        ));
    }

    #[test]
    fn mode_n_product_identity() {
        let t = random_tensor(&[2, 3, 4], 11);
        for mode in 0..3 {
            let id = Matrix::identity(t.shape()[mode]);
            let out = mode_n_product(&t, &id, mode).unwrap();
            assert_eq!(out, t);
        }
    }

    #[test]
    fn mode_n_product_rank1_matches_outer_product_oracle() {
        let a = [1.0, -2.0, 0.5];
        let b = [2.0, 1.0];
        let c = [0.3, -1.0, 2.0, 4.0];
        let t = outer_product(&[&a, &b, &c]).unwrap();
        let u = Matrix::new(2, 3, vec![1.0, 0.0, 2.0, -1.0, 3.0, 0.5]).unwrap();
        let out = mode_n_product(&t, &u, 0).unwrap();
        // Oracle: (U a) ∘ b ∘ c by triple loop.
        let ua: alloc::vec::Vec<f64> = (0..2)
            .map(|r| (0..3).map(|k| u.at(r, k) * a[k]).sum())
            .collect();
        let want = outer_product(&[&ua, &b, &c]).unwrap();
        for (x, y) in out.data().iter().zip(want.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn mode_n_product_scalar_like() {
        let t = DenseTensor::new(vec![1, 1, 1], vec![3.5]).unwrap();
        let u = Matrix::new(1, 1, vec![2.0]).unwrap();
        let out = mode_n_product(&t, &u, 0).unwrap();
        assert_eq!(out.data(), &[7.0]);
    }

    #[test]
    fn mode_n_product_dimension_mismatch() {
        let t = DenseTensor::zeros(vec![2, 3]);
        let u = Matrix::zeros(2, 4);
        assert!(matches!(
            mode_n_product(&t, &u, 0),
            Err(TensorError::ShapeError(_))
        ));
    }

    #[test]
    fn contract_all_ones() {
        let x = DenseTensor::new(vec![2, 2, 2], vec![1.0; 8]).unwrap();
        let w = DenseTensor::new(vec![2, 2, 3], vec![1.0; 12]).unwrap();
        let out = contract_feature_modes(&x, &w).unwrap();
        assert_eq!((out.rows(), out.cols()), (2, 3));
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn contract_zero_weight() {
        let x = random_tensor(&[3, 2, 2], 5);
        let w = DenseTensor::zeros(vec![2, 2, 4]);
        let out = contract_feature_modes(&x, &w).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn contract_bilinearity() {
        let x = random_tensor(&[3, 2, 4], 9);
        let w1 = random_tensor(&[2, 4, 3], 10);
        let w2 = random_tensor(&[2, 4, 3], 12);
        let lhs = contract_feature_modes(&x, &w1.add(&w2).unwrap()).unwrap();
        let a = contract_feature_modes(&x, &w1).unwrap();
        let b = contract_feature_modes(&x, &w2).unwrap();
        for i in 0..lhs.data().len() {
            assert!((lhs.data()[i] - (a.data()[i] + b.data()[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn contract_matches_quadruple_loop_oracle() {
        let x = random_tensor(&[4, 3, 5], 21);
        let w = random_tensor(&[3, 5, 2], 22);
        let out = contract_feature_modes(&x, &w).unwrap();
        for l in 0..4 {
            for a in 0..2 {
                let mut want = 0.0;
                for i in 0..3 {
                    for j in 0..5 {
                        want += x.get(&[l, i, j]) * w.get(&[i, j, a]);
                    }
                }
                let rel = (out.at(l, a) - want).abs() / want.abs().max(1e-12);
                assert!(rel <= 1e-12);
            }
        }
    }

    #[test]
    fn outer_product_basis() {
        let t = outer_product(&[&[1.0, 0.0], &[1.0, 0.0]]).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn outer_product_hand_values() {
        let t = outer_product(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(t.data(), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn outer_product_zero_vector() {
        let t = outer_product(&[&[0.0, 0.0], &[1.0, 2.0]]).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outer_product_empty_list() {
        assert!(matches!(
            outer_product(&[]),
            Err(TensorError::InvalidArgument(_))
        ));
    }

    #[test]
    fn frobenius_norm_cases() {
        assert_eq!(DenseTensor::zeros(vec![3, 2]).frobenius_norm(), 0.0);
        let ones = DenseTensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
        assert!((ones.frobenius_norm() - libm::sqrt(6.0)).abs() <= 1e-15);
        let t = random_tensor(&[4, 5], 3);
        let n2 = t.frobenius_norm() * t.frobenius_norm();
        let dot = t.inner(&t).unwrap();
        assert!((n2 - dot).abs() / dot <= 1e-12);
    }

    #[test]
    fn mode_n_product_commutes_across_modes() {
        let t = random_tensor(&[3, 4, 5], 31);
        let a = Matrix::new(2, 3, random_tensor(&[2, 3], 32).data().to_vec()).unwrap();
        let b = Matrix::new(6, 4, random_tensor(&[6, 4], 33).data().to_vec()).unwrap();
        let lhs = mode_n_product(&mode_n_product(&t, &a, 0).unwrap(), &b, 1).unwrap();
        let rhs = mode_n_product(&mode_n_product(&t, &b, 1).unwrap(), &a, 0).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() / y.abs().max(1e-12) <= 1e-12);
        }
    }
}
