//! Randomized property tests over the tensor algebra kernels.

use proptest::collection::vec as pvec;
use proptest::prelude::*;

use tea_core::attention::{row_softmax, Activation};
use tea_core::decomp::{hosvd, tucker_relative_error};
use tea_core::tensor::{fold, mode_n_product, unfold, DenseTensor, Matrix};

/// Arbitrary small tensor: order 1..=5, extents 1..=4, finite entries.
fn arb_tensor() -> impl Strategy<Value = DenseTensor> {
    pvec(1usize..=4, 1..=5)
        .prop_flat_map(|shape| {
            let len: usize = shape.iter().product();
            (Just(shape), pvec(-10.0f64..10.0, len..=len))
        })
        .prop_map(|(shape, data)| DenseTensor::new(shape, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unfold_fold_round_trip(t in arb_tensor(), mode_sel in 0usize..5) {
        let mode = mode_sel % t.order();
        let m = unfold(&t, mode).unwrap();
        let back = fold(&m, mode, t.shape()).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert_eq!(back.data(), t.data());
    }

    #[test]
    fn unfold_preserves_multiset_and_norm(t in arb_tensor(), mode_sel in 0usize..5) {
        let mode = mode_sel % t.order();
        let m = unfold(&t, mode).unwrap();
        prop_assert_eq!(m.rows() * m.cols(), t.len());
        let norm_m: f64 = m.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm_m - t.frobenius_norm()).abs() <= 1e-9 * (1.0 + norm_m));
    }

    #[test]
    fn mode_product_identity_is_identity(t in arb_tensor(), mode_sel in 0usize..5) {
        let mode = mode_sel % t.order();
        let eye = Matrix::identity(t.shape()[mode]);
        let out = mode_n_product(&t, &eye, mode).unwrap();
        prop_assert_eq!(out.data(), t.data());
    }

    #[test]
    fn mode_product_is_linear_in_tensor(
        t in arb_tensor(),
        mode_sel in 0usize..5,
        alpha in -3.0f64..3.0,
    ) {
        let mode = mode_sel % t.order();
        let u = Matrix::new(
            2,
            t.shape()[mode],
            (0..2 * t.shape()[mode]).map(|i| (i as f64 * 0.37).sin()).collect(),
        ).unwrap();
        let a = mode_n_product(&t.scale(alpha), &u, mode).unwrap();
        let b = mode_n_product(&t, &u, mode).unwrap().scale(alpha);
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        cols in 1usize..6,
        data in pvec(-30.0f64..30.0, 30),
    ) {
        let m = Matrix::new(rows, cols, data[..rows * cols].to_vec()).unwrap();
        let p = row_softmax(&m);
        for r in 0..rows {
            let s: f64 = (0..cols).map(|c| p.at(r, c)).sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            for c in 0..cols {
                prop_assert!(p.at(r, c) >= 0.0);
            }
        }
    }

    #[test]
    fn activations_are_pure_and_monotone(x in -50.0f64..50.0, y in -50.0f64..50.0) {
        for act in [Activation::Relu, Activation::LeakyRelu(0.01)] {
            prop_assert_eq!(act.apply(x), act.apply(x));
            if x <= y {
                prop_assert!(act.apply(x) <= act.apply(y));
            }
        }
    }

    #[test]
    fn full_rank_hosvd_is_exact(data in pvec(-5.0f64..5.0, 24)) {
        let t = DenseTensor::new(vec![2, 3, 4], data).unwrap();
        let ranks = [2usize, 3, 4];
        let f = hosvd(&t, &ranks).unwrap();
        let rel = tucker_relative_error(&t, &f).unwrap();
        prop_assert!(rel <= 1e-9, "rel {}", rel);
    }

    #[test]
    fn truncated_hosvd_error_bounded_by_one(data in pvec(-5.0f64..5.0, 24)) {
        let t = DenseTensor::new(vec![2, 3, 4], data).unwrap();
        prop_assume!(t.frobenius_norm() > 1e-6);
        let f = hosvd(&t, &[1, 2, 2]).unwrap();
        let rel = tucker_relative_error(&t, &f).unwrap();
        prop_assert!(rel <= 1.0 + 1e-12);
    }
}
