//! Forecast error metrics.

use crate::error::{Result, TensorError};
use crate::tensor::DenseTensor;

fn check_pair(pred: &DenseTensor, target: &DenseTensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeError(
            "metric operands must share a shape".into(),
        ));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse(pred: &DenseTensor, target: &DenseTensor) -> Result<f64> {
    check_pair(pred, target)?;
    let n = pred.data().len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Mean absolute error over all elements.
pub fn mae(pred: &DenseTensor, target: &DenseTensor) -> Result<f64> {
    check_pair(pred, target)?;
    let n = pred.data().len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn mse_hand_computed() {
        let p = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 0.0, 6.0, 4.0]).unwrap();
        // ((0)^2 + (2)^2 + (-3)^2 + 0^2) / 4 = 13/4
        assert!((mse(&p, &t).unwrap() - 3.25).abs() <= 1e-15);
        assert!((mae(&p, &t).unwrap() - 1.25).abs() <= 1e-15);
    }

    #[test]
    fn zero_error_on_identical_inputs() {
        let p = DenseTensor::new(vec![3], vec![0.5, -0.5, 2.0]).unwrap();
        assert_eq!(mse(&p, &p).unwrap(), 0.0);
        assert_eq!(mae(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn all_ones_difference() {
        let p = DenseTensor::new(vec![2, 3], vec![2.0; 6]).unwrap();
        let t = DenseTensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(mse(&p, &t).unwrap(), 1.0);
        assert_eq!(mae(&p, &t).unwrap(), 1.0);
    }

    #[test]
    fn loop_sum_oracle_on_random_pair() {
        use crate::rng::SeededRng;
        let mut rng = SeededRng::new(77);
        let a = DenseTensor::new(vec![3, 4], (0..12).map(|_| rng.normal()).collect()).unwrap();
        let b = DenseTensor::new(vec![3, 4], (0..12).map(|_| rng.normal()).collect()).unwrap();
        let mut se = 0.0;
        let mut ae = 0.0;
        for i in 0..12 {
            let d = a.data()[i] - b.data()[i];
            se += d * d;
            ae += d.abs();
        }
        assert!((mse(&a, &b).unwrap() - se / 12.0).abs() <= 1e-12);
        assert!((mae(&a, &b).unwrap() - ae / 12.0).abs() <= 1e-12);
    }

    #[test]
    fn symmetry_and_triangle_sanity() {
        use crate::rng::SeededRng;
        let mut rng = SeededRng::new(78);
        let mk = |rng: &mut SeededRng| {
            DenseTensor::new(vec![5], (0..5).map(|_| rng.normal()).collect()).unwrap()
        };
        for _ in 0..20 {
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let c = mk(&mut rng);
            assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
            assert!(mae(&a, &c).unwrap() <= mae(&a, &b).unwrap() + mae(&b, &c).unwrap() + 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = DenseTensor::zeros(vec![2]);
        let t = DenseTensor::zeros(vec![3]);
        assert!(mse(&p, &t).is_err());
    }
}
