use crate::ndnn::Tensor;
use crate::scalar::Scalar;

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Passes `grad_out` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_out.clone();
    for (d, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *d = T::zero();
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnn::gradcheck::{central_difference, relative_error};

    #[test]
    fn clamps_negatives() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let p = Tensor::<f64>::from_vec(&[3], vec![0.5, 1.0, 2.0]).unwrap();
        assert_eq!(relu(&p), p);
    }

    #[test]
    fn gradient_matches_finite_differences_away_from_kink() {
        let xs: Vec<f64> = (0..40).map(|i| -2.0 + 0.1 * i as f64 + 0.0137).collect();
        let x = Tensor::from_vec(&[40], xs).unwrap();
        let probe = x.map(|v| (v * 3.1).cos());
        let g = relu_backward(&probe, &x);
        for i in 0..x.len() {
            if x.data()[i].abs() <= 1e-3 {
                continue;
            }
            let num = central_difference(1e-5, |d| {
                let mut xp = x.clone();
                xp.data_mut()[i] += d;
                relu(&xp).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
            });
            assert!(relative_error(g.data()[i], num) <= 1e-4);
        }
    }
}
