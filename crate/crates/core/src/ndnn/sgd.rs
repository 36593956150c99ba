use crate::error::{Error, Result};
use crate::ndnn::Tensor;
use crate::scalar::Scalar;

/// Plain stochastic gradient descent: `p <- p - lr * g`.
pub fn sgd_step<T: Scalar>(param: &mut Tensor<T>, grad: &Tensor<T>, learning_rate: T) -> Result<()> {
    if !(learning_rate > T::zero()) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    param.expect_shape(grad.shape())?;
    for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= learning_rate * g;
    }
    Ok(())
}

/// Applies [`sgd_step`] across aligned parameter and gradient lists.
pub fn sgd_update<T: Scalar>(
    params: Vec<&mut Tensor<T>>,
    grads: &[Tensor<T>],
    learning_rate: T,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::invalid(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.into_iter().zip(grads) {
        sgd_step(p, g, learning_rate)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = Tensor::<f64>::full(&[3], 2.5);
        sgd_step(&mut p, &Tensor::zeros(&[3]), 0.1).unwrap();
        assert_eq!(p.data(), &[2.5; 3]);
    }

    #[test]
    fn single_step_arithmetic() {
        let mut p = Tensor::<f64>::full(&[1], 1.0);
        sgd_step(&mut p, &Tensor::full(&[1], 1.0), 1e-3).unwrap();
        assert!((p.data()[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn two_half_steps_equal_one_step() {
        let g = Tensor::<f64>::from_vec(&[3], vec![0.5, -2.0, 4.0]).unwrap();
        let mut a = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut b = a.clone();
        sgd_step(&mut a, &g, 0.25).unwrap();
        sgd_step(&mut a, &g, 0.25).unwrap();
        sgd_step(&mut b, &g, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_mismatch_and_bad_rate() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        assert!(sgd_step(&mut p, &Tensor::zeros(&[3]), 0.1).is_err());
        assert!(sgd_step(&mut p, &Tensor::zeros(&[2]), 0.0).is_err());
        assert!(sgd_update(vec![&mut p], &[], 0.1).is_err());
    }
}
