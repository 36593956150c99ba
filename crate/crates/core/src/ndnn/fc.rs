use crate::error::{Error, Result};
use crate::ndnn::Tensor;
use crate::scalar::Scalar;

/// Fully connected layer `y = W^T x + b` over the flattened input.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer<T> {
    /// `[Din, Dout]`
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> FcLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 2 || bias.shape() != [ws[1]] {
            return Err(Error::invalid(format!(
                "fc expects weights [Din, Dout] and bias [Dout], got {ws:?} and {:?}",
                bias.shape()
            )));
        }
        Ok(FcLayer { weights, bias })
    }

    pub fn zeros(din: usize, dout: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[din, dout]), Tensor::zeros(&[dout]))
    }

    pub fn input_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Batch size of `input`; a rank-1 input is a single item.
    fn batch_of(&self, input: &Tensor<T>) -> Result<usize> {
        let (n, per) = if input.shape().len() == 1 {
            (1, input.len())
        } else {
            (input.batch(), input.per_item())
        };
        if per != self.input_dim() {
            return Err(Error::invalid(format!(
                "fc expects {} inputs per item, got {per} (shape {:?})",
                self.input_dim(),
                input.shape()
            )));
        }
        Ok(n)
    }
}

/// Forward pass; returns `[N, Dout]`.
pub fn fc<T: Scalar>(input: &Tensor<T>, layer: &FcLayer<T>) -> Result<Tensor<T>> {
    let n = layer.batch_of(input)?;
    let (din, dout) = (layer.input_dim(), layer.output_dim());
    let mut out = Tensor::zeros(&[n, dout]);
    for row in out.data_mut().chunks_exact_mut(dout) {
        row.copy_from_slice(layer.bias.data());
    }
    T::gemm(
        n,
        din,
        dout,
        T::one(),
        input.data(),
        (din as isize, 1),
        layer.weights.data(),
        (dout as isize, 1),
        T::one(),
        out.data_mut(),
        (dout as isize, 1),
    );
    Ok(out)
}

/// Gradients of [`fc`]; the input gradient takes the input's original shape.
pub fn fc_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    layer: &FcLayer<T>,
) -> Result<FcGrads<T>> {
    let n = layer.batch_of(input)?;
    let (din, dout) = (layer.input_dim(), layer.output_dim());
    grad_out.expect_shape(&[n, dout])?;
    let mut grad_w = Tensor::zeros(&[din, dout]);
    T::gemm(
        din,
        n,
        dout,
        T::one(),
        input.data(),
        (1, din as isize),
        grad_out.data(),
        (dout as isize, 1),
        T::zero(),
        grad_w.data_mut(),
        (dout as isize, 1),
    );
    let mut grad_in = Tensor::zeros(input.shape());
    T::gemm(
        n,
        dout,
        din,
        T::one(),
        grad_out.data(),
        (dout as isize, 1),
        layer.weights.data(),
        (1, dout as isize),
        T::zero(),
        grad_in.data_mut(),
        (din as isize, 1),
    );
    let mut grad_b = Tensor::zeros(&[dout]);
    for row in grad_out.data().chunks_exact(dout) {
        for (b, &g) in grad_b.data_mut().iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(FcGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}
