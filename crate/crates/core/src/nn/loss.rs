use super::tensor::Tensor;

/// Scalar objective over a network output.
pub trait Loss {
    fn value(&self, output: &Tensor) -> f64;
    fn gradient(&self, output: &Tensor) -> Tensor;
}

/// `mean((output - target)^2)` over all elements.
#[derive(Debug, Clone)]
pub struct MeanSquaredError {
    pub target: Tensor,
}

impl MeanSquaredError {
    pub fn new(target: Tensor) -> Self {
        Self { target }
    }
}

impl Loss for MeanSquaredError {
    fn value(&self, output: &Tensor) -> f64 {
        mse(output.data(), self.target.data())
    }

    fn gradient(&self, output: &Tensor) -> Tensor {
        let n = output.len() as f64;
        let mut g = output.clone();
        for (gi, t) in g.data_mut().iter_mut().zip(self.target.data()) {
            *gi = 2.0 * (*gi - t) / n;
        }
        g
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_constant_offset() {
        let loss = MeanSquaredError::new(Tensor::filled(&[4], 1.0));
        assert_eq!(loss.value(&Tensor::zeros(&[4])), 1.0);
        assert_eq!(loss.gradient(&Tensor::zeros(&[4])).data(), &[-0.5; 4]);
    }
}
