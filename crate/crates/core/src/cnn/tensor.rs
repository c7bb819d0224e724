use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    samples: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, samples: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != samples.len() {
            return Err(Error::Shape(format!("dims {dims:?} need {n} samples, got {}", samples.len())));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("tensor sample {i} is not finite")));
        }
        Ok(Tensor { dims, samples })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor { dims, samples: vec![0.0; n] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// (depth, height, width) of a rank-3 tensor.
    pub fn dhw(&self) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [d, h, w] => Ok((d, h, w)),
            _ => Err(Error::Shape(format!("expected a rank-3 tensor, got dims {:?}", self.dims))),
        }
    }
}
