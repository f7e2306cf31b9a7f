use super::real::Real;
use super::AutodiffError;

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, AutodiffError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(AutodiffError::InvalidShape { shape });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(AutodiffError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; numel]).expect("valid shape")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn scalar(value: F) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<F>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("non-empty vector")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> F {
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, AutodiffError> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| G::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<F>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Channel range `[start, end)` of an NCHW tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self, AutodiffError> {
        if self.shape.len() != 4 || start >= end || end > self.shape[1] {
            return Err(AutodiffError::InvalidShape {
                shape: self.shape.clone(),
            });
        }
        let (n, c, hw) = (self.shape[0], self.shape[1], self.shape[2] * self.shape[3]);
        let mut data = Vec::with_capacity(n * (end - start) * hw);
        for s in 0..n {
            let base = s * c * hw;
            data.extend_from_slice(&self.data[base + start * hw..base + end * hw]);
        }
        Self::new(vec![n, end - start, self.shape[2], self.shape[3]], data)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<F>]) -> Result<Self, AutodiffError> {
        let first = items.first().ok_or(AutodiffError::InvalidShape { shape: vec![0] })?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(AutodiffError::ShapeMismatch {
                    op: "stack",
                    left: first.shape.clone(),
                    right: t.shape.clone(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Self::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dims_and_bad_lengths() {
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn stack_and_slice() {
        let a = Tensor::<f64>::new(vec![2, 1, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::new(vec![2, 1, 1], vec![3.0, 4.0]).unwrap();
        let s = Tensor::stack(&[a, b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 1, 1]);
        assert_eq!(s.slice_channels(1, 2).unwrap().data(), &[2.0, 4.0]);
    }
}
