use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// (batch, channels, depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 5]);

impl Shape {
    pub const fn new(n: usize, c: usize, d: usize, h: usize, w: usize) -> Self {
        Shape([n, c, d, h, w])
    }

    pub fn batch(&self) -> usize {
        self.0[0]
    }

    pub fn channels(&self) -> usize {
        self.0[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.0[2], self.0[3], self.0[4]]
    }

    pub fn spatial_len(&self) -> usize {
        self.0[2] * self.0[3] * self.0[4]
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_channels(&self, c: usize) -> Shape {
        Shape([self.0[0], c, self.0[2], self.0[3], self.0[4]])
    }

    pub fn with_spatial(&self, s: [usize; 3]) -> Shape {
        Shape([self.0[0], self.0[1], s[0], s[1], s[2]])
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [n, c, d, h, w] = self.0;
        write!(f, "({n},{c},{d},{h},{w})")
    }
}

/// Five-axis array carrying a value and, once backward has run, a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffTensor<S> {
    shape: Shape,
    pub(crate) value: Vec<S>,
    pub(crate) grad: Option<Vec<S>>,
}

impl<S: Scalar> DiffTensor<S> {
    pub fn new(shape: Shape, value: Vec<S>) -> Result<Self> {
        if value.len() != shape.len() {
            return Err(Error::Shape(format!("value length {} does not match shape {shape}", value.len())));
        }
        Ok(DiffTensor { shape, value, grad: None })
    }

    pub fn zeros(shape: Shape) -> Self {
        DiffTensor { shape, value: vec![S::zero(); shape.len()], grad: None }
    }

    pub fn filled(shape: Shape, v: S) -> Self {
        DiffTensor { shape, value: vec![v; shape.len()], grad: None }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn value(&self) -> &[S] {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut [S] {
        &mut self.value
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn into_value(self) -> Vec<S> {
        self.value
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Vec<S> {
        let n = self.value.len();
        self.grad.get_or_insert_with(|| vec![S::zero(); n])
    }

    pub fn all_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite()) && self.grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn cast<T: Scalar>(&self) -> DiffTensor<T> {
        DiffTensor {
            shape: self.shape,
            value: self.value.iter().map(|v| T::from_f64_lossy(v.to_f64_lossy())).collect(),
            grad: None,
        }
    }
}
