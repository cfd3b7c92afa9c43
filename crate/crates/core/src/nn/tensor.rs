use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense `(batch, channels, length)` array in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: [usize; 3], data: Vec<T>) -> Result<Self> {
        let len = shape.iter().product::<usize>();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 3], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: [1, 1, 1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                for l in 0..shape[2] {
                    data.push(f(b, c, l));
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn length(&self) -> usize {
        self.shape[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, l: usize) -> usize {
        (b * self.shape[1] + c) * self.shape[2] + l
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, l: usize) -> T {
        self.data[self.index(b, c, l)]
    }

    /// Values of batch item `b` as a `channels x length` slice.
    pub fn item(&self, b: usize) -> &[T] {
        let n = self.shape[1] * self.shape[2];
        &self.data[b * n..(b + 1) * n]
    }

    /// Single-item tensor holding batch item `b`.
    pub fn select(&self, b: usize) -> Self {
        Self {
            shape: [1, self.shape[1], self.shape[2]],
            data: self.item(b).to_vec(),
        }
    }

    /// Stacks single-or-multi item tensors with equal channel/length along
    /// the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::ShapeMismatch("cannot stack zero tensors".into()))?;
        let [_, c, l] = first.shape;
        let mut data = Vec::new();
        let mut batch = 0;
        for t in items {
            if t.shape[1] != c || t.shape[2] != l {
                return Err(Error::ShapeMismatch(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape, first.shape
                )));
            }
            batch += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: [batch, c, l],
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_sqr(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}
