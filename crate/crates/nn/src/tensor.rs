use crate::error::{NnError, Result};

/// Dense 5D array in (batch, channel, z, y, x) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 5],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(NnError::Shape(format!(
                "{} values for shape {shape:?} ({n} expected)",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Stacks single-channel volumes of equal dims into a (B, 1, z, y, x) batch.
    pub fn from_volumes<'a>(dims: [usize; 3], volumes: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        let mut data = Vec::new();
        let mut b = 0;
        for v in volumes {
            if v.len() != dims.iter().product::<usize>() {
                return Err(NnError::Shape(format!("volume of {} voxels for dims {dims:?}", v.len())));
            }
            data.extend(v.iter().map(|&x| x as f64));
            b += 1;
        }
        if b == 0 {
            return Err(NnError::EmptyBatch);
        }
        Self::from_vec([b, 1, dims[0], dims[1], dims[2]], data)
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn voxels(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Contiguous values of sample `b`.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.len() / self.shape[0];
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.len() / self.shape[0];
        &mut self.data[b * n..(b + 1) * n]
    }

    /// Samples `idx` gathered into a new batch.
    pub fn select(&self, idx: &[usize]) -> Tensor {
        let mut shape = self.shape;
        shape[0] = idx.len();
        let mut data = Vec::with_capacity(shape.iter().product());
        for &b in idx {
            data.extend_from_slice(self.sample(b));
        }
        Tensor { shape, data }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
