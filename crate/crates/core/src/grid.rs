//! Dense 3D arrays in z-major order.

use serde::{Deserialize, Serialize};

/// Voxel coordinate `(z, y, x)`.
pub type Voxel = [usize; 3];

/// Dense 3D array stored z-major, then y, then x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid3<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Clone> Grid3<T> {
    pub fn filled(dims: [usize; 3], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims[0] * dims[1] * dims[2]],
        }
    }
}

impl<T> Grid3<T> {
    /// Wraps `data`; returns `None` when the length does not match `dims`.
    pub fn from_vec(dims: [usize; 3], data: Vec<T>) -> Option<Self> {
        (data.len() == dims[0] * dims[1] * dims[2]).then_some(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, v: Voxel) -> usize {
        (v[0] * self.dims[1] + v[1]) * self.dims[2] + v[2]
    }

    #[inline]
    pub fn voxel(&self, index: usize) -> Voxel {
        let x = index % self.dims[2];
        let y = (index / self.dims[2]) % self.dims[1];
        let z = index / (self.dims[2] * self.dims[1]);
        [z, y, x]
    }

    #[inline]
    pub fn get(&self, v: Voxel) -> &T {
        &self.data[self.index(v)]
    }

    #[inline]
    pub fn set(&mut self, v: Voxel, value: T) {
        let i = self.index(v);
        self.data[i] = value;
    }

    pub fn contains(&self, v: [i64; 3]) -> bool {
        (0..3).all(|a| v[a] >= 0 && (v[a] as usize) < self.dims[a])
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid3<U> {
        Grid3 {
            dims: self.dims,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Offsets of the 26-neighbourhood, in raster order.
pub fn neighbor_offsets_26() -> impl Iterator<Item = [i64; 3]> {
    (-1i64..=1).flat_map(|dz| {
        (-1i64..=1).flat_map(move |dy| {
            (-1i64..=1).filter_map(move |dx| (dz != 0 || dy != 0 || dx != 0).then_some([dz, dy, dx]))
        })
    })
}

/// True when two voxels are distinct and 26-adjacent.
pub fn adjacent_26(a: Voxel, b: Voxel) -> bool {
    a != b && (0..3).all(|i| a[i].abs_diff(b[i]) <= 1)
}
