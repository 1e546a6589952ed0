//! Dense 2-D grids of `f64`, stored row-major with the x index as the row.

use std::fmt;

/// An `nx * ny` grid of 64-bit floats. Index `(ix, iy)` maps to
/// `ix * ny + iy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMismatch {
    pub expected: (usize, usize),
    pub got: (usize, usize),
}

impl fmt::Display for ShapeMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "field shape mismatch: expected {}x{}, got {}x{}",
            self.expected.0, self.expected.1, self.got.0, self.got.1
        )
    }
}

impl std::error::Error for ShapeMismatch {}

impl Field2D {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Field2D {
            nx,
            ny,
            data: vec![0.0; nx * ny],
        }
    }

    pub fn constant(nx: usize, ny: usize, value: f64) -> Self {
        Field2D {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for ix in 0..nx {
            for iy in 0..ny {
                data.push(f(ix, iy));
            }
        }
        Field2D { nx, ny, data }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), nx * ny, "payload length does not match shape");
        Field2D { nx, ny, data }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[ix * self.ny + iy]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, value: f64) {
        self.data[ix * self.ny + iy] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Field2D) -> Result<(), ShapeMismatch> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            })
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Population standard deviation over cells.
    pub fn std(&self) -> f64 {
        let mean = self.mean();
        let var = self
            .data
            .iter()
            .map(|v| {
                let d = v - mean;
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64;
        var.sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, factor: f64) -> Field2D {
        Field2D {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Largest absolute cellwise difference.
    pub fn max_abs_diff(&self, other: &Field2D) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}
