use crate::error::{Error, Result};

/// Row-major 2D array of samples. Row `y`, column `x` lives at `y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn square(size: usize) -> Self {
        Self::zeros(size, size)
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// A one-row grid holding a vector, used when 1D projections go through
    /// the image metrics.
    pub fn row(data: Vec<f64>) -> Self {
        Self {
            width: data.len(),
            height: 1,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
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

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Grid {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Box-average by an integer factor in both directions.
    pub fn downsample(&self, factor: usize) -> Result<Grid> {
        if factor == 0 {
            return Err(Error::invalid("downsample factor must be positive"));
        }
        let fx = factor.min(self.width);
        let fy = factor.min(self.height);
        if !self.width.is_multiple_of(fx) || !self.height.is_multiple_of(fy) {
            return Err(Error::invalid(format!(
                "{}x{} grid is not divisible by {}",
                self.width, self.height, factor
            )));
        }
        let (w, h) = (self.width / fx, self.height / fy);
        let norm = 1.0 / (fx * fy) as f64;
        let mut out = Grid::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..fy {
                    for dx in 0..fx {
                        acc += self.get(x * fx + dx, y * fy + dy);
                    }
                }
                out.set(x, y, acc * norm);
            }
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
