//! Row-major real-valued grids: the common currency of models, kernels and
//! attribution maps.

use crate::error::{Error, Result};

/// Height × width × channels, indexed row-major with channel innermost:
/// `idx = (y * width + x) * channels + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial sites (pixels), ignoring channels.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        (y * self.width + x) * self.channels + c
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// An unconstrained real grid. Perturbed copies of inputs live here: they may
/// leave [0,1] and are deliberately not clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    shape: GridShape,
    values: Vec<f64>,
}

impl Grid {
    pub fn zeros(shape: GridShape) -> Self {
        Self { shape, values: vec![0.0; shape.len()] }
    }

    pub fn from_vec(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {shape}", shape.len()),
                got: format!("{}", values.len()),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn constant(shape: GridShape, value: f64) -> Self {
        Self { shape, values: vec![value; shape.len()] }
    }

    pub fn from_fn(shape: GridShape, f: impl FnMut(usize) -> f64) -> Self {
        Self { shape, values: (0..shape.len()).map(f).collect() }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[self.shape.index(y, x, c)]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.shape.index(y, x, c);
        self.values[i] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn abs_sum(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn dot(&self, other: &Grid) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Grid {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    pub fn add_assign(&mut self, other: &Grid) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid { shape: self.shape, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Sum of channel values per spatial site; result has 1 channel.
    pub fn channel_summed(&self) -> Grid {
        if self.shape.channels == 1 {
            return self.clone();
        }
        let out_shape = GridShape::new(self.shape.height, self.shape.width, 1);
        let c = self.shape.channels;
        let values = self
            .values
            .chunks_exact(c)
            .map(|px| px.iter().sum())
            .collect();
        Grid { shape: out_shape, values }
    }

    /// Clamp every value into [lo, hi]. Only used behind the explicit opt-in
    /// clamping flag; perturbation draws are unclamped by default.
    pub fn clamp(&mut self, lo: f64, hi: f64) {
        for v in &mut self.values {
            *v = v.clamp(lo, hi);
        }
    }
}

/// A validated model input: finite values in [0,1] at ingestion time.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrid(Grid);

impl InputGrid {
    pub fn new(grid: Grid) -> Result<Self> {
        for (i, &v) in grid.values().iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { location: format!("input value {i}") });
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange { location: format!("input value {i}"), value: v });
            }
        }
        Ok(Self(grid))
    }

    pub fn from_vec(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        Self::new(Grid::from_vec(shape, values)?)
    }

    pub fn as_grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

impl std::ops::Deref for InputGrid {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major_channel_innermost() {
        let shape = GridShape::new(2, 3, 2);
        assert_eq!(shape.index(0, 0, 0), 0);
        assert_eq!(shape.index(0, 0, 1), 1);
        assert_eq!(shape.index(0, 1, 0), 2);
        assert_eq!(shape.index(1, 0, 0), 6);
        assert_eq!(shape.len(), 12);
    }

    #[test]
    fn input_grid_rejects_out_of_range_and_non_finite() {
        let shape = GridShape::new(1, 2, 1);
        assert!(InputGrid::from_vec(shape, vec![0.0, 1.0]).is_ok());
        assert!(matches!(
            InputGrid::from_vec(shape, vec![0.0, 1.5]),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            InputGrid::from_vec(shape, vec![f64::NAN, 0.5]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn channel_sum_folds_channels() {
        let shape = GridShape::new(1, 2, 3);
        let g = Grid::from_vec(shape, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = g.channel_summed();
        assert_eq!(s.shape(), GridShape::new(1, 2, 1));
        assert_eq!(s.values(), &[6.0, 15.0]);
    }

    #[test]
    fn from_vec_checks_length() {
        let shape = GridShape::new(2, 2, 1);
        assert!(Grid::from_vec(shape, vec![0.0; 3]).is_err());
    }
}
