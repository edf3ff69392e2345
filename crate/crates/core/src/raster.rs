//! Dense per-pixel rasters: depth maps and motion-probability maps.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RasterError {
    #[error("invalid raster dimensions {height}x{width} for {len} values")]
    InvalidDimensions {
        height: usize,
        width: usize,
        len: usize,
    },
    #[error("motion probability {value} at (row {row}, col {col}) outside [0, 1]")]
    ProbabilityOutOfRange { row: usize, col: usize, value: f32 },
}

/// Row-major raster of `height * width` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self, RasterError> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(RasterError::InvalidDimensions {
                height,
                width,
                len: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self, RasterError> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self, RasterError> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Panics when out of bounds, like slice indexing.
    pub fn at(&self, row: usize, col: usize) -> T {
        assert!(
            row < self.height && col < self.width,
            "raster index out of bounds"
        );
        self.data[row * self.width + col]
    }

    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        (row < self.height && col < self.width).then(|| self.data[row * self.width + col])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

/// Per-pixel depth in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(pub Raster<f32>);

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self, RasterError> {
        Raster::new(height, width, values).map(Self)
    }

    pub fn raster(&self) -> &Raster<f32> {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.0.at(row, col)
    }
}

/// Per-pixel probability of independent motion, each value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMask(Raster<f32>);

impl MotionMask {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self, RasterError> {
        Self::from_raster(Raster::new(height, width, values)?)
    }

    pub fn from_raster(raster: Raster<f32>) -> Result<Self, RasterError> {
        let w = raster.width();
        if let Some(i) = raster
            .as_slice()
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            return Err(RasterError::ProbabilityOutOfRange {
                row: i / w,
                col: i % w,
                value: raster.as_slice()[i],
            });
        }
        Ok(Self(raster))
    }

    pub fn raster(&self) -> &Raster<f32> {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.0.at(row, col)
    }
}
