//! Categorical rasters, sampling units and exact class proportions.

mod ascii;
mod synthetic;

pub use ascii::{load_ascii_grid, read_ascii_grid_file, save_ascii_grid, write_ascii_grid};
pub use synthetic::{generate_patch_mosaic, generate_smoothed_binary};

use crate::error::{Error, Result};

/// Tolerance on the sum of a proportion vector.
pub const PROPORTION_SUM_TOLERANCE: f64 = 1e-9;

/// A fine-resolution grid of class indices, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalRaster {
    width: usize,
    height: usize,
    cell_size: f64,
    class_count: usize,
    class_names: Option<Vec<String>>,
    values: Vec<u16>,
}

impl CategoricalRaster {
    pub fn new(
        width: usize,
        height: usize,
        cell_size: f64,
        class_count: usize,
        values: Vec<u16>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidRaster(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        if class_count == 0 || class_count > u16::MAX as usize + 1 {
            return Err(Error::InvalidRaster(format!(
                "class count {class_count} out of range"
            )));
        }
        if values.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|&v| v as usize >= class_count) {
            return Err(Error::InvalidRaster(format!(
                "value {} at index {pos} is not below class count {class_count}",
                values[pos]
            )));
        }
        Ok(Self {
            width,
            height,
            cell_size,
            class_count,
            class_names: None,
            values,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.class_count {
            return Err(Error::InvalidRaster(format!(
                "{} class names for {} classes",
                names.len(),
                self.class_count
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.values[row * self.width + col]
    }

    /// Whole-raster class counts.
    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.class_count];
        for &v in &self.values {
            counts[v as usize] += 1;
        }
        counts
    }

    /// The side×side block with the given origin, if it lies fully inside.
    pub fn unit(&self, origin_row: usize, origin_col: usize, side: usize) -> Result<SamplingUnit<'_>> {
        if side < 2 {
            return Err(Error::InvalidArgument(format!("unit side must be >= 2, got {side}")));
        }
        if origin_row + side > self.height || origin_col + side > self.width {
            return Err(Error::InvalidArgument(format!(
                "unit at ({origin_row}, {origin_col}) with side {side} exceeds {}x{} raster",
                self.width, self.height
            )));
        }
        Ok(SamplingUnit {
            raster: self,
            origin_row,
            origin_col,
            side,
        })
    }
}

/// A square block of raster cells standing in for one coarse map pixel.
#[derive(Debug, Clone, Copy)]
pub struct SamplingUnit<'a> {
    raster: &'a CategoricalRaster,
    origin_row: usize,
    origin_col: usize,
    side: usize,
}

impl<'a> SamplingUnit<'a> {
    pub fn raster(&self) -> &'a CategoricalRaster {
        self.raster
    }

    pub fn origin_row(&self) -> usize {
        self.origin_row
    }

    pub fn origin_col(&self) -> usize {
        self.origin_col
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn cell_count(&self) -> usize {
        self.side * self.side
    }

    pub fn class_count(&self) -> usize {
        self.raster.class_count
    }

    /// Class at a unit-relative position.
    #[inline]
    pub fn class_at(&self, row: usize, col: usize) -> u16 {
        debug_assert!(row < self.side && col < self.side);
        self.raster.get(self.origin_row + row, self.origin_col + col)
    }

    /// Class counts over the block with unit-relative origin and the given side.
    pub fn block_counts(&self, row0: usize, col0: usize, block: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.raster.class_count];
        let w = self.raster.width;
        for r in (self.origin_row + row0)..(self.origin_row + row0 + block) {
            let start = r * w + self.origin_col + col0;
            for &v in &self.raster.values[start..start + block] {
                counts[v as usize] += 1;
            }
        }
        counts
    }

    pub fn class_counts(&self) -> Vec<u64> {
        self.block_counts(0, 0, self.side)
    }

    /// Exact per-class cell fractions over the unit.
    pub fn true_proportions(&self) -> ProportionVector {
        ProportionVector::from_counts(&self.class_counts())
            .expect("a unit always holds at least one cell")
    }

    /// Whether two units share any cell.
    pub fn overlaps(&self, other: &SamplingUnit<'_>) -> bool {
        self.origin_row < other.origin_row + other.side
            && other.origin_row < self.origin_row + self.side
            && self.origin_col < other.origin_col + other.side
            && other.origin_col < self.origin_col + self.side
    }
}

/// Free-function form of [`SamplingUnit::true_proportions`].
pub fn true_proportions(unit: &SamplingUnit<'_>) -> ProportionVector {
    unit.true_proportions()
}

/// All non-overlapping side×side units starting at the given offsets and
/// fully inside the raster, in row-major order. Partial blocks are dropped.
pub fn extract_units(
    raster: &CategoricalRaster,
    side: usize,
    row_offset: usize,
    col_offset: usize,
) -> Result<Vec<SamplingUnit<'_>>> {
    if side < 2 {
        return Err(Error::InvalidArgument(format!("unit side must be >= 2, got {side}")));
    }
    if side > raster.width || side > raster.height {
        return Err(Error::InvalidArgument(format!(
            "unit side {side} exceeds {}x{} raster",
            raster.width, raster.height
        )));
    }
    let rows = raster.height.saturating_sub(row_offset) / side;
    let cols = raster.width.saturating_sub(col_offset) / side;
    let mut units = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            units.push(SamplingUnit {
                raster,
                origin_row: row_offset + i * side,
                origin_col: col_offset + j * side,
                side,
            });
        }
    }
    Ok(units)
}

/// Per-class proportions of a sampling unit or sub-sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionVector(Vec<f64>);

impl ProportionVector {
    pub fn new(proportions: Vec<f64>) -> Result<Self> {
        if proportions.is_empty() {
            return Err(Error::InvalidArgument("empty proportion vector".into()));
        }
        if proportions.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "proportions must be finite and non-negative: {proportions:?}"
            )));
        }
        let sum: f64 = proportions.iter().sum();
        if (sum - 1.0).abs() > PROPORTION_SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!("proportions sum to {sum}, not 1")));
        }
        Ok(Self(proportions))
    }

    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidArgument("cannot form proportions from zero counts".into()));
        }
        let total = total as f64;
        Ok(Self(counts.iter().map(|&c| c as f64 / total).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0.get(class).copied().unwrap_or(0.0)
    }

    /// Index and value of the largest entry; ties go to the lowest index.
    pub fn dominant(&self) -> (usize, f64) {
        let mut best = (0, self.0[0]);
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }
}
