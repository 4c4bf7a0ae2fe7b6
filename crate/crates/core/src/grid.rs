//! Pixel-grid intensity images as measures on pixel centers.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::bootstrap::resample;
use crate::error::{Error, Result};
use crate::measure::{make_measure, DiscreteMeasure};
use crate::scalar::Scalar;

/// Intensity image with `height` rows and `width` columns. Pixel `(i, j)` has
/// its center at `((j + 0.5) * pitch, (i + 0.5) * pitch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure<T> {
    intensities: Array2<T>,
    pitch: T,
}

impl<T: Scalar> GridMeasure<T> {
    pub fn new(intensities: Array2<T>, pitch: T) -> Result<Self> {
        if !(pitch > T::zero()) || !pitch.is_finite() {
            return Err(crate::error::invalid("pitch", "must be positive and finite"));
        }
        if intensities.is_empty() {
            return Err(Error::EmptySupport);
        }
        for (k, &x) in intensities.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    what: "intensity",
                    index: k,
                });
            }
            if x < T::zero() {
                return Err(Error::NegativeWeight {
                    index: k,
                    value: x.as_f64(),
                });
            }
        }
        if !intensities.iter().any(|&x| x > T::zero()) {
            return Err(Error::ZeroTotalWeight);
        }
        Ok(Self { intensities, pitch })
    }

    pub fn width(&self) -> usize {
        self.intensities.ncols()
    }

    pub fn height(&self) -> usize {
        self.intensities.nrows()
    }

    /// Number of pixels, i.e. candidate atoms before zero pixels are pruned.
    pub fn pixels(&self) -> usize {
        self.intensities.len()
    }

    pub fn pitch(&self) -> T {
        self.pitch
    }

    pub fn intensities(&self) -> &Array2<T> {
        &self.intensities
    }
}

/// Parses a plain-text matrix: one image row per line, entries separated by
/// whitespace and/or commas. Blank lines are skipped.
pub fn parse_grid<T: Scalar>(text: &str, pitch: T, origin: &str) -> Result<GridMeasure<T>> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (k, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: origin.to_string(),
            line: k + 1,
            reason,
        };
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(parse_err(format!("ragged row: {} entries, expected {w}", fields.len())))
            }
            _ => {}
        }
        for f in fields {
            let x: f64 = f.parse().map_err(|e| parse_err(format!("`{f}`: {e}")))?;
            if x.is_nan() || x < 0.0 {
                return Err(parse_err(format!("invalid intensity {f}")));
            }
            values.push(T::lit(x));
        }
        rows += 1;
    }
    let width = width.ok_or(Error::EmptySupport)?;
    let intensities = Array2::from_shape_vec((rows, width), values).expect("rectangular");
    GridMeasure::new(intensities, pitch)
}

pub fn load_grid<T: Scalar>(path: impl AsRef<Path>, pitch: T) -> Result<GridMeasure<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_grid(&text, pitch, &path.display().to_string())
}

/// Atoms at pixel centers in row-major order, weights proportional to
/// intensity; dark pixels are dropped.
pub fn to_measure<T: Scalar>(grid: &GridMeasure<T>) -> DiscreteMeasure<T> {
    let half = T::lit(0.5);
    let mut points = Vec::with_capacity(grid.pixels());
    let mut weights = Vec::with_capacity(grid.pixels());
    for ((i, j), &x) in grid.intensities.indexed_iter() {
        if x > T::zero() {
            points.push(vec![
                (T::from_usize_lossy(j) + half) * grid.pitch,
                (T::from_usize_lossy(i) + half) * grid.pitch,
            ]);
            weights.push(x);
        }
    }
    make_measure(points, Some(weights)).expect("validated grid has positive mass")
}

/// Multinomial subsample of `n` pixels drawn by intensity, as the empirical
/// measure `counts / n` on the hit pixel centers.
pub fn subsample_grid<T: Scalar, R: Rng + ?Sized>(
    grid: &GridMeasure<T>,
    n: usize,
    rng: &mut R,
) -> Result<DiscreteMeasure<T>> {
    resample(&to_measure(grid), n, rng)
}
