//! Row-major single-channel rasters with a per-pixel validity mask.

use rayon::prelude::*;

/// Scalar types that can live in a [`Raster`] and take part in the float math.
pub trait Sample: Copy + Send + Sync + Default + PartialEq + std::fmt::Debug + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Sample for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl Sample for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

/// A 2D grid of samples plus a boolean validity mask of the same shape.
///
/// Invalid samples carry no meaning; every consumer checks the mask first.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
    mask: Vec<bool>,
}

/// Double-precision raster: phases, projector pixels, depths, variances.
pub type ChannelRaster = Raster<f64>;

/// Single-precision raster used for captured intensity frames.
pub type Image = Raster<f32>;

/// Integer raster, used for fringe orders.
pub type OrderRaster = Raster<u32>;

impl<T: Copy + Default + Send + Sync> Raster<T> {
    /// All-valid raster filled with `value`.
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
            mask: vec![true; width * height],
        }
    }

    /// All-invalid raster.
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::default(); width * height],
            mask: vec![false; width * height],
        }
    }

    /// Wraps row-major samples; every pixel is valid.
    ///
    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length mismatch");
        Self {
            width,
            height,
            mask: vec![true; data.len()],
            data,
        }
    }

    /// Panics if either buffer has the wrong length.
    pub fn from_parts(width: usize, height: usize, data: Vec<T>, mask: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length mismatch");
        assert_eq!(mask.len(), width * height, "raster mask length mismatch");
        Self {
            width,
            height,
            data,
            mask,
        }
    }

    /// Builds a raster by evaluating `f(x, y)` for every pixel, rows in parallel.
    /// `None` marks the pixel invalid.
    pub fn from_fn<F>(width: usize, height: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> Option<T> + Sync,
    {
        let mut data = vec![T::default(); width * height];
        let mut mask = vec![false; width * height];
        if width > 0 {
            data.par_chunks_mut(width)
                .zip(mask.par_chunks_mut(width))
                .enumerate()
                .for_each(|(y, (row, mrow))| {
                    for x in 0..width {
                        if let Some(v) = f(x, y) {
                            row[x] = v;
                            mrow[x] = true;
                        }
                    }
                });
        }
        Self {
            width,
            height,
            data,
            mask,
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

    #[inline]
    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Raw sample regardless of validity.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    /// Sample if the pixel is valid.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<T> {
        let i = y * self.width + x;
        self.mask[i].then(|| self.data[i])
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    /// Stores a value and marks the pixel valid.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = y * self.width + x;
        self.data[i] = value;
        self.mask[i] = true;
    }

    #[inline]
    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = y * self.width + x;
        self.mask[i] = false;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn mask_mut(&mut self) -> &mut [bool] {
        &mut self.mask
    }

    pub fn into_parts(self) -> (Vec<T>, Vec<bool>) {
        (self.data, self.mask)
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Iterates `(x, y, value)` over valid pixels in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let w = self.width.max(1);
        self.data
            .iter()
            .zip(self.mask.iter())
            .enumerate()
            .filter(|(_, (_, &m))| m)
            .map(move |(i, (&v, _))| (i % w, i / w, v))
    }

    /// Per-pixel map over valid samples; invalid pixels stay invalid.
    pub fn map<U, F>(&self, f: F) -> Raster<U>
    where
        U: Copy + Default + Send + Sync,
        F: Fn(T) -> U + Sync,
    {
        Raster::from_fn(self.width, self.height, |x, y| self.get(x, y).map(&f))
    }

    /// Intersects this raster's mask with `other`'s.
    pub fn restrict_to<U>(&mut self, other: &Raster<U>) {
        assert!(self.same_size(other), "mask size mismatch");
        for (m, &o) in self.mask.iter_mut().zip(other.mask.iter()) {
            *m &= o;
        }
    }

    pub fn same_size<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl<T: Sample> Raster<T> {
    /// Bilinear sample at a continuous location; `None` when any contributing
    /// tap is outside the grid or invalid.
    ///
    /// Integer coordinates reproduce the stored sample exactly.
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 {
            return None;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as usize, y0 as usize);
        if x0 >= self.width || y0 >= self.height {
            return None;
        }
        let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
        let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
        if x1 >= self.width || y1 >= self.height {
            return None;
        }
        let v00 = self.get(x0, y0)?.to_f64();
        if fx == 0.0 && fy == 0.0 {
            return Some(v00);
        }
        let v10 = self.get(x1, y0)?.to_f64();
        let v01 = self.get(x0, y1)?.to_f64();
        let v11 = self.get(x1, y1)?.to_f64();
        let top = v00 + (v10 - v00) * fx;
        let bottom = v01 + (v11 - v01) * fx;
        Some(top + (bottom - top) * fy)
    }

    /// Converts the sample type, preserving the mask.
    pub fn convert<U: Sample>(&self) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            mask: self.mask.clone(),
        }
    }
}

/// Axis-aligned pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Roi {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    /// Clamps to a raster of the given size.
    pub fn clamp(self, width: usize, height: usize) -> Self {
        Self {
            x0: self.x0.min(width),
            y0: self.y0.min(height),
            x1: self.x1.min(width),
            y1: self.y1.min(height),
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn area(&self) -> usize {
        self.x1.saturating_sub(self.x0) * self.y1.saturating_sub(self.y0)
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| (x, y)))
    }
}

impl std::str::FromStr for Roi {
    type Err = String;

    /// Parses `x0,y0,x1,y1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("invalid ROI '{s}': {e}"))?;
        match parts.as_slice() {
            [x0, y0, x1, y1] if x1 > x0 && y1 > y0 => Ok(Roi::new(*x0, *y0, *x1, *y1)),
            [_, _, _, _] => Err(format!("empty ROI '{s}'")),
            _ => Err(format!("ROI '{s}' must be x0,y0,x1,y1")),
        }
    }
}

/// Pairwise (cascade) summation; deterministic and accurate for long reductions.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
