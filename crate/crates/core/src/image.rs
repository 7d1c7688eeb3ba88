//! Row-major `H × W × C` float rasters.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::floor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "Image",
                alloc::format!("{} values for {width}x{height}x{channels}", data.len()),
            ));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, v: f32) -> Self {
        Self { width, height, channels, data: vec![v; width * height * channels] }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, channels, data }
    }

    pub fn same_shape(&self, o: &Image) -> bool {
        self.width == o.width && self.height == o.height && self.channels == o.channels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = self.index(x, y, 0);
        &mut self.data[i..i + self.channels]
    }

    /// Bilinear sample at continuous pixel coordinates (pixel `i` covers
    /// `[i, i+1)`, centre at `i + 0.5`), clamped at the border.
    pub fn bilinear(&self, x: f64, y: f64, out: &mut [f32]) {
        let (x0, x1, fx) = clamp_axis(x - 0.5, self.width);
        let (y0, y1, fy) = clamp_axis(y - 0.5, self.height);
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let a = self.get(x0, y0, c) as f64 * (1.0 - fx) + self.get(x1, y0, c) as f64 * fx;
            let b = self.get(x0, y1, c) as f64 * (1.0 - fx) + self.get(x1, y1, c) as f64 * fx;
            *o = (a * (1.0 - fy) + b * fy) as f32;
        }
    }

    /// Rec. 709 luminance of a 3-channel image (other channel counts use the
    /// plain mean).
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks(self.channels)
            .map(|p| {
                if p.len() == 3 {
                    0.2126 * p[0] as f64 + 0.7152 * p[1] as f64 + 0.0722 * p[2] as f64
                } else {
                    p.iter().map(|v| *v as f64).sum::<f64>() / p.len() as f64
                }
            })
            .collect()
    }
}

fn clamp_axis(t: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 || t <= 0.0 {
        return (0, 0, 0.0);
    }
    let hi = (n - 1) as f64;
    if t >= hi {
        return (n - 1, n - 1, 0.0);
    }
    let i = floor(t) as usize;
    (i, (i + 1).min(n - 1), t - i as f64)
}
