//! Raster containers, bilinear sampling, stencil operators and pyramids.

mod io;

pub use io::{read_image, read_pfm, read_pnm, write_pfm, write_pgm, write_ppm, Endianness, PfmImage};
pub(crate) use io::write_atomic;

use std::ops::Deref;

use crate::error::{Error, Result};

/// Row-major `width × height × channels` raster of `f64` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {width}x{height}x{channels} raster",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!("non-finite sample at index {i}")));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        ImageBuffer {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        ImageBuffer {
            width,
            height,
            channels,
            data,
        }
    }

    /// Single-channel raster from a row-major slice.
    pub fn gray(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(width, height, 1, data)
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
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_grid(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Luma conversion with weights 0.299 / 0.587 / 0.114.
    ///
    /// Single-channel rasters are returned as-is; other channel counts are averaged.
    pub fn to_gray(&self) -> ImageBuffer {
        match self.channels {
            1 => self.clone(),
            3 => ImageBuffer::from_fn(self.width, self.height, 1, |x, y, _| {
                0.299 * self.get(x, y, 0) + 0.587 * self.get(x, y, 1) + 0.114 * self.get(x, y, 2)
            }),
            k => ImageBuffer::from_fn(self.width, self.height, 1, |x, y, _| {
                (0..k).map(|c| self.get(x, y, c)).sum::<f64>() / k as f64
            }),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn require(&self, min_w: usize, min_h: usize) -> Result<()> {
        if self.width < min_w || self.height < min_h {
            return Err(Error::GridTooSmall {
                width: self.width,
                height: self.height,
                min_width: min_w,
                min_height: min_h,
            });
        }
        Ok(())
    }
}

/// Per-pixel inverse depth, non-negative and finite.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseDepthMap(ImageBuffer);

impl InverseDepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_image(ImageBuffer::gray(width, height, data)?)
    }

    pub fn from_image(img: ImageBuffer) -> Result<Self> {
        if img.channels != 1 {
            return Err(Error::ShapeMismatch(format!(
                "inverse depth needs one channel, got {}",
                img.channels
            )));
        }
        if let Some(i) = img.data.iter().position(|&v| v < 0.0) {
            return Err(Error::DegenerateDepth(format!(
                "negative inverse depth {} at index {i}",
                img.data[i]
            )));
        }
        Ok(InverseDepthMap(img))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        InverseDepthMap(ImageBuffer::from_fn(width, height, 1, |_, _, _| value))
    }

    pub fn image(&self) -> &ImageBuffer {
        &self.0
    }

    pub fn into_image(self) -> ImageBuffer {
        self.0
    }

    /// Area-average factor-2 downsampling.
    pub fn downsample2(&self) -> Result<Self> {
        Ok(InverseDepthMap(downsample2(&self.0)?))
    }
}

impl Deref for InverseDepthMap {
    type Target = ImageBuffer;
    fn deref(&self) -> &ImageBuffer {
        &self.0
    }
}

/// Per-pixel in-view flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl ValidityMask {
    pub fn all(width: usize, height: usize, value: bool) -> Self {
        ValidityMask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }
}

/// Bilinear interpolation stencil at a subpixel location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilinearSample {
    pub in_view: bool,
    x0: usize,
    y0: usize,
    ax: f64,
    ay: f64,
}

impl BilinearSample {
    /// Locates `(x, y)` (pixels) on a `width × height` grid.
    ///
    /// In view means every neighbor carrying non-zero weight lies on the grid,
    /// i.e. `0 ≤ x ≤ width−1` and `0 ≤ y ≤ height−1`.
    #[inline]
    pub fn locate(width: usize, height: usize, x: f64, y: f64) -> Self {
        let max_x = width as f64 - 1.0;
        let max_y = height as f64 - 1.0;
        if !(x >= 0.0 && x <= max_x && y >= 0.0 && y <= max_y) {
            return BilinearSample {
                in_view: false,
                x0: 0,
                y0: 0,
                ax: 0.0,
                ay: 0.0,
            };
        }
        let x0 = (x.floor() as usize).min(width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(height.saturating_sub(2));
        BilinearSample {
            in_view: true,
            x0,
            y0,
            ax: x - x0 as f64,
            ay: y - y0 as f64,
        }
    }

    #[inline]
    fn corners(&self, img: &ImageBuffer, c: usize) -> [f64; 4] {
        let x1 = (self.x0 + 1).min(img.width - 1);
        let y1 = (self.y0 + 1).min(img.height - 1);
        [
            img.get(self.x0, self.y0, c),
            img.get(x1, self.y0, c),
            img.get(self.x0, y1, c),
            img.get(x1, y1, c),
        ]
    }

    /// Interpolated value of channel `c` (0 when out of view).
    #[inline]
    pub fn value(&self, img: &ImageBuffer, c: usize) -> f64 {
        if !self.in_view {
            return 0.0;
        }
        let [a, b, d, e] = self.corners(img, c);
        let top = a + self.ax * (b - a);
        let bot = d + self.ax * (e - d);
        top + self.ay * (bot - top)
    }

    /// Derivative of [`Self::value`] with respect to `(x, y)`.
    #[inline]
    pub fn gradient(&self, img: &ImageBuffer, c: usize) -> [f64; 2] {
        if !self.in_view {
            return [0.0, 0.0];
        }
        let [a, b, d, e] = self.corners(img, c);
        let gx = (1.0 - self.ay) * (b - a) + self.ay * (e - d);
        let gy = (1.0 - self.ax) * (d - a) + self.ax * (e - b);
        [gx, gy]
    }
}

/// Bilinear sample of every channel at pixel coordinate `(x, y)`.
pub fn sample_bilinear(img: &ImageBuffer, x: f64, y: f64) -> (Vec<f64>, bool) {
    let s = BilinearSample::locate(img.width, img.height, x, y);
    ((0..img.channels).map(|c| s.value(img, c)).collect(), s.in_view)
}

/// Derivative of [`sample_bilinear`] with respect to `(x, y)`, per channel.
pub fn sample_bilinear_grad(img: &ImageBuffer, x: f64, y: f64) -> Vec<[f64; 2]> {
    let s = BilinearSample::locate(img.width, img.height, x, y);
    (0..img.channels).map(|c| s.gradient(img, c)).collect()
}

/// Image gradient: channel `2c` holds `∂x`, channel `2c+1` holds `∂y` of input channel `c`.
///
/// Central differences inside, one-sided differences on the border.
pub fn spatial_gradient(img: &ImageBuffer) -> Result<ImageBuffer> {
    img.require(3, 3)?;
    let (w, h) = (img.width, img.height);
    Ok(ImageBuffer::from_fn(w, h, 2 * img.channels, |x, y, k| {
        let c = k / 2;
        if k % 2 == 0 {
            match x {
                0 => img.get(1, y, c) - img.get(0, y, c),
                _ if x == w - 1 => img.get(x, y, c) - img.get(x - 1, y, c),
                _ => 0.5 * (img.get(x + 1, y, c) - img.get(x - 1, y, c)),
            }
        } else {
            match y {
                0 => img.get(x, 1, c) - img.get(x, 0, c),
                _ if y == h - 1 => img.get(x, y, c) - img.get(x, y - 1, c),
                _ => 0.5 * (img.get(x, y + 1, c) - img.get(x, y - 1, c)),
            }
        }
    }))
}

/// `|∇²I|` with the 4-neighbour stencil on a replicate-padded grid, averaged over channels.
pub fn laplacian(img: &ImageBuffer) -> Result<ImageBuffer> {
    img.require(3, 3)?;
    let (w, h) = (img.width, img.height);
    let k = img.channels;
    Ok(ImageBuffer::from_fn(w, h, 1, |x, y, _| {
        let xl = x.saturating_sub(1);
        let xr = (x + 1).min(w - 1);
        let yu = y.saturating_sub(1);
        let yd = (y + 1).min(h - 1);
        (0..k)
            .map(|c| {
                (img.get(xl, y, c) + img.get(xr, y, c) + img.get(x, yu, c) + img.get(x, yd, c)
                    - 4.0 * img.get(x, y, c))
                .abs()
            })
            .sum::<f64>()
            / k as f64
    }))
}

/// 2×2 average pooling; an odd trailing row or column is dropped.
pub fn downsample2(img: &ImageBuffer) -> Result<ImageBuffer> {
    img.require(2, 2)?;
    let (w, h) = (img.width / 2, img.height / 2);
    Ok(ImageBuffer::from_fn(w, h, img.channels, |x, y, c| {
        0.25 * (img.get(2 * x, 2 * y, c)
            + img.get(2 * x + 1, 2 * y, c)
            + img.get(2 * x, 2 * y + 1, c)
            + img.get(2 * x + 1, 2 * y + 1, c))
    }))
}

/// Adjoint of [`downsample2`] for a single-channel gradient.
pub fn downsample2_adjoint(grad: &[f64], coarse_w: usize, fine_w: usize, fine_h: usize) -> Vec<f64> {
    let mut out = vec![0.0; fine_w * fine_h];
    for (i, &g) in grad.iter().enumerate() {
        let (x, y) = (i % coarse_w, i / coarse_w);
        let q = 0.25 * g;
        out[2 * y * fine_w + 2 * x] += q;
        out[2 * y * fine_w + 2 * x + 1] += q;
        out[(2 * y + 1) * fine_w + 2 * x] += q;
        out[(2 * y + 1) * fine_w + 2 * x + 1] += q;
    }
    out
}

/// Coarse-to-fine stack, level 0 finest.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePyramid {
    pub levels: Vec<ImageBuffer>,
}

impl ImagePyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, l: usize) -> &ImageBuffer {
        &self.levels[l]
    }
}

/// Builds `levels` levels by repeated [`downsample2`].
pub fn build_pyramid(img: &ImageBuffer, levels: usize) -> Result<ImagePyramid> {
    let need = 1usize << levels.saturating_sub(1);
    if levels == 0 {
        return Err(Error::Config("a pyramid needs at least one level".into()));
    }
    img.require(need, need)?;
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for l in 1..levels {
        let next = downsample2(&out[l - 1])?;
        out.push(next);
    }
    Ok(ImagePyramid { levels: out })
}
