//! Grayscale images and the resampling operations the pipeline needs.
//!
//! Intensities are ink coverage in `[0, 1]`: 0 is blank paper, 1 is full ink.
//! PNG files store the conventional dark-on-light rendering, so a pixel value
//! `v` on disk maps to ink `1 - v / 255`.

use std::path::Path;

use image::{GenericImageView, GrayImage as PngGray, Luma};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Luminance weights applied to RGB inputs (ITU-R BT.601).
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// How samples outside the image are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Border {
    /// Blank paper.
    Zero,
    /// Nearest edge pixel.
    Clamp,
}

impl GrayImage {
    pub fn new(height: usize, width: usize) -> Self {
        GrayImage {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        GrayImage {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Shape(format!(
                "image {height}x{width} with {} values",
                data.len()
            )));
        }
        Ok(GrayImage { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        GrayImage { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn clamp_unit(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn mean(&self) -> f32 {
        self.data.iter().sum::<f32>() / self.data.len().max(1) as f32
    }

    pub fn mean_abs_diff(&self, other: &GrayImage) -> f32 {
        assert_eq!((self.height, self.width), (other.height, other.width));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f32>() / self.data.len() as f32
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres at
    /// integers).
    pub fn sample(&self, y: f64, x: f64, border: Border) -> f32 {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = (y - y0) as f32;
        let fx = (x - x0) as f32;
        let (y0, x0) = (y0 as isize, x0 as isize);
        let px = |yy: isize, xx: isize| -> f32 {
            match border {
                Border::Zero => {
                    if yy < 0 || xx < 0 || yy >= self.height as isize || xx >= self.width as isize {
                        0.0
                    } else {
                        self.data[yy as usize * self.width + xx as usize]
                    }
                }
                Border::Clamp => {
                    let yy = yy.clamp(0, self.height as isize - 1) as usize;
                    let xx = xx.clamp(0, self.width as isize - 1) as usize;
                    self.data[yy * self.width + xx]
                }
            }
        };
        let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
        let bottom = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear resize with half-pixel centre alignment, clamped to `[0, 1]`.
    /// Same-size requests return an exact copy.
    pub fn resize(&self, height: usize, width: usize) -> GrayImage {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut out = GrayImage::from_fn(height, width, |y, x| {
            let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            self.sample(src_y, src_x, Border::Clamp)
        });
        out.clamp_unit();
        out
    }

    /// Inverse-mapped warp: output pixel `(y, x)` reads the source at
    /// `map(y, x)`.
    pub fn warp(&self, height: usize, width: usize, border: Border, map: impl Fn(f64, f64) -> (f64, f64)) -> GrayImage {
        GrayImage::from_fn(height, width, |y, x| {
            let (sy, sx) = map(y as f64, x as f64);
            self.sample(sy, sx, border)
        })
    }

    /// Horizontal shear by `degrees` about the middle row, keeping the size.
    /// Positive angles lean the top of the image to the right.
    pub fn shear(&self, degrees: f64, border: Border) -> GrayImage {
        if degrees == 0.0 {
            return self.clone();
        }
        let t = degrees.to_radians().tan();
        let cy = (self.height as f64 - 1.0) / 2.0;
        // a source pixel at (y, x) lands at x + t * (cy - y)
        self.warp(self.height, self.width, border, |y, x| (y, x + t * (y - cy)))
    }

    /// Separable Gaussian blur with standard deviation `sigma` pixels.
    pub fn blur(&self, sigma: f64) -> GrayImage {
        if sigma <= 1e-3 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f32> = {
            let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
            let s: f64 = k.iter().sum();
            k.iter().map(|v| (v / s) as f32).collect()
        };
        let (h, w) = (self.height as isize, self.width as isize);
        let pass = |src: &GrayImage, horizontal: bool| -> GrayImage {
            GrayImage::from_fn(self.height, self.width, |y, x| {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let off = k as isize - radius;
                    let (yy, xx) = if horizontal {
                        (y as isize, (x as isize + off).clamp(0, w - 1))
                    } else {
                        ((y as isize + off).clamp(0, h - 1), x as isize)
                    };
                    acc += kv * src.data[yy as usize * self.width + xx as usize];
                }
                acc
            })
        };
        pass(&pass(self, true), false)
    }

    /// Bounding box `(y0, y1, x0, x1)` (exclusive ends) of pixels above `threshold`.
    pub fn ink_bounds(&self, threshold: f32) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) > threshold {
                    b = Some(match b {
                        None => (y, y + 1, x, x + 1),
                        Some((y0, y1, x0, x1)) => (y0.min(y), y1.max(y + 1), x0.min(x), x1.max(x + 1)),
                    });
                }
            }
        }
        b
    }

    pub fn crop(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> GrayImage {
        GrayImage::from_fn(y1 - y0, x1 - x0, |y, x| self.get(y0 + y, x0 + x))
    }

    /// `[1, H, W]` tensor for the networks.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[1, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
        .expect("image is non-empty")
    }

    pub fn to_png(&self) -> PngGray {
        let mut img = PngGray::new(self.width as u32, self.height as u32);
        for (i, p) in img.pixels_mut().enumerate() {
            let ink = self.data[i].clamp(0.0, 1.0);
            *p = Luma([((1.0 - ink) * 255.0).round() as u8]);
        }
        img
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_png().save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Loads PNG or PGM. Colour inputs are reduced with [`LUMA_WEIGHTS`]; the
    /// returned flag is true when such a conversion happened.
    pub fn load(path: &Path) -> Result<(GrayImage, bool)> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::Shape(format!("{}: empty image", path.display())));
        }
        let converted = img.color().has_color();
        let rgb = img.to_rgb32f();
        let data = rgb
            .pixels()
            .map(|p| {
                let lum = if converted {
                    LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2]
                } else {
                    p[0]
                };
                (1.0 - lum).clamp(0.0, 1.0)
            })
            .collect();
        Ok((GrayImage::from_vec(h as usize, w as usize, data)?, converted))
    }
}
