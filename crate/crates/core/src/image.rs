//! Planar-free pixel grids: row-major, channels interleaved per pixel,
//! values nominally in `[0, 1]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch {
                op: "Image::new",
                left: vec![height, width, channels],
                right: vec![data.len()],
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn dims_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub fn require_same_dims(&self, other: &Image) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::ImageMismatch {
                expected: self.dims_string(),
                found: other.dims_string(),
            })
        }
    }

    /// Copies the square `patch_px` region of patch `patch` (row-major over a
    /// grid of `width / patch_px` columns) from `src` into `self`.
    pub fn copy_patch_from(&mut self, src: &Image, patch: usize, patch_px: usize) {
        let cols = self.width / patch_px;
        let (py, px) = (patch / cols, patch % cols);
        let c = self.channels;
        for y in py * patch_px..(py + 1) * patch_px {
            let start = (y * self.width + px * patch_px) * c;
            let end = start + patch_px * c;
            self.data[start..end].copy_from_slice(&src.data[start..end]);
        }
    }

    pub fn fill_patch(&mut self, patch: usize, patch_px: usize, value: f32) {
        let cols = self.width / patch_px;
        let (py, px) = (patch / cols, patch % cols);
        let c = self.channels;
        for y in py * patch_px..(py + 1) * patch_px {
            let start = (y * self.width + px * patch_px) * c;
            self.data[start..start + patch_px * c].fill(value);
        }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Separable box blur with an odd `kernel` width, repeated `passes`
    /// times. Borders replicate the edge pixel.
    pub fn box_blur(&self, kernel: usize, passes: usize) -> Result<Image> {
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "blur kernel must be odd, got {kernel}"
            )));
        }
        let mut out = self.clone();
        if kernel == 1 {
            return Ok(out);
        }
        for _ in 0..passes {
            out = out.blur_axis(kernel, true);
            out = out.blur_axis(kernel, false);
        }
        Ok(out)
    }

    fn blur_axis(&self, kernel: usize, horizontal: bool) -> Image {
        let r = (kernel / 2) as isize;
        let (w, h, c) = (self.width as isize, self.height as isize, self.channels);
        let mut out = vec![0.0f32; self.data.len()];
        let norm = 1.0 / kernel as f32;
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0f32;
                    for o in -r..=r {
                        let (sx, sy) = if horizontal {
                            ((x + o).clamp(0, w - 1), y)
                        } else {
                            (x, (y + o).clamp(0, h - 1))
                        };
                        acc += self.data[((sy * w + sx) as usize) * c + ch];
                    }
                    out[((y * w + x) as usize) * c + ch] = acc * norm;
                }
            }
        }
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_one_is_identity() {
        let img = Image::new(2, 2, 1, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        assert_eq!(img.box_blur(1, 2).unwrap(), img);
    }

    #[test]
    fn blur_preserves_constants_and_rejects_even_kernels() {
        let img = Image::filled(6, 5, 3, 0.75);
        let b = img.box_blur(3, 2).unwrap();
        assert!(b.data().iter().all(|v| (v - 0.75).abs() < 1e-6));
        assert!(img.box_blur(4, 1).is_err());
    }

    #[test]
    fn patch_copy_touches_only_that_patch() {
        let src = Image::filled(4, 4, 1, 1.0);
        let mut dst = Image::filled(4, 4, 1, 0.0);
        dst.copy_patch_from(&src, 3, 2);
        let ones: Vec<(usize, usize)> = (0..4)
            .flat_map(|y| (0..4).map(move |x| (x, y)))
            .filter(|&(x, y)| dst.get(x, y, 0) == 1.0)
            .collect();
        assert_eq!(ones, vec![(2, 2), (3, 2), (2, 3), (3, 3)]);
    }
}
