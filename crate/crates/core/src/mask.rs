use crate::error::{Error, Result};
use crate::image::Image;

/// Pixel-level binary segmentation mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl SegMask {
    pub fn new(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != width * height || width == 0 || height == 0 {
            return Err(Error::ShapeMismatch {
                op: "SegMask::new",
                left: vec![height, width],
                right: vec![pixels.len()],
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Nonzero in any channel marks foreground.
    pub fn from_image(image: &Image) -> Self {
        let c = image.channels();
        let pixels = image
            .data()
            .chunks_exact(c)
            .map(|px| px.iter().any(|&v| v != 0.0))
            .collect();
        Self {
            width: image.width(),
            height: image.height(),
            pixels,
        }
    }

    /// Patch-constant mask: every pixel of a foreground patch is set.
    pub fn from_patches(grid: usize, patch_px: usize, patches: &[bool]) -> Result<Self> {
        if patches.len() != grid * grid {
            return Err(Error::ShapeMismatch {
                op: "SegMask::from_patches",
                left: vec![grid, grid],
                right: vec![patches.len()],
            });
        }
        let side = grid * patch_px;
        let pixels = (0..side * side)
            .map(|i| patches[(i / side / patch_px) * grid + (i % side) / patch_px])
            .collect();
        Self::new(side, side, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn inverted(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| !p).collect(),
        }
    }

    pub fn require_size(&self, side: usize) -> Result<()> {
        if self.width != side || self.height != side {
            return Err(Error::ImageMismatch {
                expected: format!("{side}x{side}"),
                found: format!("{}x{}", self.width, self.height),
            });
        }
        Ok(())
    }

    /// A patch belongs to the object when strictly more than half of its
    /// pixels are foreground.
    pub fn patch_majority(&self, grid: usize, patch_px: usize) -> Result<Vec<bool>> {
        self.require_size(grid * patch_px)?;
        let area = patch_px * patch_px;
        Ok((0..grid * grid)
            .map(|p| {
                let (py, px) = (p / grid, p % grid);
                let fg = (py * patch_px..(py + 1) * patch_px)
                    .flat_map(|y| (px * patch_px..(px + 1) * patch_px).map(move |x| (x, y)))
                    .filter(|&(x, y)| self.pixels[y * self.width + x])
                    .count();
                2 * fg > area
            })
            .collect())
    }
}
