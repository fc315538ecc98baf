use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::toy::XorShift64Star;

/// Neutral target image the source activations are patched into.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlankSpec {
    Black,
    #[default]
    White,
    /// Per-channel constants; a single value is used for every channel.
    Mean {
        values: Vec<f32>,
    },
    /// I.i.d. `N(0.5, sigma²)` per sample, clamped to `[0, 1]`.
    Noisy {
        seed: u64,
        sigma: f32,
    },
    /// `Noisy`, then a separable box blur of odd width `kernel`, applied
    /// twice.
    BlurNoisy {
        seed: u64,
        sigma: f32,
        kernel: usize,
    },
}

impl BlankSpec {
    pub const DEFAULT_SIGMA: f32 = 0.15;
    pub const DEFAULT_BLUR_KERNEL: usize = 5;
    pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];

    pub fn label(&self) -> &'static str {
        match self {
            BlankSpec::Black => "black",
            BlankSpec::White => "white",
            BlankSpec::Mean { .. } => "mean",
            BlankSpec::Noisy { .. } => "noisy",
            BlankSpec::BlurNoisy { .. } => "blurnoisy",
        }
    }

    /// The five kinds in ablation order, with default parameters.
    pub fn all_kinds(seed: u64, channels: usize) -> Vec<BlankSpec> {
        vec![
            BlankSpec::Black,
            BlankSpec::White,
            BlankSpec::default_mean(channels),
            BlankSpec::Noisy {
                seed,
                sigma: Self::DEFAULT_SIGMA,
            },
            BlankSpec::BlurNoisy {
                seed,
                sigma: Self::DEFAULT_SIGMA,
                kernel: Self::DEFAULT_BLUR_KERNEL,
            },
        ]
    }

    /// ImageNet channel means; gray images get their average.
    pub fn default_mean(channels: usize) -> BlankSpec {
        let m = Self::IMAGENET_MEAN;
        let values = if channels == 3 {
            m.to_vec()
        } else {
            vec![(m[0] + m[1] + m[2]) / 3.0]
        };
        BlankSpec::Mean { values }
    }

    pub fn make(&self, width: usize, height: usize, channels: usize) -> Result<Image> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "blank dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        match self {
            BlankSpec::Black => Ok(Image::filled(width, height, channels, 0.0)),
            BlankSpec::White => Ok(Image::filled(width, height, channels, 1.0)),
            BlankSpec::Mean { values } => {
                if values.len() != channels && values.len() != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "{} mean values for {channels} channels",
                        values.len()
                    )));
                }
                let mut img = Image::filled(width, height, channels, 0.0);
                for (i, v) in img.data_mut().iter_mut().enumerate() {
                    *v = values[if values.len() == 1 { 0 } else { i % channels }];
                }
                img.clamp01();
                Ok(img)
            }
            BlankSpec::Noisy { seed, sigma } => noisy(*seed, *sigma, width, height, channels),
            BlankSpec::BlurNoisy {
                seed,
                sigma,
                kernel,
            } => {
                if kernel % 2 == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "blur kernel must be odd, got {kernel}"
                    )));
                }
                noisy(*seed, *sigma, width, height, channels)?.box_blur(*kernel, 2)
            }
        }
    }
}

fn noisy(seed: u64, sigma: f32, width: usize, height: usize, channels: usize) -> Result<Image> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be >= 0, got {sigma}"
        )));
    }
    let mut rng = XorShift64Star::new(seed);
    let data = (0..width * height * channels)
        .map(|_| (0.5 + sigma as f64 * rng.next_gaussian()).clamp(0.0, 1.0) as f32)
        .collect();
    Image::new(width, height, channels, data)
}

/// Builds the blank for `spec` at the resolution `model` expects.
pub fn make_blank(spec: &BlankSpec, width: usize, height: usize, channels: usize) -> Result<Image> {
    spec.make(width, height, channels)
}
