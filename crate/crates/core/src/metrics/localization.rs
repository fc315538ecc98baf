use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::SegMask;

use super::{grid_of, normalize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Map is the confidence for foreground pixels.
    Foreground,
    /// `1 − map` is the confidence for background pixels.
    Background,
}

/// Patch scores replicated onto the pixels of `mask`'s resolution.
pub fn upsample(scores: &[f64], width: usize, height: usize) -> Result<Vec<f64>> {
    let grid = grid_of(scores)?;
    if width != height || !width.is_multiple_of(grid) {
        return Err(Error::ImageMismatch {
            expected: format!("square multiple of grid {grid}"),
            found: format!("{width}x{height}"),
        });
    }
    let ppx = width / grid;
    Ok((0..width * height)
        .map(|i| scores[(i / width / ppx) * grid + (i % width) / ppx])
        .collect())
}

/// Average precision over pixel confidences `conf` against `labels`,
/// stepping through distinct thresholds from high to low.
pub fn average_precision(conf: &[f64], labels: &[bool]) -> Result<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Undefined("no positive pixels".into()));
    }
    let mut idx: Vec<usize> = (0..conf.len()).collect();
    idx.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let t = conf[idx[i]];
        while i < idx.len() && conf[idx[i]] == t {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// AUPR of the min-max normalized map against `mask`.
pub fn aupr(scores: &[f64], mask: &SegMask, polarity: Polarity) -> Result<f64> {
    let norm = normalize(scores);
    let mut conf = upsample(&norm, mask.width(), mask.height())?;
    let labels: Vec<bool> = match polarity {
        Polarity::Foreground => mask.pixels().to_vec(),
        Polarity::Background => {
            for c in &mut conf {
                *c = 1.0 - *c;
            }
            mask.pixels().iter().map(|p| !p).collect()
        }
    };
    average_precision(&conf, &labels)
}

/// Whether the highest-scoring pixel (first in row-major order on ties)
/// is foreground.
pub fn pointing_game(scores: &[f64], mask: &SegMask) -> Result<bool> {
    if mask.foreground_count() == 0 {
        return Err(Error::Undefined("mask has no foreground".into()));
    }
    let px = upsample(scores, mask.width(), mask.height())?;
    let mut best = 0;
    for (i, &v) in px.iter().enumerate() {
        if v > px[best] {
            best = i;
        }
    }
    Ok(mask.pixels()[best])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(grid: usize, ppx: usize, fg: &[usize]) -> SegMask {
        let mut patches = vec![false; grid * grid];
        for &p in fg {
            patches[p] = true;
        }
        SegMask::from_patches(grid, ppx, &patches).unwrap()
    }

    #[test]
    fn perfect_and_constant_maps() {
        let mask = mask_from(4, 2, &[0, 1, 5]);
        let perfect: Vec<f64> = (0..16)
            .map(|p| [0, 1, 5].contains(&p) as u8 as f64)
            .collect();
        assert_eq!(aupr(&perfect, &mask, Polarity::Foreground).unwrap(), 1.0);
        assert_eq!(aupr(&perfect, &mask, Polarity::Background).unwrap(), 1.0);
        let flat = vec![0.3; 16];
        assert!((aupr(&flat, &mask, Polarity::Foreground).unwrap() - 3.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn empty_positive_set_is_an_error() {
        let none = mask_from(4, 2, &[]);
        assert!(aupr(&[0.0; 16], &none, Polarity::Foreground).is_err());
        assert!(pointing_game(&[0.0; 16], &none).is_err());
        let all = mask_from(4, 2, &(0..16).collect::<Vec<_>>());
        assert!(aupr(&[0.0; 16], &all, Polarity::Background).is_err());
    }

    #[test]
    fn pointing_game_rules() {
        let mask = mask_from(4, 2, &[3, 12]);
        let mut s = vec![0.0; 16];
        s[3] = 1.0;
        assert!(pointing_game(&s, &mask).unwrap());
        s[3] = 0.0;
        s[7] = 1.0;
        assert!(!pointing_game(&s, &mask).unwrap());
        // Tie between foreground patch 3 and background patch 7: patch 3's
        // first pixel comes first in row-major order.
        s[3] = 1.0;
        assert!(pointing_game(&s, &mask).unwrap());
        // Tie where the background patch comes first.
        let mut t = vec![0.0; 16];
        t[2] = 1.0;
        t[12] = 1.0;
        assert!(!pointing_game(&t, &mask).unwrap());
    }

    #[test]
    fn upsample_rejects_mismatched_sizes() {
        assert!(upsample(&[0.0; 16], 10, 10).is_err());
        assert!(upsample(&[0.0; 15], 8, 8).is_err());
        assert_eq!(
            upsample(&[1.0, 2.0, 3.0, 4.0], 2, 2).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
    }
}
