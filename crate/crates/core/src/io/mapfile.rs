//! Attribution maps as JSON documents, plus patch-constant heatmaps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::caap::{AttributionMap, AttributionMode, BlankSpec, LayerRange, SelectionOp};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::normalize;

pub const MAP_FORMAT: &str = "caap-map/1";

/// A map plus the resolved settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFile {
    pub map: AttributionMap,
    pub config: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct OnDisk {
    format: String,
    grid: usize,
    class_id: usize,
    mode: AttributionMode,
    blank: Option<BlankSpec>,
    select: SelectionOp,
    range: Option<LayerRange>,
    model_fingerprint: String,
    /// `grid` rows of `grid` scores.
    scores: Vec<Vec<f64>>,
    config: BTreeMap<String, String>,
}

impl MapFile {
    pub fn to_json(&self) -> Result<String> {
        self.map.validate()?;
        let m = &self.map;
        let disk = OnDisk {
            format: MAP_FORMAT.into(),
            grid: m.grid,
            class_id: m.class_id,
            mode: m.mode,
            blank: m.blank.clone(),
            select: m.select,
            range: m.range,
            model_fingerprint: format!("{:016x}", m.model_fingerprint),
            scores: m.scores.chunks(m.grid).map(|r| r.to_vec()).collect(),
            config: self.config.clone(),
        };
        let mut s = serde_json::to_string_pretty(&disk)
            .map_err(|e| Error::InvalidArgument(format!("map serialization: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let disk: OnDisk = serde_json::from_str(text)
            .map_err(|e| Error::format(path, format!("map file: {e}")))?;
        if disk.format != MAP_FORMAT {
            return Err(Error::format(
                path,
                format!("expected format {MAP_FORMAT:?}, found {:?}", disk.format),
            ));
        }
        if disk.scores.len() != disk.grid || disk.scores.iter().any(|r| r.len() != disk.grid) {
            return Err(Error::format(
                path,
                format!("score grid is not {0}x{0}", disk.grid),
            ));
        }
        let model_fingerprint = u64::from_str_radix(&disk.model_fingerprint, 16)
            .map_err(|_| Error::format(path, "model_fingerprint is not hex"))?;
        let map = AttributionMap {
            grid: disk.grid,
            scores: disk.scores.concat(),
            class_id: disk.class_id,
            mode: disk.mode,
            blank: disk.blank,
            select: disk.select,
            range: disk.range,
            model_fingerprint,
        };
        map.validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(MapFile {
            map,
            config: disk.config,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

/// Min-max normalized scores, each patch filling a `patch_px` square.
pub fn heatmap_image(map: &AttributionMap, patch_px: usize) -> Result<Image> {
    map.validate()?;
    let side = map.grid * patch_px;
    let norm = normalize(&map.scores);
    let data = (0..side * side)
        .map(|i| norm[(i / side / patch_px) * map.grid + (i % side) / patch_px] as f32)
        .collect();
    Image::new(side, side, 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(scores: Vec<f64>) -> MapFile {
        let grid = (scores.len() as f64).sqrt() as usize;
        MapFile {
            map: AttributionMap {
                grid,
                scores,
                class_id: 3,
                mode: AttributionMode::Approx,
                blank: Some(BlankSpec::BlurNoisy {
                    seed: 9,
                    sigma: 0.15,
                    kernel: 5,
                }),
                select: SelectionOp::Manhattan { radius: 1 },
                range: Some(LayerRange::new(1, 4)),
                model_fingerprint: 0xdead_beef_0123_4567,
            },
            config: BTreeMap::from([("threads".to_string(), "1".to_string())]),
        }
    }

    #[test]
    fn fixed_round_trip() {
        let m = sample(vec![0.1, 0.2, 1.0 / 3.0, 0.75]);
        let text = m.to_json().unwrap();
        assert!(text.contains("\"model_fingerprint\": \"deadbeef01234567\""));
        assert_eq!(MapFile::from_json(&text, Path::new("m")).unwrap(), m);
        assert_eq!(
            MapFile::from_json(&text, Path::new("m"))
                .unwrap()
                .to_json()
                .unwrap(),
            text
        );
    }

    #[test]
    fn rejects_ragged_grid_and_wrong_format() {
        let text = sample(vec![0.0; 4]).to_json().unwrap();
        let ragged = text.replacen("[\n      0.0,\n      0.0\n    ]", "[0.0]", 1);
        assert!(MapFile::from_json(&ragged, Path::new("m")).is_err());
        let other = text.replace(MAP_FORMAT, "other/1");
        assert!(MapFile::from_json(&other, Path::new("m")).is_err());
    }

    #[test]
    fn heatmap_is_patch_constant() {
        let m = sample(vec![0.0, 1.0, 0.5, 0.5]);
        let img = heatmap_image(&m.map, 2).unwrap();
        assert_eq!(img.width(), 4);
        assert_eq!(img.get(3, 0, 0), 1.0);
        assert_eq!(img.get(1, 3, 0), 0.5);
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(scores in proptest::collection::vec(-1e3f64..1e3, 9)) {
            let m = sample(scores);
            let back = MapFile::from_json(&m.to_json().unwrap(), Path::new("m")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
