//! Causal attribution via activation patching.
//!
//! For every patch `p` a selection `S(p)` of patch tokens is pinned to the
//! activations of the real image (source) while every other token keeps the
//! activations of a blank image (target). The class probability read off a
//! CLS token that sees this patched context is the score of `p`.
//!
//! Layer ranges are 1-based and inclusive: `(l_s, l_e)` pins `S(p)` for
//! layers `1..=l_e`, runs the CLS token live from layer `l_s + 1` (starting
//! from the blank CLS residual after layer `l_s`), and lets the selected
//! tokens run live from layer `l_e + 1`. Unselected tokens always serve the
//! blank pass's keys and values of the current layer.

mod approx;
mod blank;
mod input;
mod patching;
mod selection;

pub use approx::{caap_approx, precompute_blank_stats, BlankStats};
pub use blank::{make_blank, BlankSpec};
pub use input::{input_deletion_attr, input_insertion_attr};
pub use patching::{caap_naive, caap_parallel, naive_plan, parallel_plan, PatchingContext};
pub use selection::SelectionOp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::vit::ModelBundle;

/// `⌈2L/3⌉`.
pub fn default_end_layer(layers: usize) -> usize {
    (2 * layers).div_ceil(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// `(1, ⌈2L/3⌉)`.
    pub fn auto(layers: usize) -> Self {
        Self::new(1, default_end_layer(layers))
    }

    /// The CLS token must have at least one live layer, so `start < L`.
    pub fn validate(&self, layers: usize) -> Result<()> {
        if self.start < 1 || self.start > self.end || self.end > layers || self.start >= layers {
            return Err(Error::InvalidConfig(format!(
                "layer range {}..{} invalid for {layers} layers (need 1 <= start <= end <= {layers}, start < {layers})",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for LayerRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// A layer range as given by a user: `auto` or `a..b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LayerSpec {
    #[default]
    Auto,
    Explicit(LayerRange),
}

impl LayerSpec {
    pub fn resolve(&self, layers: usize) -> Result<LayerRange> {
        let r = match *self {
            LayerSpec::Auto => LayerRange::auto(layers),
            LayerSpec::Explicit(r) => r,
        };
        r.validate(layers)?;
        Ok(r)
    }
}

impl std::str::FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(LayerSpec::Auto);
        }
        let bad = || Error::InvalidArgument(format!("layer range {s:?} is neither auto nor a..b"));
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let a = a.trim().parse().map_err(|_| bad())?;
        let b = b.trim().parse().map_err(|_| bad())?;
        Ok(LayerSpec::Explicit(LayerRange::new(a, b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMode {
    Naive,
    #[default]
    Parallel,
    Approx,
    InputInsert,
    InputDelete,
}

impl AttributionMode {
    pub const ALL: [AttributionMode; 5] = [
        AttributionMode::Naive,
        AttributionMode::Parallel,
        AttributionMode::Approx,
        AttributionMode::InputInsert,
        AttributionMode::InputDelete,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AttributionMode::Naive => "naive",
            AttributionMode::Parallel => "parallel",
            AttributionMode::Approx => "approx",
            AttributionMode::InputInsert => "input-insert",
            AttributionMode::InputDelete => "input-delete",
        }
    }

    pub fn uses_layers(&self) -> bool {
        matches!(
            self,
            AttributionMode::Naive | AttributionMode::Parallel | AttributionMode::Approx
        )
    }
}

impl std::str::FromStr for AttributionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s:?}")))
    }
}

/// Per-patch scores plus what produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub grid: usize,
    /// Row-major, one per patch.
    pub scores: Vec<f64>,
    pub class_id: usize,
    pub mode: AttributionMode,
    /// `None` when the caller supplied the blank image directly.
    pub blank: Option<BlankSpec>,
    pub select: SelectionOp,
    /// `None` for the input-level modes.
    pub range: Option<LayerRange>,
    pub model_fingerprint: u64,
}

impl AttributionMap {
    pub fn num_patches(&self) -> usize {
        self.scores.len()
    }

    /// Index of the highest score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.scores.len() != self.grid * self.grid {
            return Err(Error::ShapeMismatch {
                op: "AttributionMap",
                left: vec![self.grid, self.grid],
                right: vec![self.scores.len()],
            });
        }
        if let Some(i) = self.scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("score {i} is not finite")));
        }
        Ok(())
    }
}

pub(crate) fn check_class(model: &ModelBundle, class: usize) -> Result<()> {
    if class >= model.config.classes {
        return Err(Error::InvalidArgument(format!(
            "class {class} outside {} classes",
            model.config.classes
        )));
    }
    Ok(())
}

/// Everything needed to attribute one image besides the model and pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionRequest {
    pub class: usize,
    pub mode: AttributionMode,
    pub select: SelectionOp,
    pub range: LayerRange,
    pub blank: BlankSpec,
}

/// Builds the blank, runs the requested mode, and records the blank spec in
/// the resulting map.
pub fn attribute(
    model: &ModelBundle,
    x: &Image,
    req: &AttributionRequest,
) -> Result<AttributionMap> {
    model.check_image(x)?;
    let x0 = req.blank.make(x.width(), x.height(), x.channels())?;
    let mut map = match req.mode {
        AttributionMode::Naive => caap_naive(model, x, &x0, req.class, req.range, req.select)?,
        AttributionMode::Parallel => {
            caap_parallel(model, x, &x0, req.class, req.range, req.select)?
        }
        AttributionMode::Approx => {
            let ctx = PatchingContext::new(model, x, &x0)?;
            let stats = precompute_blank_stats(model, &ctx.target, req.range)?;
            ctx.approx(req.class, req.range, req.select, &stats)?
        }
        AttributionMode::InputInsert => input_insertion_attr(model, x, &x0, req.class, req.select)?,
        AttributionMode::InputDelete => input_deletion_attr(model, x, &x0, req.class, req.select)?,
    };
    map.blank = Some(req.blank.clone());
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_end_layer_rule() {
        assert_eq!(default_end_layer(12), 8);
        assert_eq!(default_end_layer(24), 16);
        assert_eq!(default_end_layer(6), 4);
        assert_eq!(default_end_layer(2), 2);
        assert_eq!(LayerRange::auto(12), LayerRange::new(1, 8));
    }

    #[test]
    fn range_validation() {
        assert!(LayerRange::new(1, 6).validate(6).is_ok());
        assert!(LayerRange::new(3, 2).validate(6).is_err());
        assert!(LayerRange::new(1, 7).validate(6).is_err());
        assert!(LayerRange::new(0, 2).validate(6).is_err());
        assert!(LayerRange::new(6, 6).validate(6).is_err());
    }

    #[test]
    fn parses_layer_specs_and_modes() {
        assert_eq!("auto".parse::<LayerSpec>().unwrap(), LayerSpec::Auto);
        assert_eq!(
            "2..5".parse::<LayerSpec>().unwrap(),
            LayerSpec::Explicit(LayerRange::new(2, 5))
        );
        assert!("2-5".parse::<LayerSpec>().is_err());
        assert!("1..9".parse::<LayerSpec>().unwrap().resolve(6).is_err());
        for m in AttributionMode::ALL {
            assert_eq!(m.name().parse::<AttributionMode>().unwrap(), m);
        }
    }
}
