//! Faithfulness, localization, and compactness scores for patch maps.

mod compactness;
mod curves;
mod localization;

pub use compactness::{entropy_norm, gini, gini_index, normalized_entropy};
pub use curves::{deletion_auc, deletion_curve, insertion_auc, insertion_curve, PerturbationCurve};
pub use localization::{aupr, average_precision, pointing_game, upsample, Polarity};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::SegMask;
use crate::vit::ModelBundle;

pub const DEFAULT_REFERENCE: f32 = 0.5;

/// `2·patch_px + 1`.
pub fn default_blur_kernel(patch_px: usize) -> usize {
    2 * patch_px + 1
}

/// Patch indices by descending score; ties keep ascending index order.
pub fn rank_patches(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Min-max scaling to `[0, 1]`; a constant map becomes all 0.5.
pub fn normalize(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Negated so an empty or NaN map also lands here.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(max > min) {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|s| (s - min) / (max - min)).collect()
}

pub(crate) fn grid_of(scores: &[f64]) -> Result<usize> {
    let g = (scores.len() as f64).sqrt().round() as usize;
    if g == 0 || g * g != scores.len() {
        return Err(Error::ShapeMismatch {
            op: "patch grid",
            left: vec![g, g],
            right: vec![scores.len()],
        });
    }
    Ok(g)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::ShapeMismatch {
            op: "spearman",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Undefined("spearman of a constant vector".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Del,
    Ins,
    Aupr,
    Pg,
    Entropy,
    Gini,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Del,
        Metric::Ins,
        Metric::Aupr,
        Metric::Pg,
        Metric::Entropy,
        Metric::Gini,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Del => "del",
            Metric::Ins => "ins",
            Metric::Aupr => "aupr",
            Metric::Pg => "pg",
            Metric::Entropy => "entropy",
            Metric::Gini => "gini",
        }
    }

    pub fn needs_mask(&self) -> bool {
        matches!(self, Metric::Aupr | Metric::Pg)
    }

    pub fn needs_model(&self) -> bool {
        matches!(self, Metric::Del | Metric::Ins)
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub del_auc: Option<f64>,
    pub ins_auc: Option<f64>,
    pub ins_minus_del: Option<f64>,
    pub aupr1: Option<f64>,
    pub aupr0: Option<f64>,
    pub pg_hit: Option<u8>,
    pub entropy: Option<f64>,
    pub gini: Option<f64>,
}

impl MetricReport {
    /// Fills `ins_minus_del` when both AUCs are present.
    pub fn finish(&mut self) {
        self.ins_minus_del = match (self.ins_auc, self.del_auc) {
            (Some(i), Some(d)) => Some(i - d),
            _ => None,
        };
    }

    /// `key=value` lines in field order; absent values print as `na`.
    pub fn to_kv(&self) -> String {
        let f = |v: Option<f64>| v.map_or("na".to_string(), |x| x.to_string());
        let rows = [
            ("del_auc", f(self.del_auc)),
            ("ins_auc", f(self.ins_auc)),
            ("ins_minus_del", f(self.ins_minus_del)),
            ("aupr1", f(self.aupr1)),
            ("aupr0", f(self.aupr0)),
            (
                "pg_hit",
                self.pg_hit.map_or("na".to_string(), |x| x.to_string()),
            ),
            ("entropy", f(self.entropy)),
            ("gini", f(self.gini)),
        ];
        rows.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub metrics: Vec<Metric>,
    pub reference: f32,
    /// `None` selects `2·patch_px + 1`.
    pub blur_kernel: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metrics: Metric::ALL.to_vec(),
            reference: DEFAULT_REFERENCE,
            blur_kernel: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub deletion: Option<PerturbationCurve>,
    pub insertion: Option<PerturbationCurve>,
}

/// Computes the requested metrics. Model-based metrics need `model` and
/// `x`; localization metrics need `mask`.
pub fn evaluate(
    scores: &[f64],
    class: usize,
    model: Option<(&ModelBundle, &Image)>,
    mask: Option<&SegMask>,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    grid_of(scores)?;
    let mut out = Evaluation {
        report: MetricReport::default(),
        deletion: None,
        insertion: None,
    };
    let want = |m: Metric| opts.metrics.contains(&m);
    let need_model = || {
        model.ok_or_else(|| {
            Error::InvalidArgument("deletion/insertion need a model and image".into())
        })
    };
    let need_mask = || mask.ok_or_else(|| Error::InvalidArgument("aupr/pg need a mask".into()));
    if want(Metric::Del) {
        let (m, x) = need_model()?;
        let (c, auc) = deletion_auc(m, x, scores, class, opts.reference)?;
        out.report.del_auc = Some(auc);
        out.deletion = Some(c);
    }
    if want(Metric::Ins) {
        let (m, x) = need_model()?;
        let k = opts
            .blur_kernel
            .unwrap_or_else(|| default_blur_kernel(m.config.patch_px));
        let (c, auc) = insertion_auc(m, x, scores, class, k)?;
        out.report.ins_auc = Some(auc);
        out.insertion = Some(c);
    }
    if want(Metric::Aupr) {
        let mk = need_mask()?;
        out.report.aupr1 = Some(aupr(scores, mk, Polarity::Foreground)?);
        out.report.aupr0 = Some(aupr(scores, mk, Polarity::Background)?);
    }
    if want(Metric::Pg) {
        out.report.pg_hit = Some(pointing_game(scores, need_mask()?)? as u8);
    }
    if want(Metric::Entropy) {
        out.report.entropy = Some(entropy_norm(scores)?);
    }
    if want(Metric::Gini) {
        out.report.gini = Some(gini(scores)?);
    }
    out.report.finish();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_rules() {
        assert_eq!(rank_patches(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(rank_patches(&[0.3; 5]), vec![0, 1, 2, 3, 4]);
        assert_eq!(rank_patches(&[0.2, 0.5, 0.2, 0.5]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize(&[2.0, 4.0, 3.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(normalize(&[7.0; 3]), vec![0.5; 3]);
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
            1.0
        );
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // Ties: ranks [1.5, 1.5, 3] vs [1, 2, 3].
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 0.75f64.sqrt()).abs() < 1e-12);
        assert!(spearman(&[1.0; 3], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn report_kv_and_difference() {
        let mut r = MetricReport {
            del_auc: Some(0.25),
            ins_auc: Some(0.75),
            pg_hit: Some(1),
            ..Default::default()
        };
        r.finish();
        assert_eq!(r.ins_minus_del, Some(0.5));
        assert_eq!(
            r.to_kv(),
            "del_auc=0.25\nins_auc=0.75\nins_minus_del=0.5\naupr1=na\naupr0=na\npg_hit=1\nentropy=na\ngini=na\n"
        );
    }

    #[test]
    fn mask_metrics_without_model() {
        let mask = SegMask::from_patches(2, 2, &[true, false, false, false]).unwrap();
        let scores = [1.0, 0.0, 0.0, 0.0];
        let opts = EvalOptions {
            metrics: vec![Metric::Aupr, Metric::Pg, Metric::Gini, Metric::Entropy],
            ..Default::default()
        };
        let e = evaluate(&scores, 0, None, Some(&mask), &opts).unwrap();
        assert_eq!(e.report.aupr1, Some(1.0));
        assert_eq!(e.report.pg_hit, Some(1));
        assert_eq!(e.report.entropy, Some(0.0));
        assert!(evaluate(&scores, 0, None, None, &EvalOptions::default()).is_err());
    }
}
