//! Perceptual artifact detection scoring.
//!
//! Pixel metrics are micro-pooled by default: TP/FP/FN are summed over all
//! evaluated images before any ratio is taken. Only fake images enter the
//! pools. Instance metrics match each prediction against individual ground
//! truth polygons by prediction-normalized coverage.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::annotation::{ArtifactCategory, ImageRecord, Manifest, Role};
use crate::attention::Heatmap;
use crate::error::{Error, Result};
use crate::parallel::map_ordered;
use crate::predictions::{ByImage, CaPadPrediction, InstancePrediction, PadPrediction};
use crate::raster::{self, rasterize, region_to_mask, BinaryMask, RleMask};

/// Default heatmap binarization threshold.
pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl PixelCounts {
    pub fn from_masks(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        Ok(Self {
            tp: pred.intersection_area(gt)?,
            fp: pred.difference_area(gt)?,
            fn_: gt.difference_area(pred)?,
        })
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }
}

/// Ratios in `[0, 1]`. A metric whose denominator is zero is reported as 0
/// and its name is listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PixelMetrics {
    pub iou: f64,
    pub pixp: f64,
    pub pixr: f64,
    pub pixf1: f64,
    pub undefined: Vec<&'static str>,
}

fn guarded(num: u64, den: u64, name: &'static str, undefined: &mut Vec<&'static str>) -> f64 {
    if den == 0 {
        undefined.push(name);
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn pixel_metrics(c: &PixelCounts) -> PixelMetrics {
    let mut undefined = Vec::new();
    let iou = guarded(c.tp, c.tp + c.fp + c.fn_, "iou", &mut undefined);
    let pixp = guarded(c.tp, c.tp + c.fp, "pixp", &mut undefined);
    let pixr = guarded(c.tp, c.tp + c.fn_, "pixr", &mut undefined);
    let pixf1 = if pixp + pixr == 0.0 {
        undefined.push("pixf1");
        0.0
    } else {
        2.0 * pixp * pixr / (pixp + pixr)
    };
    PixelMetrics {
        iou,
        pixp,
        pixr,
        pixf1,
        undefined,
    }
}

/// IoU implied by pooled precision and recall, from
/// `1/IoU = 1/PixP + 1/PixR - 1`. Zero when either ratio is zero.
pub fn iou_from_ratios(pixp: f64, pixr: f64) -> f64 {
    if pixp == 0.0 || pixr == 0.0 {
        0.0
    } else {
        1.0 / (1.0 / pixp + 1.0 / pixr - 1.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Sum counts over images, then divide.
    #[default]
    Micro,
    /// Average per-image ratios over images with any TP/FP/FN.
    Macro,
}

#[derive(Debug, Clone, Default)]
pub struct PadOptions {
    pub pooling: Pooling,
    /// Worker threads; 1 runs inline, 0 picks the rayon default.
    pub jobs: usize,
    /// Per-manifest-image AJ verdicts. Images judged real are scored as if
    /// they had no localization prediction.
    pub gate: Option<Vec<Role>>,
}

impl PadOptions {
    fn gated_out(&self, idx: usize) -> bool {
        matches!(&self.gate, Some(v) if v[idx] == Role::Real)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PadRow {
    /// Category wire name, or `"all"`.
    pub key: String,
    pub level: Option<&'static str>,
    pub counts: PixelCounts,
    pub metrics: PixelMetrics,
    /// Images with a non-zero contribution to this row.
    pub images: usize,
}

/// Ground truth per category: the union of that category's polygons.
pub fn category_ground_truth(record: &ImageRecord) -> BTreeMap<ArtifactCategory, BinaryMask> {
    let mut out: BTreeMap<ArtifactCategory, BinaryMask> = BTreeMap::new();
    for a in &record.annotations {
        let m = rasterize(&a.polygon, record.width, record.height);
        match out.get_mut(&a.category) {
            Some(acc) => acc.union_with(&m).expect("same image dims"),
            None => {
                out.insert(a.category, m);
            }
        }
    }
    out
}

/// Category-agnostic ground truth: the union of every annotation.
pub fn union_ground_truth(record: &ImageRecord) -> BinaryMask {
    let mut out = BinaryMask::empty(record.width, record.height);
    for a in &record.annotations {
        out.union_with(&rasterize(&a.polygon, record.width, record.height))
            .expect("same image dims");
    }
    out
}

fn decode_for(record: &ImageRecord, rle: &RleMask) -> Result<BinaryMask> {
    if (rle.height, rle.width) != (record.height, record.width) {
        return Err(Error::DimensionMismatch {
            expected: (record.height, record.width),
            found: (rle.height, rle.width),
        });
    }
    raster::rle_decode(rle)
}

fn evaluated_fakes<T>(
    manifest: &Manifest,
    preds: &ByImage<T>,
    opts: &PadOptions,
) -> Result<Vec<usize>> {
    let fakes: Vec<usize> = manifest
        .images
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_fake())
        .map(|(i, _)| i)
        .collect();
    let missing: Vec<String> = fakes
        .iter()
        .filter(|&&i| !preds.contains_key(&i) && !opts.gated_out(i))
        .map(|&i| manifest.images[i].label())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingImage(missing));
    }
    Ok(fakes)
}

fn pool_rows<K: Clone>(
    per_image: &[Vec<PixelCounts>],
    keys: &[K],
    pooling: Pooling,
) -> Vec<(K, PixelCounts, PixelMetrics, usize)> {
    (0..keys.len())
        .map(|k| {
            let contributing: Vec<PixelCounts> = per_image
                .iter()
                .map(|row| row[k])
                .filter(|c| !c.is_zero())
                .collect();
            let counts = contributing
                .iter()
                .fold(PixelCounts::default(), |a, &b| a.merge(b));
            let metrics = match pooling {
                Pooling::Micro => pixel_metrics(&counts),
                Pooling::Macro => macro_average(&contributing),
            };
            (keys[k].clone(), counts, metrics, contributing.len())
        })
        .collect()
}

fn macro_average(per_image: &[PixelCounts]) -> PixelMetrics {
    if per_image.is_empty() {
        return pixel_metrics(&PixelCounts::default());
    }
    let n = per_image.len() as f64;
    let ms: Vec<PixelMetrics> = per_image.iter().map(pixel_metrics).collect();
    let mean = |f: fn(&PixelMetrics) -> f64| ms.iter().map(f).fold(0.0, |a, b| a + b) / n;
    PixelMetrics {
        iou: mean(|m| m.iou),
        pixp: mean(|m| m.pixp),
        pixr: mean(|m| m.pixr),
        pixf1: mean(|m| m.pixf1),
        undefined: Vec::new(),
    }
}

/// Per-category pixel metrics plus a pooled `"all"` row (listed last).
pub fn eval_pad(
    manifest: &Manifest,
    preds: &ByImage<PadPrediction>,
    opts: &PadOptions,
) -> Result<Vec<PadRow>> {
    let fakes = evaluated_fakes(manifest, preds, opts)?;
    let per_image = map_ordered(&fakes, opts.jobs, |&idx| {
        let record = &manifest.images[idx];
        let gt = category_ground_truth(record);
        let pred = preds.get(&idx).filter(|_| !opts.gated_out(idx));
        let empty = BinaryMask::empty(record.width, record.height);
        let mut row = Vec::with_capacity(ArtifactCategory::ALL.len() + 1);
        for cat in ArtifactCategory::ALL {
            let p = match pred.and_then(|p| p.get(&cat)) {
                Some(rle) => decode_for(record, rle)?,
                None => empty.clone(),
            };
            row.push(PixelCounts::from_masks(&p, gt.get(&cat).unwrap_or(&empty))?);
        }
        let all = row.iter().fold(PixelCounts::default(), |a, &b| a.merge(b));
        row.push(all);
        Ok(row)
    })?;

    let mut keys: Vec<(String, Option<&'static str>)> = ArtifactCategory::ALL
        .iter()
        .map(|c| (c.name().to_string(), Some(c.level().name())))
        .collect();
    keys.push(("all".into(), None));
    Ok(pool_rows(&per_image, &keys, opts.pooling)
        .into_iter()
        .map(|((key, level), counts, metrics, images)| PadRow {
            key,
            level,
            counts,
            metrics,
            images,
        })
        .collect())
}

/// Pixel set iff `value >= threshold`.
pub fn binarize_heatmap(h: &Heatmap, threshold: f64) -> Result<BinaryMask> {
    if let Some(i) = h.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(i));
    }
    let mut mask = BinaryMask::empty(h.width() as u32, h.height() as u32);
    for (i, &v) in h.values().iter().enumerate() {
        if v >= threshold {
            mask.set((i / h.width()) as u32, (i % h.width()) as u32, true);
        }
    }
    Ok(mask)
}

/// Category-agnostic pixel metrics against the union of all annotations.
pub fn eval_ca_pad(
    manifest: &Manifest,
    preds: &ByImage<CaPadPrediction>,
    binarize_threshold: f64,
    opts: &PadOptions,
) -> Result<PadRow> {
    let fakes = evaluated_fakes(manifest, preds, opts)?;
    let per_image = map_ordered(&fakes, opts.jobs, |&idx| {
        let record = &manifest.images[idx];
        let gt = union_ground_truth(record);
        let pred = match preds.get(&idx).filter(|_| !opts.gated_out(idx)) {
            None => BinaryMask::empty(record.width, record.height),
            Some(CaPadPrediction::Mask(rle)) => decode_for(record, rle)?,
            Some(CaPadPrediction::Heatmap(h)) => {
                let found = (h.height() as u32, h.width() as u32);
                if found != (record.height, record.width) {
                    return Err(Error::DimensionMismatch {
                        expected: (record.height, record.width),
                        found,
                    });
                }
                binarize_heatmap(h, binarize_threshold)?
            }
        };
        Ok(vec![PixelCounts::from_masks(&pred, &gt)?])
    })?;
    let (key, counts, metrics, images) = pool_rows(&per_image, &["all".to_string()], opts.pooling)
        .pop()
        .expect("one row");
    Ok(PadRow {
        key,
        level: None,
        counts,
        metrics,
        images,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InstanceTally {
    pub predictions: u64,
    pub true_positives: u64,
    pub ground_truth: u64,
    pub indicated: u64,
}

impl InstanceTally {
    pub fn merge(self, o: Self) -> Self {
        Self {
            predictions: self.predictions + o.predictions,
            true_positives: self.true_positives + o.true_positives,
            ground_truth: self.ground_truth + o.ground_truth,
            indicated: self.indicated + o.indicated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub undefined: Vec<&'static str>,
}

pub fn instance_metrics(t: &InstanceTally) -> InstanceMetrics {
    let mut undefined = Vec::new();
    let precision = guarded(t.true_positives, t.predictions, "precision", &mut undefined);
    let recall = guarded(t.indicated, t.ground_truth, "recall", &mut undefined);
    let f1 = if precision + recall == 0.0 {
        undefined.push("f1");
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    InstanceMetrics {
        precision,
        recall,
        f1,
        undefined,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRow {
    pub key: String,
    pub tally: InstanceTally,
    pub metrics: InstanceMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceMode {
    #[default]
    CategoryAware,
    CategoryAgnostic,
}

/// `area(pred ∩ gt) / area(pred) >= t`.
pub fn covers(intersection: u64, pred_area: u64, t: f64) -> bool {
    intersection as f64 / pred_area as f64 >= t
}

/// Weak-localization P@t / R@t / F1@t.
///
/// A prediction is a true positive when it covers at least one same-category
/// ground-truth instance on its image at `>= t`; a ground-truth instance is
/// indicated when some prediction covers it at `>= t`. Ground-truth polygons
/// are rasterized one by one, never unioned.
pub fn eval_instances(
    manifest: &Manifest,
    preds: &ByImage<Vec<InstancePrediction>>,
    t: f64,
    mode: InstanceMode,
    opts: &PadOptions,
) -> Result<Vec<InstanceRow>> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!("t = {t} outside (0, 1]")));
    }
    for &idx in preds.keys() {
        if !manifest.images[idx].is_fake() {
            return Err(Error::UnknownUid(manifest.images[idx].label()));
        }
    }
    let slot = |c: Option<ArtifactCategory>| -> Result<usize> {
        match mode {
            InstanceMode::CategoryAgnostic => Ok(0),
            InstanceMode::CategoryAware => c.map(|c| c as usize).ok_or_else(|| {
                Error::InvalidArgument("prediction without category in category-aware mode".into())
            }),
        }
    };
    let slots = match mode {
        InstanceMode::CategoryAgnostic => 1,
        InstanceMode::CategoryAware => ArtifactCategory::ALL.len(),
    };

    let fakes: Vec<usize> = manifest
        .images
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_fake())
        .map(|(i, _)| i)
        .collect();
    let no_preds = Vec::new();
    let per_image = map_ordered(&fakes, opts.jobs, |&idx| {
        let record = &manifest.images[idx];
        let gts: Vec<(usize, BinaryMask)> = record
            .annotations
            .iter()
            .map(|a| {
                Ok((
                    slot(Some(a.category))?,
                    rasterize(&a.polygon, record.width, record.height),
                ))
            })
            .collect::<Result<_>>()?;
        let image_preds = if opts.gated_out(idx) {
            &no_preds
        } else {
            preds.get(&idx).unwrap_or(&no_preds)
        };

        let mut tallies = vec![InstanceTally::default(); slots];
        let mut indicated = vec![false; gts.len()];
        for (k, p) in image_preds.iter().enumerate() {
            let s = slot(p.category)?;
            let mask = region_to_mask(&p.region, record.width, record.height)?;
            let area = mask.area();
            if area == 0 {
                return Err(Error::EmptyRegion(format!(
                    "{} prediction {k} rasterizes to nothing",
                    record.label()
                )));
            }
            let mut hit = false;
            for (g, (gs, gm)) in gts.iter().enumerate() {
                if *gs == s && covers(mask.intersection_area(gm)?, area, t) {
                    hit = true;
                    indicated[g] = true;
                }
            }
            tallies[s].predictions += 1;
            tallies[s].true_positives += hit as u64;
        }
        for ((s, _), ind) in gts.iter().zip(&indicated) {
            tallies[*s].ground_truth += 1;
            tallies[*s].indicated += *ind as u64;
        }
        Ok(tallies)
    })?;

    let pooled: Vec<InstanceTally> = (0..slots)
        .map(|s| {
            per_image
                .iter()
                .fold(InstanceTally::default(), |a, row| a.merge(row[s]))
        })
        .collect();
    let mut rows: Vec<InstanceRow> = Vec::new();
    if mode == InstanceMode::CategoryAware {
        for (cat, tally) in ArtifactCategory::ALL.iter().zip(&pooled) {
            rows.push(InstanceRow {
                key: cat.name().to_string(),
                tally: *tally,
                metrics: instance_metrics(tally),
            });
        }
    }
    let all = pooled
        .iter()
        .fold(InstanceTally::default(), |a, &b| a.merge(b));
    rows.push(InstanceRow {
        key: "all".into(),
        tally: all,
        metrics: instance_metrics(&all),
    });
    Ok(rows)
}
