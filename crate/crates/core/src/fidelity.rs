//! Perceptual Artifact Ratio (PAR) and accuracy-by-fidelity binning, plus the
//! distribution of per-instance mean confidence.

use serde::Serialize;

use crate::aj;
use crate::annotation::{Manifest, Role};
use crate::error::{Error, Result};
use crate::pad::union_ground_truth;
use crate::predictions::AjPrediction;
use crate::ImageRecord;

/// Fraction of the image covered by the union of its annotations.
pub fn par(record: &ImageRecord) -> Result<f64> {
    if !record.is_fake() {
        return Err(Error::RealImage(record.uid.clone()));
    }
    let covered = union_ground_truth(record).area();
    Ok(covered as f64 / (record.width as u64 * record.height as u64) as f64)
}

/// Bin edges over `(0, 1]`; PAR == 0 always has its own bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityBinSpec {
    pub mode: &'static str,
    pub edges: Vec<f64>,
}

impl FidelityBinSpec {
    /// Fixed edges; must start at 0, end at 1 and increase strictly.
    pub fn fixed(edges: Vec<f64>) -> Result<Self> {
        let ok = edges.len() >= 2
            && edges[0] == 0.0
            && *edges.last().unwrap() == 1.0
            && edges.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "bin edges {edges:?} must increase strictly from 0 to 1"
            )));
        }
        Ok(Self {
            mode: "fixed",
            edges,
        })
    }

    /// Equal-count edges over the positive PAR values. Bins are `(lo, hi]`
    /// with each upper edge placed on an observed value.
    pub fn quantiles(pars: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("need at least one bin".into()));
        }
        let mut positive: Vec<f64> = pars.iter().copied().filter(|&p| p > 0.0).collect();
        positive.sort_by(|a, b| a.total_cmp(b));
        let mut edges = vec![0.0];
        let n = positive.len();
        for k in 1..bins {
            if n == 0 {
                break;
            }
            let idx = (k * n).div_ceil(bins).saturating_sub(1);
            let e = positive[idx];
            if e > *edges.last().unwrap() && e < 1.0 {
                edges.push(e);
            }
        }
        edges.push(1.0);
        Ok(Self {
            mode: "quantile",
            edges,
        })
    }

    /// Bin index for a positive PAR.
    pub fn bin_of(&self, par: f64) -> usize {
        self.edges
            .windows(2)
            .position(|w| par > w[0] && par <= w[1])
            .unwrap_or(self.edges.len() - 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityBin {
    pub label: String,
    pub count: u64,
    pub detected: u64,
    /// Correctly flagged fakes / bin size; `None` for empty bins.
    pub fake_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityTable {
    pub bins: Vec<FidelityBin>,
    pub spec: FidelityBinSpec,
}

/// PAR of every fake image, in manifest order, paired with its manifest index.
pub fn fake_pars(manifest: &Manifest) -> Vec<(usize, f64)> {
    manifest
        .images
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_fake())
        .map(|(i, r)| (i, par(r).expect("fake record")))
        .collect()
}

pub fn accuracy_by_par(
    manifest: &Manifest,
    preds: &[AjPrediction],
    threshold: f64,
    spec: &FidelityBinSpec,
    warnings: &mut Vec<String>,
) -> Result<FidelityTable> {
    let verdicts = fake_verdicts(manifest, preds, threshold, warnings)?;
    let mut bins: Vec<FidelityBin> = std::iter::once("par=0".to_string())
        .chain(
            spec.edges
                .windows(2)
                .map(|w| format!("({},{}]", w[0], w[1])),
        )
        .map(|label| FidelityBin {
            label,
            count: 0,
            detected: 0,
            fake_acc: None,
        })
        .collect();
    for (idx, p) in fake_pars(manifest) {
        let b = if p == 0.0 { 0 } else { 1 + spec.bin_of(p) };
        bins[b].count += 1;
        bins[b].detected += (verdicts[idx] == Some(Role::Fake)) as u64;
    }
    for b in &mut bins {
        if b.count > 0 {
            b.fake_acc = Some(b.detected as f64 / b.count as f64);
        }
    }
    Ok(FidelityTable {
        bins,
        spec: spec.clone(),
    })
}

/// Verdicts for fakes only; reals need not be covered.
fn fake_verdicts(
    manifest: &Manifest,
    preds: &[AjPrediction],
    threshold: f64,
    warnings: &mut Vec<String>,
) -> Result<Vec<Option<Role>>> {
    let fake_preds: Vec<AjPrediction> = preds
        .iter()
        .filter(|p| p.role == Role::Fake)
        .cloned()
        .collect();
    let fakes_only = Manifest {
        schema_version: manifest.schema_version.clone(),
        images: manifest
            .images
            .iter()
            .filter(|r| r.is_fake())
            .cloned()
            .collect(),
    };
    let v = aj::resolve_verdicts(&fakes_only, &fake_preds, threshold, warnings)?;
    let mut it = v.into_iter();
    Ok(manifest
        .images
        .iter()
        .map(|r| if r.is_fake() { it.next() } else { None })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceHistogram {
    pub bin_width: f64,
    /// `[lo, hi)` per bin; the last bin is closed at 1.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub scored_instances: u64,
}

/// Number of bins covering `[0, 1]` at the given width.
pub fn histogram_bins(bin_width: f64) -> usize {
    ((1.0 / bin_width) - 1e-9).ceil().max(1.0) as usize
}

/// Bin of `value` with edges `k * bin_width`; values at 1 land in the last bin.
pub fn histogram_bin(value: f64, bin_width: f64, bins: usize) -> usize {
    let mut k = ((value / bin_width).floor().max(0.0) as usize).min(bins - 1);
    while k > 0 && value < k as f64 * bin_width {
        k -= 1;
    }
    while k + 1 < bins && value >= (k + 1) as f64 * bin_width {
        k += 1;
    }
    k
}

pub fn confidence_histogram(manifest: &Manifest, bin_width: f64) -> Result<ConfidenceHistogram> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "bin width {bin_width} outside (0, 1]"
        )));
    }
    let bins = histogram_bins(bin_width);
    let mut counts = vec![0u64; bins];
    let mut scored = 0;
    for a in manifest.images.iter().flat_map(|r| &r.annotations) {
        if let Some(m) = a.mean_confidence() {
            counts[histogram_bin(m, bin_width, bins)] += 1;
            scored += 1;
        }
    }
    if scored == 0 {
        return Err(Error::NoScoredInstances);
    }
    Ok(ConfidenceHistogram {
        bin_width,
        edges: (0..=bins)
            .map(|k| (k as f64 * bin_width).min(1.0))
            .collect(),
        counts,
        scored_instances: scored,
    })
}
