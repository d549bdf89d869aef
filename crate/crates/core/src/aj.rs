//! Authenticity judgment scoring. Fake is the positive class.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::annotation::{Manifest, Role};
use crate::error::{Error, Result};
use crate::predictions::{AjPrediction, ImageIndex};

/// Default decision threshold on the fake probability.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Hard verdict for one prediction: fake iff `score >= threshold`.
pub fn verdict(pred: &AjPrediction, threshold: f64) -> Role {
    match (pred.label, pred.score) {
        (Some(label), _) => label,
        (None, Some(s)) if s >= threshold => Role::Fake,
        _ => Role::Real,
    }
}

pub fn binarize_scores(preds: &[AjPrediction], threshold: f64) -> Vec<Role> {
    preds.iter().map(|p| verdict(p, threshold)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, truth: Role, predicted: Role) {
        match (truth, predicted) {
            (Role::Fake, Role::Fake) => self.tp += 1,
            (Role::Real, Role::Fake) => self.fp += 1,
            (Role::Real, Role::Real) => self.tn += 1,
            (Role::Fake, Role::Real) => self.fn_ += 1,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Metric ratios in `[0, 1]`; multiply by 100 for the tabulated percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AjMetrics {
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl AjMetrics {
    pub fn percentages(&self) -> AjMetrics {
        AjMetrics {
            acc: 100.0 * self.acc,
            precision: 100.0 * self.precision,
            recall: 100.0 * self.recall,
            f1: 100.0 * self.f1,
        }
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean of real-class and fake-class accuracy.
pub fn balanced_accuracy(real_acc: f64, fake_acc: f64) -> f64 {
    0.5 * (real_acc + fake_acc)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn aj_metrics(c: &ConfusionCounts) -> Result<AjMetrics> {
    if c.tp + c.fn_ == 0 {
        return Err(Error::EmptyClass("fake"));
    }
    if c.tn + c.fp == 0 {
        return Err(Error::EmptyClass("real"));
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Ok(AjMetrics {
        acc: balanced_accuracy(ratio(c.tn, c.tn + c.fp), recall),
        precision,
        recall,
        f1: f1_score(precision, recall),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AjRow {
    /// Generator name, or `"all"` for the pooled row.
    pub generator: String,
    pub counts: ConfusionCounts,
    pub metrics: AjMetrics,
}

/// Maps every manifest record to its hard verdict, failing on gaps.
pub fn resolve_verdicts(
    manifest: &Manifest,
    preds: &[AjPrediction],
    threshold: f64,
    warnings: &mut Vec<String>,
) -> Result<Vec<Role>> {
    let index = ImageIndex::new(manifest);
    let mut verdicts: HashMap<usize, Role> = HashMap::new();
    for p in preds {
        match index.find(&p.uid, p.role, p.generator.as_deref()) {
            Some(i) => {
                if verdicts.insert(i, verdict(p, threshold)).is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "more than one prediction for {}",
                        manifest.images[i].label()
                    )));
                }
            }
            None => warnings.push(format!(
                "prediction for unknown image {}/{}/{} ignored",
                p.uid,
                p.role.name(),
                p.generator.as_deref().unwrap_or("-")
            )),
        }
    }
    let missing: Vec<String> = manifest
        .images
        .iter()
        .enumerate()
        .filter(|(i, _)| !verdicts.contains_key(i))
        .map(|(_, r)| r.label())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPrediction(missing));
    }
    Ok((0..manifest.images.len()).map(|i| verdicts[&i]).collect())
}

/// One row per generator plus a pooled `"all"` row (listed first). Every
/// real image is a negative in every row.
pub fn aj_per_generator(
    manifest: &Manifest,
    preds: &[AjPrediction],
    threshold: f64,
    warnings: &mut Vec<String>,
) -> Result<Vec<AjRow>> {
    let verdicts = resolve_verdicts(manifest, preds, threshold, warnings)?;
    let mut reals = ConfusionCounts::default();
    let mut fakes: BTreeMap<&str, ConfusionCounts> = BTreeMap::new();
    for (record, &v) in manifest.images.iter().zip(&verdicts) {
        match &record.generator {
            None => reals.record(Role::Real, v),
            Some(g) => fakes.entry(g.as_str()).or_default().record(Role::Fake, v),
        }
    }
    let all = fakes.values().fold(reals, |acc, c| acc.merge(*c));
    let mut rows = vec![AjRow {
        generator: "all".into(),
        counts: all,
        metrics: aj_metrics(&all)?,
    }];
    for (g, c) in fakes {
        let counts = reals.merge(c);
        rows.push(AjRow {
            generator: g.to_string(),
            counts,
            metrics: aj_metrics(&counts)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::parse_manifest;

    fn score(uid: &str, role: Role, gen: Option<&str>, s: f64) -> AjPrediction {
        AjPrediction {
            uid: uid.into(),
            generator: gen.map(String::from),
            role,
            score: Some(s),
            label: None,
        }
    }

    #[test]
    fn threshold_boundary_is_fake() {
        let preds = vec![
            score("a", Role::Fake, Some("g"), 0.5),
            score("a", Role::Fake, Some("g"), 0.49),
        ];
        assert_eq!(binarize_scores(&preds, 0.5), vec![Role::Fake, Role::Real]);
        let zeros = vec![score("a", Role::Real, None, 0.0); 4];
        assert!(binarize_scores(&zeros, 0.5)
            .iter()
            .all(|&r| r == Role::Real));
    }

    #[test]
    fn table_identities() {
        // P 39.7, R 5.6 -> F1 9.8
        assert!((100.0 * f1_score(0.397, 0.056) - 9.8).abs() <= 0.05);
        // real-acc 81.2, fake-acc 39.7 -> 60.45, tabulated as 60.4
        assert!((balanced_accuracy(81.2, 39.7) - 60.45).abs() < 1e-9);
    }

    #[test]
    fn perfect_predictions() {
        let c = ConfusionCounts {
            tp: 5,
            fp: 0,
            tn: 3,
            fn_: 0,
        };
        let m = aj_metrics(&c).unwrap().percentages();
        assert_eq!(
            (m.acc, m.precision, m.recall, m.f1),
            (100.0, 100.0, 100.0, 100.0)
        );
    }

    #[test]
    fn degenerate_conventions() {
        let no_pos_calls = ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 4,
            fn_: 4,
        };
        let m = aj_metrics(&no_pos_calls).unwrap();
        assert_eq!((m.precision, m.f1, m.acc), (0.0, 0.0, 0.5));
        let no_reals = ConfusionCounts {
            tp: 3,
            ..Default::default()
        };
        assert_eq!(aj_metrics(&no_reals), Err(Error::EmptyClass("real")));
        assert_eq!(
            aj_metrics(&ConfusionCounts::default()),
            Err(Error::EmptyClass("fake"))
        );
    }

    fn three_gen_manifest() -> Manifest {
        let mut images = vec![];
        for uid in ["u1", "u2"] {
            images.push(format!(
                r#"{{"uid":"{uid}","role":"real","generator":null,"width":4,"height":4}}"#
            ));
            for g in ["ga", "gb", "gc"] {
                images.push(format!(
                    r#"{{"uid":"{uid}","role":"fake","generator":"{g}","width":4,"height":4}}"#
                ));
            }
        }
        let doc = format!(
            r#"{{"schema_version":"1","images":[{}]}}"#,
            images.join(",")
        );
        parse_manifest(doc.as_bytes()).unwrap()
    }

    #[test]
    fn per_generator_table_against_hand_counts() {
        let m = three_gen_manifest();
        let preds = vec![
            score("u1", Role::Real, None, 0.1),
            score("u2", Role::Real, None, 0.7), // false alarm
            score("u1", Role::Fake, Some("ga"), 0.9),
            score("u2", Role::Fake, Some("ga"), 0.8),
            score("u1", Role::Fake, Some("gb"), 0.2),
            score("u2", Role::Fake, Some("gb"), 0.6),
            score("u1", Role::Fake, Some("gc"), 0.1),
            score("u2", Role::Fake, Some("gc"), 0.3),
        ];
        let mut warnings = vec![];
        let rows = aj_per_generator(&m, &preds, 0.5, &mut warnings).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.generator.as_str()).collect();
        assert_eq!(names, ["all", "ga", "gb", "gc"]);

        // hand-tallied: reals tn=1 fp=1; ga tp=2; gb tp=1 fn=1; gc fn=2
        let expect = [
            (3, 1, 1, 3, 0.5 * (0.5 + 0.5), 0.75, 0.5),
            (2, 1, 1, 0, 0.5 * (0.5 + 1.0), 2.0 / 3.0, 1.0),
            (1, 1, 1, 1, 0.5 * (0.5 + 0.5), 0.5, 0.5),
            (0, 1, 1, 2, 0.5 * (0.5 + 0.0), 0.0, 0.0),
        ];
        for (row, (tp, fp, tn, fn_, acc, p, r)) in rows.iter().zip(expect) {
            assert_eq!(
                row.counts,
                ConfusionCounts { tp, fp, tn, fn_ },
                "{}",
                row.generator
            );
            assert!((row.metrics.acc - acc).abs() < 1e-12);
            assert!((row.metrics.precision - p).abs() < 1e-12);
            assert!((row.metrics.recall - r).abs() < 1e-12);
        }
    }

    #[test]
    fn detected_and_missed_generators() {
        let m = three_gen_manifest();
        let mut preds = vec![
            score("u1", Role::Real, None, 0.0),
            score("u2", Role::Real, None, 0.0),
        ];
        for uid in ["u1", "u2"] {
            preds.push(score(uid, Role::Fake, Some("ga"), 1.0));
            preds.push(score(uid, Role::Fake, Some("gb"), 0.0));
            preds.push(score(uid, Role::Fake, Some("gc"), 1.0));
        }
        let rows = aj_per_generator(&m, &preds, 0.5, &mut vec![]).unwrap();
        assert_eq!(rows[1].metrics.recall, 1.0);
        assert_eq!(rows[2].metrics.recall, 0.0);
        assert_eq!(rows[1].metrics, rows[3].metrics);
    }

    #[test]
    fn missing_predictions_are_listed() {
        let m = three_gen_manifest();
        let preds = vec![score("u1", Role::Real, None, 0.0)];
        match aj_per_generator(&m, &preds, 0.5, &mut vec![]) {
            Err(Error::MissingPrediction(list)) => {
                assert_eq!(list.len(), 7);
                assert!(list.contains(&"u2/real".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
