//! Deterministic synthetic corpora: a manifest plus prediction files at two
//! quality tiers.
//!
//! * `perfect` predictions are derived from the ground truth itself and must
//!   score 100 on every task.
//! * `noisy` predictions shift masks, drop and mislabel instances, and draw
//!   random authenticity scores.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::{
    AnnotationInstance, ArtifactCategory, ImageRecord, Manifest, Point, Polygon, Role,
};
use crate::attention::Heatmap;
use crate::error::Result;
use crate::formats;
use crate::pad::{category_ground_truth, union_ground_truth};
use crate::predictions::{
    AjPrediction, AjPredictionFile, CaPadPredictionEntry, CaPadPredictionFile, InstanceEntry,
    InstancePredictionEntry, InstancePredictionFile, PadPredictionEntry, PadPredictionFile,
};
use crate::raster::{rasterize, rle_encode, BinaryMask, Region};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureSpec {
    pub seed: u64,
    /// Semantic pairs; each gets one real image.
    pub uids: usize,
    /// Fakes per uid, one per generator.
    pub generators: usize,
    pub width: u32,
    pub height: u32,
    /// Also emit `XHM1` heatmaps for the perfect CA-PAD tier.
    pub heatmaps: bool,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            uids: 2,
            generators: 3,
            width: 64,
            height: 48,
            heatmaps: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub manifest: Manifest,
    /// Relative path → file contents, in a fixed order.
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Fixture {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (rel, bytes) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, bytes)?;
        }
        Ok(())
    }
}

pub const GENERATOR_NAMES: [&str; 5] = ["gen-a", "gen-b", "gen-c", "gen-d", "gen-e"];

fn generator_name(i: usize) -> String {
    GENERATOR_NAMES
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("gen-{i}"))
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Star-shaped polygon around a random center; may overshoot the frame.
fn random_polygon(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Polygon {
    let short = w.min(h) as f64;
    loop {
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let radius = rng.gen_range(short / 10.0..short / 4.0);
        let k = rng.gen_range(3..=8);
        let mut angles: Vec<f64> = (0..k)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        angles.sort_by(|a, b| a.total_cmp(b));
        let vertices = angles
            .iter()
            .map(|&a| {
                let r = radius * rng.gen_range(0.6..1.0);
                Point {
                    x: round2(cx + r * a.cos()),
                    y: round2(cy + r * a.sin()),
                }
            })
            .collect();
        let poly = Polygon::new(vertices);
        if rasterize(&poly, w, h).area() >= 4 {
            return poly;
        }
    }
}

fn random_scores(rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    if rng.gen_bool(0.5) {
        return None;
    }
    Some(
        (0..3)
            .map(|_| match rng.gen_range(0..10) {
                0 => 0.0,
                1 | 2 => 0.5,
                _ => 1.0,
            })
            .collect(),
    )
}

pub fn generate_manifest(spec: &FixtureSpec, rng: &mut ChaCha8Rng) -> Manifest {
    let mut images = Vec::new();
    let mut next_category = 0usize;
    let mut fake_no = 0usize;
    for u in 0..spec.uids {
        let uid = format!("{u:04}");
        images.push(ImageRecord {
            uid: uid.clone(),
            role: Role::Real,
            generator: None,
            width: spec.width,
            height: spec.height,
            annotations: vec![],
        });
        for g in 0..spec.generators {
            let count = if fake_no % 4 == 3 { 0 } else { 1 + fake_no % 3 };
            fake_no += 1;
            let annotations = (0..count)
                .map(|k| {
                    let category = ArtifactCategory::ALL[next_category % 7];
                    next_category += 1;
                    AnnotationInstance {
                        category,
                        round: 1 + (k % 3) as u8,
                        confidence_scores: random_scores(rng),
                        polygon: random_polygon(rng, spec.width, spec.height),
                    }
                })
                .collect();
            images.push(ImageRecord {
                uid: uid.clone(),
                role: Role::Fake,
                generator: Some(generator_name(g)),
                width: spec.width,
                height: spec.height,
                annotations,
            });
        }
    }
    Manifest {
        schema_version: "1".into(),
        images,
    }
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("fixture serializes");
    out.push(b'\n');
    out
}

/// Bounding box `[x0, y0, x1, y1]` of a polygon clipped to the frame.
fn clipped_bbox(p: &Polygon, w: u32, h: u32) -> [f64; 4] {
    let (x0, y0, x1, y1) = p.bounds();
    [
        x0.floor().max(0.0),
        y0.floor().max(0.0),
        x1.ceil().min(w as f64),
        y1.ceil().min(h as f64),
    ]
}

fn aj_file(manifest: &Manifest, mut score: impl FnMut(&ImageRecord) -> f64) -> Vec<u8> {
    let predictions = manifest
        .images
        .iter()
        .map(|r| AjPrediction {
            uid: r.uid.clone(),
            generator: r.generator.clone(),
            role: r.role,
            score: Some(score(r)),
            label: None,
        })
        .collect();
    json_bytes(&AjPredictionFile { predictions })
}

pub fn generate(spec: &FixtureSpec) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let manifest = generate_manifest(spec, &mut rng);
    let mut files = BTreeMap::new();
    files.insert("manifest.json".to_string(), manifest.to_json_bytes());

    // perfect tier
    files.insert(
        "aj_perfect.json".into(),
        aj_file(&manifest, |r| if r.is_fake() { 1.0 } else { 0.0 }),
    );
    let mut pad = Vec::new();
    let mut ca = Vec::new();
    let mut ca_heat = Vec::new();
    let mut inst = Vec::new();
    for r in manifest.fakes() {
        let masks = category_ground_truth(r)
            .into_iter()
            .map(|(c, m)| (c.name().to_string(), rle_encode(&m)))
            .collect();
        pad.push(PadPredictionEntry {
            uid: r.uid.clone(),
            generator: r.generator.clone(),
            masks,
        });
        let union = union_ground_truth(r);
        ca.push(CaPadPredictionEntry {
            uid: r.uid.clone(),
            generator: r.generator.clone(),
            mask: Some(rle_encode(&union)),
            heatmap: None,
        });
        if spec.heatmaps {
            let rel = format!(
                "heatmaps/{}_{}.xhm",
                r.uid,
                r.generator.as_deref().unwrap_or("")
            );
            let values = (0..union.len())
                .map(|i| {
                    let (row, col) = (i as u32 / r.width, i as u32 % r.width);
                    if union.get(row, col) {
                        0.9
                    } else {
                        0.1
                    }
                })
                .collect();
            let h = Heatmap::new(r.height as usize, r.width as usize, values).expect("shape");
            files.insert(rel.clone(), formats::write_heatmap(&h));
            ca_heat.push(CaPadPredictionEntry {
                uid: r.uid.clone(),
                generator: r.generator.clone(),
                mask: None,
                heatmap: Some(rel),
            });
        }
        inst.push(InstancePredictionEntry {
            uid: r.uid.clone(),
            generator: r.generator.clone(),
            instances: r
                .annotations
                .iter()
                .map(|a| InstanceEntry {
                    category: Some(a.category.name().to_string()),
                    region: Region::Mask {
                        rle: rle_encode(&rasterize(&a.polygon, r.width, r.height)),
                    },
                })
                .collect(),
        });
    }
    files.insert(
        "pad_perfect.json".into(),
        json_bytes(&PadPredictionFile { predictions: pad }),
    );
    files.insert(
        "ca_pad_perfect.json".into(),
        json_bytes(&CaPadPredictionFile { predictions: ca }),
    );
    if spec.heatmaps {
        files.insert(
            "ca_pad_heatmap_perfect.json".into(),
            json_bytes(&CaPadPredictionFile {
                predictions: ca_heat,
            }),
        );
    }
    files.insert(
        "instances_perfect.json".into(),
        json_bytes(&InstancePredictionFile { predictions: inst }),
    );

    // noisy tier
    files.insert(
        "aj_noisy.json".into(),
        aj_file(&manifest, |r| {
            let bias = if r.is_fake() { 0.15 } else { -0.15 };
            round2((rng.gen_range(0.0f64..1.0) + bias).clamp(0.0, 1.0))
        }),
    );
    let mut pad = Vec::new();
    let mut ca = Vec::new();
    let mut inst = Vec::new();
    for r in manifest.fakes() {
        let (w, h) = (r.width, r.height);
        let mut union = BinaryMask::empty(w, h);
        let mut masks = BTreeMap::new();
        for (c, m) in category_ground_truth(r) {
            let shifted = m.translated(rng.gen_range(-3..=3), rng.gen_range(-3..=3));
            let label = if rng.gen_bool(0.2) {
                ArtifactCategory::ALL[rng.gen_range(0..7)]
            } else {
                c
            };
            union.union_with(&shifted).expect("same dims");
            masks
                .entry(label.name().to_string())
                .or_insert_with(|| BinaryMask::empty(w, h))
                .union_with(&shifted)
                .expect("same dims");
        }
        if rng.gen_bool(0.3) {
            let x0 = rng.gen_range(0..w - 4);
            let y0 = rng.gen_range(0..h - 4);
            let mut spurious = BinaryMask::empty(w, h);
            for row in y0..y0 + 4 {
                spurious.set_span(row, x0, x0 + 4);
            }
            union.union_with(&spurious).expect("same dims");
            masks
                .entry(ArtifactCategory::Textures.name().to_string())
                .or_insert_with(|| BinaryMask::empty(w, h))
                .union_with(&spurious)
                .expect("same dims");
        }
        pad.push(PadPredictionEntry {
            uid: r.uid.clone(),
            generator: r.generator.clone(),
            masks: masks
                .into_iter()
                .map(|(k, m)| (k, rle_encode(&m)))
                .collect(),
        });
        ca.push(CaPadPredictionEntry {
            uid: r.uid.clone(),
            generator: r.generator.clone(),
            mask: Some(rle_encode(&union)),
            heatmap: None,
        });

        let mut instances = Vec::new();
        for a in &r.annotations {
            if rng.gen_bool(0.3) {
                continue;
            }
            let category = if rng.gen_bool(0.2) {
                ArtifactCategory::ALL[rng.gen_range(0..7)]
            } else {
                a.category
            };
            let region = if rng.gen_bool(0.5) {
                Region::Box {
                    bbox: clipped_bbox(&a.polygon, w, h),
                }
            } else {
                let cells: Vec<(u32, u32)> = rasterize(&a.polygon, w, h).iter_set().collect();
                let (row, col) = cells[rng.gen_range(0..cells.len())];
                Region::Point {
                    point: [col as f64 + 0.5, row as f64 + 0.5],
                }
            };
            instances.push(InstanceEntry {
                category: Some(category.name().to_string()),
                region,
            });
        }
        if rng.gen_bool(0.4) {
            instances.push(InstanceEntry {
                category: Some(
                    ArtifactCategory::ALL[rng.gen_range(0..7)]
                        .name()
                        .to_string(),
                ),
                region: Region::Point {
                    point: [
                        round2(rng.gen_range(0.0..w as f64)),
                        round2(rng.gen_range(0.0..h as f64)),
                    ],
                },
            });
        }
        inst.push(InstancePredictionEntry {
            uid: r.uid.clone(),
            generator: r.generator.clone(),
            instances,
        });
    }
    files.insert(
        "pad_noisy.json".into(),
        json_bytes(&PadPredictionFile { predictions: pad }),
    );
    files.insert(
        "ca_pad_noisy.json".into(),
        json_bytes(&CaPadPredictionFile { predictions: ca }),
    );
    files.insert(
        "instances_noisy.json".into(),
        json_bytes(&InstancePredictionFile { predictions: inst }),
    );

    Fixture { manifest, files }
}
