//! Annotation schema: artifact taxonomy, polygon instances, image records and
//! the manifest document that ties them together.
//!
//! Parsing goes through loosely typed mirror structs so that type errors are
//! reported as schema errors with a JSON path, while semantic problems
//! (unknown category, degenerate polygon, duplicates) surface as validation
//! errors naming the offending image.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster;

/// The seven perceptual artifact categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactCategory {
    Textures,
    EdgesShapes,
    Symbols,
    Color,
    Semantics,
    Commonsense,
    Physics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactLevel {
    Low,
    High,
    Cognitive,
}

impl ArtifactCategory {
    pub const ALL: [ArtifactCategory; 7] = [
        ArtifactCategory::Textures,
        ArtifactCategory::EdgesShapes,
        ArtifactCategory::Symbols,
        ArtifactCategory::Color,
        ArtifactCategory::Semantics,
        ArtifactCategory::Commonsense,
        ArtifactCategory::Physics,
    ];

    pub fn level(self) -> ArtifactLevel {
        use ArtifactCategory::*;
        match self {
            Textures | EdgesShapes | Symbols | Color => ArtifactLevel::Low,
            Semantics => ArtifactLevel::High,
            Commonsense | Physics => ArtifactLevel::Cognitive,
        }
    }

    /// Wire name used in manifests and prediction files.
    pub fn name(self) -> &'static str {
        use ArtifactCategory::*;
        match self {
            Textures => "textures",
            EdgesShapes => "edges_shapes",
            Symbols => "symbols",
            Color => "color",
            Semantics => "semantics",
            Commonsense => "commonsense",
            Physics => "physics",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for ArtifactCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl ArtifactLevel {
    pub fn name(self) -> &'static str {
        match self {
            ArtifactLevel::Low => "low",
            ArtifactLevel::High => "high",
            ArtifactLevel::Cognitive => "cognitive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Closed polygon in pixel coordinates; the last vertex connects to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    pub fn from_pairs(pairs: &[[f64; 2]]) -> Self {
        Self::new(pairs.iter().map(|&[x, y]| Point { x, y }).collect())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polygon {
        Polygon::new(
            self.vertices
                .iter()
                .map(|p| Point {
                    x: p.x + dx,
                    y: p.y + dy,
                })
                .collect(),
        )
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ),
            |(a, b, c, d), p| (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y)),
        )
    }
}

impl Serialize for Polygon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.vertices.len()))?;
        for p in &self.vertices {
            seq.serialize_element(&[p.x, p.y])?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Polygon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(Polygon::from_pairs(&pairs))
    }
}

/// One annotated artifact region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationInstance {
    pub category: ArtifactCategory,
    pub round: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_scores: Option<Vec<f64>>,
    pub polygon: Polygon,
}

impl AnnotationInstance {
    /// Mean of the confidence scores, `None` when the instance was not audited.
    pub fn mean_confidence(&self) -> Option<f64> {
        match self.confidence_scores.as_deref() {
            Some(s) if !s.is_empty() => Some(s.iter().sum::<f64>() / s.len() as f64),
            _ => None,
        }
    }

    /// Reliability weight in `[0, 1]`; unscored instances weigh 1.
    pub fn weight(&self) -> f64 {
        self.mean_confidence().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Real,
    Fake,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Real => "real",
            Role::Fake => "fake",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageRecord {
    pub uid: String,
    pub role: Role,
    pub generator: Option<String>,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<AnnotationInstance>,
}

impl ImageRecord {
    /// Human-readable key, e.g. `0042/fake/gen-a`.
    pub fn label(&self) -> String {
        match &self.generator {
            Some(g) => format!("{}/{}/{}", self.uid, self.role.name(), g),
            None => format!("{}/{}", self.uid, self.role.name()),
        }
    }

    pub fn is_fake(&self) -> bool {
        self.role == Role::Fake
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub schema_version: String,
    pub images: Vec<ImageRecord>,
}

impl Manifest {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("manifest serializes");
        out.push(b'\n');
        out
    }

    pub fn fakes(&self) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(|r| r.is_fake())
    }

    pub fn instance_count(&self) -> usize {
        self.images.iter().map(|r| r.annotations.len()).sum()
    }

    pub fn counts_by_category(&self) -> BTreeMap<ArtifactCategory, usize> {
        let mut out = BTreeMap::new();
        for a in self.images.iter().flat_map(|r| &r.annotations) {
            *out.entry(a.category).or_insert(0) += 1;
        }
        out
    }

    pub fn counts_by_level(&self) -> BTreeMap<ArtifactLevel, usize> {
        let mut out = BTreeMap::new();
        for a in self.images.iter().flat_map(|r| &r.annotations) {
            *out.entry(a.category.level()).or_insert(0) += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Reject polygons whose rasterization is empty instead of warning.
    pub strict: bool,
}

/// Everything found while checking a manifest document.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub manifest: Option<Manifest>,
    pub errors: Vec<Error>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

#[derive(Deserialize)]
struct RawManifest {
    schema_version: String,
    images: Vec<RawImage>,
}

#[derive(Deserialize)]
struct RawImage {
    uid: String,
    role: Role,
    #[serde(default)]
    generator: Option<String>,
    width: u32,
    height: u32,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    category: String,
    round: i64,
    #[serde(default)]
    confidence_scores: Option<Vec<f64>>,
    #[serde(deserialize_with = "finite_pairs")]
    polygon: Vec<[f64; 2]>,
}

fn finite_pairs<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<[f64; 2]>, D::Error> {
    let pairs = Vec::<[f64; 2]>::deserialize(d)?;
    if pairs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(de::Error::custom("polygon coordinates must be finite"));
    }
    Ok(pairs)
}

fn schema_error<E: fmt::Display>(err: serde_path_to_error::Error<E>) -> Error {
    let path = err.path().to_string();
    Error::Schema {
        path,
        message: err.into_inner().to_string(),
    }
}

/// Parses and fully validates a manifest, failing on the first hard error.
pub fn parse_manifest(bytes: &[u8]) -> Result<Manifest> {
    parse_manifest_with(bytes, ParseOptions::default())
}

pub fn parse_manifest_with(bytes: &[u8], opts: ParseOptions) -> Result<Manifest> {
    let mut report = validate_manifest(bytes, opts);
    if !report.errors.is_empty() {
        return Err(report.errors.swap_remove(0));
    }
    Ok(report.manifest.expect("valid report carries a manifest"))
}

/// Collects every schema/validation error and warning in a manifest document.
pub fn validate_manifest(bytes: &[u8], opts: ParseOptions) -> ValidationReport {
    let mut report = ValidationReport::default();
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let raw: RawManifest = match serde_path_to_error::deserialize(de) {
        Ok(raw) => raw,
        Err(e) => {
            report.errors.push(schema_error(e));
            return report;
        }
    };

    let mut seen = HashSet::new();
    let mut images = Vec::with_capacity(raw.images.len());
    for raw_image in raw.images {
        let before = report.errors.len();
        let record = validate_image(raw_image, opts, &mut report);
        if !seen.insert((record.uid.clone(), record.role, record.generator.clone())) {
            report.errors.push(Error::Validation {
                uid: record.uid.clone(),
                message: format!("duplicate record {}", record.label()),
            });
        }
        if report.errors.len() == before {
            images.push(record);
        }
    }
    if report.errors.is_empty() {
        report.manifest = Some(Manifest {
            schema_version: raw.schema_version,
            images,
        });
    }
    report
}

fn validate_image(raw: RawImage, opts: ParseOptions, report: &mut ValidationReport) -> ImageRecord {
    let uid = raw.uid;
    let mut problems: Vec<String> = Vec::new();
    if uid.is_empty() {
        problems.push("empty uid".into());
    }
    if raw.width == 0 || raw.height == 0 {
        problems.push(format!("non-positive size {}x{}", raw.width, raw.height));
    }
    match (raw.role, &raw.generator) {
        (Role::Real, Some(g)) => problems.push(format!("real image carries generator `{g}`")),
        (Role::Fake, None) => problems.push("fake image has no generator".into()),
        (Role::Fake, Some(g)) if g.is_empty() => {
            problems.push("fake image has an empty generator".into())
        }
        _ => {}
    }
    if raw.role == Role::Real && !raw.annotations.is_empty() {
        problems.push(format!(
            "real image carries {} annotation(s); artifacts are defined on fakes only",
            raw.annotations.len()
        ));
    }

    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for (idx, a) in raw.annotations.into_iter().enumerate() {
        let here = format!("annotation {idx}");
        let Some(category) = ArtifactCategory::from_name(&a.category) else {
            problems.push(format!("{here}: unknown category `{}`", a.category));
            continue;
        };
        if !(1..=3).contains(&a.round) {
            problems.push(format!("{here}: round {} outside 1..=3", a.round));
            continue;
        }
        if let Some(scores) = &a.confidence_scores {
            if scores.len() > 3 {
                problems.push(format!(
                    "{here}: {} confidence scores (at most 3)",
                    scores.len()
                ));
                continue;
            }
            if let Some(bad) = scores.iter().find(|s| ![0.0, 0.5, 1.0].contains(*s)) {
                problems.push(format!(
                    "{here}: confidence score {bad} not in {{0, 0.5, 1}}"
                ));
                continue;
            }
        }
        let polygon = Polygon::from_pairs(&a.polygon);
        if a.polygon.len() < 3 {
            problems.push(format!(
                "{here}: polygon has {} vertices (need >= 3)",
                a.polygon.len()
            ));
            continue;
        }
        if raster::signed_area(polygon.vertices()) == 0.0 {
            problems.push(format!("{here}: polygon has zero area"));
            continue;
        }
        let (x0, y0, x1, y1) = polygon.bounds();
        if x1 <= 0.0 || y1 <= 0.0 || x0 >= raw.width as f64 || y0 >= raw.height as f64 {
            problems.push(format!("{here}: polygon lies entirely outside the image"));
            continue;
        }
        if raster::is_self_intersecting(polygon.vertices()) {
            report.warnings.push(format!(
                "{uid}: {here}: self-intersecting polygon (even-odd fill)"
            ));
        }
        if raw.width > 0
            && raw.height > 0
            && raster::rasterize(&polygon, raw.width, raw.height).is_empty()
        {
            if opts.strict {
                problems.push(format!("{here}: {}", Error::DegenerateGeometry));
                continue;
            }
            report
                .warnings
                .push(format!("{uid}: {here}: polygon covers no pixel center"));
        }
        annotations.push(AnnotationInstance {
            category,
            round: a.round as u8,
            confidence_scores: a.confidence_scores,
            polygon,
        });
    }

    report
        .errors
        .extend(problems.into_iter().map(|message| Error::Validation {
            uid: uid.clone(),
            message,
        }));
    ImageRecord {
        uid,
        role: raw.role,
        generator: raw.generator,
        width: raw.width,
        height: raw.height,
        annotations,
    }
}

/// Drops annotations whose mean confidence is below `tau`.
///
/// Unscored annotations count as confidence 1 and are always kept; image
/// records survive even when all their annotations are removed.
pub fn filter_by_confidence(manifest: &Manifest, tau: f64) -> Manifest {
    let mut out = manifest.clone();
    for image in &mut out.images {
        image.annotations.retain(|a| a.weight() >= tau);
    }
    out
}

/// Concatenates annotation rounds per image (round 1 first, stable within a
/// round). With `dedup_exact`, later copies of an identical category+polygon
/// pair are dropped.
pub fn merge_rounds(manifest: &Manifest, dedup_exact: bool) -> Manifest {
    let mut out = manifest.clone();
    for image in &mut out.images {
        image.annotations.sort_by_key(|a| a.round);
        if dedup_exact {
            let mut kept: Vec<AnnotationInstance> = Vec::with_capacity(image.annotations.len());
            for a in image.annotations.drain(..) {
                if !kept
                    .iter()
                    .any(|k| k.category == a.category && k.polygon == a.polygon)
                {
                    kept.push(a);
                }
            }
            image.annotations = kept;
        }
    }
    out
}
