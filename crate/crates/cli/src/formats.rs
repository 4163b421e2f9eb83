//! On-disk JSON schemas and their validation: datasets, predictions, and the
//! frequency / seen-combination sidecars. Every rejection carries the file
//! and a field path (or line/column for syntax errors) so tooling can point
//! at the offending value.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ssrcnn_core::geometry::{Box, CornerBox};
use ssrcnn_core::metrics::{rank_prediction, RankedTriplet};
use ssrcnn_core::scene::{Relation, SceneGraph, SceneObject, TripletPrediction};

/// A rejected input file: where and why.
#[derive(Debug, Clone)]
pub struct InputError {
    pub file: PathBuf,
    /// Field path such as `images[3].objects[0].bbox`, when known.
    pub location: Option<String>,
    /// 1-based position for syntax errors.
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl InputError {
    fn at(file: &Path, location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            file: file.to_path_buf(),
            location: Some(location.into()),
            line: None,
            column: None,
            message: message.into(),
        }
    }

    fn whole(file: &Path, message: impl Into<String>) -> Self {
        Self {
            file: file.to_path_buf(),
            location: None,
            line: None,
            column: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file.display())?;
        if let (Some(line), Some(column)) = (self.line, self.column) {
            write!(f, ":{line}:{column}")?;
        }
        if let Some(loc) = &self.location {
            write!(f, ": {loc}")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for InputError {}

/// Reads and deserializes a JSON file, attaching the file name and (for
/// syntax or shape errors) the line/column to any failure.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| InputError::whole(path, format!("cannot read file: {e}")))?;
    serde_json::from_str(&text).map_err(|e| {
        InputError {
            file: path.to_path_buf(),
            location: None,
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string(),
        }
        .into()
    })
}

/// Image and object identifiers may be numbers or strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Id {
    Num(u64),
    Text(String),
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Id::Num(n) => write!(f, "{n}"),
            Id::Text(s) => write!(f, "{s}"),
        }
    }
}

/// Label vocabularies; indices into these lists are the numeric classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocab {
    pub objects: Vec<String>,
    pub predicates: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub id: Id,
    pub label: String,
    /// Absolute pixel corners `[x1, y1, x2, y2]`.
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationRecord {
    pub sub_id: Id,
    pub obj_id: Id,
    pub predicate: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: Id,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<ObjectRecord>,
    pub relations: Vec<RelationRecord>,
}

/// The dataset file. `version` and `config` are written by `gen` and
/// ignored on input, so hand-written files may omit them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub images: Vec<ImageRecord>,
    pub vocab: Vocab,
}

/// A validated dataset: scene graphs in normalized coordinates, aligned
/// with the original image ids and pixel dimensions.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ids: Vec<Id>,
    /// Pixel (width, height) per image.
    pub dims: Vec<(f64, f64)>,
    pub scenes: Vec<SceneGraph>,
    pub vocab: Vocab,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn index_of(&self, id: &Id) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }
}

fn vocab_index(
    vocab: &[String],
    name: &str,
    path: &Path,
    location: String,
    kind: &str,
) -> Result<usize, InputError> {
    vocab.iter().position(|v| v == name).ok_or_else(|| {
        InputError::at(path, location, format!("unknown {kind} label {name:?}"))
    })
}

fn check_vocab(vocab: &Vocab, path: &Path) -> Result<(), InputError> {
    for (field, names) in [("objects", &vocab.objects), ("predicates", &vocab.predicates)] {
        if names.is_empty() {
            return Err(InputError::at(
                path,
                format!("vocab.{field}"),
                "vocabulary must not be empty",
            ));
        }
        let mut seen = HashSet::new();
        for (i, name) in names.iter().enumerate() {
            if !seen.insert(name) {
                return Err(InputError::at(
                    path,
                    format!("vocab.{field}[{i}]"),
                    format!("duplicate label {name:?}"),
                ));
            }
        }
    }
    Ok(())
}

/// Loads and validates a dataset file. Boxes are checked for positive
/// extent in their stated order (x2 > x1, y2 > y1), clipped to the image,
/// and normalized to the unit square.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file: DatasetFile = read_json(path)?;
    check_vocab(&file.vocab, path)?;

    let mut image_ids = HashSet::new();
    let mut ids = Vec::with_capacity(file.images.len());
    let mut dims = Vec::with_capacity(file.images.len());
    let mut scenes = Vec::with_capacity(file.images.len());

    for (i, img) in file.images.iter().enumerate() {
        if !image_ids.insert(&img.id) {
            return Err(InputError::at(
                path,
                format!("images[{i}].id"),
                format!("duplicate image id {}", img.id),
            )
            .into());
        }
        for (field, v) in [("width", img.width), ("height", img.height)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(InputError::at(
                    path,
                    format!("images[{i}].{field}"),
                    format!("must be a positive finite number, got {v}"),
                )
                .into());
            }
        }

        let mut object_index: HashMap<&Id, usize> = HashMap::new();
        let mut objects = Vec::with_capacity(img.objects.len());
        for (j, obj) in img.objects.iter().enumerate() {
            if object_index.insert(&obj.id, j).is_some() {
                return Err(InputError::at(
                    path,
                    format!("images[{i}].objects[{j}].id"),
                    format!("overlapping object ids: {} appears twice", obj.id),
                )
                .into());
            }
            let label = vocab_index(
                &file.vocab.objects,
                &obj.label,
                path,
                format!("images[{i}].objects[{j}].label"),
                "object",
            )?;
            let bbox = check_bbox(obj.bbox, img.width, img.height, path, || {
                format!("images[{i}].objects[{j}].bbox")
            })?;
            objects.push(SceneObject { bbox, label });
        }

        let mut relations = Vec::with_capacity(img.relations.len());
        for (k, rel) in img.relations.iter().enumerate() {
            let endpoint = |id: &Id, field: &str| {
                object_index.get(id).copied().ok_or_else(|| {
                    InputError::at(
                        path,
                        format!("images[{i}].relations[{k}].{field}"),
                        format!("no object with id {id} in this image"),
                    )
                })
            };
            let sub = endpoint(&rel.sub_id, "sub_id")?;
            let obj = endpoint(&rel.obj_id, "obj_id")?;
            if sub == obj {
                return Err(InputError::at(
                    path,
                    format!("images[{i}].relations[{k}]"),
                    format!("subject and object are the same object ({})", rel.sub_id),
                )
                .into());
            }
            let predicate = vocab_index(
                &file.vocab.predicates,
                &rel.predicate,
                path,
                format!("images[{i}].relations[{k}].predicate"),
                "predicate",
            )?;
            relations.push(Relation { sub, obj, predicate });
        }

        let scene = SceneGraph { objects, relations };
        scene
            .validate(file.vocab.objects.len(), file.vocab.predicates.len())
            .map_err(|e| InputError::at(path, format!("images[{i}]"), e.to_string()))?;

        ids.push(img.id.clone());
        dims.push((img.width, img.height));
        scenes.push(scene);
    }

    Ok(Dataset { ids, dims, scenes, vocab: file.vocab })
}

/// Rejects malformed corners, clips to the image, and normalizes. The
/// extent check runs before clipping so `x2 <= x1` is reported as such even
/// when both corners are out of bounds.
fn check_bbox(
    bbox: [f64; 4],
    width: f64,
    height: f64,
    path: &Path,
    location: impl Fn() -> String,
) -> Result<Box, InputError> {
    let [x1, y1, x2, y2] = bbox;
    if bbox.iter().any(|v| !v.is_finite()) {
        return Err(InputError::at(
            path,
            location(),
            format!("corners must be finite, got [{x1}, {y1}, {x2}, {y2}]"),
        ));
    }
    if x2 <= x1 || y2 <= y1 {
        return Err(InputError::at(
            path,
            location(),
            format!("requires x1 < x2 and y1 < y2, got [{x1}, {y1}, {x2}, {y2}]"),
        ));
    }
    let cx1 = x1.clamp(0.0, width);
    let cx2 = x2.clamp(0.0, width);
    let cy1 = y1.clamp(0.0, height);
    let cy2 = y2.clamp(0.0, height);
    if cx2 <= cx1 || cy2 <= cy1 {
        return Err(InputError::at(
            path,
            location(),
            format!(
                "box [{x1}, {y1}, {x2}, {y2}] lies outside the {width}x{height} image"
            ),
        ));
    }
    Ok(Box::from_corners(CornerBox {
        x1: cx1 / width,
        y1: cy1 / height,
        x2: cx2 / width,
        y2: cy2 / height,
    }))
}

/// Pixel corners for a normalized box, clipped to the image. With `snap`
/// the corners are rounded to whole pixels (at least one pixel of extent),
/// which makes a later load/save round trip exact on power-of-two canvases.
pub fn corner_record(b: Box, width: f64, height: f64, snap: bool) -> [f64; 4] {
    let c = b.to_corners();
    let mut x1 = (c.x1 * width).clamp(0.0, width);
    let mut x2 = (c.x2 * width).clamp(0.0, width);
    let mut y1 = (c.y1 * height).clamp(0.0, height);
    let mut y2 = (c.y2 * height).clamp(0.0, height);
    if snap {
        x1 = x1.round();
        x2 = x2.round();
        y1 = y1.round();
        y2 = y2.round();
        if x2 - x1 < 1.0 {
            if x2 >= width {
                x1 = width - 1.0;
            } else {
                x2 = x1 + 1.0;
            }
        }
        if y2 - y1 < 1.0 {
            if y2 >= height {
                y1 = height - 1.0;
            } else {
                y2 = y1 + 1.0;
            }
        }
    }
    [x1, y1, x2, y2]
}

/// Converts a dataset back to its file records (no version/config header;
/// callers add those).
pub fn dataset_to_records(ds: &Dataset, snap: bool) -> Vec<ImageRecord> {
    ds.scenes
        .iter()
        .zip(&ds.ids)
        .zip(&ds.dims)
        .map(|((scene, id), &(w, h))| ImageRecord {
            id: id.clone(),
            width: w,
            height: h,
            objects: scene
                .objects
                .iter()
                .enumerate()
                .map(|(j, o)| ObjectRecord {
                    id: Id::Num(j as u64),
                    label: ds.vocab.objects[o.label].clone(),
                    bbox: corner_record(o.bbox, w, h, snap),
                })
                .collect(),
            relations: scene
                .relations
                .iter()
                .map(|r| RelationRecord {
                    sub_id: Id::Num(r.sub as u64),
                    obj_id: Id::Num(r.obj as u64),
                    predicate: ds.vocab.predicates[r.predicate].clone(),
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityRecord {
    /// Absolute pixel corners in the image's coordinate space.
    pub bbox: [f64; 4],
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateRecord {
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitsRecord {
    pub sub: Vec<f64>,
    pub obj: Vec<f64>,
    pub rel: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletRecord {
    pub sub: EntityRecord,
    pub obj: EntityRecord,
    pub predicate: PredicateRecord,
    /// Combined ranking score.
    pub score: f64,
    /// Raw per-class logits; present on tool output, optional on input.
    /// Required by `calibrate`, which re-scores the relation logits.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logits: Option<LogitsRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionImageRecord {
    pub id: Id,
    pub triplets: Vec<TripletRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionsFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub images: Vec<PredictionImageRecord>,
}

/// Predictions aligned with a dataset: ranked triplets per image (empty
/// where the file has none) and, when the file carries logits, the raw
/// prediction behind each triplet.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub ranked: Vec<Vec<RankedTriplet>>,
    pub raw: Vec<Vec<Option<TripletPrediction>>>,
}

/// Loads a predictions file against its dataset: image ids must resolve
/// uniquely, labels must be in vocabulary, scores finite and nonnegative,
/// and any logits block must match the vocabulary sizes.
pub fn load_predictions(path: &Path, ds: &Dataset) -> Result<Predictions> {
    let file: PredictionsFile = read_json(path)?;
    let mut ranked: Vec<Vec<RankedTriplet>> = vec![Vec::new(); ds.len()];
    let mut raw: Vec<Vec<Option<TripletPrediction>>> = vec![Vec::new(); ds.len()];
    let mut used = HashSet::new();

    for (i, img) in file.images.iter().enumerate() {
        let idx = ds.index_of(&img.id).ok_or_else(|| {
            InputError::at(
                path,
                format!("images[{i}].id"),
                format!("image id {} is not in the dataset", img.id),
            )
        })?;
        if !used.insert(idx) {
            return Err(InputError::at(
                path,
                format!("images[{i}].id"),
                format!("duplicate image id {}", img.id),
            )
            .into());
        }
        let (w, h) = ds.dims[idx];

        for (t, rec) in img.triplets.iter().enumerate() {
            let loc = |tail: &str| format!("images[{i}].triplets[{t}]{tail}");
            let sub_label = vocab_index(
                &ds.vocab.objects,
                &rec.sub.label,
                path,
                loc(".sub.label"),
                "object",
            )?;
            let obj_label = vocab_index(
                &ds.vocab.objects,
                &rec.obj.label,
                path,
                loc(".obj.label"),
                "object",
            )?;
            let predicate = vocab_index(
                &ds.vocab.predicates,
                &rec.predicate.label,
                path,
                loc(".predicate.label"),
                "predicate",
            )?;
            for (tail, s) in [
                (".sub.score", rec.sub.score),
                (".obj.score", rec.obj.score),
                (".predicate.score", rec.predicate.score),
                (".score", rec.score),
            ] {
                if !s.is_finite() || s < 0.0 {
                    return Err(InputError::at(
                        path,
                        loc(tail),
                        format!("score must be finite and nonnegative, got {s}"),
                    )
                    .into());
                }
            }
            let sub_box = pred_bbox(rec.sub.bbox, w, h, path, || loc(".sub.bbox"))?;
            let obj_box = pred_bbox(rec.obj.bbox, w, h, path, || loc(".obj.bbox"))?;

            let prediction = match &rec.logits {
                None => None,
                Some(l) => {
                    for (tail, v, want) in [
                        (".logits.sub", &l.sub, ds.vocab.objects.len()),
                        (".logits.obj", &l.obj, ds.vocab.objects.len()),
                        (".logits.rel", &l.rel, ds.vocab.predicates.len()),
                    ] {
                        if v.len() != want {
                            return Err(InputError::at(
                                path,
                                loc(tail),
                                format!("expected {want} logits, got {}", v.len()),
                            )
                            .into());
                        }
                    }
                    let p = TripletPrediction {
                        sub_box,
                        obj_box,
                        sub_logits: l.sub.clone(),
                        obj_logits: l.obj.clone(),
                        rel_logits: l.rel.clone(),
                    };
                    p.validate()
                        .map_err(|e| InputError::at(path, loc(".logits"), e.to_string()))?;
                    Some(p)
                }
            };

            ranked[idx].push(RankedTriplet {
                sub_box,
                sub_label,
                sub_score: rec.sub.score,
                obj_box,
                obj_label,
                obj_score: rec.obj.score,
                predicate,
                predicate_score: rec.predicate.score,
                score: rec.score,
            });
            raw[idx].push(prediction);
        }
    }
    Ok(Predictions { ranked, raw })
}

/// Predicted boxes are normalized by the image dimensions but not clipped:
/// a detector may legitimately regress past the border.
fn pred_bbox(
    bbox: [f64; 4],
    width: f64,
    height: f64,
    path: &Path,
    location: impl Fn() -> String,
) -> Result<Box, InputError> {
    let [x1, y1, x2, y2] = bbox;
    if bbox.iter().any(|v| !v.is_finite()) || x2 <= x1 || y2 <= y1 {
        return Err(InputError::at(
            path,
            location(),
            format!("requires finite corners with x1 < x2 and y1 < y2, got [{x1}, {y1}, {x2}, {y2}]"),
        ));
    }
    Ok(Box::from_corners(CornerBox {
        x1: x1 / width,
        y1: y1 / height,
        x2: x2 / width,
        y2: y2 / height,
    }))
}

/// Converts raw per-image predictions to file records, ranking each slot by
/// its strongest classes. Logits are always written so downstream
/// calibration can re-score.
pub fn predictions_to_records(
    ds: &Dataset,
    per_image: &[Vec<TripletPrediction>],
) -> Vec<PredictionImageRecord> {
    per_image
        .iter()
        .enumerate()
        .map(|(i, preds)| {
            let (w, h) = ds.dims[i];
            PredictionImageRecord {
                id: ds.ids[i].clone(),
                triplets: preds
                    .iter()
                    .map(|p| {
                        let r = rank_prediction(p);
                        TripletRecord {
                            sub: EntityRecord {
                                bbox: corner_record(r.sub_box, w, h, false),
                                label: ds.vocab.objects[r.sub_label].clone(),
                                score: r.sub_score,
                            },
                            obj: EntityRecord {
                                bbox: corner_record(r.obj_box, w, h, false),
                                label: ds.vocab.objects[r.obj_label].clone(),
                                score: r.obj_score,
                            },
                            predicate: PredicateRecord {
                                label: ds.vocab.predicates[r.predicate].clone(),
                                score: r.predicate_score,
                            },
                            score: r.score,
                            logits: Some(LogitsRecord {
                                sub: p.sub_logits.clone(),
                                obj: p.obj_logits.clone(),
                                rel: p.rel_logits.clone(),
                            }),
                        }
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Seen (subject, predicate, object) label combinations, for zero-shot
/// evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeenFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub seen: Vec<[String; 3]>,
}

pub fn load_seen(path: &Path, vocab: &Vocab) -> Result<HashSet<(usize, usize, usize)>> {
    let file: SeenFile = read_json(path)?;
    let mut out = HashSet::new();
    for (i, [sub, predicate, obj]) in file.seen.iter().enumerate() {
        let s = vocab_index(&vocab.objects, sub, path, format!("seen[{i}][0]"), "object")?;
        let p = vocab_index(
            &vocab.predicates,
            predicate,
            path,
            format!("seen[{i}][1]"),
            "predicate",
        )?;
        let o = vocab_index(&vocab.objects, obj, path, format!("seen[{i}][2]"), "object")?;
        out.insert((s, p, o));
    }
    Ok(out)
}

/// Frequency sidecar: either the wrapped tool output or a bare
/// name-to-frequency map.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum FrequenciesFile {
    Wrapped {
        #[allow(dead_code)]
        version: Option<String>,
        #[allow(dead_code)]
        config: Option<serde_json::Value>,
        frequencies: BTreeMap<String, f64>,
    },
    Bare(BTreeMap<String, f64>),
}

/// Loads predicate frequencies aligned with the vocabulary order. Every
/// predicate must be present, and unknown names are rejected.
pub fn load_frequencies(
    path: &Path,
    vocab: &Vocab,
) -> Result<ssrcnn_core::calibration::FrequencyTable> {
    let file: FrequenciesFile = read_json(path)?;
    let map = match &file {
        FrequenciesFile::Wrapped { frequencies, .. } => frequencies,
        FrequenciesFile::Bare(map) => map,
    };
    for name in map.keys() {
        if !vocab.predicates.contains(name) {
            return Err(InputError::at(
                path,
                format!("frequencies.{name}"),
                format!("unknown predicate label {name:?}"),
            )
            .into());
        }
    }
    let freqs = vocab
        .predicates
        .iter()
        .map(|name| {
            map.get(name).copied().ok_or_else(|| {
                InputError::at(
                    path,
                    "frequencies".to_string(),
                    format!("missing predicate {name:?}"),
                )
            })
        })
        .collect::<Result<Vec<f64>, InputError>>()?;
    ssrcnn_core::calibration::FrequencyTable::new(freqs)
        .map_err(|e| InputError::whole(path, e.to_string()).into())
}
