//! Seeded synthetic data: scene graphs with long-tailed label statistics,
//! smooth feature maps, and a detection-perturbation model that stands in
//! for a real proposal network.
//!
//! Everything is a pure function of its configuration and seed, so
//! parallel generation just needs distinct seeds; the convention used
//! throughout is per-image seed = master seed + image index.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assignment::AuxDetection;
use crate::error::{Error, Result};
use crate::geometry::Box;
use crate::heads::FeatureMap;
use crate::scene::{Relation, SceneGraph, SceneObject, TripletPrediction};

/// Shape of the synthetic scenes: object/vocabulary sizes, relation
/// density, box size range, and the label skew exponent emulating a
/// long-tailed category distribution (label `c` is drawn with weight
/// `(c+1)^-skew`; 0 means uniform).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub num_obj_classes: usize,
    pub num_rel_classes: usize,
    /// Probability of annotating each ordered object pair, in (0, 1].
    pub relation_density: f64,
    /// Scenes are topped up to at least this many relations.
    pub min_relations: usize,
    pub size_min: f64,
    pub size_max: f64,
    pub skew: f64,
    pub fmap_channels: usize,
    pub fmap_size: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_objects: 3,
            max_objects: 8,
            num_obj_classes: 150,
            num_rel_classes: 50,
            relation_density: 0.3,
            min_relations: 1,
            size_min: 0.05,
            size_max: 0.3,
            skew: 1.0,
            fmap_channels: 8,
            fmap_size: 16,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::InvalidConfig(format!(
                "object count range {}..={} is empty or zero",
                self.min_objects, self.max_objects
            )));
        }
        if self.num_obj_classes == 0 || self.num_rel_classes == 0 {
            return Err(Error::InvalidConfig("empty vocabulary".into()));
        }
        if !self.relation_density.is_finite()
            || self.relation_density <= 0.0
            || self.relation_density > 1.0
        {
            return Err(Error::InvalidConfig(format!(
                "relation density {} outside (0, 1]",
                self.relation_density
            )));
        }
        let min_pairs = self.min_objects * (self.min_objects - 1);
        if self.min_relations > min_pairs {
            return Err(Error::InvalidConfig(format!(
                "{} minimum relations cannot fit in {} ordered pairs of {} objects",
                self.min_relations, min_pairs, self.min_objects
            )));
        }
        if !(self.size_min.is_finite() && self.size_max.is_finite())
            || self.size_min <= 0.0
            || self.size_min > self.size_max
        {
            return Err(Error::InvalidConfig(format!(
                "box size range {}..{} invalid",
                self.size_min, self.size_max
            )));
        }
        if !self.skew.is_finite() || self.skew < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "label skew {} must be nonnegative",
                self.skew
            )));
        }
        if self.fmap_channels == 0 || self.fmap_size == 0 {
            return Err(Error::InvalidConfig("empty feature map".into()));
        }
        Ok(())
    }
}

/// How detections degrade relative to ground truth: box jitter (relative to
/// box size), label flips, drops, extra spurious detections (expected count
/// per scene), and logit noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbModel {
    pub box_jitter: f64,
    pub label_flip: f64,
    pub drop: f64,
    pub spurious_rate: f64,
    pub score_noise: f64,
}

impl Default for PerturbModel {
    fn default() -> Self {
        Self {
            box_jitter: 0.05,
            label_flip: 0.05,
            drop: 0.1,
            spurious_rate: 1.0,
            score_noise: 0.5,
        }
    }
}

impl PerturbModel {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("label_flip", self.label_flip), ("drop", self.drop)] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "{name} probability {p} outside [0, 1]"
                )));
            }
        }
        for (name, v) in [
            ("box_jitter", self.box_jitter),
            ("spurious_rate", self.spurious_rate),
            ("score_noise", self.score_noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} {v} must be nonnegative")));
            }
        }
        Ok(())
    }
}

fn label_sampler(classes: usize, skew: f64) -> Result<WeightedIndex<f64>> {
    let weights: Vec<f64> = (0..classes).map(|c| ((c + 1) as f64).powf(-skew)).collect();
    WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidConfig(format!("label weights: {e}")))
}

fn random_box(rng: &mut impl Rng, cfg: &SceneConfig) -> Box {
    Box::new(
        rng.gen_range(0.1..0.9),
        rng.gen_range(0.1..0.9),
        rng.gen_range(cfg.size_min..=cfg.size_max),
        rng.gen_range(cfg.size_min..=cfg.size_max),
    )
    .expect("configured ranges produce valid boxes")
}

/// Smooth random field: each channel is a sum of three low-frequency
/// sinusoids, so pooled values vary meaningfully with box position.
pub fn smooth_feature_map(rng: &mut impl Rng, channels: usize, size: usize) -> FeatureMap {
    let mut data = Vec::with_capacity(channels * size * size);
    for _ in 0..channels {
        let comps: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(0.5..1.5),               // amplitude
                    rng.gen_range(0.0..3.0),               // x frequency
                    rng.gen_range(0.0..3.0),               // y frequency
                    rng.gen_range(0.0..std::f64::consts::TAU), // phase
                )
            })
            .collect();
        for y in 0..size {
            for x in 0..size {
                let xn = (x as f64 + 0.5) / size as f64;
                let yn = (y as f64 + 0.5) / size as f64;
                let v: f64 = comps
                    .iter()
                    .map(|&(a, fx, fy, ph)| {
                        a * (std::f64::consts::TAU * (fx * xn + fy * yn) + ph).sin()
                    })
                    .sum();
                data.push(v);
            }
        }
    }
    FeatureMap::new(channels, size, size, data).expect("dimensions are consistent")
}

/// Generates one scene graph and its feature map, deterministically under
/// `cfg.seed`. Relations connect distinct objects only: each ordered pair
/// is annotated with probability `relation_density`, and extra pairs are
/// added (cheapest-index first among the unannotated) until `min_relations`
/// is met.
pub fn generate_scene(cfg: &SceneConfig) -> Result<(SceneGraph, FeatureMap)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let obj_labels = label_sampler(cfg.num_obj_classes, cfg.skew)?;
    let rel_labels = label_sampler(cfg.num_rel_classes, cfg.skew)?;

    let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let objects: Vec<SceneObject> = (0..n)
        .map(|_| SceneObject {
            bbox: random_box(&mut rng, cfg),
            label: obj_labels.sample(&mut rng),
        })
        .collect();

    let mut relations = Vec::new();
    let mut open_pairs = Vec::new();
    for sub in 0..n {
        for obj in 0..n {
            if sub == obj {
                continue;
            }
            if rng.gen_bool(cfg.relation_density) {
                relations.push(Relation {
                    sub,
                    obj,
                    predicate: rel_labels.sample(&mut rng),
                });
            } else {
                open_pairs.push((sub, obj));
            }
        }
    }
    let mut idx = 0;
    while relations.len() < cfg.min_relations {
        let (sub, obj) = open_pairs[idx];
        idx += 1;
        relations.push(Relation {
            sub,
            obj,
            predicate: rel_labels.sample(&mut rng),
        });
    }

    let graph = SceneGraph { objects, relations };
    graph.validate(cfg.num_obj_classes, cfg.num_rel_classes)?;
    let fmap = smooth_feature_map(&mut rng, cfg.fmap_channels, cfg.fmap_size);
    Ok((graph, fmap))
}

/// Simulates a detector over the ground truth: each object survives with
/// probability `1 - drop` as a jittered, possibly relabeled detection with
/// noisy logits; spurious detections are added at the configured expected
/// rate. `matched_gt` is left unset — label assignment computes it.
pub fn perturb_detections(
    gt: &SceneGraph,
    num_obj_classes: usize,
    model: &PerturbModel,
    seed: u64,
) -> Result<Vec<AuxDetection>> {
    model.validate()?;
    gt.validate(num_obj_classes, usize::MAX)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let logits_for = |rng: &mut ChaCha8Rng, label: usize| -> Vec<f64> {
        (0..num_obj_classes)
            .map(|c| {
                let base = if c == label { 2.0 } else { -2.0 };
                let z: f64 = rng.sample(StandardNormal);
                base + model.score_noise * z
            })
            .collect()
    };

    for o in &gt.objects {
        if rng.gen_bool(model.drop) {
            continue;
        }
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        let zw: f64 = rng.sample(StandardNormal);
        let zh: f64 = rng.sample(StandardNormal);
        let clamp = |v: f64| v.clamp(-2.0, 2.0);
        let bbox = Box::new(
            o.bbox.cx + model.box_jitter * o.bbox.w * zx,
            o.bbox.cy + model.box_jitter * o.bbox.h * zy,
            o.bbox.w * (model.box_jitter * clamp(zw)).exp(),
            o.bbox.h * (model.box_jitter * clamp(zh)).exp(),
        )?;
        let label = if model.label_flip > 0.0 && rng.gen_bool(model.label_flip) {
            rng.gen_range(0..num_obj_classes)
        } else {
            o.label
        };
        let logits = logits_for(&mut rng, label);
        out.push(AuxDetection {
            bbox,
            logits,
            matched_gt: None,
        });
    }

    let spurious = if model.spurious_rate > 0.0 {
        let poisson = Poisson::new(model.spurious_rate)
            .map_err(|e| Error::InvalidConfig(format!("spurious rate: {e}")))?;
        poisson.sample(&mut rng) as usize
    } else {
        0
    };
    for _ in 0..spurious {
        let bbox = Box::new(
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.05..0.3),
            rng.gen_range(0.05..0.3),
        )
        .expect("ranges produce valid boxes");
        let label = rng.gen_range(0..num_obj_classes);
        let logits = logits_for(&mut rng, label);
        out.push(AuxDetection {
            bbox,
            logits,
            matched_gt: None,
        });
    }
    Ok(out)
}

/// Uninformed triplet predictions for seeding a direct fit: boxes drawn from
/// the central image region, logits uniform in (-1, 1). Deterministic under
/// `seed`.
pub fn random_predictions(
    n: usize,
    num_obj_classes: usize,
    num_rel_classes: usize,
    seed: u64,
) -> Result<Vec<TripletPrediction>> {
    if n == 0 || num_obj_classes == 0 || num_rel_classes == 0 {
        return Err(Error::InvalidConfig(format!(
            "{n} predictions over {num_obj_classes} object and {num_rel_classes} relation classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let central_box = |rng: &mut ChaCha8Rng| {
        Box::new(
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.1..0.4),
            rng.gen_range(0.1..0.4),
        )
        .expect("ranges produce valid boxes")
    };
    Ok((0..n)
        .map(|_| TripletPrediction {
            sub_box: central_box(&mut rng),
            obj_box: central_box(&mut rng),
            sub_logits: (0..num_obj_classes).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            obj_logits: (0..num_obj_classes).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            rel_logits: (0..num_rel_classes).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect())
}
