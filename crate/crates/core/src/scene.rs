//! Shared scene-graph data: ground-truth objects/relations and the raw
//! per-triplet prediction emitted by the detection heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box;
use crate::numerics::{sigmoid, Vector};

/// One annotated object: a box plus a category index into the object vocab.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub bbox: Box,
    pub label: usize,
}

/// One annotated relation: subject/object indices into the scene's object
/// list plus a predicate index. Self-relations (`sub == obj`) are invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub sub: usize,
    pub obj: usize,
    pub predicate: usize,
}

/// Ground-truth annotation for one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub objects: Vec<SceneObject>,
    pub relations: Vec<Relation>,
}

impl SceneGraph {
    /// Checks label ranges, relation endpoints and the no-self-relation rule.
    pub fn validate(&self, num_obj_classes: usize, num_rel_classes: usize) -> Result<()> {
        for o in &self.objects {
            if o.label >= num_obj_classes {
                return Err(Error::LabelOutOfRange {
                    label: o.label,
                    num_classes: num_obj_classes,
                });
            }
        }
        for r in &self.relations {
            if r.sub >= self.objects.len() || r.obj >= self.objects.len() {
                return Err(Error::InvalidConfig(format!(
                    "relation endpoints ({}, {}) outside {} objects",
                    r.sub,
                    r.obj,
                    self.objects.len()
                )));
            }
            if r.sub == r.obj {
                return Err(Error::InvalidConfig(format!(
                    "self-relation on object {}",
                    r.sub
                )));
            }
            if r.predicate >= num_rel_classes {
                return Err(Error::LabelOutOfRange {
                    label: r.predicate,
                    num_classes: num_rel_classes,
                });
            }
        }
        Ok(())
    }
}

/// Raw head output for one triplet slot: subject/object boxes with class
/// logits plus relation logits. Scores are sigmoid per class (multi-label
/// convention), so "background" is expressed by all logits being low rather
/// than by a dedicated class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletPrediction {
    pub sub_box: Box,
    pub obj_box: Box,
    pub sub_logits: Vector,
    pub obj_logits: Vector,
    pub rel_logits: Vector,
}

/// Index and sigmoid probability of the strongest class in `logits`.
pub fn argmax_score(logits: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    (best, sigmoid(logits[best]))
}

impl TripletPrediction {
    pub fn validate(&self) -> Result<()> {
        if self.sub_logits.is_empty() || self.obj_logits.is_empty() || self.rel_logits.is_empty()
        {
            return Err(Error::EmptyInput("prediction logits".into()));
        }
        let finite = |v: &Vector| v.iter().all(|x| x.is_finite());
        if !finite(&self.sub_logits) || !finite(&self.obj_logits) || !finite(&self.rel_logits) {
            return Err(Error::NonFinite("prediction logits".into()));
        }
        Ok(())
    }
}
