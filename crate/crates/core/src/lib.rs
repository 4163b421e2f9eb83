//! Algorithmic core of a sparse, set-based scene-graph detector: triplet
//! queries refined by a cascade of heads, two-stage label assignment with
//! pseudo pairs, focal/GIoU losses with analytic gradients, long-tail
//! calibration, and the standard recall / weighted-mAP metric suite, plus a
//! synthetic scene generator that makes the whole pipeline runnable without
//! any dataset.

pub mod assignment;
pub mod calibration;
pub mod error;
pub mod geometry;
pub mod heads;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod numerics;
pub mod scene;
pub mod synth;

pub use assignment::{
    assign_aux_labels, reduce_candidates, two_stage_assign, AssignConfig, AssignMode,
    AssignmentResult, AuxDetection, PseudoObject, PseudoPair,
};
pub use calibration::{adaptive_gamma, gamma_table, logit_adjust, FrequencyTable};
pub use error::{Error, Result};
pub use geometry::{giou, iou, union_box, Box, CornerBox};
pub use heads::{
    head_forward, seeded_queries, FeatureMap, HeadWeights, ModelConfig, TripletDetector,
    TripletQuery,
};
pub use matching::{hungarian, stage1_cost, stage2_cost, ClassCostMode, CostMatrix, Matching};
pub use metrics::{
    evaluate, recall_at_k, weighted_score, Averaging, EvalOptions, MatchMode, MetricsReport,
};
pub use losses::{
    box_losses, fit_direct, focal_loss, loss_lb, loss_lf, FitOptions, FitRecord, FitResult,
    FocalParams, Gamma, LossCoefficients,
};
pub use numerics::{fd_gradient, layer_norm, mh_attention, Matrix, Vector};
pub use scene::{Relation, SceneGraph, SceneObject, TripletPrediction};
pub use synth::{generate_scene, perturb_detections, random_predictions, PerturbModel, SceneConfig};
