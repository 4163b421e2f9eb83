//! Deterministic fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssrcnn_core::assignment::AuxDetection;
use ssrcnn_core::heads::{FeatureMap, ModelConfig};
use ssrcnn_core::matching::CostMatrix;
use ssrcnn_core::metrics::{gt_triplets, rank_prediction, GroundTruthTriplet, RankedTriplet};
use ssrcnn_core::scene::{SceneGraph, TripletPrediction};
use ssrcnn_core::synth::{
    generate_scene, perturb_detections, random_predictions, smooth_feature_map, PerturbModel,
    SceneConfig,
};

pub fn random_cost(rows: usize, cols: usize, seed: u64) -> CostMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(0.0..100.0)).collect();
    CostMatrix::new(rows, cols, data).expect("fixture is well formed")
}

/// A mid-sized annotated scene plus simulated detections and uninformed
/// prediction slots, as the assignment stages consume them.
pub fn assignment_fixture(
    slots: usize,
    seed: u64,
) -> (SceneGraph, Vec<AuxDetection>, Vec<TripletPrediction>) {
    let cfg = SceneConfig {
        min_objects: 6,
        max_objects: 6,
        num_obj_classes: 40,
        num_rel_classes: 20,
        relation_density: 0.25,
        min_relations: 4,
        seed,
        ..SceneConfig::default()
    };
    let (scene, _) = generate_scene(&cfg).expect("fixture scene");
    let aux = perturb_detections(&scene, cfg.num_obj_classes, &PerturbModel::default(), seed ^ 1)
        .expect("fixture detections");
    let preds = random_predictions(slots, cfg.num_obj_classes, cfg.num_rel_classes, seed ^ 2)
        .expect("fixture predictions");
    (scene, aux, preds)
}

/// A compact detector configuration plus matching queries and feature map.
pub fn forward_fixture(queries: usize, seed: u64) -> (ModelConfig, Vec<ssrcnn_core::heads::TripletQuery>, FeatureMap) {
    let cfg = ModelConfig {
        d_obj: 32,
        d_rel: 16,
        channels: 8,
        dyn_hidden: 8,
        attn_heads: 4,
        depth: 2,
        num_obj_classes: 40,
        num_rel_classes: 20,
        pe_per_head: true,
    };
    let qs = ssrcnn_core::heads::seeded_queries(&cfg, queries, seed).expect("fixture queries");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
    let fmap = smooth_feature_map(&mut rng, cfg.channels, 16);
    (cfg, qs, fmap)
}

/// A scored corpus for the metric suite: predictions loosely derived from
/// the ground truth so matching work is realistic.
pub fn eval_fixture(
    images: usize,
    preds_per_image: usize,
    seed: u64,
) -> (Vec<Vec<RankedTriplet>>, Vec<Vec<GroundTruthTriplet>>) {
    let mut gts = Vec::with_capacity(images);
    let mut ranked = Vec::with_capacity(images);
    for i in 0..images {
        let cfg = SceneConfig {
            min_objects: 4,
            max_objects: 7,
            num_obj_classes: 40,
            num_rel_classes: 20,
            relation_density: 0.3,
            min_relations: 2,
            seed: seed.wrapping_add(i as u64),
            ..SceneConfig::default()
        };
        let (scene, _) = generate_scene(&cfg).expect("fixture scene");
        gts.push(gt_triplets(&scene));
        let preds =
            random_predictions(preds_per_image, 40, 20, seed ^ (i as u64) << 20).expect("fixture");
        ranked.push(preds.iter().map(rank_prediction).collect());
    }
    (ranked, gts)
}

/// Logit vectors for the calibration benchmarks.
pub fn logit_fixture(count: usize, classes: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..classes).map(|_| rng.gen_range(-4.0..4.0)).collect())
        .collect()
}
