//! Acceptance checks: ten end-to-end guarantees, each verified against an
//! oracle implemented from scratch in this file (brute-force enumeration,
//! central finite differences, linear scans, straight-line re-evaluation).
//! Every test prints one `[acceptance] ... PASS` line — visible with
//! `cargo test --test acceptance -- --nocapture` — and asserts its own
//! runtime budget.

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssrcnn_core::assignment::{
    assign_aux_labels, reduce_candidates, two_stage_assign, AssignConfig,
};
use ssrcnn_core::calibration::{adaptive_gamma, logit_adjust, FrequencyTable};
use ssrcnn_core::geometry::Box;
use ssrcnn_core::heads::{
    dynamic_conv, e2r_fusion, ffn, head_forward, pair_fusion, relation_logits, seeded_queries,
    DynConvWeights, E2rWeights, FeatureMap, FfnWeights, HeadWeights, ModelConfig,
    PairFusionWeights, PooledFeatures, RelClsFusionWeights, TripletQuery,
};
use ssrcnn_core::losses::{
    box_losses, fit_direct, focal_loss, FitOptions, FocalParams, Gamma, LossCoefficients,
};
use ssrcnn_core::matching::{hungarian, CostMatrix};
use ssrcnn_core::metrics::{
    gt_triplets, mean_recall_at_k, per_category_ap, recall_at_k, weighted_score, wmap,
    zero_shot_recall_at_k, Averaging, GroundTruthTriplet, MatchMode, RankedTriplet,
};
use ssrcnn_core::numerics::{LayerNorm, Matrix};
use ssrcnn_core::scene::TripletPrediction;
use ssrcnn_core::synth::{
    generate_scene, perturb_detections, random_predictions, PerturbModel, SceneConfig,
};

fn report(number: usize, name: &str, started: Instant, budget: Duration) {
    let elapsed = started.elapsed();
    assert!(
        elapsed < budget,
        "criterion {number} ({name}) took {elapsed:?}, budget {budget:?}"
    );
    println!("[acceptance] criterion {number:2} ({name}): PASS  [{elapsed:.2?} < {budget:?}]");
}

// --- criterion 1: weighted-score arithmetic ---------------------------------

#[test]
fn criterion_01_weighted_score_reference_rows() {
    let started = Instant::now();
    assert!((weighted_score(74.92, 43.47, 48.17) - 51.64).abs() <= 0.005);
    assert!((weighted_score(76.66, 41.47, 43.64) - 49.38).abs() <= 0.005);
    report(1, "weighted score arithmetic", started, Duration::from_secs(1));
}

// --- criterion 2: matching vs brute force -----------------------------------

/// Minimal assignment cost by exhaustive enumeration over the smaller side,
/// with a running-best cutoff (costs are nonnegative).
fn brute_force_min_cost(costs: &[Vec<f64>]) -> f64 {
    let rows = costs.len();
    let cols = costs[0].len();
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| costs[i][j]).collect())
            .collect();
        return brute_force_min_cost(&transposed);
    }
    fn recurse(costs: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if row == costs.len() {
            *best = acc;
            return;
        }
        for col in 0..used.len() {
            if !used[col] {
                used[col] = true;
                recurse(costs, row + 1, used, acc + costs[row][col], best);
                used[col] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    recurse(costs, 0, &mut vec![false; cols], 0.0, &mut best);
    best
}

#[test]
fn criterion_02_hungarian_matches_brute_force() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..500 {
        let short = rng.gen_range(1..=7usize);
        let long = rng.gen_range(1..=8usize);
        let (rows, cols) = if rng.gen_bool(0.5) { (short, long) } else { (long, short) };
        // Integer-valued costs keep every partial sum exact, so the solver
        // total and the enumerated total must agree bit for bit.
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.gen_range(0..=100u32) as f64)
            .collect();
        let table: Vec<Vec<f64>> = data.chunks(cols).map(|r| r.to_vec()).collect();
        let matching = hungarian(&CostMatrix::new(rows, cols, data).unwrap()).unwrap();

        assert_eq!(matching.pairs.len(), rows.min(cols), "case {case}");
        let mut seen_row = vec![false; rows];
        let mut seen_col = vec![false; cols];
        let mut total = 0.0;
        for &(r, c) in &matching.pairs {
            assert!(!seen_row[r] && !seen_col[c], "case {case}: row or column reused");
            seen_row[r] = true;
            seen_col[c] = true;
            total += table[r][c];
        }
        assert_eq!(total, matching.total, "case {case}: total disagrees with pairs");
        assert_eq!(matching.total, brute_force_min_cost(&table), "case {case}");
    }
    report(2, "matching vs brute force", started, Duration::from_secs(10));
}

// --- criterion 3: analytic gradients vs finite differences ------------------

/// A box pair safely away from every nonsmooth point of the two box losses:
/// center/size kinks, corner ties, and the zero-overlap boundary.
fn smooth_box_pair(rng: &mut ChaCha8Rng) -> (Box, Box) {
    const MARGIN: f64 = 1e-2;
    loop {
        let mut draw = || {
            Box::new(
                rng.gen_range(0.25..0.75),
                rng.gen_range(0.25..0.75),
                rng.gen_range(0.1..0.4),
                rng.gen_range(0.1..0.4),
            )
            .unwrap()
        };
        let (p, g) = (draw(), draw());
        let (cp, cg) = (p.to_corners(), g.to_corners());
        let apart = |a: f64, b: f64| (a - b).abs() > MARGIN;
        let centers = apart(p.cx, g.cx) && apart(p.cy, g.cy) && apart(p.w, g.w) && apart(p.h, g.h);
        let corners = apart(cp.x1, cg.x1)
            && apart(cp.x2, cg.x2)
            && apart(cp.y1, cg.y1)
            && apart(cp.y2, cg.y2);
        let overlap_x = cp.x2.min(cg.x2) - cp.x1.max(cg.x1);
        let overlap_y = cp.y2.min(cg.y2) - cp.y1.max(cg.y1);
        if centers && corners && overlap_x.abs() > MARGIN && overlap_y.abs() > MARGIN {
            return (p, g);
        }
    }
}

#[test]
fn criterion_03_gradients_match_finite_differences() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let rel_err = |analytic: f64, numeric: f64| (analytic - numeric).abs() / numeric.abs().max(1e-3);

    for case in 0..100usize {
        let classes = rng.gen_range(2..=6);
        let logits: Vec<f64> = (0..classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let target = if case % 3 == 0 { None } else { Some(rng.gen_range(0..classes)) };
        let gammas = [0.0, 1.0, 2.0, 4.0];
        let params = FocalParams {
            alpha: 0.25,
            gamma: Gamma::Fixed(gammas[case % gammas.len()]),
        };
        let analytic = focal_loss(&logits, target, &params).unwrap();
        for i in 0..classes {
            let mut plus = logits.clone();
            plus[i] += H;
            let mut minus = logits.clone();
            minus[i] -= H;
            let numeric = (focal_loss(&plus, target, &params).unwrap().loss
                - focal_loss(&minus, target, &params).unwrap().loss)
                / (2.0 * H);
            assert!(
                rel_err(analytic.grad[i], numeric) < TOL,
                "focal case {case} coord {i}: analytic {} vs numeric {numeric}",
                analytic.grad[i]
            );
        }
    }

    for case in 0..100usize {
        let (pred, target) = smooth_box_pair(&mut rng);
        let analytic = box_losses(pred, target);
        for i in 0..4 {
            let shift = |delta: f64| {
                let mut v = [pred.cx, pred.cy, pred.w, pred.h];
                v[i] += delta;
                Box::new(v[0], v[1], v[2], v[3]).unwrap()
            };
            let plus = box_losses(shift(H), target);
            let minus = box_losses(shift(-H), target);
            let l1_numeric = (plus.l1 - minus.l1) / (2.0 * H);
            let giou_numeric = (plus.giou_loss - minus.giou_loss) / (2.0 * H);
            assert!(
                rel_err(analytic.l1_grad[i], l1_numeric) < TOL,
                "l1 case {case} coord {i}: analytic {} vs numeric {l1_numeric}",
                analytic.l1_grad[i]
            );
            assert!(
                rel_err(analytic.giou_grad[i], giou_numeric) < TOL,
                "giou case {case} coord {i}: analytic {} vs numeric {giou_numeric}",
                analytic.giou_grad[i]
            );
        }
    }
    report(3, "gradients vs finite differences", started, Duration::from_secs(10));
}

// --- criterion 4: adaptive focusing parameter -------------------------------

#[test]
fn criterion_04_adaptive_focusing_values_and_monotonicity() {
    let started = Instant::now();
    assert_eq!(adaptive_gamma(1.0, 4.0).unwrap(), 2.0);
    assert_eq!(adaptive_gamma(0.5, 4.0).unwrap(), 2.0);

    // Straight-line oracle at f = 0.01: 3 − (1−f)^4 · (−ln f)^(1/4), the
    // fourth power spelled out and the fourth root as two square roots.
    let f: f64 = 0.01;
    let one_minus = 1.0 - f;
    let pow4 = (one_minus * one_minus) * (one_minus * one_minus);
    let root4 = (-f.ln()).sqrt().sqrt();
    let oracle = 3.0 - pow4 * root4;
    assert!((oracle - 1.592_811_752_045_568_8).abs() < 1e-12);
    let got = adaptive_gamma(f, 4.0).unwrap();
    assert!((got - oracle).abs() <= 1e-3, "got {got}, oracle {oracle}");
    assert!((got - 1.5928).abs() <= 1e-3);

    // Nondecreasing in the frequency across a 1000-point grid.
    let mut prev = f64::NEG_INFINITY;
    for i in 1..=1000 {
        let g = adaptive_gamma(i as f64 / 1000.0, 4.0).unwrap();
        assert!(g >= prev, "focusing parameter decreased at grid point {i}");
        prev = g;
    }
    report(4, "adaptive focusing parameter", started, Duration::from_secs(10));
}

// --- criterion 5: candidate reduction vs linear scan -------------------------

fn linear_scan_reduction(rows: &[Vec<f64>]) -> (usize, Vec<usize>) {
    let m = rows.len();
    let pool = rows[0].len();
    if pool <= m {
        return (pool, (0..pool).collect());
    }
    let orders: Vec<Vec<usize>> = rows
        .iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..pool).collect();
            idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut nominated = vec![false; pool];
    let mut distinct = 0usize;
    for k in 1..=pool {
        for order in &orders {
            let c = order[k - 1];
            if !nominated[c] {
                nominated[c] = true;
                distinct += 1;
            }
        }
        if distinct > m {
            return (k, (0..pool).filter(|&c| nominated[c]).collect());
        }
    }
    unreachable!("the full pool exceeds the row count, so some k must succeed")
}

#[test]
fn criterion_05_candidate_reduction_matches_linear_scan() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200usize {
        let m = rng.gen_range(1..=50usize);
        let pool = rng.gen_range(1..=200usize);
        let quantized = case % 3 == 0; // coarse costs force plenty of ties
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..pool)
                    .map(|_| {
                        let c: f64 = rng.gen_range(0.0..10.0);
                        if quantized { (c * 2.0).round() / 2.0 } else { c }
                    })
                    .collect()
            })
            .collect();
        let (k, candidates) = reduce_candidates(&rows).unwrap();
        let (k_oracle, expected) = linear_scan_reduction(&rows);
        assert_eq!(k, k_oracle, "case {case}: nomination count differs");
        assert_eq!(candidates, expected, "case {case}: candidate set differs");
        assert!(
            candidates.len() > m || candidates.len() == pool,
            "case {case}: candidate set neither exceeds the row count nor covers the pool"
        );
    }
    report(5, "candidate reduction vs linear scan", started, Duration::from_secs(30));
}

// --- criterion 6: two-stage assignment partitions the slots ------------------

#[test]
fn criterion_06_assignment_partitions_slots() {
    let started = Instant::now();
    let coeffs = LossCoefficients::default();
    let focal = FocalParams::default();
    for seed in 0..100u64 {
        let cfg = SceneConfig {
            min_objects: 3,
            max_objects: 5,
            num_obj_classes: 12,
            num_rel_classes: 8,
            relation_density: 0.35,
            min_relations: 1,
            fmap_channels: 4,
            fmap_size: 8,
            seed,
            ..SceneConfig::default()
        };
        let (scene, _) = generate_scene(&cfg).unwrap();
        let aux = perturb_detections(&scene, 12, &PerturbModel::default(), seed ^ 0x5eed).unwrap();
        let preds = random_predictions(30, 12, 8, seed.wrapping_mul(7919) + 1).unwrap();
        let result = two_stage_assign(
            &preds,
            &scene,
            &aux,
            &coeffs,
            &focal,
            &AssignConfig::default(),
        )
        .unwrap();

        // The three index sets cover every slot exactly once.
        let mut uses = vec![0usize; preds.len()];
        for &(slot, _) in &result.stage1 {
            uses[slot] += 1;
        }
        for &(slot, _) in &result.stage2 {
            uses[slot] += 1;
        }
        for &slot in &result.background {
            uses[slot] += 1;
        }
        assert!(
            uses.iter().all(|&u| u == 1),
            "seed {seed}: slots not partitioned: {uses:?}"
        );

        // Every annotated triplet is claimed exactly once by stage one.
        let triplets = gt_triplets(&scene);
        let mut claimed = vec![0usize; triplets.len()];
        for &(_, t) in &result.stage1 {
            claimed[t] += 1;
        }
        assert!(
            claimed.iter().all(|&c| c == 1),
            "seed {seed}: triplets not each matched once: {claimed:?}"
        );

        // Stage-two matches use distinct pseudo pairs.
        let mut pair_uses = vec![0usize; result.pseudo_set.len()];
        for &(_, u) in &result.stage2 {
            pair_uses[u] += 1;
        }
        assert!(pair_uses.iter().all(|&c| c <= 1), "seed {seed}: pseudo pair reused");

        // No pseudo pair mirrors an annotated relation. Re-derive the
        // auxiliary labels independently and look each source pair up.
        let annotated: HashSet<(usize, usize)> =
            scene.relations.iter().map(|r| (r.sub, r.obj)).collect();
        let mut labeled = aux.clone();
        assign_aux_labels(&mut labeled, &scene, &coeffs, &focal).unwrap();
        for pair in &result.pseudo_set {
            let (i, j) = pair.source;
            assert_ne!(i, j, "seed {seed}: self-pair in the pseudo set");
            if let (Some(gi), Some(gj)) = (labeled[i].matched_gt, labeled[j].matched_gt) {
                assert!(
                    !annotated.contains(&(gi, gj)),
                    "seed {seed}: pseudo pair ({i}, {j}) duplicates annotated relation ({gi}, {gj})"
                );
            }
        }
    }
    report(6, "assignment partition", started, Duration::from_secs(60));
}

// --- criterion 7: direct fit reaches full recall ------------------------------

#[test]
fn criterion_07_fit_reaches_full_recall() {
    let started = Instant::now();
    let mut success = 0usize;
    for seed in 0..20u64 {
        let cfg = SceneConfig {
            min_objects: 3,
            max_objects: 3,
            num_obj_classes: 6,
            num_rel_classes: 4,
            relation_density: 1e-9, // relations come from the top-up alone
            min_relations: (seed as usize % 3) + 1,
            fmap_channels: 4,
            fmap_size: 8,
            seed: 500 + seed,
            ..SceneConfig::default()
        };
        let (scene, _) = generate_scene(&cfg).unwrap();
        assert!(
            !scene.relations.is_empty() && scene.relations.len() <= 3,
            "seed {seed}: scene has {} relations",
            scene.relations.len()
        );
        let init = random_predictions(12, 6, 4, 9000 + seed).unwrap();
        let opts = FitOptions {
            steps: 2000,
            step_size: 0.05,
            early_stop_recall: Some(1.0),
            ..FitOptions::default()
        };
        let fit = fit_direct(&init, &scene, &[], &LossCoefficients::default(), &opts).unwrap();
        if fit.trajectory.iter().any(|r| r.recall >= 1.0) {
            success += 1;
        }
    }
    assert!(success >= 18, "full recall on only {success}/20 seeds");
    report(
        7,
        &format!("direct fit, full recall on {success}/20 seeds"),
        started,
        Duration::from_secs(300),
    );
}

// --- criterion 8: recall family vs brute-force oracle ------------------------

fn box_bits(b: Box) -> [u64; 4] {
    [b.cx.to_bits(), b.cy.to_bits(), b.w.to_bits(), b.h.to_bits()]
}

/// Overlap ratio recomputed inline, mirroring the production arithmetic
/// order exactly so threshold comparisons agree bit for bit.
fn oracle_iou(a: Box, b: Box) -> f64 {
    let ax1 = a.cx - 0.5 * a.w;
    let ay1 = a.cy - 0.5 * a.h;
    let ax2 = a.cx + 0.5 * a.w;
    let ay2 = a.cy + 0.5 * a.h;
    let bx1 = b.cx - 0.5 * b.w;
    let by1 = b.cy - 0.5 * b.h;
    let bx2 = b.cx + 0.5 * b.w;
    let by2 = b.cy + 0.5 * b.h;
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let area_a = (ax2 - ax1) * (ay2 - ay1);
    let area_b = (bx2 - bx1) * (by2 - by1);
    inter / (area_a + area_b - inter)
}

/// Double-loop per-image hit flags: rank by score (ties by index), optional
/// one-prediction-per-box-pair constraint, take k, then test every
/// ground-truth triplet against every selected prediction.
fn oracle_hits(preds: &[RankedTriplet], gts: &[GroundTruthTriplet], k: usize, gc: bool) -> Vec<bool> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    let mut selected = Vec::new();
    let mut used_pairs: Vec<([u64; 4], [u64; 4])> = Vec::new();
    for &i in &order {
        if gc {
            let key = (box_bits(preds[i].sub_box), box_bits(preds[i].obj_box));
            if used_pairs.contains(&key) {
                continue;
            }
            used_pairs.push(key);
        }
        selected.push(i);
        if selected.len() == k {
            break;
        }
    }
    gts.iter()
        .map(|gt| {
            selected.iter().any(|&i| {
                let p = &preds[i];
                p.sub_label == gt.sub_label
                    && p.obj_label == gt.obj_label
                    && p.predicate == gt.predicate
                    && oracle_iou(p.sub_box, gt.sub_box) >= 0.5
                    && oracle_iou(p.obj_box, gt.obj_box) >= 0.5
            })
        })
        .collect()
}

fn oracle_recall(
    preds: &[Vec<RankedTriplet>],
    gts: &[Vec<GroundTruthTriplet>],
    k: usize,
    gc: bool,
    macro_average: bool,
) -> f64 {
    let mut per_image_sum = 0.0;
    let mut images = 0usize;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        if g.is_empty() {
            continue;
        }
        let n = oracle_hits(p, g, k, gc).iter().filter(|&&h| h).count();
        per_image_sum += n as f64 / g.len() as f64;
        images += 1;
        hits += n;
        total += g.len();
    }
    if macro_average {
        per_image_sum / images as f64
    } else {
        hits as f64 / total as f64
    }
}

fn oracle_mean_recall(
    preds: &[Vec<RankedTriplet>],
    gts: &[Vec<GroundTruthTriplet>],
    k: usize,
    gc: bool,
) -> f64 {
    let mut per_predicate: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (p, g) in preds.iter().zip(gts) {
        if g.is_empty() {
            continue;
        }
        for (gt, hit) in g.iter().zip(oracle_hits(p, g, k, gc)) {
            let e = per_predicate.entry(gt.predicate).or_insert((0, 0));
            e.1 += 1;
            if hit {
                e.0 += 1;
            }
        }
    }
    let sum: f64 = per_predicate.values().map(|&(h, t)| h as f64 / t as f64).sum();
    sum / per_predicate.len() as f64
}

fn oracle_zero_shot(
    preds: &[Vec<RankedTriplet>],
    gts: &[Vec<GroundTruthTriplet>],
    k: usize,
    gc: bool,
    seen: &HashSet<(usize, usize, usize)>,
) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        if g.is_empty() {
            continue;
        }
        for (gt, hit) in g.iter().zip(oracle_hits(p, g, k, gc)) {
            if seen.contains(&(gt.sub_label, gt.predicate, gt.obj_label)) {
                continue;
            }
            total += 1;
            if hit {
                hits += 1;
            }
        }
    }
    if total == 0 {
        None
    } else {
        Some(hits as f64 / total as f64)
    }
}

fn random_small_box(rng: &mut ChaCha8Rng) -> Box {
    Box::new(
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.1..0.3),
        rng.gen_range(0.1..0.3),
    )
    .unwrap()
}

fn make_ranked(
    rng: &mut ChaCha8Rng,
    sub_box: Box,
    sub_label: usize,
    obj_box: Box,
    obj_label: usize,
    predicate: usize,
) -> RankedTriplet {
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        let s: f64 = rng.gen_range(0.05..1.0);
        // Quantizing a third of the scores manufactures ranking ties.
        if rng.gen_bool(0.3) { (s * 10.0).round() / 10.0 } else { s }
    };
    let sub_score = draw(rng);
    let obj_score = draw(rng);
    let predicate_score = draw(rng);
    RankedTriplet {
        sub_box,
        sub_label,
        sub_score,
        obj_box,
        obj_label,
        obj_score,
        predicate,
        predicate_score,
        score: sub_score * obj_score * predicate_score,
    }
}

#[test]
fn criterion_08_recall_family_matches_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut all_preds: Vec<Vec<RankedTriplet>> = Vec::new();
    let mut all_gts: Vec<Vec<GroundTruthTriplet>> = Vec::new();
    for image in 0..200usize {
        let n_gt = if image == 0 {
            3
        } else if image % 7 == 0 {
            0
        } else {
            rng.gen_range(1..=5)
        };
        let gts: Vec<GroundTruthTriplet> = (0..n_gt)
            .map(|_| GroundTruthTriplet {
                sub_box: random_small_box(&mut rng),
                sub_label: rng.gen_range(0..4),
                obj_box: random_small_box(&mut rng),
                obj_label: rng.gen_range(0..4),
                predicate: rng.gen_range(0..3),
            })
            .collect();
        let n_pred = rng.gen_range(0..=10);
        let preds: Vec<RankedTriplet> = (0..n_pred)
            .map(|_| {
                if !gts.is_empty() && rng.gen_bool(0.6) {
                    // Derived from an annotated triplet: boxes copied or
                    // jittered, labels mostly kept.
                    let gt = gts[rng.gen_range(0..gts.len())];
                    let jitter = [0.0, 0.0, 0.02, 0.15][rng.gen_range(0..4)];
                    let mut shift = |b: Box| {
                        if jitter == 0.0 {
                            b
                        } else {
                            Box::new(
                                b.cx + rng.gen_range(-jitter..jitter),
                                b.cy + rng.gen_range(-jitter..jitter),
                                b.w,
                                b.h,
                            )
                            .unwrap()
                        }
                    };
                    let (sb, ob) = (shift(gt.sub_box), shift(gt.obj_box));
                    let (sl, ol, pl) = if rng.gen_bool(0.8) {
                        (gt.sub_label, gt.obj_label, gt.predicate)
                    } else {
                        (rng.gen_range(0..4), rng.gen_range(0..4), rng.gen_range(0..3))
                    };
                    make_ranked(&mut rng, sb, sl, ob, ol, pl)
                } else {
                    let sb = random_small_box(&mut rng);
                    let ob = random_small_box(&mut rng);
                    let sl = rng.gen_range(0..4);
                    let ol = rng.gen_range(0..4);
                    let pl = rng.gen_range(0..3);
                    make_ranked(&mut rng, sb, sl, ob, ol, pl)
                }
            })
            .collect();
        all_preds.push(preds);
        all_gts.push(gts);
    }

    // Label combinations annotated in the first hundred images count as
    // seen; the rest of the corpus supplies the unseen pool.
    let seen: HashSet<(usize, usize, usize)> = all_gts[..100]
        .iter()
        .flatten()
        .map(|g| (g.sub_label, g.predicate, g.obj_label))
        .collect();

    for k in [1usize, 3, 5, 10] {
        for gc in [false, true] {
            assert_eq!(
                recall_at_k(&all_preds, &all_gts, k, gc, Averaging::Macro).unwrap(),
                oracle_recall(&all_preds, &all_gts, k, gc, true),
                "macro recall, k = {k}, graph constraint {gc}"
            );
            assert_eq!(
                recall_at_k(&all_preds, &all_gts, k, gc, Averaging::Micro).unwrap(),
                oracle_recall(&all_preds, &all_gts, k, gc, false),
                "micro recall, k = {k}, graph constraint {gc}"
            );
            assert_eq!(
                mean_recall_at_k(&all_preds, &all_gts, k, gc).unwrap(),
                oracle_mean_recall(&all_preds, &all_gts, k, gc),
                "mean recall, k = {k}, graph constraint {gc}"
            );
            assert_eq!(
                zero_shot_recall_at_k(&all_preds, &all_gts, k, gc, &seen).unwrap(),
                oracle_zero_shot(&all_preds, &all_gts, k, gc, &seen),
                "zero-shot recall, k = {k}, graph constraint {gc}"
            );
        }
    }

    // Hand-built single-category average-precision case: two annotated
    // triplets, the top-scored detection is an exact hit, the second is a
    // miss. AP = (1/2) * 1.0 = 0.5, and with one category the weighted mean
    // equals it.
    let b = |cx: f64, cy: f64| Box::new(cx, cy, 0.2, 0.2).unwrap();
    let hand_gts = vec![vec![
        GroundTruthTriplet {
            sub_box: b(0.3, 0.3),
            sub_label: 0,
            obj_box: b(0.7, 0.7),
            obj_label: 1,
            predicate: 0,
        },
        GroundTruthTriplet {
            sub_box: b(0.2, 0.8),
            sub_label: 0,
            obj_box: b(0.8, 0.2),
            obj_label: 1,
            predicate: 0,
        },
    ]];
    let ranked = |sub_box, obj_box, s: f64| RankedTriplet {
        sub_box,
        sub_label: 0,
        sub_score: s,
        obj_box,
        obj_label: 1,
        obj_score: s,
        predicate: 0,
        predicate_score: s,
        score: s * s * s,
    };
    let hand_preds = vec![vec![
        ranked(b(0.3, 0.3), b(0.7, 0.7), 0.9), // exact hit, ranked first
        ranked(b(0.5, 0.5), b(0.5, 0.5), 0.4), // overlaps nothing
    ]];
    assert_eq!(
        per_category_ap(&hand_preds, &hand_gts, MatchMode::Relationship).unwrap(),
        vec![(0, 2, 0.5)]
    );
    assert_eq!(wmap(&hand_preds, &hand_gts, MatchMode::Relationship).unwrap(), 0.5);

    report(8, "recall family vs oracle", started, Duration::from_secs(60));
}

// --- criterion 9: head forward properties ------------------------------------

fn small_model() -> ModelConfig {
    ModelConfig {
        d_obj: 16,
        d_rel: 8,
        channels: 4,
        dyn_hidden: 4,
        attn_heads: 2,
        depth: 2,
        num_obj_classes: 6,
        num_rel_classes: 4,
        pe_per_head: true,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-0.7..0.7)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

fn random_layer_norm(rng: &mut ChaCha8Rng, dim: usize) -> LayerNorm {
    LayerNorm {
        gain: (0..dim).map(|_| rng.gen_range(0.5..1.5)).collect(),
        bias: (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    }
}

fn random_feature_map(rng: &mut ChaCha8Rng, channels: usize, height: usize, width: usize) -> FeatureMap {
    let data = (0..channels * height * width)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    FeatureMap::new(channels, height, width, data).unwrap()
}

fn naive_matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| {
            let mut acc = 0.0;
            for c in 0..m.cols() {
                acc += m.get(r, c) * x[c];
            }
            acc
        })
        .collect()
}

fn naive_layer_norm(x: &[f64], ln: &LayerNorm) -> Vec<f64> {
    let n = x.len() as f64;
    let mut mean = 0.0;
    for &v in x {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for &v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let denom = (var + 1e-5).sqrt();
    x.iter()
        .zip(ln.gain.iter().zip(&ln.bias))
        .map(|(&v, (&g, &b))| g * (v - mean) / denom + b)
        .collect()
}

fn naive_relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

fn naive_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!(
            (x - y).abs() <= tol,
            "{what}: component {i} differs: {x} vs {y}"
        );
    }
}

fn assert_boxes_close(a: Box, b: Box, tol: f64, what: &str) {
    for (x, y) in [(a.cx, b.cx), (a.cy, b.cy), (a.w, b.w), (a.h, b.h)] {
        assert!((x - y).abs() <= tol, "{what}: box coordinate differs: {x} vs {y}");
    }
}

fn assert_queries_close(a: &TripletQuery, b: &TripletQuery, tol: f64, what: &str) {
    assert_boxes_close(a.sub_box, b.sub_box, tol, what);
    assert_boxes_close(a.obj_box, b.obj_box, tol, what);
    assert_close(&a.sub_content, &b.sub_content, tol, what);
    assert_close(&a.obj_content, &b.obj_content, tol, what);
    assert_close(&a.rel_content, &b.rel_content, tol, what);
}

fn assert_predictions_close(a: &TripletPrediction, b: &TripletPrediction, tol: f64, what: &str) {
    assert_boxes_close(a.sub_box, b.sub_box, tol, what);
    assert_boxes_close(a.obj_box, b.obj_box, tol, what);
    assert_close(&a.sub_logits, &b.sub_logits, tol, what);
    assert_close(&a.obj_logits, &b.obj_logits, tol, what);
    assert_close(&a.rel_logits, &b.rel_logits, tol, what);
}

#[test]
fn criterion_09_head_forward_properties() {
    let started = Instant::now();
    let cfg = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    const TOL: f64 = 1e-10;

    // Reordering the queries reorders the outputs and changes nothing else.
    let weights = HeadWeights::seeded(&cfg, &mut rng);
    let fmap = random_feature_map(&mut rng, cfg.channels, 6, 6);
    let queries = seeded_queries(&cfg, 5, 77).unwrap();
    let (refined, outputs) = head_forward(&queries, &fmap, &weights, &cfg, None).unwrap();
    let perm = [3usize, 0, 4, 1, 2];
    let shuffled: Vec<TripletQuery> = perm.iter().map(|&i| queries[i].clone()).collect();
    let (refined_p, outputs_p) = head_forward(&shuffled, &fmap, &weights, &cfg, None).unwrap();
    for (slot, &src) in perm.iter().enumerate() {
        assert_queries_close(&refined_p[slot], &refined[src], TOL, "permuted queries");
        assert_predictions_close(&outputs_p[slot], &outputs[src], TOL, "permuted outputs");
    }

    // Zero weights collapse every fusion block onto its residual path.
    let zeroed = HeadWeights::zeroed(&cfg);
    let d = cfg.d_obj;
    let x_s = random_vec(&mut rng, d);
    let x_o = random_vec(&mut rng, d);
    let no_pe = vec![0.0; d];
    let (out_s, out_o) = pair_fusion(&x_s, &x_o, &no_pe, &no_pe, &zeroed.pair).unwrap();
    assert_eq!(out_s, x_s, "pair fusion must vanish at zero weights");
    assert_eq!(out_o, x_o, "pair fusion must vanish at zero weights");

    let pooled = fmap.roi_pool(Box::new(0.5, 0.5, 0.4, 0.3).unwrap()).unwrap();
    let conv = dynamic_conv(&x_s, &pooled, &zeroed.obj_dyn).unwrap();
    assert_eq!(
        conv,
        naive_layer_norm(&x_s, &LayerNorm::identity(d)),
        "zero-weight convolution must reduce to the normalized residual"
    );

    let f_r = random_vec(&mut rng, cfg.d_rel);
    let fused = e2r_fusion(&x_s, &x_o, &f_r, &no_pe, &no_pe, &zeroed.e2r).unwrap();
    assert_eq!(
        fused,
        naive_layer_norm(&f_r, &LayerNorm::identity(cfg.d_rel)),
        "zero-weight entity fusion must reduce to the normalized residual"
    );

    let master = random_vec(&mut rng, cfg.num_rel_classes);
    let logits = relation_logits(&x_s, &x_o, &master, &zeroed.relfuse).unwrap();
    assert_eq!(logits, master, "zero-weight logit fusion must pass through");

    // At the head level: boxes pass through untouched and every logit is 0.
    let (refined_z, outputs_z) = head_forward(&queries, &fmap, &zeroed, &cfg, None).unwrap();
    for (q, (rq, out)) in queries.iter().zip(refined_z.iter().zip(&outputs_z)) {
        assert_eq!(q.sub_box, rq.sub_box);
        assert_eq!(q.obj_box, rq.obj_box);
        assert_eq!(q.sub_box, out.sub_box);
        assert_eq!(q.obj_box, out.obj_box);
        assert!(
            out.sub_logits
                .iter()
                .chain(&out.obj_logits)
                .chain(&out.rel_logits)
                .all(|&z| z == 0.0),
            "zero-weight head must emit zero logits"
        );
    }

    // Straight-line re-evaluation of every fusion block on random instances.
    for trial in 0..5usize {
        let d = 5 + trial;
        let w = PairFusionWeights {
            w_s0: random_matrix(&mut rng, d, d),
            w_o0: random_matrix(&mut rng, d, d),
            w_s1: random_matrix(&mut rng, d, d),
            w_o1: random_matrix(&mut rng, d, d),
            ln: random_layer_norm(&mut rng, d),
        };
        let x_s = random_vec(&mut rng, d);
        let x_o = random_vec(&mut rng, d);
        let p_s = random_vec(&mut rng, d);
        let p_o = random_vec(&mut rng, d);
        let (lib_s, lib_o) = pair_fusion(&x_s, &x_o, &p_s, &p_o, &w).unwrap();
        let bottleneck = naive_relu(&naive_layer_norm(
            &naive_add(&naive_matvec(&w.w_s0, &x_s), &naive_matvec(&w.w_o0, &x_o)),
            &w.ln,
        ));
        let want_s = naive_add(&naive_add(&x_s, &naive_matvec(&w.w_s1, &bottleneck)), &p_s);
        let want_o = naive_add(&naive_add(&x_o, &naive_matvec(&w.w_o1, &bottleneck)), &p_o);
        assert_close(&lib_s, &want_s, TOL, "pair fusion re-evaluation");
        assert_close(&lib_o, &want_o, TOL, "pair fusion re-evaluation");

        let (c, k, p) = (3usize, 2usize, 5 + trial);
        let w = DynConvWeights {
            w1_gen: random_matrix(&mut rng, k * c, d),
            w2_gen: random_matrix(&mut rng, c * k, d),
            w_v: random_matrix(&mut rng, d, c * p),
            ln1: random_layer_norm(&mut rng, k),
            ln2: random_layer_norm(&mut rng, c),
            ln3: random_layer_norm(&mut rng, d),
            ln4: random_layer_norm(&mut rng, d),
        };
        let x = random_vec(&mut rng, d);
        let v0 = PooledFeatures::new(c, p, random_vec(&mut rng, c * p)).unwrap();
        let lib = dynamic_conv(&x, &v0, &w).unwrap();
        let f1 = naive_matvec(&w.w1_gen, &x);
        let mut v1 = vec![vec![0.0; p]; k];
        for (ki, row) in v1.iter_mut().enumerate() {
            for (pi, slot) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for ci in 0..c {
                    acc += f1[ki * c + ci] * v0.get(ci, pi);
                }
                *slot = acc;
            }
        }
        for pi in 0..p {
            let column: Vec<f64> = (0..k).map(|ki| v1[ki][pi]).collect();
            let normed = naive_layer_norm(&column, &w.ln1);
            for ki in 0..k {
                v1[ki][pi] = normed[ki].max(0.0);
            }
        }
        let f2 = naive_matvec(&w.w2_gen, &x);
        let mut v2 = vec![vec![0.0; p]; c];
        for (ci, row) in v2.iter_mut().enumerate() {
            for (pi, slot) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for ki in 0..k {
                    acc += f2[ci * k + ki] * v1[ki][pi];
                }
                *slot = acc;
            }
        }
        for pi in 0..p {
            let column: Vec<f64> = (0..c).map(|ci| v2[ci][pi]).collect();
            let normed = naive_layer_norm(&column, &w.ln2);
            for ci in 0..c {
                v2[ci][pi] = normed[ci].max(0.0);
            }
        }
        let flat: Vec<f64> = v2.iter().flat_map(|row| row.iter().copied()).collect();
        let projected = naive_relu(&naive_layer_norm(&naive_matvec(&w.w_v, &flat), &w.ln3));
        let want = naive_layer_norm(&naive_add(&x, &projected), &w.ln4);
        assert_close(&lib, &want, TOL, "dynamic convolution re-evaluation");

        let r = 4 + trial;
        let w = E2rWeights {
            w_s_r: random_matrix(&mut rng, r, d),
            w_o_r: random_matrix(&mut rng, r, d),
            ln_s: random_layer_norm(&mut rng, r),
            ln_o: random_layer_norm(&mut rng, r),
            w_x: random_matrix(&mut rng, r, r),
            w_y: random_matrix(&mut rng, r, r),
            w_s_p: random_matrix(&mut rng, r, d),
            w_o_p: random_matrix(&mut rng, r, d),
            w_p_r: random_matrix(&mut rng, r, r),
            ln_out: random_layer_norm(&mut rng, r),
        };
        let f_s = random_vec(&mut rng, d);
        let f_o = random_vec(&mut rng, d);
        let f_r = random_vec(&mut rng, r);
        let p_s = random_vec(&mut rng, d);
        let p_o = random_vec(&mut rng, d);
        let lib = e2r_fusion(&f_s, &f_o, &f_r, &p_s, &p_o, &w).unwrap();
        let from_s = naive_matvec(
            &w.w_x,
            &naive_relu(&naive_layer_norm(&naive_matvec(&w.w_s_r, &f_s), &w.ln_s)),
        );
        let from_o = naive_matvec(
            &w.w_y,
            &naive_relu(&naive_layer_norm(&naive_matvec(&w.w_o_r, &f_o), &w.ln_o)),
        );
        let pos = naive_matvec(
            &w.w_p_r,
            &naive_relu(&naive_add(
                &naive_matvec(&w.w_s_p, &p_s),
                &naive_matvec(&w.w_o_p, &p_o),
            )),
        );
        let want = naive_layer_norm(
            &naive_add(&naive_add(&naive_add(&f_r, &from_s), &from_o), &pos),
            &w.ln_out,
        );
        assert_close(&lib, &want, TOL, "entity-to-relation re-evaluation");

        let (d_g, n_rel) = (4 + trial, 3 + trial);
        let w = RelClsFusionWeights {
            w_s_r1: random_matrix(&mut rng, d_g, d),
            w_o_r1: random_matrix(&mut rng, d_g, d),
            ln_s: random_layer_norm(&mut rng, d_g),
            ln_o: random_layer_norm(&mut rng, d_g),
            w_cls: random_matrix(&mut rng, n_rel, d_g),
        };
        let f_r = random_vec(&mut rng, n_rel);
        let lib = relation_logits(&f_s, &f_o, &f_r, &w).unwrap();
        let g_s = naive_layer_norm(&naive_matvec(&w.w_s_r1, &f_s), &w.ln_s);
        let g_o = naive_layer_norm(&naive_matvec(&w.w_o_r1, &f_o), &w.ln_o);
        let g_so: Vec<f64> = g_s
            .iter()
            .zip(&g_o)
            .map(|(&s, &o)| (s + o).max(0.0) - (s - o) * (s - o))
            .collect();
        let want = naive_add(&f_r, &naive_matvec(&w.w_cls, &naive_relu(&g_so)));
        assert_close(&lib, &want, TOL, "relation-logit re-evaluation");

        let w = FfnWeights {
            w1: random_matrix(&mut rng, 2 * d, d),
            w2: random_matrix(&mut rng, d, 2 * d),
            ln: random_layer_norm(&mut rng, d),
        };
        let lib = ffn(&x, &w).unwrap();
        let want = naive_layer_norm(
            &naive_add(&x, &naive_matvec(&w.w2, &naive_relu(&naive_matvec(&w.w1, &x)))),
            &w.ln,
        );
        assert_close(&lib, &want, TOL, "feed-forward re-evaluation");
    }

    report(9, "head forward properties", started, Duration::from_secs(30));
}

// --- criterion 10: logit adjustment -------------------------------------------

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[test]
fn criterion_10_logit_adjustment() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    let uniform = FrequencyTable::new(vec![0.1; 10]).unwrap();
    for _ in 0..1000 {
        let logits: Vec<f64> = (0..10).map(|_| rng.gen_range(-4.0..4.0)).collect();
        // Zero strength leaves the logits untouched.
        assert_eq!(logit_adjust(&logits, &uniform, 0.0).unwrap(), logits);
        // Uniform frequencies shift every class equally: argmax invariant.
        let adjusted = logit_adjust(&logits, &uniform, 0.3).unwrap();
        assert_eq!(argmax(&adjusted), argmax(&logits));
    }

    // Tied logits with frequencies 0.9 vs 0.1: the rarer class wins.
    let skewed = FrequencyTable::new(vec![0.9, 0.1]).unwrap();
    let adjusted = logit_adjust(&[1.0, 1.0], &skewed, 0.3).unwrap();
    assert_eq!(argmax(&adjusted), 1);
    assert!((adjusted[0] - 1.031_608_154_697_347_9).abs() < 1e-12);
    assert!((adjusted[1] - 1.690_775_527_898_213_7).abs() < 1e-12);

    report(10, "logit adjustment", started, Duration::from_secs(5));
}
