//! Scene-graph evaluation: triplet matching, the recall@K family
//! (plain, per-predicate mean, zero-shot) and weighted mean average
//! precision over relationships and phrases, plus the scalar weighted score
//! that combines them.
//!
//! Conventions: a ground-truth triplet is *recalled* when any selected
//! prediction matches it (labels equal, IoU at or above 0.5), so duplicate
//! hits never double-count. Recall@K averages per image (macro) by default
//! with a pooled (micro) option; mean recall pools per predicate category
//! across images and then averages categories unweighted; zero-shot recall
//! pools over all ground-truth triplets whose label combination is unseen.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, union_box, Box};
use crate::scene::{argmax_score, SceneGraph, TripletPrediction};

/// IoU threshold used by both matching modes.
pub const MATCH_IOU_THRESHOLD: f64 = 0.5;

/// Ground-truth triplet with resolved boxes and labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTriplet {
    pub sub_box: Box,
    pub sub_label: usize,
    pub obj_box: Box,
    pub obj_label: usize,
    pub predicate: usize,
}

/// Expands a scene graph's relation list into concrete triplets.
pub fn gt_triplets(g: &SceneGraph) -> Vec<GroundTruthTriplet> {
    g.relations
        .iter()
        .map(|r| GroundTruthTriplet {
            sub_box: g.objects[r.sub].bbox,
            sub_label: g.objects[r.sub].label,
            obj_box: g.objects[r.obj].bbox,
            obj_label: g.objects[r.obj].label,
            predicate: r.predicate,
        })
        .collect()
}

/// A scored prediction ready for ranking: hard labels with their scores and
/// a combined ranking score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTriplet {
    pub sub_box: Box,
    pub sub_label: usize,
    pub sub_score: f64,
    pub obj_box: Box,
    pub obj_label: usize,
    pub obj_score: f64,
    pub predicate: usize,
    pub predicate_score: f64,
    pub score: f64,
}

/// Combined ranking score of a triplet: the product of the three component
/// scores.
pub fn triplet_score(sub_score: f64, obj_score: f64, predicate_score: f64) -> f64 {
    sub_score * obj_score * predicate_score
}

/// Turns raw head output into a ranked triplet by taking the strongest
/// class on each branch.
pub fn rank_prediction(p: &TripletPrediction) -> RankedTriplet {
    let (sub_label, sub_score) = argmax_score(&p.sub_logits);
    let (obj_label, obj_score) = argmax_score(&p.obj_logits);
    let (predicate, predicate_score) = argmax_score(&p.rel_logits);
    RankedTriplet {
        sub_box: p.sub_box,
        sub_label,
        sub_score,
        obj_box: p.obj_box,
        obj_label,
        obj_score,
        predicate,
        predicate_score,
        score: triplet_score(sub_score, obj_score, predicate_score),
    }
}

/// The two matching protocols: `Relationship` requires both boxes to hit
/// their counterparts; `Phrase` requires only the union regions to overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchMode {
    Relationship,
    Phrase,
}

/// True when the prediction's three labels equal the ground truth's and the
/// boxes overlap per `mode` at IoU >= 0.5.
pub fn triplet_match(pred: &RankedTriplet, gt: &GroundTruthTriplet, mode: MatchMode) -> bool {
    if pred.sub_label != gt.sub_label
        || pred.obj_label != gt.obj_label
        || pred.predicate != gt.predicate
    {
        return false;
    }
    match mode {
        MatchMode::Relationship => {
            iou(pred.sub_box, gt.sub_box) >= MATCH_IOU_THRESHOLD
                && iou(pred.obj_box, gt.obj_box) >= MATCH_IOU_THRESHOLD
        }
        MatchMode::Phrase => {
            let pu = union_box(pred.sub_box, pred.obj_box);
            let gu = union_box(gt.sub_box, gt.obj_box);
            iou(pu, gu) >= MATCH_IOU_THRESHOLD
        }
    }
}

/// How recall aggregates across images: `Macro` averages per-image recalls,
/// `Micro` pools hits and ground-truth counts before dividing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    Micro,
}

fn box_key(b: Box) -> [u64; 4] {
    [b.cx.to_bits(), b.cy.to_bits(), b.w.to_bits(), b.h.to_bits()]
}

/// Indices of the top-`k` predictions by combined score (ties broken by
/// original index). With the graph constraint enabled, at most one
/// prediction per (subject box, object box) pair survives — the
/// highest-scored one — before the list is truncated to `k`.
pub fn select_top_k(preds: &[RankedTriplet], k: usize, graph_constraint: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .total_cmp(&preds[a].score)
            .then(a.cmp(&b))
    });
    if graph_constraint {
        let mut seen: HashSet<([u64; 4], [u64; 4])> = HashSet::new();
        order.retain(|&i| seen.insert((box_key(preds[i].sub_box), box_key(preds[i].obj_box))));
    }
    order.truncate(k);
    order
}

fn check_image_counts(preds: &[Vec<RankedTriplet>], gts: &[Vec<GroundTruthTriplet>]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} prediction images vs {} ground-truth images",
            preds.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// Per-image hit flags: for each ground-truth triplet, whether any of the
/// selected top-`k` predictions matches it in `Relationship` mode.
fn image_hits(
    preds: &[RankedTriplet],
    gts: &[GroundTruthTriplet],
    k: usize,
    graph_constraint: bool,
) -> Vec<bool> {
    let selected = select_top_k(preds, k, graph_constraint);
    gts.iter()
        .map(|gt| {
            selected
                .iter()
                .any(|&i| triplet_match(&preds[i], gt, MatchMode::Relationship))
        })
        .collect()
}

/// Recall@K over a corpus. Macro averaging skips images without ground
/// truth; at least one image must carry a ground-truth triplet.
pub fn recall_at_k(
    preds: &[Vec<RankedTriplet>],
    gts: &[Vec<GroundTruthTriplet>],
    k: usize,
    graph_constraint: bool,
    averaging: Averaging,
) -> Result<f64> {
    check_image_counts(preds, gts)?;
    let mut per_image = Vec::new();
    let mut pooled_hits = 0usize;
    let mut pooled_total = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        if g.is_empty() {
            continue;
        }
        let hits = image_hits(p, g, k, graph_constraint);
        let n_hit = hits.iter().filter(|h| **h).count();
        per_image.push(n_hit as f64 / g.len() as f64);
        pooled_hits += n_hit;
        pooled_total += g.len();
    }
    if pooled_total == 0 {
        return Err(Error::EmptyInput("no ground-truth triplets in corpus".into()));
    }
    Ok(match averaging {
        Averaging::Macro => per_image.iter().sum::<f64>() / per_image.len() as f64,
        Averaging::Micro => pooled_hits as f64 / pooled_total as f64,
    })
}

/// Mean recall@K: recall per predicate category pooled over all images,
/// then the unweighted mean over categories that appear in the ground
/// truth.
pub fn mean_recall_at_k(
    preds: &[Vec<RankedTriplet>],
    gts: &[Vec<GroundTruthTriplet>],
    k: usize,
    graph_constraint: bool,
) -> Result<f64> {
    check_image_counts(preds, gts)?;
    // BTreeMap so the category sum below has a fixed order (bitwise
    // reproducible results).
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new(); // predicate -> (hit, total)
    for (p, g) in preds.iter().zip(gts) {
        if g.is_empty() {
            continue;
        }
        for (gt, hit) in g.iter().zip(image_hits(p, g, k, graph_constraint)) {
            let e = hits.entry(gt.predicate).or_insert((0, 0));
            e.1 += 1;
            if hit {
                e.0 += 1;
            }
        }
    }
    if hits.is_empty() {
        return Err(Error::EmptyInput("no ground-truth triplets in corpus".into()));
    }
    let sum: f64 = hits.values().map(|(h, t)| *h as f64 / *t as f64).sum();
    Ok(sum / hits.len() as f64)
}

/// Zero-shot recall@K: pooled recall restricted to ground-truth triplets
/// whose `(subject, predicate, object)` label combination is absent from
/// `seen`. Returns `None` when the corpus contains no unseen combination.
pub fn zero_shot_recall_at_k(
    preds: &[Vec<RankedTriplet>],
    gts: &[Vec<GroundTruthTriplet>],
    k: usize,
    graph_constraint: bool,
    seen: &HashSet<(usize, usize, usize)>,
) -> Result<Option<f64>> {
    check_image_counts(preds, gts)?;
    let mut hit_count = 0usize;
    let mut total = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        if g.is_empty() {
            continue;
        }
        for (gt, hit) in g.iter().zip(image_hits(p, g, k, graph_constraint)) {
            if seen.contains(&(gt.sub_label, gt.predicate, gt.obj_label)) {
                continue;
            }
            total += 1;
            if hit {
                hit_count += 1;
            }
        }
    }
    Ok(if total == 0 {
        None
    } else {
        Some(hit_count as f64 / total as f64)
    })
}

/// Average precision for one predicate category under `mode`.
/// `detections` are (image index, prediction) pairs already filtered to the
/// category.
fn category_ap(
    detections: &mut Vec<(usize, usize)>, // (image, prediction index)
    preds: &[Vec<RankedTriplet>],
    gts: &[Vec<GroundTruthTriplet>],
    category: usize,
    mode: MatchMode,
) -> f64 {
    let npos: usize = gts
        .iter()
        .map(|g| g.iter().filter(|t| t.predicate == category).count())
        .sum();
    if npos == 0 {
        return 0.0;
    }
    // Global score order; ties resolved by (image, index) for determinism.
    detections.sort_by(|a, b| {
        preds[b.0][b.1]
            .score
            .total_cmp(&preds[a.0][a.1].score)
            .then(a.cmp(b))
    });

    let mut matched: HashMap<usize, Vec<bool>> = HashMap::new();
    let mut tp_flags = Vec::with_capacity(detections.len());
    for &(img, pi) in detections.iter() {
        let taken = matched
            .entry(img)
            .or_insert_with(|| vec![false; gts[img].len()]);
        let mut is_tp = false;
        for (gi, gt) in gts[img].iter().enumerate() {
            if gt.predicate != category || taken[gi] {
                continue;
            }
            if triplet_match(&preds[img][pi], gt, mode) {
                taken[gi] = true;
                is_tp = true;
                break;
            }
        }
        tp_flags.push(is_tp);
    }

    // Stepwise PR curve with the precision envelope (all-point
    // interpolation): each true positive adds (1/npos) * max precision at
    // or beyond its position.
    let n = tp_flags.len();
    let mut precision = vec![0.0; n];
    let mut tp = 0usize;
    for (i, &flag) in tp_flags.iter().enumerate() {
        if flag {
            tp += 1;
        }
        precision[i] = tp as f64 / (i + 1) as f64;
    }
    let mut envelope = precision.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    for (i, &flag) in tp_flags.iter().enumerate() {
        if flag {
            ap += envelope[i] / npos as f64;
        }
    }
    ap
}

/// Per-category AP table: `(category, gt count, ap)` for every predicate
/// present in the ground truth, sorted by category.
pub fn per_category_ap(
    preds: &[Vec<RankedTriplet>],
    gts: &[Vec<GroundTruthTriplet>],
    mode: MatchMode,
) -> Result<Vec<(usize, usize, f64)>> {
    check_image_counts(preds, gts)?;
    let mut categories: BTreeMap<usize, usize> = BTreeMap::new();
    for g in gts {
        for t in g {
            *categories.entry(t.predicate).or_insert(0) += 1;
        }
    }
    if categories.is_empty() {
        return Err(Error::EmptyInput("no ground-truth triplets in corpus".into()));
    }
    let mut by_cat: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    for (img, p) in preds.iter().enumerate() {
        for (pi, t) in p.iter().enumerate() {
            by_cat.entry(t.predicate).or_default().push((img, pi));
        }
    }
    Ok(categories
        .into_iter()
        .map(|(cat, count)| {
            let mut dets = by_cat.remove(&cat).unwrap_or_default();
            let ap = category_ap(&mut dets, preds, gts, cat, mode);
            (cat, count, ap)
        })
        .collect())
}

/// Weighted mean AP: per-category AP weighted by each category's share of
/// the ground-truth triplets. Uses every prediction (no top-K truncation,
/// no graph constraint).
pub fn wmap(
    preds: &[Vec<RankedTriplet>],
    gts: &[Vec<GroundTruthTriplet>],
    mode: MatchMode,
) -> Result<f64> {
    let table = per_category_ap(preds, gts, mode)?;
    let total: usize = table.iter().map(|(_, n, _)| n).sum();
    Ok(table
        .iter()
        .map(|(_, n, ap)| (*n as f64 / total as f64) * ap)
        .sum())
}

/// Final scalar on the percentage scale:
/// `0.2 * R@50 + 0.4 * wmAP_rel + 0.4 * wmAP_phr`.
pub fn weighted_score(recall_50: f64, wmap_rel: f64, wmap_phr: f64) -> f64 {
    0.2 * recall_50 + 0.4 * wmap_rel + 0.4 * wmap_phr
}

/// One row of the per-predicate breakdown in a [`MetricsReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPredicateRow {
    pub predicate: usize,
    pub gt_count: usize,
    pub weight: f64,
    pub recall: BTreeMap<usize, f64>,
    pub ap_rel: f64,
    pub ap_phr: f64,
}

/// Full evaluation summary. All ratios are reported on `[0, 1]`; the
/// weighted score is also kept on that scale (multiply by 100 for the
/// conventional presentation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall: BTreeMap<usize, f64>,
    pub mean_recall: BTreeMap<usize, f64>,
    pub zero_shot_recall: Option<BTreeMap<usize, f64>>,
    pub wmap_rel: f64,
    pub wmap_phr: f64,
    pub weighted_score: f64,
    pub per_predicate: Vec<PerPredicateRow>,
}

/// Evaluation knobs: which K values to report, whether the graph constraint
/// applies to the recall family, and how recall aggregates across images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub graph_constraint: bool,
    pub averaging: Averaging,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: vec![20, 50, 100],
            graph_constraint: true,
            averaging: Averaging::Macro,
        }
    }
}

/// Runs the full metric suite over a corpus. `seen` enables zero-shot
/// recall. The weighted score always uses R@50 (computed even when 50 is
/// not in `opts.ks`) together with the two weighted mAPs.
pub fn evaluate(
    preds: &[Vec<RankedTriplet>],
    gts: &[Vec<GroundTruthTriplet>],
    opts: &EvalOptions,
    seen: Option<&HashSet<(usize, usize, usize)>>,
) -> Result<MetricsReport> {
    check_image_counts(preds, gts)?;
    if opts.ks.is_empty() {
        return Err(Error::InvalidConfig("no K values requested".into()));
    }

    let mut recall = BTreeMap::new();
    let mut mean_recall = BTreeMap::new();
    for &k in &opts.ks {
        recall.insert(
            k,
            recall_at_k(preds, gts, k, opts.graph_constraint, opts.averaging)?,
        );
        mean_recall.insert(k, mean_recall_at_k(preds, gts, k, opts.graph_constraint)?);
    }
    let zero_shot_recall = match seen {
        Some(seen) => {
            let mut zr = BTreeMap::new();
            let mut any = false;
            for &k in &opts.ks {
                if let Some(v) =
                    zero_shot_recall_at_k(preds, gts, k, opts.graph_constraint, seen)?
                {
                    zr.insert(k, v);
                    any = true;
                }
            }
            if any {
                Some(zr)
            } else {
                None
            }
        }
        None => None,
    };

    let ap_rel = per_category_ap(preds, gts, MatchMode::Relationship)?;
    let ap_phr = per_category_ap(preds, gts, MatchMode::Phrase)?;
    let total_gt: usize = ap_rel.iter().map(|(_, n, _)| n).sum();
    let wmap_rel: f64 = ap_rel
        .iter()
        .map(|(_, n, ap)| (*n as f64 / total_gt as f64) * ap)
        .sum();
    let wmap_phr: f64 = ap_phr
        .iter()
        .map(|(_, n, ap)| (*n as f64 / total_gt as f64) * ap)
        .sum();

    let r50 = recall_at_k(preds, gts, 50, opts.graph_constraint, opts.averaging)?;
    let weighted = weighted_score(100.0 * r50, 100.0 * wmap_rel, 100.0 * wmap_phr) / 100.0;

    // Per-category recall pooled over images, per K.
    let mut cat_hits: BTreeMap<usize, BTreeMap<usize, (usize, usize)>> = BTreeMap::new();
    for &k in &opts.ks {
        for (p, g) in preds.iter().zip(gts) {
            if g.is_empty() {
                continue;
            }
            for (gt, hit) in g.iter().zip(image_hits(p, g, k, opts.graph_constraint)) {
                let e = cat_hits
                    .entry(gt.predicate)
                    .or_default()
                    .entry(k)
                    .or_insert((0, 0));
                e.1 += 1;
                if hit {
                    e.0 += 1;
                }
            }
        }
    }
    let phr_by_cat: BTreeMap<usize, f64> =
        ap_phr.iter().map(|(c, _, ap)| (*c, *ap)).collect();
    let per_predicate = ap_rel
        .iter()
        .map(|(cat, count, ap)| PerPredicateRow {
            predicate: *cat,
            gt_count: *count,
            weight: *count as f64 / total_gt as f64,
            recall: cat_hits
                .get(cat)
                .map(|m| {
                    m.iter()
                        .map(|(k, (h, t))| (*k, *h as f64 / *t as f64))
                        .collect()
                })
                .unwrap_or_default(),
            ap_rel: *ap,
            ap_phr: phr_by_cat.get(cat).copied().unwrap_or(0.0),
        })
        .collect();

    Ok(MetricsReport {
        recall,
        mean_recall,
        zero_shot_recall,
        wmap_rel,
        wmap_phr,
        weighted_score: weighted,
        per_predicate,
    })
}
