//! Two-stage triplet label assignment.
//!
//! Stage one is a Hungarian matching between prediction slots and annotated
//! triplets under the first-stage cost. Every slot left unmatched is then
//! offered the *pseudo pair* set `U`: all ordered pairs of auxiliary
//! detections, minus the pairs whose members were matched to an annotated
//! relation (those are already supervised in stage one). A pair member that
//! was matched to a ground-truth object carries that object's box and label
//! ("hit"); an unmatched member keeps its raw detected box and a background
//! label. Because `U` grows quadratically in the auxiliary detections, the
//! candidate pool is first reduced: each remaining prediction nominates its
//! K cheapest candidates, K chosen minimal (binary search) so the union of
//! nominations still exceeds the number of predictions to place.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box;
use crate::losses::{box_losses, focal_loss, FocalParams, LossCoefficients};
use crate::matching::{hungarian, stage1_cost_with_mode, stage2_cost, ClassCostMode, CostMatrix};
use crate::metrics::gt_triplets;
use crate::numerics::Vector;
use crate::scene::{SceneGraph, TripletPrediction};

/// One detection from the auxiliary (proposal) branch: a box, class logits,
/// and — once label assignment has run — the index of the ground-truth
/// object it represents, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxDetection {
    pub bbox: Box,
    pub logits: Vector,
    pub matched_gt: Option<usize>,
}

/// One member of a pseudo pair. `hit` (and a `Some` label) means the
/// underlying detection was matched to an annotated object, whose box
/// replaces the detected one; otherwise the raw detected box is kept and
/// the classification target is background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoObject {
    pub bbox: Box,
    pub label: Option<usize>,
    pub hit: bool,
}

/// Ordered (subject, object) pseudo pair; `source` records the indices of
/// the auxiliary detections it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoPair {
    pub sub: PseudoObject,
    pub obj: PseudoObject,
    pub source: (usize, usize),
}

/// What the slots left over after stage one are trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignMode {
    /// Stage-two matching against the pseudo pair set (the default).
    #[default]
    PseudoLabel,
    /// No stage two; leftovers get full background supervision on the
    /// relation and both objects.
    FullBackground,
    /// No stage two; leftovers get background supervision on the relation
    /// only.
    NoBackground,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignConfig {
    pub mode: AssignMode,
    pub class_cost_mode: ClassCostMode,
}

/// Output of [`two_stage_assign`]: a partition of the prediction slots into
/// stage-one matches (slot, annotated-triplet index), stage-two matches
/// (slot, pseudo-pair index) and background, plus the pseudo set and the
/// candidate-reduction diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub stage1: Vec<(usize, usize)>,
    pub stage1_costs: Vec<f64>,
    pub stage2: Vec<(usize, usize)>,
    pub stage2_costs: Vec<f64>,
    pub background: Vec<usize>,
    pub pseudo_set: Vec<PseudoPair>,
    /// `|U|` before reduction.
    pub pool_size: usize,
    /// Distinct candidates surviving reduction.
    pub candidate_count: usize,
    /// Minimal per-prediction nomination count found by binary search;
    /// `None` when stage two did not run.
    pub k_min: Option<usize>,
    pub mode: AssignMode,
}

/// Matches auxiliary detections to annotated objects (Hungarian matching
/// under classification + L1 + GIoU cost with the first-stage coefficients)
/// and stores the result in each detection's `matched_gt`. With more
/// ground-truth objects than detections, some objects stay unclaimed.
pub fn assign_aux_labels(
    aux: &mut [AuxDetection],
    gt: &SceneGraph,
    coeffs: &LossCoefficients,
    focal: &FocalParams,
) -> Result<()> {
    for a in aux.iter_mut() {
        a.matched_gt = None;
    }
    if aux.is_empty() || gt.objects.is_empty() {
        return Ok(());
    }
    let mut data = Vec::with_capacity(aux.len() * gt.objects.len());
    for a in aux.iter() {
        for o in &gt.objects {
            let b = box_losses(a.bbox, o.bbox);
            let cls = focal_loss(&a.logits, Some(o.label), focal)?.loss;
            data.push(
                coeffs.lambda_cls_obj * cls
                    + coeffs.lambda_l1 * b.l1
                    + coeffs.lambda_giou * b.giou_loss,
            );
        }
    }
    let cost = CostMatrix::new(aux.len(), gt.objects.len(), data)?;
    for (det, obj) in hungarian(&cost)?.pairs {
        aux[det].matched_gt = Some(obj);
    }
    Ok(())
}

/// Builds the pseudo pair set `U` from labeled auxiliary detections: every
/// ordered pair of distinct detections, except pairs whose two members were
/// matched to objects that form an annotated relation (in that direction).
pub fn build_pseudo_set(aux: &[AuxDetection], gt: &SceneGraph) -> Result<Vec<PseudoPair>> {
    if aux.is_empty() {
        return Err(Error::EmptyInput("auxiliary detections".into()));
    }
    let annotated: std::collections::HashSet<(usize, usize)> =
        gt.relations.iter().map(|r| (r.sub, r.obj)).collect();
    let member = |a: &AuxDetection| -> PseudoObject {
        match a.matched_gt {
            Some(g) => PseudoObject {
                bbox: gt.objects[g].bbox,
                label: Some(gt.objects[g].label),
                hit: true,
            },
            None => PseudoObject {
                bbox: a.bbox,
                label: None,
                hit: false,
            },
        }
    };
    let mut pairs = Vec::with_capacity(aux.len() * aux.len().saturating_sub(1));
    for (i, ai) in aux.iter().enumerate() {
        for (j, aj) in aux.iter().enumerate() {
            if i == j {
                continue;
            }
            if let (Some(gi), Some(gj)) = (ai.matched_gt, aj.matched_gt) {
                if annotated.contains(&(gi, gj)) {
                    continue;
                }
            }
            pairs.push(PseudoPair {
                sub: member(ai),
                obj: member(aj),
                source: (i, j),
            });
        }
    }
    Ok(pairs)
}

/// Shrinks a candidate pool: every row (prediction) nominates its `k`
/// cheapest columns (ties by index), and `k` is the smallest value whose
/// nomination union strictly exceeds the row count, found by binary search
/// over `k`. When even the full pool cannot exceed the row count, the full
/// pool is returned with `k = pool size`. Returns `(k_min, candidate column
/// indices in ascending order)`.
pub fn reduce_candidates(cost_rows: &[Vec<f64>]) -> Result<(usize, Vec<usize>)> {
    let m = cost_rows.len();
    if m == 0 {
        return Err(Error::EmptyInput("reduce_candidates rows".into()));
    }
    let pool = cost_rows[0].len();
    if pool == 0 {
        return Err(Error::EmptyInput("reduce_candidates pool".into()));
    }
    for row in cost_rows {
        if row.len() != pool {
            return Err(Error::ShapeMismatch(format!(
                "candidate rows of unequal length: {} vs {pool}",
                row.len()
            )));
        }
        if row.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("candidate cost".into()));
        }
    }

    // Row-wise candidate order by (cost, index), computed once.
    let orders: Vec<Vec<usize>> = cost_rows
        .iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..pool).collect();
            idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let union_size = |k: usize| -> usize {
        let mut seen = vec![false; pool];
        let mut count = 0;
        for order in &orders {
            for &c in &order[..k] {
                if !seen[c] {
                    seen[c] = true;
                    count += 1;
                }
            }
        }
        count
    };

    if pool <= m {
        // Even nominating everything cannot exceed the row count.
        return Ok((pool, (0..pool).collect()));
    }

    // The union size is nondecreasing in k and reaches `pool` (> m) at
    // k = pool, so the minimal k exists; binary search for it.
    let (mut lo, mut hi) = (1usize, pool);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if union_size(mid) > m {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let k = lo;

    let mut seen = vec![false; pool];
    for order in &orders {
        for &c in &order[..k] {
            seen[c] = true;
        }
    }
    let candidates = (0..pool).filter(|&c| seen[c]).collect();
    Ok((k, candidates))
}

/// Runs both assignment stages and partitions every prediction slot.
///
/// Requirements: at least as many slots as annotated triplets. Auxiliary
/// detections get their object labels assigned internally (any existing
/// `matched_gt` values are recomputed). With an empty auxiliary set, or a
/// mode without stage two, leftovers all go to background.
pub fn two_stage_assign(
    preds: &[TripletPrediction],
    gt: &SceneGraph,
    aux: &[AuxDetection],
    coeffs: &LossCoefficients,
    focal: &FocalParams,
    cfg: &AssignConfig,
) -> Result<AssignmentResult> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("prediction slots".into()));
    }
    for p in preds {
        p.validate()?;
    }
    let triplets = gt_triplets(gt);
    if triplets.len() > preds.len() {
        return Err(Error::InvalidConfig(format!(
            "{} prediction slots cannot cover {} annotated triplets",
            preds.len(),
            triplets.len()
        )));
    }

    // Stage one: slots vs annotated triplets.
    let mut stage1 = Vec::new();
    let mut stage1_costs = Vec::new();
    if !triplets.is_empty() {
        let mut data = Vec::with_capacity(preds.len() * triplets.len());
        for p in preds {
            for t in &triplets {
                data.push(stage1_cost_with_mode(p, t, coeffs, focal, cfg.class_cost_mode)?);
            }
        }
        let cost = CostMatrix::new(preds.len(), triplets.len(), data)?;
        let m = hungarian(&cost)?;
        stage1_costs = m.pairs.iter().map(|&(i, j)| cost.get(i, j)).collect();
        stage1 = m.pairs;
    }

    let mut taken = vec![false; preds.len()];
    for &(slot, _) in &stage1 {
        taken[slot] = true;
    }
    let remaining: Vec<usize> = (0..preds.len()).filter(|&i| !taken[i]).collect();

    let mut result = AssignmentResult {
        stage1,
        stage1_costs,
        stage2: Vec::new(),
        stage2_costs: Vec::new(),
        background: Vec::new(),
        pseudo_set: Vec::new(),
        pool_size: 0,
        candidate_count: 0,
        k_min: None,
        mode: cfg.mode,
    };

    let run_stage2 =
        cfg.mode == AssignMode::PseudoLabel && !remaining.is_empty() && !aux.is_empty();
    if run_stage2 {
        let mut labeled = aux.to_vec();
        assign_aux_labels(&mut labeled, gt, coeffs, focal)?;
        let pseudo = build_pseudo_set(&labeled, gt)?;
        result.pool_size = pseudo.len();
        if !pseudo.is_empty() {
            let rows: Vec<Vec<f64>> = remaining
                .iter()
                .map(|&slot| {
                    pseudo
                        .iter()
                        .map(|pp| stage2_cost(&preds[slot], pp, coeffs, focal, cfg.class_cost_mode))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let (k_min, candidates) = reduce_candidates(&rows)?;
            result.k_min = Some(k_min);
            result.candidate_count = candidates.len();

            let mut data = Vec::with_capacity(remaining.len() * candidates.len());
            for row in &rows {
                for &c in &candidates {
                    data.push(row[c]);
                }
            }
            let cost = CostMatrix::new(remaining.len(), candidates.len(), data)?;
            let m = hungarian(&cost)?;
            for &(r, c) in &m.pairs {
                result.stage2.push((remaining[r], candidates[c]));
                result.stage2_costs.push(cost.get(r, c));
            }
        }
        result.pseudo_set = pseudo;
    }

    for &(slot, _) in &result.stage2 {
        taken[slot] = true;
    }
    result.background = (0..preds.len()).filter(|&i| !taken[i]).collect();
    Ok(result)
}
