//! Minimum-cost bipartite matching and the two matching costs used for
//! triplet label assignment.
//!
//! The solver is the `O(n^3)` shortest-augmenting-path formulation of the
//! Hungarian algorithm with row/column potentials. Rectangular inputs are
//! padded internally to square with zero-cost dummy entries, which leaves
//! the optimal assignment over `min(rows, cols)` real pairs unchanged; only
//! real pairs are reported. Rows are processed and columns scanned in
//! ascending index order, so among equal-cost optima the result is
//! deterministic and prefers low row indices, then low column indices.

use crate::error::{Error, Result};
use crate::losses::{box_losses, focal_loss, FocalParams, LossCoefficients};
use crate::metrics::GroundTruthTriplet;
use crate::numerics::Matrix;
use crate::scene::TripletPrediction;

/// Cost table: rows are predictions, columns are candidates. Entries must
/// be finite (checked at construction by [`Matrix::new`]).
pub type CostMatrix = Matrix;

/// Result of a minimum-cost assignment: matched `(row, col)` pairs sorted
/// by row, and the total cost over those pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

/// Minimum-cost bipartite matching of `min(rows, cols)` pairs.
pub fn hungarian(cost: &CostMatrix) -> Result<Matching> {
    let (rows, cols) = (cost.rows(), cost.cols());
    let n = rows.max(cols);

    // Square view with zero-padding for the missing side.
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost.get(i, j)
        } else {
            0.0
        }
    };

    // Shortest augmenting paths with potentials; columns are 1-based with
    // column 0 as the virtual start of each augmentation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // col j (1-based) -> row (1-based), 0 = free
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::with_capacity(rows.min(cols));
    for j in 1..=n {
        let i = matched_row[j];
        if i >= 1 && i - 1 < rows && j - 1 < cols {
            pairs.push((i - 1, j - 1));
        }
    }
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| cost.get(i, j)).sum();
    Ok(Matching { pairs, total })
}

/// How the classification part of a matching cost is computed: focal loss
/// over the full logit vector (the default, identical to the training
/// loss), or only the target class's positive term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassCostMode {
    #[default]
    FullFocal,
    TargetOnly,
}

fn class_cost(
    logits: &[f64],
    target: usize,
    focal: &FocalParams,
    mode: ClassCostMode,
) -> Result<f64> {
    match mode {
        ClassCostMode::FullFocal => Ok(focal_loss(logits, Some(target), focal)?.loss),
        ClassCostMode::TargetOnly => {
            if target >= logits.len() {
                return Err(Error::LabelOutOfRange {
                    label: target,
                    num_classes: logits.len(),
                });
            }
            let single = [logits[target]];
            let params = FocalParams {
                alpha: focal.alpha,
                gamma: crate::losses::Gamma::Fixed(focal.gamma.for_class(target)),
            };
            Ok(focal_loss(&single, Some(0), &params)?.loss)
        }
    }
}

/// First-stage matching cost between a triplet prediction and a
/// ground-truth triplet: relation classification plus, for each of the
/// subject and object, classification, L1 and GIoU terms.
pub fn stage1_cost(
    pred: &TripletPrediction,
    gt: &GroundTruthTriplet,
    coeffs: &LossCoefficients,
    focal: &FocalParams,
) -> Result<f64> {
    stage1_cost_with_mode(pred, gt, coeffs, focal, ClassCostMode::FullFocal)
}

/// [`stage1_cost`] with an explicit classification-cost mode.
pub fn stage1_cost_with_mode(
    pred: &TripletPrediction,
    gt: &GroundTruthTriplet,
    coeffs: &LossCoefficients,
    focal: &FocalParams,
    mode: ClassCostMode,
) -> Result<f64> {
    let mut cost = coeffs.lambda_cls_rel * class_cost(&pred.rel_logits, gt.predicate, focal, mode)?;
    for (logits, pbox, label, gbox) in [
        (&pred.sub_logits, pred.sub_box, gt.sub_label, gt.sub_box),
        (&pred.obj_logits, pred.obj_box, gt.obj_label, gt.obj_box),
    ] {
        let b = box_losses(pbox, gbox);
        cost += coeffs.lambda_cls_obj * class_cost(logits, label, focal, mode)?
            + coeffs.lambda_l1 * b.l1
            + coeffs.lambda_giou * b.giou_loss;
    }
    Ok(cost)
}

/// Second-stage matching cost between an unmatched prediction's object pair
/// and a pseudo pair: L1 and GIoU on both boxes always, classification only
/// for members that hit an annotated object.
pub fn stage2_cost(
    pred: &TripletPrediction,
    pseudo: &crate::assignment::PseudoPair,
    coeffs: &LossCoefficients,
    focal: &FocalParams,
    mode: ClassCostMode,
) -> Result<f64> {
    let mut cost = 0.0;
    for (logits, pbox, member) in [
        (&pred.sub_logits, pred.sub_box, &pseudo.sub),
        (&pred.obj_logits, pred.obj_box, &pseudo.obj),
    ] {
        let b = box_losses(pbox, member.bbox);
        cost += coeffs.eta_l1 * b.l1 + coeffs.eta_giou * b.giou_loss;
        if let Some(label) = member.label {
            cost += coeffs.eta_cls * class_cost(logits, label, focal, mode)?;
        }
    }
    Ok(cost)
}
