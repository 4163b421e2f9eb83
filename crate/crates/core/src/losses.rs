//! Training losses and their analytic gradients: sigmoid focal
//! classification loss, L1 + generalized-IoU box losses, the two set-level
//! loss assemblies over an assignment, and a direct gradient-descent fitter
//! that drives prediction slots toward a scene's annotation.
//!
//! Every gradient here is closed-form and is cross-checked in tests against
//! the central-difference probe in [`crate::numerics::fd_gradient`].

use crate::assignment::{two_stage_assign, AssignConfig, AssignMode, AssignmentResult, AuxDetection};
use crate::error::{Error, Result};
use crate::geometry::{giou, Box};
use crate::metrics::{gt_triplets, GroundTruthTriplet};
use crate::numerics::{sigmoid, softplus, Vector};
use crate::scene::{SceneGraph, TripletPrediction};

/// Focusing exponent for the focal loss: one shared value, or one value per
/// class (as produced by frequency-adaptive calibration).
#[derive(Debug, Clone, PartialEq)]
pub enum Gamma {
    Fixed(f64),
    PerClass(Vec<f64>),
}

impl Gamma {
    pub fn for_class(&self, c: usize) -> f64 {
        match self {
            Gamma::Fixed(g) => *g,
            Gamma::PerClass(gs) => gs[c],
        }
    }

    fn validate(&self, num_classes: usize) -> Result<()> {
        match self {
            Gamma::Fixed(g) => {
                if !(g.is_finite() && *g >= 0.0) {
                    return Err(Error::InvalidConfig(format!("focal gamma {g}")));
                }
            }
            Gamma::PerClass(gs) => {
                if gs.len() != num_classes {
                    return Err(Error::ShapeMismatch(format!(
                        "{} per-class gammas for {num_classes} classes",
                        gs.len()
                    )));
                }
                if gs.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
                    return Err(Error::InvalidConfig("negative or non-finite gamma".into()));
                }
            }
        }
        Ok(())
    }
}

/// Focal loss parameters: `alpha` balances positives against negatives,
/// `gamma` down-weights well-classified examples.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: Gamma,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: Gamma::Fixed(2.0),
        }
    }
}

/// Scalar loss plus gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalResult {
    pub loss: f64,
    pub grad: Vector,
}

/// Sigmoid (multi-label) focal loss over one logit vector, summed across
/// classes. `target = Some(c)` marks class `c` positive and every other
/// class negative; `target = None` is a background slot where all classes
/// are negative.
///
/// Per class with `p = sigmoid(z)`:
/// positives contribute `alpha * (1-p)^gamma * -ln(p)`,
/// negatives contribute `(1-alpha) * p^gamma * -ln(1-p)`.
pub fn focal_loss(logits: &[f64], target: Option<usize>, params: &FocalParams) -> Result<FocalResult> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("focal_loss logits".into()));
    }
    if !(params.alpha.is_finite() && (0.0..=1.0).contains(&params.alpha)) {
        return Err(Error::InvalidConfig(format!("focal alpha {}", params.alpha)));
    }
    params.gamma.validate(logits.len())?;
    if let Some(t) = target {
        if t >= logits.len() {
            return Err(Error::LabelOutOfRange {
                label: t,
                num_classes: logits.len(),
            });
        }
    }

    let alpha = params.alpha;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (c, (&z, slot)) in logits.iter().zip(grad.iter_mut()).enumerate() {
        let gamma = params.gamma.for_class(c);
        let p = sigmoid(z);
        if Some(c) == target {
            // -ln p computed stably as softplus(-z).
            let nlp = softplus(-z);
            let focus = (1.0 - p).powf(gamma);
            loss += alpha * focus * nlp;
            *slot = alpha * focus * (gamma * p * (-nlp) - (1.0 - p));
        } else {
            let nlq = softplus(z); // -ln(1-p)
            let focus = p.powf(gamma);
            loss += (1.0 - alpha) * focus * nlq;
            *slot = (1.0 - alpha) * focus * (p + gamma * (1.0 - p) * nlq);
        }
    }
    Ok(FocalResult { loss, grad })
}

/// L1 and GIoU losses between a predicted and a target box, with analytic
/// gradients with respect to the prediction's `(cx, cy, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxLosses {
    pub l1: f64,
    pub giou_loss: f64,
    pub l1_grad: [f64; 4],
    pub giou_grad: [f64; 4],
}

/// Computes `|pred - gt|_1` over the four center-format coordinates and the
/// GIoU loss `1 - giou(pred, gt)`. At the (measure-zero) nonsmooth points of
/// either loss the gradient is a one-sided subgradient.
pub fn box_losses(pred: Box, gt: Box) -> BoxLosses {
    let l1 = (pred.cx - gt.cx).abs()
        + (pred.cy - gt.cy).abs()
        + (pred.w - gt.w).abs()
        + (pred.h - gt.h).abs();
    let sgn = |d: f64| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let l1_grad = [
        sgn(pred.cx - gt.cx),
        sgn(pred.cy - gt.cy),
        sgn(pred.w - gt.w),
        sgn(pred.h - gt.h),
    ];

    let a = pred.to_corners();
    let b = gt.to_corners();

    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    let overlap = iw > 0.0 && ih > 0.0;
    let inter = if overlap { iw * ih } else { 0.0 };

    let area_a = pred.w * pred.h;
    let area_b = gt.w * gt.h;
    let union = area_a + area_b - inter;

    let ew = a.x2.max(b.x2) - a.x1.min(b.x1);
    let eh = a.y2.max(b.y2) - a.y1.min(b.y1);
    let enclose = ew * eh;

    // Partial derivatives with respect to pred's corner coordinates
    // (x1, y1, x2, y2); indicator terms pick the active branch of each
    // min/max.
    let d_inter = if overlap {
        [
            if a.x1 > b.x1 { -ih } else { 0.0 },
            if a.y1 > b.y1 { -iw } else { 0.0 },
            if a.x2 < b.x2 { ih } else { 0.0 },
            if a.y2 < b.y2 { iw } else { 0.0 },
        ]
    } else {
        [0.0; 4]
    };
    let d_area = [-pred.h, -pred.w, pred.h, pred.w];
    let d_union = [
        d_area[0] - d_inter[0],
        d_area[1] - d_inter[1],
        d_area[2] - d_inter[2],
        d_area[3] - d_inter[3],
    ];
    let d_enclose = [
        if a.x1 < b.x1 { -eh } else { 0.0 },
        if a.y1 < b.y1 { -ew } else { 0.0 },
        if a.x2 > b.x2 { eh } else { 0.0 },
        if a.y2 > b.y2 { ew } else { 0.0 },
    ];

    // giou = inter/union - (enclose - union)/enclose
    //      = inter/union - 1 + union/enclose
    let mut d_giou_corner = [0.0; 4];
    for i in 0..4 {
        d_giou_corner[i] = (d_inter[i] * union - inter * d_union[i]) / (union * union)
            + (d_union[i] * enclose - union * d_enclose[i]) / (enclose * enclose);
    }

    // Chain rule from corners to (cx, cy, w, h):
    // x1 = cx - w/2, x2 = cx + w/2 and likewise for y.
    let giou_grad = [
        -(d_giou_corner[0] + d_giou_corner[2]),
        -(d_giou_corner[1] + d_giou_corner[3]),
        -0.5 * (d_giou_corner[2] - d_giou_corner[0]),
        -0.5 * (d_giou_corner[3] - d_giou_corner[1]),
    ];

    BoxLosses {
        l1,
        giou_loss: 1.0 - giou(pred, gt),
        l1_grad,
        giou_grad,
    }
}

/// Weights on every term of the two matching costs and set losses.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossCoefficients {
    pub lambda_cls_rel: f64,
    pub lambda_cls_obj: f64,
    pub lambda_l1: f64,
    pub lambda_giou: f64,
    pub eta_cls: f64,
    pub eta_l1: f64,
    pub eta_giou: f64,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        Self {
            lambda_cls_rel: 4.0 / 3.0,
            lambda_cls_obj: 4.0 / 3.0,
            lambda_l1: 5.0,
            lambda_giou: 2.0,
            eta_cls: 1.0 / 3.0,
            eta_l1: 5.0 / 4.0,
            eta_giou: 0.5,
        }
    }
}

/// Loss over the first-stage matches: classification (relation and both
/// objects) plus both box losses against the annotated triplet, weighted by
/// the λ coefficients. Identical term-for-term to the stage-one matching
/// cost, so the matched cost total and this loss agree.
pub fn loss_lf(
    preds: &[TripletPrediction],
    triplets: &[GroundTruthTriplet],
    stage1: &[(usize, usize)],
    coeffs: &LossCoefficients,
    focal: &FocalParams,
) -> Result<f64> {
    let mut total = 0.0;
    for &(slot, t) in stage1 {
        let p = preds
            .get(slot)
            .ok_or_else(|| Error::ShapeMismatch(format!("slot {slot} out of range")))?;
        let g = triplets
            .get(t)
            .ok_or_else(|| Error::ShapeMismatch(format!("triplet {t} out of range")))?;
        total += coeffs.lambda_cls_rel * focal_loss(&p.rel_logits, Some(g.predicate), focal)?.loss;
        for (logits, pred_box, gt_box, label) in [
            (&p.sub_logits, p.sub_box, g.sub_box, g.sub_label),
            (&p.obj_logits, p.obj_box, g.obj_box, g.obj_label),
        ] {
            total += coeffs.lambda_cls_obj * focal_loss(logits, Some(label), focal)?.loss;
            let b = box_losses(pred_box, gt_box);
            total += coeffs.lambda_l1 * b.l1 + coeffs.lambda_giou * b.giou_loss;
        }
    }
    Ok(total)
}

/// Loss over everything the first stage left behind, per the assignment's
/// mode.
///
/// Pseudo-label mode: each second-stage match pays a background relation
/// term, object classification against the pseudo labels (background when
/// the pair member missed), and — only for hits — both box losses against
/// the pseudo box, with the η coefficients; slots in the background residue
/// pay the background relation term alone. The full-background ablation
/// additionally gives residue slots background object classification; the
/// no-background ablation keeps just the relation term.
pub fn loss_lb(
    preds: &[TripletPrediction],
    assignment: &AssignmentResult,
    coeffs: &LossCoefficients,
    focal: &FocalParams,
) -> Result<f64> {
    let slot = |i: usize| -> Result<&TripletPrediction> {
        preds
            .get(i)
            .ok_or_else(|| Error::ShapeMismatch(format!("slot {i} out of range")))
    };
    let mut total = 0.0;
    for &(s, u) in &assignment.stage2 {
        let p = slot(s)?;
        let pair = assignment
            .pseudo_set
            .get(u)
            .ok_or_else(|| Error::ShapeMismatch(format!("pseudo pair {u} out of range")))?;
        total += coeffs.lambda_cls_rel * focal_loss(&p.rel_logits, None, focal)?.loss;
        for (logits, pred_box, member) in [
            (&p.sub_logits, p.sub_box, &pair.sub),
            (&p.obj_logits, p.obj_box, &pair.obj),
        ] {
            total += coeffs.eta_cls * focal_loss(logits, member.label, focal)?.loss;
            if member.hit {
                let b = box_losses(pred_box, member.bbox);
                total += coeffs.eta_l1 * b.l1 + coeffs.eta_giou * b.giou_loss;
            }
        }
    }
    for &s in &assignment.background {
        let p = slot(s)?;
        total += coeffs.lambda_cls_rel * focal_loss(&p.rel_logits, None, focal)?.loss;
        if assignment.mode == AssignMode::FullBackground {
            total += coeffs.eta_cls * focal_loss(&p.sub_logits, None, focal)?.loss;
            total += coeffs.eta_cls * focal_loss(&p.obj_logits, None, focal)?.loss;
        }
    }
    Ok(total)
}

/// Options for [`fit_direct`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub steps: usize,
    pub step_size: f64,
    /// Halve the step (up to a floor) whenever it fails to reduce the loss.
    pub backtracking: bool,
    pub focal: FocalParams,
    pub assign: AssignConfig,
    /// K for the recall column of the trajectory.
    pub recall_k: usize,
    /// Stop as soon as recall reaches this value, when set.
    pub early_stop_recall: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            step_size: 5e-3,
            backtracking: true,
            focal: FocalParams::default(),
            assign: AssignConfig::default(),
            recall_k: 20,
            early_stop_recall: None,
        }
    }
}

/// One trajectory row of [`fit_direct`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitRecord {
    pub step: usize,
    pub loss: f64,
    pub recall: f64,
}

/// Output of [`fit_direct`]: the recorded trajectory and the final
/// prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub trajectory: Vec<FitRecord>,
    pub predictions: Vec<TripletPrediction>,
}

/// Free per-slot parameters: all three logit vectors plus both boxes as
/// (cx, cy, ln w, ln h), so every parameter is unconstrained.
#[derive(Debug, Clone)]
struct FreeSlot {
    sub_logits: Vector,
    obj_logits: Vector,
    rel_logits: Vector,
    sub_box: [f64; 4],
    obj_box: [f64; 4],
}

impl FreeSlot {
    fn from_prediction(p: &TripletPrediction) -> Self {
        let enc = |b: Box| [b.cx, b.cy, b.w.ln(), b.h.ln()];
        Self {
            sub_logits: p.sub_logits.clone(),
            obj_logits: p.obj_logits.clone(),
            rel_logits: p.rel_logits.clone(),
            sub_box: enc(p.sub_box),
            obj_box: enc(p.obj_box),
        }
    }

    fn to_prediction(&self) -> Result<TripletPrediction> {
        let dec = |b: &[f64; 4]| Box::new(b[0], b[1], b[2].exp(), b[3].exp());
        Ok(TripletPrediction {
            sub_box: dec(&self.sub_box)?,
            obj_box: dec(&self.obj_box)?,
            sub_logits: self.sub_logits.clone(),
            obj_logits: self.obj_logits.clone(),
            rel_logits: self.rel_logits.clone(),
        })
    }

    fn zeros_like(&self) -> Self {
        Self {
            sub_logits: vec![0.0; self.sub_logits.len()],
            obj_logits: vec![0.0; self.obj_logits.len()],
            rel_logits: vec![0.0; self.rel_logits.len()],
            sub_box: [0.0; 4],
            obj_box: [0.0; 4],
        }
    }

    /// Gradient step with proximal clamping of the box coordinates: both
    /// box losses bottom out in a kink where a coordinate meets its target,
    /// so a plain step oscillates across the kink forever at an amplitude
    /// proportional to the step size, and the hop cost throttles the line
    /// search for every other parameter. Landing exactly on the target
    /// whenever the step would cross it removes the oscillation; a pinned
    /// coordinate then reports a zero subgradient and stays put.
    fn step(&self, grad: &FreeSlot, lr: f64, targets: &SlotTargets) -> Self {
        let vec = |x: &Vector, g: &Vector| x.iter().zip(g).map(|(a, b)| a - lr * b).collect();
        let arr = |x: &[f64; 4], g: &[f64; 4], t: &Option<[f64; 4]>| {
            let mut out = [0.0; 4];
            for i in 0..4 {
                out[i] = x[i] - lr * g[i];
                if let Some(t) = t {
                    let crossed = (x[i] - t[i]) * (out[i] - t[i]) < 0.0;
                    if crossed {
                        out[i] = t[i];
                    }
                }
            }
            out
        };
        Self {
            sub_logits: vec(&self.sub_logits, &grad.sub_logits),
            obj_logits: vec(&self.obj_logits, &grad.obj_logits),
            rel_logits: vec(&self.rel_logits, &grad.rel_logits),
            sub_box: arr(&self.sub_box, &grad.sub_box, &targets.sub),
            obj_box: arr(&self.obj_box, &grad.obj_box, &targets.obj),
        }
    }
}

/// Per-slot box-loss targets in free-parameter space, for the proximal
/// clamp in [`FreeSlot::step`]. `None` for a box with no active box term.
#[derive(Debug, Clone, Copy, Default)]
struct SlotTargets {
    sub: Option<[f64; 4]>,
    obj: Option<[f64; 4]>,
}

fn free_target(b: Box) -> [f64; 4] {
    [b.cx, b.cy, b.w.ln(), b.h.ln()]
}

fn axpy(acc: &mut [f64], scale: f64, v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += scale * b;
    }
}

/// Half-width of the dead zone around each box coordinate's target inside
/// which [`box_grad_free`] reports a zero gradient. The proximal clamp in
/// [`FreeSlot::step`] pins coordinates onto their targets exactly, but the
/// ln-space round trip of the width and height can leave an ulp of residue;
/// this absorbs it.
const KINK_TOL: f64 = 1e-9;

/// Box-loss gradient w.r.t. the free parameters (cx, cy, ln w, ln h).
///
/// Both box losses are nonsmooth exactly where a coordinate meets its
/// target: L1 kinks there, and GIoU's min/max branches flip with the
/// corner ties, so the one-sided slopes on the two sides of the tie point
/// uphill in both directions once the coordinate has converged. A monotone
/// line search fed the one-sided value would then reject every step and
/// freeze all parameters. Within [`KINK_TOL`] of the target the
/// subdifferential contains zero, so this picks the zero subgradient and
/// lets the remaining coordinates keep descending.
fn box_grad_free(pred: Box, target: Box, l1_w: f64, giou_w: f64) -> [f64; 4] {
    let b = box_losses(pred, target);
    let diff = [
        pred.cx - target.cx,
        pred.cy - target.cy,
        pred.w - target.w,
        pred.h - target.h,
    ];
    let g = |i: usize| {
        if diff[i].abs() <= KINK_TOL {
            0.0
        } else {
            l1_w * b.l1_grad[i] + giou_w * b.giou_grad[i]
        }
    };
    // d/d(ln w) = w * d/dw under w = exp(ln w).
    [g(0), g(1), g(2) * pred.w, g(3) * pred.h]
}

struct Objective {
    loss: f64,
    grads: Vec<FreeSlot>,
    targets: Vec<SlotTargets>,
    recall: f64,
}

fn evaluate_objective(
    slots: &[FreeSlot],
    gt: &SceneGraph,
    triplets: &[GroundTruthTriplet],
    aux: &[AuxDetection],
    coeffs: &LossCoefficients,
    opts: &FitOptions,
    want_grads: bool,
) -> Result<Objective> {
    let preds = slots
        .iter()
        .map(FreeSlot::to_prediction)
        .collect::<Result<Vec<_>>>()?;
    let assignment = two_stage_assign(&preds, gt, aux, coeffs, &opts.focal, &opts.assign)?;
    let loss = loss_lf(&preds, triplets, &assignment.stage1, coeffs, &opts.focal)?
        + loss_lb(&preds, &assignment, coeffs, &opts.focal)?;

    let ranked: Vec<crate::metrics::RankedTriplet> =
        preds.iter().map(crate::metrics::rank_prediction).collect();
    let recall = crate::metrics::recall_at_k(
        std::slice::from_ref(&ranked),
        std::slice::from_ref(&triplets.to_vec()),
        opts.recall_k,
        false,
        crate::metrics::Averaging::Micro,
    )?;

    let mut grads: Vec<FreeSlot> = Vec::new();
    let mut targets: Vec<SlotTargets> = Vec::new();
    if want_grads {
        grads = slots.iter().map(FreeSlot::zeros_like).collect();
        targets = vec![SlotTargets::default(); slots.len()];
        for &(slot, t) in &assignment.stage1 {
            let p = &preds[slot];
            let g = &triplets[t];
            let rel = focal_loss(&p.rel_logits, Some(g.predicate), &opts.focal)?;
            axpy(&mut grads[slot].rel_logits, coeffs.lambda_cls_rel, &rel.grad);
            let sub = focal_loss(&p.sub_logits, Some(g.sub_label), &opts.focal)?;
            axpy(&mut grads[slot].sub_logits, coeffs.lambda_cls_obj, &sub.grad);
            let obj = focal_loss(&p.obj_logits, Some(g.obj_label), &opts.focal)?;
            axpy(&mut grads[slot].obj_logits, coeffs.lambda_cls_obj, &obj.grad);
            let gs = box_grad_free(p.sub_box, g.sub_box, coeffs.lambda_l1, coeffs.lambda_giou);
            let go = box_grad_free(p.obj_box, g.obj_box, coeffs.lambda_l1, coeffs.lambda_giou);
            for i in 0..4 {
                grads[slot].sub_box[i] += gs[i];
                grads[slot].obj_box[i] += go[i];
            }
            targets[slot].sub = Some(free_target(g.sub_box));
            targets[slot].obj = Some(free_target(g.obj_box));
        }
        for &(s, u) in &assignment.stage2 {
            let p = &preds[s];
            let pair = &assignment.pseudo_set[u];
            let rel = focal_loss(&p.rel_logits, None, &opts.focal)?;
            axpy(&mut grads[s].rel_logits, coeffs.lambda_cls_rel, &rel.grad);
            let sub = focal_loss(&p.sub_logits, pair.sub.label, &opts.focal)?;
            axpy(&mut grads[s].sub_logits, coeffs.eta_cls, &sub.grad);
            let obj = focal_loss(&p.obj_logits, pair.obj.label, &opts.focal)?;
            axpy(&mut grads[s].obj_logits, coeffs.eta_cls, &obj.grad);
            if pair.sub.hit {
                let g = box_grad_free(p.sub_box, pair.sub.bbox, coeffs.eta_l1, coeffs.eta_giou);
                for i in 0..4 {
                    grads[s].sub_box[i] += g[i];
                }
                targets[s].sub = Some(free_target(pair.sub.bbox));
            }
            if pair.obj.hit {
                let g = box_grad_free(p.obj_box, pair.obj.bbox, coeffs.eta_l1, coeffs.eta_giou);
                for i in 0..4 {
                    grads[s].obj_box[i] += g[i];
                }
                targets[s].obj = Some(free_target(pair.obj.bbox));
            }
        }
        for &s in &assignment.background {
            let p = &preds[s];
            let rel = focal_loss(&p.rel_logits, None, &opts.focal)?;
            axpy(&mut grads[s].rel_logits, coeffs.lambda_cls_rel, &rel.grad);
            if assignment.mode == AssignMode::FullBackground {
                let sub = focal_loss(&p.sub_logits, None, &opts.focal)?;
                axpy(&mut grads[s].sub_logits, coeffs.eta_cls, &sub.grad);
                let obj = focal_loss(&p.obj_logits, None, &opts.focal)?;
                axpy(&mut grads[s].obj_logits, coeffs.eta_cls, &obj.grad);
            }
        }
    }
    Ok(Objective {
        loss,
        grads,
        targets,
        recall,
    })
}

/// Gradient descent on the combined set loss over free prediction
/// parameters, re-running the two-stage assignment every step. Records
/// (step, loss, recall@K) per iteration, starting with the initial state
/// at step 0. Deterministic; a non-finite loss aborts with the step index.
pub fn fit_direct(
    init: &[TripletPrediction],
    gt: &SceneGraph,
    aux: &[AuxDetection],
    coeffs: &LossCoefficients,
    opts: &FitOptions,
) -> Result<FitResult> {
    if opts.steps == 0 || !opts.step_size.is_finite() || opts.step_size <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "{} steps at step size {}",
            opts.steps, opts.step_size
        )));
    }
    if opts.recall_k == 0 {
        return Err(Error::InvalidConfig("recall K must be positive".into()));
    }
    let triplets = gt_triplets(gt);
    let mut slots: Vec<FreeSlot> = init.iter().map(FreeSlot::from_prediction).collect();
    let mut current = evaluate_objective(&slots, gt, &triplets, aux, coeffs, opts, true)?;
    let mut trajectory = vec![FitRecord {
        step: 0,
        loss: current.loss,
        recall: current.recall,
    }];
    if !current.loss.is_finite() {
        return Err(Error::Diverged { step: 0 });
    }

    const MIN_STEP: f64 = 1e-12;
    for step in 1..=opts.steps {
        if let Some(target) = opts.early_stop_recall {
            if current.recall >= target {
                break;
            }
        }
        let mut lr = opts.step_size;
        let mut next_slots: Vec<FreeSlot>;
        let mut next: Objective;
        loop {
            next_slots = slots
                .iter()
                .zip(&current.grads)
                .zip(&current.targets)
                .map(|((s, g), t)| s.step(g, lr, t))
                .collect();
            next = evaluate_objective(&next_slots, gt, &triplets, aux, coeffs, opts, true)?;
            if !next.loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            if !opts.backtracking || next.loss <= current.loss || lr <= MIN_STEP {
                break;
            }
            lr *= 0.5;
        }
        slots = next_slots;
        current = next;
        trajectory.push(FitRecord {
            step,
            loss: current.loss,
            recall: current.recall,
        });
    }

    let predictions = slots
        .iter()
        .map(FreeSlot::to_prediction)
        .collect::<Result<Vec<_>>>()?;
    Ok(FitResult {
        trajectory,
        predictions,
    })
}
