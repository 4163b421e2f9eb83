//! Forward-pass arithmetic of one triplet detection head, composable into a
//! cascade: pair fusion, self-attention over subject/object vectors, dynamic
//! convolution on pooled box features, entity-to-relation fusion, FFN
//! classification/regression branches, and relation-classification fusion.
//!
//! Everything here is inference-only arithmetic over explicit weight
//! structs; there is no training machinery. Weights are read-only after
//! construction, so forward passes over distinct query batches can run
//! concurrently.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{union_box, Box};
use crate::numerics::{mh_attention_split, relu, AttentionWeights, LayerNorm, Matrix, Vector};
use crate::scene::TripletPrediction;

/// Side length of every RoI-pooled grid; pooled maps are `C x 7 x 7`.
pub const POOLED_SIZE: usize = 7;

/// Largest magnitude a predicted log-size delta may take; keeps regressed
/// widths and heights finite under arbitrary weights.
const MAX_LOG_SIZE_DELTA: f64 = 4.0;

/// Dimensions shared by every head in a cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Object content-vector dimension; must be divisible by 8 (sinusoidal
    /// box encoding) and by `attn_heads`.
    pub d_obj: usize,
    /// Relation content-vector dimension.
    pub d_rel: usize,
    /// Feature-map (and pooled-feature) channel count.
    pub channels: usize,
    /// Hidden channel count inside each dynamic convolution.
    pub dyn_hidden: usize,
    pub attn_heads: usize,
    /// Number of heads in the cascade.
    pub depth: usize,
    pub num_obj_classes: usize,
    pub num_rel_classes: usize,
    /// Recompute positional encodings from each head's refined boxes
    /// (`true`, the default) or keep the encodings of the initial boxes.
    pub pe_per_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_obj: 64,
            d_rel: 32,
            channels: 8,
            dyn_hidden: 8,
            attn_heads: 4,
            depth: 6,
            num_obj_classes: 150,
            num_rel_classes: 50,
            pe_per_head: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_obj", self.d_obj),
            ("d_rel", self.d_rel),
            ("channels", self.channels),
            ("dyn_hidden", self.dyn_hidden),
            ("attn_heads", self.attn_heads),
            ("depth", self.depth),
            ("num_obj_classes", self.num_obj_classes),
            ("num_rel_classes", self.num_rel_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.d_obj % 8 != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_obj = {} must be divisible by 8 for box encodings",
                self.d_obj
            )));
        }
        if self.d_obj % self.attn_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_obj = {} not divisible by {} attention heads",
                self.d_obj, self.attn_heads
            )));
        }
        Ok(())
    }

    fn positions(&self) -> usize {
        POOLED_SIZE * POOLED_SIZE
    }
}

/// One slot of the detector's working state: two boxes plus the content
/// vectors they carry between heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletQuery {
    pub sub_box: Box,
    pub obj_box: Box,
    pub sub_content: Vector,
    pub obj_content: Vector,
    pub rel_content: Vector,
}

impl TripletQuery {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.sub_content.len() != cfg.d_obj || self.obj_content.len() != cfg.d_obj {
            return Err(Error::ShapeMismatch(format!(
                "object content dims {}/{} vs d_obj {}",
                self.sub_content.len(),
                self.obj_content.len(),
                cfg.d_obj
            )));
        }
        if self.rel_content.len() != cfg.d_rel {
            return Err(Error::ShapeMismatch(format!(
                "relation content dim {} vs d_rel {}",
                self.rel_content.len(),
                cfg.d_rel
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.sub_content) || !finite(&self.obj_content) || !finite(&self.rel_content) {
            return Err(Error::NonFinite("query content vector".into()));
        }
        Ok(())
    }
}

/// A dense `C x H x W` feature map over the unit square, with bilinear RoI
/// pooling to a fixed 7x7 grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidConfig("feature map with a zero dimension".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "feature map data length {} vs {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map value".into()));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Bilinear sample at continuous pixel coordinates, clamped to the map.
    fn sample(&self, c: usize, fy: f64, fx: f64) -> f64 {
        let clamp = |v: f64, hi: usize| v.clamp(0.0, (hi - 1) as f64);
        let fy = clamp(fy, self.height);
        let fx = clamp(fx, self.width);
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let wy = fy - y0 as f64;
        let wx = fx - x0 as f64;
        (1.0 - wy) * (1.0 - wx) * self.get(c, y0, x0)
            + (1.0 - wy) * wx * self.get(c, y0, x1)
            + wy * (1.0 - wx) * self.get(c, y1, x0)
            + wy * wx * self.get(c, y1, x1)
    }

    /// Pools the region under `b` (normalized coordinates) to a
    /// `C x 7 x 7` grid by bilinear sampling at cell centers. Boxes
    /// reaching outside the unit square are clamped at the map border.
    pub fn roi_pool(&self, b: Box) -> Result<PooledFeatures> {
        let corners = b.to_corners();
        let side = POOLED_SIZE;
        let mut data = Vec::with_capacity(self.channels * side * side);
        for c in 0..self.channels {
            for gy in 0..side {
                let ny = corners.y1 + (gy as f64 + 0.5) * (corners.y2 - corners.y1) / side as f64;
                let fy = ny * self.height as f64 - 0.5;
                for gx in 0..side {
                    let nx =
                        corners.x1 + (gx as f64 + 0.5) * (corners.x2 - corners.x1) / side as f64;
                    let fx = nx * self.width as f64 - 0.5;
                    data.push(self.sample(c, fy, fx));
                }
            }
        }
        PooledFeatures::new(self.channels, side * side, data)
    }
}

/// A pooled feature patch: `channels x positions`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeatures {
    channels: usize,
    positions: usize,
    data: Vec<f64>,
}

impl PooledFeatures {
    pub fn new(channels: usize, positions: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || positions == 0 {
            return Err(Error::InvalidConfig("empty pooled features".into()));
        }
        if data.len() != channels * positions {
            return Err(Error::ShapeMismatch(format!(
                "pooled data length {} vs {channels}x{positions}",
                data.len()
            )));
        }
        Ok(Self { channels, positions, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn get(&self, c: usize, p: usize) -> f64 {
        self.data[c * self.positions + p]
    }

    /// Concatenates two patches along the position axis (channel counts
    /// must agree); used to present subject and object regions to the
    /// first relation dynamic convolution side by side.
    pub fn concat(a: &PooledFeatures, b: &PooledFeatures) -> Result<PooledFeatures> {
        if a.channels != b.channels {
            return Err(Error::ShapeMismatch(format!(
                "concat of {} vs {} channels",
                a.channels, b.channels
            )));
        }
        let positions = a.positions + b.positions;
        let mut data = Vec::with_capacity(a.channels * positions);
        for c in 0..a.channels {
            data.extend_from_slice(&a.data[c * a.positions..(c + 1) * a.positions]);
            data.extend_from_slice(&b.data[c * b.positions..(c + 1) * b.positions]);
        }
        PooledFeatures::new(a.channels, positions, data)
    }
}

/// Sinusoidal encoding of a box's (cx, cy, w, h), `dim / 4` values per
/// coordinate as interleaved sin/cos pairs with geometric wavelengths.
/// `dim` must be divisible by 8.
pub fn sinusoidal_pe(b: Box, dim: usize) -> Result<Vector> {
    if dim == 0 || dim % 8 != 0 {
        return Err(Error::InvalidConfig(format!(
            "box encoding dim {dim} must be a positive multiple of 8"
        )));
    }
    const TEMPERATURE: f64 = 10_000.0;
    let per_coord = dim / 4;
    let pairs = per_coord / 2;
    let mut out = Vec::with_capacity(dim);
    for u in [b.cx, b.cy, b.w, b.h] {
        for i in 0..pairs {
            let denom = TEMPERATURE.powf(2.0 * i as f64 / per_coord as f64);
            let angle = 2.0 * PI * u / denom;
            out.push(angle.sin());
            out.push(angle.cos());
        }
    }
    Ok(out)
}

fn add(a: &[f64], b: &[f64]) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "vector add of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

fn check_matrix(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::ShapeMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

fn check_ln(name: &str, ln: &LayerNorm, dim: usize) -> Result<()> {
    if ln.dim() != dim || ln.bias.len() != dim {
        return Err(Error::ShapeMismatch(format!(
            "{name} layer norm has dim {}, expected {dim}",
            ln.dim()
        )));
    }
    Ok(())
}

/// Weights of the subject/object pair fusion: a bottleneck vector computed
/// from both content vectors feeds an additive update into each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFusionWeights {
    pub w_s0: Matrix,
    pub w_o0: Matrix,
    pub w_s1: Matrix,
    pub w_o1: Matrix,
    pub ln: LayerNorm,
}

impl PairFusionWeights {
    pub fn validate(&self, d: usize) -> Result<()> {
        check_matrix("pair w_s0", &self.w_s0, d, d)?;
        check_matrix("pair w_o0", &self.w_o0, d, d)?;
        check_matrix("pair w_s1", &self.w_s1, d, d)?;
        check_matrix("pair w_o1", &self.w_o1, d, d)?;
        check_ln("pair", &self.ln, d)
    }
}

/// Fuses a subject/object content-vector pair:
/// shared `x_p = ReLU(LN(W_s0 x_s + W_o0 x_o))`, then residual updates
/// `x_s' = x_s + W_s1 x_p + p_s` and `x_o' = x_o + W_o1 x_p + p_o`.
pub fn pair_fusion(
    x_s: &[f64],
    x_o: &[f64],
    p_s: &[f64],
    p_o: &[f64],
    w: &PairFusionWeights,
) -> Result<(Vector, Vector)> {
    let x_p = relu(&w.ln.apply(&add(&w.w_s0.matvec(x_s)?, &w.w_o0.matvec(x_o)?)?)?);
    let out_s = add(&add(x_s, &w.w_s1.matvec(&x_p)?)?, p_s)?;
    let out_o = add(&add(x_o, &w.w_o1.matvec(&x_p)?)?, p_o)?;
    Ok((out_s, out_o))
}

/// Parameter generators and projections for one dynamic convolution.
///
/// `w1_gen`/`w2_gen` map the instance vector to the two 1x1 filter banks
/// (`hidden x channels` and `channels x hidden`); `w_v` projects the
/// flattened convolved map back to the instance dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynConvWeights {
    pub w1_gen: Matrix,
    pub w2_gen: Matrix,
    pub w_v: Matrix,
    /// Per-position norm over the hidden channels after the first conv.
    pub ln1: LayerNorm,
    /// Per-position norm over the original channels after the second conv.
    pub ln2: LayerNorm,
    /// Norm over the projected vector, before its ReLU.
    pub ln3: LayerNorm,
    /// Norm over the residual sum.
    pub ln4: LayerNorm,
}

impl DynConvWeights {
    pub fn hidden(&self) -> usize {
        self.ln1.dim()
    }

    pub fn validate(&self, d: usize, channels: usize, positions: usize) -> Result<()> {
        let k = self.hidden();
        if k == 0 {
            return Err(Error::InvalidConfig("dynamic conv with zero hidden channels".into()));
        }
        check_matrix("dyn w1_gen", &self.w1_gen, k * channels, d)?;
        check_matrix("dyn w2_gen", &self.w2_gen, channels * k, d)?;
        check_matrix("dyn w_v", &self.w_v, d, channels * positions)?;
        check_ln("dyn ln1", &self.ln1, k)?;
        check_ln("dyn ln2", &self.ln2, channels)?;
        check_ln("dyn ln3", &self.ln3, d)?;
        check_ln("dyn ln4", &self.ln4, d)
    }
}

/// Convolves pooled features with two 1x1 filter banks generated from `x`
/// itself, then folds the result back into `x`:
/// `y = LN(x + ReLU(LN(W_v flatten(V_2))))` where
/// `V_1 = ReLU(LN(F_1 V_0))`, `V_2 = ReLU(LN(F_2 V_1))`,
/// `F_1 = reshape(w1_gen x)`, `F_2 = reshape(w2_gen x)`.
pub fn dynamic_conv(x: &[f64], v0: &PooledFeatures, w: &DynConvWeights) -> Result<Vector> {
    let d = x.len();
    let c = v0.channels();
    let p = v0.positions();
    let k = w.hidden();
    w.validate(d, c, p)?;

    // First generated 1x1 conv: channels -> hidden.
    let f1 = w.w1_gen.matvec(x)?; // k*c, row-major [k][c]
    let mut v1 = vec![0.0; k * p];
    for ki in 0..k {
        for ci in 0..c {
            let f = f1[ki * c + ci];
            for pi in 0..p {
                v1[ki * p + pi] += f * v0.get(ci, pi);
            }
        }
    }
    per_position_norm_relu(&mut v1, k, p, &w.ln1)?;

    // Second generated 1x1 conv: hidden -> channels.
    let f2 = w.w2_gen.matvec(x)?; // c*k, row-major [c][k]
    let mut v2 = vec![0.0; c * p];
    for ci in 0..c {
        for ki in 0..k {
            let f = f2[ci * k + ki];
            for pi in 0..p {
                v2[ci * p + pi] += f * v1[ki * p + pi];
            }
        }
    }
    per_position_norm_relu(&mut v2, c, p, &w.ln2)?;

    let projected = relu(&w.ln3.apply(&w.w_v.matvec(&v2)?)?);
    w.ln4.apply(&add(x, &projected)?)
}

/// Normalizes each position's channel column in place, then applies ReLU.
fn per_position_norm_relu(
    map: &mut [f64],
    channels: usize,
    positions: usize,
    ln: &LayerNorm,
) -> Result<()> {
    let mut column = vec![0.0; channels];
    for pi in 0..positions {
        for ci in 0..channels {
            column[ci] = map[ci * positions + pi];
        }
        let normed = ln.apply(&column)?;
        for ci in 0..channels {
            map[ci * positions + pi] = normed[ci].max(0.0);
        }
    }
    Ok(())
}

/// Weights of the entity-to-relation fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2rWeights {
    pub w_s_r: Matrix,
    pub w_o_r: Matrix,
    pub ln_s: LayerNorm,
    pub ln_o: LayerNorm,
    pub w_x: Matrix,
    pub w_y: Matrix,
    pub w_s_p: Matrix,
    pub w_o_p: Matrix,
    pub w_p_r: Matrix,
    pub ln_out: LayerNorm,
}

impl E2rWeights {
    pub fn validate(&self, d_obj: usize, d_rel: usize) -> Result<()> {
        check_matrix("e2r w_s_r", &self.w_s_r, d_rel, d_obj)?;
        check_matrix("e2r w_o_r", &self.w_o_r, d_rel, d_obj)?;
        check_ln("e2r ln_s", &self.ln_s, d_rel)?;
        check_ln("e2r ln_o", &self.ln_o, d_rel)?;
        check_matrix("e2r w_x", &self.w_x, d_rel, d_rel)?;
        check_matrix("e2r w_y", &self.w_y, d_rel, d_rel)?;
        check_matrix("e2r w_s_p", &self.w_s_p, d_rel, d_obj)?;
        check_matrix("e2r w_o_p", &self.w_o_p, d_rel, d_obj)?;
        check_matrix("e2r w_p_r", &self.w_p_r, d_rel, d_rel)?;
        check_ln("e2r ln_out", &self.ln_out, d_rel)
    }
}

/// Folds refined subject/object features (plus their positional encodings)
/// into the relation vector:
/// `h = W_x ReLU(LN(W_s_r f_s)) + W_y ReLU(LN(W_o_r f_o))`,
/// `out = LN(f_r + h + W_p_r ReLU(W_s_p p_s + W_o_p p_o))`.
pub fn e2r_fusion(
    f_s: &[f64],
    f_o: &[f64],
    f_r: &[f64],
    p_s: &[f64],
    p_o: &[f64],
    w: &E2rWeights,
) -> Result<Vector> {
    let from_s = w.w_x.matvec(&relu(&w.ln_s.apply(&w.w_s_r.matvec(f_s)?)?))?;
    let from_o = w.w_y.matvec(&relu(&w.ln_o.apply(&w.w_o_r.matvec(f_o)?)?))?;
    let pos = w
        .w_p_r
        .matvec(&relu(&add(&w.w_s_p.matvec(p_s)?, &w.w_o_p.matvec(p_o)?)?))?;
    w.ln_out
        .apply(&add(&add(&add(f_r, &from_s)?, &from_o)?, &pos)?)
}

/// Weights of the relation-classification fusion branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelClsFusionWeights {
    pub w_s_r1: Matrix,
    pub w_o_r1: Matrix,
    pub ln_s: LayerNorm,
    pub ln_o: LayerNorm,
    pub w_cls: Matrix,
}

impl RelClsFusionWeights {
    pub fn validate(&self, d_obj: usize, num_rel_classes: usize) -> Result<()> {
        let d_g = self.ln_s.dim();
        check_matrix("relfuse w_s_r1", &self.w_s_r1, d_g, d_obj)?;
        check_matrix("relfuse w_o_r1", &self.w_o_r1, d_g, d_obj)?;
        check_ln("relfuse ln_s", &self.ln_s, d_g)?;
        check_ln("relfuse ln_o", &self.ln_o, d_g)?;
        check_matrix("relfuse w_cls", &self.w_cls, num_rel_classes, d_g)
    }
}

/// Refines relation logits with an object-conditioned branch:
/// `g_s = LN(W_s_r1 f_s)`, `g_o = LN(W_o_r1 f_o)`,
/// `g_so = ReLU(g_s + g_o) − (g_s − g_o)⊙(g_s − g_o)`,
/// `out = f_r + W_cls ReLU(g_so)`.
pub fn relation_logits(
    f_s: &[f64],
    f_o: &[f64],
    f_r: &[f64],
    w: &RelClsFusionWeights,
) -> Result<Vector> {
    let g_s = w.ln_s.apply(&w.w_s_r1.matvec(f_s)?)?;
    let g_o = w.ln_o.apply(&w.w_o_r1.matvec(f_o)?)?;
    let g_so: Vector = g_s
        .iter()
        .zip(&g_o)
        .map(|(&s, &o)| (s + o).max(0.0) - (s - o) * (s - o))
        .collect();
    add(f_r, &w.w_cls.matvec(&relu(&g_so))?)
}

/// A residual feed-forward block: `LN(x + W2 ReLU(W1 x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnWeights {
    pub w1: Matrix,
    pub w2: Matrix,
    pub ln: LayerNorm,
}

impl FfnWeights {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.w1.cols() != d || self.w2.rows() != d || self.w1.rows() != self.w2.cols() {
            return Err(Error::ShapeMismatch(format!(
                "ffn shapes {}x{} and {}x{} inconsistent with dim {d}",
                self.w1.rows(),
                self.w1.cols(),
                self.w2.rows(),
                self.w2.cols()
            )));
        }
        check_ln("ffn", &self.ln, d)
    }
}

pub fn ffn(x: &[f64], w: &FfnWeights) -> Result<Vector> {
    w.ln.apply(&add(x, &w.w2.matvec(&relu(&w.w1.matvec(x)?))?)?)
}

/// Every learnable parameter of one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub pair: PairFusionWeights,
    pub attn: AttentionWeights,
    pub attn_ln: LayerNorm,
    /// Dynamic convolution shared by the subject and object branches.
    pub obj_dyn: DynConvWeights,
    pub obj_ffn: FfnWeights,
    pub obj_cls: Matrix,
    pub obj_reg: Matrix,
    /// First relation conv, over the two pooled boxes side by side.
    pub rel_dyn1: DynConvWeights,
    /// Second relation conv, over the pooled union box.
    pub rel_dyn2: DynConvWeights,
    pub e2r: E2rWeights,
    pub rel_ffn: FfnWeights,
    pub rel_cls: Matrix,
    pub relfuse: RelClsFusionWeights,
}

impl HeadWeights {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        cfg.validate()?;
        let p = cfg.positions();
        self.pair.validate(cfg.d_obj)?;
        self.attn.validate(cfg.d_obj)?;
        check_ln("attention output", &self.attn_ln, cfg.d_obj)?;
        self.obj_dyn.validate(cfg.d_obj, cfg.channels, p)?;
        self.obj_ffn.validate(cfg.d_obj)?;
        check_matrix("obj_cls", &self.obj_cls, cfg.num_obj_classes, cfg.d_obj)?;
        check_matrix("obj_reg", &self.obj_reg, 4, cfg.d_obj)?;
        self.rel_dyn1.validate(cfg.d_rel, cfg.channels, 2 * p)?;
        self.rel_dyn2.validate(cfg.d_rel, cfg.channels, p)?;
        self.e2r.validate(cfg.d_obj, cfg.d_rel)?;
        self.rel_ffn.validate(cfg.d_rel)?;
        check_matrix("rel_cls", &self.rel_cls, cfg.num_rel_classes, cfg.d_rel)?;
        self.relfuse.validate(cfg.d_obj, cfg.num_rel_classes)
    }

    /// All-zero matrices with identity layer norms: the pure residual
    /// skeleton, useful as an ablation baseline and in identity tests.
    pub fn zeroed(cfg: &ModelConfig) -> Self {
        let d = cfg.d_obj;
        let r = cfg.d_rel;
        let c = cfg.channels;
        let k = cfg.dyn_hidden;
        let p = cfg.positions();
        let dyn_weights = |dim: usize, positions: usize| DynConvWeights {
            w1_gen: Matrix::zeros(k * c, dim),
            w2_gen: Matrix::zeros(c * k, dim),
            w_v: Matrix::zeros(dim, c * positions),
            ln1: LayerNorm::identity(k),
            ln2: LayerNorm::identity(c),
            ln3: LayerNorm::identity(dim),
            ln4: LayerNorm::identity(dim),
        };
        let ffn_weights = |dim: usize| FfnWeights {
            w1: Matrix::zeros(2 * dim, dim),
            w2: Matrix::zeros(dim, 2 * dim),
            ln: LayerNorm::identity(dim),
        };
        Self {
            pair: PairFusionWeights {
                w_s0: Matrix::zeros(d, d),
                w_o0: Matrix::zeros(d, d),
                w_s1: Matrix::zeros(d, d),
                w_o1: Matrix::zeros(d, d),
                ln: LayerNorm::identity(d),
            },
            attn: AttentionWeights {
                w_q: Matrix::zeros(d, d),
                w_k: Matrix::zeros(d, d),
                w_v: Matrix::zeros(d, d),
                w_o: Matrix::zeros(d, d),
            },
            attn_ln: LayerNorm::identity(d),
            obj_dyn: dyn_weights(d, p),
            obj_ffn: ffn_weights(d),
            obj_cls: Matrix::zeros(cfg.num_obj_classes, d),
            obj_reg: Matrix::zeros(4, d),
            rel_dyn1: dyn_weights(r, 2 * p),
            rel_dyn2: dyn_weights(r, p),
            e2r: E2rWeights {
                w_s_r: Matrix::zeros(r, d),
                w_o_r: Matrix::zeros(r, d),
                ln_s: LayerNorm::identity(r),
                ln_o: LayerNorm::identity(r),
                w_x: Matrix::zeros(r, r),
                w_y: Matrix::zeros(r, r),
                w_s_p: Matrix::zeros(r, d),
                w_o_p: Matrix::zeros(r, d),
                w_p_r: Matrix::zeros(r, r),
                ln_out: LayerNorm::identity(r),
            },
            rel_ffn: ffn_weights(r),
            rel_cls: Matrix::zeros(cfg.num_rel_classes, r),
            relfuse: RelClsFusionWeights {
                w_s_r1: Matrix::zeros(d, d),
                w_o_r1: Matrix::zeros(d, d),
                ln_s: LayerNorm::identity(d),
                ln_o: LayerNorm::identity(d),
                w_cls: Matrix::zeros(cfg.num_rel_classes, d),
            },
        }
    }

    /// Seeded random weights, scaled by fan-in so cascade activations stay
    /// tame; layer norms start at identity.
    pub fn seeded(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut w = Self::zeroed(cfg);
        let mut fill = |m: &mut Matrix| {
            let scale = (1.0 / m.cols() as f64).sqrt();
            let data: Vec<f64> = (0..m.rows() * m.cols())
                .map(|_| rng.gen_range(-scale..scale))
                .collect();
            *m = Matrix::new(m.rows(), m.cols(), data).expect("shape preserved");
        };
        fill(&mut w.pair.w_s0);
        fill(&mut w.pair.w_o0);
        fill(&mut w.pair.w_s1);
        fill(&mut w.pair.w_o1);
        fill(&mut w.attn.w_q);
        fill(&mut w.attn.w_k);
        fill(&mut w.attn.w_v);
        fill(&mut w.attn.w_o);
        for dc in [&mut w.obj_dyn, &mut w.rel_dyn1, &mut w.rel_dyn2] {
            fill(&mut dc.w1_gen);
            fill(&mut dc.w2_gen);
            fill(&mut dc.w_v);
        }
        fill(&mut w.obj_ffn.w1);
        fill(&mut w.obj_ffn.w2);
        fill(&mut w.obj_cls);
        fill(&mut w.obj_reg);
        fill(&mut w.e2r.w_s_r);
        fill(&mut w.e2r.w_o_r);
        fill(&mut w.e2r.w_x);
        fill(&mut w.e2r.w_y);
        fill(&mut w.e2r.w_s_p);
        fill(&mut w.e2r.w_o_p);
        fill(&mut w.e2r.w_p_r);
        fill(&mut w.rel_ffn.w1);
        fill(&mut w.rel_ffn.w2);
        fill(&mut w.rel_cls);
        fill(&mut w.relfuse.w_s_r1);
        fill(&mut w.relfuse.w_o_r1);
        fill(&mut w.relfuse.w_cls);
        w
    }
}

fn apply_box_delta(b: Box, delta: &[f64]) -> Result<Box> {
    if delta.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "box delta of length {}",
            delta.len()
        )));
    }
    let dw = delta[2].clamp(-MAX_LOG_SIZE_DELTA, MAX_LOG_SIZE_DELTA);
    let dh = delta[3].clamp(-MAX_LOG_SIZE_DELTA, MAX_LOG_SIZE_DELTA);
    Box::new(b.cx + delta[0], b.cy + delta[1], b.w * dw.exp(), b.h * dh.exp())
}

/// Runs one head over a query set. Returns the refined queries (input to
/// the next head) and this head's detections.
///
/// `pe_boxes`, when given, supplies the boxes the positional encodings are
/// computed from (one subject/object pair per query) instead of the boxes
/// carried by the queries themselves — the cascade uses this to pin
/// encodings to the initial boxes when so configured.
pub fn head_forward(
    queries: &[TripletQuery],
    fmap: &FeatureMap,
    w: &HeadWeights,
    cfg: &ModelConfig,
    pe_boxes: Option<&[(Box, Box)]>,
) -> Result<(Vec<TripletQuery>, Vec<TripletPrediction>)> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("query set".into()));
    }
    w.validate(cfg)?;
    for q in queries {
        q.validate(cfg)?;
    }
    if fmap.channels() != cfg.channels {
        return Err(Error::ShapeMismatch(format!(
            "feature map has {} channels, model expects {}",
            fmap.channels(),
            cfg.channels
        )));
    }
    if let Some(pb) = pe_boxes {
        if pb.len() != queries.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} encoding boxes for {} queries",
                pb.len(),
                queries.len()
            )));
        }
    }
    let n = queries.len();

    let pes: Vec<(Vector, Vector)> = (0..n)
        .map(|i| {
            let (sb, ob) = match pe_boxes {
                Some(pb) => pb[i],
                None => (queries[i].sub_box, queries[i].obj_box),
            };
            Ok((sinusoidal_pe(sb, cfg.d_obj)?, sinusoidal_pe(ob, cfg.d_obj)?))
        })
        .collect::<Result<_>>()?;

    // Pair fusion, then self-attention over all 2N object tokens. The
    // fused vectors steer attention (queries/keys); values and residuals
    // come from the plain content vectors.
    let mut qk_src = Vec::with_capacity(2 * n);
    let mut v_src = Vec::with_capacity(2 * n);
    for i in 0..n {
        let (fs, fo) = pair_fusion(
            &queries[i].sub_content,
            &queries[i].obj_content,
            &pes[i].0,
            &pes[i].1,
            &w.pair,
        )?;
        qk_src.push(fs);
        v_src.push(queries[i].sub_content.clone());
        qk_src.push(fo);
        v_src.push(queries[i].obj_content.clone());
    }
    let attn_out = mh_attention_split(&qk_src, &v_src, cfg.attn_heads, &w.attn)?;

    let mut refined = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    for i in 0..n {
        let q = &queries[i];
        let s_tok = w.attn_ln.apply(&add(&q.sub_content, &attn_out[2 * i])?)?;
        let o_tok = w.attn_ln.apply(&add(&q.obj_content, &attn_out[2 * i + 1])?)?;

        // Object branch: instance-conditioned convolution over the pooled
        // box region, then FFN, then linear class/box projections.
        let pooled_s = fmap.roi_pool(q.sub_box)?;
        let pooled_o = fmap.roi_pool(q.obj_box)?;
        let f_s = ffn(&dynamic_conv(&s_tok, &pooled_s, &w.obj_dyn)?, &w.obj_ffn)?;
        let f_o = ffn(&dynamic_conv(&o_tok, &pooled_o, &w.obj_dyn)?, &w.obj_ffn)?;
        let sub_logits = w.obj_cls.matvec(&f_s)?;
        let obj_logits = w.obj_cls.matvec(&f_o)?;
        let sub_box = apply_box_delta(q.sub_box, &w.obj_reg.matvec(&f_s)?)?;
        let obj_box = apply_box_delta(q.obj_box, &w.obj_reg.matvec(&f_o)?)?;

        // Relation branch: convolution over both boxes side by side, then
        // over the union region, entity fusion, FFN, and fused logits.
        let side_by_side = PooledFeatures::concat(&pooled_s, &pooled_o)?;
        let r1 = dynamic_conv(&q.rel_content, &side_by_side, &w.rel_dyn1)?;
        let pooled_union = fmap.roi_pool(union_box(q.sub_box, q.obj_box))?;
        let r2 = dynamic_conv(&r1, &pooled_union, &w.rel_dyn2)?;
        let r3 = e2r_fusion(&f_s, &f_o, &r2, &pes[i].0, &pes[i].1, &w.e2r)?;
        let r4 = ffn(&r3, &w.rel_ffn)?;
        let master = w.rel_cls.matvec(&r4)?;
        let rel_logits = relation_logits(&f_s, &f_o, &master, &w.relfuse)?;

        refined.push(TripletQuery {
            sub_box,
            obj_box,
            sub_content: f_s,
            obj_content: f_o,
            rel_content: r4,
        });
        outputs.push(TripletPrediction {
            sub_box,
            obj_box,
            sub_logits,
            obj_logits,
            rel_logits,
        });
    }
    Ok((refined, outputs))
}

/// Outputs of a full cascade pass: one detection set per head (the last is
/// the final prediction; earlier ones serve auxiliary supervision) and the
/// final refined queries.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutput {
    pub head_outputs: Vec<Vec<TripletPrediction>>,
    pub queries: Vec<TripletQuery>,
}

impl CascadeOutput {
    pub fn final_predictions(&self) -> &[TripletPrediction] {
        self.head_outputs.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// A cascade of heads sharing one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletDetector {
    pub cfg: ModelConfig,
    pub heads: Vec<HeadWeights>,
}

impl TripletDetector {
    /// Deterministic random initialization of `cfg.depth` heads.
    pub fn seeded(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = (0..cfg.depth)
            .map(|_| HeadWeights::seeded(&cfg, &mut rng))
            .collect();
        Ok(Self { cfg, heads })
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.heads.len() != self.cfg.depth {
            return Err(Error::InvalidConfig(format!(
                "{} heads for configured depth {}",
                self.heads.len(),
                self.cfg.depth
            )));
        }
        for h in &self.heads {
            h.validate(&self.cfg)?;
        }
        Ok(())
    }

    /// Runs every head in order, refining the query set between heads.
    pub fn forward(&self, queries: &[TripletQuery], fmap: &FeatureMap) -> Result<CascadeOutput> {
        self.validate()?;
        let initial: Vec<(Box, Box)> = queries.iter().map(|q| (q.sub_box, q.obj_box)).collect();
        let mut current = queries.to_vec();
        let mut head_outputs = Vec::with_capacity(self.heads.len());
        for w in &self.heads {
            let pe_boxes = if self.cfg.pe_per_head {
                None
            } else {
                Some(initial.as_slice())
            };
            let (next, outputs) = head_forward(&current, fmap, w, &self.cfg, pe_boxes)?;
            head_outputs.push(outputs);
            current = next;
        }
        Ok(CascadeOutput {
            head_outputs,
            queries: current,
        })
    }

    /// Flat named-weight bundle for serialization; see [`WeightEntry`].
    pub fn to_bundle(&self) -> WeightBundle {
        let mut out = BTreeMap::new();
        for (i, h) in self.heads.iter().enumerate() {
            write_head(&format!("heads.{i}"), h, &mut out);
        }
        out
    }

    /// Rebuilds a detector from a bundle, validating every shape against
    /// `cfg` and rejecting missing or malformed entries.
    pub fn from_bundle(cfg: ModelConfig, bundle: &WeightBundle) -> Result<Self> {
        cfg.validate()?;
        let heads = (0..cfg.depth)
            .map(|i| read_head(&format!("heads.{i}"), bundle, &cfg))
            .collect::<Result<Vec<_>>>()?;
        let detector = Self { cfg, heads };
        detector.validate()?;
        Ok(detector)
    }
}

/// One named tensor in a serialized weight bundle: matrices carry
/// `shape = [rows, cols]`, vectors `shape = [len]`; `data` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat map from dotted parameter path (e.g. `heads.0.pair.w_s0`) to its
/// values; serializes to a single JSON object.
pub type WeightBundle = BTreeMap<String, WeightEntry>;

fn put_matrix(out: &mut WeightBundle, key: String, m: &Matrix) {
    let mut data = Vec::with_capacity(m.rows() * m.cols());
    for r in 0..m.rows() {
        data.extend_from_slice(m.row(r));
    }
    out.insert(
        key,
        WeightEntry {
            shape: vec![m.rows(), m.cols()],
            data,
        },
    );
}

fn put_ln(out: &mut WeightBundle, prefix: &str, ln: &LayerNorm) {
    out.insert(
        format!("{prefix}.gain"),
        WeightEntry {
            shape: vec![ln.gain.len()],
            data: ln.gain.clone(),
        },
    );
    out.insert(
        format!("{prefix}.bias"),
        WeightEntry {
            shape: vec![ln.bias.len()],
            data: ln.bias.clone(),
        },
    );
}

fn get_entry<'a>(bundle: &'a WeightBundle, key: &str) -> Result<&'a WeightEntry> {
    bundle
        .get(key)
        .ok_or_else(|| Error::InvalidConfig(format!("weight bundle is missing `{key}`")))
}

fn get_matrix(bundle: &WeightBundle, key: &str, rows: usize, cols: usize) -> Result<Matrix> {
    let e = get_entry(bundle, key)?;
    if e.shape != [rows, cols] {
        return Err(Error::ShapeMismatch(format!(
            "`{key}` has shape {:?}, expected [{rows}, {cols}]",
            e.shape
        )));
    }
    Matrix::new(rows, cols, e.data.clone())
}

fn get_vector(bundle: &WeightBundle, key: &str, len: usize) -> Result<Vector> {
    let e = get_entry(bundle, key)?;
    if e.shape != [len] {
        return Err(Error::ShapeMismatch(format!(
            "`{key}` has shape {:?}, expected [{len}]",
            e.shape
        )));
    }
    if e.data.len() != len || e.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("values of `{key}`")));
    }
    Ok(e.data.clone())
}

fn get_ln(bundle: &WeightBundle, prefix: &str, dim: usize) -> Result<LayerNorm> {
    Ok(LayerNorm {
        gain: get_vector(bundle, &format!("{prefix}.gain"), dim)?,
        bias: get_vector(bundle, &format!("{prefix}.bias"), dim)?,
    })
}

fn write_dyn(prefix: &str, w: &DynConvWeights, out: &mut WeightBundle) {
    put_matrix(out, format!("{prefix}.w1_gen"), &w.w1_gen);
    put_matrix(out, format!("{prefix}.w2_gen"), &w.w2_gen);
    put_matrix(out, format!("{prefix}.w_v"), &w.w_v);
    put_ln(out, &format!("{prefix}.ln1"), &w.ln1);
    put_ln(out, &format!("{prefix}.ln2"), &w.ln2);
    put_ln(out, &format!("{prefix}.ln3"), &w.ln3);
    put_ln(out, &format!("{prefix}.ln4"), &w.ln4);
}

fn read_dyn(
    prefix: &str,
    bundle: &WeightBundle,
    d: usize,
    channels: usize,
    hidden: usize,
    positions: usize,
) -> Result<DynConvWeights> {
    Ok(DynConvWeights {
        w1_gen: get_matrix(bundle, &format!("{prefix}.w1_gen"), hidden * channels, d)?,
        w2_gen: get_matrix(bundle, &format!("{prefix}.w2_gen"), channels * hidden, d)?,
        w_v: get_matrix(bundle, &format!("{prefix}.w_v"), d, channels * positions)?,
        ln1: get_ln(bundle, &format!("{prefix}.ln1"), hidden)?,
        ln2: get_ln(bundle, &format!("{prefix}.ln2"), channels)?,
        ln3: get_ln(bundle, &format!("{prefix}.ln3"), d)?,
        ln4: get_ln(bundle, &format!("{prefix}.ln4"), d)?,
    })
}

fn write_ffn(prefix: &str, w: &FfnWeights, out: &mut WeightBundle) {
    put_matrix(out, format!("{prefix}.w1"), &w.w1);
    put_matrix(out, format!("{prefix}.w2"), &w.w2);
    put_ln(out, &format!("{prefix}.ln"), &w.ln);
}

fn read_ffn(prefix: &str, bundle: &WeightBundle, d: usize) -> Result<FfnWeights> {
    Ok(FfnWeights {
        w1: get_matrix(bundle, &format!("{prefix}.w1"), 2 * d, d)?,
        w2: get_matrix(bundle, &format!("{prefix}.w2"), d, 2 * d)?,
        ln: get_ln(bundle, &format!("{prefix}.ln"), d)?,
    })
}

fn write_head(prefix: &str, h: &HeadWeights, out: &mut WeightBundle) {
    put_matrix(out, format!("{prefix}.pair.w_s0"), &h.pair.w_s0);
    put_matrix(out, format!("{prefix}.pair.w_o0"), &h.pair.w_o0);
    put_matrix(out, format!("{prefix}.pair.w_s1"), &h.pair.w_s1);
    put_matrix(out, format!("{prefix}.pair.w_o1"), &h.pair.w_o1);
    put_ln(out, &format!("{prefix}.pair.ln"), &h.pair.ln);
    put_matrix(out, format!("{prefix}.attn.w_q"), &h.attn.w_q);
    put_matrix(out, format!("{prefix}.attn.w_k"), &h.attn.w_k);
    put_matrix(out, format!("{prefix}.attn.w_v"), &h.attn.w_v);
    put_matrix(out, format!("{prefix}.attn.w_o"), &h.attn.w_o);
    put_ln(out, &format!("{prefix}.attn_ln"), &h.attn_ln);
    write_dyn(&format!("{prefix}.obj_dyn"), &h.obj_dyn, out);
    write_ffn(&format!("{prefix}.obj_ffn"), &h.obj_ffn, out);
    put_matrix(out, format!("{prefix}.obj_cls"), &h.obj_cls);
    put_matrix(out, format!("{prefix}.obj_reg"), &h.obj_reg);
    write_dyn(&format!("{prefix}.rel_dyn1"), &h.rel_dyn1, out);
    write_dyn(&format!("{prefix}.rel_dyn2"), &h.rel_dyn2, out);
    put_matrix(out, format!("{prefix}.e2r.w_s_r"), &h.e2r.w_s_r);
    put_matrix(out, format!("{prefix}.e2r.w_o_r"), &h.e2r.w_o_r);
    put_ln(out, &format!("{prefix}.e2r.ln_s"), &h.e2r.ln_s);
    put_ln(out, &format!("{prefix}.e2r.ln_o"), &h.e2r.ln_o);
    put_matrix(out, format!("{prefix}.e2r.w_x"), &h.e2r.w_x);
    put_matrix(out, format!("{prefix}.e2r.w_y"), &h.e2r.w_y);
    put_matrix(out, format!("{prefix}.e2r.w_s_p"), &h.e2r.w_s_p);
    put_matrix(out, format!("{prefix}.e2r.w_o_p"), &h.e2r.w_o_p);
    put_matrix(out, format!("{prefix}.e2r.w_p_r"), &h.e2r.w_p_r);
    put_ln(out, &format!("{prefix}.e2r.ln_out"), &h.e2r.ln_out);
    write_ffn(&format!("{prefix}.rel_ffn"), &h.rel_ffn, out);
    put_matrix(out, format!("{prefix}.rel_cls"), &h.rel_cls);
    put_matrix(out, format!("{prefix}.relfuse.w_s_r1"), &h.relfuse.w_s_r1);
    put_matrix(out, format!("{prefix}.relfuse.w_o_r1"), &h.relfuse.w_o_r1);
    put_ln(out, &format!("{prefix}.relfuse.ln_s"), &h.relfuse.ln_s);
    put_ln(out, &format!("{prefix}.relfuse.ln_o"), &h.relfuse.ln_o);
    put_matrix(out, format!("{prefix}.relfuse.w_cls"), &h.relfuse.w_cls);
}

fn read_head(prefix: &str, bundle: &WeightBundle, cfg: &ModelConfig) -> Result<HeadWeights> {
    let d = cfg.d_obj;
    let r = cfg.d_rel;
    let c = cfg.channels;
    let k = cfg.dyn_hidden;
    let p = cfg.positions();
    Ok(HeadWeights {
        pair: PairFusionWeights {
            w_s0: get_matrix(bundle, &format!("{prefix}.pair.w_s0"), d, d)?,
            w_o0: get_matrix(bundle, &format!("{prefix}.pair.w_o0"), d, d)?,
            w_s1: get_matrix(bundle, &format!("{prefix}.pair.w_s1"), d, d)?,
            w_o1: get_matrix(bundle, &format!("{prefix}.pair.w_o1"), d, d)?,
            ln: get_ln(bundle, &format!("{prefix}.pair.ln"), d)?,
        },
        attn: AttentionWeights {
            w_q: get_matrix(bundle, &format!("{prefix}.attn.w_q"), d, d)?,
            w_k: get_matrix(bundle, &format!("{prefix}.attn.w_k"), d, d)?,
            w_v: get_matrix(bundle, &format!("{prefix}.attn.w_v"), d, d)?,
            w_o: get_matrix(bundle, &format!("{prefix}.attn.w_o"), d, d)?,
        },
        attn_ln: get_ln(bundle, &format!("{prefix}.attn_ln"), d)?,
        obj_dyn: read_dyn(&format!("{prefix}.obj_dyn"), bundle, d, c, k, p)?,
        obj_ffn: read_ffn(&format!("{prefix}.obj_ffn"), bundle, d)?,
        obj_cls: get_matrix(bundle, &format!("{prefix}.obj_cls"), cfg.num_obj_classes, d)?,
        obj_reg: get_matrix(bundle, &format!("{prefix}.obj_reg"), 4, d)?,
        rel_dyn1: read_dyn(&format!("{prefix}.rel_dyn1"), bundle, r, c, k, 2 * p)?,
        rel_dyn2: read_dyn(&format!("{prefix}.rel_dyn2"), bundle, r, c, k, p)?,
        e2r: E2rWeights {
            w_s_r: get_matrix(bundle, &format!("{prefix}.e2r.w_s_r"), r, d)?,
            w_o_r: get_matrix(bundle, &format!("{prefix}.e2r.w_o_r"), r, d)?,
            ln_s: get_ln(bundle, &format!("{prefix}.e2r.ln_s"), r)?,
            ln_o: get_ln(bundle, &format!("{prefix}.e2r.ln_o"), r)?,
            w_x: get_matrix(bundle, &format!("{prefix}.e2r.w_x"), r, r)?,
            w_y: get_matrix(bundle, &format!("{prefix}.e2r.w_y"), r, r)?,
            w_s_p: get_matrix(bundle, &format!("{prefix}.e2r.w_s_p"), r, d)?,
            w_o_p: get_matrix(bundle, &format!("{prefix}.e2r.w_o_p"), r, d)?,
            w_p_r: get_matrix(bundle, &format!("{prefix}.e2r.w_p_r"), r, r)?,
            ln_out: get_ln(bundle, &format!("{prefix}.e2r.ln_out"), r)?,
        },
        rel_ffn: read_ffn(&format!("{prefix}.rel_ffn"), bundle, r)?,
        rel_cls: get_matrix(bundle, &format!("{prefix}.rel_cls"), cfg.num_rel_classes, r)?,
        relfuse: RelClsFusionWeights {
            w_s_r1: get_matrix(bundle, &format!("{prefix}.relfuse.w_s_r1"), d, d)?,
            w_o_r1: get_matrix(bundle, &format!("{prefix}.relfuse.w_o_r1"), d, d)?,
            ln_s: get_ln(bundle, &format!("{prefix}.relfuse.ln_s"), d)?,
            ln_o: get_ln(bundle, &format!("{prefix}.relfuse.ln_o"), d)?,
            w_cls: get_matrix(bundle, &format!("{prefix}.relfuse.w_cls"), cfg.num_rel_classes, d)?,
        },
    })
}

/// Deterministic random query set: boxes well inside the unit square,
/// small random content vectors.
pub fn seeded_queries(cfg: &ModelConfig, n: usize, seed: u64) -> Result<Vec<TripletQuery>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::EmptyInput("query count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queries = Vec::with_capacity(n);
    for _ in 0..n {
        let mut random_box = || {
            Box::new(
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.6),
                rng.gen_range(0.2..0.6),
            )
            .expect("ranges produce valid boxes")
        };
        let sub_box = random_box();
        let obj_box = random_box();
        queries.push(TripletQuery {
            sub_box,
            obj_box,
            sub_content: (0..cfg.d_obj).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            obj_content: (0..cfg.d_obj).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            rel_content: (0..cfg.d_rel).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        });
    }
    Ok(queries)
}
