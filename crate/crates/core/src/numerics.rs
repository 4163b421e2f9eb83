//! Small dense linear algebra and the handful of neural primitives the
//! heads are built from: layer norm, softmax, multi-head attention, and a
//! central-difference gradient probe used to cross-check analytic gradients.
//!
//! Everything is plain `f64` in row-major `Vec`s. Shape mismatches are
//! reported as errors, not panics, at the public entry points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default epsilon inside every layer-norm denominator.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Fixed-length f64 vector. Finiteness is enforced at the boundaries where
/// external data enters (constructors, head inputs), not per operation.
pub type Vector = Vec<f64>;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyInput(format!("matrix of shape {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "matvec: matrix is {}x{}, vector has length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(self.apply(x))
    }

    /// Unchecked counterpart of [`Matrix::matvec`] for inner loops that have
    /// already validated shapes.
    pub(crate) fn apply(&self, x: &[f64]) -> Vector {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (r, slot) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *slot = acc;
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }
}

/// Element-wise max(0, x).
pub fn relu(x: &[f64]) -> Vector {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow for large |z|.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Stable softmax; output sums to 1.
pub fn softmax(x: &[f64]) -> Vector {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Layer normalization with affine parameters: normalize `x` to zero mean
/// and unit variance (population variance plus `eps`), then apply
/// `gain .* x + bias`.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Result<Vector> {
    if x.is_empty() {
        return Err(Error::EmptyInput("layer_norm input".into()));
    }
    if gain.len() != x.len() || bias.len() != x.len() {
        return Err(Error::ShapeMismatch(format!(
            "layer_norm: input {}, gain {}, bias {}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + eps).sqrt();
    Ok(x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| g * (v - mean) / denom + b)
        .collect())
}

/// Affine layer-norm parameters bundled for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Vector,
    pub bias: Vector,
}

impl LayerNorm {
    /// Identity-affine parameters (gain 1, bias 0).
    pub fn identity(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vector> {
        layer_norm(x, &self.gain, &self.bias, LAYER_NORM_EPS)
    }
}

/// Projection matrices for one multi-head attention block; all `d x d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
}

impl AttentionWeights {
    pub fn validate(&self, dim: usize) -> Result<()> {
        for (name, m) in [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
        ] {
            if m.rows() != dim || m.cols() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "attention {name} is {}x{}, expected {dim}x{dim}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(())
    }
}

/// Multi-head self-attention over a token set: queries, keys and values all
/// derive from `x`. Returns one output vector per input token.
pub fn mh_attention(x: &[Vector], heads: usize, w: &AttentionWeights) -> Result<Vec<Vector>> {
    mh_attention_split(x, x, heads, w)
}

/// Attention variant where queries/keys derive from `qk_src` while values
/// derive from `v_src` (same token count, same dimension).
pub fn mh_attention_split(
    qk_src: &[Vector],
    v_src: &[Vector],
    heads: usize,
    w: &AttentionWeights,
) -> Result<Vec<Vector>> {
    Ok(mh_attention_with_probs(qk_src, v_src, heads, w)?.0)
}

/// Like [`mh_attention_split`], also returning the per-head attention
/// matrices (each `n x n`, rows summing to 1) for inspection.
pub fn mh_attention_with_probs(
    qk_src: &[Vector],
    v_src: &[Vector],
    heads: usize,
    w: &AttentionWeights,
) -> Result<(Vec<Vector>, Vec<Matrix>)> {
    if qk_src.is_empty() {
        return Err(Error::EmptyInput("attention token set".into()));
    }
    if qk_src.len() != v_src.len() {
        return Err(Error::ShapeMismatch(format!(
            "attention: {} query/key tokens vs {} value tokens",
            qk_src.len(),
            v_src.len()
        )));
    }
    let d = qk_src[0].len();
    if heads == 0 || d % heads != 0 {
        return Err(Error::InvalidConfig(format!(
            "attention dim {d} not divisible by {heads} heads"
        )));
    }
    w.validate(d)?;
    if qk_src.iter().chain(v_src).any(|t| t.len() != d) {
        return Err(Error::ShapeMismatch("attention tokens of mixed dims".into()));
    }

    let n = qk_src.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q: Vec<Vector> = qk_src.iter().map(|t| w.w_q.apply(t)).collect();
    let k: Vec<Vector> = qk_src.iter().map(|t| w.w_k.apply(t)).collect();
    let v: Vec<Vector> = v_src.iter().map(|t| w.w_v.apply(t)).collect();

    let mut probs = Vec::with_capacity(heads);
    let mut merged = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let lo = h * dh;
        let hi = lo + dh;
        let mut p = Matrix::zeros(n, n);
        for i in 0..n {
            let mut scores = vec![0.0; n];
            for (j, score) in scores.iter_mut().enumerate() {
                let mut acc = 0.0;
                for t in lo..hi {
                    acc += q[i][t] * k[j][t];
                }
                *score = acc * scale;
            }
            let row = softmax(&scores);
            for j in 0..n {
                p.data[i * n + j] = row[j];
                for t in lo..hi {
                    merged[i][t] += row[j] * v[j][t];
                }
            }
        }
        probs.push(p);
    }

    let out = merged.iter().map(|m| w.w_o.apply(m)).collect();
    Ok((out, probs))
}

/// Central-difference gradient of `f` at `x` with step `h`:
/// `(f(x + h*e_i) - f(x - h*e_i)) / (2h)` per coordinate. Used as the
/// independent check against every analytic gradient in this crate.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Result<Vector> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidConfig(format!("fd_gradient step {h}")));
    }
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("fd_gradient probe at coord {i}")));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn random_tokens(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vector> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn matvec_matches_hand_computation() {
        let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]).unwrap(), vec![-2.0, -2.0]);
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let m = Matrix::zeros(2, 3);
        assert!(m.matvec(&[1.0, 2.0]).is_err());
        assert!(m.matmul(&Matrix::zeros(2, 2)).is_err());
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(layer_norm(&[1.0, 2.0], &[1.0], &[0.0, 0.0], LAYER_NORM_EPS).is_err());
    }

    #[test]
    fn layer_norm_centers_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(4..64);
            // Spread values widely so eps is negligible next to the variance.
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let y = layer_norm(&x, &vec![1.0; n], &vec![0.0; n], LAYER_NORM_EPS).unwrap();
            let mean = y.iter().sum::<f64>() / n as f64;
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-10, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn layer_norm_of_constant_input_is_bias() {
        let y = layer_norm(&[3.0; 8], &[2.0; 8], &[0.5; 8], LAYER_NORM_EPS).unwrap();
        for v in y {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one_and_survives_large_logits() {
        let y = softmax(&[1000.0, 999.0, -1000.0]);
        assert!(y.iter().all(|v| v.is_finite()));
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(y[0] > y[1] && y[1] > y[2]);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 16;
        let w = AttentionWeights {
            w_q: random_matrix(&mut rng, d, d),
            w_k: random_matrix(&mut rng, d, d),
            w_v: random_matrix(&mut rng, d, d),
            w_o: random_matrix(&mut rng, d, d),
        };
        let x = random_tokens(&mut rng, 9, d);
        let (out, probs) = mh_attention_with_probs(&x, &x, 4, &w).unwrap();
        assert_eq!(out.len(), 9);
        for p in &probs {
            for i in 0..9 {
                let s: f64 = (0..9).map(|j| p.get(i, j)).sum();
                assert!((s - 1.0).abs() < 1e-10, "row sum {s}");
            }
        }
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 8;
        let w = AttentionWeights {
            w_q: random_matrix(&mut rng, d, d),
            w_k: random_matrix(&mut rng, d, d),
            w_v: random_matrix(&mut rng, d, d),
            w_o: random_matrix(&mut rng, d, d),
        };
        let x = random_tokens(&mut rng, 6, d);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let xp: Vec<Vector> = perm.iter().map(|&i| x[i].clone()).collect();
        let base = mh_attention(&x, 2, &w).unwrap();
        let shuffled = mh_attention(&xp, 2, &w).unwrap();
        for (slot, &src) in perm.iter().enumerate() {
            for t in 0..d {
                assert!((shuffled[slot][t] - base[src][t]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn attention_rejects_bad_head_count() {
        let d = 6;
        let w = AttentionWeights {
            w_q: Matrix::zeros(d, d),
            w_k: Matrix::zeros(d, d),
            w_v: Matrix::zeros(d, d),
            w_o: Matrix::zeros(d, d),
        };
        let x = vec![vec![0.0; d]; 2];
        assert!(mh_attention(&x, 4, &w).is_err());
        assert!(mh_attention(&x, 0, &w).is_err());
    }

    #[test]
    fn fd_gradient_matches_quadratic() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let x = [1.5, -2.0, 0.25];
        let g = fd_gradient(f, &x, 1e-5).unwrap();
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-6);
        }
    }

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-745.0) >= 0.0);
        assert!(sigmoid(745.0) <= 1.0);
        assert!(softplus(800.0).is_finite());
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
