//! Reverse-mode autodiff over a linear tape.
//!
//! The forward pass records every operation together with its output value;
//! `backward` walks the tape in reverse and applies hand-written vector-
//! Jacobian products. The op set is exactly what the networks in this crate
//! need; there is no general graph machinery beyond that.

use std::collections::HashMap;

use super::params::{Gradients, ParamSet};
use super::{NumError, Tensor};

const LN_EPS: f64 = 1e-300;
const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Min { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    AddScalar { a: Var },
    Tanh { a: Var },
    Gelu { a: Var },
    Exp { a: Var },
    Ln { a: Var },
    Abs { a: Var },
    Sigmoid { a: Var },
    Clamp { a: Var, lo: f64, hi: f64 },
    SoftmaxRows { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, cache: Vec<f64> },
    Mha(Box<MhaOp>),
    Sum { a: Var },
    RowSums { a: Var },
    MeanOverRows { a: Var },
    BroadcastRow { a: Var, rows: usize },
    ConcatCols { parts: Vec<Var> },
    ConcatRows { parts: Vec<Var> },
    GatherRows { a: Var, indices: Vec<usize> },
    InterleaveRows3 { a: Var, b: Var, c: Var },
    L2NormalizeRows { a: Var, norms: Vec<f64> },
    LseExclDiag { a: Var },
}

struct Node {
    op: Op,
    value: Tensor,
    param_name: Option<String>,
}

/// Saved state for the fused multi-head attention op.
///
/// The key projection carries no bias: a per-channel shift of every key
/// moves all scores in a row by the same constant, which softmax cancels,
/// so such a bias would be structurally gradient-free.
#[derive(Debug)]
struct MhaOp {
    x: Var,
    wq: Var,
    bq: Var,
    wk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
    heads: usize,
    causal: bool,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    // probs[h] holds head h's attention rows back to back; causal rows are
    // ragged (row ti has ti + 1 entries) with offsets in `row_offsets`.
    probs: Vec<Vec<f64>>,
    row_offsets: Vec<usize>,
    concat: Vec<f64>,
}

/// Recording tape. One tape per forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Parameter bindings on a tape: name -> leaf var.
pub struct BoundParams {
    vars: HashMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Register every parameter as a named leaf.
    pub fn bind(&mut self, params: &ParamSet) -> BoundParams {
        let mut vars = HashMap::new();
        for (name, tensor) in params.iter() {
            let var = self.push_named(Op::Leaf, tensor.clone(), Some(name.to_string()));
            vars.insert(name.to_string(), var);
        }
        BoundParams { vars }
    }

    /// Constant leaf; receives no gradient of interest.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_named(Op::Leaf, t, None)
    }

    fn push_named(&mut self, op: Op, value: Tensor, param_name: Option<String>) -> Var {
        self.nodes.push(Node {
            op,
            value,
            param_name,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var, NumError> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: name });
        }
        Ok(self.push_named(op, value, None))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(), NumError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NumError::BadShape(format!(
                "{op}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    // ── elementwise and scalar ops ─────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b, "add")?;
        let vals = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add { a, b }, vals, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b, "sub")?;
        let vals = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub { a, b }, vals, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b, "mul")?;
        let vals = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul { a, b }, vals, "mul")
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b, "min")?;
        let vals = zip_map(self.value(a), self.value(b), f64::min);
        self.push(Op::Min { a, b }, vals, "min")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        let vals = map(self.value(a), |x| c * x);
        self.push(Op::Scale { a, c }, vals, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        let vals = map(self.value(a), |x| x + c);
        self.push(Op::AddScalar { a }, vals, "add_scalar")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumError> {
        let vals = map(self.value(a), f64::tanh);
        self.push(Op::Tanh { a }, vals, "tanh")
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, NumError> {
        let vals = map(self.value(a), gelu);
        self.push(Op::Gelu { a }, vals, "gelu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumError> {
        let vals = map(self.value(a), f64::exp);
        self.push(Op::Exp { a }, vals, "exp")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, NumError> {
        let vals = map(self.value(a), |x| x.max(LN_EPS).ln());
        self.push(Op::Ln { a }, vals, "ln")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, NumError> {
        let vals = map(self.value(a), f64::abs);
        self.push(Op::Abs { a }, vals, "abs")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumError> {
        let vals = map(self.value(a), |x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid { a }, vals, "sigmoid")
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, NumError> {
        let vals = map(self.value(a), |x| x.clamp(lo, hi));
        self.push(Op::Clamp { a, lo, hi }, vals, "clamp")
    }

    // ── linear algebra ─────────────────────────────────────────────────

    /// y = x W + b, row-wise.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumError> {
        let (n, d_in) = self.value(x).dims2();
        let (wi, d_out) = self.value(w).dims2();
        if wi != d_in || self.value(b).numel() != d_out {
            return Err(NumError::BadShape(format!(
                "affine: x {:?} w {:?} b {:?}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; n * d_out];
        for row in out.chunks_mut(d_out) {
            row.copy_from_slice(self.value(b).values());
        }
        matmul_acc(
            self.value(x).values(),
            self.value(w).values(),
            &mut out,
            n,
            d_in,
            d_out,
        );
        let t = Tensor::new(vec![n, d_out], out)?;
        self.push(Op::Affine { x, w, b }, t, "affine")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (m, ka) = self.value(a).dims2();
        let (kb, n) = self.value(b).dims2();
        if ka != kb {
            return Err(NumError::BadShape(format!(
                "matmul: {:?} x {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).values(), self.value(b).values(), &mut out, m, ka, n);
        let t = Tensor::new(vec![m, n], out)?;
        self.push(Op::Matmul { a, b }, t, "matmul")
    }

    /// Gram matrix of row vectors: out = a aᵀ.
    pub fn matmul_self_t(&mut self, a: Var) -> Result<Var, NumError> {
        let (n, d) = self.value(a).dims2();
        let vals = self.value(a).values();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for c in 0..d {
                    s += vals[i * d + c] * vals[j * d + c];
                }
                out[i * n + j] = s;
            }
        }
        // recorded as matmul(a, a); backward detects the aliased operand
        let t = Tensor::new(vec![n, n], out)?;
        self.push(Op::Matmul { a, b: a }, t, "matmul_self_t")
    }

    // ── softmax / normalization ────────────────────────────────────────

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let (n, m) = self.value(a).dims2();
        let src = self.value(a).values();
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            let row = &src[r * m..(r + 1) * m];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..m {
                let e = (row[c] - mx).exp();
                out[r * m + c] = e;
                z += e;
            }
            for c in 0..m {
                out[r * m + c] /= z;
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        self.push(Op::SoftmaxRows { a }, t, "softmax_rows")
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumError> {
        let (n, m) = self.value(x).dims2();
        if self.value(gain).numel() != m || self.value(bias).numel() != m {
            return Err(NumError::BadShape("layer_norm: gain/bias width".into()));
        }
        let src = self.value(x).values();
        let g = self.value(gain).values().to_vec();
        let b = self.value(bias).values().to_vec();
        let mut out = vec![0.0; n * m];
        // cache holds inv-std per row followed by normalized activations
        let mut cache = vec![0.0; n * (m + 1)];
        for r in 0..n {
            let row = &src[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            cache[r] = inv_std;
            for c in 0..m {
                let xhat = (row[c] - mean) * inv_std;
                cache[n + r * m + c] = xhat;
                out[r * m + c] = g[c] * xhat + b[c];
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        self.push(Op::LayerNorm { x, gain, bias, cache }, t, "layer_norm")
    }

    /// Rows projected onto the unit sphere.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let (n, m) = self.value(a).dims2();
        let src = self.value(a).values();
        let mut out = vec![0.0; n * m];
        let mut norms = vec![0.0; n];
        for r in 0..n {
            let row = &src[r * m..(r + 1) * m];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms[r] = norm;
            for c in 0..m {
                out[r * m + c] = row[c] / norm;
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        self.push(Op::L2NormalizeRows { a, norms }, t, "l2_normalize_rows")
    }

    // ── reductions and shape ops ───────────────────────────────────────

    /// Sum of all entries -> scalar [1].
    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        let s: f64 = self.value(a).values().iter().sum();
        self.push(Op::Sum { a }, Tensor::scalar(s), "sum")
    }

    /// Per-row sums of an [n x m] tensor -> [n].
    pub fn row_sums(&mut self, a: Var) -> Result<Var, NumError> {
        let (n, m) = self.value(a).dims2();
        let src = self.value(a).values();
        let out: Vec<f64> = (0..n).map(|r| src[r * m..(r + 1) * m].iter().sum()).collect();
        self.push(Op::RowSums { a }, Tensor::vector(out), "row_sums")
    }

    /// Column means of an [n x m] tensor -> [m] (average pooling over rows).
    pub fn mean_over_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let (n, m) = self.value(a).dims2();
        let src = self.value(a).values();
        let mut out = vec![0.0; m];
        for r in 0..n {
            for c in 0..m {
                out[c] += src[r * m + c];
            }
        }
        for v in out.iter_mut() {
            *v /= n as f64;
        }
        self.push(Op::MeanOverRows { a }, Tensor::vector(out), "mean_over_rows")
    }

    /// Repeat a [m] or [1 x m] row `rows` times -> [rows x m].
    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Result<Var, NumError> {
        let (one, m) = self.value(a).dims2();
        if one != 1 {
            return Err(NumError::BadShape("broadcast_row: input must be a single row".into()));
        }
        let src = self.value(a).values().to_vec();
        let mut out = Vec::with_capacity(rows * m);
        for _ in 0..rows {
            out.extend_from_slice(&src);
        }
        let t = Tensor::new(vec![rows, m], out)?;
        self.push(Op::BroadcastRow { a, rows }, t, "broadcast_row")
    }

    /// Horizontal concatenation of same-height blocks.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(NumError::BadShape("concat_cols: no parts".into()));
        }
        let n = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (rows, cols) = self.value(p).dims2();
                if rows != n {
                    return Err(NumError::BadShape("concat_cols: row mismatch".into()));
                }
                Ok(cols)
            })
            .collect::<Result<_, _>>()?;
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(widths.iter()) {
            let src = self.value(p).values();
            for r in 0..n {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let t = Tensor::new(vec![n, total], out)?;
        self.push(Op::ConcatCols { parts: parts.to_vec() }, t, "concat_cols")
    }

    /// Vertical stacking of same-width blocks.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(NumError::BadShape("concat_rows: no parts".into()));
        }
        let width = self.value(parts[0]).dims2().1;
        let mut out = Vec::new();
        let mut total_rows = 0;
        for &p in parts {
            let (rows, cols) = self.value(p).dims2();
            if cols != width {
                return Err(NumError::BadShape("concat_rows: column mismatch".into()));
            }
            out.extend_from_slice(self.value(p).values());
            total_rows += rows;
        }
        let t = Tensor::new(vec![total_rows, width], out)?;
        self.push(Op::ConcatRows { parts: parts.to_vec() }, t, "concat_rows")
    }

    /// Select rows by index (duplicates allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, NumError> {
        let (n, m) = self.value(a).dims2();
        if indices.iter().any(|&i| i >= n) {
            return Err(NumError::BadShape("gather_rows: index out of range".into()));
        }
        let src = self.value(a).values();
        let mut out = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            out.extend_from_slice(&src[i * m..(i + 1) * m]);
        }
        let t = Tensor::new(vec![indices.len(), m], out)?;
        self.push(
            Op::GatherRows { a, indices: indices.to_vec() },
            t,
            "gather_rows",
        )
    }

    /// Rows of a, b, c interleaved: (a0, b0, c0, a1, b1, c1, ...).
    pub fn interleave_rows3(&mut self, a: Var, b: Var, c: Var) -> Result<Var, NumError> {
        self.same_shape(a, b, "interleave_rows3")?;
        self.same_shape(a, c, "interleave_rows3")?;
        let (n, m) = self.value(a).dims2();
        let (va, vb, vc) = (
            self.value(a).values(),
            self.value(b).values(),
            self.value(c).values(),
        );
        let mut out = vec![0.0; 3 * n * m];
        for r in 0..n {
            out[(3 * r) * m..(3 * r + 1) * m].copy_from_slice(&va[r * m..(r + 1) * m]);
            out[(3 * r + 1) * m..(3 * r + 2) * m].copy_from_slice(&vb[r * m..(r + 1) * m]);
            out[(3 * r + 2) * m..(3 * r + 3) * m].copy_from_slice(&vc[r * m..(r + 1) * m]);
        }
        let t = Tensor::new(vec![3 * n, m], out)?;
        self.push(Op::InterleaveRows3 { a, b, c }, t, "interleave_rows3")
    }

    /// Row-wise log-sum-exp over off-diagonal entries of a square matrix.
    ///
    /// lse_i = log sum_{j != i} exp(a_ij); the InfoNCE denominator.
    pub fn lse_excl_diag(&mut self, a: Var) -> Result<Var, NumError> {
        let (n, m) = self.value(a).dims2();
        if n != m || n < 2 {
            return Err(NumError::BadShape("lse_excl_diag: needs square matrix, n >= 2".into()));
        }
        let src = self.value(a).values();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                if j != i {
                    mx = mx.max(src[i * n + j]);
                }
            }
            let mut z = 0.0;
            for j in 0..n {
                if j != i {
                    z += (src[i * n + j] - mx).exp();
                }
            }
            out[i] = mx + z.ln();
        }
        self.push(Op::LseExclDiag { a }, Tensor::vector(out), "lse_excl_diag")
    }

    // ── fused multi-head attention ─────────────────────────────────────

    /// Multi-head self-attention with projection, optional causal mask.
    #[allow(clippy::too_many_arguments)]
    pub fn multi_head_attention(
        &mut self,
        x: Var,
        wq: Var,
        bq: Var,
        wk: Var,
        wv: Var,
        bv: Var,
        wo: Var,
        bo: Var,
        heads: usize,
        causal: bool,
    ) -> Result<Var, NumError> {
        let (t_len, d) = self.value(x).dims2();
        if heads == 0 || d % heads != 0 {
            return Err(NumError::Config(format!(
                "attention width {d} not divisible by {heads} heads"
            )));
        }
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();

        let q = affine_raw(self.value(x), self.value(wq), self.value(bq))?;
        let k = matmul_plain(self.value(x), self.value(wk))?;
        let v = affine_raw(self.value(x), self.value(wv), self.value(bv))?;

        // ragged row offsets shared by every head
        let mut row_offsets = Vec::with_capacity(t_len + 1);
        let mut acc = 0usize;
        for ti in 0..t_len {
            row_offsets.push(acc);
            acc += if causal { ti + 1 } else { t_len };
        }
        row_offsets.push(acc);

        let mut probs = Vec::with_capacity(heads);
        let mut concat = vec![0.0; t_len * d];
        for h in 0..heads {
            let off = h * dk;
            let mut p = vec![0.0; acc];
            for ti in 0..t_len {
                let limit = if causal { ti + 1 } else { t_len };
                let row = &mut p[row_offsets[ti]..row_offsets[ti] + limit];
                let mut mx = f64::NEG_INFINITY;
                let q_row = &q[ti * d + off..ti * d + off + dk];
                for (tj, slot) in row.iter_mut().enumerate() {
                    let k_row = &k[tj * d + off..tj * d + off + dk];
                    let s: f64 = q_row.iter().zip(k_row).map(|(a, b)| a * b).sum::<f64>() * scale;
                    *slot = s;
                    mx = mx.max(s);
                }
                let mut z = 0.0;
                for slot in row.iter_mut() {
                    *slot = (*slot - mx).exp();
                    z += *slot;
                }
                let inv_z = 1.0 / z;
                for slot in row.iter_mut() {
                    *slot *= inv_z;
                }
                // attention-weighted sum of values
                let out_row = &mut concat[ti * d + off..ti * d + off + dk];
                for (tj, pv) in row.iter().enumerate() {
                    let v_row = &v[tj * d + off..tj * d + off + dk];
                    for (o, vv) in out_row.iter_mut().zip(v_row.iter()) {
                        *o += pv * vv;
                    }
                }
            }
            probs.push(p);
        }

        let concat_t = Tensor::new(vec![t_len, d], concat.clone())?;
        let out = affine_raw(&concat_t, self.value(wo), self.value(bo))?;
        let value = Tensor::new(vec![t_len, d], out)?;
        let op = Op::Mha(Box::new(MhaOp {
            x,
            wq,
            bq,
            wk,
            wv,
            bv,
            wo,
            bo,
            heads,
            causal,
            q,
            k,
            v,
            probs,
            row_offsets,
            concat,
        }));
        self.push(op, value, "multi_head_attention")
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Reverse pass seeded with dL/d(loss) = 1; `loss` must be scalar.
    pub fn backward(&self, loss: Var) -> Result<TapeGrads, NumError> {
        if self.value(loss).numel() != 1 {
            return Err(NumError::BadShape("backward: loss must be scalar".into()));
        }
        self.backward_seeded(&[(loss, Tensor::scalar(1.0))])
    }

    /// Reverse pass with explicit output seeds (used to inject gradients
    /// computed on another tape, e.g. the contrastive coupling).
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor)]) -> Result<TapeGrads, NumError> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (var, seed) in seeds {
            if seed.shape() != self.value(*var).shape() {
                return Err(NumError::BadShape("backward: seed shape mismatch".into()));
            }
            acc_into(&mut grads[var.0], seed.values());
        }

        for idx in (0..self.nodes.len()).rev() {
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumError::NonFinite { op: op_name(&self.nodes[idx].op) });
            }
            self.backprop_node(idx, &g, &mut grads)?;
        }

        Ok(TapeGrads { grads })
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<(), NumError> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (n, d_in) = self.value(*x).dims2();
                let d_out = self.value(*b).numel();
                let mut dx = vec![0.0; n * d_in];
                matmul_a_bt_acc(g, self.value(*w).values(), &mut dx, n, d_out, d_in);
                acc_into(&mut grads[x.0], &dx);
                let mut dw = vec![0.0; d_in * d_out];
                matmul_at_b_acc(self.value(*x).values(), g, &mut dw, n, d_in, d_out);
                acc_into(&mut grads[w.0], &dw);
                let mut db = vec![0.0; d_out];
                for r in 0..n {
                    for c in 0..d_out {
                        db[c] += g[r * d_out + c];
                    }
                }
                acc_into(&mut grads[b.0], &db);
            }
            Op::Matmul { a, b } => {
                if a == b {
                    // gram matrix a aᵀ: d a = (g + gᵀ) a
                    let (n, d) = self.value(*a).dims2();
                    let av = self.value(*a).values();
                    let mut da = vec![0.0; n * d];
                    for i in 0..n {
                        for j in 0..n {
                            let coeff = g[i * n + j];
                            if coeff != 0.0 {
                                for c in 0..d {
                                    da[i * d + c] += coeff * av[j * d + c];
                                    da[j * d + c] += coeff * av[i * d + c];
                                }
                            }
                        }
                    }
                    acc_into(&mut grads[a.0], &da);
                } else {
                    let (m, k) = self.value(*a).dims2();
                    let (_, n) = self.value(*b).dims2();
                    let mut da = vec![0.0; m * k];
                    matmul_a_bt_acc(g, self.value(*b).values(), &mut da, m, n, k);
                    acc_into(&mut grads[a.0], &da);
                    let mut db = vec![0.0; k * n];
                    matmul_at_b_acc(self.value(*a).values(), g, &mut db, m, k, n);
                    acc_into(&mut grads[b.0], &db);
                }
            }
            Op::Add { a, b } => {
                acc_into(&mut grads[a.0], g);
                acc_into(&mut grads[b.0], g);
            }
            Op::Sub { a, b } => {
                acc_into(&mut grads[a.0], g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                acc_into(&mut grads[b.0], &neg);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.value(*b).values())
                    .map(|(gv, bv)| gv * bv)
                    .collect();
                acc_into(&mut grads[a.0], &da);
                let db: Vec<f64> = g
                    .iter()
                    .zip(self.value(*a).values())
                    .map(|(gv, av)| gv * av)
                    .collect();
                acc_into(&mut grads[b.0], &db);
            }
            Op::Min { a, b } => {
                let av = self.value(*a).values();
                let bv = self.value(*b).values();
                let mut da = vec![0.0; g.len()];
                let mut db = vec![0.0; g.len()];
                for i in 0..g.len() {
                    if av[i] <= bv[i] {
                        da[i] = g[i];
                    } else {
                        db[i] = g[i];
                    }
                }
                acc_into(&mut grads[a.0], &da);
                acc_into(&mut grads[b.0], &db);
            }
            Op::Scale { a, c } => {
                let da: Vec<f64> = g.iter().map(|v| v * c).collect();
                acc_into(&mut grads[a.0], &da);
            }
            Op::AddScalar { a } => acc_into(&mut grads[a.0], g),
            Op::Tanh { a } => {
                let y = node.value.values();
                let da: Vec<f64> = g.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                acc_into(&mut grads[a.0], &da);
            }
            Op::Gelu { a } => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g.iter().zip(x).map(|(gv, xv)| gv * gelu_grad(*xv)).collect();
                acc_into(&mut grads[a.0], &da);
            }
            Op::Exp { a } => {
                let y = node.value.values();
                let da: Vec<f64> = g.iter().zip(y).map(|(gv, yv)| gv * yv).collect();
                acc_into(&mut grads[a.0], &da);
            }
            Op::Ln { a } => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gv, xv)| gv / xv.max(LN_EPS))
                    .collect();
                acc_into(&mut grads[a.0], &da);
            }
            Op::Abs { a } => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gv, xv)| gv * if *xv > 0.0 { 1.0 } else if *xv < 0.0 { -1.0 } else { 0.0 })
                    .collect();
                acc_into(&mut grads[a.0], &da);
            }
            Op::Sigmoid { a } => {
                let y = node.value.values();
                let da: Vec<f64> = g
                    .iter()
                    .zip(y)
                    .map(|(gv, yv)| gv * yv * (1.0 - yv))
                    .collect();
                acc_into(&mut grads[a.0], &da);
            }
            Op::Clamp { a, lo, hi } => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gv, xv)| if *xv >= *lo && *xv <= *hi { *gv } else { 0.0 })
                    .collect();
                acc_into(&mut grads[a.0], &da);
            }
            Op::SoftmaxRows { a } => {
                let (n, m) = node.value.dims2();
                let y = node.value.values();
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    let dot: f64 = (0..m).map(|c| g[r * m + c] * y[r * m + c]).sum();
                    for c in 0..m {
                        da[r * m + c] = y[r * m + c] * (g[r * m + c] - dot);
                    }
                }
                acc_into(&mut grads[a.0], &da);
            }
            Op::LayerNorm { x, gain, bias, cache } => {
                let (n, m) = node.value.dims2();
                let gval = self.value(*gain).values();
                let mut dx = vec![0.0; n * m];
                let mut dgain = vec![0.0; m];
                let mut dbias = vec![0.0; m];
                for r in 0..n {
                    let inv_std = cache[r];
                    let xhat = &cache[n + r * m..n + (r + 1) * m];
                    let mut mean_gxhat = 0.0;
                    let mut mean_gxhat_xhat = 0.0;
                    for c in 0..m {
                        let gy = g[r * m + c];
                        dgain[c] += gy * xhat[c];
                        dbias[c] += gy;
                        let gxh = gy * gval[c];
                        mean_gxhat += gxh;
                        mean_gxhat_xhat += gxh * xhat[c];
                    }
                    mean_gxhat /= m as f64;
                    mean_gxhat_xhat /= m as f64;
                    for c in 0..m {
                        let gxh = g[r * m + c] * gval[c];
                        dx[r * m + c] = inv_std * (gxh - mean_gxhat - xhat[c] * mean_gxhat_xhat);
                    }
                }
                acc_into(&mut grads[x.0], &dx);
                acc_into(&mut grads[gain.0], &dgain);
                acc_into(&mut grads[bias.0], &dbias);
            }
            Op::Mha(op) => self.backprop_mha(op, g, grads),
            Op::Sum { a } => {
                let da = vec![g[0]; self.value(*a).numel()];
                acc_into(&mut grads[a.0], &da);
            }
            Op::RowSums { a } => {
                let (n, m) = self.value(*a).dims2();
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    for c in 0..m {
                        da[r * m + c] = g[r];
                    }
                }
                acc_into(&mut grads[a.0], &da);
            }
            Op::MeanOverRows { a } => {
                let (n, m) = self.value(*a).dims2();
                let inv = 1.0 / n as f64;
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    for c in 0..m {
                        da[r * m + c] = g[c] * inv;
                    }
                }
                acc_into(&mut grads[a.0], &da);
            }
            Op::BroadcastRow { a, rows } => {
                let m = self.value(*a).numel();
                let mut da = vec![0.0; m];
                for r in 0..*rows {
                    for c in 0..m {
                        da[c] += g[r * m + c];
                    }
                }
                acc_into(&mut grads[a.0], &da);
            }
            Op::ConcatCols { parts } => {
                let n = self.value(parts[0]).dims2().0;
                let total: usize = parts.iter().map(|&p| self.value(p).dims2().1).sum();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    let mut dp = vec![0.0; n * w];
                    for r in 0..n {
                        dp[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    acc_into(&mut grads[p.0], &dp);
                    offset += w;
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let count = self.value(p).numel();
                    acc_into(&mut grads[p.0], &g[offset..offset + count]);
                    offset += count;
                }
            }
            Op::GatherRows { a, indices } => {
                let (n, m) = self.value(*a).dims2();
                let mut da = vec![0.0; n * m];
                for (out_r, &src_r) in indices.iter().enumerate() {
                    for c in 0..m {
                        da[src_r * m + c] += g[out_r * m + c];
                    }
                }
                acc_into(&mut grads[a.0], &da);
            }
            Op::InterleaveRows3 { a, b, c } => {
                let (n, m) = self.value(*a).dims2();
                let mut da = vec![0.0; n * m];
                let mut db = vec![0.0; n * m];
                let mut dc = vec![0.0; n * m];
                for r in 0..n {
                    da[r * m..(r + 1) * m].copy_from_slice(&g[(3 * r) * m..(3 * r + 1) * m]);
                    db[r * m..(r + 1) * m].copy_from_slice(&g[(3 * r + 1) * m..(3 * r + 2) * m]);
                    dc[r * m..(r + 1) * m].copy_from_slice(&g[(3 * r + 2) * m..(3 * r + 3) * m]);
                }
                acc_into(&mut grads[a.0], &da);
                acc_into(&mut grads[b.0], &db);
                acc_into(&mut grads[c.0], &dc);
            }
            Op::L2NormalizeRows { a, norms } => {
                let (n, m) = node.value.dims2();
                let y = node.value.values();
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    let dot: f64 = (0..m).map(|c| g[r * m + c] * y[r * m + c]).sum();
                    for c in 0..m {
                        da[r * m + c] = (g[r * m + c] - y[r * m + c] * dot) / norms[r];
                    }
                }
                acc_into(&mut grads[a.0], &da);
            }
            Op::LseExclDiag { a } => {
                let n = self.value(*a).dims2().0;
                let src = self.value(*a).values();
                let lse = node.value.values();
                let mut da = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        if j != i {
                            da[i * n + j] = g[i] * (src[i * n + j] - lse[i]).exp();
                        }
                    }
                }
                acc_into(&mut grads[a.0], &da);
            }
        }
        Ok(())
    }

    fn backprop_mha(&self, op: &MhaOp, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (t_len, d) = self.value(op.x).dims2();
        let heads = op.heads;
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();

        // output projection
        let mut dwo = vec![0.0; d * d];
        matmul_at_b_acc(&op.concat, g, &mut dwo, t_len, d, d);
        acc_into(&mut grads[op.wo.0], &dwo);
        let mut dbo = vec![0.0; d];
        for r in 0..t_len {
            for c in 0..d {
                dbo[c] += g[r * d + c];
            }
        }
        acc_into(&mut grads[op.bo.0], &dbo);
        let mut d_concat = vec![0.0; t_len * d];
        matmul_a_bt_acc(g, self.value(op.wo).values(), &mut d_concat, t_len, d, d);

        let mut dq = vec![0.0; t_len * d];
        let mut dkk = vec![0.0; t_len * d];
        let mut dv = vec![0.0; t_len * d];
        let mut gp = vec![0.0; t_len];
        let mut dq_row = vec![0.0; dk];
        for h in 0..heads {
            let off = h * dk;
            let p = &op.probs[h];
            for ti in 0..t_len {
                let limit = if op.causal { ti + 1 } else { t_len };
                let p_row = &p[op.row_offsets[ti]..op.row_offsets[ti] + limit];
                let go_row = &d_concat[ti * d + off..ti * d + off + dk];
                let q_row = &op.q[ti * d + off..ti * d + off + dk];
                // dP and softmax backward folded into one pass
                for (tj, slot) in gp[..limit].iter_mut().enumerate() {
                    let v_row = &op.v[tj * d + off..tj * d + off + dk];
                    *slot = go_row.iter().zip(v_row).map(|(a, b)| a * b).sum();
                }
                let rowdot: f64 = gp[..limit].iter().zip(p_row).map(|(g, p)| g * p).sum();
                dq_row.iter_mut().for_each(|v| *v = 0.0);
                for (tj, &pv) in p_row.iter().enumerate() {
                    let ds = pv * (gp[tj] - rowdot) * scale;
                    let k_row = &op.k[tj * d + off..tj * d + off + dk];
                    let dk_row = &mut dkk[tj * d + off..tj * d + off + dk];
                    let dv_row = &mut dv[tj * d + off..tj * d + off + dk];
                    for c in 0..dk {
                        dq_row[c] += ds * k_row[c];
                        dk_row[c] += ds * q_row[c];
                        dv_row[c] += pv * go_row[c];
                    }
                }
                for (dst, src) in dq[ti * d + off..ti * d + off + dk].iter_mut().zip(dq_row.iter()) {
                    *dst += src;
                }
            }
        }

        let xval = self.value(op.x).values();
        let mut dx = vec![0.0; t_len * d];
        for (dproj, w, b) in [
            (&dq, op.wq, Some(op.bq)),
            (&dkk, op.wk, None),
            (&dv, op.wv, Some(op.bv)),
        ] {
            let mut dw = vec![0.0; d * d];
            matmul_at_b_acc(xval, dproj, &mut dw, t_len, d, d);
            acc_into(&mut grads[w.0], &dw);
            if let Some(b) = b {
                let mut db = vec![0.0; d];
                for r in 0..t_len {
                    for c in 0..d {
                        db[c] += dproj[r * d + c];
                    }
                }
                acc_into(&mut grads[b.0], &db);
            }
            matmul_a_bt_acc(dproj, self.value(w).values(), &mut dx, t_len, d, d);
        }
        acc_into(&mut grads[op.x.0], &dx);
    }

    /// Collect named-parameter gradients, zero-filled for unreachable params.
    pub fn param_grads(&self, tape_grads: &TapeGrads, params: &ParamSet) -> Gradients {
        let mut by_name: HashMap<&str, usize> = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param_name {
                by_name.insert(name.as_str(), i);
            }
        }
        let mut out = Gradients::default();
        for (name, tensor) in params.iter() {
            let grad = by_name
                .get(name)
                .and_then(|&i| tape_grads.grads[i].as_ref())
                .map(|g| Tensor::new(tensor.shape().to_vec(), g.clone()).expect("grad shape"))
                .unwrap_or_else(|| Tensor::zeros(tensor.shape()));
            out.insert(name.to_string(), grad);
        }
        out
    }
}

/// Raw per-node gradients from one reverse pass.
pub struct TapeGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl TapeGrads {
    /// Gradient at a specific var (zeros if the var was not reached).
    pub fn of(&self, tape: &Tape, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => Tensor::new(tape.value(var).shape().to_vec(), g.clone()).expect("shape"),
            None => Tensor::zeros(tape.value(var).shape()),
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Affine { .. } => "affine",
        Op::Matmul { .. } => "matmul",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Min { .. } => "min",
        Op::Scale { .. } => "scale",
        Op::AddScalar { .. } => "add_scalar",
        Op::Tanh { .. } => "tanh",
        Op::Gelu { .. } => "gelu",
        Op::Exp { .. } => "exp",
        Op::Ln { .. } => "ln",
        Op::Abs { .. } => "abs",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Clamp { .. } => "clamp",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Mha(_) => "multi_head_attention",
        Op::Sum { .. } => "sum",
        Op::RowSums { .. } => "row_sums",
        Op::MeanOverRows { .. } => "mean_over_rows",
        Op::BroadcastRow { .. } => "broadcast_row",
        Op::ConcatCols { .. } => "concat_cols",
        Op::ConcatRows { .. } => "concat_rows",
        Op::GatherRows { .. } => "gather_rows",
        Op::InterleaveRows3 { .. } => "interleave_rows3",
        Op::L2NormalizeRows { .. } => "l2_normalize_rows",
        Op::LseExclDiag { .. } => "lse_excl_diag",
    }
}

fn acc_into(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        None => *slot = Some(delta.to_vec()),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.values().iter().map(|&v| f(v)).collect()).expect("map shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.values()
            .iter()
            .zip(b.values())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
    .expect("zip shape")
}

/// tanh-form GELU; smooth everywhere so finite differences stay clean.
fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// c += a @ b for row-major a[m x k], b[k x n].
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow.iter()) {
                *cj += av * bj;
            }
        }
    }
}

/// c += aᵀ @ b for a[m x k], b[m x n] -> c[k x n].
pub(crate) fn matmul_at_b_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow.iter()) {
                *cj += av * bj;
            }
        }
    }
}

/// c += a @ bᵀ for a[m x k], b[n x k] -> c[m x n].
pub(crate) fn matmul_a_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cj) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (av, bv) in arow.iter().zip(brow.iter()) {
                s += av * bv;
            }
            *cj += s;
        }
    }
}

fn affine_raw(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Vec<f64>, NumError> {
    let (n, d_in) = x.dims2();
    let (wi, d_out) = w.dims2();
    if wi != d_in || b.numel() != d_out {
        return Err(NumError::BadShape("affine: shapes do not conform".into()));
    }
    let mut out = vec![0.0; n * d_out];
    for row in out.chunks_mut(d_out) {
        row.copy_from_slice(b.values());
    }
    matmul_acc(x.values(), w.values(), &mut out, n, d_in, d_out);
    Ok(out)
}

fn matmul_plain(x: &Tensor, w: &Tensor) -> Result<Vec<f64>, NumError> {
    let (n, d_in) = x.dims2();
    let (wi, d_out) = w.dims2();
    if wi != d_in {
        return Err(NumError::BadShape("matmul: shapes do not conform".into()));
    }
    let mut out = vec![0.0; n * d_out];
    matmul_acc(x.values(), w.values(), &mut out, n, d_in, d_out);
    Ok(out)
}
