//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value and enough
//! bookkeeping to push gradients back to its inputs. [`Tape::backward`]
//! walks the nodes in reverse creation order, which is a valid topological
//! order because inputs always precede the nodes that consume them.
//!
//! ```
//! use lahst::numerics::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
//! let y = tape.sum(x);
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
//! ```

use super::mask::AttentionMask;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probability clamp used by [`Tape::bce`].
pub const BCE_EPS: f64 = 1e-7;

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a differentiable array recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        b_batched: bool,
    },
    MatMulT {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddBias {
        a: Var,
        bias: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    Tanh(Var),
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    SliceLast {
        a: Var,
        start: usize,
        len: usize,
    },
    ConcatLast {
        inputs: Vec<Var>,
        widths: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    Rows {
        a: Var,
        start: usize,
    },
    BroadcastBatch {
        a: Var,
        copies: usize,
    },
    EmbedMean {
        table: Var,
        chunks: Vec<Vec<u32>>,
    },
    GatherRows {
        table: Var,
        index: Vec<usize>,
    },
    LabelDot {
        d: Var,
        w: Var,
    },
    Bce {
        p: Var,
        target: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    trainable: bool,
}

/// Recording of one forward computation. Confined to a single thread;
/// independent tapes may run concurrently.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every recorded node and gradient.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is reported after [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].trainable = true;
        v
    }

    /// Leaf treated as a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ── linear algebra ──────────────────────────────────────────────

    /// Matrix product. `a` is `[m, k]` or `[batch, m, k]`; `b` is `[k, n]`
    /// (shared across the batch) or `[batch, k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || Error::Shape(format!("matmul of {sa:?} by {sb:?}"));
        let (batch, m, k) = match sa.as_slice() {
            [m, k] => (1, *m, *k),
            [bt, m, k] => (*bt, *m, *k),
            _ => return Err(mismatch()),
        };
        let (b_batched, kb, n) = match sb.as_slice() {
            [k, n] => (false, *k, *n),
            [bt, k, n] if sa.len() == 3 && *bt == batch => (true, *k, *n),
            _ => return Err(mismatch()),
        };
        if kb != k {
            return Err(mismatch());
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; batch * m * n];
        for bt in 0..batch {
            let ao = bt * m * k;
            let bo = if b_batched { bt * k * n } else { 0 };
            let oo = bt * m * n;
            for i in 0..m {
                let orow = &mut out[oo + i * n..oo + (i + 1) * n];
                for p in 0..k {
                    let x = av[ao + i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[bo + p * n..bo + (p + 1) * n];
                    for (o, &y) in orow.iter_mut().zip(brow) {
                        *o += x * y;
                    }
                }
            }
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_batched,
            },
        ))
    }

    /// `a · bᵀ` for rank-2 `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [n, k2]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(Error::Shape(format!(
                    "matmul_t of {sa:?} by transpose of {sb:?}"
                )))
            }
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bv[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulT { a, b, m, k, n }))
    }

    // ── elementwise ─────────────────────────────────────────────────

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b)))
    }

    /// Adds a rank-1 `bias` along the trailing dimension of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let c = self.value(a).last_dim();
        if self.shape(bias) != [c] {
            return Err(Error::Shape(format!(
                "bias {:?} against trailing dimension of {:?}",
                self.shape(bias),
                self.shape(a)
            )));
        }
        let bv = self.value(bias).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(&bv) {
                *x += b;
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::AddBias { a, bias }))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * factor).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Scale { a, factor })
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Op::Gelu(a),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Layer normalization over the trailing dimension.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(Error::Shape(format!(
                "layer norm parameters {:?}/{:?} for input {:?}",
                self.shape(gain),
                self.shape(bias),
                self.shape(x)
            )));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let xv = self.value(x).data();
        let rows = xv.len() / c.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    // ── attention ───────────────────────────────────────────────────

    /// Softmax over the trailing dimension after adding `mask`.
    ///
    /// Blocked entries receive exactly zero weight; the row maximum is taken
    /// over live entries only.
    pub fn masked_softmax(&mut self, scores: Var, mask: &AttentionMask) -> Result<Var> {
        let s = self.value(scores);
        let cols = s.last_dim();
        let rows = s.len() / cols.max(1);
        if mask.cols() != cols || mask.rows() == 0 || rows % mask.rows() != 0 {
            return Err(Error::Shape(format!(
                "mask [{}, {}] against scores {:?}",
                mask.rows(),
                mask.cols(),
                s.shape()
            )));
        }
        let group = rows / mask.rows();
        let sv = s.data();
        let mut out = vec![0.0; sv.len()];
        for r in 0..rows {
            let mrow = mask.row(r / group);
            let srow = &sv[r * cols..(r + 1) * cols];
            let mut max = f64::NEG_INFINITY;
            for (x, m) in srow.iter().zip(mrow) {
                if *m == 0.0 && *x > max {
                    max = *x;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::Contract(format!(
                    "softmax row {r} is fully masked"
                )));
            }
            let orow = &mut out[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for ((o, x), m) in orow.iter_mut().zip(srow).zip(mrow) {
                if *m == 0.0 {
                    *o = (x + m - max).exp();
                    total += *o;
                }
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        let shape = s.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(scores)))
    }

    pub fn softmax(&mut self, scores: Var) -> Result<Var> {
        let s = self.value(scores);
        let mask = AttentionMask::none(1, s.last_dim());
        self.masked_softmax(scores, &mask)
    }

    // ── structural ──────────────────────────────────────────────────

    /// Columns `start..start + len` of the trailing dimension.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let c = t.last_dim();
        if start + len > c {
            return Err(Error::Shape(format!(
                "slice {start}..{} of trailing dimension {c}",
                start + len
            )));
        }
        let data: Vec<f64> = t
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceLast { a, start, len }))
    }

    /// Concatenates along the trailing dimension.
    pub fn concat_last(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero arrays".into()))?;
        let lead = &self.shape(*first)[..self.shape(*first).len() - 1];
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if &s[..s.len() - 1] != lead {
                return Err(Error::Shape(format!(
                    "concat of {:?} with {:?}",
                    self.shape(*first),
                    s
                )));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows = self.value(*first).len() / widths[0].max(1);
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in inputs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(v).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::ConcatLast {
                inputs: inputs.to_vec(),
                widths,
            },
        ))
    }

    /// Concatenates along the leading dimension.
    pub fn concat_rows(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero arrays".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &v in inputs {
            let s = self.shape(v);
            if s[1..] != tail[..] {
                return Err(Error::Shape(format!(
                    "row concat of {:?} with {:?}",
                    self.shape(*first),
                    s
                )));
            }
            lead += s[0];
            data.extend_from_slice(self.value(v).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatRows(inputs.to_vec())))
    }

    /// Leading-dimension rows `start..end`.
    pub fn rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let lead = t.shape().first().copied().unwrap_or(0);
        if start > end || end > lead {
            return Err(Error::Shape(format!(
                "rows {start}..{end} of {:?}",
                t.shape()
            )));
        }
        let stride = t.len() / lead.max(1);
        let data = t.data()[start * stride..end * stride].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = end - start;
        Ok(self.push(Tensor::new(shape, data)?, Op::Rows { a, start }))
    }

    /// Repeats `a` along a new leading batch dimension.
    pub fn broadcast_batch(&mut self, a: Var, copies: usize) -> Var {
        let t = self.value(a);
        let mut data = Vec::with_capacity(t.len() * copies);
        for _ in 0..copies {
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![copies];
        shape.extend_from_slice(t.shape());
        self.push(
            Tensor::new(shape, data).unwrap(),
            Op::BroadcastBatch { a, copies },
        )
    }

    // ── lookups ─────────────────────────────────────────────────────

    /// Mean of `table` rows for each token list; returns `[chunks, dim]`.
    pub fn embed_mean(&mut self, table: Var, chunks: &[Vec<u32>]) -> Result<Var> {
        let t = self.value(table);
        let (vocab, dim) = match t.shape() {
            [v, d] => (*v, *d),
            s => return Err(Error::Shape(format!("embedding table {s:?}"))),
        };
        let mut out = vec![0.0; chunks.len() * dim];
        for (c, toks) in chunks.iter().enumerate() {
            if toks.is_empty() {
                return Err(Error::Validation(format!("chunk {c} has no tokens")));
            }
            let row = &mut out[c * dim..(c + 1) * dim];
            for &tok in toks {
                let tok = tok as usize;
                if tok >= vocab {
                    return Err(Error::Validation(format!(
                        "token id {tok} outside vocabulary of {vocab}"
                    )));
                }
                for (o, e) in row.iter_mut().zip(t.row(tok)) {
                    *o += e;
                }
            }
            let inv = 1.0 / toks.len() as f64;
            for o in row.iter_mut() {
                *o *= inv;
            }
        }
        Ok(self.push(
            Tensor::new(vec![chunks.len(), dim], out)?,
            Op::EmbedMean {
                table,
                chunks: chunks.to_vec(),
            },
        ))
    }

    /// Rows of `table` selected by `index`; returns `[index.len(), dim]`.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, dim) = match t.shape() {
            [r, d] => (*r, *d),
            s => return Err(Error::Shape(format!("lookup table {s:?}"))),
        };
        let mut out = Vec::with_capacity(index.len() * dim);
        for &i in index {
            if i >= rows {
                return Err(Error::Shape(format!("row {i} of table with {rows} rows")));
            }
            out.extend_from_slice(t.row(i));
        }
        Ok(self.push(
            Tensor::new(vec![index.len(), dim], out)?,
            Op::GatherRows {
                table,
                index: index.to_vec(),
            },
        ))
    }

    /// `out[t, l] = d[t, l, :] · w[l, :]` for `d: [n, L, D]`, `w: [L, D]`.
    pub fn label_dot(&mut self, d: Var, w: Var) -> Result<Var> {
        let sd = self.shape(d).to_vec();
        let sw = self.shape(w).to_vec();
        let (n, l, dim) = match (sd.as_slice(), sw.as_slice()) {
            ([n, l, dd], [l2, dd2]) if l == l2 && dd == dd2 => (*n, *l, *dd),
            _ => return Err(Error::Shape(format!("label_dot of {sd:?} with {sw:?}"))),
        };
        let dv = self.value(d).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; n * l];
        for t in 0..n {
            for j in 0..l {
                let drow = &dv[(t * l + j) * dim..(t * l + j + 1) * dim];
                let wrow = &wv[j * dim..(j + 1) * dim];
                out[t * l + j] = drow.iter().zip(wrow).map(|(a, b)| a * b).sum();
            }
        }
        Ok(self.push(Tensor::new(vec![n, l], out)?, Op::LabelDot { d, w }))
    }

    // ── reductions and losses ───────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 targets.
    /// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, p: Var, target: &Tensor) -> Result<Var> {
        let pv = self.value(p);
        if pv.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "bce of {:?} against targets {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        if pv.is_empty() {
            return Err(Error::Contract("bce over an empty array".into()));
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| bce_term(p, y))
            .sum();
        let loss = total / pv.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                target: target.data().to_vec(),
            },
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Populates gradients of the scalar `loss` with respect to every node.
    /// Trainable leaves unreachable from `loss` receive zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.trainable && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.len()]);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_batched,
            } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let ga = acc(grads, *a, av.len());
                for bt in 0..batch {
                    let bo = if *b_batched { bt * k * n } else { 0 };
                    for r in 0..m {
                        let grow = &g[(bt * m + r) * n..(bt * m + r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[bo + p * n..bo + (p + 1) * n];
                            ga[(bt * m + r) * k + p] +=
                                grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                let gb = acc(grads, *b, bv.len());
                for bt in 0..batch {
                    let bo = if *b_batched { bt * k * n } else { 0 };
                    for r in 0..m {
                        let grow = &g[(bt * m + r) * n..(bt * m + r + 1) * n];
                        for p in 0..k {
                            let x = av[(bt * m + r) * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            let gbrow = &mut gb[bo + p * n..bo + (p + 1) * n];
                            for (o, y) in gbrow.iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                }
            }
            Op::MatMulT { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let ga = acc(grads, *a, av.len());
                for r in 0..m {
                    for j in 0..n {
                        let x = g[r * n + j];
                        for p in 0..k {
                            ga[r * k + p] += x * bv[j * k + p];
                        }
                    }
                }
                let gb = acc(grads, *b, bv.len());
                for r in 0..m {
                    for j in 0..n {
                        let x = g[r * n + j];
                        for p in 0..k {
                            gb[j * k + p] += x * av[r * k + p];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                add_into(acc(grads, *b, g.len()), g);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                for ((o, x), y) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(bv) {
                    *o += x * y;
                }
                for ((o, x), y) in acc(grads, *b, g.len()).iter_mut().zip(g).zip(av) {
                    *o += x * y;
                }
            }
            Op::AddBias { a, bias } => {
                add_into(acc(grads, *a, g.len()), g);
                let c = self.value(*bias).len();
                let gb = acc(grads, *bias, c);
                for row in g.chunks(c) {
                    add_into(gb, row);
                }
            }
            Op::Scale { a, factor } => {
                for (o, x) in acc(grads, *a, g.len()).iter_mut().zip(g) {
                    *o += x * factor;
                }
            }
            Op::Tanh(a) => {
                for ((o, x), y) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(out) {
                    *o += x * (1.0 - y * y);
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                for ((o, x), &z) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(av) {
                    let inner = GELU_C * (z + GELU_A * z * z * z);
                    let th = inner.tanh();
                    let d = 0.5 * (1.0 + th)
                        + 0.5 * z * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * z * z);
                    *o += x * d;
                }
            }
            Op::Sigmoid(a) => {
                for ((o, x), y) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(out) {
                    *o += x * y * (1.0 - y);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = self.value(*gain).len();
                let gv = self.value(*gain).data();
                {
                    let gg = acc(grads, *gain, c);
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                {
                    let gbias = acc(grads, *bias, c);
                    for grow in g.chunks(c) {
                        add_into(gbias, grow);
                    }
                }
                let gx = acc(grads, *x, g.len());
                let cf = c as f64;
                for (r, (grow, hrow)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                    let dh: Vec<f64> = grow.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let s1: f64 = dh.iter().sum();
                    let s2: f64 = dh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[r * c + j] += inv_std[r] / cf * (cf * dh[j] - s1 - hrow[j] * s2);
                    }
                }
            }
            Op::Softmax(a) => {
                let c = node.value.last_dim();
                let ga = acc(grads, *a, g.len());
                for (r, (grow, yrow)) in g.chunks(c).zip(out.chunks(c)).enumerate() {
                    let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                    for j in 0..c {
                        ga[r * c + j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }
            Op::SliceLast { a, start, len } => {
                let c = self.value(*a).last_dim();
                let ga = acc(grads, *a, self.value(*a).len());
                for (r, grow) in g.chunks(*len).enumerate() {
                    add_into(&mut ga[r * c + start..r * c + start + len], grow);
                }
            }
            Op::ConcatLast { inputs, widths } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&v, &w) in inputs.iter().zip(widths) {
                    let gv = acc(grads, v, self.value(v).len());
                    for (r, grow) in g.chunks(total).enumerate() {
                        add_into(&mut gv[r * w..(r + 1) * w], &grow[offset..offset + w]);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(inputs) => {
                let mut offset = 0;
                for &v in inputs {
                    let len = self.value(v).len();
                    add_into(acc(grads, v, len), &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::Rows { a, start } => {
                let t = self.value(*a);
                let stride = t.len() / t.shape()[0].max(1);
                let ga = acc(grads, *a, t.len());
                add_into(&mut ga[start * stride..start * stride + g.len()], g);
            }
            Op::BroadcastBatch { a, copies } => {
                let len = self.value(*a).len();
                let ga = acc(grads, *a, len);
                for c in 0..*copies {
                    add_into(ga, &g[c * len..(c + 1) * len]);
                }
            }
            Op::EmbedMean { table, chunks } => {
                let t = self.value(*table);
                let dim = t.last_dim();
                let gt = acc(grads, *table, t.len());
                for (c, toks) in chunks.iter().enumerate() {
                    let inv = 1.0 / toks.len() as f64;
                    let grow = &g[c * dim..(c + 1) * dim];
                    for &tok in toks {
                        let trow = &mut gt[tok as usize * dim..(tok as usize + 1) * dim];
                        for (o, x) in trow.iter_mut().zip(grow) {
                            *o += x * inv;
                        }
                    }
                }
            }
            Op::GatherRows { table, index } => {
                let t = self.value(*table);
                let dim = t.last_dim();
                let gt = acc(grads, *table, t.len());
                for (r, &i) in index.iter().enumerate() {
                    add_into(&mut gt[i * dim..(i + 1) * dim], &g[r * dim..(r + 1) * dim]);
                }
            }
            Op::LabelDot { d, w } => {
                let dv = self.value(*d).data();
                let wv = self.value(*w).data();
                let (l, dim) = (self.shape(*w)[0], self.shape(*w)[1]);
                let n = g.len() / l.max(1);
                {
                    let gd = acc(grads, *d, dv.len());
                    for t in 0..n {
                        for j in 0..l {
                            let x = g[t * l + j];
                            let base = (t * l + j) * dim;
                            for p in 0..dim {
                                gd[base + p] += x * wv[j * dim + p];
                            }
                        }
                    }
                }
                let gw = acc(grads, *w, wv.len());
                for t in 0..n {
                    for j in 0..l {
                        let x = g[t * l + j];
                        let base = (t * l + j) * dim;
                        for p in 0..dim {
                            gw[j * dim + p] += x * dv[base + p];
                        }
                    }
                }
            }
            Op::Bce { p, target } => {
                let pv = self.value(*p).data();
                let scale = g[0] / pv.len() as f64;
                let gp = acc(grads, *p, pv.len());
                for ((o, &p), &y) in gp.iter_mut().zip(pv).zip(target) {
                    if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                        continue;
                    }
                    *o += scale * (-y / p + (1.0 - y) / (1.0 - p));
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                for o in acc(grads, *a, len).iter_mut() {
                    *o += g[0];
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One element of the clamped binary cross-entropy.
pub fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
