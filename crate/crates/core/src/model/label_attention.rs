//! Masked multi-head label attention and the temporal output layer.
//!
//! Label embeddings `q: [L, D]` act as queries and the context `h: [N, D]`
//! supplies keys and values. At temporal position `t` the mask hides every
//! context row after `t`. All positions are computed at once by giving the
//! scores a leading temporal batch dimension and stacking the masks.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::{Bound, Params};
use crate::error::{Error, Result};
use crate::numerics::{AttentionMask, Tape, Tensor, Var};

pub(crate) fn init(cfg: &ModelConfig, params: &mut Params, rng: &mut ChaCha8Rng) {
    let d = cfg.dim;
    params.init_uniform("label.q", &[cfg.num_labels, d], 1.0, rng);
    for w in ["wq", "wk", "wv", "wo"] {
        params.init_linear(&format!("label.{w}"), d, d, rng);
    }
    // one weight vector per label, fan-in D
    params.init_uniform("out.w", &[cfg.num_labels, d], 1.0 / (d as f64).sqrt(), rng);
    if cfg.output_bias {
        params.insert("out.b", Tensor::zeros(&[cfg.num_labels]));
    }
}

/// Per-head projections shared by the single-position and batched paths.
struct Projected {
    queries: Var,
    keys: Var,
    values: Var,
}

fn project(tape: &mut Tape, p: &Bound, h: Var) -> Result<Projected> {
    let q = p.get("label.q")?;
    Ok(Projected {
        queries: tape.matmul(q, p.get("label.wq")?)?,
        keys: tape.matmul(h, p.get("label.wk")?)?,
        values: tape.matmul(h, p.get("label.wv")?)?,
    })
}

fn head_scores(cfg: &ModelConfig, tape: &mut Tape, proj: &Projected, head: usize) -> Result<(Var, Var)> {
    let dh = cfg.dim / cfg.label_heads;
    let qh = tape.slice_last(proj.queries, head * dh, dh)?;
    let kh = tape.slice_last(proj.keys, head * dh, dh)?;
    let vh = tape.slice_last(proj.values, head * dh, dh)?;
    let s = tape.matmul_t(qh, kh)?;
    Ok((tape.scale(s, 1.0 / (dh as f64).sqrt()), vh))
}

fn combine_heads(tape: &mut Tape, p: &Bound, heads: &[Var]) -> Result<Var> {
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat_last(heads)? };
    tape.matmul(cat, p.get("label.wo")?)
}

/// Label-wise document embeddings `d_t: [L, D]` at 1-based position `t`,
/// with the per-head attention weights `[L, N]`.
pub fn label_attend(
    cfg: &ModelConfig,
    tape: &mut Tape,
    p: &Bound,
    h: Var,
    t: usize,
) -> Result<(Var, Vec<Var>)> {
    let n = tape.shape(h)[0];
    let mask = AttentionMask::time(t, n)?;
    let proj = project(tape, p, h)?;
    let mut heads = Vec::with_capacity(cfg.label_heads);
    let mut weights = Vec::with_capacity(cfg.label_heads);
    for head in 0..cfg.label_heads {
        let (s, vh) = head_scores(cfg, tape, &proj, head)?;
        let w = tape.masked_softmax(s, &mask)?;
        heads.push(tape.matmul(w, vh)?);
        weights.push(w);
    }
    Ok((combine_heads(tape, p, &heads)?, weights))
}

/// All positions at once: `d: [N, L, D]` and per-head weights `[N, L, N]`.
pub fn label_attend_all(
    cfg: &ModelConfig,
    tape: &mut Tape,
    p: &Bound,
    h: Var,
) -> Result<(Var, Vec<Var>)> {
    let n = tape.shape(h)[0];
    if n == 0 {
        return Err(Error::Contract("label attention over an empty context".into()));
    }
    let mask = AttentionMask::causal(n);
    let proj = project(tape, p, h)?;
    let mut heads = Vec::with_capacity(cfg.label_heads);
    let mut weights = Vec::with_capacity(cfg.label_heads);
    for head in 0..cfg.label_heads {
        let (s, vh) = head_scores(cfg, tape, &proj, head)?;
        // [L, N] -> [N, L, N]; mask row t covers batch entry t
        let s = tape.broadcast_batch(s, n);
        let w = tape.masked_softmax(s, &mask)?;
        heads.push(tape.matmul(w, vh)?);
        weights.push(w);
    }
    Ok((combine_heads(tape, p, &heads)?, weights))
}

/// `p[t, l] = sigmoid(w_l · d[t, l] + b_l)`; returns `[N, L]`.
pub fn predict(tape: &mut Tape, p: &Bound, d: Var) -> Result<Var> {
    let mut z = tape.label_dot(d, p.get("out.w")?)?;
    if let Some(b) = p.opt("out.b") {
        z = tape.add_bias(z, b)?;
    }
    Ok(tape.sigmoid(z))
}
