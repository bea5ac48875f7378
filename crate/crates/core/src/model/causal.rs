//! Pre-norm transformer blocks with causal self-attention over chunk
//! embeddings. Row `i` of the output depends on rows `0..=i` of the input.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::{Bound, Params};
use crate::error::Result;
use crate::numerics::{AttentionMask, Tape, Tensor, Var};

pub(crate) fn init(cfg: &ModelConfig, params: &mut Params, rng: &mut ChaCha8Rng) {
    let d = cfg.dim;
    let hidden = d * cfg.ffn_mult;
    if let Some(max) = cfg.max_positions {
        params.init_uniform("pos", &[max, d], 0.1, rng);
    }
    for l in 0..cfg.causal_layers {
        let p = |s: &str| format!("causal.{l}.{s}");
        params.insert(p("ln1.g"), Tensor::filled(&[d], 1.0));
        params.insert(p("ln1.b"), Tensor::zeros(&[d]));
        for w in ["wq", "wk", "wv", "wo"] {
            params.init_linear(&p(w), d, d, rng);
        }
        params.insert(p("ln2.g"), Tensor::filled(&[d], 1.0));
        params.insert(p("ln2.b"), Tensor::zeros(&[d]));
        params.init_linear(&p("ff1.w"), d, hidden, rng);
        params.insert(p("ff1.b"), Tensor::zeros(&[hidden]));
        params.init_linear(&p("ff2.w"), hidden, d, rng);
        params.insert(p("ff2.b"), Tensor::zeros(&[d]));
    }
    params.insert("causal.lnf.g", Tensor::filled(&[d], 1.0));
    params.insert("causal.lnf.b", Tensor::zeros(&[d]));
}

/// `h = CausalAttn(e)` for `e: [N, D]`, `N >= 1`.
pub fn causal_attend(cfg: &ModelConfig, tape: &mut Tape, p: &Bound, e: Var) -> Result<Var> {
    let n = tape.shape(e)[0];
    let d = cfg.dim;
    let mut x = e;
    if cfg.max_positions.is_some() {
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.gather_rows(p.get("pos")?, &positions)?;
        x = tape.add(x, pos)?;
    }
    let mask = AttentionMask::causal(n);
    let dh = d / cfg.causal_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    for l in 0..cfg.causal_layers {
        let g = |s: &str| p.get(&format!("causal.{l}.{s}"));
        let a = tape.layer_norm(x, g("ln1.g")?, g("ln1.b")?)?;
        let q = tape.matmul(a, g("wq")?)?;
        let k = tape.matmul(a, g("wk")?)?;
        let v = tape.matmul(a, g("wv")?)?;
        let mut heads = Vec::with_capacity(cfg.causal_heads);
        for h in 0..cfg.causal_heads {
            let qh = tape.slice_last(q, h * dh, dh)?;
            let kh = tape.slice_last(k, h * dh, dh)?;
            let vh = tape.slice_last(v, h * dh, dh)?;
            let s = tape.matmul_t(qh, kh)?;
            let s = tape.scale(s, scale);
            let w = tape.masked_softmax(s, &mask)?;
            heads.push(tape.matmul(w, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_last(&heads)? };
        let o = tape.matmul(cat, g("wo")?)?;
        x = tape.add(x, o)?;

        let b = tape.layer_norm(x, g("ln2.g")?, g("ln2.b")?)?;
        let f = tape.matmul(b, g("ff1.w")?)?;
        let f = tape.add_bias(f, g("ff1.b")?)?;
        let f = tape.gelu(f);
        let f = tape.matmul(f, g("ff2.w")?)?;
        let f = tape.add_bias(f, g("ff2.b")?)?;
        x = tape.add(x, f)?;
    }
    tape.layer_norm(x, p.get("causal.lnf.g")?, p.get("causal.lnf.b")?)
}
