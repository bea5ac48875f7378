// Acceptance suite. Runs without the libtest harness so that every criterion
// prints its own PASS/FAIL line; the process fails if any criterion does.

use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use lahst::cli::{eval_run, gen_data, inspect_attention_run, train_run};
use lahst::config::RunConfig;
use lahst::corpus::{chunk_stay, generate_corpus, Category, Chunk, ChunkSequence, SynthConfig};
use lahst::evaluation::{
    macro_auc, macro_f1, micro_auc, micro_f1, precision_at_k, AblationReport, AttentionSummary, InferenceContext,
    MetricsReport,
};
use lahst::inference::{eca_infer, label_stage_windowed, InferenceConfig};
use lahst::model::{label_attend, label_attend_all, Bound, Lahst, ModelConfig, Params};
use lahst::numerics::{gradcheck, AttentionMask, Tape, Tensor};
use lahst::training::{sample_indices, ContextStrategy};

type Outcome = (bool, String);

// ---------------------------------------------------------------- helpers

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn jittered(cfg: ModelConfig, seed: u64) -> Lahst {
    let mut m = Lahst::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in m.params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    m
}

fn random_chunks(n: usize, vocab: usize, rng: &mut ChaCha8Rng) -> ChunkSequence {
    let t0 = NaiveDate::from_ymd_opt(2100, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let chunks = (0..n)
        .map(|i| Chunk {
            tokens: (0..rng.random_range(1..=8)).map(|_| rng.random_range(0..vocab as u32)).collect(),
            note_id: format!("n{i}"),
            category: Category::ALL[rng.random_range(0..Category::COUNT)],
            timestamp: t0 + chrono::Duration::hours(i as i64),
            position: i,
        })
        .collect();
    ChunkSequence { stay_id: "S".into(), admission_time: t0, chunks }
}

fn small_model_config(dim: usize, labels: usize, heads: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        num_labels: labels,
        dim,
        label_heads: heads,
        causal_heads: heads,
        chunk_tokens: 8,
        ..ModelConfig::default()
    }
}

// ------------------------------------------------- 1. gradient correctness

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst_model: f64 = 0.0;
    for heads in [1, 2] {
        let m = jittered(small_model_config(8, 3, heads, 24), 100 + heads as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(7 + heads as u64);
        let seq = random_chunks(5, 24, &mut rng);
        let y = Tensor::new(vec![5, 3], (0..15).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect()).unwrap();
        let names = m.params.names();
        let inputs: Vec<(String, Tensor)> = m.params.iter().map(|(k, t)| (k.clone(), t.clone())).collect();
        let r = gradcheck::check(&inputs, 1e-5, 1e-6, |tape, vars| {
            let bound = Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let f = m.forward_on_tape(tape, &bound, &seq.chunks)?;
            tape.bce(f.probs, &y)
        })
        .unwrap();
        worst_model = worst_model.max(r.max_rel_err);
    }

    type Build = fn(&mut Tape, &[Var]) -> lahst::Result<Var>;
    use lahst::numerics::Var;
    let ops: Vec<(Vec<Vec<usize>>, Build)> = vec![
        (vec![vec![3, 4], vec![4, 2]], |t, v| {
            let m = t.matmul(v[0], v[1])?;
            let s = t.tanh(m);
            Ok(t.sum(s))
        }),
        (vec![vec![3, 5], vec![5], vec![5]], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            let s = t.tanh(y);
            let s = t.mul(s, s)?;
            Ok(t.sum(s))
        }),
        (vec![vec![2, 4, 4], vec![2, 4, 4]], |t, v| {
            let mask = AttentionMask::from_fn(2, 4, |r, c| c <= r + 1).unwrap();
            let p = t.masked_softmax(v[0], &mask)?;
            let w = t.mul(p, v[1])?;
            Ok(t.sum(w))
        }),
        (vec![vec![4, 3]], |t, v| {
            let a = t.scale(v[0], 2.5);
            let g = t.gelu(a);
            Ok(t.sum(g))
        }),
        (vec![vec![6, 3]], |t, v| {
            let e = t.embed_mean(v[0], &[vec![0, 1, 1], vec![5], vec![2, 3, 4, 0]])?;
            let s = t.tanh(e);
            Ok(t.sum(s))
        }),
        (vec![vec![3, 2, 4], vec![2, 4]], |t, v| {
            let z = t.label_dot(v[0], v[1])?;
            let p = t.sigmoid(z);
            let y = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
            t.bce(p, &y)
        }),
    ];
    let mut worst_op: f64 = 0.0;
    for (i, (shapes, build)) in ops.into_iter().enumerate() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + i as u64);
            let inputs: Vec<(String, Tensor)> =
                shapes.iter().enumerate().map(|(k, s)| (format!("x{k}"), random_tensor(s, &mut rng))).collect();
            worst_op = worst_op.max(gradcheck::check(&inputs, 1e-5, 1e-6, build).unwrap().max_rel_err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst_model < 1e-3 && worst_op < 1e-4 && secs < 60.0,
        format!("model max rel err {worst_model:.2e} (< 1e-3), per-op {worst_op:.2e} (< 1e-4), {secs:.1}s"),
    )
}

// ------------------------------------------------------------ 2. causality

fn causality() -> Outcome {
    let start = Instant::now();
    let syn = SynthConfig { patients: 50, ..SynthConfig::default() };
    let stays = generate_corpus(&syn, 21).unwrap();
    let m = jittered(ModelConfig { dim: 16, label_heads: 2, causal_heads: 2, ..ModelConfig::default() }, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (mut leak, mut beyond, mut sum_err) = (0.0f64, 0.0f64, 0.0f64);
    for stay in &stays {
        let full = chunk_stay(stay, m.config.chunk_tokens).unwrap();
        let seq = full.slice(0..full.len().min(12));
        let n = seq.len();
        let base = m.forward(&seq).unwrap();
        for w in &base.trace.heads {
            for t in 0..n {
                for l in 0..m.config.num_labels {
                    let row = &w.data()[(t * m.config.num_labels + l) * n..][..n];
                    beyond = beyond.max(row[t + 1..].iter().fold(0.0, |a, x| a.max(x.abs())));
                    sum_err = sum_err.max((row[..=t].iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
        for t in 0..n.saturating_sub(1) {
            let mut other = seq.clone();
            for c in &mut other.chunks[t + 1..] {
                c.tokens = (0..5).map(|_| rng.random_range(0..syn.vocab_size as u32)).collect();
                c.category = Category::ALL[rng.random_range(0..Category::COUNT)];
            }
            let p = m.forward(&other).unwrap().predictions.probs;
            let l = m.config.num_labels;
            for (a, b) in base.predictions.probs.data()[..(t + 1) * l].iter().zip(&p.data()[..(t + 1) * l]) {
                leak = leak.max((a - b).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        leak < 1e-12 && beyond == 0.0 && sum_err < 1e-9 && secs < 60.0,
        format!("max change before t {leak:.1e}, max weight beyond t {beyond:.1e}, row-sum error {sum_err:.1e}, {secs:.1}s"),
    )
}

// ---------------------------------------------------------- 3. ECA exactness

fn eca_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst: f64 = 0.0;
    let mut longest = 0;
    let instances = 60;
    for i in 0..instances {
        let n = if i == 0 { 181 } else { rng.random_range(1..=181) };
        longest = longest.max(n);
        let heads = [1, 2, 4][i % 3];
        let m = jittered(small_model_config(16, 10, heads, 50), 300 + i as u64);
        let h = random_tensor(&[n, 16], &mut rng);
        let nmax = rng.random_range(1..=32);
        let windowed = label_stage_windowed(&m, &h, nmax).unwrap();
        let (single, _) = m.label_stage(&h, &[], &[]).unwrap();
        worst = worst.max(windowed.max_abs_diff(&single.probs));
    }
    let mut short_equal = true;
    for i in 0..20 {
        let m = jittered(small_model_config(16, 10, 2, 50), 400 + i);
        let nmax = 16;
        let seq = random_chunks(rng.random_range(1..=nmax), 50, &mut rng);
        let a = eca_infer(&m, &seq, InferenceConfig { nmax, ..Default::default() }).unwrap();
        let b = m.forward(&seq).unwrap();
        short_equal &= a.predictions.probs == b.predictions.probs && a.trace == b.trace;
    }
    (
        worst < 1e-12 && short_equal,
        format!("{instances} instances up to N={longest}: max diff {worst:.1e} (< 1e-12); short stays identical to forward: {short_equal}"),
    )
}

// ------------------------------------------------ 4. batched/loop equality

fn label_attend_oracle(cfg: &ModelConfig, params: &Params, h: &Tensor, t: usize) -> Vec<f64> {
    let d = cfg.dim;
    let dh = d / cfg.label_heads;
    let get = |name: &str| params.get(name).unwrap();
    let (q, wq, wk, wv, wo) = (get("label.q"), get("label.wq"), get("label.wk"), get("label.wv"), get("label.wo"));
    let proj = |x: &[f64], w: &Tensor, col: usize| (0..d).map(|k| x[k] * w.at(&[k, col])).sum::<f64>();
    let mut out = Vec::with_capacity(cfg.num_labels * d);
    for l in 0..cfg.num_labels {
        let mut cat = vec![0.0; d];
        for hd in 0..cfg.label_heads {
            let cols = hd * dh..(hd + 1) * dh;
            let ql: Vec<f64> = cols.clone().map(|c| proj(q.row(l), wq, c)).collect();
            let scores: Vec<f64> = (0..t)
                .map(|i| {
                    let ki: Vec<f64> = cols.clone().map(|c| proj(h.row(i), wk, c)).collect();
                    ql.iter().zip(&ki).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()
                })
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = ex.iter().sum();
            for (i, e) in ex.iter().enumerate() {
                for (j, c) in cols.clone().enumerate() {
                    cat[hd * dh + j] += e / z * proj(h.row(i), wv, c);
                }
            }
        }
        out.extend((0..d).map(|c| (0..d).map(|k| cat[k] * wo.at(&[k, c])).sum::<f64>()));
    }
    out
}

fn batched_loop_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (mut vs_loop, mut vs_oracle): (f64, f64) = (0.0, 0.0);
    for i in 0..100u64 {
        let heads = [1, 2, 4][i as usize % 3];
        let n = rng.random_range(1..=16);
        let cfg = small_model_config(8, rng.random_range(1..=6), heads, 24);
        let m = jittered(cfg.clone(), 500 + i);
        let h = random_tensor(&[n, 8], &mut rng);
        let mut tape = Tape::new();
        let p = m.params.bind(&mut tape, false);
        let hv = tape.constant(h.clone());
        let (all, _) = label_attend_all(&cfg, &mut tape, &p, hv).unwrap();
        let all = tape.value(all).clone();
        let block = cfg.num_labels * cfg.dim;
        for t in 1..=n {
            let (single, _) = label_attend(&cfg, &mut tape, &p, hv, t).unwrap();
            let got = &all.data()[(t - 1) * block..t * block];
            let diff = |xs: &[f64]| got.iter().zip(xs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            vs_loop = vs_loop.max(diff(tape.value(single).data()));
            vs_oracle = vs_oracle.max(diff(&label_attend_oracle(&cfg, &m.params, &h, t)));
        }
    }
    (
        vs_loop < 1e-12 && vs_oracle < 1e-12,
        format!("100 instances: vs per-position calls {vs_loop:.1e}, vs explicit loop {vs_oracle:.1e} (< 1e-12)"),
    )
}

// -------------------------------------------------------- 5. metric oracles

fn f1_from(pairs: impl Iterator<Item = (bool, bool)>) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (pred, gold) in pairs {
        match (pred, gold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

// Pairwise definition: P(score_pos > score_neg) + 0.5 P(tie).
fn auc_pairwise(s: &[f64], g: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if g[i] && !g[j] {
                pairs += 1.0;
                if s[i] > s[j] {
                    wins += 1.0;
                } else if s[i] == s[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut failures = Vec::new();
    let mut auc_err: f64 = 0.0;
    let instances = 150;
    for i in 0..instances {
        let p = rng.random_range(1..=30);
        let l = rng.random_range(5..=10);
        // a coarse grid makes ties common
        let scores: Vec<Vec<f64>> = (0..p).map(|_| (0..l).map(|_| rng.random_range(0..=10) as f64 / 10.0).collect()).collect();
        let gold: Vec<Vec<bool>> = (0..p).map(|_| (0..l).map(|_| rng.random_bool(0.3)).collect()).collect();
        let st = Tensor::from_rows(&scores);
        let gt = Tensor::from_rows(&gold.iter().map(|r| r.iter().map(|&b| f64::from(b as u8)).collect()).collect::<Vec<_>>());
        let cells = || scores.iter().flatten().zip(gold.iter().flatten()).map(|(&s, &g)| (s >= 0.5, g));

        if micro_f1(&st, &gt, 0.5).unwrap() != f1_from(cells()) {
            failures.push(format!("micro-f1 #{i}"));
        }
        let macro_ref = (0..l).map(|j| f1_from((0..p).map(|r| (scores[r][j] >= 0.5, gold[r][j])))).sum::<f64>() / l as f64;
        if macro_f1(&st, &gt, 0.5).unwrap() != macro_ref {
            failures.push(format!("macro-f1 #{i}"));
        }

        let flat_s: Vec<f64> = scores.iter().flatten().copied().collect();
        let flat_g: Vec<bool> = gold.iter().flatten().copied().collect();
        match (micro_auc(&st, &gt).unwrap(), auc_pairwise(&flat_s, &flat_g)) {
            (Some(a), Some(b)) => auc_err = auc_err.max((a - b).abs()),
            (None, None) => {}
            _ => failures.push(format!("micro-auc definedness #{i}")),
        }
        let per_label: Vec<Option<f64>> = (0..l)
            .map(|j| {
                let s: Vec<f64> = (0..p).map(|r| scores[r][j]).collect();
                let g: Vec<bool> = (0..p).map(|r| gold[r][j]).collect();
                auc_pairwise(&s, &g)
            })
            .collect();
        let used: Vec<f64> = per_label.iter().flatten().copied().collect();
        let got = macro_auc(&st, &gt).unwrap();
        if got.skipped != l - used.len() {
            failures.push(format!("macro-auc skipped #{i}"));
        }
        match (got.value, (!used.is_empty()).then(|| used.iter().sum::<f64>() / used.len() as f64)) {
            (Some(a), Some(b)) => auc_err = auc_err.max((a - b).abs()),
            (None, None) => {}
            _ => failures.push(format!("macro-auc definedness #{i}")),
        }

        // label j is in the top 5 when fewer than 5 labels outrank it
        // (higher score, or equal score at a lower index)
        let p5_ref = (0..p)
            .map(|r| {
                let row = &scores[r];
                let hits = (0..l)
                    .filter(|&j| {
                        let rank = (0..l).filter(|&k| row[k] > row[j] || (row[k] == row[j] && k < j)).count();
                        rank < 5 && gold[r][j]
                    })
                    .count();
                hits as f64 / 5.0
            })
            .sum::<f64>()
            / p as f64;
        if precision_at_k(&st, &gt, 5).unwrap() != p5_ref {
            failures.push(format!("p@5 #{i}"));
        }
    }
    (
        failures.is_empty() && auc_err < 1e-12,
        format!("{instances} instances: F1/P@5 mismatches {}, max AUC diff {auc_err:.1e} (< 1e-12){}", failures.len(), if failures.is_empty() { String::new() } else { format!(" first: {}", failures[0]) }),
    )
}

// -------------------------------------------------------------- 6. sampling

fn sampling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut shape_ok = true;
    for _ in 0..2000 {
        let len = rng.random_range(0..=40);
        let nmax = rng.random_range(1..=20);
        let idx = sample_indices(len, nmax, &mut rng);
        shape_ok &= idx.len() == nmax.min(len) && idx.windows(2).all(|w| w[0] < w[1]) && idx.iter().all(|&i| i < len);
    }
    let (len, nmax, draws) = (20usize, 8usize, 10_000usize);
    let mut counts = vec![0usize; len];
    for _ in 0..draws {
        for i in sample_indices(len, nmax, &mut rng) {
            counts[i] += 1;
        }
    }
    let expected = (draws * nmax) as f64 / len as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((len - 1) as f64).unwrap().cdf(stat);
    (
        shape_ok && p > 0.01,
        format!("index invariants hold: {shape_ok}; chi-square {stat:.2} on {} dof, p = {p:.3} (> 0.01)", len - 1),
    )
}

// --------------------------------------------- 7-9. trained synthetic models

const SEEDS: [u64; 3] = [0, 1, 2];
const PRE_DISCHARGE: [&str; 4] = ["p25", "p50", "p75", "excl-ds"];

struct Run {
    report: MetricsReport,
    grid: AblationReport,
    attention: Vec<AttentionSummary>,
}

struct Trained {
    random: Vec<Run>,
    last: Vec<Run>,
    minutes: f64,
}

fn acceptance_config() -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/acceptance.toml")).unwrap()
}

fn configured(root: &Path, name: &str, seed: u64, strategy: ContextStrategy) -> RunConfig {
    let mut cfg = acceptance_config();
    cfg.seed = seed;
    cfg.train.context_strategy = strategy;
    cfg.data.dir = root.join("data");
    cfg.out = root.join(name);
    cfg.finalize().unwrap()
}

fn generate(root: &Path, dir: &str) -> PathBuf {
    let cfg = acceptance_config();
    let out = root.join(dir);
    gen_data(&RunConfig { out: out.clone(), ..cfg }.finalize().unwrap(), false).unwrap();
    out
}

fn train_and_eval(cfg: &RunConfig) -> Run {
    train_run(cfg, false, None).unwrap();
    let ck = cfg.out.join("checkpoint.bin");
    let (report, grid) = eval_run(cfg, &ck, "test", true).unwrap();
    let mut attn_cfg = cfg.clone();
    attn_cfg.eval.cutoffs = vec!["p25".into(), "full".into()];
    let attention = inspect_attention_run(&attn_cfg, &ck, &cfg.data.dir.join("test.jsonl")).unwrap();
    Run { report, grid: grid.unwrap(), attention }
}

fn train_all(root: &Path) -> Trained {
    let start = Instant::now();
    generate(root, "data");
    let run = |name: &str, seed, strategy| train_and_eval(&configured(root, &format!("{name}{seed}"), seed, strategy));
    let random = SEEDS.iter().map(|&s| run("random", s, ContextStrategy::RandomSubsequence)).collect();
    let last = SEEDS.iter().map(|&s| run("last", s, ContextStrategy::LastChunks)).collect();
    Trained { random, last, minutes: start.elapsed().as_secs_f64() / 60.0 }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn f1_at(runs: &[Run], cutoff: &str) -> f64 {
    mean(runs.iter().map(|r| r.report.row(cutoff).unwrap().micro_f1))
}

fn learnability(t: &Trained) -> Outcome {
    let (p25, p75, full) = (f1_at(&t.random, "p25"), f1_at(&t.random, "p75"), f1_at(&t.random, "full"));
    let per_seed: Vec<String> = t.random.iter().map(|r| format!("{:.3}", r.report.row("full").unwrap().micro_f1)).collect();
    (
        full >= 0.80 && p25 < p75 && p75 < full && t.minutes < 30.0,
        format!(
            "mean Micro-F1 p25 {p25:.3} < p75 {p75:.3} < full {full:.3} (full >= 0.80; per seed {}); 6 runs in {:.1} min",
            per_seed.join("/"),
            t.minutes
        ),
    )
}

fn ablation(t: &Trained) -> Outcome {
    let gap = |c: &str| mean(t.random.iter().map(|r| r.grid.get(c, InferenceContext::Eca).unwrap() - r.grid.get(c, InferenceContext::Last).unwrap()));
    let gaps: Vec<(String, f64)> = PRE_DISCHARGE.iter().map(|c| (c.to_string(), gap(c))).collect();
    let training_gap = f1_at(&t.random, "p25") - f1_at(&t.last, "p25");
    let ok = gaps.iter().all(|(_, g)| *g >= 0.02) && training_gap >= 0.02;
    let shown: Vec<String> = gaps.iter().map(|(c, g)| format!("{c} {:+.1}", 100.0 * g)).collect();
    (
        ok,
        format!(
            "ECA minus Last (points): {}; random-trained minus last-trained at p25: {:+.1} (each >= 2)",
            shown.join(", "),
            100.0 * training_gap
        ),
    )
}

fn interpretability(t: &Trained) -> Outcome {
    let weight = |cutoff: &str, c: Category| {
        mean(t.random.iter().map(|r| r.attention.iter().find(|s| s.cutoff == cutoff).unwrap().mean(c)))
    };
    let ds = weight("full", Category::DischargeSummary);
    let (runner_up, other) = Category::ALL
        .iter()
        .filter(|&&c| c != Category::DischargeSummary)
        .map(|&c| (c, weight("full", c)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let diagnostic = weight("p25", Category::Echo) + weight("p25", Category::Radiology) + weight("p25", Category::Ecg);
    let nursing = weight("p25", Category::Nursing);
    (
        ds > other && diagnostic > nursing,
        format!(
            "full: DischargeSummary {ds:.3} > next {} {other:.3}; p25: Echo+Radiology+ECG {diagnostic:.3} > Nursing {nursing:.3}",
            runner_up.name()
        ),
    )
}

// ------------------------------------------------------ 10. reproducibility

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Vec<String> {
    names
        .iter()
        .filter(|n| std::fs::read(a.join(n)).unwrap() != std::fs::read(b.join(n)).unwrap())
        .map(|n| n.to_string())
        .collect()
}

fn reproducibility(root: &Path) -> Outcome {
    let other = generate(root, "data_again");
    let mut differ = same_files(&root.join("data"), &other, &["train.jsonl", "dev.jsonl", "test.jsonl", "manifest.json"]);

    let first = configured(root, "random0", 0, ContextStrategy::RandomSubsequence);
    let again = configured(root, "random0_again", 0, ContextStrategy::RandomSubsequence);
    train_and_eval(&again);
    differ.extend(same_files(
        &first.out,
        &again.out,
        &["checkpoint.bin", "train_log.jsonl", "dev_report.json", "report.json", "report.txt", "ablation.json", "attention_full.csv"],
    ));
    (differ.is_empty(), if differ.is_empty() { "dataset, checkpoint, logs and reports bit-identical on rerun".into() } else { format!("differing files: {differ:?}") })
}

// ------------------------------------------------------------------ driver

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome + std::panic::UnwindSafe) -> bool {
    let start = Instant::now();
    let (ok, detail) = std::panic::catch_unwind(f).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        (false, format!("panicked: {}", msg.unwrap_or_default()))
    });
    println!(
        "criterion {n:>2} {name:<28} {}  {detail}  [{:.1}s]",
        if ok { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    ok
}

fn main() {
    // `cargo test -- --list` and filtered runs probe test binaries; the suite
    // only runs when invoked without a filter.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") || !args.is_empty() && !args.iter().any(|a| a == "acceptance") {
        return;
    }
    let _ = env_logger::Builder::from_env(env_logger::Env::default().filter_or("LAHST_LOG", "warn")).try_init();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();

    let mut results = vec![
        report(1, "gradient correctness", gradient_correctness),
        report(2, "causality", causality),
        report(3, "ECA exactness", eca_exactness),
        report(4, "batched/loop equivalence", batched_loop_equivalence),
        report(5, "metric oracles", metric_oracles),
        report(6, "sampling", sampling),
    ];
    let trained = std::panic::catch_unwind(|| train_all(&root));
    match &trained {
        Ok(t) => {
            let t = std::panic::AssertUnwindSafe(t);
            results.push(report(7, "learnability and trend", || learnability(&t)));
            results.push(report(8, "context-strategy ablation", || ablation(&t)));
            results.push(report(9, "attention by category", || interpretability(&t)));
        }
        Err(_) => {
            for (n, name) in [(7, "learnability and trend"), (8, "context-strategy ablation"), (9, "attention by category")] {
                results.push(report(n, name, || (false, "training failed".into())));
            }
        }
    }
    let r = root.clone();
    results.push(report(10, "reproducibility", move || reproducibility(&r)));

    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
