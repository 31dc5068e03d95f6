//! Support code for tests and benches: a central finite-difference gradient
//! checker and straight-loop reference implementations of the network
//! blocks, written without the tape so they exercise an independent path.

use crate::error::Result;
use crate::nn::matrix::Matrix;
use crate::nn::params::ParameterSet;
use crate::nn::tape::{Tape, Var};

/// Outcome of a gradient check: the largest relative error seen and where.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub entries_checked: usize,
    /// Entries skipped because the loss is locally non-smooth there (a
    /// rectifier kink inside the difference stencil makes the numeric
    /// estimate meaningless).
    pub entries_skipped: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare tape gradients against central finite differences for every
/// entry of every parameter in `params`. Inputs under test can simply be
/// stored as parameters so the same machinery covers them.
///
/// When the coarse estimate disagrees with the analytic gradient, the entry
/// is re-estimated with `step/8`: agreement there means the coarse stencil
/// straddled a kink; two numeric estimates that disagree with each other
/// mark the point as non-smooth and the entry is skipped rather than
/// counted as a failure.
pub fn finite_difference_check(
    params: &mut ParameterSet,
    step: f64,
    build: &dyn Fn(&ParameterSet, &mut Tape) -> Result<Var>,
) -> Result<GradCheck> {
    params.zero_grads();
    let mut tape = Tape::new();
    let loss = build(params, &mut tape)?;
    tape.backward(loss)?;
    tape.accumulate_param_grads(params)?;

    let eval = |params: &ParameterSet| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(params, &mut tape)?;
        Ok(tape.value(loss).get(0, 0))
    };

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        entries_checked: 0,
        entries_skipped: 0,
    };
    for name in params.names() {
        let len = params.get(&name).unwrap().data().len();
        for i in 0..len {
            let original = params.get(&name).unwrap().data()[i];
            let analytic = params.grad_of(&name).unwrap().data()[i];
            let mut numeric_at = |s: f64| -> Result<f64> {
                params.get_mut(&name).unwrap().data_mut()[i] = original + s;
                let plus = eval(params)?;
                params.get_mut(&name).unwrap().data_mut()[i] = original - s;
                let minus = eval(params)?;
                params.get_mut(&name).unwrap().data_mut()[i] = original;
                Ok((plus - minus) / (2.0 * s))
            };
            let numeric = numeric_at(step)?;
            let mut rel = rel_error(analytic, numeric);
            if rel >= 1e-3 {
                let fine = numeric_at(step / 8.0)?;
                let rel_fine = rel_error(analytic, fine);
                if rel_fine < rel {
                    rel = rel_fine;
                }
                if rel >= 1e-3 && rel_error(numeric, fine) > 0.25 * rel {
                    // numeric estimates inconsistent across steps: kink
                    worst.entries_skipped += 1;
                    continue;
                }
            }
            worst.entries_checked += 1;
            if rel > worst.max_rel_error {
                worst.max_rel_error = rel;
                worst.worst_param = format!("{name}[{i}]");
            }
        }
    }
    params.zero_grads();
    Ok(worst)
}

/// Naive, fully independent Recall@K evaluator used as the metrics oracle:
/// explicit candidate enumeration, a hand-rolled selection sort, greedy
/// matching, and per-class pooling. Returns (recall, mean recall,
/// per-class (hit, total) counts).
pub fn brute_force_recall(
    predictions: &[crate::eval::FramePredictions],
    gt: &crate::eval::GroundTruthGraph,
    mode: crate::eval::ConstraintMode,
    k: usize,
) -> (f64, f64, std::collections::BTreeMap<usize, (usize, usize)>) {
    use crate::eval::ConstraintMode;
    let mut recall_sum = 0.0;
    let mut frames = 0usize;
    let mut class_counts: std::collections::BTreeMap<usize, (usize, usize)> =
        std::collections::BTreeMap::new();

    for ((video_id, frame_index), gt_triples) in &gt.frames {
        if gt_triples.is_empty() {
            continue;
        }
        frames += 1;
        let fp = predictions
            .iter()
            .find(|f| f.frame_index == *frame_index && f.video_id == *video_id);
        // candidates as (score, predicate, pair_id, position of pair)
        let mut remaining: Vec<(f64, usize, u64, usize)> = Vec::new();
        if let Some(fp) = fp {
            for (pi, pair) in fp.pairs.iter().enumerate() {
                let composite = |p: f64| p * pair.subject_prob * pair.object_prob;
                match mode {
                    ConstraintMode::No => {
                        for (pred, &s) in pair.predicate_probs.iter().enumerate() {
                            remaining.push((composite(s), pred, pair.pair_id, pi));
                        }
                    }
                    ConstraintMode::With => {
                        let mut best = 0usize;
                        for pred in 1..pair.predicate_probs.len() {
                            if pair.predicate_probs[pred] > pair.predicate_probs[best] {
                                best = pred;
                            }
                        }
                        remaining.push((
                            composite(pair.predicate_probs[best]),
                            best,
                            pair.pair_id,
                            pi,
                        ));
                    }
                }
            }
        }
        // selection sort by (score desc, predicate asc, pair id asc)
        let mut ordered: Vec<(f64, usize, u64, usize)> = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for i in 1..remaining.len() {
                let a = remaining[i];
                let b = remaining[best];
                if a.0 > b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 < b.2))) {
                    best = i;
                }
            }
            ordered.push(remaining.remove(best));
        }
        ordered.truncate(k);

        let mut matched = vec![false; gt_triples.len()];
        if let Some(fp) = fp {
            for (_, pred, _, pi) in &ordered {
                let pair = &fp.pairs[*pi];
                for (gi, g) in gt_triples.iter().enumerate() {
                    if matched[gi] {
                        continue;
                    }
                    if g.predicate == *pred
                        && g.subject_category == pair.subject_category
                        && g.object_category == pair.object_category
                        && g.subject_box == pair.subject_box
                        && g.object_box == pair.object_box
                    {
                        matched[gi] = true;
                        break;
                    }
                }
            }
        }
        let hit = matched.iter().filter(|&&m| m).count();
        recall_sum += hit as f64 / gt_triples.len() as f64;
        for (g, &m) in gt_triples.iter().zip(&matched) {
            let e = class_counts.entry(g.predicate).or_insert((0, 0));
            e.0 += m as usize;
            e.1 += 1;
        }
    }

    let recall = if frames > 0 { recall_sum / frames as f64 } else { 0.0 };
    let class_recalls: Vec<f64> = class_counts
        .values()
        .map(|&(hit, total)| hit as f64 / total as f64)
        .collect();
    let mean_recall = if class_recalls.is_empty() {
        0.0
    } else {
        class_recalls.iter().sum::<f64>() / class_recalls.len() as f64
    };
    (recall, mean_recall, class_counts)
}

/// Independent forward implementations over plain nested vectors.
pub mod reference {
    use super::*;

    pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
        (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
    }

    pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let cols = b[0].len();
        a.iter()
            .map(|row| {
                (0..cols)
                    .map(|j| row.iter().enumerate().map(|(k, &v)| v * b[k][j]).sum())
                    .collect()
            })
            .collect()
    }

    pub fn linear(params: &ParameterSet, prefix: &str, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let w = to_rows(params.get(&format!("{prefix}.w")).unwrap());
        let b = params.get(&format!("{prefix}.b")).unwrap().row(0).to_vec();
        matmul(x, &w)
            .into_iter()
            .map(|row| row.iter().zip(&b).map(|(v, bias)| v + bias).collect())
            .collect()
    }

    pub fn relu(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| row.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect())
            .collect()
    }

    pub fn mlp(params: &ParameterSet, prefix: &str, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h = relu(&linear(params, &format!("{prefix}.ff1"), x));
        linear(params, &format!("{prefix}.ff2"), &h)
    }

    pub fn softmax_row(row: &[f64]) -> Vec<f64> {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / s).collect()
    }

    pub fn layer_norm(
        params: &ParameterSet,
        prefix: &str,
        x: &[Vec<f64>],
        eps: f64,
    ) -> Vec<Vec<f64>> {
        let gamma = params.get(&format!("{prefix}.gamma")).unwrap().row(0).to_vec();
        let beta = params.get(&format!("{prefix}.beta")).unwrap().row(0).to_vec();
        x.iter()
            .map(|row| {
                let d = row.len() as f64;
                let mean = row.iter().sum::<f64>() / d;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
                let inv = 1.0 / (var + eps).sqrt();
                row.iter()
                    .enumerate()
                    .map(|(i, &v)| (v - mean) * inv * gamma[i] + beta[i])
                    .collect()
            })
            .collect()
    }

    pub fn multi_head_attention(
        params: &ParameterSet,
        prefix: &str,
        q_in: &[Vec<f64>],
        k_in: &[Vec<f64>],
        v_in: &[Vec<f64>],
        heads: usize,
    ) -> Vec<Vec<f64>> {
        let q = linear(params, &format!("{prefix}.q"), q_in);
        let k = linear(params, &format!("{prefix}.k"), k_in);
        let v = linear(params, &format!("{prefix}.v"), v_in);
        let dim = q[0].len();
        let hd = dim / heads;
        let mut merged = vec![vec![0.0; dim]; q.len()];
        for h in 0..heads {
            let cols = h * hd..(h + 1) * hd;
            for (qi, out_row) in merged.iter_mut().enumerate() {
                // attention logits of query qi against all keys
                let logits: Vec<f64> = k
                    .iter()
                    .map(|krow| {
                        q[qi][cols.clone()]
                            .iter()
                            .zip(&krow[cols.clone()])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let weights = softmax_row(&logits);
                for (c, slot) in cols.clone().enumerate() {
                    out_row[slot] = weights
                        .iter()
                        .zip(&v)
                        .map(|(w, vrow)| w * vrow[h * hd + c])
                        .sum();
                }
            }
        }
        linear(params, &format!("{prefix}.o"), &merged)
    }

    pub fn encoder(
        params: &ParameterSet,
        prefix: &str,
        x: &[Vec<f64>],
        layers: usize,
        heads: usize,
        eps: f64,
    ) -> Vec<Vec<f64>> {
        let mut h = x.to_vec();
        for l in 0..layers {
            let lp = format!("{prefix}.layer{l}");
            let attn = multi_head_attention(params, &format!("{lp}.attn"), &h, &h, &h, heads);
            let res = add(&h, &attn);
            let x1 = layer_norm(params, &format!("{lp}.ln1"), &res, eps);
            let ff = mlp(params, &lp, &x1);
            let res = add(&x1, &ff);
            h = layer_norm(params, &format!("{lp}.ln2"), &res, eps);
        }
        h
    }

    pub fn positional_encoding(len: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..len)
            .map(|pos| {
                (0..dim)
                    .map(|i| {
                        let exponent = 2.0 * (i / 2) as f64 / dim as f64;
                        let angle = pos as f64 / 10000f64.powf(exponent);
                        if i % 2 == 0 {
                            angle.sin()
                        } else {
                            angle.cos()
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn decoder_self_conditioned(
        params: &ParameterSet,
        prefix: &str,
        target: &[Vec<f64>],
        layers: usize,
        heads: usize,
        eps: f64,
    ) -> Vec<Vec<f64>> {
        let pe = positional_encoding(target.len(), target[0].len());
        let x0 = add(target, &pe);
        let memory = x0.clone();
        let mut h = x0;
        for l in 0..layers {
            let lp = format!("{prefix}.layer{l}");
            let sa = multi_head_attention(params, &format!("{lp}.self_attn"), &h, &h, &h, heads);
            let x1 = layer_norm(params, &format!("{lp}.ln1"), &add(&h, &sa), eps);
            let ca = multi_head_attention(
                params,
                &format!("{lp}.cross_attn"),
                &x1,
                &memory,
                &memory,
                heads,
            );
            let x2 = layer_norm(params, &format!("{lp}.ln2"), &add(&x1, &ca), eps);
            let ff = mlp(params, &lp, &x2);
            h = layer_norm(params, &format!("{lp}.ln3"), &add(&x2, &ff), eps);
        }
        h
    }

    pub fn add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        a.iter()
            .zip(b)
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
            .collect()
    }
}

/// Seeded random matrix for tests.
pub fn random_matrix(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    use rand::Rng;
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
    .expect("shape consistent")
}
