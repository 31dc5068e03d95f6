//! Training losses: frequency-weighted focal relation loss, object
//! cross-entropy, and their sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;
use crate::nn::tape::{Tape, Var};

/// Probabilities are clamped to `[EPS_PROB, 1 - EPS_PROB]` before logs.
pub const EPS_PROB: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Focal exponent gamma.
    pub gamma: f64,
    /// Apply the inverse-log-frequency category weights.
    pub weighting: bool,
    /// Videos per optimizer step.
    pub batch_size: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 2.0,
            weighting: true,
            batch_size: 1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma {} must be finite and >= 0", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-relation weights from inverse log frequencies, normalized so that
/// uniform frequencies give all-ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryWeights {
    pub alpha: Vec<f64>,
}

impl CategoryWeights {
    pub fn uniform(n: usize) -> Self {
        CategoryWeights {
            alpha: vec![1.0; n],
        }
    }
}

/// alpha_r = (1/ln n_r) / ((1/Nr) * sum_k 1/ln n_k). Frequencies below 2
/// are rejected (their log would be non-positive).
pub fn category_weights(frequencies: &[f64]) -> Result<CategoryWeights> {
    if frequencies.is_empty() {
        return Err(Error::Invalid("empty frequency vector".into()));
    }
    if let Some(&bad) = frequencies.iter().find(|&&f| !(f >= 2.0) || !f.is_finite()) {
        return Err(Error::Invalid(format!(
            "relation frequency {bad} < 2 not allowed for log weighting"
        )));
    }
    let terms: Vec<f64> = frequencies.iter().map(|&n| 1.0 / n.ln()).collect();
    let mean = terms.iter().sum::<f64>() / terms.len() as f64;
    Ok(CategoryWeights {
        alpha: terms.iter().map(|&t| t / mean).collect(),
    })
}

/// Mean weighted focal binary cross-entropy over every (sample, relation)
/// term. `p_hat` are probabilities in (0,1); `targets` are 0/1. The focal
/// factor uses `p_t` (the probability assigned to the true side), so
/// negative terms are modulated as well; `alpha` applies per relation index.
pub fn relation_loss_value(
    p_hat: &Matrix,
    targets: &Matrix,
    weights: &CategoryWeights,
    gamma: f64,
) -> Result<f64> {
    check_relation_shapes(p_hat.shape(), targets.shape(), weights)?;
    let (b, nr) = p_hat.shape();
    if b * nr == 0 {
        return Err(Error::Invalid("relation loss over an empty batch".into()));
    }
    let mut total = 0.0;
    for r in 0..b {
        for c in 0..nr {
            let y = targets.get(r, c);
            let p = p_hat.get(r, c).clamp(EPS_PROB, 1.0 - EPS_PROB);
            let p_t = if y > 0.5 { p } else { 1.0 - p };
            total += weights.alpha[c] * (1.0 - p_t).powf(gamma) * (-p_t.ln());
        }
    }
    Ok(total / (b * nr) as f64)
}

/// Tape version of the relation loss, applied to logits so the gradient
/// flows back through the sigmoid. Identical in value to
/// [`relation_loss_value`] applied to `sigmoid(logits)`.
pub fn relation_loss_on_tape(
    tape: &mut Tape,
    logits: Var,
    targets: &Matrix,
    weights: &CategoryWeights,
    gamma: f64,
) -> Result<Var> {
    check_relation_shapes(tape.value(logits).shape(), targets.shape(), weights)?;
    let (b, nr) = targets.shape();
    if b * nr == 0 {
        return Err(Error::Invalid("relation loss over an empty batch".into()));
    }
    // p_t = p*c1 + c0 with c1 = 2y-1, c0 = 1-y selects p for positives and
    // 1-p for negatives in one affine map.
    let c1 = tape.input(targets.map(|y| 2.0 * y - 1.0));
    let c0 = tape.input(targets.map(|y| 1.0 - y));
    let ones = tape.input(Matrix::from_vec(b, nr, vec![1.0; b * nr])?);
    let alpha = tape.input(Matrix::row_vector(weights.alpha.clone()));

    let p = tape.sigmoid(logits);
    let p = tape.clamp(p, EPS_PROB, 1.0 - EPS_PROB);
    let scaled = tape.mul(p, c1)?;
    let p_t = tape.add(scaled, c0)?;
    let log_pt = tape.ln(p_t);
    let bce = tape.scale(log_pt, -1.0);
    let neg_pt = tape.scale(p_t, -1.0);
    let one_minus_pt = tape.add(ones, neg_pt)?;
    let focal = tape.pow_scalar(one_minus_pt, gamma);
    let term = tape.mul(focal, bce)?;
    let weighted = tape.mul_col_broadcast(term, alpha)?;
    tape.mean_all(weighted)
}

fn check_relation_shapes(
    p_shape: (usize, usize),
    t_shape: (usize, usize),
    weights: &CategoryWeights,
) -> Result<()> {
    if p_shape != t_shape {
        return Err(Error::ShapeMismatch {
            op: "relation_loss",
            expected: format!("{t_shape:?}"),
            got: format!("{p_shape:?}"),
        });
    }
    if weights.alpha.len() != p_shape.1 {
        return Err(Error::ShapeMismatch {
            op: "relation_loss weights",
            expected: format!("{} weights", p_shape.1),
            got: format!("{}", weights.alpha.len()),
        });
    }
    Ok(())
}

/// Mean softmax cross-entropy for object classification.
pub fn object_loss_value(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.input(logits.clone());
    let loss = tape.softmax_cross_entropy(l, labels)?;
    Ok(tape.value(loss).get(0, 0))
}

/// Total loss is the plain sum of the object and relation terms.
pub fn total_loss(object: f64, relation: f64) -> f64 {
    object + relation
}
