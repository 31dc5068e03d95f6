//! Training loop: batched forward over videos, relation + object loss,
//! backpropagation, SGD updates.

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{GroundTruthGraph, Task};
use crate::geometry::box_iou;
use crate::io::VideoData;
use crate::loss::{category_weights, relation_loss_on_tape, CategoryWeights, LossConfig};
use crate::model::{Dataset, RelationModel, VideoForward};
use crate::nn::matrix::Matrix;
use crate::nn::tape::{Tape, Var};
use crate::nn::NetCtx;
use crate::scene::PairTrack;

/// Per-epoch mean losses of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epoch_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&f64::NAN)
    }
}

/// Multi-label targets for the stacked relation rows of one video: a row per
/// (track, frame), a column per predicate. A ground-truth triple marks a row
/// when categories agree and the boxes coincide (exactly, or by IoU for
/// detector-sourced boxes).
pub fn assemble_targets(
    tracks: &[PairTrack],
    rows: &[(u64, usize)],
    gt: &GroundTruthGraph,
    video_id: &str,
    num_predicates: usize,
    iou_threshold: f64,
) -> Result<Matrix> {
    let track_of = |id: u64| tracks.iter().find(|t| t.track_id == id);
    let mut targets = Matrix::zeros(rows.len(), num_predicates);
    for (r, &(track_id, frame)) in rows.iter().enumerate() {
        let track = track_of(track_id)
            .ok_or_else(|| Error::Invalid(format!("row references unknown track {track_id}")))?;
        let (sub, obj) = track.entry(frame).expect("row frame in track");
        let Some(gt_triples) = gt.frames.get(&(video_id.to_string(), frame)) else {
            continue;
        };
        for g in gt_triples {
            if g.predicate >= num_predicates {
                return Err(Error::data(format!(
                    "ground-truth predicate {} out of range",
                    g.predicate
                )));
            }
            if g.subject_category != sub.category_id || g.object_category != obj.category_id {
                continue;
            }
            let boxes_match = (g.subject_box == sub.box_ && g.object_box == obj.box_)
                || (box_iou(&g.subject_box, &sub.box_) >= iou_threshold
                    && box_iou(&g.object_box, &obj.box_) >= iou_threshold);
            if boxes_match {
                targets.set(r, g.predicate, 1.0);
            }
        }
    }
    Ok(targets)
}

impl RelationModel {
    /// Train on the dataset; the relation loss always runs, the object loss
    /// only for tasks where categories are predicted. Deterministic per seed.
    pub fn train(
        &mut self,
        data: &Dataset,
        train_cfg: &TrainConfig,
        loss_cfg: &LossConfig,
        task: Task,
    ) -> Result<TrainOutcome> {
        loss_cfg.validate()?;
        train_cfg.validate()?;
        let weights = if loss_cfg.weighting {
            let freqs: Vec<f64> = data.vocabulary.frequencies.iter().map(|&f| f as f64).collect();
            category_weights(&freqs)?
        } else {
            CategoryWeights::uniform(self.cfg.num_predicates)
        };

        let mut epoch_losses = Vec::with_capacity(train_cfg.epochs);
        for epoch in 0..train_cfg.epochs {
            let mut sum = 0.0;
            let mut batches = 0usize;
            for (bi, batch) in data.videos.chunks(loss_cfg.batch_size).enumerate() {
                let mask_seed = train_cfg
                    .seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(((epoch as u64) << 20) | bi as u64);
                let loss =
                    self.train_batch(batch, data, &weights, loss_cfg, task, train_cfg.lr, mask_seed)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss became non-finite at epoch {epoch}, batch {bi}"
                    )));
                }
                sum += loss;
                batches += 1;
            }
            let mean = if batches > 0 { sum / batches as f64 } else { 0.0 };
            log::info!("epoch {epoch}: loss {mean:.6}");
            epoch_losses.push(mean);
        }
        Ok(TrainOutcome { epoch_losses })
    }

    fn train_batch(
        &mut self,
        videos: &[VideoData],
        data: &Dataset,
        weights: &CategoryWeights,
        loss_cfg: &LossConfig,
        task: Task,
        lr: f64,
        mask_seed: u64,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let total: Option<Var> = {
            let mut ctx = NetCtx::with_dropout(&self.params, self.cfg.net.dropout, mask_seed);
            let mut logit_blocks = Vec::new();
            let mut target_blocks: Vec<Matrix> = Vec::new();
            let mut object_blocks = Vec::new();
            let mut object_labels = Vec::new();

            for video in videos {
                let fwd: VideoForward =
                    self.forward_video(&mut tape, &mut ctx, video, Some(&data.embeddings))?;
                if let Some(logits) = fwd.relation_logits {
                    let targets = assemble_targets(
                        &fwd.tracks,
                        &fwd.rows,
                        &data.gt,
                        &video.video_id,
                        self.cfg.num_predicates,
                        0.5,
                    )?;
                    logit_blocks.push(logits);
                    target_blocks.push(targets);
                }
                if task != Task::Predcls {
                    if let Some(ol) = fwd.object_logits {
                        object_blocks.push(ol);
                        for frame in &video.frames {
                            for det in &frame.detections {
                                object_labels.push(det.category_id);
                            }
                        }
                    }
                }
            }

            let mut terms: Vec<Var> = Vec::new();
            if !logit_blocks.is_empty() {
                let logits = tape.concat_rows(&logit_blocks)?;
                let targets = vstack(&target_blocks)?;
                terms.push(relation_loss_on_tape(
                    &mut tape,
                    logits,
                    &targets,
                    weights,
                    loss_cfg.gamma,
                )?);
            }
            if !object_blocks.is_empty() {
                let logits = tape.concat_rows(&object_blocks)?;
                terms.push(tape.softmax_cross_entropy(logits, &object_labels)?);
            }
            match terms.split_first() {
                None => None,
                Some((&first, rest)) => {
                    let mut acc = first;
                    for &t in rest {
                        acc = tape.add(acc, t)?;
                    }
                    Some(acc)
                }
            }
        };

        let Some(total) = total else {
            return Ok(0.0);
        };
        let value = tape.value(total).get(0, 0);
        tape.backward(total)?;
        tape.accumulate_param_grads(&mut self.params)?;
        self.params.sgd_step(lr);
        Ok(value)
    }
}

fn vstack(blocks: &[Matrix]) -> Result<Matrix> {
    let cols = blocks[0].cols();
    let rows = blocks.iter().map(|b| b.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for b in blocks {
        if b.cols() != cols {
            return Err(Error::ShapeMismatch {
                op: "vstack",
                expected: format!("?x{cols}"),
                got: format!("{}x{}", b.rows(), b.cols()),
            });
        }
        data.extend_from_slice(b.data());
    }
    Matrix::from_vec(rows, cols, data)
}
