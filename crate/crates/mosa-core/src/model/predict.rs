//! Inference: run the pipeline without gradients and shape the outputs for
//! evaluation or serialization.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::eval::{FramePredictions, PairScores, Task};
use crate::model::{EmbeddingMatrix, RelationModel, RelationPrediction};
use crate::io::VideoData;
use crate::nn::tape::{sigmoid, softmax_rows_value, Tape};
use crate::nn::NetCtx;
use crate::scene::Detection;

/// Per-video inference output.
#[derive(Debug, Clone)]
pub struct VideoPredictions {
    pub video_id: String,
    pub relations: Vec<RelationPrediction>,
    /// (track_id, frame) -> the concrete subject/object detections.
    pub pair_info: BTreeMap<(u64, usize), (Detection, Detection)>,
    /// (frame, instance_id) -> softmax category probabilities.
    pub object_probs: BTreeMap<(usize, i64), Vec<f64>>,
}

/// Forward one video and extract relation and object predictions.
pub fn predict_video(
    model: &RelationModel,
    video: &VideoData,
    z: Option<&EmbeddingMatrix>,
) -> Result<VideoPredictions> {
    let mut tape = Tape::new();
    let mut ctx = NetCtx::new(&model.params);
    let fwd = model.forward_video(&mut tape, &mut ctx, video, z)?;

    let mut relations = Vec::with_capacity(fwd.rows.len());
    if let Some(logits) = fwd.relation_logits {
        let values = tape.value(logits);
        for (i, &(track_id, frame_index)) in fwd.rows.iter().enumerate() {
            let scores = values.row(i).to_vec();
            let probabilities = scores.iter().map(|&s| sigmoid(s)).collect();
            relations.push(RelationPrediction {
                track_id,
                frame_index,
                scores,
                probabilities,
            });
        }
    }

    let mut object_probs = BTreeMap::new();
    if let Some(logits) = fwd.object_logits {
        let probs = softmax_rows_value(tape.value(logits));
        for (i, &(frame, instance)) in fwd.object_rows.iter().enumerate() {
            object_probs.insert((frame, instance), probs.row(i).to_vec());
        }
    }

    let mut pair_info = BTreeMap::new();
    for track in &fwd.tracks {
        for (frame, (sub, obj)) in &track.entries {
            pair_info.insert((track.track_id, *frame), (sub.clone(), obj.clone()));
        }
    }

    Ok(VideoPredictions {
        video_id: video.video_id.clone(),
        relations,
        pair_info,
        object_probs,
    })
}

fn argmax(probs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    (best, probs[best])
}

/// Shape one video's predictions for the evaluator. The task decides where
/// category decisions come from: given ground truth (probability 1) or the
/// object classification head.
pub fn frame_predictions(
    model: &RelationModel,
    video: &VideoData,
    z: Option<&EmbeddingMatrix>,
    task: Task,
) -> Result<Vec<FramePredictions>> {
    let vp = predict_video(model, video, z)?;
    let mut by_frame: BTreeMap<usize, Vec<&RelationPrediction>> = BTreeMap::new();
    for rel in &vp.relations {
        by_frame.entry(rel.frame_index).or_default().push(rel);
    }

    let mut out = Vec::new();
    for (frame_index, rels) in by_frame {
        let mut pairs = Vec::with_capacity(rels.len());
        for rel in rels {
            let (sub, obj) = &vp.pair_info[&(rel.track_id, frame_index)];
            let (subject_category, subject_prob, object_category, object_prob) = match task {
                Task::Predcls => (sub.category_id, 1.0, obj.category_id, 1.0),
                Task::Sgcls | Task::Sgdet => {
                    let sp = &vp.object_probs[&(frame_index, sub.instance_id)];
                    let op = &vp.object_probs[&(frame_index, obj.instance_id)];
                    let (sc, sp) = argmax(sp);
                    let (oc, op) = argmax(op);
                    (sc, sp, oc, op)
                }
            };
            pairs.push(PairScores {
                pair_id: rel.track_id,
                subject_category,
                subject_prob,
                subject_box: sub.box_,
                object_category,
                object_prob,
                object_box: obj.box_,
                predicate_probs: rel.probabilities.clone(),
            });
        }
        out.push(FramePredictions {
            video_id: vp.video_id.clone(),
            frame_index,
            task,
            pairs,
        });
    }
    Ok(out)
}
