//! The full relation network: pair feature assembly, spatial encoding,
//! motion-guided fusion, temporal decoding, and semantic matching.

mod predict;
mod train;

pub use predict::{frame_predictions, predict_video, VideoPredictions};
pub use train::{assemble_targets, TrainOutcome};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, union_box};
use crate::io::VideoData;
use crate::motion::{compute_motion_attributes, MotionAttributes, MotionConfig};
use crate::nn::layers::{
    self, linear, mlp, multi_head_attention, register_attention, register_decoder,
    register_encoder, register_layer_norm, register_linear, transformer_decoder,
    transformer_encoder, NetConfig, NetCtx,
};
use crate::nn::matrix::Matrix;
use crate::nn::params::ParameterSet;
use crate::nn::tape::{Tape, Var};
use crate::scene::{link_tracks, Detection, PairTrack, TrackKeying};

/// Frozen relation-category embedding matrix (Nr x D).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub z: Matrix,
    pub source: EmbeddingSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    Ingested,
    Synthetic,
}

impl EmbeddingMatrix {
    pub fn validate(&self, num_predicates: usize, dim: usize) -> Result<()> {
        if self.z.rows() != num_predicates || self.z.cols() != dim {
            return Err(Error::ShapeMismatch {
                op: "embedding matrix",
                expected: format!("{num_predicates}x{dim}"),
                got: format!("{}x{}", self.z.rows(), self.z.cols()),
            });
        }
        if !self.z.is_finite() {
            return Err(Error::Numeric("non-finite embedding matrix".into()));
        }
        Ok(())
    }
}

/// Which parts of the network are active. `use_mim` requires `use_mfe`
/// (without motion features there is nothing to fuse).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    pub use_mfe: bool,
    pub use_mim: bool,
    pub use_asm: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_mfe: true,
            use_mim: true,
            use_asm: true,
        }
    }
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        if self.use_mim && !self.use_mfe {
            return Err(Error::Config(
                "use_mim requires use_mfe (removing the motion extractor also disables the \
                 fusion module)"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Model-level options outside the network dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    /// Score relations by cosine similarity instead of raw dot products.
    pub asm_cosine: bool,
    /// Let the fusion attention see every pair in the frame instead of only
    /// its own spatial token.
    pub mim_cross_pair: bool,
    pub track_keying: TrackKeying,
    /// Category index of the pair subject.
    pub person_category: usize,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            asm_cosine: false,
            mim_cross_pair: false,
            track_keying: TrackKeying::ObjectCategory,
            person_category: 0,
        }
    }
}

/// Everything needed to build (or validate a checkpoint against) the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub net: NetConfig,
    pub motion: MotionConfig,
    pub ablation: AblationFlags,
    pub options: ModelOptions,
    pub num_predicates: usize,
    pub num_object_categories: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.motion.validate()?;
        self.ablation.validate()?;
        if self.num_predicates == 0 {
            return Err(Error::Config("num_predicates must be positive".into()));
        }
        if self.options.person_category >= self.num_object_categories {
            return Err(Error::Config(format!(
                "person_category {} outside the {}-entry object vocabulary",
                self.options.person_category, self.num_object_categories
            )));
        }
        Ok(())
    }

    /// Width of the pair MLP input: both visual vectors, the box-geometry
    /// vector, and both category embeddings.
    fn pair_input_width(&self) -> usize {
        2 * self.net.visual_dim + GEOMETRY_DIM + 2 * self.net.category_embed_dim
    }
}

/// Everything a training or evaluation run consumes: videos, ground truth,
/// vocabulary, and the frozen relation embeddings.
pub struct Dataset {
    pub videos: Vec<VideoData>,
    pub gt: crate::eval::GroundTruthGraph,
    pub vocabulary: crate::scene::RelationVocabulary,
    pub embeddings: EmbeddingMatrix,
}

/// Per-pair relation scores for one frame of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationPrediction {
    pub track_id: u64,
    pub frame_index: usize,
    /// Raw matching scores (logits), length Nr.
    pub scores: Vec<f64>,
    /// Elementwise sigmoid of `scores`.
    pub probabilities: Vec<f64>,
}

pub const GEOMETRY_DIM: usize = 10;

/// The box-geometry component of the pair feature: normalized centers,
/// widths, heights of both boxes, their IoU, and the normalized union area.
pub fn geometry_vector(subject: &Detection, object: &Detection, width: f64, height: f64) -> [f64; GEOMETRY_DIM] {
    let (scx, scy) = subject.box_.center();
    let (ocx, ocy) = object.box_.center();
    let u = union_box(&subject.box_, &object.box_);
    [
        scx / width,
        scy / height,
        subject.box_.width() / width,
        subject.box_.height() / height,
        ocx / width,
        ocy / height,
        object.box_.width() / width,
        object.box_.height() / height,
        box_iou(&subject.box_, &object.box_),
        u.area() / (width * height),
    ]
}

/// The relation model: parameters plus the configuration they were built for.
#[derive(Debug)]
pub struct RelationModel {
    pub cfg: ModelConfig,
    pub params: ParameterSet,
}

/// Forward output for one video, alive as long as its tape.
pub struct VideoForward {
    /// Stacked relation logits, one row per (track, frame) in `rows` order;
    /// `None` when the video has no pairs.
    pub relation_logits: Option<Var>,
    pub rows: Vec<(u64, usize)>,
    /// Object-classification logits, one row per detection in `object_rows`
    /// order.
    pub object_logits: Option<Var>,
    /// (frame_index, instance_id) per object-logit row.
    pub object_rows: Vec<(usize, i64)>,
    pub tracks: Vec<PairTrack>,
}

impl RelationModel {
    /// Build a model with freshly initialized parameters.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = &cfg.net;

        params.insert_xavier(
            "cat_embed.table",
            cfg.num_object_categories,
            net.category_embed_dim,
            &mut rng,
        )?;
        register_linear(
            &mut params,
            &mut rng,
            "pair_mlp.ff1",
            cfg.pair_input_width(),
            net.pair_hidden,
        )?;
        register_linear(&mut params, &mut rng, "pair_mlp.ff2", net.pair_hidden, net.dim)?;
        register_linear(
            &mut params,
            &mut rng,
            "pair_proj",
            net.dim + net.visual_dim,
            net.dim,
        )?;
        register_encoder(&mut params, &mut rng, "spatial", net)?;

        if cfg.ablation.use_mfe {
            register_linear(
                &mut params,
                &mut rng,
                "motion_mlp.ff1",
                cfg.motion.feature_width(),
                net.motion_hidden,
            )?;
            register_linear(&mut params, &mut rng, "motion_mlp.ff2", net.motion_hidden, net.dim)?;
            if cfg.ablation.use_mim {
                register_attention(&mut params, &mut rng, "mim.attn", net.dim)?;
                register_layer_norm(&mut params, "mim.ln1", net.dim)?;
                register_linear(&mut params, &mut rng, "mim.ff1", net.dim, net.ff_hidden)?;
                register_linear(&mut params, &mut rng, "mim.ff2", net.ff_hidden, net.dim)?;
                register_layer_norm(&mut params, "mim.ln2", net.dim)?;
            } else {
                // fusion by concatenation + linear projection
                register_linear(&mut params, &mut rng, "mim_concat", 2 * net.dim, net.dim)?;
            }
        }

        register_decoder(&mut params, &mut rng, "temporal", net)?;
        if !cfg.ablation.use_asm {
            register_linear(&mut params, &mut rng, "cls_head", net.dim, cfg.num_predicates)?;
        }
        register_linear(
            &mut params,
            &mut rng,
            "obj_head",
            net.visual_dim,
            cfg.num_object_categories,
        )?;

        Ok(RelationModel { cfg, params })
    }

    /// Restore a model from checkpointed parameters, verifying the stored
    /// config matches.
    pub fn from_parts(cfg: ModelConfig, params: ParameterSet, seed: u64) -> Result<Self> {
        let reference = RelationModel::new(cfg.clone(), seed)?;
        let expected = reference.params.names();
        let got = params.names();
        if expected != got {
            return Err(Error::CheckpointMismatch(format!(
                "parameter names differ from the model the config declares \
                 (expected {} parameters, found {})",
                expected.len(),
                got.len()
            )));
        }
        for name in &expected {
            let e = reference.params.get(name).unwrap().shape();
            let g = params.get(name).unwrap().shape();
            if e != g {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter '{name}' has shape {g:?}, config expects {e:?}"
                )));
            }
        }
        Ok(RelationModel { cfg, params })
    }

    /// Motion attributes per (track, frame) of a video; purely geometric,
    /// independent of parameters and ablation flags.
    pub fn motion_dump(&self, video: &VideoData) -> Vec<(u64, usize, MotionAttributes)> {
        let linked = link_tracks(
            &video.frames,
            self.cfg.options.person_category,
            self.cfg.options.track_keying,
        );
        let diag = video.diagonal();
        let mut out = Vec::new();
        for track in &linked.tracks {
            for f in track.frames() {
                out.push((
                    track.track_id,
                    f,
                    compute_motion_attributes(track, f, &self.cfg.motion, diag),
                ));
            }
        }
        out
    }

    /// Run the full pipeline for one video on the given tape.
    pub fn forward_video(
        &self,
        tape: &mut Tape,
        ctx: &mut NetCtx,
        video: &VideoData,
        z: Option<&EmbeddingMatrix>,
    ) -> Result<VideoForward> {
        let cfg = &self.cfg;
        let net = &cfg.net;
        if cfg.ablation.use_asm {
            let z = z.ok_or_else(|| {
                Error::Invalid("semantic matching requires an embedding matrix".into())
            })?;
            z.validate(cfg.num_predicates, net.dim)?;
        }

        let linked = link_tracks(&video.frames, cfg.options.person_category, cfg.options.track_keying);
        let tracks = linked.tracks;
        let diag = video.diagonal();

        // frame -> indices of tracks present in it
        let mut frame_tracks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (ti, track) in tracks.iter().enumerate() {
            for f in track.frames() {
                frame_tracks.entry(f).or_default().push(ti);
            }
        }

        // per (track, frame) joint feature rows
        let mut joint: BTreeMap<(usize, usize), Var> = BTreeMap::new();
        for (&frame, track_ids) in &frame_tracks {
            let n = track_ids.len();
            // batched non-learned inputs: [sub_visual | obj_visual | geometry]
            let mut base = Matrix::zeros(n, 2 * net.visual_dim + GEOMETRY_DIM);
            let mut clip = Matrix::zeros(n, net.visual_dim);
            let mut sub_emb_rows = Vec::with_capacity(n);
            let mut obj_emb_rows = Vec::with_capacity(n);
            let table = ctx.bind(tape, "cat_embed.table")?;
            for (row, &ti) in track_ids.iter().enumerate() {
                let (sub, obj) = tracks[ti].entry(frame).expect("frame listed for track");
                let sub_feat = require_feature(sub, net.visual_dim)?;
                let obj_feat = require_feature(obj, net.visual_dim)?;
                for (c, &v) in sub_feat.iter().enumerate() {
                    base.set(row, c, v);
                }
                for (c, &v) in obj_feat.iter().enumerate() {
                    base.set(row, net.visual_dim + c, v);
                }
                let geom = geometry_vector(sub, obj, video.width, video.height);
                for (c, &v) in geom.iter().enumerate() {
                    base.set(row, 2 * net.visual_dim + c, v);
                }
                // union-region visual stand-in: mean of the two detection features
                for c in 0..net.visual_dim {
                    clip.set(row, c, 0.5 * (sub_feat[c] + obj_feat[c]));
                }
                sub_emb_rows.push(tape.slice_rows(table, sub.category_id, 1)?);
                obj_emb_rows.push(tape.slice_rows(table, obj.category_id, 1)?);
            }
            let base = tape.input(base);
            let sub_emb = tape.concat_rows(&sub_emb_rows)?;
            let obj_emb = tape.concat_rows(&obj_emb_rows)?;
            let mlp_in = tape.concat_cols(&[base, sub_emb, obj_emb])?;
            let f_rel = mlp(tape, ctx, "pair_mlp", mlp_in)?;
            let clip = tape.input(clip);
            let pair_cat = tape.concat_cols(&[f_rel, clip])?;
            let f_pair = linear(tape, ctx, "pair_proj", pair_cat)?;
            let f_spatial = transformer_encoder(tape, ctx, "spatial", f_pair, net)?;

            if cfg.ablation.use_mfe {
                // motion attribute rows for the frame
                let mut motion_in = Matrix::zeros(n, cfg.motion.feature_width());
                for (row, &ti) in track_ids.iter().enumerate() {
                    let attrs = compute_motion_attributes(&tracks[ti], frame, &cfg.motion, diag);
                    for (c, v) in attrs
                        .to_vec(cfg.motion.include_validity_flags)
                        .into_iter()
                        .enumerate()
                    {
                        motion_in.set(row, c, v);
                    }
                }
                let motion_in = tape.input(motion_in);
                let f_motion = mlp(tape, ctx, "motion_mlp", motion_in)?;

                if cfg.options.mim_cross_pair && cfg.ablation.use_mim {
                    let fused = mim_fuse(tape, ctx, f_motion, f_spatial, net)?;
                    let f_joint = tape.add(f_spatial, fused)?;
                    for (row, &ti) in track_ids.iter().enumerate() {
                        joint.insert((ti, frame), tape.slice_rows(f_joint, row, 1)?);
                    }
                } else {
                    for (row, &ti) in track_ids.iter().enumerate() {
                        let spatial_row = tape.slice_rows(f_spatial, row, 1)?;
                        let motion_row = tape.slice_rows(f_motion, row, 1)?;
                        let fused = if cfg.ablation.use_mim {
                            mim_fuse(tape, ctx, motion_row, spatial_row, net)?
                        } else {
                            let cat = tape.concat_cols(&[motion_row, spatial_row])?;
                            linear(tape, ctx, "mim_concat", cat)?
                        };
                        joint.insert((ti, frame), tape.add(spatial_row, fused)?);
                    }
                }
            } else {
                // motion path disabled: the joint feature is the spatial one
                for (row, &ti) in track_ids.iter().enumerate() {
                    joint.insert((ti, frame), tape.slice_rows(f_spatial, row, 1)?);
                }
            }
        }

        // temporal decoding per track, then relation scores
        let mut rows = Vec::new();
        let mut score_blocks = Vec::new();
        for (ti, track) in tracks.iter().enumerate() {
            let frames = track.frames();
            let parts: Vec<Var> = frames.iter().map(|f| joint[&(ti, *f)]).collect();
            let trajectory = tape.concat_rows(&parts)?;
            let f_temporal = transformer_decoder(tape, ctx, "temporal", trajectory, None, net)?;
            let scores = if cfg.ablation.use_asm {
                let z = z.expect("validated above");
                let z_value = if cfg.options.asm_cosine {
                    normalize_matrix_rows(&z.z)
                } else {
                    z.z.clone()
                };
                let z_leaf = tape.input(z_value);
                let zt = tape.transpose(z_leaf);
                let features = if cfg.options.asm_cosine {
                    tape.normalize_rows(f_temporal, 1e-12)
                } else {
                    f_temporal
                };
                tape.matmul(features, zt)?
            } else {
                linear(tape, ctx, "cls_head", f_temporal)?
            };
            score_blocks.push(scores);
            for f in frames {
                rows.push((track.track_id, f));
            }
        }
        let relation_logits = if score_blocks.is_empty() {
            None
        } else {
            Some(tape.concat_rows(&score_blocks)?)
        };

        // object classification head over every detection
        let mut object_rows = Vec::new();
        let mut feat_rows = Vec::new();
        for frame in &video.frames {
            for det in &frame.detections {
                feat_rows.push(require_feature(det, net.visual_dim)?.to_vec());
                object_rows.push((frame.frame_index, det.instance_id));
            }
        }
        let object_logits = if feat_rows.is_empty() {
            None
        } else {
            let feats = tape.input(Matrix::from_rows(&feat_rows)?);
            Some(linear(tape, ctx, "obj_head", feats)?)
        };

        Ok(VideoForward {
            relation_logits,
            rows,
            object_logits,
            object_rows,
            tracks,
        })
    }
}

fn require_feature(det: &Detection, dim: usize) -> Result<&[f64]> {
    let f = det.visual_feature.as_deref().ok_or_else(|| {
        Error::Invalid(format!(
            "detection {} in frame {} has no visual feature but the config requires them",
            det.instance_id, det.frame_index
        ))
    })?;
    if f.len() != dim {
        return Err(Error::ShapeMismatch {
            op: "visual feature",
            expected: format!("{dim}"),
            got: format!("{}", f.len()),
        });
    }
    Ok(f)
}

/// Motion-guided fusion: cross-attention with the motion feature as query
/// and the spatial feature as key/value, residual around the query, then a
/// feed-forward block. Works on single rows or stacked row batches.
pub fn mim_fuse(
    tape: &mut Tape,
    ctx: &mut NetCtx,
    motion: Var,
    spatial: Var,
    net: &NetConfig,
) -> Result<Var> {
    let attn = multi_head_attention(tape, ctx, "mim.attn", motion, spatial, spatial, net.heads)?;
    let attn = ctx.dropout(tape, attn)?;
    let res = tape.add(motion, attn)?;
    let x = layers::layer_norm(tape, ctx, "mim.ln1", res)?;
    let ff = mlp(tape, ctx, "mim", x)?;
    let ff = ctx.dropout(tape, ff)?;
    let res = tape.add(x, ff)?;
    layers::layer_norm(tape, ctx, "mim.ln2", res)
}

fn normalize_matrix_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let norm = (m.row(r).iter().map(|v| v * v).sum::<f64>() + 1e-12).sqrt();
        for c in 0..m.cols() {
            out.set(r, c, m.get(r, c) / norm);
        }
    }
    out
}
