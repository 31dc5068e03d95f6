//! Motion feature extraction: the four per-pair motion attributes
//! (distance, approach velocity, sliding-window IoU, direction consistency)
//! with explicit validity flags.

use serde::{Deserialize, Serialize};

use crate::geometry::{box_iou, point_distance};
use crate::scene::PairTrack;

/// Displacements below this (in normalized units) are treated as zero when
/// computing direction consistency.
pub const EPS_MOTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    /// Sliding window length K for the mean IoU attribute.
    pub window: usize,
    /// Time between consecutive frames (frame units).
    pub frame_interval: f64,
    /// Divide pixel distances by the frame diagonal so features are
    /// resolution independent.
    pub normalize_by_diagonal: bool,
    /// Feed the four validity flags to the motion MLP alongside the
    /// attribute values.
    pub include_validity_flags: bool,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            window: 5,
            frame_interval: 1.0,
            normalize_by_diagonal: true,
            include_validity_flags: true,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        if self.window < 1 {
            return Err(crate::error::Error::Config("motion window must be >= 1".into()));
        }
        if !(self.frame_interval > 0.0) {
            return Err(crate::error::Error::Config(
                "frame interval must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Width of the motion MLP input vector.
    pub fn feature_width(&self) -> usize {
        if self.include_validity_flags {
            8
        } else {
            4
        }
    }
}

/// The four motion attributes of one pair at one frame. Invalid attributes
/// are exactly 0 with their flag false.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotionAttributes {
    pub distance: f64,
    pub velocity: f64,
    pub window_iou: f64,
    pub direction_cosine: f64,
    pub distance_valid: bool,
    pub velocity_valid: bool,
    pub window_iou_valid: bool,
    pub direction_cosine_valid: bool,
}

impl MotionAttributes {
    /// Attribute vector in MLP input order, optionally followed by the
    /// validity flags as 0/1.
    pub fn to_vec(&self, include_validity: bool) -> Vec<f64> {
        let mut v = vec![
            self.distance,
            self.velocity,
            self.window_iou,
            self.direction_cosine,
        ];
        if include_validity {
            v.extend([
                self.distance_valid as u8 as f64,
                self.velocity_valid as u8 as f64,
                self.window_iou_valid as u8 as f64,
                self.direction_cosine_valid as u8 as f64,
            ]);
        }
        v
    }
}

/// Euclidean distance between two center points.
pub fn pair_distance(c_i: (f64, f64), c_j: (f64, f64)) -> f64 {
    point_distance(c_i, c_j)
}

/// Rate of change of the pair distance; negative means approaching.
pub fn approach_velocity(d_t: f64, d_prev: f64, dt: f64) -> f64 {
    (d_t - d_prev) / dt
}

/// Cosine of the angle between the subject and object displacement vectors.
/// Invalid (0, false) when either displacement norm is below `eps`.
pub fn direction_consistency(
    c_i_t: (f64, f64),
    c_i_prev: (f64, f64),
    c_j_t: (f64, f64),
    c_j_prev: (f64, f64),
    eps: f64,
) -> (f64, bool) {
    let u = (c_i_t.0 - c_i_prev.0, c_i_t.1 - c_i_prev.1);
    let v = (c_j_t.0 - c_j_prev.0, c_j_t.1 - c_j_prev.1);
    let nu = (u.0 * u.0 + u.1 * u.1).sqrt();
    let nv = (v.0 * v.0 + v.1 * v.1).sqrt();
    if nu < eps || nv < eps {
        return (0.0, false);
    }
    let cos = (u.0 * v.0 + u.1 * v.1) / (nu * nv);
    (cos.clamp(-1.0, 1.0), true)
}

/// Mean subject-object IoU over the K frames preceding `t`, restricted to
/// frames the track actually contains. Invalid when no such frame exists.
pub fn window_mean_iou(track: &PairTrack, t: usize, k: usize) -> (f64, bool) {
    let mut sum = 0.0;
    let mut count = 0usize;
    for back in 1..=k {
        let Some(frame) = t.checked_sub(back) else { break };
        if let Some((sub, obj)) = track.entry(frame) {
            sum += box_iou(&sub.box_, &obj.box_);
            count += 1;
        }
    }
    if count == 0 {
        (0.0, false)
    } else {
        (sum / count as f64, true)
    }
}

/// Assemble all four attributes for track frame `t`. `frame_diagonal` is the
/// video frame diagonal in pixels, used when distance normalization is on.
///
/// At the first track frame velocity and direction cosine are invalid; the
/// IoU window truncates to frames present in the track.
pub fn compute_motion_attributes(
    track: &PairTrack,
    t: usize,
    cfg: &MotionConfig,
    frame_diagonal: f64,
) -> MotionAttributes {
    let (sub, obj) = track
        .entry(t)
        .expect("compute_motion_attributes called on a non-track frame");
    let scale = if cfg.normalize_by_diagonal {
        1.0 / frame_diagonal
    } else {
        1.0
    };

    let c_i = sub.box_.center();
    let c_j = obj.box_.center();
    let distance = pair_distance(c_i, c_j) * scale;

    let mut attrs = MotionAttributes {
        distance,
        distance_valid: true,
        ..MotionAttributes::default()
    };

    let (iou, iou_valid) = window_mean_iou(track, t, cfg.window);
    attrs.window_iou = iou;
    attrs.window_iou_valid = iou_valid;

    if let Some((prev_frame, (prev_sub, prev_obj))) = track.previous_entry(t) {
        let c_i_prev = prev_sub.box_.center();
        let c_j_prev = prev_obj.box_.center();
        let d_prev = pair_distance(c_i_prev, c_j_prev) * scale;
        let dt = cfg.frame_interval * (t - prev_frame) as f64;
        attrs.velocity = approach_velocity(distance, d_prev, dt);
        attrs.velocity_valid = true;

        let scaled = |p: (f64, f64)| (p.0 * scale, p.1 * scale);
        let (cos, cos_valid) = direction_consistency(
            scaled(c_i),
            scaled(c_i_prev),
            scaled(c_j),
            scaled(c_j_prev),
            EPS_MOTION,
        );
        attrs.direction_cosine = cos;
        attrs.direction_cosine_valid = cos_valid;
    }

    attrs
}
