//! Deterministic synthetic video generation. Pair trajectories follow
//! labeled motion regimes chosen so that motion attributes, not appearance,
//! carry the class signal: per-detection features are category prototypes
//! plus noise, and regimes are assigned independently of object category.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{GroundTruthGraph, GtTriple};
use crate::geometry::BoundingBox;
use crate::io::VideoData;
use crate::model::{Dataset, EmbeddingMatrix, EmbeddingSource};
use crate::nn::matrix::Matrix;
use crate::scene::{Detection, FrameDetections, RelationVocabulary};

/// Motion regime of one subject-object pair; doubles as its relation label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionRegime {
    /// Monotonically decreasing pair distance.
    Approaching,
    /// Monotonically increasing pair distance.
    Receding,
    /// Co-moving with heavily overlapping boxes.
    Carried,
    /// Constant small distance, no overlap, no approach.
    StaticNear,
}

impl MotionRegime {
    pub fn name(&self) -> &'static str {
        match self {
            MotionRegime::Approaching => "approaching",
            MotionRegime::Receding => "receding",
            MotionRegime::Carried => "carried",
            MotionRegime::StaticNear => "static_near",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub regime: MotionRegime,
    /// Number of pair tracks generated under this regime.
    pub tracks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    /// Orthonormal rows (requires Nr <= dim).
    #[default]
    Orthogonal,
    /// Raw seeded Gaussian rows.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub frame_width: f64,
    pub frame_height: f64,
    /// Pairs (objects) per video; object categories within a video are
    /// distinct so category keying is unambiguous.
    pub pairs_per_video: usize,
    /// Object vocabulary size including the person category (index 0).
    pub num_object_categories: usize,
    pub regimes: Vec<RegimeSpec>,
    /// Standard deviation of per-frame box center jitter, in pixels.
    pub box_jitter_sigma: f64,
    /// Standard deviation of visual feature noise around the category
    /// prototype.
    pub feature_noise_sigma: f64,
    pub feature_dim: usize,
    /// Dimension of the generated relation embedding matrix.
    pub embed_dim: usize,
    pub embedding: EmbeddingMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            num_videos: 96,
            frames_per_video: 8,
            frame_width: 640.0,
            frame_height: 480.0,
            pairs_per_video: 3,
            num_object_categories: 7,
            regimes: vec![
                RegimeSpec { regime: MotionRegime::Approaching, tracks: 72 },
                RegimeSpec { regime: MotionRegime::Receding, tracks: 72 },
                RegimeSpec { regime: MotionRegime::Carried, tracks: 72 },
                RegimeSpec { regime: MotionRegime::StaticNear, tracks: 72 },
            ],
            box_jitter_sigma: 0.0,
            feature_noise_sigma: 0.0,
            feature_dim: 16,
            embed_dim: 64,
            embedding: EmbeddingMode::Orthogonal,
        }
    }
}

impl SynthConfig {
    /// Long-tail preset: one rare regime at 5% of the tracks, with enough
    /// jitter that the rare class is genuinely confusable with its
    /// neighbors at the decision boundary.
    pub fn long_tail() -> Self {
        SynthConfig {
            seed: 7,
            num_videos: 96,
            pairs_per_video: 2,
            regimes: vec![
                RegimeSpec { regime: MotionRegime::Approaching, tracks: 10 },
                RegimeSpec { regime: MotionRegime::Receding, tracks: 80 },
                RegimeSpec { regime: MotionRegime::Carried, tracks: 60 },
                RegimeSpec { regime: MotionRegime::StaticNear, tracks: 42 },
            ],
            box_jitter_sigma: 2.0,
            feature_noise_sigma: 0.05,
            ..SynthConfig::default()
        }
    }

    pub fn total_tracks(&self) -> usize {
        self.regimes.iter().map(|r| r.tracks).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_video < 2 {
            return Err(Error::Config("motion needs at least 2 frames per video".into()));
        }
        if self.num_videos == 0 || self.pairs_per_video == 0 {
            return Err(Error::Config("num_videos and pairs_per_video must be positive".into()));
        }
        if self.regimes.is_empty() {
            return Err(Error::Config("no motion regimes configured".into()));
        }
        if self.regimes.iter().any(|r| r.tracks == 0) {
            return Err(Error::Config(
                "every regime needs at least one track (its frequency must be positive)".into(),
            ));
        }
        let budget = self.num_videos * self.pairs_per_video;
        if self.total_tracks() > budget {
            return Err(Error::Config(format!(
                "infeasible regime frequencies: {} tracks requested but only {} pair slots \
                 ({} videos x {} pairs)",
                self.total_tracks(),
                budget,
                self.num_videos,
                self.pairs_per_video
            )));
        }
        if self.num_object_categories < self.pairs_per_video + 1 {
            return Err(Error::Config(format!(
                "need at least {} object categories (person + one per pair slot), got {}",
                self.pairs_per_video + 1,
                self.num_object_categories
            )));
        }
        if !(self.frame_width > 0.0 && self.frame_height > 0.0) {
            return Err(Error::Config("frame size must be positive".into()));
        }
        if self.frame_width < 400.0 || self.frame_height < 300.0 {
            return Err(Error::Config(
                "frame too small for the trajectory layout (need >= 400x300)".into(),
            ));
        }
        if self.feature_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("feature_dim and embed_dim must be positive".into()));
        }
        if self.box_jitter_sigma < 0.0 || self.feature_noise_sigma < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    pub fn vocabulary_names(&self) -> (Vec<String>, Vec<String>) {
        let predicates = self.regimes.iter().map(|r| r.regime.name().to_string()).collect();
        let mut objects = vec!["person".to_string()];
        for i in 1..self.num_object_categories {
            objects.push(format!("object_{i:02}"));
        }
        (predicates, objects)
    }
}

const BOX_SIZE_RANGE: (f64, f64) = (44.0, 52.0);
const PERSON_SPEED_RANGE: (f64, f64) = (2.0, 3.5);
const APPROACH_FAR_RANGE: (f64, f64) = (110.0, 140.0);
const APPROACH_NEAR_RANGE: (f64, f64) = (25.0, 40.0);
const STATIC_OFFSET_RANGE: (f64, f64) = (85.0, 115.0);
const CARRIED_OFFSET_RANGE: (f64, f64) = (5.0, 15.0);
const EDGE_MARGIN: f64 = 150.0;

/// Generate the full synthetic dataset: detections, ground truth, a
/// vocabulary with realized frequencies, and a relation embedding matrix.
/// Bitwise deterministic per seed.
pub fn synth_video(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t_count = cfg.frames_per_video;

    // category prototypes shared across videos
    let mut proto_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x93C4_67E3_7DB0_C7A4);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let prototypes: Vec<Vec<f64>> = (0..cfg.num_object_categories)
        .map(|_| {
            let raw: Vec<f64> = (0..cfg.feature_dim).map(|_| normal.sample(&mut proto_rng)).collect();
            let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            raw.into_iter().map(|v| v / n).collect()
        })
        .collect();

    // regime assignment, shuffled so regimes decorrelate from categories
    let mut assignment: Vec<usize> = cfg
        .regimes
        .iter()
        .enumerate()
        .flat_map(|(idx, spec)| std::iter::repeat(idx).take(spec.tracks))
        .collect();
    assignment.shuffle(&mut rng);

    let jitter = Normal::new(0.0, cfg.box_jitter_sigma.max(1e-300)).expect("jitter normal");
    let feat_noise = Normal::new(0.0, cfg.feature_noise_sigma.max(1e-300)).expect("feature normal");
    let sample_jitter = |rng: &mut ChaCha8Rng| -> f64 {
        if cfg.box_jitter_sigma > 0.0 {
            jitter.sample(rng)
        } else {
            0.0
        }
    };

    let mut videos = Vec::with_capacity(cfg.num_videos);
    let mut gt = GroundTruthGraph::default();
    let mut label_counts = vec![0u64; cfg.regimes.len()];
    let mut next_track = 0usize;

    for vi in 0..cfg.num_videos {
        let video_id = format!("synth-{vi:03}");
        let track_regimes: Vec<usize> = (0..cfg.pairs_per_video)
            .filter_map(|_| {
                let r = assignment.get(next_track).copied();
                next_track += 1;
                r
            })
            .collect();
        if track_regimes.is_empty() {
            // budget exhausted; emit an empty-but-valid video
        }

        // person path, kept inside the frame with room for the offsets
        let speed = rng.random_range(PERSON_SPEED_RANGE.0..PERSON_SPEED_RANGE.1);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let (ux, uy) = (speed * angle.cos(), speed * angle.sin());
        let travel = (t_count - 1) as f64;
        let feasible = |span: f64, vel: f64| -> (f64, f64) {
            let lo = EDGE_MARGIN + (-vel * travel).max(0.0);
            let hi = span - EDGE_MARGIN - (vel * travel).max(0.0);
            (lo, hi)
        };
        let (x_lo, x_hi) = feasible(cfg.frame_width, ux);
        let (y_lo, y_hi) = feasible(cfg.frame_height, uy);
        let px0 = rng.random_range(x_lo..x_hi.max(x_lo + 1.0));
        let py0 = rng.random_range(y_lo..y_hi.max(y_lo + 1.0));
        let person_size = rng.random_range(BOX_SIZE_RANGE.0..BOX_SIZE_RANGE.1);

        // per-pair regime geometry
        let mut object_categories = Vec::new();
        {
            // distinct non-person categories for this video
            let mut cats: Vec<usize> = (1..cfg.num_object_categories).collect();
            cats.shuffle(&mut rng);
            object_categories.extend(cats.into_iter().take(track_regimes.len()));
        }
        struct ObjPlan {
            regime_idx: usize,
            category: usize,
            size: f64,
            dir: (f64, f64),
            r_start: f64,
            r_end: f64,
        }
        let plans: Vec<ObjPlan> = track_regimes
            .iter()
            .zip(&object_categories)
            .map(|(&regime_idx, &category)| {
                let spec = &cfg.regimes[regime_idx];
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let dir = (angle.cos(), angle.sin());
                let size = rng.random_range(BOX_SIZE_RANGE.0..BOX_SIZE_RANGE.1);
                let (r_start, r_end) = match spec.regime {
                    MotionRegime::Approaching => (
                        rng.random_range(APPROACH_FAR_RANGE.0..APPROACH_FAR_RANGE.1),
                        rng.random_range(APPROACH_NEAR_RANGE.0..APPROACH_NEAR_RANGE.1),
                    ),
                    MotionRegime::Receding => (
                        rng.random_range(APPROACH_NEAR_RANGE.0..APPROACH_NEAR_RANGE.1),
                        rng.random_range(APPROACH_FAR_RANGE.0..APPROACH_FAR_RANGE.1),
                    ),
                    MotionRegime::Carried => {
                        let r = rng.random_range(CARRIED_OFFSET_RANGE.0..CARRIED_OFFSET_RANGE.1);
                        (r, r)
                    }
                    MotionRegime::StaticNear => {
                        let r = rng.random_range(STATIC_OFFSET_RANGE.0..STATIC_OFFSET_RANGE.1);
                        (r, r)
                    }
                };
                ObjPlan {
                    regime_idx,
                    category,
                    size,
                    dir,
                    r_start,
                    r_end,
                }
            })
            .collect();

        let mut frames = Vec::with_capacity(t_count);
        for t in 0..t_count {
            let phase = t as f64 / travel;
            let pcx = px0 + ux * t as f64;
            let pcy = py0 + uy * t as f64;
            let (pjx, pjy) = (sample_jitter(&mut rng), sample_jitter(&mut rng));
            let person_box = center_box(pcx + pjx, pcy + pjy, person_size);
            let mut detections = vec![Detection {
                frame_index: t,
                instance_id: 0,
                category_id: 0,
                box_: person_box,
                confidence: 1.0,
                visual_feature: Some(noisy_feature(
                    &prototypes[0],
                    cfg.feature_noise_sigma,
                    &feat_noise,
                    &mut rng,
                )),
            }];
            let mut triples = Vec::with_capacity(plans.len());
            for (oi, plan) in plans.iter().enumerate() {
                let r = plan.r_start + (plan.r_end - plan.r_start) * phase;
                let ocx = pcx + plan.dir.0 * r;
                let ocy = pcy + plan.dir.1 * r;
                let (ojx, ojy) = (sample_jitter(&mut rng), sample_jitter(&mut rng));
                let obj_box = center_box(ocx + ojx, ocy + ojy, plan.size);
                detections.push(Detection {
                    frame_index: t,
                    instance_id: 1 + oi as i64,
                    category_id: plan.category,
                    box_: obj_box,
                    confidence: 1.0,
                    visual_feature: Some(noisy_feature(
                        &prototypes[plan.category],
                        cfg.feature_noise_sigma,
                        &feat_noise,
                        &mut rng,
                    )),
                });
                triples.push(GtTriple {
                    subject_category: 0,
                    subject_box: person_box,
                    predicate: plan.regime_idx,
                    object_category: plan.category,
                    object_box: obj_box,
                });
                label_counts[plan.regime_idx] += 1;
            }
            if !triples.is_empty() {
                gt.frames.insert((video_id.clone(), t), triples);
            }
            frames.push(FrameDetections {
                frame_index: t,
                detections,
            });
        }
        videos.push(VideoData {
            video_id,
            width: cfg.frame_width,
            height: cfg.frame_height,
            frames,
        });
    }

    let (predicate_names, object_category_names) = cfg.vocabulary_names();
    let vocabulary = RelationVocabulary {
        predicate_names,
        frequencies: label_counts,
        object_category_names,
    };
    vocabulary.validate()?;

    let embeddings = synth_embeddings(
        vocabulary.num_predicates(),
        cfg.embed_dim,
        cfg.seed ^ 0x51D6_A2BF_34C9_E177,
        cfg.embedding,
    )?;

    Ok(Dataset {
        videos,
        gt,
        vocabulary,
        embeddings,
    })
}

fn center_box(cx: f64, cy: f64, size: f64) -> BoundingBox {
    BoundingBox {
        x1: cx - size / 2.0,
        y1: cy - size / 2.0,
        x2: cx + size / 2.0,
        y2: cy + size / 2.0,
    }
}

fn noisy_feature(
    prototype: &[f64],
    sigma: f64,
    dist: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    if sigma > 0.0 {
        prototype.iter().map(|&v| v + dist.sample(rng)).collect()
    } else {
        prototype.to_vec()
    }
}

/// Stand-in for a frozen text encoder: a seeded Nr x D matrix, either
/// orthonormalized (Gram-Schmidt) or raw Gaussian.
pub fn synth_embeddings(
    num_rows: usize,
    dim: usize,
    seed: u64,
    mode: EmbeddingMode,
) -> Result<EmbeddingMatrix> {
    if matches!(mode, EmbeddingMode::Orthogonal) && num_rows > dim {
        return Err(Error::Config(format!(
            "cannot build {num_rows} orthogonal rows in dimension {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows: Vec<Vec<f64>> = (0..num_rows)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
        .collect();

    if matches!(mode, EmbeddingMode::Orthogonal) {
        for i in 0..rows.len() {
            for j in 0..i {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = rows.split_at_mut(i);
                for (v, &u) in tail[0].iter_mut().zip(&head[j]) {
                    *v -= dot * u;
                }
            }
            let norm = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-9 {
                return Err(Error::Numeric(
                    "degenerate random rows during orthogonalization".into(),
                ));
            }
            for v in rows[i].iter_mut() {
                *v /= norm;
            }
        }
    }

    Ok(EmbeddingMatrix {
        z: Matrix::from_rows(&rows)?,
        source: EmbeddingSource::Synthetic,
    })
}
