//! Scene graph evaluation: triple ranking under the With/No Constraint
//! protocols, greedy triple matching, Recall@K and per-class mean Recall@K.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, BoundingBox};
use crate::scene::SceneGraphTriple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Each object pair contributes only its highest-scoring predicate.
    #[default]
    With,
    /// Every (pair, predicate) combination is ranked.
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Ground-truth boxes and categories given; predict predicates.
    #[default]
    Predcls,
    /// Ground-truth boxes given; predict categories and predicates.
    Sgcls,
    /// Boxes, categories, and predicates all predicted.
    Sgdet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub mode: ConstraintMode,
    pub task: Task,
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![10, 20, 50],
            mode: ConstraintMode::With,
            task: Task::Predcls,
            iou_threshold: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() {
            return Err(Error::Config("no K values".into()));
        }
        if self.ks[0] == 0 || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "K values must be positive ascending, got {:?}",
                self.ks
            )));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::Config(format!(
                "iou_threshold {} outside [0,1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// One ground-truth triple of a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTriple {
    pub subject_category: usize,
    pub subject_box: BoundingBox,
    pub predicate: usize,
    pub object_category: usize,
    pub object_box: BoundingBox,
}

/// Ground-truth triples per (video, frame).
#[derive(Debug, Clone, Default)]
pub struct GroundTruthGraph {
    pub frames: BTreeMap<(String, usize), Vec<GtTriple>>,
}

impl GroundTruthGraph {
    pub fn total_triples(&self) -> usize {
        self.frames.values().map(|v| v.len()).sum()
    }
}

/// Scored predicate distribution of one object pair in one frame, with the
/// category decisions the task prescribes (probability 1 where the category
/// is given as ground truth).
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub pair_id: u64,
    pub subject_category: usize,
    pub subject_prob: f64,
    pub subject_box: BoundingBox,
    pub object_category: usize,
    pub object_prob: f64,
    pub object_box: BoundingBox,
    /// Per-predicate probabilities, length Nr.
    pub predicate_probs: Vec<f64>,
}

/// All pair predictions of one frame.
#[derive(Debug, Clone)]
pub struct FramePredictions {
    pub video_id: String,
    pub frame_index: usize,
    pub task: Task,
    pub pairs: Vec<PairScores>,
}

/// A candidate triple in the ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedTriple {
    pub triple: SceneGraphTriple,
    pub pair_id: u64,
}

fn sort_candidates(mut cands: Vec<RankedTriple>) -> Vec<RankedTriple> {
    cands.sort_by(|a, b| {
        b.triple
            .score
            .partial_cmp(&a.triple.score)
            .expect("finite scores")
            .then(a.triple.predicate.cmp(&b.triple.predicate))
            .then(a.pair_id.cmp(&b.pair_id))
    });
    cands
}

/// Rank one frame's pair predictions into a candidate triple list.
///
/// Composite score: predicate probability times subject and object category
/// probabilities. Ties are broken by predicate index, then pair id.
pub fn rank_triples(frame: &FramePredictions, mode: ConstraintMode) -> Result<Vec<RankedTriple>> {
    let mut cands = Vec::new();
    for pair in &frame.pairs {
        if pair.predicate_probs.iter().any(|p| !p.is_finite())
            || !pair.subject_prob.is_finite()
            || !pair.object_prob.is_finite()
        {
            return Err(Error::Numeric(format!(
                "non-finite score for pair {} in frame {}",
                pair.pair_id, frame.frame_index
            )));
        }
        let make = |predicate: usize, prob: f64| RankedTriple {
            triple: SceneGraphTriple {
                frame_index: frame.frame_index,
                subject_category: pair.subject_category,
                subject_box: pair.subject_box,
                predicate,
                object_category: pair.object_category,
                object_box: pair.object_box,
                score: prob * pair.subject_prob * pair.object_prob,
            },
            pair_id: pair.pair_id,
        };
        match mode {
            ConstraintMode::With => {
                let best = pair
                    .predicate_probs
                    .iter()
                    .enumerate()
                    .max_by(|(ia, a), (ib, b)| {
                        a.partial_cmp(b).expect("finite").then(ib.cmp(ia))
                    })
                    .map(|(i, &p)| (i, p));
                if let Some((idx, p)) = best {
                    cands.push(make(idx, p));
                }
            }
            ConstraintMode::No => {
                for (idx, &p) in pair.predicate_probs.iter().enumerate() {
                    cands.push(make(idx, p));
                }
            }
        }
    }
    Ok(sort_candidates(cands))
}

/// Rank pre-scored triples (for example read back from an inference dump).
/// Triples are grouped into pairs by identical subject/object category and
/// box; under the With Constraint mode only the best predicate per pair
/// survives.
pub fn rank_scored_triples(
    triples: &[SceneGraphTriple],
    mode: ConstraintMode,
) -> Result<Vec<RankedTriple>> {
    type PairKey = (usize, [u64; 4], usize, [u64; 4]);
    let key_of = |t: &SceneGraphTriple| -> PairKey {
        let bits = |b: &BoundingBox| [b.x1.to_bits(), b.y1.to_bits(), b.x2.to_bits(), b.y2.to_bits()];
        (
            t.subject_category,
            bits(&t.subject_box),
            t.object_category,
            bits(&t.object_box),
        )
    };
    let mut pair_ids: HashMap<PairKey, u64> = HashMap::new();
    let mut cands = Vec::with_capacity(triples.len());
    for t in triples {
        if !t.score.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite triple score in frame {}",
                t.frame_index
            )));
        }
        let next = pair_ids.len() as u64;
        let id = *pair_ids.entry(key_of(t)).or_insert(next);
        cands.push(RankedTriple {
            triple: t.clone(),
            pair_id: id,
        });
    }
    if matches!(mode, ConstraintMode::With) {
        let mut best: BTreeMap<u64, RankedTriple> = BTreeMap::new();
        for c in cands {
            match best.get(&c.pair_id) {
                Some(b)
                    if b.triple.score > c.triple.score
                        || (b.triple.score == c.triple.score
                            && b.triple.predicate <= c.triple.predicate) => {}
                _ => {
                    best.insert(c.pair_id, c);
                }
            }
        }
        cands = best.into_values().collect();
    }
    Ok(sort_candidates(cands))
}

/// Does a predicted triple match a ground-truth triple under the task's
/// localization rule?
pub fn match_triple(
    pred: &SceneGraphTriple,
    gt: &GtTriple,
    task: Task,
    iou_threshold: f64,
) -> bool {
    if pred.subject_category != gt.subject_category
        || pred.object_category != gt.object_category
        || pred.predicate != gt.predicate
    {
        return false;
    }
    match task {
        Task::Predcls | Task::Sgcls => {
            pred.subject_box == gt.subject_box && pred.object_box == gt.object_box
        }
        Task::Sgdet => {
            box_iou(&pred.subject_box, &gt.subject_box) >= iou_threshold
                && box_iou(&pred.object_box, &gt.object_box) >= iou_threshold
        }
    }
}

/// Greedy top-K matching of one frame: walk the ranking in order, each
/// prediction consuming at most one still-unmatched ground-truth triple.
/// Returns which ground-truth triples were matched.
pub fn match_top_k(
    ranked: &[RankedTriple],
    gt: &[GtTriple],
    k: usize,
    task: Task,
    iou_threshold: f64,
) -> Vec<bool> {
    let mut matched = vec![false; gt.len()];
    for cand in ranked.iter().take(k) {
        for (i, g) in gt.iter().enumerate() {
            if !matched[i] && match_triple(&cand.triple, g, task, iou_threshold) {
                matched[i] = true;
                break;
            }
        }
    }
    matched
}

/// Fraction of this frame's ground-truth triples recovered in the top K.
pub fn recall_at_k(
    ranked: &[RankedTriple],
    gt: &[GtTriple],
    k: usize,
    task: Task,
    iou_threshold: f64,
) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let matched = match_top_k(ranked, gt, k, task, iou_threshold);
    matched.iter().filter(|&&m| m).count() as f64 / gt.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub mode: ConstraintMode,
    /// K -> Recall@K averaged over frames with at least one GT triple.
    pub recall: BTreeMap<usize, f64>,
    /// K -> per-predicate-class recall averaged over classes present in GT.
    pub mean_recall: BTreeMap<usize, f64>,
    /// predicate index -> K -> recall over that class's GT triples.
    pub per_class_recall: BTreeMap<usize, BTreeMap<usize, f64>>,
    pub frame_count: usize,
}

/// Evaluate ranked predictions against ground truth for every configured K.
///
/// Frames without ground-truth triples are skipped. Per-class recalls pool
/// ground-truth triples of a class across all frames.
pub fn evaluate(
    predictions: &[FramePredictions],
    gt: &GroundTruthGraph,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    cfg.validate()?;
    for f in predictions {
        if f.task != cfg.task {
            return Err(Error::Invalid(format!(
                "predictions for video '{}' frame {} carry task {:?} but evaluation expects {:?}",
                f.video_id, f.frame_index, f.task, cfg.task
            )));
        }
    }
    let mut by_key: HashMap<(&str, usize), &FramePredictions> = HashMap::new();
    for f in predictions {
        by_key.insert((f.video_id.as_str(), f.frame_index), f);
    }

    let ranked_of = |key: &(String, usize)| -> Result<Vec<RankedTriple>> {
        match by_key.get(&(key.0.as_str(), key.1)) {
            Some(f) => rank_triples(f, cfg.mode),
            None => Ok(Vec::new()),
        }
    };
    evaluate_ranked(gt, cfg, ranked_of)
}

/// Same as [`evaluate`] but for already-scored triple dumps.
pub fn evaluate_triples(
    triples_per_frame: &BTreeMap<(String, usize), Vec<SceneGraphTriple>>,
    gt: &GroundTruthGraph,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    cfg.validate()?;
    evaluate_ranked(gt, cfg, |key| match triples_per_frame.get(key) {
        Some(ts) => rank_scored_triples(ts, cfg.mode),
        None => Ok(Vec::new()),
    })
}

fn evaluate_ranked(
    gt: &GroundTruthGraph,
    cfg: &EvalConfig,
    mut ranked_of: impl FnMut(&(String, usize)) -> Result<Vec<RankedTriple>>,
) -> Result<MetricReport> {
    let mut recall_sums: BTreeMap<usize, f64> = cfg.ks.iter().map(|&k| (k, 0.0)).collect();
    // predicate -> K -> (matched, total)
    let mut class_counts: BTreeMap<usize, BTreeMap<usize, (usize, usize)>> = BTreeMap::new();
    let mut frame_count = 0usize;

    for (key, gt_triples) in &gt.frames {
        if gt_triples.is_empty() {
            continue;
        }
        frame_count += 1;
        let ranked = ranked_of(key)?;
        for &k in &cfg.ks {
            let matched = match_top_k(&ranked, gt_triples, k, cfg.task, cfg.iou_threshold);
            let hit = matched.iter().filter(|&&m| m).count();
            *recall_sums.get_mut(&k).unwrap() += hit as f64 / gt_triples.len() as f64;
            for (g, &m) in gt_triples.iter().zip(&matched) {
                let entry = class_counts
                    .entry(g.predicate)
                    .or_default()
                    .entry(k)
                    .or_insert((0, 0));
                entry.0 += m as usize;
                entry.1 += 1;
            }
        }
    }

    let mut recall = BTreeMap::new();
    let mut mean_recall = BTreeMap::new();
    let mut per_class_recall: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for &k in &cfg.ks {
        let r = if frame_count > 0 {
            recall_sums[&k] / frame_count as f64
        } else {
            0.0
        };
        recall.insert(k, r);
        let mut class_recalls = Vec::new();
        for (&class, counts) in &class_counts {
            if let Some(&(hit, total)) = counts.get(&k) {
                let cr = hit as f64 / total as f64;
                class_recalls.push(cr);
                per_class_recall.entry(class).or_default().insert(k, cr);
            }
        }
        let mr = if class_recalls.is_empty() {
            0.0
        } else {
            class_recalls.iter().sum::<f64>() / class_recalls.len() as f64
        };
        mean_recall.insert(k, mr);
    }

    Ok(MetricReport {
        task: cfg.task,
        mode: cfg.mode,
        recall,
        mean_recall,
        per_class_recall,
        frame_count,
    })
}
