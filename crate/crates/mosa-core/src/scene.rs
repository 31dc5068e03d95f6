//! Scene primitives: detections, subject-object pairing, vocabularies,
//! triples, and cross-frame pair tracks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// A localized, categorized object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: usize,
    pub instance_id: i64,
    pub category_id: usize,
    pub box_: BoundingBox,
    pub confidence: f64,
    /// Optional visual feature vector (ingested; dimension fixed by config).
    pub visual_feature: Option<Vec<f64>>,
}

impl Detection {
    pub fn validate(&self, num_categories: usize, feature_dim: Option<usize>) -> Result<()> {
        self.box_.validate()?;
        if self.category_id >= num_categories {
            return Err(Error::Invalid(format!(
                "category_id {} out of range (vocabulary has {num_categories})",
                self.category_id
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Invalid(format!(
                "confidence {} outside [0,1]",
                self.confidence
            )));
        }
        if let (Some(d), Some(f)) = (feature_dim, self.visual_feature.as_ref()) {
            if f.len() != d {
                return Err(Error::Invalid(format!(
                    "visual feature has dimension {}, expected {d}",
                    f.len()
                )));
            }
        }
        Ok(())
    }
}

/// All detections of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_index: usize,
    pub detections: Vec<Detection>,
}

/// A subject-object candidate within one frame. Indices point into the
/// frame's detection list; the subject is always the person detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCandidate {
    pub frame_index: usize,
    pub subject: usize,
    pub object: usize,
}

/// Relation and object category names plus per-relation training frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationVocabulary {
    pub predicate_names: Vec<String>,
    pub frequencies: Vec<u64>,
    pub object_category_names: Vec<String>,
}

impl RelationVocabulary {
    pub fn num_predicates(&self) -> usize {
        self.predicate_names.len()
    }

    pub fn num_object_categories(&self) -> usize {
        self.object_category_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.predicate_names.is_empty() {
            return Err(Error::Invalid("empty predicate vocabulary".into()));
        }
        if self.predicate_names.len() != self.frequencies.len() {
            return Err(Error::Invalid(format!(
                "{} predicate names but {} frequencies",
                self.predicate_names.len(),
                self.frequencies.len()
            )));
        }
        if let Some(f) = self.frequencies.iter().find(|&&f| f < 2) {
            return Err(Error::Invalid(format!(
                "relation frequency {f} < 2 (log weighting needs n >= 2)"
            )));
        }
        let mut names: Vec<&String> = self.predicate_names.iter().collect();
        names.sort();
        names.dedup();
        if names.len() != self.predicate_names.len() {
            return Err(Error::Invalid("duplicate predicate names".into()));
        }
        Ok(())
    }
}

/// One ranked output unit: a localized subject-predicate-object triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraphTriple {
    pub frame_index: usize,
    pub subject_category: usize,
    pub subject_box: BoundingBox,
    pub predicate: usize,
    pub object_category: usize,
    pub object_box: BoundingBox,
    pub score: f64,
}

/// A subject-object pair followed across frames. Entries are the concrete
/// detections of the pair in each frame, keyed by frame index.
#[derive(Debug, Clone)]
pub struct PairTrack {
    pub track_id: u64,
    pub subject_category: usize,
    pub object_category: usize,
    pub entries: BTreeMap<usize, (Detection, Detection)>,
}

impl PairTrack {
    /// Frame indices in ascending order.
    pub fn frames(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, frame: usize) -> Option<&(Detection, Detection)> {
        self.entries.get(&frame)
    }

    /// The entry for the closest track frame strictly before `frame`.
    pub fn previous_entry(&self, frame: usize) -> Option<(usize, &(Detection, Detection))> {
        self.entries
            .range(..frame)
            .next_back()
            .map(|(f, e)| (*f, e))
    }
}

/// How detections are keyed into cross-frame pair tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackKeying {
    /// Key by (subject instance, object category). Matches single-person
    /// video with category-identified objects.
    #[default]
    ObjectCategory,
    /// Key by (subject instance, object instance).
    ObjectInstance,
}

/// Result of [`link_tracks`]: the tracks plus a count of same-frame
/// duplicate detections dropped by the highest-confidence tie rule.
#[derive(Debug, Clone)]
pub struct LinkedTracks {
    pub tracks: Vec<PairTrack>,
    pub duplicates_dropped: usize,
}

/// Enumerate person-object pairs in one frame: one candidate per ordered
/// (person, non-person) detection pair, ordered by subject then object
/// instance id.
pub fn build_pairs(frame_detections: &[Detection], person_category: usize) -> Vec<PairCandidate> {
    let mut subjects: Vec<usize> = (0..frame_detections.len())
        .filter(|&i| frame_detections[i].category_id == person_category)
        .collect();
    let mut objects: Vec<usize> = (0..frame_detections.len())
        .filter(|&i| frame_detections[i].category_id != person_category)
        .collect();
    subjects.sort_by_key(|&i| frame_detections[i].instance_id);
    objects.sort_by_key(|&i| frame_detections[i].instance_id);

    let mut out = Vec::with_capacity(subjects.len() * objects.len());
    for &s in &subjects {
        for &o in &objects {
            out.push(PairCandidate {
                frame_index: frame_detections[s].frame_index,
                subject: s,
                object: o,
            });
        }
    }
    out
}

/// Link per-frame pair candidates into cross-frame tracks.
///
/// `frames` holds each frame's detections. With [`TrackKeying::ObjectCategory`]
/// two same-category object detections in one frame are ambiguous; the
/// highest-confidence one wins (ties broken by lower instance id) and the
/// drop is counted in the result.
pub fn link_tracks(
    frames: &[FrameDetections],
    person_category: usize,
    keying: TrackKeying,
) -> LinkedTracks {
    // key -> (subject_cat, object_cat, entries)
    let mut tracks: BTreeMap<(i64, i64), PairTrack> = BTreeMap::new();
    let mut duplicates_dropped = 0usize;
    let mut next_id = 0u64;

    for frame in frames {
        let dets = &frame.detections;
        for pair in build_pairs(dets, person_category) {
            let subject = &dets[pair.subject];
            let object = &dets[pair.object];
            let key = match keying {
                TrackKeying::ObjectCategory => (subject.instance_id, object.category_id as i64),
                TrackKeying::ObjectInstance => (subject.instance_id, object.instance_id),
            };
            let track = tracks.entry(key).or_insert_with(|| {
                let t = PairTrack {
                    track_id: next_id,
                    subject_category: subject.category_id,
                    object_category: object.category_id,
                    entries: BTreeMap::new(),
                };
                next_id += 1;
                t
            });
            match track.entries.get(&pair.frame_index) {
                None => {
                    track
                        .entries
                        .insert(pair.frame_index, (subject.clone(), object.clone()));
                }
                Some((_, existing)) => {
                    // Same frame already occupied: keep the higher-confidence
                    // object, ties by lower instance id.
                    let replace = object.confidence > existing.confidence
                        || (object.confidence == existing.confidence
                            && object.instance_id < existing.instance_id);
                    if replace {
                        track
                            .entries
                            .insert(pair.frame_index, (subject.clone(), object.clone()));
                    }
                    duplicates_dropped += 1;
                }
            }
        }
    }

    let mut tracks: Vec<PairTrack> = tracks.into_values().collect();
    tracks.sort_by_key(|t| t.track_id);
    if duplicates_dropped > 0 {
        log::warn!("link_tracks dropped {duplicates_dropped} same-frame duplicate detections");
    }
    LinkedTracks {
        tracks,
        duplicates_dropped,
    }
}
