//! File formats: detection JSONL, binary embedding matrices, vocabulary
//! JSON, ground-truth and prediction JSONL. Schema violations report line
//! numbers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{GroundTruthGraph, GtTriple};
use crate::geometry::BoundingBox;
use crate::nn::matrix::Matrix;
use crate::scene::{Detection, FrameDetections, RelationVocabulary, SceneGraphTriple};

/// 12-byte magic followed by a little-endian u32 version.
pub const EMBEDDING_MAGIC: &[u8; 12] = b"MOSAEMBEDMTX";
pub const EMBEDDING_VERSION: u32 = 1;

/// One video's detections plus its frame geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoData {
    pub video_id: String,
    pub width: f64,
    pub height: f64,
    pub frames: Vec<FrameDetections>,
}

impl VideoData {
    pub fn diagonal(&self) -> f64 {
        (self.width * self.width + self.height * self.height).sqrt()
    }
}

// ----- detection JSONL -----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    video_id: String,
    frame_index: usize,
    width: f64,
    height: f64,
    detections: Vec<DetectionJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionJson {
    instance_id: i64,
    category_id: usize,
    #[serde(rename = "box")]
    box_: [f64; 4],
    confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
}

impl DetectionJson {
    fn into_detection(self, frame_index: usize) -> Result<Detection> {
        let [x1, y1, x2, y2] = self.box_;
        Ok(Detection {
            frame_index,
            instance_id: self.instance_id,
            category_id: self.category_id,
            box_: BoundingBox::new(x1, y1, x2, y2)?,
            confidence: self.confidence,
            visual_feature: self.feature,
        })
    }

    fn from_detection(det: &Detection) -> Self {
        DetectionJson {
            instance_id: det.instance_id,
            category_id: det.category_id,
            box_: [det.box_.x1, det.box_.y1, det.box_.x2, det.box_.y2],
            confidence: det.confidence,
            feature: det.visual_feature.clone(),
        }
    }
}

pub fn write_detections(path: &Path, videos: &[VideoData]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for video in videos {
        for frame in &video.frames {
            let line = DetectionLine {
                video_id: video.video_id.clone(),
                frame_index: frame.frame_index,
                width: video.width,
                height: video.height,
                detections: frame.detections.iter().map(DetectionJson::from_detection).collect(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read detections grouped into videos (first-seen order); frames are sorted
/// by index within each video.
pub fn read_detections(path: &Path) -> Result<Vec<VideoData>> {
    let r = BufReader::new(File::open(path)?);
    let mut order: Vec<String> = Vec::new();
    let mut videos: BTreeMap<String, VideoData> = BTreeMap::new();
    for (lineno, line) in r.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DetectionLine = serde_json::from_str(&line)
            .map_err(|e| Error::data_at(lineno, format!("bad detection line: {e}")))?;
        if !(parsed.width > 0.0 && parsed.height > 0.0) {
            return Err(Error::data_at(lineno, "non-positive frame size"));
        }
        let mut detections = Vec::with_capacity(parsed.detections.len());
        for d in parsed.detections {
            let det = d
                .into_detection(parsed.frame_index)
                .map_err(|e| Error::data_at(lineno, e.to_string()))?;
            if !(0.0..=1.0).contains(&det.confidence) {
                return Err(Error::data_at(
                    lineno,
                    format!("confidence {} outside [0,1]", det.confidence),
                ));
            }
            detections.push(det);
        }
        let entry = videos.entry(parsed.video_id.clone()).or_insert_with(|| {
            order.push(parsed.video_id.clone());
            VideoData {
                video_id: parsed.video_id.clone(),
                width: parsed.width,
                height: parsed.height,
                frames: Vec::new(),
            }
        });
        if entry.width != parsed.width || entry.height != parsed.height {
            return Err(Error::data_at(
                lineno,
                format!("frame size changed within video '{}'", parsed.video_id),
            ));
        }
        if entry.frames.iter().any(|f| f.frame_index == parsed.frame_index) {
            return Err(Error::data_at(
                lineno,
                format!(
                    "duplicate frame {} in video '{}'",
                    parsed.frame_index, parsed.video_id
                ),
            ));
        }
        entry.frames.push(FrameDetections {
            frame_index: parsed.frame_index,
            detections,
        });
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut v = videos.remove(&id).unwrap();
        v.frames.sort_by_key(|f| f.frame_index);
        out.push(v);
    }
    Ok(out)
}

// ----- embedding binary -----

pub fn write_embeddings(path: &Path, z: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&(z.rows() as u64).to_le_bytes())?;
    w.write_all(&(z.cols() as u64).to_le_bytes())?;
    for &v in z.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Matrix> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 12];
    r.read_exact(&mut magic)
        .map_err(|_| Error::data("embedding file too short for magic"))?;
    if &magic != EMBEDDING_MAGIC {
        return Err(Error::data("not an embedding matrix file (bad magic)"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)
        .map_err(|_| Error::data("embedding file truncated at version"))?;
    let version = u32::from_le_bytes(word);
    if version != EMBEDDING_VERSION {
        return Err(Error::data(format!("unsupported embedding version {version}")));
    }
    let mut qword = [0u8; 8];
    r.read_exact(&mut qword)
        .map_err(|_| Error::data("embedding file truncated at row count"))?;
    let rows = u64::from_le_bytes(qword) as usize;
    r.read_exact(&mut qword)
        .map_err(|_| Error::data("embedding file truncated at column count"))?;
    let cols = u64::from_le_bytes(qword) as usize;
    if rows.saturating_mul(cols) > 100_000_000 {
        return Err(Error::data(format!("embedding matrix {rows}x{cols} too large")));
    }
    let mut buf = vec![0u8; rows * cols * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::data("embedding file truncated inside data"))?;
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Matrix::from_vec(rows, cols, data)
}

// ----- vocabulary JSON -----

pub fn write_vocabulary(path: &Path, vocab: &RelationVocabulary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, vocab)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_vocabulary(path: &Path) -> Result<RelationVocabulary> {
    let r = BufReader::new(File::open(path)?);
    let vocab: RelationVocabulary =
        serde_json::from_reader(r).map_err(|e| Error::data(format!("bad vocabulary: {e}")))?;
    vocab.validate()?;
    Ok(vocab)
}

// ----- ground-truth JSONL -----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtLine {
    video_id: String,
    frame_index: usize,
    triples: Vec<GtTripleJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtTripleJson {
    subject_category: usize,
    subject_box: [f64; 4],
    predicate: usize,
    object_category: usize,
    object_box: [f64; 4],
}

fn box_from(a: [f64; 4]) -> Result<BoundingBox> {
    BoundingBox::new(a[0], a[1], a[2], a[3])
}

fn box_to(b: &BoundingBox) -> [f64; 4] {
    [b.x1, b.y1, b.x2, b.y2]
}

pub fn write_gt(path: &Path, gt: &GroundTruthGraph) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ((video_id, frame_index), triples) in &gt.frames {
        let line = GtLine {
            video_id: video_id.clone(),
            frame_index: *frame_index,
            triples: triples
                .iter()
                .map(|t| GtTripleJson {
                    subject_category: t.subject_category,
                    subject_box: box_to(&t.subject_box),
                    predicate: t.predicate,
                    object_category: t.object_category,
                    object_box: box_to(&t.object_box),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_gt(path: &Path) -> Result<GroundTruthGraph> {
    let r = BufReader::new(File::open(path)?);
    let mut gt = GroundTruthGraph::default();
    for (lineno, line) in r.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: GtLine = serde_json::from_str(&line)
            .map_err(|e| Error::data_at(lineno, format!("bad ground-truth line: {e}")))?;
        let mut triples = Vec::with_capacity(parsed.triples.len());
        for t in parsed.triples {
            triples.push(GtTriple {
                subject_category: t.subject_category,
                subject_box: box_from(t.subject_box)
                    .map_err(|e| Error::data_at(lineno, e.to_string()))?,
                predicate: t.predicate,
                object_category: t.object_category,
                object_box: box_from(t.object_box)
                    .map_err(|e| Error::data_at(lineno, e.to_string()))?,
            });
        }
        if gt
            .frames
            .insert((parsed.video_id.clone(), parsed.frame_index), triples)
            .is_some()
        {
            return Err(Error::data_at(
                lineno,
                format!(
                    "duplicate ground-truth frame {} in video '{}'",
                    parsed.frame_index, parsed.video_id
                ),
            ));
        }
    }
    Ok(gt)
}

// ----- prediction JSONL -----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    video_id: String,
    frame_index: usize,
    triples: Vec<TripleJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TripleJson {
    subject_category: usize,
    subject_box: [f64; 4],
    predicate: usize,
    object_category: usize,
    object_box: [f64; 4],
    score: f64,
}

pub fn write_predictions(
    path: &Path,
    triples: &BTreeMap<(String, usize), Vec<SceneGraphTriple>>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ((video_id, frame_index), ts) in triples {
        let line = PredictionLine {
            video_id: video_id.clone(),
            frame_index: *frame_index,
            triples: ts
                .iter()
                .map(|t| TripleJson {
                    subject_category: t.subject_category,
                    subject_box: box_to(&t.subject_box),
                    predicate: t.predicate,
                    object_category: t.object_category,
                    object_box: box_to(&t.object_box),
                    score: t.score,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<(String, usize), Vec<SceneGraphTriple>>> {
    let r = BufReader::new(File::open(path)?);
    let mut out: BTreeMap<(String, usize), Vec<SceneGraphTriple>> = BTreeMap::new();
    for (lineno, line) in r.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PredictionLine = serde_json::from_str(&line)
            .map_err(|e| Error::data_at(lineno, format!("bad prediction line: {e}")))?;
        let mut ts = Vec::with_capacity(parsed.triples.len());
        for t in parsed.triples {
            if !t.score.is_finite() {
                return Err(Error::data_at(lineno, "non-finite triple score"));
            }
            ts.push(SceneGraphTriple {
                frame_index: parsed.frame_index,
                subject_category: t.subject_category,
                subject_box: box_from(t.subject_box)
                    .map_err(|e| Error::data_at(lineno, e.to_string()))?,
                predicate: t.predicate,
                object_category: t.object_category,
                object_box: box_from(t.object_box)
                    .map_err(|e| Error::data_at(lineno, e.to_string()))?,
                score: t.score,
            });
        }
        out.entry((parsed.video_id, parsed.frame_index))
            .or_default()
            .extend(ts);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_videos() -> Vec<VideoData> {
        let det = |frame: usize, inst: i64, cat: usize, x: f64| Detection {
            frame_index: frame,
            instance_id: inst,
            category_id: cat,
            box_: BoundingBox::new(x, 10.0, x + 40.0, 60.0).unwrap(),
            confidence: 0.95,
            visual_feature: Some(vec![0.25, -1.5, 3.0]),
        };
        vec![VideoData {
            video_id: "vid-a".into(),
            width: 640.0,
            height: 480.0,
            frames: vec![
                FrameDetections {
                    frame_index: 0,
                    detections: vec![det(0, 0, 0, 100.0), det(0, 1, 1, 300.0)],
                },
                FrameDetections {
                    frame_index: 1,
                    detections: vec![det(1, 0, 0, 110.0), det(1, 1, 1, 290.0)],
                },
            ],
        }]
    }

    #[test]
    fn detections_roundtrip_value_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.jsonl");
        let videos = sample_videos();
        write_detections(&path, &videos).unwrap();
        let read = read_detections(&path).unwrap();
        assert_eq!(read, videos);
        // re-serialization is byte identical
        let path2 = dir.path().join("det2.jsonl");
        write_detections(&path2, &read).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn detection_schema_violation_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.jsonl");
        std::fs::write(
            &path,
            "{\"video_id\":\"v\",\"frame_index\":0,\"width\":10,\"height\":10,\"detections\":[]}\n\
             {\"video_id\":\"v\",\"frame_index\":1,\"width\":10,\"height\":10,\"detections\":[],\"extra\":1}\n",
        )
        .unwrap();
        let err = read_detections(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "got: {msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn embeddings_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.bin");
        let z = Matrix::from_vec(3, 4, (0..12).map(|i| i as f64 * 0.5 - 2.0).collect()).unwrap();
        write_embeddings(&path, &z).unwrap();
        let read = read_embeddings(&path).unwrap();
        assert_eq!(read.shape(), (3, 4));
        // values pass through f32
        for (a, b) in read.data().iter().zip(z.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn embeddings_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.bin");
        std::fs::write(&path, b"NOTANEMBEDDIxxxxxxxxxxxxxxxx").unwrap();
        assert!(read_embeddings(&path).is_err());
    }

    #[test]
    fn vocabulary_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        let vocab = RelationVocabulary {
            predicate_names: vec!["near".into(), "holding".into()],
            frequencies: vec![120, 30],
            object_category_names: vec!["person".into(), "cup".into()],
        };
        write_vocabulary(&path, &vocab).unwrap();
        assert_eq!(read_vocabulary(&path).unwrap(), vocab);

        let bad = RelationVocabulary {
            frequencies: vec![120, 1],
            ..vocab
        };
        write_vocabulary(&path, &bad).unwrap();
        assert!(read_vocabulary(&path).is_err());
    }

    #[test]
    fn gt_and_predictions_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let gt_path = dir.path().join("gt.jsonl");
        let mut gt = GroundTruthGraph::default();
        gt.frames.insert(
            ("v".into(), 0),
            vec![GtTriple {
                subject_category: 0,
                subject_box: BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                predicate: 1,
                object_category: 2,
                object_box: BoundingBox::new(20.0, 0.0, 30.0, 10.0).unwrap(),
            }],
        );
        write_gt(&gt_path, &gt).unwrap();
        let read = read_gt(&gt_path).unwrap();
        assert_eq!(read.frames, gt.frames);

        let pred_path = dir.path().join("pred.jsonl");
        let mut preds = BTreeMap::new();
        preds.insert(
            ("v".to_string(), 0usize),
            vec![SceneGraphTriple {
                frame_index: 0,
                subject_category: 0,
                subject_box: BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                predicate: 1,
                object_category: 2,
                object_box: BoundingBox::new(20.0, 0.0, 30.0, 10.0).unwrap(),
                score: 0.75,
            }],
        );
        write_predictions(&pred_path, &preds).unwrap();
        assert_eq!(read_predictions(&pred_path).unwrap(), preds);
    }
}
