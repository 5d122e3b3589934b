//! File formats: JSON-lines detections, poses, pseudo-labels and ground
//! truth, plus a binary point-cloud file.
//!
//! Every JSON-lines reader reports failures with the file and 1-based line.
//! Floats are written in shortest round-trip form, so save then load is
//! bit-exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{FrameInput, Proposal, Provenance, PseudoLabel, PseudoLabelSet, SequenceInput, Stream};
use crate::error::{Error, Result};
use crate::fusion::Tta;
use crate::geometry::{normalize_heading, Box7, EgoPose, FUSED_DETECTOR_ID};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: u32,
    pub detector: String,
    pub tta: Tta,
    pub stream: Stream,
    #[serde(rename = "box")]
    pub bbox: [f64; 7],
    pub score: f64,
    pub class: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub frame: u32,
    pub t: [f64; 3],
    pub q: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    frame: u32,
    #[serde(rename = "box")]
    bbox: [f64; 7],
    score: f64,
    class: u32,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthRecord {
    frame: u32,
    #[serde(rename = "box")]
    bbox: [f64; 7],
    class: u32,
}

fn box_from(
    params: [f64; 7],
    score: f64,
    class_id: u32,
    detector_id: u32,
    frame_idx: u32,
) -> Result<Box7> {
    let [cx, cy, cz, l, w, h, heading] = params;
    if !heading.is_finite() {
        return Err(Error::InvalidBox("non-finite heading".into()));
    }
    let b = Box7 {
        cx,
        cy,
        cz,
        l,
        w,
        h,
        heading: normalize_heading(heading),
        score,
        class_id,
        detector_id,
        frame_idx,
    };
    b.validate()?;
    Ok(b)
}

fn params_of(b: &Box7) -> [f64; 7] {
    [b.cx, b.cy, b.cz, b.l, b.w, b.h, b.heading]
}

fn parse_error(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

/// Non-blank lines of a file with their 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_line<T: DeserializeOwned>(path: &Path, line_no: usize, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| parse_error(path, line_no, e))
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Match a file name against a pattern with `*` (any run) and `?` (one char).
pub fn wildcard_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let n: Vec<char> = name.chars().collect();
    let (mut pi, mut ni) = (0, 0);
    let mut backtrack: Option<(usize, usize)> = None;
    while ni < n.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == n[ni]) {
            pi += 1;
            ni += 1;
        } else if pi < p.len() && p[pi] == '*' {
            backtrack = Some((pi, ni));
            pi += 1;
        } else if let Some((bp, bn)) = backtrack {
            pi = bp + 1;
            ni = bn + 1;
            backtrack = Some((bp, bn + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

/// Expand a path whose final component may contain `*` or `?` into the
/// sorted list of matching files. A pattern without wildcards names one
/// file, which must exist.
pub fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>> {
    let path = Path::new(pattern);
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Input(format!("bad path pattern {pattern}")))?;
    if !name.contains(['*', '?']) {
        if !path.is_file() {
            return Err(Error::Input(format!("no such file {pattern}")));
        }
        return Ok(vec![path.to_path_buf()]);
    }
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    if dir.to_string_lossy().contains(['*', '?']) {
        return Err(Error::Input(format!(
            "wildcards are only supported in the file name: {pattern}"
        )));
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            if let Some(n) = entry.file_name().to_str() {
                if wildcard_match(name, n) {
                    out.push(entry.path());
                }
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Input(format!("no files match {pattern}")));
    }
    Ok(out)
}

pub fn load_poses(path: &Path) -> Result<Vec<EgoPose>> {
    let mut out: Vec<EgoPose> = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let rec: PoseRecord = parse_line(path, line_no, &line)?;
        if let Some(prev) = out.last() {
            if rec.frame <= prev.frame_idx {
                return Err(parse_error(
                    path,
                    line_no,
                    format!(
                        "frame {} does not follow frame {}",
                        rec.frame, prev.frame_idx
                    ),
                ));
            }
        }
        let pose = EgoPose::from_wxyz(rec.q, rec.t, rec.frame)
            .map_err(|e| parse_error(path, line_no, e))?;
        out.push(pose);
    }
    Ok(out)
}

pub fn save_poses(poses: &[EgoPose], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in poses {
        let t = p.translation;
        write_json_line(
            &mut w,
            &PoseRecord {
                frame: p.frame_idx,
                t: [t.x, t.y, t.z],
                q: p.wxyz(),
            },
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Detection records of one file, in file order. Frames must not decrease.
pub fn load_detection_records(path: &Path) -> Result<Vec<(usize, DetectionRecord)>> {
    let mut out: Vec<(usize, DetectionRecord)> = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let rec: DetectionRecord = parse_line(path, line_no, &line)?;
        if let Some((_, prev)) = out.last() {
            if rec.frame < prev.frame {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("frame {} after frame {}", rec.frame, prev.frame),
                ));
            }
        }
        box_from(rec.bbox, rec.score, rec.class, 0, rec.frame)
            .map_err(|e| parse_error(path, line_no, e))?;
        if !rec.tta.rot.is_finite() {
            return Err(parse_error(path, line_no, "non-finite tta rotation"));
        }
        out.push((line_no, rec));
    }
    Ok(out)
}

/// Every proposal of a sequence as detection records, frame by frame,
/// 1-frame stream first.
pub fn detection_records(input: &SequenceInput) -> Vec<DetectionRecord> {
    let mut out = Vec::new();
    for f in &input.frames {
        for (stream, props) in [
            (Stream::OneFrame, &f.proposals_1f),
            (Stream::SixteenFrame, &f.proposals_16f),
        ] {
            for p in props {
                out.push(DetectionRecord {
                    frame: f.frame_idx,
                    detector: input.detectors[p.bbox.detector_id as usize].clone(),
                    tta: p.tta,
                    stream,
                    bbox: params_of(&p.bbox),
                    score: p.bbox.score,
                    class: p.bbox.class_id,
                });
            }
        }
    }
    out
}

pub fn save_detection_records(records: &[DetectionRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        write_json_line(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_detections(input: &SequenceInput, path: &Path) -> Result<()> {
    save_detection_records(&detection_records(input), path)
}

/// Per-frame points. Layout per block: `u32` count, `u32` frame index, then
/// `count` little-endian `f32` triples.
pub fn load_points(path: &Path) -> Result<BTreeMap<u32, Vec<[f64; 3]>>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut out = BTreeMap::new();
    let mut pos = 0usize;
    let word = |at: usize| -> [u8; 4] { bytes[at..at + 4].try_into().expect("4 bytes") };
    let mut block = 0usize;
    while pos < bytes.len() {
        block += 1;
        let bad = |msg: String| parse_error(path, block, msg);
        if bytes.len() - pos < 8 {
            return Err(bad("truncated block header".into()));
        }
        let count = u32::from_le_bytes(word(pos)) as usize;
        let frame = u32::from_le_bytes(word(pos + 4));
        pos += 8;
        let need = count
            .checked_mul(12)
            .ok_or_else(|| bad("point count overflows".into()))?;
        if bytes.len() - pos < need {
            return Err(bad(format!("block for frame {frame} needs {count} points")));
        }
        let pts: Vec<[f64; 3]> = (0..count)
            .map(|i| {
                let at = pos + 12 * i;
                [0, 4, 8].map(|o| f32::from_le_bytes(word(at + o)) as f64)
            })
            .collect();
        pos += need;
        if out.insert(frame, pts).is_some() {
            return Err(bad(format!("duplicate block for frame {frame}")));
        }
    }
    Ok(out)
}

/// Write points as `f32`; values not representable in `f32` are rounded.
pub fn save_points<'a>(
    frames: impl IntoIterator<Item = (u32, &'a [[f64; 3]])>,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (frame, pts) in frames {
        let count = u32::try_from(pts.len())
            .map_err(|_| Error::Input(format!("too many points in frame {frame}")))?;
        w.write_all(&count.to_le_bytes())?;
        w.write_all(&frame.to_le_bytes())?;
        for p in pts {
            for v in p {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Build a sequence from detection files, a pose file and optional points.
///
/// Frames are those of the pose file. Detector ids follow the sorted
/// detector names.
pub fn load_sequence(
    detection_paths: &[PathBuf],
    pose_path: &Path,
    points_path: Option<&Path>,
) -> Result<SequenceInput> {
    let poses = load_poses(pose_path)?;
    let mut records = Vec::new();
    for p in detection_paths {
        records.push((p.clone(), load_detection_records(p)?));
    }
    let detectors: Vec<String> = records
        .iter()
        .flat_map(|(_, r)| r.iter().map(|(_, d)| d.detector.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let detector_id = |name: &str| {
        detectors
            .binary_search_by(|d| d.as_str().cmp(name))
            .unwrap() as u32
    };

    let mut frames: Vec<FrameInput> = poses
        .iter()
        .map(|p| FrameInput::new(p.frame_idx, *p))
        .collect();
    let slot: BTreeMap<u32, usize> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| (f.frame_idx, i))
        .collect();

    for (path, recs) in &records {
        for (line_no, r) in recs {
            let &i = slot.get(&r.frame).ok_or(Error::MissingPose(r.frame))?;
            let bbox = box_from(r.bbox, r.score, r.class, detector_id(&r.detector), r.frame)
                .map_err(|e| parse_error(path, *line_no, e))?;
            let proposal = Proposal { bbox, tta: r.tta };
            match r.stream {
                Stream::OneFrame => frames[i].proposals_1f.push(proposal),
                Stream::SixteenFrame => frames[i].proposals_16f.push(proposal),
            }
        }
    }
    if let Some(pp) = points_path {
        for (frame, pts) in load_points(pp)? {
            let &i = slot.get(&frame).ok_or(Error::MissingPose(frame))?;
            frames[i].points = Some(pts);
        }
    }
    let sequence_id = pose_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let seq = SequenceInput {
        sequence_id,
        detectors,
        frames,
    };
    seq.validate()?;
    Ok(seq)
}

pub fn save_pseudo_labels(labels: &PseudoLabelSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_json_line(
        &mut w,
        &Header {
            version: FORMAT_VERSION,
            config_hash: labels.config_hash.clone(),
        },
    )?;
    for l in &labels.labels {
        write_json_line(
            &mut w,
            &LabelRecord {
                frame: l.bbox.frame_idx,
                bbox: params_of(&l.bbox),
                score: l.bbox.score,
                class: l.bbox.class_id,
                provenance: l.provenance,
            },
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_pseudo_labels(path: &Path) -> Result<PseudoLabelSet> {
    let lines = read_lines(path)?;
    let Some((header_line, header)) = lines.first() else {
        return Err(parse_error(path, 1, "missing header record"));
    };
    let header: Header = parse_line(path, *header_line, header)?;
    if header.version != FORMAT_VERSION {
        return Err(parse_error(
            path,
            *header_line,
            format!("unsupported version {}", header.version),
        ));
    }
    let mut labels = Vec::with_capacity(lines.len() - 1);
    for (line_no, line) in &lines[1..] {
        let r: LabelRecord = parse_line(path, *line_no, line)?;
        let bbox = box_from(r.bbox, r.score, r.class, FUSED_DETECTOR_ID, r.frame)
            .map_err(|e| parse_error(path, *line_no, e))?;
        labels.push(PseudoLabel {
            bbox,
            provenance: r.provenance,
        });
    }
    Ok(PseudoLabelSet {
        config_hash: header.config_hash,
        labels,
    })
}

/// Ground-truth boxes, one per line: `{"frame", "box", "class"}`.
pub fn save_ground_truth(boxes: &[Box7], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for b in boxes {
        write_json_line(
            &mut w,
            &GroundTruthRecord {
                frame: b.frame_idx,
                bbox: params_of(b),
                class: b.class_id,
            },
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<Box7>> {
    read_lines(path)?
        .into_iter()
        .map(|(line_no, line)| {
            let r: GroundTruthRecord = parse_line(path, line_no, &line)?;
            box_from(r.bbox, 1.0, r.class, 0, r.frame).map_err(|e| parse_error(path, line_no, e))
        })
        .collect()
}
