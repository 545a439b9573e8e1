use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One vehicle's frames, per-frame boxes, and its three descriptions. Frame
/// paths are stored as written in the file, relative to the file's
/// directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Track {
    pub track_id: String,
    pub frames: Vec<String>,
    /// Per-frame [x, y, w, h] in pixels.
    pub boxes: Vec<[i64; 4]>,
    pub nl: Vec<String>,
}

impl Track {
    /// Absolute path of frame `idx` given the track file's directory.
    pub fn frame_path(&self, root: &Path, idx: usize) -> PathBuf {
        root.join(&self.frames[idx])
    }
}

/// A loaded track file: the directory it came from plus tracks sorted by id.
#[derive(Debug, Clone)]
pub struct TrackSet {
    pub root: PathBuf,
    pub tracks: Vec<Track>,
}

#[derive(Serialize, Deserialize)]
struct TrackRecord {
    frames: Vec<String>,
    boxes: Vec<[i64; 4]>,
    nl: Vec<String>,
}

fn byte_offset_of(text: &str, line: usize, column: usize) -> usize {
    let mut off = 0;
    for (i, l) in text.lines().enumerate() {
        if i + 1 == line {
            return off + column.saturating_sub(1);
        }
        off += l.len() + 1;
    }
    off
}

/// Schema checks that don't need the frame files.
fn validate_shape(id: &str, rec: &TrackRecord) -> Result<()> {
    if rec.frames.is_empty() {
        return Err(Error::data(format!("track '{id}': no frames")));
    }
    if rec.frames.len() != rec.boxes.len() {
        return Err(Error::data(format!(
            "track '{id}': {} frames but {} boxes",
            rec.frames.len(),
            rec.boxes.len()
        )));
    }
    if rec.nl.len() != 3 {
        return Err(Error::data(format!(
            "track '{id}': expected exactly 3 descriptions, got {}",
            rec.nl.len()
        )));
    }
    Ok(())
}

/// Bounds checks against the actual frame dimensions (header-only reads).
fn validate_boxes(id: &str, rec: &TrackRecord, root: &Path) -> Result<()> {
    for (fi, (frame, b)) in rec.frames.iter().zip(&rec.boxes).enumerate() {
        let path = root.join(frame);
        let (w, h) = image::image_dimensions(&path).map_err(|e| {
            Error::data(format!(
                "track '{id}' frame {fi}: cannot read {}: {e}",
                path.display()
            ))
        })?;
        let (w, h) = (w as i64, h as i64);
        let [bx, by, bw, bh] = *b;
        if bw <= 0 || bh <= 0 || bx < 0 || by < 0 || bx + bw > w || by + bh > h {
            return Err(Error::data(format!(
                "track '{id}' frame {fi}: box [{bx}, {by}, {bw}, {bh}] outside {w}x{h} bounds"
            )));
        }
    }
    Ok(())
}

/// Parses and validates a track file: JSON object mapping track_id →
/// {frames, boxes, nl}. When `check_frames` is set, every box is verified
/// against its frame's real dimensions.
pub fn load_tracks(path: &Path, check_frames: bool) -> Result<TrackSet> {
    let body = fs::read_to_string(path)?;
    let parsed: BTreeMap<String, TrackRecord> = serde_json::from_str(&body).map_err(|e| {
        Error::data(format!(
            "{}: parse error at byte {} (line {}, column {}): {e}",
            path.display(),
            byte_offset_of(&body, e.line(), e.column()),
            e.line(),
            e.column()
        ))
    })?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut tracks = Vec::with_capacity(parsed.len());
    for (id, rec) in parsed {
        validate_shape(&id, &rec)?;
        if check_frames {
            validate_boxes(&id, &rec, &root)?;
        }
        tracks.push(Track {
            track_id: id,
            frames: rec.frames,
            boxes: rec.boxes,
            nl: rec.nl,
        });
    }
    Ok(TrackSet { root, tracks })
}

/// Writes tracks as a sorted-key JSON object, the inverse of [`load_tracks`].
pub fn save_tracks(tracks: &[Track], path: &Path) -> Result<()> {
    let map: BTreeMap<&str, TrackRecord> = tracks
        .iter()
        .map(|t| {
            (
                t.track_id.as_str(),
                TrackRecord {
                    frames: t.frames.clone(),
                    boxes: t.boxes.clone(),
                    nl: t.nl.clone(),
                },
            )
        })
        .collect();
    let body = serde_json::to_string_pretty(&map)?;
    fs::write(path, body + "\n")?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct QueryRecord {
    nl: Vec<String>,
}

/// queries.json: query_id → {"nl": [3 descriptions]}.
pub fn load_queries(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let body = fs::read_to_string(path)?;
    let parsed: BTreeMap<String, QueryRecord> = serde_json::from_str(&body)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (id, rec) in parsed {
        if rec.nl.len() != 3 {
            return Err(Error::data(format!(
                "query '{id}': expected exactly 3 descriptions, got {}",
                rec.nl.len()
            )));
        }
        out.insert(id, rec.nl);
    }
    Ok(out)
}

/// truth.json: query_id → true track_id.
pub fn load_truth(path: &Path) -> Result<HashMap<String, String>> {
    let body = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&body)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::save_rgb_png;
    use crate::tensor::TensorBase;

    fn write_frame(dir: &Path, name: &str, h: usize, w: usize) {
        let t = TensorBase::<f32>::filled(&[3, h, w], 0.5);
        save_rgb_png(&dir.join(name), &t).unwrap();
    }

    fn one_track_json(box_: [i64; 4]) -> String {
        format!(
            r#"{{"t1": {{"frames": ["f0.png"], "boxes": [[{},{},{},{}]], "nl": ["A red sedan turns left.", "The red sedan is turning left.", "Red sedan makes a left turn."]}}}}"#,
            box_[0], box_[1], box_[2], box_[3]
        )
    }

    #[test]
    fn minimal_file_loads_and_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        write_frame(dir.path(), "f0.png", 24, 32);
        let path = dir.path().join("tracks.json");
        fs::write(&path, one_track_json([2, 3, 10, 8])).unwrap();
        let set = load_tracks(&path, true).unwrap();
        assert_eq!(set.tracks.len(), 1);
        assert_eq!(set.tracks[0].track_id, "t1");

        let out = dir.path().join("saved.json");
        save_tracks(&set.tracks, &out).unwrap();
        let re = load_tracks(&out, false).unwrap();
        assert_eq!(re.tracks, set.tracks);
        // Saving the reloaded set reproduces the bytes (key order normalized).
        let out2 = dir.path().join("saved2.json");
        save_tracks(&re.tracks, &out2).unwrap();
        assert_eq!(fs::read(&out).unwrap(), fs::read(&out2).unwrap());
    }

    #[test]
    fn two_descriptions_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracks.json");
        fs::write(
            &path,
            r#"{"t1": {"frames": ["f0.png"], "boxes": [[0,0,1,1]], "nl": ["one", "two"]}}"#,
        )
        .unwrap();
        let err = load_tracks(&path, false).unwrap_err().to_string();
        assert!(err.contains("3 descriptions"), "{err}");
    }

    #[test]
    fn out_of_bounds_box_names_track_and_frame() {
        let dir = tempfile::tempdir().unwrap();
        write_frame(dir.path(), "f0.png", 24, 32);
        let path = dir.path().join("tracks.json");
        fs::write(&path, one_track_json([30, 3, 10, 8])).unwrap();
        let err = load_tracks(&path, true).unwrap_err().to_string();
        assert!(err.contains("t1") && err.contains("frame 0"), "{err}");
    }

    #[test]
    fn malformed_json_reports_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracks.json");
        fs::write(&path, "{\"t1\": {\n  \"frames\": oops\n}}").unwrap();
        let err = load_tracks(&path, false).unwrap_err().to_string();
        assert!(err.contains("byte"), "{err}");
    }

    #[test]
    fn frame_box_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracks.json");
        fs::write(
            &path,
            r#"{"t1": {"frames": ["a.png", "b.png"], "boxes": [[0,0,1,1]], "nl": ["x", "y", "z"]}}"#,
        )
        .unwrap();
        assert!(load_tracks(&path, false).is_err());
    }
}
