//! Line-delimited dataset files: a JSON header line with the schema
//! metadata, then one JSON video record per line. UTF-8 throughout.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::{Dataset, VideoRecord};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = serde_json::to_string(ds).map_err(|e| Error::other(e.to_string()))?;
    writeln!(w, "{header}")?;
    for video in &ds.videos {
        let line = serde_json::to_string(video).map_err(|e| Error::other(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset. An empty file is an empty dataset; malformed lines
/// report their line number and byte offset.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line?);
    }
    parse_lines(&lines)
}

fn parse_lines(lines: &[String]) -> Result<Dataset> {
    let mut offset = 0usize;
    let mut nonempty = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        if !line.trim().is_empty() {
            nonempty.push((idx + 1, offset, line));
        }
        offset += line.len() + 1;
    }
    if nonempty.is_empty() {
        return Ok(Dataset {
            schema_version: SCHEMA_VERSION,
            v: 17,
            c: 2,
            num_classes: 0,
            layout: "coco17".into(),
            videos: Vec::new(),
        });
    }
    let (line_no, off, header) = nonempty[0];
    let mut ds: Dataset = serde_json::from_str(header).map_err(|e| Error::Parse {
        line: line_no,
        offset: off + e.column().saturating_sub(1),
        detail: format!("bad header: {e}"),
    })?;
    if ds.schema_version != SCHEMA_VERSION {
        return Err(Error::Parse {
            line: line_no,
            offset: off,
            detail: format!(
                "unknown schema version {} (supported: {})",
                ds.schema_version, SCHEMA_VERSION
            ),
        });
    }
    for &(line_no, off, line) in &nonempty[1..] {
        let video: VideoRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            offset: off + e.column().saturating_sub(1),
            detail: e.to_string(),
        })?;
        ds.videos.push(video);
    }
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BBox, Labels, Skeleton};

    fn tiny_dataset(n_videos: usize) -> Dataset {
        let videos = (0..n_videos)
            .map(|i| VideoRecord {
                video_id: format!("vid{i}"),
                fps: 10.0,
                num_frames: 2,
                frames: vec![
                    vec![Skeleton {
                        frame_index: 0,
                        joints: vec![0.5; 2],
                        joint_conf: vec![1.0],
                        bbox: BBox::new(0.4, 0.4, 0.6, 0.6).unwrap(),
                        detector_score: 0.9,
                        track_id: Some(i as u64),
                    }],
                    vec![],
                ],
                labels: Labels::Video { class_id: i % 2 },
            })
            .collect();
        Dataset {
            schema_version: SCHEMA_VERSION,
            v: 1,
            c: 2,
            num_classes: 2,
            layout: "single".into(),
            videos,
        }
    }

    #[test]
    fn save_load_roundtrip_equal() {
        let dir = std::env::temp_dir().join("skelact_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tiny.jsonl");
        let ds = tiny_dataset(3);
        save_dataset(&path, &ds).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn serialization_is_idempotent() {
        let dir = std::env::temp_dir().join("skelact_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.jsonl");
        let p2 = dir.join("b.jsonl");
        let ds = tiny_dataset(2);
        save_dataset(&p1, &ds).unwrap();
        let loaded = load_dataset(&p1).unwrap();
        save_dataset(&p2, &loaded).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = std::env::temp_dir().join("skelact_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let ds = load_dataset(&path).unwrap();
        assert!(ds.videos.is_empty());
    }

    #[test]
    fn truncated_file_reports_position() {
        let dir = std::env::temp_dir().join("skelact_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.jsonl");
        let ds = tiny_dataset(2);
        save_dataset(&path, &ds).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 40);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_dataset(&path).unwrap_err();
        match err {
            Error::Parse { line, offset, .. } => {
                assert_eq!(line, 3);
                assert!(offset > 0);
            }
            other => panic!("expected parse error, got {other}"),
        }
    }
}
