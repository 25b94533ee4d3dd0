//! JSON-lines corpus files, one utterance per line.
//!
//! Frames are stored inline as `frames: [[f32]]` or in a side file named by
//! `frames_file` (relative to the corpus file) holding `u32 rows`, `u32 cols`
//! and little-endian `f32` data.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Utterance;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::vocab::Turn;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameStorage {
    Inline,
    /// One binary file per utterance in a `<corpus stem>.frames` directory.
    Blob,
}

#[derive(Serialize, Deserialize)]
struct Record {
    conversation_id: String,
    segment_index: usize,
    physician_id: String,
    patient_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<Vec<f32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames_file: Option<String>,
    turns: Vec<Turn>,
    fallback_split: bool,
    #[serde(default)]
    continues_turn: bool,
    #[serde(default)]
    start_frame: usize,
}

fn blob_dir(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.frames"))
}

pub fn write_corpus(path: &Path, utterances: &[Utterance], storage: FrameStorage) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let dir = blob_dir(path);
    if storage == FrameStorage::Blob {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for u in utterances {
        let (frames, frames_file) = match storage {
            FrameStorage::Inline => (
                Some((0..u.frames.rows()).map(|r| u.frames.row(r).to_vec()).collect()),
                None,
            ),
            FrameStorage::Blob => {
                let name = format!("{}_{:04}.bin", u.conversation_id, u.segment_index);
                let blob = dir.join(&name);
                write_blob(&blob, &u.frames)?;
                let rel = format!("{}/{name}", dir.file_name().unwrap_or_default().to_string_lossy());
                (None, Some(rel))
            }
        };
        let rec = Record {
            conversation_id: u.conversation_id.clone(),
            segment_index: u.segment_index,
            physician_id: u.physician_id.clone(),
            patient_id: u.patient_id.clone(),
            frames,
            frames_file,
            turns: u.turns.clone(),
            fallback_split: u.fallback_split,
            continues_turn: u.continues_turn,
            start_frame: u.start_frame,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Utterance>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        let frames = match (rec.frames, rec.frames_file) {
            (Some(rows), None) => {
                let cols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != cols) {
                    return Err(Error::format(path, format!("line {}: ragged frames", i + 1)));
                }
                Matrix::from_vec(rows.len(), cols, rows.concat())?
            }
            (None, Some(f)) => read_blob(&base.join(f))?,
            _ => {
                return Err(Error::format(
                    path,
                    format!("line {}: need exactly one of frames / frames_file", i + 1),
                ))
            }
        };
        out.push(Utterance {
            conversation_id: rec.conversation_id,
            segment_index: rec.segment_index,
            physician_id: rec.physician_id,
            patient_id: rec.patient_id,
            frames,
            turns: rec.turns,
            fallback_split: rec.fallback_split,
            continues_turn: rec.continues_turn,
            start_frame: rec.start_frame,
        });
    }
    Ok(out)
}

fn write_blob(path: &Path, m: &Matrix<f32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + 4 * m.len());
    bytes.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &x in m.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_blob(path: &Path) -> Result<Matrix<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::format(path, "frame blob shorter than its header"));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().expect("4")) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().expect("4")) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 4 {
        return Err(Error::format(path, format!("expected {rows}x{cols} floats")));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4")))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::super::{segment_conversation, Generator, GeneratorConfig};
    use super::*;

    #[test]
    fn inline_and_blob_load_identically() {
        let g = Generator::new(GeneratorConfig::compact()).unwrap();
        let c = g.conversation("conv0", 2);
        let utts = segment_conversation(&c, 250).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("inline.jsonl");
        let b = dir.path().join("blob.jsonl");
        write_corpus(&a, &utts, FrameStorage::Inline).unwrap();
        write_corpus(&b, &utts, FrameStorage::Blob).unwrap();
        let ra = read_corpus(&a).unwrap();
        let rb = read_corpus(&b).unwrap();
        assert_eq!(ra, utts);
        assert_eq!(rb, utts);
    }

    #[test]
    fn malformed_lines_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(&p, "{\"conversation_id\": 3}\n").unwrap();
        assert!(matches!(read_corpus(&p), Err(Error::Format { .. })));
    }
}
