//! Binary and JSON serialization of labeled motion datasets.
//!
//! The binary layout (all integers little-endian, all floats IEEE-754
//! binary32):
//!
//! ```text
//! magic   5 bytes  "MSEQ1"
//! u32     persons P
//! u32     frames T
//! u32     joints J
//! u32     dims D
//! u32     representation code (0 joint positions, 1 limb vectors)
//! u32     class count A
//! u32     sample count N
//! then N samples:
//!   u32   action label (< A)
//!   f32   roots, P * T * 3 values, person-major then frame then xyz
//!   f32   poses, P * T * J * D values in index order
//! ```
//!
//! Values are quantized to f32 on write and widened back on read, so a
//! load/save cycle is byte-identical. The JSON export mirrors the same
//! fields with nested arrays in place of the packed floats.

use super::{LabeledDataset, MotionSequence, Representation};
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 5] = b"MSEQ1";

/// Refuse headers implying more than this many values per sample; guards
/// against allocating on corrupt headers.
const MAX_SAMPLE_VALUES: u64 = 1 << 28;

struct CountingReader<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> CountingReader<R> {
    fn new(inner: R) -> Self {
        CountingReader { inner, pos: 0 }
    }
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos += n as u64;
        Ok(n)
    }
}

fn truncated(pos: u64, what: &str) -> Error {
    Error::data(format!(
        "dataset stream truncated near byte {pos} while reading {what}"
    ))
}

/// Writes the dataset in the binary layout described at module level.
pub fn write_dataset<W: Write>(mut w: W, ds: &LabeledDataset) -> Result<()> {
    ds.validate()?;
    let first = &ds.sequences[0];
    let (p, t, j, d) = (
        first.persons(),
        first.frames(),
        first.joints(),
        first.dims(),
    );
    let ctx = "dataset write";
    let io = |e: std::io::Error| Error::io(e, ctx);
    w.write_all(MAGIC).map_err(io)?;
    for v in [p, t, j, d] {
        w.write_u32::<LittleEndian>(v as u32).map_err(io)?;
    }
    w.write_u32::<LittleEndian>(first.repr.code()).map_err(io)?;
    w.write_u32::<LittleEndian>(ds.class_count as u32).map_err(io)?;
    w.write_u32::<LittleEndian>(ds.len() as u32).map_err(io)?;
    for (seq, &label) in ds.sequences.iter().zip(ds.labels.iter()) {
        w.write_u32::<LittleEndian>(label as u32).map_err(io)?;
        for v in seq.roots.iter() {
            w.write_f32::<LittleEndian>(*v as f32).map_err(io)?;
        }
        for v in seq.poses.iter() {
            w.write_f32::<LittleEndian>(*v as f32).map_err(io)?;
        }
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]. Class names are not stored
/// in the format and come back as `class_<i>`.
pub fn read_dataset<R: Read>(r: R) -> Result<LabeledDataset> {
    let mut r = CountingReader::new(r);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| truncated(r.pos, "magic"))?;
    if &magic != MAGIC {
        return Err(Error::data(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let mut header = [0u32; 7];
    for h in header.iter_mut() {
        *h = r
            .read_u32::<LittleEndian>()
            .map_err(|_| truncated(r.pos, "header"))?;
    }
    let [p, t, j, d, repr_code, class_count, n] = header;
    let repr = Representation::from_code(repr_code)?;
    let (p, t, j, d) = (p as usize, t as usize, j as usize, d as usize);
    if p == 0 || t == 0 || j == 0 || d == 0 {
        return Err(Error::data("dataset header has zero-sized dimension"));
    }
    let per_sample = (p * t * 3 + p * t * j * d) as u64;
    if per_sample > MAX_SAMPLE_VALUES {
        return Err(Error::data(format!(
            "dataset header implies {per_sample} values per sample, refusing"
        )));
    }
    let mut sequences = Vec::with_capacity(n as usize);
    let mut labels = Vec::with_capacity(n as usize);
    for s in 0..n {
        let label = r
            .read_u32::<LittleEndian>()
            .map_err(|_| truncated(r.pos, &format!("label of sample {s}")))?;
        if label >= class_count {
            return Err(Error::data(format!(
                "sample {s} label {label} exceeds class count {class_count}"
            )));
        }
        let mut roots = vec![0f32; p * t * 3];
        r.read_f32_into::<LittleEndian>(&mut roots)
            .map_err(|_| truncated(r.pos, &format!("roots of sample {s}")))?;
        let mut poses = vec![0f32; p * t * j * d];
        r.read_f32_into::<LittleEndian>(&mut poses)
            .map_err(|_| truncated(r.pos, &format!("poses of sample {s}")))?;
        let roots = Array3::from_shape_vec(
            (p, t, 3),
            roots.into_iter().map(f64::from).collect(),
        )
        .expect("roots shape");
        let poses = Array4::from_shape_vec(
            (p, t, j, d),
            poses.into_iter().map(f64::from).collect(),
        )
        .expect("poses shape");
        sequences.push(MotionSequence { roots, poses, repr });
        labels.push(label as usize);
    }
    // trailing garbage means the file was not produced by this writer
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::data(format!(
                "dataset stream has trailing bytes after byte {}",
                r.pos - 1
            )))
        }
        Err(e) => return Err(Error::io(e, "dataset trailing read")),
    }
    let ds = LabeledDataset {
        sequences,
        labels,
        class_count: class_count as usize,
        class_names: (0..class_count).map(|c| format!("class_{c}")).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(path: &Path, ds: &LabeledDataset) -> Result<()> {
    let f = std::fs::File::create(path)
        .map_err(|e| Error::io(e, format!("create {}", path.display())))?;
    write_dataset(BufWriter::new(f), ds)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::io(e, format!("open {}", path.display())))?;
    read_dataset(BufReader::new(f))
}

#[derive(Serialize, Deserialize)]
struct JsonSample {
    action: usize,
    roots: Vec<Vec<[f32; 3]>>,
    poses: Vec<Vec<Vec<Vec<f32>>>>,
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    persons: usize,
    frames: usize,
    joints: usize,
    dims: usize,
    representation: Representation,
    class_count: usize,
    samples: Vec<JsonSample>,
}

/// Writes the JSON mirror of the binary layout.
pub fn write_json<W: Write>(w: W, ds: &LabeledDataset) -> Result<()> {
    ds.validate()?;
    let first = &ds.sequences[0];
    let doc = JsonDataset {
        persons: first.persons(),
        frames: first.frames(),
        joints: first.joints(),
        dims: first.dims(),
        representation: first.repr,
        class_count: ds.class_count,
        samples: ds
            .sequences
            .iter()
            .zip(ds.labels.iter())
            .map(|(seq, &label)| JsonSample {
                action: label,
                roots: (0..seq.persons())
                    .map(|p| {
                        (0..seq.frames())
                            .map(|t| {
                                [
                                    seq.roots[(p, t, 0)] as f32,
                                    seq.roots[(p, t, 1)] as f32,
                                    seq.roots[(p, t, 2)] as f32,
                                ]
                            })
                            .collect()
                    })
                    .collect(),
                poses: (0..seq.persons())
                    .map(|p| {
                        (0..seq.frames())
                            .map(|t| {
                                (0..seq.joints())
                                    .map(|j| {
                                        (0..seq.dims())
                                            .map(|d| seq.poses[(p, t, j, d)] as f32)
                                            .collect()
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_writer(w, &doc).map_err(|e| Error::data(format!("json export: {e}")))
}

pub fn export_json(path: &Path, ds: &LabeledDataset) -> Result<()> {
    let f = std::fs::File::create(path)
        .map_err(|e| Error::io(e, format!("create {}", path.display())))?;
    write_json(BufWriter::new(f), ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synthesize, SynthSpec};

    fn toy_dataset() -> LabeledDataset {
        let (ds, _) = synthesize(&SynthSpec::multi_person_toy(3, 5, 42)).unwrap();
        ds
    }

    #[test]
    fn binary_round_trip_is_byte_identical_after_quantization() {
        let ds = toy_dataset();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &ds).unwrap();
        let loaded = read_dataset(bytes.as_slice()).unwrap();
        assert_eq!(loaded.len(), ds.len());
        assert_eq!(loaded.labels, ds.labels);
        assert_eq!(loaded.class_count, ds.class_count);
        // a second cycle reproduces the exact bytes: f32 quantization is
        // idempotent
        let mut bytes2 = Vec::new();
        write_dataset(&mut bytes2, &loaded).unwrap();
        assert_eq!(bytes, bytes2);
        // quantization error bounded by f32 precision on these magnitudes
        for (a, b) in ds.sequences.iter().zip(loaded.sequences.iter()) {
            assert_eq!(a.repr, b.repr);
            let err = (&a.poses - &b.poses)
                .mapv(f64::abs)
                .fold(0.0f64, |m, &v| m.max(v));
            assert!(err < 1e-6);
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let ds = toy_dataset();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &ds).unwrap();
        bytes[0] = b'X';
        let err = read_dataset(bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncation_reports_position() {
        let ds = toy_dataset();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &ds).unwrap();
        let cut = bytes.len() - 7;
        let err = read_dataset(&bytes[..cut]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated"), "{msg}");
        assert!(msg.contains("sample 5"), "{msg}");
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let ds = toy_dataset();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &ds).unwrap();
        bytes.push(0);
        let err = read_dataset(bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let ds = toy_dataset();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &ds).unwrap();
        // label of sample 0 sits right after the 33-byte header
        bytes[33] = 200;
        let err = read_dataset(bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("label"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.mseq");
        let ds = toy_dataset();
        save_dataset(&path, &ds).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), ds.len());
        assert_eq!(loaded.labels, ds.labels);
    }

    #[test]
    fn json_mirrors_binary_content() {
        let ds = toy_dataset();
        let mut json = Vec::new();
        write_json(&mut json, &ds).unwrap();
        let doc: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(doc["persons"], 2);
        assert_eq!(doc["frames"], 5);
        assert_eq!(doc["joints"], 5);
        assert_eq!(doc["dims"], 3);
        assert_eq!(doc["class_count"], 2);
        assert_eq!(doc["samples"].as_array().unwrap().len(), ds.len());
        let s0 = &doc["samples"][0];
        assert_eq!(s0["action"], ds.labels[0]);
        let r000 = s0["roots"][0][0][0].as_f64().unwrap();
        assert!((r000 - ds.sequences[0].roots[(0, 0, 0)]).abs() < 1e-6);
        let p0 = s0["poses"][1][2][3][1].as_f64().unwrap();
        assert!((p0 - ds.sequences[0].poses[(1, 2, 3, 1)]).abs() < 1e-6);
    }
}
