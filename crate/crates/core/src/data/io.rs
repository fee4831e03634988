//! Line-delimited JSON files: one header line, then one record per line.
//!
//! Datasets:    `{"version":1,"C":..,"T":..,"n":..,"generator":{..}}`
//!              `{"id":..,"input":[C][2],"target":[T][C][3],"mode":..}`
//! Predictions: `{"version":1,"C":..,"T":..,"M":..,"n":..}`
//!              `{"id":..,"hypotheses":[M][T][C][3],"alphas":[M]}`
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{Motion3D, Pose2D};

const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    version: u32,
    #[serde(rename = "C")]
    joints: usize,
    #[serde(rename = "T")]
    frames: usize,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<SyntheticSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: u64,
    input: Vec<[f64; 2]>,
    target: Vec<Vec<[f64; 3]>>,
    mode: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionHeader {
    version: u32,
    #[serde(rename = "C")]
    joints: usize,
    #[serde(rename = "T")]
    frames: usize,
    #[serde(rename = "M")]
    components: usize,
    n: usize,
}

/// Hypotheses and mixture weights predicted for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: u64,
    pub hypotheses: Vec<Motion3D>,
    pub alphas: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    id: u64,
    hypotheses: Vec<Vec<Vec<[f64; 3]>>>,
    alphas: Vec<f64>,
}

/// Writes to a sibling temporary file and renames it into place.
fn write_atomic(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    let result = (|| {
        let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
        for line in lines {
            f.write_all(line.as_bytes())?;
            f.write_all(b"\n")?;
        }
        f.into_inner().map_err(|e| e.into_error())?.sync_all()
    })();
    result.map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("records serialize")
}

struct LineReader<'a> {
    path: &'a Path,
    lines: Vec<&'a str>,
}

impl<'a> LineReader<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        let lines = text.lines().filter(|l| !l.trim().is_empty()).collect();
        Self { path, lines }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn parse<T: DeserializeOwned>(&self, idx: usize) -> Result<T> {
        serde_json::from_str(self.lines[idx]).map_err(|e| self.err(idx + 1, e.to_string()))
    }

    fn expect_count(&self, n: usize) -> Result<()> {
        let found = self.lines.len().saturating_sub(1);
        if found != n {
            return Err(self.err(self.lines.len(), format!("header announces {n} records, found {found}")));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    ds.validate()?;
    let header = DatasetHeader {
        version: VERSION,
        joints: ds.joints,
        frames: ds.frames,
        n: ds.len(),
        generator: ds.generator.clone(),
    };
    let records = ds.samples.iter().map(|s| {
        to_line(&SampleRecord {
            id: s.id,
            input: s.input.joints.clone(),
            target: s.target.to_nested(),
            mode: s.mode,
        })
    });
    write_atomic(path.as_ref(), std::iter::once(to_line(&header)).chain(records))
}

/// Loads a dataset file. Any malformed, mis-shaped or missing record fails
/// the whole load.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read(path)?;
    let reader = LineReader::new(path, &text);
    if reader.lines.is_empty() {
        return Err(reader.err(1, "missing header"));
    }
    let header: DatasetHeader = reader.parse(0)?;
    if header.version != VERSION {
        return Err(reader.err(1, format!("unsupported version {}", header.version)));
    }
    let mut samples = Vec::with_capacity(header.n);
    for idx in 1..reader.lines.len() {
        let rec: SampleRecord = reader.parse(idx)?;
        let line = idx + 1;
        if rec.input.len() != header.joints {
            return Err(reader.err(line, format!(
                "record {}: input has {} joints, header says C={}",
                rec.id,
                rec.input.len(),
                header.joints
            )));
        }
        if rec.target.len() != header.frames || rec.target.iter().any(|f| f.len() != header.joints) {
            return Err(reader.err(line, format!(
                "record {}: target is not T={} by C={}",
                rec.id, header.frames, header.joints
            )));
        }
        let target = Motion3D::from_nested(&rec.target).map_err(|e| reader.err(line, e.to_string()))?;
        samples.push(Sample {
            id: rec.id,
            input: Pose2D::new(rec.input),
            target,
            mode: rec.mode,
        });
    }
    reader.expect_count(header.n)?;
    Ok(Dataset {
        joints: header.joints,
        frames: header.frames,
        samples,
        generator: header.generator,
    })
}

pub fn save_predictions(
    preds: &[PredictionRecord],
    joints: usize,
    frames: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let components = preds.first().map_or(0, |p| p.alphas.len());
    let header = PredictionHeader {
        version: VERSION,
        joints,
        frames,
        components,
        n: preds.len(),
    };
    let lines = preds.iter().map(|p| {
        to_line(&PredictionLine {
            id: p.id,
            hypotheses: p.hypotheses.iter().map(Motion3D::to_nested).collect(),
            alphas: p.alphas.clone(),
        })
    });
    write_atomic(path.as_ref(), std::iter::once(to_line(&header)).chain(lines))
}

/// Loads a prediction file; returns `(C, T, records)`.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<PredictionRecord>)> {
    let path = path.as_ref();
    let text = read(path)?;
    let reader = LineReader::new(path, &text);
    if reader.lines.is_empty() {
        return Err(reader.err(1, "missing header"));
    }
    let header: PredictionHeader = reader.parse(0)?;
    let mut out = Vec::with_capacity(header.n);
    for idx in 1..reader.lines.len() {
        let rec: PredictionLine = reader.parse(idx)?;
        let line = idx + 1;
        if rec.hypotheses.len() != header.components || rec.alphas.len() != header.components {
            return Err(reader.err(line, format!("record {}: expected M={} hypotheses", rec.id, header.components)));
        }
        let hypotheses = rec
            .hypotheses
            .iter()
            .map(|h| {
                if h.len() != header.frames || h.iter().any(|f| f.len() != header.joints) {
                    return Err(reader.err(line, format!("record {}: hypothesis shape mismatch", rec.id)));
                }
                Motion3D::from_nested(h).map_err(|e| reader.err(line, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(PredictionRecord {
            id: rec.id,
            hypotheses,
            alphas: rec.alphas,
        });
    }
    reader.expect_count(header.n)?;
    Ok((header.joints, header.frames, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate;

    fn small() -> Dataset {
        generate(&SyntheticSpec {
            joints: 3,
            frames: 4,
            n_samples: 6,
            noise_std: 0.5,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let ds = small();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            for (x, y) in a.target.as_slice().iter().zip(b.target.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn wrong_joint_count_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        save_dataset(&small(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replacen("\"C\":3", "\"C\":4", 1);
        fs::write(&path, text).unwrap();
        let err = load_dataset(&path).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("record 0"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn truncated_file_fails_whole_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        save_dataset(&small(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() - 40]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Parse { .. })));
        let whole_lines: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        fs::write(&path, whole_lines).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.jsonl");
        let ds = small();
        let preds: Vec<PredictionRecord> = ds
            .samples
            .iter()
            .map(|s| PredictionRecord {
                id: s.id,
                hypotheses: vec![s.target.clone(), Motion3D::zeros(4, 3)],
                alphas: vec![0.25, 0.75],
            })
            .collect();
        save_predictions(&preds, 3, 4, &path).unwrap();
        let (c, t, back) = load_predictions(&path).unwrap();
        assert_eq!((c, t), (3, 4));
        assert_eq!(back, preds);
    }
}
