//! Dataset container and directory imports.
//!
//! Container layout:
//!
//! ```text
//! magic          8 bytes  "CMDAEDAT"
//! version        u32 LE   1
//! manifest_len   u64 LE
//! manifest       JSON text (class names, signal length, precision,
//!                provenance, per-sample id/label/offset/length/sha256)
//! payload        per sample: acoustic then vibration, little-endian floats
//! ```
//!
//! Directory imports read a `manifest.json` (samples) or `recordings.json`
//! (raw recordings) that names one raw little-endian float file per channel.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::{DataError, Dataset, MultiModalSample, Provenance, ProvenanceKind, RawRecording};

const MAGIC: &[u8; 8] = b"CMDAEDAT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    fn encode(self, values: &[f64], out: &mut Vec<u8>) {
        match self {
            Precision::F32 => values.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
            Precision::F64 => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }

    fn decode(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            Precision::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Precision::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    class_names: Vec<String>,
    signal_length: usize,
    sample_rate: f64,
    precision: Precision,
    counts: Vec<usize>,
    provenance: Provenance,
    samples: Vec<Record>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    label: usize,
    offset: u64,
    length: u64,
    sha256: String,
}

fn format_err(m: impl Into<String>) -> DataError {
    DataError::Format(m.into())
}

/// Serialises a dataset into the container format.
pub fn encode_dataset(ds: &Dataset, precision: Precision) -> Result<Vec<u8>, DataError> {
    ds.validate()?;
    let mut payload = Vec::with_capacity(ds.len() * 2 * ds.signal_length * precision.width());
    let mut records = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        let start = payload.len();
        precision.encode(&s.acoustic, &mut payload);
        precision.encode(&s.vibration, &mut payload);
        records.push(Record {
            id: s.id.clone(),
            label: s.label,
            offset: start as u64,
            length: (payload.len() - start) as u64,
            sha256: hex::encode(Sha256::digest(&payload[start..])),
        });
    }
    let manifest = Manifest {
        format_version: VERSION,
        class_names: ds.class_names.clone(),
        signal_length: ds.signal_length,
        sample_rate: ds.sample_rate,
        precision,
        counts: ds.class_counts(),
        provenance: ds.provenance.clone(),
        samples: records,
    };
    let text = serde_json::to_vec_pretty(&manifest).map_err(|e| format_err(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + text.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, DataError> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(format_err("not a dataset file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format_err(format!("unsupported format version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < mlen {
        return Err(format_err("truncated manifest"));
    }
    let manifest: Manifest =
        serde_json::from_slice(&body[..mlen]).map_err(|e| format_err(format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(format_err("manifest version disagrees with header"));
    }
    let payload = &body[mlen..];
    let width = manifest.precision.width();
    let expected = (2 * manifest.signal_length * width) as u64;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for r in manifest.samples {
        if r.length != expected {
            return Err(format_err(format!("sample `{}` has {} payload bytes, expected {expected}", r.id, r.length)));
        }
        let (start, end) = (r.offset as usize, (r.offset + r.length) as usize);
        if end > payload.len() {
            return Err(format_err(format!("truncated payload at sample `{}`", r.id)));
        }
        let chunk = &payload[start..end];
        if hex::encode(Sha256::digest(chunk)) != r.sha256 {
            return Err(DataError::Checksum { id: r.id });
        }
        let mut values = manifest.precision.decode(chunk);
        let vibration = values.split_off(manifest.signal_length);
        samples.push(MultiModalSample {
            id: r.id,
            label: r.label,
            acoustic: values,
            vibration,
        });
    }
    let ds = Dataset {
        samples,
        class_names: manifest.class_names,
        signal_length: manifest.signal_length,
        sample_rate: manifest.sample_rate,
        provenance: manifest.provenance,
    };
    ds.validate()?;
    if ds.class_counts() != manifest.counts {
        return Err(format_err("class counts disagree with the sample records"));
    }
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, path: &Path, precision: Precision) -> Result<(), DataError> {
    let bytes = encode_dataset(ds, precision)?;
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_dataset(&bytes)
}

/// Reads one headerless little-endian signal file.
pub fn read_signal(path: &Path, precision: Precision) -> Result<Vec<f64>, DataError> {
    read_raw(path, precision)
}

pub fn write_signal(path: &Path, values: &[f64], precision: Precision) -> Result<(), DataError> {
    write_raw(path, values, precision)
}

fn read_raw(path: &Path, precision: Precision) -> Result<Vec<f64>, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.len() % precision.width() != 0 {
        return Err(format_err(format!(
            "{}: {} bytes is not a whole number of {}-byte floats",
            path.display(),
            bytes.len(),
            precision.width()
        )));
    }
    Ok(precision.decode(&bytes))
}

fn write_raw(path: &Path, values: &[f64], precision: Precision) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(values.len() * precision.width());
    precision.encode(values, &mut out);
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleDirManifest {
    class_names: Vec<String>,
    signal_length: usize,
    sample_rate: f64,
    #[serde(default)]
    precision: Precision,
    samples: Vec<SampleFiles>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleFiles {
    id: String,
    label: usize,
    acoustic: String,
    vibration: String,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| format_err(format!("{}: {e}", path.display())))
}

/// Imports `dir/manifest.json` plus one raw file per sample and modality.
pub fn import_directory(dir: &Path) -> Result<Dataset, DataError> {
    let manifest: SampleDirManifest = read_json(&dir.join("manifest.json"))?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        samples.push(MultiModalSample {
            id: s.id.clone(),
            label: s.label,
            acoustic: read_raw(&dir.join(&s.acoustic), manifest.precision)?,
            vibration: read_raw(&dir.join(&s.vibration), manifest.precision)?,
        });
    }
    let ds = Dataset {
        samples,
        class_names: manifest.class_names,
        signal_length: manifest.signal_length,
        sample_rate: manifest.sample_rate,
        provenance: Provenance {
            kind: ProvenanceKind::Imported,
            config: serde_json::json!({ "source": dir.display().to_string() }),
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes a dataset in the directory layout accepted by [`import_directory`].
pub fn export_directory(ds: &Dataset, dir: &Path, precision: Precision) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut files = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        let (a, v) = (format!("{}.a.bin", s.id), format!("{}.v.bin", s.id));
        write_raw(&dir.join(&a), &s.acoustic, precision)?;
        write_raw(&dir.join(&v), &s.vibration, precision)?;
        files.push(SampleFiles {
            id: s.id.clone(),
            label: s.label,
            acoustic: a,
            vibration: v,
        });
    }
    let manifest = SampleDirManifest {
        class_names: ds.class_names.clone(),
        signal_length: ds.signal_length,
        sample_rate: ds.sample_rate,
        precision,
        samples: files,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| format_err(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| DataError::io(&path, e))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordingDirManifest {
    class_names: Vec<String>,
    #[serde(default)]
    precision: Precision,
    recordings: Vec<RecordingFiles>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordingFiles {
    id: String,
    label: usize,
    sample_rate: f64,
    acoustic: String,
    vibration: String,
    trigger: String,
}

/// Reads `dir/recordings.json` and the raw channel files it names.
/// Returns the class names and the recordings.
pub fn read_recordings_dir(dir: &Path) -> Result<(Vec<String>, Vec<RawRecording>), DataError> {
    let manifest: RecordingDirManifest = read_json(&dir.join("recordings.json"))?;
    if manifest.recordings.is_empty() {
        return Err(format_err(format!("{}: no recordings listed", dir.display())));
    }
    let mut out = Vec::with_capacity(manifest.recordings.len());
    for r in &manifest.recordings {
        if r.label >= manifest.class_names.len() {
            return Err(format_err(format!("recording `{}` has unknown label {}", r.id, r.label)));
        }
        let rec = RawRecording {
            id: r.id.clone(),
            label: r.label,
            sample_rate: r.sample_rate,
            acoustic: read_raw(&dir.join(&r.acoustic), manifest.precision)?,
            vibration: read_raw(&dir.join(&r.vibration), manifest.precision)?,
            trigger: read_raw(&dir.join(&r.trigger), manifest.precision)?,
        };
        rec.validate()?;
        out.push(rec);
    }
    Ok((manifest.class_names, out))
}

pub fn write_recordings_dir(
    dir: &Path,
    class_names: &[String],
    recordings: &[RawRecording],
    precision: Precision,
) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut files = Vec::with_capacity(recordings.len());
    for r in recordings {
        let names = [
            format!("{}.acoustic.bin", r.id),
            format!("{}.vibration.bin", r.id),
            format!("{}.trigger.bin", r.id),
        ];
        for (name, values) in names.iter().zip([&r.acoustic, &r.vibration, &r.trigger]) {
            write_raw(&dir.join(name), values, precision)?;
        }
        let [acoustic, vibration, trigger] = names;
        files.push(RecordingFiles {
            id: r.id.clone(),
            label: r.label,
            sample_rate: r.sample_rate,
            acoustic,
            vibration,
            trigger,
        });
    }
    let manifest = RecordingDirManifest {
        class_names: class_names.to_vec(),
        precision,
        recordings: files,
    };
    let path = dir.join("recordings.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| format_err(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| DataError::io(&path, e))
}
