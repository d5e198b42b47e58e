use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, DataError, DatasetBundle, ShiftedExample, IMAGE_PIXELS, IMAGE_SIZE, NUM_CLASSES};

const MAGIC: &[u8; 4] = b"SMN1";
pub const SPLIT_FORMAT_VERSION: u8 = 1;
/// Magic, version, count, height and width.
pub const SPLIT_HEADER_LEN: usize = 17;
const RECORD_LEN: usize = 2 + IMAGE_PIXELS;
pub const BUNDLE_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u8,
    pub seed: u64,
    pub source_kind: String,
    pub textures: Vec<String>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Header, records, then a CRC32 of the record bytes.
pub fn encode_split(split: &[ShiftedExample]) -> Vec<u8> {
    let mut out = Vec::with_capacity(SPLIT_HEADER_LEN + split.len() * RECORD_LEN + 4);
    out.extend_from_slice(MAGIC);
    out.push(SPLIT_FORMAT_VERSION);
    out.extend_from_slice(&(split.len() as u32).to_le_bytes());
    out.extend_from_slice(&(IMAGE_SIZE as u32).to_le_bytes());
    out.extend_from_slice(&(IMAGE_SIZE as u32).to_le_bytes());
    for ex in split {
        out.push(ex.digit_label);
        out.push(ex.texture_label);
        out.extend_from_slice(&ex.image);
    }
    let crc = crc32fast::hash(&out[SPLIT_HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn decode_split(bytes: &[u8]) -> Result<Vec<ShiftedExample>, DataError> {
    if bytes.len() < SPLIT_HEADER_LEN + 4 {
        return Err(DataError::BadHeader(format!("{} bytes is shorter than a header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(DataError::BadHeader("missing SMN1 magic".into()));
    }
    if bytes[4] != SPLIT_FORMAT_VERSION {
        return Err(DataError::BadHeader(format!("unsupported version {}", bytes[4])));
    }
    let count = le_u32(bytes, 5) as usize;
    let (h, w) = (le_u32(bytes, 9), le_u32(bytes, 13));
    if (h, w) != (IMAGE_SIZE as u32, IMAGE_SIZE as u32) {
        return Err(DataError::BadHeader(format!("image size {h}x{w}, expected 32x32")));
    }
    let expected = (count as u64) * RECORD_LEN as u64 + (SPLIT_HEADER_LEN + 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(DataError::BadHeader(format!(
            "{count} records need {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let payload = &bytes[SPLIT_HEADER_LEN..bytes.len() - 4];
    let stored = le_u32(bytes, bytes.len() - 4);
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(DataError::ChecksumMismatch { stored, computed });
    }
    payload
        .chunks_exact(RECORD_LEN)
        .map(|rec| {
            for &l in &rec[..2] {
                if l >= NUM_CLASSES {
                    return Err(DataError::BadLabel(l));
                }
            }
            Ok(ShiftedExample {
                digit_label: rec[0],
                texture_label: rec[1],
                image: rec[2..].try_into().unwrap(),
            })
        })
        .collect()
}

/// Returns the number of bytes written.
pub fn write_split(split: &[ShiftedExample], path: &Path) -> Result<u64, DataError> {
    let bytes = encode_split(split);
    std::fs::write(path, &bytes).map_err(io_err(path))?;
    Ok(bytes.len() as u64)
}

pub fn read_split(path: &Path) -> Result<Vec<ShiftedExample>, DataError> {
    decode_split(&std::fs::read(path).map_err(io_err(path))?)
}

/// Writes `train.smn`, `val.smn`, `test.smn` and the manifest into `dir`.
pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_split(&bundle.train, &dir.join("train.smn"))?;
    write_split(&bundle.val, &dir.join("val.smn"))?;
    write_split(&bundle.test, &dir.join("test.smn"))?;
    let path = dir.join(BUNDLE_MANIFEST);
    let json = serde_json::to_string_pretty(&bundle.manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(io_err(path))
}

pub fn read_bundle(dir: &Path) -> Result<DatasetBundle, DataError> {
    let path = dir.join(BUNDLE_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DataError::BadManifest(e.to_string()))?;
    let train = read_split(&dir.join("train.smn"))?;
    let val = read_split(&dir.join("val.smn"))?;
    let test = read_split(&dir.join("test.smn"))?;
    if (train.len(), val.len(), test.len()) != (manifest.train, manifest.val, manifest.test) {
        return Err(DataError::BadManifest(format!(
            "manifest sizes {}/{}/{} disagree with split files {}/{}/{}",
            manifest.train,
            manifest.val,
            manifest.test,
            train.len(),
            val.len(),
            test.len()
        )));
    }
    Ok(DatasetBundle {
        train,
        val,
        test,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_split_is_header_plus_crc() {
        let bytes = encode_split(&[]);
        assert_eq!(bytes.len(), 21);
        assert!(decode_split(&bytes).unwrap().is_empty());
    }

    #[test]
    fn single_record_size() {
        let ex = ShiftedExample {
            image: [0; 1024],
            digit_label: 3,
            texture_label: 7,
        };
        let bytes = encode_split(std::slice::from_ref(&ex));
        assert_eq!(bytes.len(), 17 + 2 + 1024 + 4);
        assert_eq!(decode_split(&bytes).unwrap(), vec![ex]);
    }

    #[test]
    fn corruption_is_detected() {
        let ex = ShiftedExample {
            image: [9; 1024],
            digit_label: 1,
            texture_label: 2,
        };
        let mut bytes = encode_split(&[ex]);
        bytes[100] ^= 1;
        assert!(matches!(decode_split(&bytes), Err(DataError::ChecksumMismatch { .. })));
        bytes.pop();
        assert!(matches!(decode_split(&bytes), Err(DataError::BadHeader(_))));
        assert!(matches!(decode_split(b"XXXX"), Err(DataError::BadHeader(_))));
    }
}
