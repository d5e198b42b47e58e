use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{io_err, DataError, LabeledImageSet, DIGIT_SIZE, NUM_CLASSES};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
/// Upper bound on inflated IDX size; the full training images are ~47 MB.
const MAX_INFLATED: u64 = 256 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Inflates gzip input, passes anything else through.
fn maybe_gunzip(raw: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>, DataError> {
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw)
            .take(MAX_INFLATED)
            .read_to_end(&mut out)
            .map_err(io_err("<gzip stream>"))?;
        Ok(out.into())
    } else {
        Ok(raw.into())
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(DataError::TruncatedPayload {
            declared: (at + 4) as u64,
            available: bytes.len() as u64,
        })
}

fn header(bytes: &[u8], magic: u32, ndim: usize) -> Result<(Vec<usize>, usize), DataError> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(DataError::BadMagic { expected: magic, found });
    }
    let dims = (0..ndim)
        .map(|k| be_u32(bytes, 4 + 4 * k).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let offset = 4 + 4 * ndim;
    let needed = dims
        .iter()
        .fold(1u64, |acc, &d| acc.saturating_mul(d as u64))
        .saturating_add(offset as u64);
    if (bytes.len() as u64) < needed {
        return Err(DataError::TruncatedPayload {
            declared: needed,
            available: bytes.len() as u64,
        });
    }
    Ok((dims, offset))
}

pub fn parse_idx_images(raw: &[u8]) -> Result<IdxImages, DataError> {
    let bytes = maybe_gunzip(raw)?;
    let (dims, off) = header(&bytes, IMAGE_MAGIC, 3)?;
    let len = dims[0] * dims[1] * dims[2];
    Ok(IdxImages {
        count: dims[0],
        rows: dims[1],
        cols: dims[2],
        pixels: bytes[off..off + len].to_vec(),
    })
}

pub fn parse_idx_labels(raw: &[u8]) -> Result<Vec<u8>, DataError> {
    let bytes = maybe_gunzip(raw)?;
    let (dims, off) = header(&bytes, LABEL_MAGIC, 1)?;
    let labels = bytes[off..off + dims[0]].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(DataError::BadLabel(bad));
    }
    Ok(labels)
}

/// Parses and zips an image file with its label file.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledImageSet, DataError> {
    let img = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if img.count != labels.len() {
        return Err(DataError::DimensionMismatch {
            images: img.count,
            labels: labels.len(),
        });
    }
    if img.count > 0 && (img.rows, img.cols) != (DIGIT_SIZE, DIGIT_SIZE) {
        return Err(DataError::BadImageSize {
            rows: img.rows,
            cols: img.cols,
        });
    }
    Ok(LabeledImageSet {
        images: img.pixels,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistPart {
    Train,
    Test,
}

impl MnistPart {
    fn stem(self) -> &'static str {
        match self {
            MnistPart::Train => "train",
            MnistPart::Test => "t10k",
        }
    }
}

fn read_either(dir: &Path, name: &str) -> Result<Vec<u8>, DataError> {
    let plain = dir.join(name);
    if plain.exists() {
        return std::fs::read(&plain).map_err(io_err(plain));
    }
    let gz = dir.join(format!("{name}.gz"));
    std::fs::read(&gz).map_err(io_err(gz))
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` from `dir`.
pub fn load_mnist(dir: &Path, part: MnistPart) -> Result<LabeledImageSet, DataError> {
    let stem = part.stem();
    let images = read_either(dir, &format!("{stem}-images-idx3-ubyte"))?;
    let labels = read_either(dir, &format!("{stem}-labels-idx1-ubyte"))?;
    parse_idx(&images, &labels)
}
