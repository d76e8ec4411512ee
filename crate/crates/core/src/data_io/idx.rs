//! The IDX container used by MNIST: big-endian `u32` magic, big-endian
//! `u32` extents, then raw unsigned bytes.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated IDX payload: header promises {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("IDX payload has {0} unexpected trailing bytes")]
    TrailingData(usize),

    #[error("IDX header extents overflow: {0:?}")]
    Overflow(Vec<u32>),

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no IDX file for {0} found in {1}")]
    Missing(String, PathBuf),
}

/// Decoded image file: `count` images of `rows × cols` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_header(bytes: &[u8], magic: u32, dims: usize) -> Result<(Vec<u32>, &[u8]), IdxError> {
    let header_len = 4 * (1 + dims);
    if bytes.len() < header_len {
        return Err(IdxError::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let found = word(0);
    if found != magic {
        return Err(IdxError::BadMagic {
            expected: magic,
            found,
        });
    }
    Ok(((1..=dims).map(word).collect(), &bytes[header_len..]))
}

fn take_payload(payload: &[u8], extents: &[u32]) -> Result<Vec<u8>, IdxError> {
    let expected = extents
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e as usize))
        .ok_or_else(|| IdxError::Overflow(extents.to_vec()))?;
    match payload.len().cmp(&expected) {
        std::cmp::Ordering::Less => Err(IdxError::Truncated {
            expected,
            actual: payload.len(),
        }),
        std::cmp::Ordering::Greater => Err(IdxError::TrailingData(payload.len() - expected)),
        std::cmp::Ordering::Equal => Ok(payload.to_vec()),
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, IdxError> {
    let (dims, payload) = read_header(bytes, IMAGES_MAGIC, 3)?;
    let pixels = take_payload(payload, &dims)?;
    Ok(IdxImages {
        count: dims[0] as usize,
        rows: dims[1] as usize,
        cols: dims[2] as usize,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let (dims, payload) = read_header(bytes, LABELS_MAGIC, 1)?;
    take_payload(payload, &dims)
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for w in [
        IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Read a whole file, gunzipping when the name ends in `.gz`.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io_err = |source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(io_err)?;
    Ok(bytes)
}

/// `byte / 127.5 − 1`, mapping `[0, 255]` onto `[−1, 1]`.
pub fn normalize_pixel(b: u8) -> f64 {
    f64::from(b) / 127.5 - 1.0
}

/// Inverse of [`normalize_pixel`], rounding to the nearest byte.
pub fn denormalize_pixel(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_images() -> IdxImages {
        IdxImages {
            count: 2,
            rows: 2,
            cols: 3,
            pixels: (0..12).map(|i| (i * 20) as u8).collect(),
        }
    }

    #[test]
    fn round_trip_encoding() {
        let img = tiny_images();
        assert_eq!(parse_idx_images(&encode_idx_images(&img)).unwrap(), img);
        let labels = vec![3, 1, 4];
        assert_eq!(parse_idx_labels(&encode_idx_labels(&labels)).unwrap(), labels);
    }

    #[test]
    fn wrong_magic_is_reported() {
        let img = encode_idx_images(&tiny_images());
        match parse_idx_labels(&img) {
            Err(IdxError::BadMagic { expected, found }) => {
                assert_eq!(expected, LABELS_MAGIC);
                assert_eq!(found, IMAGES_MAGIC);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_and_trailing_data() {
        let mut img = encode_idx_images(&tiny_images());
        assert!(matches!(
            parse_idx_images(&img[..img.len() - 1]),
            Err(IdxError::Truncated { .. })
        ));
        assert!(matches!(parse_idx_images(&img[..7]), Err(IdxError::Truncated { .. })));
        img.push(0);
        assert!(matches!(parse_idx_images(&img), Err(IdxError::TrailingData(1))));
    }

    #[test]
    fn huge_extents_do_not_allocate() {
        let mut bytes = IMAGES_MAGIC.to_be_bytes().to_vec();
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        }
        assert!(parse_idx_images(&bytes).is_err());
    }

    #[test]
    fn pixel_map_endpoints() {
        assert_eq!(normalize_pixel(0), -1.0);
        assert_eq!(normalize_pixel(255), 1.0);
        for b in 0..=255u8 {
            assert_eq!(denormalize_pixel(normalize_pixel(b)), b);
        }
    }
}
