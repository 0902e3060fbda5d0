//! Binary dictionary and model files.
//!
//! All integers and floats are little-endian. Packed bit sections use 64-bit
//! words, least significant bit first, with zero padding past the last
//! column of each row.
//!
//! Dictionary (`BLSH`), 32-byte header:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `BLSH`                            |
//! | 4      | 4    | version (u32, = 1)                      |
//! | 8      | 8    | T, rows (u64)                           |
//! | 16     | 4    | L, code bits (u32, 0 when no codes)     |
//! | 20     | 4    | F, mask bins (u32)                      |
//! | 24     | 4    | D, feature dimension (u32)              |
//! | 28     | 1    | feature kind (0 = STFT magnitude, 1 = mel) |
//! | 29     | 1    | flags: bit 0 codes, bit 1 features      |
//! | 30     | 2    | reserved, zero                          |
//!
//! followed by codes (T × ⌈L/64⌉ u64), masks (T × ⌈F/64⌉ u64) and
//! features (T × D f32, row-major).
//!
//! Model (`BLSM`), 24-byte header:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `BLSM`                            |
//! | 4      | 4    | version (u32, = 1)                      |
//! | 8      | 4    | L (u32)                                 |
//! | 12     | 4    | D (u32)                                 |
//! | 16     | 1    | feature kind                            |
//! | 17     | 1    | distance kind (0 = abs diff, 1 = cross entropy) |
//! | 18     | 2    | reserved, zero                          |
//! | 20     | 4    | tanh slope (f32)                        |
//!
//! followed by f32 sections P (L × D), b (L), β (L) and ε (L).
//!
//! Writes go to a temporary file in the target directory that is renamed
//! into place.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::bits::{words_for, BitMatrix};
use crate::boost::DistanceKind;
use crate::dsp::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result, StoreError};
use crate::hashing::ProjectionModel;
use crate::knn::Dictionary;
use crate::scalar::Real;

pub const DICTIONARY_MAGIC: [u8; 4] = *b"BLSH";
pub const MODEL_MAGIC: [u8; 4] = *b"BLSM";
pub const FORMAT_VERSION: u32 = 1;
pub const DICTIONARY_HEADER_LEN: usize = 32;
pub const MODEL_HEADER_LEN: usize = 24;

const FLAG_CODES: u8 = 1;
const FLAG_FEATURES: u8 = 2;

/// Cursor over a byte buffer that reports which section ran short.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], StoreError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(StoreError::Truncated {
                section,
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, section: &'static str) -> Result<u8, StoreError> {
        Ok(self.take(1, section)?[0])
    }

    fn u16(&mut self, section: &'static str) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(
            self.take(2, section)?.try_into().unwrap(),
        ))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(
            self.take(4, section)?.try_into().unwrap(),
        ))
    }

    fn u64(&mut self, section: &'static str) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(
            self.take(8, section)?.try_into().unwrap(),
        ))
    }

    fn f32(&mut self, section: &'static str) -> Result<f32, StoreError> {
        Ok(f32::from_le_bytes(
            self.take(4, section)?.try_into().unwrap(),
        ))
    }

    fn words(&mut self, count: usize, section: &'static str) -> Result<Vec<u64>, StoreError> {
        let bytes = self.take(byte_len(count, 8, section)?, section)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn floats(&mut self, count: usize, section: &'static str) -> Result<Vec<f32>, StoreError> {
        let bytes = self.take(byte_len(count, 4, section)?, section)?;
        let out: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite { section });
        }
        Ok(out)
    }

    fn finish(self) -> Result<(), StoreError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(StoreError::TrailingBytes { extra }),
        }
    }
}

fn byte_len(count: usize, width: usize, section: &'static str) -> Result<usize, StoreError> {
    count.checked_mul(width).ok_or(StoreError::InvalidHeader {
        field: section,
        reason: "section size overflows".into(),
    })
}

fn check_magic(found: &[u8], expected: [u8; 4]) -> Result<(), StoreError> {
    let found: [u8; 4] = found.try_into().unwrap();
    if found != expected {
        return Err(StoreError::BadMagic { expected, found });
    }
    Ok(())
}

fn check_version(v: u32) -> Result<(), StoreError> {
    if v != FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion(v));
    }
    Ok(())
}

fn to_u32(v: usize, field: &'static str) -> Result<u32> {
    u32::try_from(v).map_err(|_| {
        Error::from(StoreError::InvalidHeader {
            field,
            reason: format!("{v} does not fit in 32 bits"),
        })
    })
}

fn finite_f32<S: Real>(v: S, section: &'static str) -> Result<f32> {
    let x = v.to_f64_lossy() as f32;
    if !x.is_finite() {
        return Err(StoreError::NonFinite { section }.into());
    }
    Ok(x)
}

fn put_words(out: &mut Vec<u8>, words: &[u64]) {
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
}

/// Serialises a dictionary to bytes.
pub fn encode_dictionary<S: Real>(dict: &Dictionary<S>) -> Result<Vec<u8>> {
    let t = dict.len();
    let n_bits = dict.codes.as_ref().map_or(0, BitMatrix::cols);
    let n_bins = dict.n_bins();
    let (kind, dim) = dict
        .features
        .as_ref()
        .map_or((FeatureKind::StftMagnitude, 0), |f| (f.kind, f.dim()));
    let flags = dict.codes.as_ref().map_or(0, |_| FLAG_CODES)
        | dict.features.as_ref().map_or(0, |_| FLAG_FEATURES);

    let mut out = Vec::with_capacity(
        DICTIONARY_HEADER_LEN + 8 * t * (words_for(n_bits) + words_for(n_bins)) + 4 * t * dim,
    );
    out.extend_from_slice(&DICTIONARY_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u64).to_le_bytes());
    out.extend_from_slice(&to_u32(n_bits, "L")?.to_le_bytes());
    out.extend_from_slice(&to_u32(n_bins, "F")?.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "D")?.to_le_bytes());
    out.push(kind.code());
    out.push(flags);
    out.extend_from_slice(&[0, 0]);
    if let Some(codes) = &dict.codes {
        put_words(&mut out, codes.words());
    }
    put_words(&mut out, dict.masks.words());
    if let Some(features) = &dict.features {
        for &v in features.rows.iter() {
            out.extend_from_slice(&finite_f32(v, "features")?.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a dictionary; never returns partially decoded data.
pub fn decode_dictionary<S: Real>(bytes: &[u8]) -> Result<Dictionary<S>> {
    let mut r = Reader::new(bytes);
    check_magic(r.take(4, "header")?, DICTIONARY_MAGIC)?;
    check_version(r.u32("header")?)?;
    let t = usize::try_from(r.u64("header")?).map_err(|_| StoreError::InvalidHeader {
        field: "T",
        reason: "row count exceeds address space".into(),
    })?;
    let n_bits = r.u32("header")? as usize;
    let n_bins = r.u32("header")? as usize;
    let dim = r.u32("header")? as usize;
    let kind_code = r.u8("header")?;
    let flags = r.u8("header")?;
    if r.u16("header")? != 0 {
        return Err(StoreError::InvalidHeader {
            field: "reserved",
            reason: "must be zero".into(),
        }
        .into());
    }
    if flags & !(FLAG_CODES | FLAG_FEATURES) != 0 || flags == 0 {
        return Err(StoreError::InvalidHeader {
            field: "flags",
            reason: format!("{flags:#04x}"),
        }
        .into());
    }
    let has_codes = flags & FLAG_CODES != 0;
    let has_features = flags & FLAG_FEATURES != 0;
    if has_codes != (n_bits > 0) {
        return Err(StoreError::InvalidHeader {
            field: "L",
            reason: format!("{n_bits} bits with codes flag {has_codes}"),
        }
        .into());
    }
    if has_features != (dim > 0) {
        return Err(StoreError::InvalidHeader {
            field: "D",
            reason: format!("dimension {dim} with features flag {has_features}"),
        }
        .into());
    }
    if n_bins == 0 {
        return Err(StoreError::InvalidHeader {
            field: "F",
            reason: "zero mask bins".into(),
        }
        .into());
    }
    let kind = FeatureKind::from_code(kind_code, dim).ok_or(StoreError::InvalidHeader {
        field: "feature_kind",
        reason: format!("unknown code {kind_code}"),
    })?;

    let codes = if has_codes {
        let words = r.words(t.saturating_mul(words_for(n_bits)), "codes")?;
        Some(
            BitMatrix::from_words(t, n_bits, words)
                .map_err(|_| StoreError::NonZeroPadding { section: "codes" })?,
        )
    } else {
        None
    };
    let mask_words = r.words(t.saturating_mul(words_for(n_bins)), "masks")?;
    let masks = BitMatrix::from_words(t, n_bins, mask_words)
        .map_err(|_| StoreError::NonZeroPadding { section: "masks" })?;
    let features = if has_features {
        let values = r.floats(t.saturating_mul(dim), "features")?;
        if values.iter().any(|&v| v < 0.0) {
            return Err(StoreError::InvalidHeader {
                field: "features",
                reason: "negative feature value".into(),
            }
            .into());
        }
        let rows = Array2::from_shape_vec(
            (t, dim),
            values.into_iter().map(|v| S::lit(v as f64)).collect(),
        )
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let zero_rows = rows
            .rows()
            .into_iter()
            .map(|r| r.iter().all(|v| v.is_zero()))
            .collect();
        Some(FeatureMatrix {
            rows,
            kind,
            zero_rows,
        })
    } else {
        None
    };
    r.finish()?;
    Dictionary::new(features, codes, masks)
}

/// Serialises a model to bytes.
pub fn encode_model<S: Real>(model: &ProjectionModel<S>) -> Result<Vec<u8>> {
    model.validate()?;
    let (l, d) = (model.n_bits(), model.dim());
    let mut out = Vec::with_capacity(MODEL_HEADER_LEN + 4 * (l * d + 3 * l));
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(l, "L")?.to_le_bytes());
    out.extend_from_slice(&to_u32(d, "D")?.to_le_bytes());
    out.push(model.kind.code());
    out.push(model.distance.code());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&finite_f32(model.tanh_slope, "header")?.to_le_bytes());
    let sections: [(&'static str, Box<dyn Iterator<Item = &S>>); 4] = [
        ("projections", Box::new(model.projections.iter())),
        ("biases", Box::new(model.biases.iter())),
        ("betas", Box::new(model.betas.iter())),
        ("errors", Box::new(model.errors.iter())),
    ];
    for (name, values) in sections {
        for &v in values {
            out.extend_from_slice(&finite_f32(v, name)?.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model<S: Real>(bytes: &[u8]) -> Result<ProjectionModel<S>> {
    let mut r = Reader::new(bytes);
    check_magic(r.take(4, "header")?, MODEL_MAGIC)?;
    check_version(r.u32("header")?)?;
    let l = r.u32("header")? as usize;
    let d = r.u32("header")? as usize;
    let kind_code = r.u8("header")?;
    let distance_code = r.u8("header")?;
    if r.u16("header")? != 0 {
        return Err(StoreError::InvalidHeader {
            field: "reserved",
            reason: "must be zero".into(),
        }
        .into());
    }
    let slope = r.f32("header")?;
    if l == 0 || d == 0 {
        return Err(StoreError::InvalidHeader {
            field: "L/D",
            reason: format!("{l}x{d}"),
        }
        .into());
    }
    if !(slope.is_finite() && slope > 0.0) {
        return Err(StoreError::InvalidHeader {
            field: "tanh_slope",
            reason: format!("{slope}"),
        }
        .into());
    }
    let kind = FeatureKind::from_code(kind_code, d).ok_or(StoreError::InvalidHeader {
        field: "feature_kind",
        reason: format!("unknown code {kind_code}"),
    })?;
    let distance = DistanceKind::from_code(distance_code).ok_or(StoreError::InvalidHeader {
        field: "distance_kind",
        reason: format!("unknown code {distance_code}"),
    })?;
    let lift = |v: Vec<f32>| v.into_iter().map(|x| S::lit(x as f64)).collect::<Vec<S>>();
    let projections = lift(r.floats(l.saturating_mul(d), "projections")?);
    let biases = lift(r.floats(l, "biases")?);
    let betas = lift(r.floats(l, "betas")?);
    let errors = lift(r.floats(l, "errors")?);
    r.finish()?;
    let model = ProjectionModel {
        projections: Array2::from_shape_vec((l, d), projections)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
        biases,
        betas,
        errors,
        kind,
        tanh_slope: S::lit(slope as f64),
        distance,
    };
    model.validate()?;
    Ok(model)
}

/// Writes `bytes` beside `path` and renames the temporary file into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_dictionary<S: Real>(dict: &Dictionary<S>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_dictionary(dict)?)
}

pub fn load_dictionary<S: Real>(path: impl AsRef<Path>) -> Result<Dictionary<S>> {
    decode_dictionary(&read_all(path.as_ref())?)
}

pub fn save_model<S: Real>(model: &ProjectionModel<S>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(model)?)
}

pub fn load_model<S: Real>(path: impl AsRef<Path>) -> Result<ProjectionModel<S>> {
    decode_model(&read_all(path.as_ref())?)
}
