//! `TGRM` weights files.
//!
//! Layout: the magic `TGRM`, a version byte, then records until end of file.
//! Each record is `name_len: u32`, the UTF-8 name, `rank: u32`, `rank` dims
//! as `u32`, and the payload as `f32`. All integers and floats little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::model::Parameterized;
use super::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TGRM";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("not a TGRM file")]
    BadMagic,
    #[error("unsupported TGRM version {0}")]
    Version(u8),
    #[error("truncated record {0}")]
    Truncated(String),
    #[error("parameter name is not UTF-8")]
    Name,
    #[error("missing parameter {0}")]
    Missing(String),
    #[error("parameter {name}: file shape {file:?} does not match model shape {model:?}")]
    Shape { name: String, file: Vec<usize>, model: Vec<usize> },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One named tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub tensor: Tensor,
}

pub fn write_weights<'a>(
    mut w: impl Write,
    params: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), WeightsError> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    for (name, t) in params {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Serializes every parameter of `model` in its canonical order.
pub fn save_model(w: impl Write, model: &impl Parameterized) -> Result<(), WeightsError> {
    let named = model.named_params();
    write_weights(w, named.iter().map(|(n, t)| (n.as_str(), *t)))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<Option<u32>, WeightsError> {
    let mut buf = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut buf[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(WeightsError::Truncated(what.to_string())),
            n => got += n,
        }
    }
    Ok(Some(u32::from_le_bytes(buf)))
}

fn need_u32(r: &mut impl Read, what: &str) -> Result<u32, WeightsError> {
    read_u32(r, what)?.ok_or_else(|| WeightsError::Truncated(what.to_string()))
}

pub fn read_weights(mut r: impl Read) -> Result<Vec<WeightRecord>, WeightsError> {
    let mut header = [0u8; 5];
    r.read_exact(&mut header).map_err(|_| WeightsError::BadMagic)?;
    if &header[..4] != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    if header[4] != VERSION {
        return Err(WeightsError::Version(header[4]));
    }
    let mut records = Vec::new();
    while let Some(name_len) = read_u32(&mut r, "name length")? {
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(|_| WeightsError::Truncated("name".into()))?;
        let name = String::from_utf8(name).map_err(|_| WeightsError::Name)?;
        let rank = need_u32(&mut r, &name)?;
        let shape = (0..rank).map(|_| need_u32(&mut r, &name).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload).map_err(|_| WeightsError::Truncated(name.clone()))?;
        let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        let tensor = Tensor::new(shape, data).expect("payload length follows shape");
        records.push(WeightRecord { name, tensor });
    }
    Ok(records)
}

/// Copies every model parameter whose name starts with `prefix` from
/// `records`. Returns how many tensors were loaded.
pub fn load_into(model: &mut impl Parameterized, records: &[WeightRecord], prefix: &str) -> Result<usize, WeightsError> {
    let mut loaded = 0;
    for (name, t) in model.named_params_mut() {
        if !name.starts_with(prefix) {
            continue;
        }
        let rec = records.iter().find(|r| r.name == name).ok_or_else(|| WeightsError::Missing(name.clone()))?;
        if rec.tensor.shape() != t.shape() {
            return Err(WeightsError::Shape { name, file: rec.tensor.shape().to_vec(), model: t.shape().to_vec() });
        }
        t.data_mut().copy_from_slice(rec.tensor.data());
        loaded += 1;
    }
    Ok(loaded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Backbone;

    #[test]
    fn round_trip_is_bit_exact_at_f32() {
        let model = Backbone::new(3);
        let mut first = Vec::new();
        save_model(&mut first, &model).unwrap();
        let mut reloaded = Backbone::zeros();
        let records = read_weights(first.as_slice()).unwrap();
        assert_eq!(load_into(&mut reloaded, &records, "").unwrap(), 8);
        let mut second = Vec::new();
        save_model(&mut second, &reloaded).unwrap();
        assert_eq!(first, second);
        for ((_, a), (_, b)) in model.named_params().iter().zip(reloaded.named_params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(read_weights(&b"NOPE\x01"[..]), Err(WeightsError::BadMagic)));
        let mut buf = Vec::new();
        write_weights(&mut buf, [("w", &Tensor::from_vec(vec![1.0, 2.0]))]).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(read_weights(buf.as_slice()), Err(WeightsError::Truncated(_))));
    }

    #[test]
    fn missing_parameter_is_reported() {
        let mut model = Backbone::new(0);
        let err = load_into(&mut model, &[], "backbone").unwrap_err();
        assert!(matches!(err, WeightsError::Missing(n) if n == "backbone.conv0.weight"));
    }
}
