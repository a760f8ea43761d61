//! Bit-exact model checkpoints.
//!
//! Layout: the magic bytes `FAWMF01\0`; `n`, `m`, `K`, `D` as unsigned
//! 64-bit little-endian integers; then the arrays `beta`, `alpha`, `w`,
//! `b`, `U`, `V` in that order, row-major, as 64-bit little-endian
//! IEEE-754 floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::ModelParams;

pub const MAGIC: &[u8; 8] = b"FAWMF01\0";

/// Refuse headers that would allocate absurd amounts of memory.
const MAX_ENTRIES: u64 = 1 << 33;

pub fn write_to<W: Write>(params: &ModelParams, out: &mut W) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    for dim in [
        params.n_users(),
        params.n_items(),
        params.latent_dim(),
        params.communities(),
    ] {
        out.write_u64::<LittleEndian>(dim as u64)?;
    }
    let arrays: [&[f64]; 6] = [
        params.beta.as_slice(),
        &params.alpha,
        &params.w,
        &params.b,
        params.u.as_slice(),
        params.v.as_slice(),
    ];
    for array in arrays {
        for &value in array {
            out.write_f64::<LittleEndian>(value)?;
        }
    }
    Ok(())
}

pub fn read_from<R: Read>(input: &mut R) -> Result<ModelParams> {
    let io_err = |source: std::io::Error| Error::Format(format!("truncated checkpoint: {source}"));

    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic bytes {magic:?}, expected {MAGIC:?}"
        )));
    }

    let mut dims = [0u64; 4];
    for dim in &mut dims {
        *dim = input.read_u64::<LittleEndian>().map_err(io_err)?;
    }
    let [n, m, k, d] = dims;
    if n == 0 || m == 0 || k == 0 || d == 0 {
        return Err(Error::Format(format!("zero dimension in header {dims:?}")));
    }
    let entries = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(n))
        .and_then(|t| t.checked_add(2 * m))
        .and_then(|t| n.checked_mul(k).map(|nk| (t, nk)))
        .and_then(|(t, nk)| t.checked_add(nk))
        .and_then(|t| m.checked_mul(k).map(|mk| (t, mk)))
        .and_then(|(t, mk)| t.checked_add(mk))
        .filter(|&t| t <= MAX_ENTRIES)
        .ok_or_else(|| Error::Format(format!("implausible dimensions {dims:?}")))?;
    let _ = entries;
    let (n, m, k, d) = (n as usize, m as usize, k as usize, d as usize);

    let mut read_array = |len: usize| -> Result<Vec<f64>> {
        let mut values = vec![0.0; len];
        input
            .read_f64_into::<LittleEndian>(&mut values)
            .map_err(io_err)?;
        Ok(values)
    };

    let beta = Mat::from_vec(n, d, read_array(n * d)?);
    let alpha = read_array(n)?;
    let w = read_array(m)?;
    let b = read_array(m)?;
    let u = Mat::from_vec(n, k, read_array(n * k)?);
    let v = Mat::from_vec(m, k, read_array(m * k)?);

    Ok(ModelParams { beta, alpha, w, b, u, v })
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    write_to(params, &mut out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    out.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_from(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn round_trip_is_bit_identical() {
        let params = synth::random_params(7, 5, 3, 4, 91);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&params, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn header_layout_is_stable() {
        let params = synth::random_params(2, 3, 4, 5, 92);
        let mut bytes = Vec::new();
        write_to(&params, &mut bytes).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[32..40].try_into().unwrap()), 5);
        let payload = 2 * 5 + 2 + 3 + 3 + 2 * 4 + 3 * 4;
        assert_eq!(bytes.len(), 40 + payload * 8);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let params = synth::random_params(2, 2, 2, 2, 93);
        let mut bytes = Vec::new();
        write_to(&params, &mut bytes).unwrap();
        bytes[0] = b'X';
        let err = read_from(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let params = synth::random_params(2, 2, 2, 2, 94);
        let mut bytes = Vec::new();
        write_to(&params, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 9);
        assert!(matches!(
            read_from(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn implausible_header_is_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        for dim in [u64::MAX, 4, 4, 4] {
            bytes.extend_from_slice(&dim.to_le_bytes());
        }
        assert!(matches!(
            read_from(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
