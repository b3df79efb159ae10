//! File I/O: 16 kHz mono WAV read/write and a small raw matrix-dump format
//! used for filter/tap exports.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

/// Read a mono WAV file, returning samples in `[-1, 1]` and the sample rate.
///
/// Accepts 16-bit integer PCM and 32-bit float PCM. Multichannel files are
/// rejected (the toolkit's source material is mono).
pub fn read_wav_mono(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(CoreError::Config(format!(
            "{}: expected mono WAV, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(CoreError::Config(format!(
                "{}: unsupported WAV format {fmt:?}/{bits} bits (want 16-bit int or 32-bit float)",
                path.display()
            )));
        }
    };
    Ok((samples, spec.sample_rate))
}

/// Write a mono 32-bit-float WAV file.
pub fn write_wav_mono(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Magic bytes prefixing the raw matrix-dump format.
pub const MATRIX_DUMP_MAGIC: &[u8; 8] = b"NRAECMAT";

/// Write a dense row-major `f64` tensor as a tiny self-describing binary file:
/// magic, `u32` rank, one `u64` per dimension, then little-endian `f64` data.
pub fn write_matrix_dump(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(CoreError::Shape(format!(
            "matrix dump dims {dims:?} imply {expected} values, got {}",
            data.len()
        )));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MATRIX_DUMP_MAGIC)?;
    f.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        f.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in data {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Read a tensor written by [`write_matrix_dump`].
pub fn read_matrix_dump(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MATRIX_DUMP_MAGIC {
        return Err(CoreError::Config(format!(
            "{}: not a matrix dump file",
            path.display()
        )));
    }
    let mut rank_buf = [0u8; 4];
    f.read_exact(&mut rank_buf)?;
    let rank = u32::from_le_bytes(rank_buf) as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        f.read_exact(&mut b)?;
        dims.push(u64::from_le_bytes(b) as usize);
    }
    let count: usize = dims.iter().product();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let mut b = [0u8; 8];
        f.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Ok((dims, data))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_roundtrip_preserves_float_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.01).sin() * 0.5).collect();
        write_wav_mono(&path, &x, 16_000).unwrap();
        let (y, fs) = read_wav_mono(&path).unwrap();
        assert_eq!(fs, 16_000);
        assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(&y) {
            // f32 storage quantizes.
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn matrix_dump_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let data: Vec<f64> = (0..24).map(|i| i as f64 * 0.5 - 3.0).collect();
        write_matrix_dump(&path, &[2, 3, 4], &data).unwrap();
        let (dims, back) = read_matrix_dump(&path).unwrap();
        assert_eq!(dims, vec![2, 3, 4]);
        assert_eq!(back, data);
    }

    #[test]
    fn matrix_dump_rejects_bad_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        assert!(write_matrix_dump(&path, &[2, 2], &[1.0]).is_err());
    }
}
