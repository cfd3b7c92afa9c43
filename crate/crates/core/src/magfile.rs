//! Binary magnitude-spectrogram files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! | offset | size | content                                      |
//! |--------|------|----------------------------------------------|
//! | 0      | 8    | ASCII `SRMAG001`                             |
//! | 8      | 4    | bins `F'`                                    |
//! | 12     | 4    | frames `N`                                   |
//! | 16     | 4    | sample rate                                  |
//! | 20     | 4    | window length                                |
//! | 24     | 4    | hop                                          |
//! | 28     | 4    | FFT size                                     |
//! | 32     | 4    | window: 0 Blackman, 1 Hann, 2 rectangular    |
//! | 36     | 4·F'·N | `f32` little-endian magnitudes, frame-major: all bins of frame 0, then frame 1, ... |

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{MagnitudeSpectrogram, StftConfig, WindowKind};

pub const MAGIC: &[u8; 8] = b"SRMAG001";
pub const HEADER_LEN: usize = 36;

fn window_code(w: WindowKind) -> u32 {
    match w {
        WindowKind::Blackman => 0,
        WindowKind::Hann => 1,
        WindowKind::Rectangular => 2,
    }
}

/// True when `bytes` starts with the magnitude-file magic.
pub fn is_magnitude_file(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

pub fn encode<T: Real>(a: &MagnitudeSpectrogram<T>) -> Vec<u8> {
    let cfg = a.config();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * a.bins() * a.frames());
    out.extend_from_slice(MAGIC);
    for v in [
        a.bins() as u32,
        a.frames() as u32,
        cfg.sample_rate,
        cfg.win_len as u32,
        cfg.hop as u32,
        cfg.fft_size as u32,
        window_code(cfg.window),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let values = a.values();
    for n in 0..a.frames() {
        for k in 0..a.bins() {
            out.extend_from_slice(&(values[[k, n]].as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode<T: Real>(bytes: &[u8], path: &Path) -> Result<MagnitudeSpectrogram<T>> {
    let bad = |reason: String| Error::malformed(path, reason);
    if bytes.len() < HEADER_LEN || !is_magnitude_file(bytes) {
        return Err(bad("missing magnitude-file header".into()));
    }
    let word = |i: usize| {
        let at = 8 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
    };
    let (bins, frames) = (word(0) as usize, word(1) as usize);
    let window = match word(6) {
        0 => WindowKind::Blackman,
        1 => WindowKind::Hann,
        2 => WindowKind::Rectangular,
        other => return Err(bad(format!("unknown window code {other}"))),
    };
    let config = StftConfig::new(word(2), word(3) as usize, word(4) as usize, window, word(5) as usize)
        .map_err(|e| bad(e.to_string()))?;
    if config.bins() != bins {
        return Err(bad(format!(
            "header declares {bins} bins but FFT size {} implies {}",
            config.fft_size,
            config.bins()
        )));
    }
    if frames == 0 {
        return Err(bad("file holds no frames".into()));
    }
    let expected = HEADER_LEN + 4 * bins * frames;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let body = &bytes[HEADER_LEN..];
    let mut values = Array2::<T>::zeros((bins, frames));
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !(v.is_finite() && v >= 0.0) {
            return Err(bad(format!("value {v} at index {i} is not a finite magnitude")));
        }
        values[[i % bins, i / bins]] = T::of(v as f64);
    }
    MagnitudeSpectrogram::new(values, config)
}

pub fn write_magnitude<T: Real>(path: &Path, a: &MagnitudeSpectrogram<T>) -> Result<()> {
    fs::write(path, encode(a)).map_err(|e| Error::io(path, e))
}

pub fn read_magnitude<T: Real>(path: &Path) -> Result<MagnitudeSpectrogram<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MagnitudeSpectrogram<f64> {
        let cfg = StftConfig::new(8000, 4, 2, WindowKind::Hann, 4).unwrap();
        let values = Array2::from_shape_fn((3, 2), |(k, n)| (k * 2 + n) as f64 * 0.5);
        MagnitudeSpectrogram::new(values, cfg).unwrap()
    }

    #[test]
    fn header_bytes_are_fixed() {
        let bytes = encode(&sample());
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 6);
        assert_eq!(&bytes[..8], b"SRMAG001");
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &8000u32.to_le_bytes());
        assert_eq!(&bytes[32..36], &1u32.to_le_bytes());
        // frame-major: frame 0 bin 1 is the second value
        assert_eq!(&bytes[40..44], &1.0f32.to_le_bytes());
    }

    #[test]
    fn round_trip() {
        let a = sample();
        let back: MagnitudeSpectrogram<f64> = decode(&encode(&a), Path::new("x")).unwrap();
        assert_eq!(back.values(), a.values());
        assert_eq!(back.config(), a.config());
    }

    #[test]
    fn truncated_and_negative_inputs_are_rejected() {
        let mut bytes = encode(&sample());
        assert!(decode::<f64>(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        let last = bytes.len() - 4;
        bytes[last..].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert!(decode::<f64>(&bytes, Path::new("x")).is_err());
    }
}
