//! WAV input/output, resampling, segmentation and dataset manifests.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::TimeSignal;

const PCM_SCALE: f64 = 32768.0;

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::UnsupportedFormat(format!("{}: unsupported WAV variant", path.display())),
        other => Error::malformed(path, other.to_string()),
    }
}

/// Reads a mono 16-bit PCM WAV file, scaling samples by `1 / 32768`.
pub fn read_wav<T: Real>(path: &Path) -> Result<TimeSignal<T>> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channels, only mono is accepted",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {}-bit {:?} samples, only 16-bit PCM is accepted",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| T::of(v as f64 / PCM_SCALE)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    TimeSignal::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit PCM WAV file. Samples are scaled by 32768, rounded
/// and saturated to the `i16` range.
pub fn write_wav<T: Real>(path: &Path, x: &TimeSignal<T>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: x.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &v in x.samples() {
        writer
            .write_sample(quantize(v.as_f64()))
            .map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn quantize(v: f64) -> i16 {
    (v * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Zero crossings of the interpolation kernel on each side of its centre.
const KERNEL_ZEROS: usize = 48;
const KAISER_BETA: f64 = 10.0;
/// Passband edge relative to the lower of the two Nyquist frequencies.
const CUTOFF: f64 = 0.94;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// The output has `round(len * target / source)` samples. Each of the
/// `target / gcd` kernel phases is normalized to unit DC gain, and the input
/// is extended by repeating its end samples, so constant signals pass
/// through unchanged. The operation is linear in `x`.
pub fn resample<T: Real>(x: &TimeSignal<T>, target: u32) -> Result<TimeSignal<T>> {
    let source = x.sample_rate();
    if target == 0 {
        return Err(Error::InvalidConfig("target sample rate must be positive".into()));
    }
    if target == source || x.is_empty() {
        return TimeSignal::new(x.samples().to_vec(), target);
    }
    let g = gcd(source as u64, target as u64);
    let up = (target as u64 / g) as usize;
    let down = (source as u64 / g) as usize;
    // Cutoff in cycles per input sample.
    let fc = 0.5 * CUTOFF * (target as f64 / source as f64).min(1.0);
    let half = (KERNEL_ZEROS as f64 / (2.0 * fc)).ceil() as isize;
    let i0_beta = bessel_i0(KAISER_BETA);
    let kernel = |tau: f64| -> f64 {
        let r = tau / half as f64;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let arg = 2.0 * fc * tau;
        let sinc = if arg == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
        };
        2.0 * fc * sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
    };
    // phases[r][j] weighs x[q + j - half + 1] for outputs at q + r / up.
    let phases: Vec<Vec<f64>> = (0..up)
        .map(|r| {
            let frac = r as f64 / up as f64;
            let mut taps: Vec<f64> = (-half + 1..=half)
                .map(|j| kernel(frac - j as f64))
                .collect();
            let sum: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= sum);
            taps
        })
        .collect();

    let len = x.len();
    let out_len = ((len as f64) * target as f64 / source as f64).round() as usize;
    let src = x.samples();
    let last = len as isize - 1;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let pos = n * down;
        let q = (pos / up) as isize;
        let taps = &phases[pos % up];
        let mut acc = 0.0;
        for (j, &h) in (-half + 1..=half).zip(taps) {
            let idx = (q + j).clamp(0, last) as usize;
            acc += h * src[idx].as_f64();
        }
        out.push(T::of(acc));
    }
    TimeSignal::new(out, target)
}

pub const SEGMENT_RATE: u32 = 16_000;
pub const SEGMENT_LEN: usize = 16_000;
pub const SEGMENT_HOP: usize = 8_000;

/// A one-second training excerpt.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment<T> {
    pub samples: TimeSignal<T>,
    pub source_id: String,
    /// Position of the first sample in the source signal.
    pub offset: usize,
    /// Number of zeros appended to reach [`SEGMENT_LEN`].
    pub padding: usize,
}

impl<T> Segment<T> {
    pub fn is_padded(&self) -> bool {
        self.padding > 0
    }

    /// File name used in segment caches.
    pub fn file_name(&self) -> String {
        format!("{}_{}.wav", self.source_id, self.offset)
    }
}

/// Cuts a 16 kHz signal into 16000-sample windows every 8000 samples.
///
/// Windows are emitted until one reaches the end of the signal; if that
/// last window runs past the end it is zero-padded and flagged.
pub fn segment<T: Real>(x: &TimeSignal<T>, source_id: &str) -> Result<Vec<Segment<T>>> {
    if x.is_empty() {
        return Err(Error::SignalEmpty);
    }
    if x.sample_rate() != SEGMENT_RATE {
        return Err(Error::InvalidConfig(format!(
            "segmentation expects {SEGMENT_RATE} Hz, got {} Hz",
            x.sample_rate()
        )));
    }
    let len = x.len();
    let mut out = Vec::new();
    let mut offset = 0;
    loop {
        let end = (offset + SEGMENT_LEN).min(len);
        let mut samples = x.samples()[offset..end].to_vec();
        let padding = SEGMENT_LEN - samples.len();
        samples.resize(SEGMENT_LEN, T::zero());
        out.push(Segment {
            samples: TimeSignal::new(samples, SEGMENT_RATE)?,
            source_id: source_id.to_string(),
            offset,
            padding,
        });
        if offset + SEGMENT_LEN >= len {
            break;
        }
        offset += SEGMENT_HOP;
    }
    Ok(out)
}

/// Writes each segment to `dir/<source-id>_<offset>.wav`.
pub fn write_segment_cache<T: Real>(dir: &Path, segments: &[Segment<T>]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in segments {
        write_wav(&dir.join(s.file_name()), &s.samples)?;
    }
    Ok(())
}

/// Reads every `<source-id>_<offset>.wav` file of a segment cache, sorted by
/// file name. Padding is not recorded in the cache and reads back as 0.
pub fn read_segment_cache<T: Real>(dir: &Path) -> Result<Vec<Segment<T>>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|path| {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::malformed(&path, "file name is not UTF-8"))?;
            let (id, offset) = stem
                .rsplit_once('_')
                .and_then(|(id, off)| off.parse().ok().map(|o| (id, o)))
                .ok_or_else(|| Error::malformed(&path, "expected <source-id>_<offset>.wav"))?;
            Ok(Segment {
                samples: read_wav(&path)?,
                source_id: id.to_string(),
                offset,
                padding: 0,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "eval" => Some(Split::Eval),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Absolute, or relative to the manifest's directory.
    pub path: PathBuf,
    pub split: Split,
    pub source_id: String,
}

/// List of audio files with their split and source.
///
/// The text format has one entry per line, three whitespace-separated
/// fields `path split id` with `split` either `train` or `eval`. Blank
/// lines and lines starting with `#` are ignored. Relative paths are
/// resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, root: &Path, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen: HashMap<PathBuf, Split> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| Error::malformed(origin, format!("line {}: {reason}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [path, split, id] = fields[..] else {
                return Err(bad(format!("expected 3 fields, found {}", fields.len())));
            };
            let split = Split::parse(split).ok_or_else(|| bad(format!("unknown split '{split}'")))?;
            let path = PathBuf::from(path);
            if let Some(prev) = seen.insert(path.clone(), split) {
                if prev != split {
                    return Err(bad(format!("{} appears in both splits", path.display())));
                }
            }
            entries.push(ManifestEntry {
                path,
                split,
                source_id: id.to_string(),
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    /// Reads a manifest and checks that every listed file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new("."));
        let manifest = Self::parse(&text, root, path)?;
        for e in &manifest.entries {
            let full = manifest.resolve(e);
            if !full.is_file() {
                return Err(Error::malformed(
                    path,
                    format!("listed file {} does not exist", full.display()),
                ));
            }
        }
        Ok(manifest)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Reads, resamples to 16 kHz and segments every file of `split`, in
    /// manifest order.
    pub fn load_segments<T: Real>(&self, split: Split) -> Result<Vec<Segment<T>>> {
        let mut out = Vec::new();
        for e in self.split(split) {
            let x = read_wav::<T>(&self.resolve(e))?;
            let x = resample(&x, SEGMENT_RATE)?;
            out.extend(segment(&x, &e.source_id)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_saturates_and_rounds() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), i16::MAX);
        assert_eq!(quantize(-1.0), i16::MIN);
        assert_eq!(quantize(-2.0), i16::MIN);
        assert_eq!(quantize(0.5 / 32768.0), 1);
        assert_eq!(quantize(0.49 / 32768.0), 0);
    }

    #[test]
    fn bessel_matches_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) and I0(5) from standard tables
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_44).abs() < 1e-11);
    }

    #[test]
    fn segment_offsets() {
        let sig = |n: usize| TimeSignal::<f64>::new(vec![0.5; n], 16000).unwrap();
        let two = segment(&sig(32000), "a").unwrap();
        assert_eq!(two.iter().map(|s| s.offset).collect::<Vec<_>>(), [0, 8000, 16000]);
        assert!(two.iter().all(|s| !s.is_padded()));
        assert_eq!(segment(&sig(16000), "a").unwrap().len(), 1);
        let short = segment(&sig(20800), "a").unwrap();
        assert_eq!(short.len(), 2);
        assert_eq!(short[1].offset, 8000);
        assert_eq!(short[1].padding, 3200);
        assert!(short[1].is_padded());
        assert_eq!(short[1].samples.samples()[12799], 0.5);
        assert_eq!(short[1].samples.samples()[12800], 0.0);
        assert!(matches!(
            segment(&TimeSignal::<f64>::zeros(0, 16000), "a"),
            Err(Error::SignalEmpty)
        ));
    }

    #[test]
    fn manifest_parsing() {
        let text = "# corpus\nclips/a.wav train spk1\n\nclips/b.wav eval spk2\n";
        let m = DatasetManifest::parse(text, Path::new("/data"), Path::new("m.txt")).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.split(Split::Train).count(), 1);
        assert_eq!(m.resolve(&m.entries[1]), PathBuf::from("/data/clips/b.wav"));
        let both = "a.wav train s\na.wav eval s\n";
        assert!(DatasetManifest::parse(both, Path::new("."), Path::new("m")).is_err());
        assert!(DatasetManifest::parse("a.wav test s", Path::new("."), Path::new("m")).is_err());
        assert!(DatasetManifest::parse("a.wav train", Path::new("."), Path::new("m")).is_err());
    }
}
