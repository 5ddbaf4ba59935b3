use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Encoding used by [`write_wav`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WavEncoding {
    #[default]
    Pcm16,
    Float32,
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads a mono 16 kHz file, 16-bit PCM or 32-bit float. PCM samples are
/// scaled by `1 / 32768`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| format_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(format_err(
            path,
            format!("expected mono, found {} channels", spec.channels),
        ));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(format_err(
            path,
            format!(
                "sample rate {} Hz found, expected {SAMPLE_RATE} Hz",
                spec.sample_rate
            ),
        ));
    }
    let samples: std::result::Result<Vec<f64>, hound::Error> =
        match (spec.sample_format, spec.bits_per_sample) {
            (SampleFormat::Int, 16) => reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| f64::from(v) / 32768.0))
                .collect(),
            (SampleFormat::Float, 32) => reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect(),
            (fmt, bits) => {
                return Err(format_err(
                    path,
                    format!(
                    "unsupported encoding {fmt:?} {bits}-bit; expected 16-bit PCM or 32-bit float"
                ),
                ))
            }
        };
    Ok(Waveform::from_samples(
        samples.map_err(|e| format_err(path, e.to_string()))?,
    ))
}

/// Writes a mono file at the waveform's rate. PCM output rounds to the
/// nearest step and saturates outside `[-1, 1)`.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let (bits, fmt) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: bits,
        sample_format: fmt,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| format_err(path, e.to_string()))?;
    for &v in &w.samples {
        let r = match encoding {
            WavEncoding::Pcm16 => {
                writer.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
            }
            WavEncoding::Float32 => writer.write_sample(v as f32),
        };
        r.map_err(|e| format_err(path, e.to_string()))?;
    }
    writer
        .finalize()
        .map_err(|e| format_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(len: usize) -> Waveform {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        Waveform::from_samples((0..len).map(|_| rng.gen_range(-0.99..0.99)).collect())
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = random(4000);
        write_wav(&p, &w, WavEncoding::Pcm16).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), w.len());
        let worst = r
            .samples
            .iter()
            .zip(&w.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1.0 / 32768.0, "{worst}");
    }

    #[test]
    fn float_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let w = random(1000);
        write_wav(&p, &w, WavEncoding::Float32).unwrap();
        let r = read_wav(&p).unwrap();
        for (a, b) in r.samples.iter().zip(&w.samples) {
            assert_eq!(*a, f64::from(*b as f32));
        }
    }

    #[test]
    fn rejects_stereo_and_wrong_rate() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut wr = WavWriter::create(&stereo, spec).unwrap();
        for _ in 0..8 {
            wr.write_sample(0i16).unwrap();
        }
        wr.finalize().unwrap();
        let err = read_wav(&stereo).unwrap_err().to_string();
        assert!(err.contains("expected mono"), "{err}");

        let fast = dir.path().join("r.wav");
        let w = Waveform::new(vec![0.0; 8], 48000).unwrap();
        write_wav(&fast, &w, WavEncoding::Pcm16).unwrap();
        let err = read_wav(&fast).unwrap_err().to_string();
        assert!(err.contains("48000") && err.contains("16000"), "{err}");
    }
}
