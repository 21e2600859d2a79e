use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::{AudioBuffer, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

fn open(path: &Path) -> Result<WavReader<std::io::BufReader<std::fs::File>>> {
    WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(format!("opening {}", path.display()), io),
        hound::Error::Unsupported => Error::UnsupportedAudio {
            path: path.into(),
            reason: "unsupported encoding, expected PCM".into(),
        },
        other => Error::format(path, other.to_string()),
    })
}

fn check_spec(path: &Path, spec: &WavSpec) -> Result<()> {
    let unsupported = |reason: String| Error::UnsupportedAudio {
        path: path.into(),
        reason,
    };
    if spec.channels != 1 {
        return Err(unsupported(format!(
            "{} channels, only mono is supported",
            spec.channels
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(unsupported(format!(
            "{}-bit {:?} samples, only 16-bit PCM is supported",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(unsupported(format!(
            "sample rate {} Hz, expected {SAMPLE_RATE_HZ} Hz",
            spec.sample_rate
        )));
    }
    Ok(())
}

/// Reads a 16 kHz mono PCM16 WAV file, scaling samples by 1/32768.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut reader = open(path)?;
    check_spec(path, &reader.spec())?;
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    AudioBuffer::new(samples, SAMPLE_RATE_HZ)
}

/// Duration from the header alone.
pub fn wav_duration_s(path: &Path) -> Result<f64> {
    let reader = open(path)?;
    let spec = reader.spec();
    check_spec(path, &spec)?;
    Ok(reader.duration() as f64 / spec.sample_rate as f64)
}

/// Writes PCM16 mono; samples are rounded and clamped to the i16 range.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(format!("writing {}", path.display()), io),
        other => Error::format(path, other.to_string()),
    };
    let mut writer = WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &audio.samples {
        let v = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(v).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, spec: WavSpec, samples: &[i32]) {
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            match spec.bits_per_sample {
                16 => w.write_sample(s as i16).unwrap(),
                _ => w.write_sample(s).unwrap(),
            }
        }
        w.finalize().unwrap();
    }

    fn spec(channels: u16, rate: u32, bits: u16) -> WavSpec {
        WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: SampleFormat::Int,
        }
    }

    #[test]
    fn scaling_and_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let mut samples = vec![0; 16_000];
        samples[0] = 32767;
        samples[1] = -32768;
        write_raw(&path, spec(1, 16_000, 16), &samples);
        let audio = read_wav(&path).unwrap();
        assert_eq!(audio.len(), 16_000);
        assert_eq!(audio.samples[0], 32767.0 / 32768.0);
        assert_eq!(audio.samples[1], -1.0);
        assert_eq!(wav_duration_s(&path).unwrap(), 1.0);
    }

    #[test]
    fn rejects_stereo_rate_and_depth() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("s.wav");
        write_raw(&stereo, spec(2, 16_000, 16), &[0; 20]);
        let err = read_wav(&stereo).unwrap_err().to_string();
        assert!(err.contains("2 channels"), "{err}");

        let rate = dir.path().join("r.wav");
        write_raw(&rate, spec(1, 8_000, 16), &[0; 20]);
        assert!(read_wav(&rate).unwrap_err().to_string().contains("8000 Hz"));

        let deep = dir.path().join("d.wav");
        write_raw(&deep, spec(1, 16_000, 24), &[0; 20]);
        assert!(read_wav(&deep).unwrap_err().to_string().contains("24-bit"));
    }

    #[test]
    fn malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"RIFF\x00\x00\x00\x00WAVEjunk").unwrap();
        assert!(read_wav(&path).is_err());
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.wav");
        let audio = AudioBuffer::new(vec![0.5, -0.25, 0.0, 2.0], 16_000).unwrap();
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples, vec![0.5, -0.25, 0.0, 32767.0 / 32768.0]);
    }
}
