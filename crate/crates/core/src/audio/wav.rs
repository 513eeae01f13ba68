use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Result, SvcError};

/// Reads a PCM (8/16/24/32-bit integer) or 32-bit float WAV file.
/// Multi-channel audio is downmixed by averaging.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(SvcError::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(SvcError::NotWav(path.display().to_string()));
    }
    check_sample_format(&bytes).map_err(|m| SvcError::UnsupportedFormat(format!("{}: {m}", path.display())))?;
    let reader = WavReader::new(Cursor::new(bytes)).map_err(|e| match e {
        hound::Error::Unsupported => SvcError::UnsupportedFormat(path.display().to_string()),
        hound::Error::IoError(io) => SvcError::Io(io),
        other => SvcError::NotWav(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| SvcError::NotWav(e.to_string()))?
        }
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| SvcError::NotWav(e.to_string()))?,
        (fmt, bits) => {
            return Err(SvcError::UnsupportedFormat(format!(
                "{}: {bits}-bit {fmt:?}",
                path.display()
            )))
        }
    };
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(samples, spec.sample_rate)
}

/// Scans the `fmt ` chunk and rejects encodings other than integer PCM at
/// 8/16/24/32 bits or 32-bit IEEE float.
fn check_sample_format(bytes: &[u8]) -> std::result::Result<(), String> {
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        if id == b"fmt " && pos + 8 + 16 <= bytes.len() {
            let body = &bytes[pos + 8..];
            let mut tag = u16::from_le_bytes([body[0], body[1]]);
            let bits = u16::from_le_bytes([body[14], body[15]]);
            // WAVE_FORMAT_EXTENSIBLE: the sub-format GUID starts with the tag.
            if tag == 0xFFFE && size >= 40 && body.len() >= 26 {
                tag = u16::from_le_bytes([body[24], body[25]]);
            }
            return match (tag, bits) {
                (1, 8 | 16 | 24 | 32) | (3, 32) => Ok(()),
                (1, b) => Err(format!("{b}-bit integer PCM")),
                (3, b) => Err(format!("{b}-bit float")),
                (t, _) => Err(format!("format tag {t:#06x}")),
            };
        }
        pos += 8 + size + (size & 1);
    }
    Ok(())
}

/// Writes mono PCM16. Samples are clamped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path.as_ref(), spec).map_err(hound_io)?;
    for &s in &clip.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(hound_io)?;
    }
    w.finalize().map_err(hound_io)?;
    Ok(())
}

fn hound_io(e: hound::Error) -> SvcError {
    match e {
        hound::Error::IoError(io) => SvcError::Io(io),
        other => SvcError::Io(std::io::Error::other(other.to_string())),
    }
}
