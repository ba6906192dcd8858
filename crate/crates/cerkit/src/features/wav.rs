//! Minimal RIFF/WAVE reader and writer.
//!
//! Reads PCM 16-bit and IEEE float 32-bit files; anything else is rejected
//! with the encoding named. Multi-channel audio is mixed down to mono by
//! averaging. The writers exist for tests, examples, and fixture generation.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::FeatureError;

/// Mono audio, samples normalized to `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct WavAudio {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl WavAudio {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FeatureError> {
        if self.pos + n > self.bytes.len() {
            return Err(FeatureError::Parse {
                offset: self.pos as u64,
                detail: format!("truncated file while reading {what} ({n} bytes needed)"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16, FeatureError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FeatureError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;

/// Read a WAV file as normalized mono audio.
pub fn read_wav(path: &Path) -> Result<WavAudio, FeatureError> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    let riff = r.take(4, "RIFF header")?;
    if riff != b"RIFF" {
        return Err(FeatureError::BadMagic {
            expected: "RIFF".into(),
            found: String::from_utf8_lossy(riff).into_owned(),
        });
    }
    r.u32("RIFF size")?;
    let wave = r.take(4, "WAVE tag")?;
    if wave != b"WAVE" {
        return Err(FeatureError::BadMagic {
            expected: "WAVE".into(),
            found: String::from_utf8_lossy(wave).into_owned(),
        });
    }

    let mut format: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while r.pos + 8 <= r.bytes.len() {
        let id: [u8; 4] = r.take(4, "chunk id")?.try_into().unwrap();
        let size = r.u32("chunk size")? as usize;
        match &id {
            b"fmt " => {
                let chunk_start = r.pos;
                let tag = r.u16("format tag")?;
                let channels = r.u16("channel count")?;
                let rate = r.u32("sample rate")?;
                r.u32("byte rate")?;
                r.u16("block align")?;
                let bits = r.u16("bits per sample")?;
                format = Some((tag, channels, rate, bits));
                r.pos = chunk_start + size;
            }
            b"data" => {
                data = Some(r.take(size, "data chunk")?);
            }
            _ => {
                // skip unknown chunks (LIST, fact, ...)
                r.take(size.min(r.bytes.len() - r.pos), "chunk body")?;
            }
        }
        if size % 2 == 1 && r.pos < r.bytes.len() {
            r.pos += 1; // chunks are word-aligned
        }
    }

    let (tag, channels, sample_rate, bits) = format.ok_or(FeatureError::Parse {
        offset: bytes.len() as u64,
        detail: "missing fmt chunk".into(),
    })?;
    let data = data.ok_or(FeatureError::Parse {
        offset: bytes.len() as u64,
        detail: "missing data chunk".into(),
    })?;
    if channels == 0 || sample_rate == 0 {
        return Err(FeatureError::Parse {
            offset: 22,
            detail: format!("invalid fmt chunk: {channels} channels at {sample_rate} Hz"),
        });
    }

    let interleaved: Vec<f32> = match (tag, bits) {
        (WAVE_FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
            .collect(),
        (WAVE_FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        _ => {
            return Err(FeatureError::UnsupportedEncoding {
                encoding: format!("format tag {tag}, {bits}-bit"),
            })
        }
    };

    let ch = channels as usize;
    let samples: Vec<f32> = if ch == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(ch)
            .map(|frame| frame.iter().sum::<f32>() / ch as f32)
            .collect()
    };
    Ok(WavAudio {
        sample_rate,
        samples,
    })
}

fn write_wav(
    path: &Path,
    sample_rate: u32,
    channels: u16,
    format_tag: u16,
    bits: u16,
    payload: &[u8],
) -> Result<(), FeatureError> {
    let byte_rate = sample_rate * channels as u32 * (bits as u32 / 8);
    let block_align = channels * (bits / 8);
    let mut out = Vec::with_capacity(44 + payload.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + payload.len() as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format_tag.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Write interleaved samples as PCM 16-bit (values clamped to `[-1, 1]`).
pub fn write_wav_pcm16(
    path: &Path,
    sample_rate: u32,
    channels: u16,
    samples: &[f32],
) -> Result<(), FeatureError> {
    let payload: Vec<u8> = samples
        .iter()
        .flat_map(|&s| {
            let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            v.to_le_bytes()
        })
        .collect();
    write_wav(path, sample_rate, channels, WAVE_FORMAT_PCM, 16, &payload)
}

/// Write interleaved samples as IEEE float 32-bit.
pub fn write_wav_f32(
    path: &Path,
    sample_rate: u32,
    channels: u16,
    samples: &[f32],
) -> Result<(), FeatureError> {
    let payload: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    write_wav(
        path,
        sample_rate,
        channels,
        WAVE_FORMAT_IEEE_FLOAT,
        32,
        &payload,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        write_wav_pcm16(&path, 16_000, 1, &vec![0.0; 16_000]).unwrap();
        let audio = read_wav(&path).unwrap();
        assert_eq!(audio.sample_rate, 16_000);
        assert_eq!(audio.samples.len(), 16_000);
        assert!(audio.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn opposite_stereo_channels_cancel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let mut interleaved = Vec::new();
        for i in 0..100 {
            let v = ((i as f32) / 100.0).sin() * 0.5;
            interleaved.push(v);
            interleaved.push(-v);
        }
        write_wav_f32(&path, 8_000, 2, &interleaved).unwrap();
        let audio = read_wav(&path).unwrap();
        assert_eq!(audio.samples.len(), 100);
        assert!(audio.samples.iter().all(|&s| s.abs() < 1e-7));
    }

    #[test]
    fn full_scale_square_wave_pcm_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("square.wav");
        let samples: Vec<f32> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        write_wav_pcm16(&path, 8_000, 1, &samples).unwrap();
        let audio = read_wav(&path).unwrap();
        for (i, &s) in audio.samples.iter().enumerate() {
            let expected = if i % 2 == 0 { 32767.0 / 32768.0 } else { -1.0 };
            assert_eq!(s, expected);
        }
    }

    #[test]
    fn unsupported_encoding_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alaw.wav");
        write_wav(&path, 8_000, 1, 6, 8, &[0u8; 8]).unwrap(); // A-law
        let err = read_wav(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("format tag 6"), "{msg}");
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.wav");
        write_wav_pcm16(&path, 8_000, 1, &vec![0.25; 100]).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..50]).unwrap();
        let err = read_wav(&path).unwrap_err();
        match err {
            FeatureError::Parse { offset, detail } => {
                assert!(offset <= 50, "offset {offset}");
                assert!(detail.contains("truncated"), "{detail}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
