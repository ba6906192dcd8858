//! MFCC extraction.
//!
//! Pipeline: pre-emphasis → framing → Hamming window → power spectrum →
//! triangular mel filterbank → floored log → orthonormal DCT-II, keeping the
//! first `num_ceps` coefficients. All intermediate math runs in `f64`; the
//! resulting matrix is stored as `f32`.
//!
//! The paper-level settings are the 25 ms frame and 10 ms shift; filter count,
//! cepstrum count, pre-emphasis, and the log floor are standard ASR defaults
//! and can all be overridden in [`MfccConfig`].

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatrix, WavAudio};

/// MFCC extraction settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    /// Analysis window length in milliseconds.
    pub frame_length_ms: u32,
    /// Hop between consecutive frames in milliseconds.
    pub frame_shift_ms: u32,
    /// Number of triangular mel filters.
    pub num_mel_filters: usize,
    /// Number of cepstral coefficients kept after the DCT.
    pub num_ceps: usize,
    /// Pre-emphasis coefficient (0 disables).
    pub preemphasis: f64,
    /// FFT size; `None` selects the next power of two ≥ the frame length.
    pub fft_size: Option<usize>,
    /// Floor applied to mel energies before the log.
    pub log_floor: f64,
    /// Subtract the per-coefficient mean over all frames.
    pub cepstral_mean_normalize: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            frame_length_ms: 25,
            frame_shift_ms: 10,
            num_mel_filters: 26,
            num_ceps: 13,
            preemphasis: 0.97,
            fft_size: None,
            log_floor: 1e-10,
            cepstral_mean_normalize: false,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.frame_shift_ms == 0 || self.frame_length_ms == 0 {
            return Err(FeatureError::InvalidConfig {
                detail: "frame length and shift must be positive".into(),
            });
        }
        if self.frame_shift_ms > self.frame_length_ms {
            return Err(FeatureError::InvalidConfig {
                detail: format!(
                    "frame_shift_ms ({}) must not exceed frame_length_ms ({})",
                    self.frame_shift_ms, self.frame_length_ms
                ),
            });
        }
        if self.num_ceps == 0 || self.num_ceps > self.num_mel_filters {
            return Err(FeatureError::InvalidConfig {
                detail: format!(
                    "num_ceps ({}) must be in [1, num_mel_filters = {}]",
                    self.num_ceps, self.num_mel_filters
                ),
            });
        }
        if self.log_floor <= 0.0 {
            return Err(FeatureError::InvalidConfig {
                detail: "log_floor must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        (sample_rate as u64 * self.frame_length_ms as u64 / 1000) as usize
    }

    pub fn shift_samples(&self, sample_rate: u32) -> usize {
        (sample_rate as u64 * self.frame_shift_ms as u64 / 1000) as usize
    }

    pub fn effective_fft_size(&self, sample_rate: u32) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.frame_samples(sample_rate).next_power_of_two())
    }
}

/// Number of complete frames in a signal: `floor((len − frame)/shift) + 1`.
pub fn frame_count(len: usize, frame: usize, shift: usize) -> usize {
    if len < frame {
        0
    } else {
        (len - frame) / shift + 1
    }
}

/// A triangular mel filterbank over FFT bin center frequencies.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `num_filters` rows of `fft_size/2 + 1` weights.
    pub weights: Vec<Vec<f64>>,
    /// Center frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
    /// Lower edge of the first filter and upper edge of the last, in Hz.
    pub edges_hz: (f64, f64),
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Build triangular filters on a mel-spaced grid from 0 Hz to Nyquist.
///
/// Weights are evaluated at exact bin center frequencies (no edge snapping),
/// so adjacent filters overlap with total weight in `(0, 1]` strictly between
/// the outermost edges.
pub fn mel_filterbank(num_filters: usize, fft_size: usize, sample_rate: u32) -> MelFilterbank {
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let points: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (num_filters + 1) as f64))
        .collect();
    let num_bins = fft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut weights = vec![vec![0.0; num_bins]; num_filters];
    for m in 0..num_filters {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        for (b, w) in weights[m].iter_mut().enumerate() {
            let f = b as f64 * bin_hz;
            if f > lo && f < center {
                *w = (f - lo) / (center - lo);
            } else if f == center {
                *w = 1.0;
            } else if f > center && f < hi {
                *w = (hi - f) / (hi - center);
            }
        }
    }
    MelFilterbank {
        weights,
        centers_hz: points[1..=num_filters].to_vec(),
        edges_hz: (points[0], points[num_filters + 1]),
    }
}

/// Orthonormal DCT-II basis: `num_ceps × num_inputs`, `basis · basisᵀ = I`.
pub(crate) fn dct_ii_basis(num_ceps: usize, num_inputs: usize) -> Vec<Vec<f64>> {
    let n = num_inputs as f64;
    (0..num_ceps)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            (0..num_inputs)
                .map(|m| scale * (PI * k as f64 * (m as f64 + 0.5) / n).cos())
                .collect()
        })
        .collect()
}

fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// The two stages of extraction: the pre-DCT log-mel matrix (diagnostic) and
/// the cepstral output.
#[derive(Debug, Clone)]
pub struct MfccStages {
    pub log_mel: FeatureMatrix,
    pub mfcc: FeatureMatrix,
}

/// Extract MFCC features from mono audio.
pub fn mfcc(audio: &WavAudio, config: &MfccConfig) -> Result<FeatureMatrix, FeatureError> {
    Ok(mfcc_stages(audio, config)?.mfcc)
}

/// Extract MFCC features, also returning the pre-DCT log-mel matrix.
pub fn mfcc_stages(audio: &WavAudio, config: &MfccConfig) -> Result<MfccStages, FeatureError> {
    config.validate()?;
    let frame = config.frame_samples(audio.sample_rate);
    let shift = config.shift_samples(audio.sample_rate);
    if frame == 0 || shift == 0 {
        return Err(FeatureError::InvalidConfig {
            detail: format!(
                "frame geometry collapses to zero samples at {} Hz",
                audio.sample_rate
            ),
        });
    }
    if audio.samples.len() < frame {
        return Err(FeatureError::AudioTooShort {
            samples: audio.samples.len(),
            frame_samples: frame,
        });
    }
    let fft_size = config.effective_fft_size(audio.sample_rate);
    if fft_size < frame {
        return Err(FeatureError::InvalidConfig {
            detail: format!("fft_size {fft_size} smaller than frame of {frame} samples"),
        });
    }

    // Pre-emphasis over the whole signal: y[n] = x[n] − a·x[n−1], y[0] = x[0].
    let a = config.preemphasis;
    let emphasized: Vec<f64> = audio
        .samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if i == 0 || a == 0.0 {
                s as f64
            } else {
                s as f64 - a * audio.samples[i - 1] as f64
            }
        })
        .collect();

    let window = hamming(frame);
    let bank = mel_filterbank(config.num_mel_filters, fft_size, audio.sample_rate);
    let dct = dct_ii_basis(config.num_ceps, config.num_mel_filters);
    let num_frames = frame_count(emphasized.len(), frame, shift);
    let num_bins = fft_size / 2 + 1;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];

    let mut log_mel = Vec::with_capacity(num_frames * config.num_mel_filters);
    let mut ceps = Vec::with_capacity(num_frames * config.num_ceps);
    for t in 0..num_frames {
        let start = t * shift;
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = if i < frame {
                emphasized[start + i] * window[i]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..num_bins].iter().map(|c| c.norm_sqr()).collect();

        let mut log_row = Vec::with_capacity(config.num_mel_filters);
        for filt in &bank.weights {
            let energy: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            log_row.push(energy.max(config.log_floor).ln());
        }
        for basis in &dct {
            let c: f64 = basis.iter().zip(&log_row).map(|(b, x)| b * x).sum();
            ceps.push(c as f32);
        }
        log_mel.extend(log_row.iter().map(|&x| x as f32));
    }

    if config.cepstral_mean_normalize && num_frames > 0 {
        let f = config.num_ceps;
        for c in 0..f {
            let mean: f32 =
                (0..num_frames).map(|t| ceps[t * f + c]).sum::<f32>() / num_frames as f32;
            for t in 0..num_frames {
                ceps[t * f + c] -= mean;
            }
        }
    }

    Ok(MfccStages {
        log_mel: FeatureMatrix::new(
            num_frames,
            config.num_mel_filters,
            log_mel,
            config.frame_shift_ms,
        )?,
        mfcc: FeatureMatrix::new(num_frames, config.num_ceps, ceps, config.frame_shift_ms)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(sample_rate: u32, hz: f64, seconds: f64) -> WavAudio {
        let n = (sample_rate as f64 * seconds) as usize;
        let samples = (0..n)
            .map(|i| (2.0 * PI * hz * i as f64 / sample_rate as f64).sin() as f32 * 0.5)
            .collect();
        WavAudio {
            sample_rate,
            samples,
        }
    }

    #[test]
    fn one_second_at_16khz_yields_98_frames() {
        let audio = WavAudio {
            sample_rate: 16_000,
            samples: vec![0.01; 16_000],
        };
        let m = mfcc(&audio, &MfccConfig::default()).unwrap();
        assert_eq!(m.num_frames, 98);
        assert_eq!(m.num_features, 13);
        assert_eq!(m.frame_shift_ms, 10);
    }

    #[test]
    fn silence_gives_constant_floor_frames() {
        let audio = WavAudio {
            sample_rate: 16_000,
            samples: vec![0.0; 8_000],
        };
        let m = mfcc(&audio, &MfccConfig::default()).unwrap();
        let first = m.frame(0).to_vec();
        for t in 1..m.num_frames {
            assert_eq!(m.frame(t), &first[..], "frame {t} differs");
        }
    }

    #[test]
    fn too_short_audio_is_an_explicit_error() {
        let audio = WavAudio {
            sample_rate: 16_000,
            samples: vec![0.0; 100],
        };
        let err = mfcc(&audio, &MfccConfig::default()).unwrap_err();
        assert!(matches!(err, FeatureError::AudioTooShort { .. }));
    }

    #[test]
    fn sine_at_filter_center_maximizes_that_filter() {
        // Filterbank construction oracle: a pure tone at the center frequency
        // of an interior filter must put its argmax mel energy on that filter.
        let cfg = MfccConfig::default();
        let sr = 16_000;
        let bank = mel_filterbank(cfg.num_mel_filters, cfg.effective_fft_size(sr), sr);
        for k in 1..cfg.num_mel_filters - 1 {
            let audio = tone(sr, bank.centers_hz[k], 0.2);
            let stages = mfcc_stages(&audio, &cfg).unwrap();
            let lm = &stages.log_mel;
            // average energy over frames, then argmax over filters
            let mut mean = vec![0.0f64; lm.num_features];
            for t in 0..lm.num_frames {
                for (f, &v) in lm.frame(t).iter().enumerate() {
                    mean[f] += v as f64;
                }
            }
            let argmax = mean
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, k, "tone at {:.1} Hz", bank.centers_hz[k]);
        }
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let basis = dct_ii_basis(13, 26);
        for i in 0..13 {
            for j in 0..13 {
                let dot: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (dot - expected).abs() < 1e-10,
                    "basis[{i}]·basis[{j}] = {dot}"
                );
            }
        }
    }

    #[test]
    fn filterbank_coverage_between_edges() {
        let bank = mel_filterbank(26, 512, 16_000);
        let bin_hz = 16_000.0 / 512.0;
        let (lo, hi) = bank.edges_hz;
        for b in 0..257 {
            let f = b as f64 * bin_hz;
            if f > lo && f < hi {
                let total: f64 = bank.weights.iter().map(|w| w[b]).sum();
                assert!(
                    total > 0.0 && total <= 1.0001,
                    "bin {b} at {f:.1} Hz has coverage {total}"
                );
            }
        }
    }

    #[test]
    fn deterministic_extraction() {
        let audio = tone(16_000, 440.0, 0.3);
        let cfg = MfccConfig::default();
        let a = mfcc(&audio, &cfg).unwrap();
        let b = mfcc(&audio, &cfg).unwrap();
        assert_eq!(a.values, b.values);
    }
}
