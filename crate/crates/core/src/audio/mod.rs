//! Audio I/O, resampling, spectral features and the synthetic-singer corpus.

mod manifest;
mod resample;
mod spectrum;
mod synth;
mod wav;

pub use manifest::{DatasetManifest, LabeledClip, ManifestEntry, Split};
pub use resample::resample;
pub use spectrum::{
    linear_spectrogram, log_mel_var, mel_from_linear, LinearSpectrogram, MelFilterbank,
    MelSpectrogram, Stft, StftConfig, LOG_FLOOR,
};
pub use synth::{
    render_clip, synth_dataset, Melody, PitchClass, SingerProfile, SynthConfig, SynthDataset,
};
pub use wav::{load_wav, write_wav};

use crate::error::{Result, SvcError};

/// Mono waveform with its sample rate. Samples are nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(SvcError::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(SvcError::InvalidArgument("audio contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}
