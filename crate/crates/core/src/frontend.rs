//! Shared analysis front end: one planned STFT, mel filterbank and F0
//! extractor per audio configuration.

use crate::audio::{
    linear_spectrogram, resample, AudioClip, LinearSpectrogram, MelFilterbank, MelSpectrogram,
    Stft,
};
use crate::config::AudioConfig;
use crate::error::{Result, SvcError};
use crate::pitch::{quantize_log_f0, F0Bins, F0Contour, YinConfig, YinExtractor};

#[derive(Clone)]
pub struct FrontEnd {
    pub config: AudioConfig,
    pub stft: Stft,
    pub filterbank: MelFilterbank,
}

impl std::fmt::Debug for FrontEnd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrontEnd").field("config", &self.config).finish()
    }
}

impl FrontEnd {
    pub fn new(config: &AudioConfig) -> Result<Self> {
        let stft = Stft::new(config.stft())?;
        let filterbank =
            MelFilterbank::new(&stft.config, config.mel_bins, config.mel_fmin, config.mel_fmax)?;
        Ok(Self {
            config: config.clone(),
            stft,
            filterbank,
        })
    }

    pub fn hop(&self) -> usize {
        self.config.hop
    }

    pub fn frames(&self, n_samples: usize) -> usize {
        n_samples / self.config.hop + 1
    }

    /// Resamples to the model rate when needed.
    pub fn conform(&self, clip: &AudioClip) -> AudioClip {
        if clip.sample_rate == self.config.sample_rate {
            clip.clone()
        } else {
            resample(clip, self.config.sample_rate)
        }
    }

    pub fn linear(&self, clip: &AudioClip) -> Result<LinearSpectrogram> {
        linear_spectrogram(clip, &self.stft)
    }

    pub fn log_mel(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        Ok(self.filterbank.apply(&self.linear(clip)?))
    }

    pub fn f0(&self, clip: &AudioClip) -> Result<F0Contour> {
        let yin = YinExtractor::new(YinConfig::new(
            self.config.sample_rate,
            self.config.hop,
            self.config.f0_min,
            self.config.f0_max,
        ))?;
        yin.extract(clip)
    }

    pub fn bins(&self, f0: &F0Contour) -> Result<F0Bins> {
        quantize_log_f0(f0, self.config.f0_bin_lo, self.config.f0_bin_hi)
    }

    /// Checks that an externally supplied contour lines up with a clip.
    pub fn check_f0(&self, f0: &F0Contour, clip: &AudioClip) -> Result<()> {
        let want = self.frames(clip.len());
        if f0.frame_hop != self.config.hop || f0.len() != want {
            return Err(SvcError::Shape(format!(
                "F0 contour has {} frames at hop {}, clip needs {want} at hop {}",
                f0.len(),
                f0.frame_hop,
                self.config.hop
            )));
        }
        Ok(())
    }
}
