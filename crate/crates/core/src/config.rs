//! Run configuration: a single TOML file with `section.key = value`
//! overrides. Unknown keys are rejected.
//!
//! Two digests are derived from a config. The *config hash* covers every
//! field and is stamped into all artifacts. The *compatibility hash* covers
//! only the fields that change tensor shapes or feature extraction, and is
//! what checkpoint loading enforces, so that e.g. a different guidance
//! weight at conversion time does not invalidate a trained model.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{StftConfig, SynthConfig};
use crate::error::{Result, SvcError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub win: usize,
    pub mel_bins: usize,
    pub mel_fmin: f64,
    pub mel_fmax: f64,
    /// Search range of the F0 extractor.
    pub f0_min: f64,
    pub f0_max: f64,
    /// Log-F0 quantisation range.
    pub f0_bin_lo: f64,
    pub f0_bin_hi: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 32000,
            fft_size: 1024,
            hop: 256,
            win: 1024,
            mel_bins: 80,
            mel_fmin: 40.0,
            mel_fmax: 16000.0,
            f0_min: 50.0,
            f0_max: 1000.0,
            f0_bin_lo: 40.0,
            f0_bin_hi: 1100.0,
        }
    }
}

impl AudioConfig {
    pub fn stft(&self) -> StftConfig {
        StftConfig {
            sample_rate: self.sample_rate,
            fft_size: self.fft_size,
            hop: self.hop,
            win: self.win,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_z: usize,
    pub d_spk: usize,
    pub d_content: usize,
    pub d_f0: usize,
    pub content_channels: usize,
    pub encoder_channels: usize,
    pub encoder_blocks: usize,
    /// Channels after each decoder upsampling stage.
    pub decoder_channels: Vec<usize>,
    /// Upsampling factors; their product must equal the hop.
    pub decoder_upsample: Vec<usize>,
    pub decoder_resblocks: usize,
    pub harmonics: usize,
    pub source_amplitude: f64,
    pub denoiser_channels: usize,
    pub denoiser_blocks: usize,
    pub step_embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_z: 32,
            d_spk: 192,
            d_content: 256,
            d_f0: 64,
            content_channels: 128,
            encoder_channels: 64,
            encoder_blocks: 8,
            decoder_channels: vec![64, 32, 16],
            decoder_upsample: vec![8, 8, 4],
            decoder_resblocks: 6,
            harmonics: 8,
            source_amplitude: 0.1,
            denoiser_channels: 64,
            denoiser_blocks: 12,
            step_embed_dim: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_1: f64,
    pub beta_t: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_1: 1e-4,
            beta_t: 0.06,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub p_uncond: f64,
    pub w: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            p_uncond: 0.1,
            w: 0.3,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_uncond) {
            return Err(SvcError::Config(format!("p_uncond {} not in [0, 1)", self.p_uncond)));
        }
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(SvcError::Config(format!("guidance weight {} must be >= 0", self.w)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeTrainConfig {
    pub speaker_steps: usize,
    pub speaker_lr: f64,
    pub am_margin: f64,
    pub am_scale: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`, reached by cosine decay.
    pub lr_floor: f64,
    pub grad_clip: f64,
    pub crop_frames: usize,
    pub beta_kl: f64,
    /// Weight of the content encoder's auxiliary mel reconstruction.
    pub aux_weight: f64,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            speaker_steps: 400,
            speaker_lr: 1e-2,
            am_margin: 0.2,
            am_scale: 15.0,
            steps: 3000,
            batch: 4,
            lr: 2e-3,
            lr_floor: 0.05,
            grad_clip: 1.0,
            crop_frames: 24,
            beta_kl: 0.01,
            aux_weight: 1.0,
            log_every: 10,
            checkpoint_every: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdmTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`, reached by cosine decay.
    pub lr_floor: f64,
    pub grad_clip: f64,
    pub crop_frames: usize,
    /// Train on sampled latents instead of the posterior mean.
    pub sampled_z: bool,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for LdmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch: 8,
            lr: 2e-4,
            lr_floor: 0.05,
            grad_clip: 1.0,
            crop_frames: 32,
            sampled_z: false,
            log_every: 10,
            checkpoint_every: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_singers: usize,
    pub clips_per_singer: usize,
    pub n_unseen: usize,
    pub test_clips_per_singer: usize,
    pub clip_secs: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            n_singers: s.n_singers,
            clips_per_singer: s.clips_per_singer,
            n_unseen: s.n_unseen,
            test_clips_per_singer: s.test_clips_per_singer,
            clip_secs: s.clip_secs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Output root; the `LSVC_OUT` environment variable overrides it.
    pub out_dir: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: "runs".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub audio: AudioConfig,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub guidance: GuidanceConfig,
    pub vae_train: VaeTrainConfig,
    pub ldm_train: LdmTrainConfig,
    pub data: DataConfig,
    pub paths: PathsConfig,
}

impl Config {
    /// Small sizes that train in minutes on one CPU core.
    pub fn smoke() -> Self {
        Self {
            model: ModelConfig {
                d_z: 8,
                d_spk: 16,
                d_content: 16,
                d_f0: 8,
                content_channels: 24,
                encoder_channels: 16,
                encoder_blocks: 4,
                decoder_channels: vec![24, 12, 8],
                decoder_upsample: vec![8, 8, 4],
                decoder_resblocks: 6,
                harmonics: 8,
                source_amplitude: 0.1,
                denoiser_channels: 32,
                denoiser_blocks: 6,
                step_embed_dim: 32,
            },
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| SvcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(SvcError::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serialisable")
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML
    /// literals, falling back to a bare string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Value::try_from(self).map_err(|e| SvcError::Config(e.to_string()))?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| SvcError::Config(format!("override '{ov}' is not key=value")))?;
            let value = parse_literal(raw.trim());
            let mut path: Vec<&str> = key.trim().split('.').collect();
            let leaf = path.pop().unwrap_or_default();
            let mut node = &mut doc;
            for part in path {
                node = node
                    .get_mut(part)
                    .ok_or_else(|| SvcError::Config(format!("unknown config section in '{key}'")))?;
            }
            let table = node
                .as_table_mut()
                .ok_or_else(|| SvcError::Config(format!("'{key}' does not name a config key")))?;
            if !table.contains_key(leaf) {
                return Err(SvcError::Config(format!("unknown config key '{key}'")));
            }
            table.insert(leaf.to_string(), value);
        }
        let cfg: Config = doc.try_into().map_err(|e| SvcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.audio;
        a.stft().validate().map_err(|e| SvcError::Config(e.to_string()))?;
        if a.mel_bins == 0 || !(a.mel_fmin >= 0.0 && a.mel_fmin < a.mel_fmax) {
            return Err(SvcError::Config("need mel_bins >= 1 and mel_fmin < mel_fmax".into()));
        }
        let nyq = a.sample_rate as f64 / 2.0;
        if a.mel_fmax > nyq || a.f0_max > nyq {
            return Err(SvcError::Config(format!("frequency bound above Nyquist {nyq}")));
        }
        if !(a.f0_min > 0.0 && a.f0_min < a.f0_max) || !(a.f0_bin_lo > 0.0 && a.f0_bin_lo < a.f0_bin_hi) {
            return Err(SvcError::Config("F0 ranges must satisfy 0 < lo < hi".into()));
        }
        let m = &self.model;
        if m.decoder_upsample.iter().product::<usize>() != a.hop {
            return Err(SvcError::Config(format!(
                "decoder upsampling {:?} must multiply to the hop {}",
                m.decoder_upsample, a.hop
            )));
        }
        if m.decoder_channels.len() != m.decoder_upsample.len() || m.decoder_upsample.is_empty() {
            return Err(SvcError::Config(
                "decoder_channels and decoder_upsample need the same non-zero length".into(),
            ));
        }
        let dims = [
            m.d_z,
            m.d_spk,
            m.d_content,
            m.d_f0,
            m.content_channels,
            m.encoder_channels,
            m.denoiser_channels,
            m.denoiser_blocks,
            m.step_embed_dim,
            m.harmonics,
        ];
        if dims.contains(&0) || m.decoder_channels.contains(&0) || m.decoder_upsample.contains(&0) {
            return Err(SvcError::Config("model sizes must be positive".into()));
        }
        if m.step_embed_dim % 2 != 0 {
            return Err(SvcError::Config("step_embed_dim must be even".into()));
        }
        let s = &self.schedule;
        if s.steps == 0 || !(s.beta_1 > 0.0 && s.beta_1 <= s.beta_t && s.beta_t < 1.0) {
            return Err(SvcError::Config("schedule needs T >= 1 and 0 < beta_1 <= beta_T < 1".into()));
        }
        self.guidance.validate()?;
        let v = &self.vae_train;
        if v.batch == 0 || v.crop_frames == 0 || v.log_every == 0 || v.checkpoint_every == 0 {
            return Err(SvcError::Config("vae_train sizes and intervals must be positive".into()));
        }
        if !(v.lr > 0.0 && v.speaker_lr > 0.0 && v.beta_kl >= 0.0 && v.grad_clip > 0.0)
            || !(0.0..=1.0).contains(&v.lr_floor)
        {
            return Err(SvcError::Config("vae_train rates must be positive".into()));
        }
        let l = &self.ldm_train;
        if l.batch == 0 || l.crop_frames == 0 || l.log_every == 0 || l.checkpoint_every == 0 {
            return Err(SvcError::Config("ldm_train sizes and intervals must be positive".into()));
        }
        if !(l.lr > 0.0 && l.grad_clip > 0.0) || !(0.0..=1.0).contains(&l.lr_floor) {
            return Err(SvcError::Config("ldm_train rates must be positive".into()));
        }
        self.synth().validate().map_err(|e| SvcError::Config(e.to_string()))
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_singers: self.data.n_singers,
            clips_per_singer: self.data.clips_per_singer,
            n_unseen: self.data.n_unseen,
            test_clips_per_singer: self.data.test_clips_per_singer,
            clip_secs: self.data.clip_secs,
            sample_rate: self.audio.sample_rate,
        }
    }

    /// Digest of the full canonical serialisation.
    pub fn hash(&self) -> String {
        digest(&serde_json::to_vec(self).expect("config is always serialisable"))
    }

    /// Digest of the fields that determine tensor shapes and features.
    pub fn compat_hash(&self) -> String {
        let v = serde_json::json!({
            "audio": self.audio,
            "model": self.model,
            "schedule": self.schedule,
        });
        digest(&serde_json::to_vec(&v).expect("json value serialises"))
    }
}

fn digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
