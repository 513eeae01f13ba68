//! Any-to-any conversion: source singing plus target references in,
//! converted waveform out.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::checkpoint::Checkpoint;
use crate::conditioning::{ConditionSet, ContentFeatures, SpeakerEmbedding};
use crate::config::Config;
use crate::diffusion::LdmModel;
use crate::error::{Result, SvcError};
use crate::pitch::{shift_f0, F0Contour};
use crate::rng::stream;
use crate::vae::{Latent, VaeModel};

#[derive(Clone, Debug, PartialEq)]
pub struct ConversionRequest {
    pub source: AudioClip,
    pub refs: Vec<AudioClip>,
    pub w: f64,
    pub seed: u64,
}

impl ConversionRequest {
    pub fn new(source: AudioClip, refs: Vec<AudioClip>, w: f64, seed: u64) -> Result<Self> {
        if refs.is_empty() {
            return Err(SvcError::InvalidArgument("at least one reference clip is required".into()));
        }
        if !(w.is_finite() && w >= 0.0) {
            return Err(SvcError::InvalidArgument(format!("guidance weight {w} must be ≥ 0")));
        }
        Ok(Self { source, refs, w, seed })
    }
}

/// Precomputed features that replace the corresponding analysis stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    /// Source contour, before shifting.
    pub f0: Option<F0Contour>,
    pub content: Option<ContentFeatures>,
    pub speaker: Option<SpeakerEmbedding>,
}

/// Wall-clock seconds per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub resample: f64,
    pub analysis: f64,
    pub speaker: f64,
    pub sampling: f64,
    pub decoding: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConversionResult {
    /// `frames · hop` samples at the model rate.
    pub audio: AudioClip,
    pub source_f0: F0Contour,
    /// Source contour moved to the target's voiced mean.
    pub f0: F0Contour,
    pub target_mean_hz: f64,
    pub speaker: SpeakerEmbedding,
    pub denoiser_calls: usize,
    pub timings: StageTimings,
}

/// Voiced mean over every voiced frame of every reference, so each clip
/// counts in proportion to its voiced duration.
pub fn pooled_voiced_mean(contours: &[F0Contour]) -> Result<f64> {
    let (sum, n) = contours
        .iter()
        .flat_map(|c| c.hz.iter())
        .filter(|&&v| v > 0.0)
        .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
    if n == 0 {
        return Err(SvcError::NoVoicedFrames);
    }
    Ok(sum / n as f64)
}

/// Trained VAE and denoiser bound to one configuration. Read-only, so one
/// converter can serve concurrent requests.
#[derive(Clone, Debug)]
pub struct Converter {
    pub vae: VaeModel,
    pub ldm: LdmModel,
}

impl Converter {
    pub fn new(cfg: &Config, vae_ckpt: &Checkpoint, ldm_ckpt: &Checkpoint) -> Result<Self> {
        let vae = VaeModel::from_checkpoint(vae_ckpt, cfg)?;
        let ldm = LdmModel::from_checkpoint(ldm_ckpt, cfg, &vae)?;
        Ok(Self { vae, ldm })
    }

    pub fn config(&self) -> &Config {
        &self.vae.cfg
    }

    pub fn convert(&self, req: &ConversionRequest, overrides: &Overrides) -> Result<ConversionResult> {
        let fe = &self.vae.fe;
        let mut timings = StageTimings::default();

        let clock = Instant::now();
        let source = fe.conform(&req.source);
        let refs: Vec<AudioClip> = req.refs.iter().map(|r| fe.conform(r)).collect();
        timings.resample = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let source_f0 = match &overrides.f0 {
            Some(f) => {
                fe.check_f0(f, &source)?;
                f.clone()
            }
            None => fe.f0(&source)?,
        };
        let frames = source_f0.len();
        let x = match &overrides.content {
            Some(c) => c.clone(),
            None => self.vae.content(&source)?,
        };
        if x.frames() != frames {
            return Err(SvcError::Shape(format!(
                "content has {} frames, source has {frames}",
                x.frames()
            )));
        }
        let ref_f0 = refs.iter().map(|r| fe.f0(r)).collect::<Result<Vec<_>>>()?;
        let target_mean_hz = pooled_voiced_mean(&ref_f0)?;
        let f0 = shift_f0(&source_f0, target_mean_hz)?;
        let bins = fe.bins(&f0)?;
        timings.analysis = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let speaker = match &overrides.speaker {
            Some(e) => e.clone(),
            None => self.vae.speaker_embed(&refs)?,
        };
        timings.speaker = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let cond = ConditionSet::new(x, bins, speaker.clone())?;
        let out = self
            .ldm
            .sample(&cond, req.w, &mut stream(req.seed, "convert-sample", 0))?;
        timings.sampling = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let audio = self.vae.decode(
            &Latent { values: out.z0 },
            &f0,
            &speaker,
            &mut stream(req.seed, "convert-decode", 0),
        )?;
        timings.decoding = clock.elapsed().as_secs_f64();

        Ok(ConversionResult {
            audio,
            source_f0,
            f0,
            target_mean_hz,
            speaker,
            denoiser_calls: out.denoiser_calls,
            timings,
        })
    }
}
