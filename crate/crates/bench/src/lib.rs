//! Fixtures shared by the benchmarks in `benches/`.

use lsvc_core::audio::{render_clip, AudioClip, Melody, PitchClass, SingerProfile};
use lsvc_core::conditioning::{ConditionSet, ContentFeatures, SpeakerEmbedding};
use lsvc_core::nn::Tensor;
use lsvc_core::pitch::F0Bins;
use lsvc_core::rng::stream;
use lsvc_core::Config;

/// A synthetic sung clip of `secs` seconds at 32 kHz.
pub fn clip(secs: f64) -> AudioClip {
    let profile = SingerProfile::random("bench", PitchClass::Low, &mut stream(1, "bench-profile", 0));
    let melody = Melody::random(secs, &mut stream(1, "bench-melody", 0));
    render_clip(&profile, &melody, 32000, &mut stream(1, "bench-noise", 0))
}

/// Random conditions of `frames` frames sized for `cfg`.
pub fn conditions(cfg: &Config, frames: usize) -> ConditionSet {
    let m = &cfg.model;
    let x = ContentFeatures {
        values: Tensor::randn(&[m.d_content, frames], 1.0, &mut stream(2, "bench-x", 0)),
    };
    let bins = F0Bins {
        idx: (0..frames).map(|i| 1 + (i * 7) % 256).collect(),
    };
    let e = SpeakerEmbedding::from_raw(vec![1.0; m.d_spk]).expect("non-zero embedding");
    ConditionSet::new(x, bins, e).expect("consistent shapes")
}
