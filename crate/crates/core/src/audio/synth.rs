//! Synthetic singers: a deterministic stand-in corpus.
//!
//! Each singer owns a fixed formant filter, spectral tilt, breathiness,
//! vibrato and base pitch. Each clip is a random melody (piecewise-constant
//! notes with rests) rendered as a band-limited harmonic source through the
//! singer's filter, plus low-level noise.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, LabeledClip, ManifestEntry, Split};
use super::{write_wav, AudioClip};
use crate::error::{Result, SvcError};
use crate::rng::{stream, SvcRng};

/// Coarse pitch-range class; the synthetic analogue of a gender bucket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PitchClass {
    Low,
    High,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingerProfile {
    pub id: String,
    pub pitch_class: PitchClass,
    pub base_hz: f64,
    /// `(centre Hz, bandwidth Hz)` of each cascade resonator.
    pub formants: Vec<(f64, f64)>,
    /// One-pole low-pass coefficient applied after the formants.
    pub tilt: f64,
    pub breath: f64,
    pub vibrato_hz: f64,
    pub vibrato_semitones: f64,
}

const NEUTRAL_FORMANTS: [(f64, f64); 4] = [(650.0, 80.0), (1150.0, 90.0), (2500.0, 120.0), (3500.0, 160.0)];

impl SingerProfile {
    pub fn random(id: impl Into<String>, class: PitchClass, rng: &mut SvcRng) -> Self {
        let base_hz = match class {
            PitchClass::Low => rng.random_range(105.0..160.0),
            PitchClass::High => rng.random_range(220.0..320.0),
        };
        // Vocal-tract length scaling plus per-formant jitter.
        let tract = rng.random_range(0.82..1.22);
        let formants = NEUTRAL_FORMANTS
            .iter()
            .map(|&(f, bw)| {
                (
                    f * tract * rng.random_range(0.9..1.1),
                    bw * rng.random_range(0.8..1.4),
                )
            })
            .collect();
        Self {
            id: id.into(),
            pitch_class: class,
            base_hz,
            formants,
            tilt: rng.random_range(0.0..0.6),
            breath: rng.random_range(0.0..0.04),
            vibrato_hz: rng.random_range(4.5..6.5),
            vibrato_semitones: rng.random_range(0.15..0.6),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub start: f64,
    pub dur: f64,
    /// Offset from the singer's base pitch; `None` is a rest.
    pub semitones: Option<i32>,
}

/// Relative melody: note timing and scale steps, transposed per singer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Melody {
    pub notes: Vec<Note>,
    pub duration: f64,
}

const MAJOR: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];

impl Melody {
    pub fn random(duration: f64, rng: &mut SvcRng) -> Self {
        let mut notes = Vec::new();
        let mut t = 0.0;
        let mut degree: i32 = rng.random_range(0..7);
        // Brief lead-in rest so every clip has unvoiced frames.
        let lead = rng.random_range(0.04..0.1);
        notes.push(Note {
            start: 0.0,
            dur: lead,
            semitones: None,
        });
        t += lead;
        while t < duration {
            let dur = if rng.random_bool(0.15) {
                let d = rng.random_range(0.05..0.14);
                notes.push(Note {
                    start: t,
                    dur: d,
                    semitones: None,
                });
                d
            } else {
                degree = (degree + rng.random_range(-2..=2)).clamp(-4, 9);
                let octave = degree.div_euclid(7);
                let semis = MAJOR[degree.rem_euclid(7) as usize] + 12 * octave;
                let d = rng.random_range(0.16..0.42);
                notes.push(Note {
                    start: t,
                    dur: d,
                    semitones: Some(semis - 2),
                });
                d
            };
            t += dur;
        }
        Self { notes, duration }
    }

    fn note_at(&self, t: f64) -> Option<&Note> {
        self.notes.iter().find(|n| t >= n.start && t < n.start + n.dur)
    }
}

/// Renders `melody` sung by `profile`. Deterministic given `noise_rng`.
pub fn render_clip(
    profile: &SingerProfile,
    melody: &Melody,
    sample_rate: u32,
    noise_rng: &mut SvcRng,
) -> AudioClip {
    let sr = sample_rate as f64;
    let n = (melody.duration * sr).round() as usize;
    let nyq = 0.45 * sr;
    let attack = 0.015;
    let release = 0.03;
    let glide = (-1.0 / (0.012 * sr)).exp();

    let mut phase = 0.0;
    let mut log_f0 = (profile.base_hz).ln();
    let mut env_smooth = 0.0;
    let env_coef = (-1.0 / (0.004 * sr)).exp();
    let mut source = vec![0.0; n];
    let mut breath = vec![0.0; n];
    for (i, (s, b)) in source.iter_mut().zip(breath.iter_mut()).enumerate() {
        let t = i as f64 / sr;
        let note = melody.note_at(t);
        let (target_env, semis) = match note {
            Some(Note {
                start,
                dur,
                semitones: Some(k),
            }) => {
                let into = t - start;
                let left = start + dur - t;
                ((into / attack).min(1.0).min(left / release).clamp(0.0, 1.0), Some(*k))
            }
            _ => (0.0, None),
        };
        env_smooth = env_coef * env_smooth + (1.0 - env_coef) * target_env;
        if let Some(k) = semis {
            let vib = profile.vibrato_semitones * (2.0 * PI * profile.vibrato_hz * t).sin();
            let target = profile.base_hz.ln() + (k as f64 + vib) / 12.0 * 2f64.ln();
            log_f0 = glide * log_f0 + (1.0 - glide) * target;
        }
        let f0 = log_f0.exp();
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
        if env_smooth > 1e-4 {
            let mut acc = 0.0;
            let mut k = 1.0;
            while k * f0 < nyq {
                acc += (k * phase).sin() / k;
                k += 1.0;
            }
            *s = acc * env_smooth;
            *b = noise_rng.sample::<f64, _>(StandardNormal) * profile.breath * env_smooth;
        } else {
            let _ = noise_rng.sample::<f64, _>(StandardNormal);
        }
    }

    let mut y: Vec<f64> = source.iter().zip(&breath).map(|(s, b)| s + b).collect();
    for &(f, bw) in &profile.formants {
        resonate(&mut y, f.min(nyq), bw, sr);
    }
    let mut prev = 0.0;
    for v in y.iter_mut() {
        prev = (1.0 - profile.tilt) * *v + profile.tilt * prev;
        *v = prev;
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    let samples = y
        .iter()
        .map(|v| v * gain + 0.002 * noise_rng.sample::<f64, _>(StandardNormal))
        .collect();
    AudioClip {
        samples,
        sample_rate,
    }
}

/// Two-pole resonator with unit DC gain (Klatt form).
fn resonate(x: &mut [f64], freq: f64, bw: f64, sr: f64) {
    let c = -(-2.0 * PI * bw / sr).exp();
    let b = 2.0 * (-PI * bw / sr).exp() * (2.0 * PI * freq / sr).cos();
    let a = 1.0 - b - c;
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y = a * *v + b * y1 + c * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_singers: usize,
    pub clips_per_singer: usize,
    pub n_unseen: usize,
    /// Clips per seen singer held out as `test-seen`.
    pub test_clips_per_singer: usize,
    pub clip_secs: f64,
    pub sample_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_singers: 10,
            clips_per_singer: 8,
            n_unseen: 2,
            test_clips_per_singer: 2,
            clip_secs: 1.5,
            sample_rate: 32000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_unseen >= self.n_singers {
            return Err(SvcError::InvalidArgument(format!(
                "n_unseen ({}) must be smaller than n_singers ({})",
                self.n_unseen, self.n_singers
            )));
        }
        if self.test_clips_per_singer >= self.clips_per_singer {
            return Err(SvcError::InvalidArgument(
                "test_clips_per_singer must leave at least one training clip".into(),
            ));
        }
        if self.clip_secs <= 0.0 || self.sample_rate == 0 {
            return Err(SvcError::InvalidArgument("clip_secs and sample_rate must be positive".into()));
        }
        Ok(())
    }
}

pub struct SynthDataset {
    pub manifest: DatasetManifest,
    /// Audio for each manifest entry, same order.
    pub clips: Vec<AudioClip>,
    pub profiles: Vec<SingerProfile>,
}

impl SynthDataset {
    /// In-memory clips of one split with their singer labels.
    pub fn labeled(&self, split: Split) -> Vec<LabeledClip> {
        self.manifest
            .with_split(split)
            .map(|(i, e)| LabeledClip {
                clip: self.clips[i].clone(),
                singer_id: e.singer_id.clone(),
            })
            .collect()
    }
}

pub fn singer_id(index: usize) -> String {
    format!("singer_{index:02}")
}

/// Builds the synthetic corpus. Output is independent of thread count: each
/// clip draws from its own `(seed, singer, clip)` stream.
pub fn synth_dataset(cfg: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    cfg.validate()?;
    let profiles: Vec<SingerProfile> = (0..cfg.n_singers)
        .map(|i| {
            let class = if i % 2 == 0 {
                PitchClass::Low
            } else {
                PitchClass::High
            };
            SingerProfile::random(singer_id(i), class, &mut stream(seed, "singer", i as u64))
        })
        .collect();

    // Unseen singers alternate between pitch classes so both buckets exist.
    let mut split_rng = stream(seed, "split", 0);
    let mut lows: Vec<usize> = (0..cfg.n_singers).filter(|i| i % 2 == 0).collect();
    let mut highs: Vec<usize> = (0..cfg.n_singers).filter(|i| i % 2 == 1).collect();
    shuffle(&mut lows, &mut split_rng);
    shuffle(&mut highs, &mut split_rng);
    let mut unseen = Vec::new();
    while unseen.len() < cfg.n_unseen {
        let pick = if unseen.len() % 2 == 0 {
            lows.pop().or_else(|| highs.pop())
        } else {
            highs.pop().or_else(|| lows.pop())
        };
        unseen.extend(pick);
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.n_singers)
        .flat_map(|s| (0..cfg.clips_per_singer).map(move |c| (s, c)))
        .collect();
    let clips: Vec<AudioClip> = jobs
        .par_iter()
        .map(|&(s, c)| {
            let key = (s * 100_000 + c) as u64;
            let melody = Melody::random(cfg.clip_secs, &mut stream(seed, "melody", key));
            render_clip(&profiles[s], &melody, cfg.sample_rate, &mut stream(seed, "noise", key))
        })
        .collect();
    let entries = jobs
        .iter()
        .map(|&(s, c)| {
            let split = if unseen.contains(&s) {
                Split::TestUnseen
            } else if c >= cfg.clips_per_singer - cfg.test_clips_per_singer {
                Split::TestSeen
            } else {
                Split::Train
            };
            ManifestEntry {
                path: format!("wav/{}_{c:03}.wav", singer_id(s)),
                singer_id: singer_id(s),
                split,
            }
        })
        .collect();
    let manifest = DatasetManifest::new(entries, PathBuf::new());
    manifest.validate()?;
    Ok(SynthDataset {
        manifest,
        clips,
        profiles,
    })
}

fn shuffle(v: &mut [usize], rng: &mut SvcRng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

impl SynthDataset {
    /// Writes WAVs, `manifest.json` and `singers.json` under `dir`; returns
    /// the manifest path.
    pub fn write(&mut self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("wav"))?;
        for (e, clip) in self.manifest.entries.iter().zip(&self.clips) {
            write_wav(dir.join(&e.path), clip)?;
        }
        let path = dir.join("manifest.json");
        self.manifest.root = dir.to_path_buf();
        self.manifest.save(&path)?;
        std::fs::write(
            dir.join("singers.json"),
            serde_json::to_string_pretty(&self.profiles)? + "\n",
        )?;
        Ok(path)
    }
}
