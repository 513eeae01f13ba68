#![allow(dead_code)]

use std::sync::OnceLock;

use lsvc_core::audio::{synth_dataset, Split, SynthDataset};
use lsvc_core::diffusion::LdmTrainer;
use lsvc_core::vae::VaeTrainer;
use lsvc_core::{Checkpoint, Config, Converter};

/// Smoke-sized model with a handful of optimiser steps and a short schedule.
pub fn tiny_config() -> Config {
    let mut c = Config::smoke();
    c.data.n_singers = 5;
    c.data.clips_per_singer = 3;
    c.data.n_unseen = 2;
    c.data.test_clips_per_singer = 1;
    c.data.clip_secs = 1.0;
    c.schedule.steps = 20;
    c.vae_train.speaker_steps = 4;
    c.vae_train.steps = 6;
    c.vae_train.batch = 2;
    c.vae_train.crop_frames = 16;
    c.ldm_train.steps = 6;
    c.ldm_train.batch = 2;
    c.ldm_train.crop_frames = 16;
    c
}

pub struct System {
    pub cfg: Config,
    pub data: SynthDataset,
    pub vae: Checkpoint,
    pub ldm: Checkpoint,
}

impl System {
    pub fn converter(&self) -> Converter {
        Converter::new(&self.cfg, &self.vae, &self.ldm).unwrap()
    }
}

fn train(cfg: &Config) -> System {
    let data = synth_dataset(&cfg.synth(), cfg.seed).unwrap();
    let train = data.labeled(Split::Train);
    let mut vt = VaeTrainer::new(cfg, &train).unwrap();
    while !vt.done() {
        vt.step().unwrap();
    }
    let vae = vt.checkpoint();
    let model = lsvc_core::vae::VaeModel::from_checkpoint(&vae, cfg).unwrap();
    let mut lt = LdmTrainer::from_vae(cfg, &model, &train).unwrap();
    while !lt.done() {
        lt.step().unwrap();
    }
    System {
        cfg: cfg.clone(),
        data,
        vae,
        ldm: lt.checkpoint(),
    }
}

/// A briefly trained system, built once per test binary.
pub fn system() -> &'static System {
    static SYSTEM: OnceLock<System> = OnceLock::new();
    SYSTEM.get_or_init(|| train(&tiny_config()))
}
