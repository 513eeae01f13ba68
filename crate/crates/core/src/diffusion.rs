//! Conditional latent denoiser, its training objective with joint condition
//! dropping, and the guided DDPM sampler.

use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::conditioning::{
    init_scln, scln_var, speaker_embed, speaker_var, ConditionSet, ContentFeatures, SpeakerEmbedding,
};
use crate::audio::LabeledClip;
use crate::config::{Config, GuidanceConfig, ModelConfig};
use crate::error::{Result, SvcError};
use crate::nn::{average_grads, conv, cosine_lr, linear, Adam, Graph, ParamStore, Tensor, Var};
use crate::pitch::F0_BINS;
use crate::rng::{stream, SvcRng};
use crate::schedule::{linear_schedule, q_sample, NoiseSchedule};
use crate::vae::{posterior_encode, VaeModel};

const NULL_E: &str = "den.null_e";

// ---------------------------------------------------------------- denoiser

pub fn init_denoiser<R: Rng + ?Sized>(p: &mut ParamStore, m: &ModelConfig, rng: &mut R) {
    let c = m.denoiser_channels;
    let s = m.step_embed_dim;
    p.init_conv("den.in", c, m.d_z, 1, rng);
    p.init_linear("den.t1", 4 * s, s, rng);
    p.init_linear("den.t2", c, 4 * s, rng);
    init_scln(p, "den.scln", m.d_content, m.d_spk);
    p.init_conv("den.cx", c, m.d_content, 1, rng);
    p.insert("den.melody", Tensor::randn(&[F0_BINS + 1, m.d_f0], 0.1, rng));
    p.init_conv("den.cf", c, m.d_f0, 1, rng);
    p.init_linear("den.ce", c, m.d_spk, rng);
    let mut null = Tensor::randn(&[m.d_spk, 1], 1.0, rng);
    let n = null.norm();
    null.scale_assign(1.0 / n);
    p.insert(NULL_E, null);
    for i in 0..m.denoiser_blocks {
        p.init_conv(&format!("den.b{i}.dil"), 2 * c, c, 3, rng);
        p.init_conv(&format!("den.b{i}.cond"), 2 * c, c, 1, rng);
        p.init_conv(&format!("den.b{i}.out"), 2 * c, c, 1, rng);
    }
    p.init_conv("den.o1", c, c, 1, rng);
    p.init_conv("den.o2", m.d_z, c, 1, rng);
    p.zero_init("den.o2");
}

/// Sinusoidal embedding of the step index, `[dim, 1]`.
pub fn step_embedding(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut v = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / (half.max(2) - 1) as f64).exp();
        let a = t as f64 * freq;
        v[i] = a.sin();
        v[half + i] = a.cos();
    }
    Tensor::column(v)
}

/// `ε_θ(z_t, t, x, f0, e)` as a graph node. A dropped condition set feeds
/// the learned null speaker and the null melody row.
pub fn denoiser_forward(
    g: &mut Graph,
    p: &ParamStore,
    m: &ModelConfig,
    z_t: Var,
    t: usize,
    cond: &ConditionSet,
) -> Var {
    let c = m.denoiser_channels;
    let mut h = conv(g, p, "den.in", z_t, 1);
    let te = g.constant(step_embedding(t, m.step_embed_dim));
    let te = linear(g, p, "den.t1", te);
    let gate = g.sigmoid(te);
    let te = g.mul(te, gate);
    let te = linear(g, p, "den.t2", te);
    h = g.add_col(h, te);

    let e = speaker_var(g, p, NULL_E, cond.e());
    let x = g.constant(cond.x().values.clone());
    let xn = scln_var(g, p, "den.scln", x, e);
    let cx = conv(g, p, "den.cx", xn, 1);
    let table = g.param(p, "den.melody");
    let mel = g.embedding(table, &cond.f0_bins().idx);
    let cf = conv(g, p, "den.cf", mel, 1);
    let mut stream_ = g.add(cx, cf);
    let ce = linear(g, p, "den.ce", e);
    stream_ = g.add_col(stream_, ce);

    let mut skip: Option<Var> = None;
    for i in 0..m.denoiser_blocks {
        let a = conv(g, p, &format!("den.b{i}.dil"), h, 1 << (i % 4));
        let b = conv(g, p, &format!("den.b{i}.cond"), stream_, 1);
        let a = g.add(a, b);
        let (ta, sa) = (g.rows(a, 0, c), g.rows(a, c, c));
        let (ta, sa) = (g.tanh(ta), g.sigmoid(sa));
        let z = g.mul(ta, sa);
        let o = conv(g, p, &format!("den.b{i}.out"), z, 1);
        let res = g.rows(o, 0, c);
        let sk = g.rows(o, c, c);
        let sum = g.add(h, res);
        h = g.scale(sum, std::f64::consts::FRAC_1_SQRT_2);
        skip = Some(match skip {
            Some(s) => g.add(s, sk),
            None => sk,
        });
    }
    let s = skip.unwrap_or(h);
    let s = g.scale(s, 1.0 / (m.denoiser_blocks.max(1) as f64).sqrt());
    let o = conv(g, p, "den.o1", s, 1);
    let o = g.relu(o);
    conv(g, p, "den.o2", o, 1)
}

fn check_denoiser_inputs(z_t: &Tensor, cond: &ConditionSet, p: &ParamStore, m: &ModelConfig) -> Result<()> {
    let w = p
        .get("den.in.w")
        .ok_or_else(|| SvcError::Incompatible("no denoiser weights".into()))?;
    if w.dim(1) != m.d_z || z_t.rows() != m.d_z {
        return Err(SvcError::Shape(format!(
            "latent has {} channels, denoiser expects {}",
            z_t.rows(),
            w.dim(1)
        )));
    }
    if z_t.cols() != cond.frames() {
        return Err(SvcError::Shape(format!(
            "latent has {} frames, conditions have {}",
            z_t.cols(),
            cond.frames()
        )));
    }
    if cond.x().dim() != m.d_content || cond.e().dim() != m.d_spk {
        return Err(SvcError::Shape("condition widths differ from the denoiser".into()));
    }
    Ok(())
}

/// Predicted noise for `z_t` at step `t`, same shape as `z_t`.
pub fn denoise_eps(
    z_t: &Tensor,
    t: usize,
    cond: &ConditionSet,
    p: &ParamStore,
    m: &ModelConfig,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    sched.check_t(t)?;
    check_denoiser_inputs(z_t, cond, p, m)?;
    let mut g = Graph::new();
    let z = g.constant(z_t.clone());
    let y = denoiser_forward(&mut g, p, m, z, t, cond);
    Ok(g.value(y).clone())
}

// ---------------------------------------------------------------- objective

/// The random choices behind one training example.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDraw {
    pub t: usize,
    pub eps: Tensor,
    pub drop: bool,
}

/// Draws `t ~ U{1..T}`, the condition drop, then `ε ~ N(0, I)`.
pub fn draw_step(rng: &mut SvcRng, shape: &[usize], steps: usize, p_uncond: f64) -> StepDraw {
    let t = rng.random_range(1..=steps);
    let drop = rng.random::<f64>() < p_uncond;
    let eps = Tensor::randn(shape, 1.0, rng);
    StepDraw { t, eps, drop }
}

/// Mean squared noise-prediction error as a graph node.
pub fn ldm_loss_graph(
    g: &mut Graph,
    p: &ParamStore,
    m: &ModelConfig,
    sched: &NoiseSchedule,
    z0: &Tensor,
    cond: &ConditionSet,
    draw: &StepDraw,
) -> Result<Var> {
    let z_t = q_sample(z0, draw.t, &draw.eps, sched)?;
    let dropped;
    let cond = if draw.drop {
        dropped = cond.nulled();
        &dropped
    } else {
        cond
    };
    check_denoiser_inputs(&z_t, cond, p, m)?;
    let zv = g.constant(z_t);
    let pred = denoiser_forward(g, p, m, zv, draw.t, cond);
    let target = g.constant(draw.eps.clone());
    let d = g.sub(pred, target);
    let d = g.square(d);
    Ok(g.mean_all(d))
}

/// Loss for one example with `t`, `ε` and the drop drawn from `rng`.
pub fn ldm_loss(
    z0: &Tensor,
    cond: &ConditionSet,
    sched: &NoiseSchedule,
    p: &ParamStore,
    m: &ModelConfig,
    p_uncond: f64,
    rng: &mut SvcRng,
) -> Result<f64> {
    ldm_loss_with(z0, cond, sched, p_uncond, rng, |z, t, c| denoise_eps(z, t, c, p, m, sched))
}

/// As [`ldm_loss`] with an arbitrary noise predictor.
pub fn ldm_loss_with(
    z0: &Tensor,
    cond: &ConditionSet,
    sched: &NoiseSchedule,
    p_uncond: f64,
    rng: &mut SvcRng,
    eps_fn: impl Fn(&Tensor, usize, &ConditionSet) -> Result<Tensor>,
) -> Result<f64> {
    let draw = draw_step(rng, z0.shape(), sched.steps(), p_uncond);
    let z_t = q_sample(z0, draw.t, &draw.eps, sched)?;
    let c = if draw.drop { cond.nulled() } else { cond.clone() };
    let pred = eps_fn(&z_t, draw.t, &c)?;
    if pred.shape() != z0.shape() {
        return Err(SvcError::Shape("noise prediction has the wrong shape".into()));
    }
    Ok(pred.zip_map(&draw.eps, |a, b| (a - b) * (a - b)).mean())
}

// ---------------------------------------------------------------- sampling

/// `(1 + w)·ε_c − w·ε_u`.
pub fn cfg_eps(eps_cond: &Tensor, eps_uncond: &Tensor, w: f64) -> Result<Tensor> {
    if eps_cond.shape() != eps_uncond.shape() {
        return Err(SvcError::Shape("guidance inputs differ in shape".into()));
    }
    Ok(eps_cond.zip_map(eps_uncond, |c, u| (1.0 + w) * c - w * u))
}

/// One reverse step `z_t → z_{t−1}`. Fresh noise is drawn only for `t > 1`.
pub fn ddpm_step(
    z_t: &Tensor,
    t: usize,
    eps_t: &Tensor,
    sched: &NoiseSchedule,
    rng: &mut SvcRng,
) -> Result<Tensor> {
    sched.check_t(t)?;
    if z_t.shape() != eps_t.shape() {
        return Err(SvcError::Shape("noise prediction differs from latent shape".into()));
    }
    let a = sched.alpha(t);
    let coef = (1.0 - a) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / a.sqrt();
    let mean = z_t.zip_map(eps_t, |z, e| inv * (z - coef * e));
    if t == 1 {
        return Ok(mean);
    }
    let noise = Tensor::randn(z_t.shape(), 1.0, rng);
    let s = sched.sigma(t);
    Ok(mean.zip_map(&noise, |m, n| m + s * n))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerOptions {
    /// At `w = 0` the unconditional branch has no effect; skip it.
    pub skip_uncond_at_zero: bool,
    /// Keep every intermediate `z_{t−1}`.
    pub trace: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            skip_uncond_at_zero: true,
            trace: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    pub z0: Tensor,
    pub denoiser_calls: usize,
    /// `z_{T−1}, …, z_0` when tracing.
    pub trajectory: Vec<Tensor>,
}

/// Guided reverse process from `z_T ~ N(0, I)` drawn from `rng`.
pub fn sample_with(
    cond: &ConditionSet,
    d_z: usize,
    w: f64,
    sched: &NoiseSchedule,
    rng: &mut SvcRng,
    opts: SamplerOptions,
    eps_fn: impl Fn(&Tensor, usize, &ConditionSet) -> Result<Tensor> + Sync,
) -> Result<SampleOutput> {
    if !(w.is_finite() && w >= 0.0) {
        return Err(SvcError::InvalidArgument(format!("guidance weight {w} must be ≥ 0")));
    }
    let uncond = cond.nulled();
    let mut z = Tensor::randn(&[d_z, cond.frames()], 1.0, rng);
    let mut calls = 0;
    let mut trajectory = Vec::new();
    for t in (1..=sched.steps()).rev() {
        let eps = if w == 0.0 && opts.skip_uncond_at_zero {
            calls += 1;
            eps_fn(&z, t, cond)?
        } else {
            calls += 2;
            let (c, u) = rayon::join(|| eps_fn(&z, t, cond), || eps_fn(&z, t, &uncond));
            cfg_eps(&c?, &u?, w)?
        };
        z = ddpm_step(&z, t, &eps, sched, rng)?;
        if opts.trace {
            trajectory.push(z.clone());
        }
    }
    Ok(SampleOutput {
        z0: z,
        denoiser_calls: calls,
        trajectory,
    })
}

/// Reverse process that only ever queries the conditional branch.
pub fn sample_conditional(
    cond: &ConditionSet,
    d_z: usize,
    sched: &NoiseSchedule,
    rng: &mut SvcRng,
    eps_fn: impl Fn(&Tensor, usize, &ConditionSet) -> Result<Tensor>,
) -> Result<SampleOutput> {
    let mut z = Tensor::randn(&[d_z, cond.frames()], 1.0, rng);
    let mut trajectory = Vec::new();
    for t in (1..=sched.steps()).rev() {
        let eps = eps_fn(&z, t, cond)?;
        z = ddpm_step(&z, t, &eps, sched, rng)?;
        trajectory.push(z.clone());
    }
    Ok(SampleOutput {
        z0: z,
        denoiser_calls: sched.steps(),
        trajectory,
    })
}

/// Samples a latent with the trained denoiser.
pub fn sample(
    cond: &ConditionSet,
    w: f64,
    sched: &NoiseSchedule,
    p: &ParamStore,
    m: &ModelConfig,
    rng: &mut SvcRng,
) -> Result<SampleOutput> {
    sample_with(cond, m.d_z, w, sched, rng, SamplerOptions::default(), |z, t, c| {
        denoise_eps(z, t, c, p, m, sched)
    })
}

// ---------------------------------------------------------------- training

/// A training latent (already scaled) and its conditions.
#[derive(Clone, Debug)]
pub struct LdmExample {
    pub z0: Tensor,
    pub cond: ConditionSet,
}

/// Everything one training example consumes, decided before any forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedExample {
    pub clip: usize,
    pub start: usize,
    pub len: usize,
    pub draw: StepDraw,
}

/// Draws step `step`'s batch from `(seed, "ldm-step", step)`. Only clip
/// lengths enter, so drops cannot depend on what a clip contains.
pub fn plan_step(seed: u64, step: usize, frames: &[usize], cfg: &Config) -> Vec<PlannedExample> {
    let mut rng = stream(seed, "ldm-step", step as u64);
    let tc = &cfg.ldm_train;
    (0..tc.batch)
        .map(|_| {
            let clip = rng.random_range(0..frames.len());
            let len = tc.crop_frames.min(frames[clip]);
            let start = rng.random_range(0..=frames[clip] - len);
            let draw = draw_step(&mut rng, &[cfg.model.d_z, len], cfg.schedule.steps, cfg.guidance.p_uncond);
            PlannedExample { clip, start, len, draw }
        })
        .collect()
}

/// SHA-256 over parameter names and values.
pub fn params_fingerprint(p: &ParamStore) -> String {
    let mut h = Sha256::new();
    for (n, t) in p.iter() {
        h.update(n.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Encodes the training set with a frozen VAE. Each clip is conditioned on
/// its singer's embedding pooled over all of that singer's clips. Returns
/// the examples and the scale that brings latents to unit std.
pub fn encode_training_set(vae: &VaeModel, clips: &[LabeledClip]) -> Result<(Vec<LdmExample>, f64)> {
    if clips.is_empty() {
        return Err(SvcError::InvalidArgument("training split is empty".into()));
    }
    let fe = &vae.fe;
    let mut singers: Vec<&str> = clips.iter().map(|c| c.singer_id.as_str()).collect();
    singers.sort();
    singers.dedup();
    let embeddings: Vec<SpeakerEmbedding> = singers
        .iter()
        .map(|s| {
            let refs: Vec<_> = clips
                .iter()
                .filter(|c| c.singer_id == *s)
                .map(|c| c.clip.clone())
                .collect();
            speaker_embed(&refs, fe, &vae.params)
        })
        .collect::<Result<_>>()?;
    let raw = clips
        .par_iter()
        .map(|c| {
            let clip = fe.conform(&c.clip);
            let e = &embeddings[singers.binary_search(&c.singer_id.as_str()).expect("listed")];
            let spec = fe.linear(&clip)?;
            let (stats, z) = posterior_encode(&spec, e, &vae.params, &vae.cfg.model, None)?;
            let z0 = if vae.cfg.ldm_train.sampled_z {
                let mut r = stream(vae.cfg.seed, "ldm-z", crate::rng::derive_seed(0, &c.singer_id, clip.len() as u64));
                posterior_encode(&spec, e, &vae.params, &vae.cfg.model, Some(&mut r))?.1.values
            } else {
                debug_assert_eq!(z.values, stats.mu);
                z.values
            };
            let x: ContentFeatures = vae.content(&clip)?;
            let bins = fe.bins(&fe.f0(&clip)?)?;
            Ok(LdmExample {
                z0,
                cond: ConditionSet::new(x, bins, e.clone())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n: usize = raw.iter().map(|x| x.z0.len()).sum();
    let mean = raw.iter().map(|x| x.z0.sum()).sum::<f64>() / n as f64;
    let var = raw
        .iter()
        .flat_map(|x| x.z0.data().iter())
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n as f64;
    if !(var > 0.0 && var.is_finite()) {
        return Err(SvcError::Degenerate("latents have zero variance".into()));
    }
    let scale = 1.0 / var.sqrt();
    let examples = raw
        .into_iter()
        .map(|mut x| {
            x.z0.scale_assign(scale);
            x
        })
        .collect();
    Ok((examples, scale))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LdmStepLog {
    pub step: usize,
    pub loss: f64,
    pub drops: usize,
}

/// Resumable denoiser training over a fixed set of latents.
pub struct LdmTrainer {
    pub cfg: Config,
    pub sched: NoiseSchedule,
    pub params: ParamStore,
    pub data: Vec<LdmExample>,
    pub latent_scale: f64,
    pub vae_fingerprint: Option<String>,
    pub step: usize,
    pub history: Vec<f64>,
    adam: Adam,
}

impl LdmTrainer {
    pub fn new(cfg: &Config, data: Vec<LdmExample>, latent_scale: f64) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(SvcError::InvalidArgument("no training latents".into()));
        }
        let sched = linear_schedule(cfg.schedule.steps, cfg.schedule.beta_1, cfg.schedule.beta_t)?;
        let mut params = ParamStore::new();
        init_denoiser(&mut params, &cfg.model, &mut stream(cfg.seed, "ldm-init", 0));
        for ex in &data {
            check_denoiser_inputs(&ex.z0, &ex.cond, &params, &cfg.model)?;
        }
        Ok(Self {
            cfg: cfg.clone(),
            sched,
            params,
            data,
            latent_scale,
            vae_fingerprint: None,
            step: 0,
            history: Vec::new(),
            adam: Adam::new(cfg.ldm_train.lr, Some(cfg.ldm_train.grad_clip)),
        })
    }

    /// Encodes `clips` with `vae` and prepares a trainer over them.
    pub fn from_vae(cfg: &Config, vae: &VaeModel, clips: &[LabeledClip]) -> Result<Self> {
        let (data, scale) = encode_training_set(vae, clips)?;
        let mut t = Self::new(cfg, data, scale)?;
        t.vae_fingerprint = Some(params_fingerprint(&vae.params));
        Ok(t)
    }

    pub fn resume(mut self, ckpt: &Checkpoint) -> Result<Self> {
        ckpt.ensure_compatible(CheckpointKind::Ldm, &self.cfg)?;
        if ckpt.meta.vae_fingerprint != self.vae_fingerprint {
            return Err(SvcError::Incompatible(
                "checkpoint was trained against a different VAE".into(),
            ));
        }
        let restored = ckpt.params();
        for (n, v) in restored.iter() {
            match self.params.get_mut(n) {
                Some(dst) if dst.shape() == v.shape() => *dst = v.clone(),
                _ => return Err(SvcError::Incompatible(format!("checkpoint tensor '{n}' does not fit"))),
            }
        }
        self.adam.restore(&ckpt.optimizer_state());
        self.step = ckpt.meta.step;
        self.history = ckpt.meta.loss_history.clone();
        Ok(self)
    }

    pub fn done(&self) -> bool {
        self.step >= self.cfg.ldm_train.steps
    }

    pub fn plan(&self, step: usize) -> Vec<PlannedExample> {
        let frames: Vec<usize> = self.data.iter().map(|d| d.cond.frames()).collect();
        plan_step(self.cfg.seed, step, &frames, &self.cfg)
    }

    /// One optimiser step; parameters are untouched on error.
    pub fn step(&mut self) -> Result<LdmStepLog> {
        let tc = &self.cfg.ldm_train;
        self.adam.lr = cosine_lr(tc.lr, tc.lr_floor, self.step, tc.steps);
        let plan = self.plan(self.step);
        let (p, m, sched, data) = (&self.params, &self.cfg.model, &self.sched, &self.data);
        let per: Vec<(Vec<(String, Tensor)>, f64)> = plan
            .par_iter()
            .map(|pe| {
                let ex = &data[pe.clip];
                let z0 = ex.z0.slice_cols(pe.start, pe.len);
                let cond = ex.cond.crop(pe.start, pe.len);
                let mut g = Graph::new();
                let l = ldm_loss_graph(&mut g, p, m, sched, &z0, &cond, &pe.draw)?;
                let v = g.value(l).data()[0];
                Ok((g.param_grads(&g.backward(l)), v))
            })
            .collect::<Result<_>>()?;
        let loss = per.iter().map(|x| x.1).sum::<f64>() / per.len() as f64;
        if !loss.is_finite() {
            return Err(SvcError::Diverged {
                step: self.step,
                detail: format!("loss is {loss}"),
            });
        }
        let backup = self.params.clone();
        let grads = average_grads(per.into_iter().map(|x| x.0).collect());
        self.adam.update(&mut self.params, &grads);
        if !self.params.is_finite() {
            self.params = backup;
            return Err(SvcError::Diverged {
                step: self.step,
                detail: "parameters became non-finite".into(),
            });
        }
        let log = LdmStepLog {
            step: self.step,
            loss,
            drops: plan.iter().filter(|p| p.draw.drop).count(),
        };
        self.history.push(loss);
        self.step += 1;
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(CheckpointKind::Ldm, &self.cfg);
        c.put_params(&self.params);
        for (n, t) in self.adam.state_tensors() {
            c.tensors.insert(n, t);
        }
        c.meta.step = self.step;
        c.meta.loss_history = self.history.clone();
        c.meta.latent_scale = Some(self.latent_scale);
        c.meta.guidance = Some(self.cfg.guidance);
        c.meta.vae_fingerprint = self.vae_fingerprint.clone();
        c
    }
}

/// Trains the denoiser against a frozen VAE to completion.
pub fn train_ldm(cfg: &Config, vae: &VaeModel, clips: &[LabeledClip]) -> Result<Checkpoint> {
    let mut t = LdmTrainer::from_vae(cfg, vae, clips)?;
    while !t.done() {
        t.step()?;
    }
    Ok(t.checkpoint())
}

/// Trained denoiser with the metadata needed for sampling.
#[derive(Clone, Debug)]
pub struct LdmModel {
    pub cfg: Config,
    pub sched: NoiseSchedule,
    pub params: ParamStore,
    pub latent_scale: f64,
    pub guidance: GuidanceConfig,
}

impl LdmModel {
    /// Loads an LDM checkpoint and checks it belongs to `vae`.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &Config, vae: &VaeModel) -> Result<Self> {
        ckpt.ensure_compatible(CheckpointKind::Ldm, cfg)?;
        if ckpt.meta.vae_fingerprint.as_deref() != Some(params_fingerprint(&vae.params).as_str()) {
            return Err(SvcError::Incompatible(
                "LDM checkpoint was trained against a different VAE".into(),
            ));
        }
        let latent_scale = ckpt
            .meta
            .latent_scale
            .ok_or_else(|| SvcError::Incompatible("LDM checkpoint lacks a latent scale".into()))?;
        Ok(Self {
            cfg: cfg.clone(),
            sched: linear_schedule(cfg.schedule.steps, cfg.schedule.beta_1, cfg.schedule.beta_t)?,
            params: ckpt.params(),
            latent_scale,
            guidance: ckpt.meta.guidance.unwrap_or(cfg.guidance),
        })
    }

    /// Samples and unscales a latent.
    pub fn sample(&self, cond: &ConditionSet, w: f64, rng: &mut SvcRng) -> Result<SampleOutput> {
        let mut out = sample(cond, w, &self.sched, &self.params, &self.cfg.model, rng)?;
        out.z0.scale_assign(1.0 / self.latent_scale);
        Ok(out)
    }
}
