//! Latent autoencoder: a WaveNet-style posterior encoder over linear
//! spectrograms and a neural source-filter decoder back to waveform, plus
//! the pretraining loop (speaker encoder first, then encoder, decoder and
//! content encoder jointly).

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::audio::{AudioClip, LabeledClip, LinearSpectrogram, MelSpectrogram};
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::conditioning::{
    am_softmax_loss, content_features, content_forward, embed_mels, fit_speaker_norm,
    init_content_encoder, init_speaker_encoder, normalize_mel, speaker_forward, speaker_stats,
    ContentFeatures, SpeakerEmbedding,
};
use crate::config::{Config, ModelConfig};
use crate::error::{Result, SvcError};
use crate::frontend::FrontEnd;
use crate::nn::{average_grads, conv, cosine_lr, conv_transpose, linear, Adam, Graph, ParamStore, Tensor, Var};
use crate::pitch::{F0Contour, F0_BINS};
use crate::rng::{stream, SvcRng};

pub const LOGVAR_CLAMP: f64 = 10.0;
const SPEC_FLOOR: f64 = 1e-5;

/// Posterior mean and clamped log-variance, each `[d_z, frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorStats {
    pub mu: Tensor,
    pub logvar: Tensor,
}

/// Latent sequence `[d_z, frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    pub values: Tensor,
}

impl Latent {
    pub fn frames(&self) -> usize {
        self.values.cols()
    }
}

/// `KL(N(mu, e^logvar) ‖ N(0, 1))` averaged per element.
pub fn kl_divergence(mu: &Tensor, logvar: &Tensor) -> f64 {
    let n = mu.len().max(1) as f64;
    mu.data()
        .iter()
        .zip(logvar.data())
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum::<f64>()
        / n
}

/// Log-compressed magnitude used as the encoder input.
pub fn encoder_input(spec: &LinearSpectrogram) -> Tensor {
    spec.values.map(|v| (v + SPEC_FLOOR).ln())
}

// ---------------------------------------------------------------- encoder

fn dilation(i: usize) -> usize {
    1 << (i % 4)
}

pub fn init_encoder<R: Rng + ?Sized>(p: &mut ParamStore, n_bins: usize, m: &ModelConfig, rng: &mut R) {
    let c = m.encoder_channels;
    p.init_conv("enc.pre", c, n_bins, 1, rng);
    for i in 0..m.encoder_blocks {
        p.init_conv(&format!("enc.b{i}.dil"), 2 * c, c, 3, rng);
        p.init_linear(&format!("enc.b{i}.cond"), 2 * c, m.d_spk, rng);
        p.init_conv(&format!("enc.b{i}.out"), 2 * c, c, 1, rng);
    }
    p.init_conv("enc.post", 2 * m.d_z, c, 1, rng);
}

/// Returns `(mu, logvar)` nodes for an encoder input `[bins, T]`.
pub fn encoder_forward(g: &mut Graph, p: &ParamStore, m: &ModelConfig, y: Var, e: Var) -> (Var, Var) {
    let c = m.encoder_channels;
    let mut h = conv(g, p, "enc.pre", y, 1);
    let mut skip: Option<Var> = None;
    for i in 0..m.encoder_blocks {
        let a = conv(g, p, &format!("enc.b{i}.dil"), h, dilation(i));
        let cond = linear(g, p, &format!("enc.b{i}.cond"), e);
        let a = g.add_col(a, cond);
        let (ta, sa) = (g.rows(a, 0, c), g.rows(a, c, c));
        let (t, s) = (g.tanh(ta), g.sigmoid(sa));
        let z = g.mul(t, s);
        let o = conv(g, p, &format!("enc.b{i}.out"), z, 1);
        let res = g.rows(o, 0, c);
        let sk = g.rows(o, c, c);
        h = g.add(h, res);
        skip = Some(match skip {
            Some(s) => g.add(s, sk),
            None => sk,
        });
    }
    let s = skip.unwrap_or(h);
    let s = g.scale(s, 1.0 / (m.encoder_blocks.max(1) as f64).sqrt());
    let out = conv(g, p, "enc.post", s, 1);
    let mu = g.rows(out, 0, m.d_z);
    let lv = g.rows(out, m.d_z, m.d_z);
    let lv = g.clamp(lv, -LOGVAR_CLAMP, LOGVAR_CLAMP);
    (mu, lv)
}

/// Encodes a spectrogram. With `rng` the latent is a reparameterised draw
/// `mu + exp(logvar/2)·ε`; without it the latent is `mu`.
pub fn posterior_encode(
    spec: &LinearSpectrogram,
    e: &SpeakerEmbedding,
    p: &ParamStore,
    m: &ModelConfig,
    rng: Option<&mut SvcRng>,
) -> Result<(PosteriorStats, Latent)> {
    let want = p
        .get("enc.pre.w")
        .ok_or_else(|| SvcError::Incompatible("no encoder weights".into()))?
        .dim(1);
    if spec.values.rows() != want || e.dim() != m.d_spk || e.is_null {
        return Err(SvcError::Shape(format!(
            "encoder expects {want} bins and a {}-d speaker, got {} bins and {}-d",
            m.d_spk,
            spec.values.rows(),
            e.dim()
        )));
    }
    let mut g = Graph::new();
    let y = g.constant(encoder_input(spec));
    let ev = g.constant(e.column());
    let (mu, lv) = encoder_forward(&mut g, p, m, y, ev);
    let stats = PosteriorStats {
        mu: g.value(mu).clone(),
        logvar: g.value(lv).clone(),
    };
    let z = match rng {
        Some(r) => {
            let eps = Tensor::randn(stats.mu.shape(), 1.0, r);
            let sd = stats.logvar.map(|v| (0.5 * v).exp());
            let noise = sd.zip_map(&eps, |s, n| s * n);
            stats.mu.zip_map(&noise, |a, b| a + b)
        }
        None => stats.mu.clone(),
    };
    Ok((stats, Latent { values: z }))
}

// ---------------------------------------------------------------- source

/// NSF excitation at the audio rate: harmonic, noise and voicing kept apart.
#[derive(Clone, Debug, PartialEq)]
pub struct Excitation {
    pub harmonic: Vec<f64>,
    pub noise: Vec<f64>,
    /// 1 on voiced samples, 0 elsewhere.
    pub voiced: Vec<f64>,
}

impl Excitation {
    pub fn total(&self) -> Vec<f64> {
        self.harmonic.iter().zip(&self.noise).map(|(a, b)| a + b).collect()
    }

    pub fn len(&self) -> usize {
        self.harmonic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.harmonic.is_empty()
    }

    /// The three branches folded by `factor` and stacked: `[3·factor, len/factor]`.
    fn folded(&self, factor: usize) -> Tensor {
        let parts = [&self.harmonic, &self.noise, &self.voiced].map(|x| polyphase(x, factor));
        let cols = self.len() / factor;
        let mut out = Tensor::zeros(&[3 * factor, cols]);
        for (k, part) in parts.iter().enumerate() {
            out.data_mut()[k * factor * cols..(k + 1) * factor * cols].copy_from_slice(part.data());
        }
        out
    }
}

/// `harmonics` sines of amplitude `amp` on voiced samples, with F0
/// interpolated between adjacent voiced frames, plus Gaussian noise of
/// std `amp/3` everywhere.
pub fn excitation(
    f0_hz: &[f64],
    hop: usize,
    sample_rate: u32,
    harmonics: usize,
    amp: f64,
    rng: &mut SvcRng,
) -> Excitation {
    let sr = sample_rate as f64;
    let n = f0_hz.len() * hop;
    let mut harmonic = vec![0.0; n];
    let mut noise = vec![0.0; n];
    let mut voiced = vec![0.0; n];
    let mut phase = 0.0f64;
    for i in 0..n {
        let j = i / hop;
        noise[i] = amp / 3.0 * rng.sample::<f64, _>(StandardNormal);
        let f = match (f0_hz[j], f0_hz.get(j + 1)) {
            (a, Some(&b)) if a > 0.0 && b > 0.0 => a + (b - a) * (i % hop) as f64 / hop as f64,
            (a, _) => a,
        };
        if f > 0.0 {
            phase = (phase + 2.0 * std::f64::consts::PI * f / sr) % (2.0 * std::f64::consts::PI);
            let mut acc = 0.0;
            for k in 1..=harmonics {
                if k as f64 * f < sr / 2.0 {
                    acc += (k as f64 * phase).sin();
                }
            }
            harmonic[i] = amp * acc;
            voiced[i] = 1.0;
        }
    }
    Excitation {
        harmonic,
        noise,
        voiced,
    }
}

/// Folds a signal into `[factor, len/factor]` so sample `j·factor + i`
/// lands in row `i`, column `j`.
fn polyphase(x: &[f64], factor: usize) -> Tensor {
    let cols = x.len() / factor;
    let mut t = Tensor::zeros(&[factor, cols]);
    for j in 0..cols {
        for i in 0..factor {
            t.data_mut()[i * cols + j] = x[j * factor + i];
        }
    }
    t
}

// ---------------------------------------------------------------- decoder

fn resblocks_per_stage(m: &ModelConfig) -> Vec<usize> {
    let s = m.decoder_upsample.len();
    let base = m.decoder_resblocks / s;
    (0..s)
        .map(|i| base + usize::from(i + 1 == s) * (m.decoder_resblocks - base * s))
        .collect()
}

pub fn init_decoder<R: Rng + ?Sized>(p: &mut ParamStore, m: &ModelConfig, rng: &mut R) {
    let c0 = m.decoder_channels[0];
    p.init_conv("dec.pre", c0, m.d_z, 7, rng);
    p.init_linear("dec.spk", c0, m.d_spk, rng);
    let mut prev = c0;
    let mut remaining: usize = m.decoder_upsample.iter().product();
    let res = resblocks_per_stage(m);
    for (s, (&u, &c)) in m.decoder_upsample.iter().zip(&m.decoder_channels).enumerate() {
        remaining /= u;
        p.init_conv_transpose(&format!("dec.up{s}"), prev, c, 2 * u, rng);
        p.init_conv(&format!("dec.src{s}"), c, 3 * remaining, 1, rng);
        for r in 0..res[s] {
            p.init_conv(&format!("dec.res{s}_{r}.a"), c, c, 3, rng);
            p.init_conv(&format!("dec.res{s}_{r}.b"), c, c, 3, rng);
        }
        prev = c;
    }
    p.init_conv("dec.post", 1, prev, 7, rng);
}

/// Latent `[d_z, F]` plus excitation (length `F·hop`) → waveform `[1, F·hop]`.
pub fn decoder_forward(
    g: &mut Graph,
    p: &ParamStore,
    m: &ModelConfig,
    z: Var,
    e: Var,
    excitation: &Excitation,
) -> Var {
    let mut h = conv(g, p, "dec.pre", z, 1);
    let spk = linear(g, p, "dec.spk", e);
    h = g.add_col(h, spk);
    let mut remaining: usize = m.decoder_upsample.iter().product();
    let res = resblocks_per_stage(m);
    for (s, &u) in m.decoder_upsample.iter().enumerate() {
        remaining /= u;
        h = g.leaky_relu(h, 0.1);
        h = conv_transpose(g, p, &format!("dec.up{s}"), h, u);
        let src = g.constant(excitation.folded(remaining));
        let src = conv(g, p, &format!("dec.src{s}"), src, 1);
        h = g.add(h, src);
        for r in 0..res[s] {
            let t = g.leaky_relu(h, 0.1);
            let t = conv(g, p, &format!("dec.res{s}_{r}.a"), t, [1, 3, 9][r % 3]);
            let t = g.leaky_relu(t, 0.1);
            let t = conv(g, p, &format!("dec.res{s}_{r}.b"), t, 1);
            h = g.add(h, t);
        }
    }
    let h = g.leaky_relu(h, 0.1);
    let out = conv(g, p, "dec.post", h, 1);
    g.tanh(out)
}

/// Waveform of exactly `frames · hop` samples.
pub fn decode(
    z: &Latent,
    f0: &F0Contour,
    e: &SpeakerEmbedding,
    p: &ParamStore,
    cfg: &Config,
    rng: &mut SvcRng,
) -> Result<AudioClip> {
    let m = &cfg.model;
    if f0.len() != z.frames() {
        return Err(SvcError::Shape(format!(
            "F0 has {} frames, latent has {}",
            f0.len(),
            z.frames()
        )));
    }
    if z.values.rows() != m.d_z || e.dim() != m.d_spk {
        return Err(SvcError::Shape("latent or speaker width differs from config".into()));
    }
    let hop = cfg.audio.hop;
    let exc = excitation(&f0.hz, hop, cfg.audio.sample_rate, m.harmonics, m.source_amplitude, rng);
    let mut g = Graph::new();
    let zv = g.constant(z.values.clone());
    let ev = g.constant(e.column());
    let y = decoder_forward(&mut g, p, m, zv, ev, &exc);
    AudioClip::new(g.value(y).data().to_vec(), cfg.audio.sample_rate)
}

// ---------------------------------------------------------------- auxiliary content head

pub fn init_aux_head<R: Rng + ?Sized>(p: &mut ParamStore, m: &ModelConfig, mel_bins: usize, rng: &mut R) {
    let c = m.content_channels;
    p.init_conv("aux.in", c, m.d_content, 1, rng);
    p.insert("aux.melody", Tensor::randn(&[F0_BINS + 1, m.d_f0], 0.1, rng));
    p.init_conv("aux.f0", c, m.d_f0, 1, rng);
    p.init_linear("aux.spk", c, m.d_spk, rng);
    p.init_conv("aux.h", c, c, 3, rng);
    p.init_conv("aux.out", mel_bins, c, 1, rng);
}

/// Predicts the log-mel from content, melody and speaker. Training through
/// this head is what teaches the content encoder.
fn aux_forward(g: &mut Graph, p: &ParamStore, content: Var, bins: &[usize], e: Var) -> Var {
    let h = conv(g, p, "aux.in", content, 1);
    let table = g.param(p, "aux.melody");
    let mel = g.embedding(table, bins);
    let f = conv(g, p, "aux.f0", mel, 1);
    let h = g.add(h, f);
    let s = linear(g, p, "aux.spk", e);
    let h = g.add_col(h, s);
    let h = g.leaky_relu(h, 0.1);
    let h = conv(g, p, "aux.h", h, 1);
    let h = g.leaky_relu(h, 0.1);
    conv(g, p, "aux.out", h, 1)
}

// ---------------------------------------------------------------- loss

/// One training crop, all channel-first.
#[derive(Clone, Debug)]
pub struct VaeExample {
    /// Log-magnitude encoder input `[bins, L]`.
    pub spec_in: Tensor,
    pub f0_hz: Vec<f64>,
    pub bins: Vec<usize>,
    pub e: SpeakerEmbedding,
    /// Audio segment matching the crop, `L · hop` samples.
    pub audio: Vec<f64>,
    /// Normalised mel `[mel, L]` for the content encoder.
    pub content_in: Tensor,
    /// Log-mel `[mel, L]` targeted by the auxiliary head.
    pub aux_target: Tensor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VaeLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub aux: f64,
}

/// Builds the loss graph. `eps` is the reparameterisation noise and
/// `exc` the decoder excitation; both are supplied so that the loss is a
/// deterministic function of the parameters.
pub fn vae_loss_graph(
    g: &mut Graph,
    p: &ParamStore,
    cfg: &Config,
    fe: &FrontEnd,
    ex: &VaeExample,
    eps: &Tensor,
    exc: &Excitation,
) -> Result<(Var, VaeLoss)> {
    let m = &cfg.model;
    let y = g.constant(ex.spec_in.clone());
    let e = g.constant(ex.e.column());
    let (mu, lv) = encoder_forward(g, p, m, y, e);
    let half = g.scale(lv, 0.5);
    let sd = g.exp(half);
    let noise = g.constant(eps.clone());
    let scaled = g.mul(sd, noise);
    let z = g.add(mu, scaled);
    let wav = decoder_forward(g, p, m, z, e, exc);
    let mel = crate::audio::log_mel_var(g, wav, &fe.stft, &fe.filterbank)?;
    let target = fe.filterbank.apply(&fe.linear(&AudioClip::new(ex.audio.clone(), cfg.audio.sample_rate)?)?);
    let tv = g.constant(target.values);
    let diff = g.sub(mel, tv);
    let ad = g.abs(diff);
    let recon = g.mean_all(ad);

    // KL = ½·mean(mu² + e^lv − 1 − lv)
    let mu2 = g.square(mu);
    let elv = g.exp(lv);
    let a = g.add(mu2, elv);
    let a = g.sub(a, lv);
    let a = g.add_scalar(a, -1.0);
    let kl = g.mean_all(a);
    let kl = g.scale(kl, 0.5);

    let mut total = g.scale(kl, cfg.vae_train.beta_kl);
    total = g.add(recon, total);
    let mut aux_v = 0.0;
    if p.contains("aux.in.w") && cfg.vae_train.aux_weight > 0.0 {
        let ci = g.constant(ex.content_in.clone());
        let content = content_forward(g, p, ci);
        let pred = aux_forward(g, p, content, &ex.bins, e);
        let at = g.constant(ex.aux_target.clone());
        let d = g.sub(pred, at);
        let d = g.abs(d);
        let aux = g.mean_all(d);
        aux_v = g.value(aux).data()[0];
        let w = g.scale(aux, cfg.vae_train.aux_weight);
        total = g.add(total, w);
    }
    let parts = VaeLoss {
        total: g.value(total).data()[0],
        recon: g.value(recon).data()[0],
        kl: g.value(kl).data()[0],
        aux: aux_v,
    };
    if !parts.total.is_finite() {
        return Err(SvcError::Degenerate(format!("non-finite VAE loss {parts:?}")));
    }
    Ok((total, parts))
}

// ---------------------------------------------------------------- data

/// Features computed once per training clip.
#[derive(Clone, Debug)]
pub struct PreparedClip {
    pub clip: AudioClip,
    pub singer: usize,
    pub spec: LinearSpectrogram,
    pub mel: MelSpectrogram,
    pub f0: F0Contour,
    pub bins: Vec<usize>,
}

impl PreparedClip {
    pub fn frames(&self) -> usize {
        self.spec.n_frames()
    }
}

/// Resamples, analyses and labels the training set. Singers are indexed in
/// sorted order.
pub fn prepare(clips: &[LabeledClip], fe: &FrontEnd) -> Result<(Vec<PreparedClip>, Vec<String>)> {
    if clips.is_empty() {
        return Err(SvcError::InvalidArgument("training split is empty".into()));
    }
    let mut singers: Vec<String> = clips.iter().map(|c| c.singer_id.clone()).collect();
    singers.sort();
    singers.dedup();
    let prepared = clips
        .par_iter()
        .map(|c| {
            let clip = fe.conform(&c.clip);
            let spec = fe.linear(&clip)?;
            let mel = fe.filterbank.apply(&spec);
            let f0 = fe.f0(&clip)?;
            let bins = fe.bins(&f0)?.idx;
            Ok(PreparedClip {
                singer: singers.binary_search(&c.singer_id).expect("singer is listed"),
                clip,
                spec,
                mel,
                f0,
                bins,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((prepared, singers))
}

// ---------------------------------------------------------------- training

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub phase: &'static str,
    pub loss: VaeLoss,
}

/// Resumable VAE pretraining state. Step `k` draws all of its randomness
/// from `(seed, "vae-step", k)`, so resuming from a checkpoint reproduces
/// an uninterrupted run exactly.
pub struct VaeTrainer {
    pub cfg: Config,
    pub fe: FrontEnd,
    pub params: ParamStore,
    pub data: Vec<PreparedClip>,
    pub singers: Vec<String>,
    pub step: usize,
    pub history: Vec<f64>,
    adam: Adam,
    embeddings: Vec<SpeakerEmbedding>,
    content_inputs: Vec<Tensor>,
}

impl VaeTrainer {
    pub fn new(cfg: &Config, clips: &[LabeledClip]) -> Result<Self> {
        cfg.validate()?;
        let fe = FrontEnd::new(&cfg.audio)?;
        let (data, singers) = prepare(clips, &fe)?;
        let crop = cfg.vae_train.crop_frames;
        if let Some(short) = data.iter().find(|d| d.frames() < crop) {
            return Err(SvcError::ClipTooShort {
                needed: crop * cfg.audio.hop,
                got: short.clip.len(),
            });
        }
        let m = &cfg.model;
        let mut rng = stream(cfg.seed, "vae-init", 0);
        let mut params = ParamStore::new();
        init_speaker_encoder(&mut params, cfg.audio.mel_bins, m.d_spk, singers.len(), &mut rng);
        let stats: Vec<Tensor> = data.iter().map(|d| speaker_stats(&d.mel)).collect();
        fit_speaker_norm(&mut params, &stats)?;
        init_content_encoder(&mut params, cfg.audio.mel_bins, m.content_channels, m.d_content, &mut rng);
        init_aux_head(&mut params, m, cfg.audio.mel_bins, &mut rng);
        init_encoder(&mut params, cfg.audio.fft_size / 2 + 1, m, &mut rng);
        init_decoder(&mut params, m, &mut rng);
        let content_inputs = data.iter().map(|d| normalize_mel(&d.mel)).collect();
        let mut t = Self {
            cfg: cfg.clone(),
            fe,
            params,
            data,
            singers,
            step: 0,
            history: Vec::new(),
            adam: Adam::new(cfg.vae_train.speaker_lr, Some(cfg.vae_train.grad_clip)),
            embeddings: Vec::new(),
            content_inputs,
        };
        t.enter_phase()?;
        Ok(t)
    }

    /// Restores parameters, optimiser state and progress from `ckpt`.
    pub fn resume(cfg: &Config, clips: &[LabeledClip], ckpt: &Checkpoint) -> Result<Self> {
        ckpt.ensure_compatible(CheckpointKind::Vae, cfg)?;
        let mut t = Self::new(cfg, clips)?;
        let restored = ckpt.params();
        for (n, v) in restored.iter() {
            if !t.params.contains(n) || t.params.get(n).map(Tensor::shape) != Some(v.shape()) {
                return Err(SvcError::Incompatible(format!("checkpoint tensor '{n}' does not fit")));
            }
        }
        for (n, v) in restored.iter() {
            *t.params.get_mut(n).expect("checked above") = v.clone();
        }
        t.step = ckpt.meta.step;
        t.history = ckpt.meta.loss_history.clone();
        t.enter_phase()?;
        t.adam.restore(&ckpt.optimizer_state());
        Ok(t)
    }

    pub fn total_steps(&self) -> usize {
        self.cfg.vae_train.speaker_steps + self.cfg.vae_train.steps
    }

    pub fn done(&self) -> bool {
        self.step >= self.total_steps()
    }

    fn in_speaker_phase(&self) -> bool {
        self.step < self.cfg.vae_train.speaker_steps
    }

    /// Sets freezing and the optimiser for the current phase.
    fn enter_phase(&mut self) -> Result<()> {
        let v = &self.cfg.vae_train;
        let names: Vec<String> = self.params.names().cloned().collect();
        let mut p = ParamStore::new();
        for n in names {
            p.insert(n.clone(), self.params.get(&n).expect("listed").clone());
        }
        if self.in_speaker_phase() {
            for pre in ["content.", "aux.", "enc.", "dec."] {
                p.freeze_prefix(pre);
            }
            p.freeze_prefix("spk.norm_");
            self.adam = Adam::new(v.speaker_lr, Some(v.grad_clip));
        } else {
            p.freeze_prefix("spk.");
            self.adam = Adam::new(v.lr, Some(v.grad_clip));
            self.params = p;
            self.embeddings = self
                .data
                .iter()
                .map(|d| embed_mels(std::slice::from_ref(&d.mel), &self.params))
                .collect::<Result<_>>()?;
            return Ok(());
        }
        self.params = p;
        Ok(())
    }

    fn speaker_step(&mut self) -> Result<StepLog> {
        let v = &self.cfg.vae_train;
        let (margin, scale) = (v.am_margin, v.am_scale);
        let p = &self.params;
        let per: Vec<(Vec<(String, Tensor)>, f64)> = self
            .data
            .par_iter()
            .map(|d| {
                let mut g = Graph::new();
                let e = speaker_forward(&mut g, p, &speaker_stats(&d.mel))?;
                let l = am_softmax_loss(&mut g, p, e, d.singer, margin, scale);
                let lv = g.value(l).data()[0];
                Ok((g.param_grads(&g.backward(l)), lv))
            })
            .collect::<Result<_>>()?;
        let loss = per.iter().map(|x| x.1).sum::<f64>() / per.len() as f64;
        self.check_finite(loss)?;
        let grads = average_grads(per.into_iter().map(|x| x.0).collect());
        self.adam.update(&mut self.params, &grads);
        Ok(StepLog {
            step: self.step,
            phase: "speaker",
            loss: VaeLoss {
                total: loss,
                ..VaeLoss::default()
            },
        })
    }

    fn check_finite(&self, loss: f64) -> Result<()> {
        if loss.is_finite() {
            Ok(())
        } else {
            Err(SvcError::Diverged {
                step: self.step,
                detail: format!("loss is {loss}"),
            })
        }
    }

    /// Crop of clip `i` starting at frame `start`.
    pub fn example(&self, i: usize, start: usize) -> VaeExample {
        let d = &self.data[i];
        let l = self.cfg.vae_train.crop_frames;
        let hop = self.cfg.audio.hop;
        let mut audio = vec![0.0; l * hop];
        for (k, a) in audio.iter_mut().enumerate() {
            *a = d.clip.samples.get(start * hop + k).copied().unwrap_or(0.0);
        }
        VaeExample {
            spec_in: encoder_input(&d.spec).slice_cols(start, l),
            f0_hz: d.f0.hz[start..start + l].to_vec(),
            bins: d.bins[start..start + l].to_vec(),
            e: self.embeddings[i].clone(),
            audio,
            content_in: self.content_inputs[i].slice_cols(start, l),
            aux_target: d.mel.values.slice_cols(start, l),
        }
    }

    fn draw(&self, rng: &mut SvcRng) -> (VaeExample, Tensor, Excitation) {
        let i = rng.random_range(0..self.data.len());
        let l = self.cfg.vae_train.crop_frames;
        let start = rng.random_range(0..=self.data[i].frames() - l);
        let ex = self.example(i, start);
        let eps = Tensor::randn(&[self.cfg.model.d_z, l], 1.0, rng);
        let m = &self.cfg.model;
        let exc = excitation(&ex.f0_hz, self.cfg.audio.hop, self.cfg.audio.sample_rate, m.harmonics, m.source_amplitude, rng);
        (ex, eps, exc)
    }

    fn vae_step(&mut self) -> Result<StepLog> {
        let v = &self.cfg.vae_train;
        self.adam.lr = cosine_lr(v.lr, v.lr_floor, self.step - v.speaker_steps, v.steps);
        let mut rng = stream(self.cfg.seed, "vae-step", self.step as u64);
        let batch: Vec<_> = (0..self.cfg.vae_train.batch).map(|_| self.draw(&mut rng)).collect();
        let (p, cfg, fe) = (&self.params, &self.cfg, &self.fe);
        let per: Vec<(Vec<(String, Tensor)>, VaeLoss)> = batch
            .par_iter()
            .map(|(ex, eps, exc)| {
                let mut g = Graph::new();
                let (l, parts) = vae_loss_graph(&mut g, p, cfg, fe, ex, eps, exc)?;
                Ok((g.param_grads(&g.backward(l)), parts))
            })
            .collect::<Result<_>>()
            .map_err(|e: SvcError| SvcError::Diverged {
                step: self.step,
                detail: e.to_string(),
            })?;
        let n = per.len() as f64;
        let mut loss = VaeLoss::default();
        for (_, l) in &per {
            loss.total += l.total / n;
            loss.recon += l.recon / n;
            loss.kl += l.kl / n;
            loss.aux += l.aux / n;
        }
        self.check_finite(loss.total)?;
        let grads = average_grads(per.into_iter().map(|x| x.0).collect());
        self.adam.update(&mut self.params, &grads);
        if !self.params.is_finite() {
            return Err(SvcError::Diverged {
                step: self.step,
                detail: "parameters became non-finite".into(),
            });
        }
        Ok(StepLog {
            step: self.step,
            phase: "vae",
            loss,
        })
    }

    /// Runs one optimiser step. On error the parameters are unchanged.
    pub fn step(&mut self) -> Result<StepLog> {
        let was_speaker = self.in_speaker_phase();
        let log = if was_speaker {
            let backup = self.params.clone();
            self.speaker_step().inspect_err(|_| self.params = backup)?
        } else {
            let backup = self.params.clone();
            self.vae_step().inspect_err(|_| self.params = backup)?
        };
        self.history.push(log.loss.total);
        self.step += 1;
        if was_speaker && !self.in_speaker_phase() {
            self.enter_phase()?;
        }
        Ok(log)
    }

    /// Mean reconstruction loss over fixed crops, with fixed noise.
    pub fn eval_recon(&self, crops: &[(usize, usize)]) -> Result<f64> {
        if self.in_speaker_phase() {
            return Err(SvcError::InvalidArgument("speaker phase not finished".into()));
        }
        let mut total = 0.0;
        for (k, &(i, s)) in crops.iter().enumerate() {
            let ex = self.example(i, s);
            let mut rng = stream(self.cfg.seed, "vae-eval", k as u64);
            let eps = Tensor::zeros(&[self.cfg.model.d_z, self.cfg.vae_train.crop_frames]);
            let m = &self.cfg.model;
            let exc = excitation(&ex.f0_hz, self.cfg.audio.hop, self.cfg.audio.sample_rate, m.harmonics, m.source_amplitude, &mut rng);
            let mut g = Graph::new();
            let (_, parts) = vae_loss_graph(&mut g, &self.params, &self.cfg, &self.fe, &ex, &eps, &exc)?;
            total += parts.recon;
        }
        Ok(total / crops.len().max(1) as f64)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(CheckpointKind::Vae, &self.cfg);
        c.put_params(&self.params);
        for (n, t) in self.adam.state_tensors() {
            c.tensors.insert(n, t);
        }
        c.meta.step = self.step;
        c.meta.loss_history = self.history.clone();
        c
    }
}

/// Runs pretraining to completion.
pub fn train_vae(cfg: &Config, clips: &[LabeledClip]) -> Result<Checkpoint> {
    let mut t = VaeTrainer::new(cfg, clips)?;
    while !t.done() {
        t.step()?;
    }
    Ok(t.checkpoint())
}

// ---------------------------------------------------------------- inference handle

/// Read-only view of a trained VAE checkpoint.
#[derive(Clone, Debug)]
pub struct VaeModel {
    pub cfg: Config,
    pub fe: FrontEnd,
    pub params: ParamStore,
}

impl VaeModel {
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &Config) -> Result<Self> {
        ckpt.ensure_compatible(CheckpointKind::Vae, cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            fe: FrontEnd::new(&cfg.audio)?,
            params: ckpt.params(),
        })
    }

    pub fn speaker_embed(&self, refs: &[AudioClip]) -> Result<SpeakerEmbedding> {
        crate::conditioning::speaker_embed(refs, &self.fe, &self.params)
    }

    pub fn content(&self, clip: &AudioClip) -> Result<ContentFeatures> {
        content_features(&self.fe.log_mel(&self.fe.conform(clip))?, &self.params)
    }

    pub fn encode(&self, clip: &AudioClip, e: &SpeakerEmbedding) -> Result<PosteriorStats> {
        let spec = self.fe.linear(&self.fe.conform(clip))?;
        Ok(posterior_encode(&spec, e, &self.params, &self.cfg.model, None)?.0)
    }

    pub fn decode(&self, z: &Latent, f0: &F0Contour, e: &SpeakerEmbedding, rng: &mut SvcRng) -> Result<AudioClip> {
        decode(z, f0, e, &self.params, &self.cfg, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::StftConfig;

    #[test]
    fn kl_closed_form() {
        assert_eq!(kl_divergence(&Tensor::scalar(0.0), &Tensor::scalar(0.0)), 0.0);
        assert!((kl_divergence(&Tensor::scalar(1.0), &Tensor::scalar(0.0)) - 0.5).abs() < 1e-15);
        // σ² = e, μ = 0: ½(e − 1 − 1)
        let v = kl_divergence(&Tensor::scalar(0.0), &Tensor::scalar(1.0));
        assert!((v - 0.5 * (1f64.exp() - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn kl_is_nonnegative_with_equality_only_at_origin() {
        let mut rng = stream(1, "kl", 0);
        for _ in 0..2000 {
            let mu: f64 = rng.random_range(-3.0..3.0);
            let lv: f64 = rng.random_range(-10.0..10.0);
            let k = kl_divergence(&Tensor::scalar(mu), &Tensor::scalar(lv));
            assert!(k >= 0.0);
            if mu != 0.0 || lv != 0.0 {
                assert!(k > 0.0);
            }
        }
    }

    #[test]
    fn excitation_branches() {
        let mut rng = stream(0, "x", 0);
        let ex = excitation(&[0.0; 4], 8, 32000, 8, 0.1, &mut rng);
        assert_eq!(ex.harmonic.len(), 32);
        assert!(ex.harmonic.iter().all(|&v| v == 0.0));
        assert!(ex.noise.iter().any(|&v| v != 0.0));
        let ex = excitation(&[220.0; 4], 8, 32000, 8, 0.1, &mut rng);
        assert!(ex.harmonic.iter().any(|&v| v != 0.0));
        assert!(ex.harmonic.iter().all(|&v| v.abs() <= 0.8 + 1e-12));
    }

    #[test]
    fn excitation_drops_harmonics_above_nyquist() {
        // At 10 kHz with fs 32 kHz only the fundamental survives.
        let mut rng = stream(0, "x", 0);
        let ex = excitation(&[10_000.0], 64, 32000, 8, 0.1, &mut rng);
        let mut phase = 0.0f64;
        for v in &ex.harmonic {
            phase = (phase + 2.0 * std::f64::consts::PI * 10_000.0 / 32000.0) % (2.0 * std::f64::consts::PI);
            assert!((v - 0.1 * phase.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn polyphase_layout() {
        let x: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let t = polyphase(&x, 3);
        assert_eq!(t.shape(), &[3, 4]);
        assert_eq!(t.row(1), &[1.0, 4.0, 7.0, 10.0]);
    }

    fn mini() -> Config {
        let mut c = Config::smoke();
        c.model.d_spk = 4;
        c.model.d_z = 2;
        c.model.encoder_channels = 4;
        c.model.encoder_blocks = 2;
        c.model.decoder_channels = vec![4, 3];
        c.model.decoder_upsample = vec![8, 4];
        c.model.decoder_resblocks = 2;
        c.model.d_content = 4;
        c
    }

    #[test]
    fn decode_length_is_frames_times_hop() {
        let cfg = mini();
        let mut p = ParamStore::new();
        init_decoder(&mut p, &cfg.model, &mut stream(0, "d", 0));
        let e = SpeakerEmbedding::from_raw(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        for frames in [1, 5, 13] {
            let z = Latent {
                values: Tensor::zeros(&[2, frames]),
            };
            let f0 = F0Contour::new(vec![150.0; frames], 32).unwrap();
            let mut c = cfg.clone();
            c.audio.hop = 32;
            let a = decode(&z, &f0, &e, &p, &c, &mut stream(0, "n", 0)).unwrap();
            assert_eq!(a.len(), frames * 32);
        }
        let z = Latent {
            values: Tensor::zeros(&[2, 3]),
        };
        let f0 = F0Contour::new(vec![0.0; 4], 32).unwrap();
        assert!(matches!(
            decode(&z, &f0, &e, &p, &cfg, &mut stream(0, "n", 0)),
            Err(SvcError::Shape(_))
        ));
    }

    #[test]
    fn posterior_modes() {
        let cfg = mini();
        let mut p = ParamStore::new();
        init_encoder(&mut p, 17, &cfg.model, &mut stream(0, "e", 0));
        let spec = LinearSpectrogram {
            values: Tensor::randn(&[17, 6], 1.0, &mut stream(1, "s", 0)).map(f64::abs),
            config: StftConfig {
                sample_rate: 32000,
                fft_size: 32,
                hop: 8,
                win: 32,
            },
        };
        let e = SpeakerEmbedding::from_raw(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let (s, z) = posterior_encode(&spec, &e, &p, &cfg.model, None).unwrap();
        assert_eq!(z.values, s.mu);
        assert!(s.logvar.data().iter().all(|v| v.abs() <= LOGVAR_CLAMP));
        let (_, z1) = posterior_encode(&spec, &e, &p, &cfg.model, Some(&mut stream(3, "z", 0))).unwrap();
        let (_, z2) = posterior_encode(&spec, &e, &p, &cfg.model, Some(&mut stream(3, "z", 0))).unwrap();
        assert_eq!(z1, z2);
        assert_ne!(z1.values, s.mu);
    }
}
