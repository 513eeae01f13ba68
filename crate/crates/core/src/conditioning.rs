//! Conditioning signals for the denoiser and decoder: content features,
//! speaker embeddings, speaker-conditioned layer norm, melody embedding and
//! the nulled condition set used for guidance.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, MelSpectrogram};
use crate::error::{Result, SvcError};
use crate::frontend::FrontEnd;
use crate::nn::{conv, linear, Graph, ParamStore, Tensor, Var};
use crate::pitch::{F0Bins, F0_BINS};

/// Variance guard inside every layer norm.
pub const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------- types

/// Frame-aligned content features, stored channel-first `[d, frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentFeatures {
    pub values: Tensor,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixSidecar {
    frames: usize,
    dim: usize,
    /// Row-major `frames × dim`.
    values: Vec<Vec<f64>>,
}

impl ContentFeatures {
    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn dim(&self) -> usize {
        self.values.rows()
    }

    /// Reads `{frames, dim, values: [[..dim..]; frames]}`.
    pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(SvcError::MissingFile(path.to_path_buf()));
        }
        let s: MatrixSidecar = serde_json::from_slice(&std::fs::read(path)?)?;
        if s.values.len() != s.frames || s.values.iter().any(|r| r.len() != s.dim) {
            return Err(SvcError::Shape(format!(
                "content sidecar header says {}×{} but rows disagree",
                s.frames, s.dim
            )));
        }
        let mut t = Tensor::zeros(&[s.dim, s.frames]);
        for (f, row) in s.values.iter().enumerate() {
            for (d, &v) in row.iter().enumerate() {
                t.data_mut()[d * s.frames + f] = v;
            }
        }
        if !t.is_finite() {
            return Err(SvcError::InvalidArgument("content sidecar has non-finite values".into()));
        }
        Ok(Self { values: t })
    }

    pub fn save_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        let t = self.values.transpose();
        let s = MatrixSidecar {
            frames: self.frames(),
            dim: self.dim(),
            values: (0..self.frames()).map(|f| t.row(f).to_vec()).collect(),
        };
        std::fs::write(path, serde_json::to_string(&s)?)?;
        Ok(())
    }
}

/// Unit-norm singer embedding, or the null marker for guidance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    pub values: Vec<f64>,
    pub is_null: bool,
}

impl SpeakerEmbedding {
    /// L2-normalises `values`; a zero vector is rejected.
    pub fn from_raw(values: Vec<f64>) -> Result<Self> {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(SvcError::Degenerate("speaker embedding has zero or non-finite norm".into()));
        }
        Ok(Self {
            values: values.iter().map(|v| v / n).collect(),
            is_null: false,
        })
    }

    pub fn null(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            is_null: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self) -> Tensor {
        Tensor::column(self.values.clone())
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> Result<f64> {
        cosine(&self.values, &other.values)
    }

    pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(SvcError::MissingFile(path.to_path_buf()));
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            dim: usize,
            values: Vec<f64>,
        }
        let r: Raw = serde_json::from_slice(&std::fs::read(path)?)?;
        if r.values.len() != r.dim {
            return Err(SvcError::Shape(format!(
                "speaker sidecar declares dim {} but has {} values",
                r.dim,
                r.values.len()
            )));
        }
        Self::from_raw(r.values)
    }

    pub fn save_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        let v = serde_json::json!({ "dim": self.dim(), "values": self.values });
        std::fs::write(path, serde_json::to_string(&v)?)?;
        Ok(())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SvcError::Shape(format!("embedding dims {} vs {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SvcError::Degenerate("cosine of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Everything the denoiser is conditioned on. When `dropped` is set the
/// speaker is null and every F0 bin is 0; the content stays.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionSet {
    x: ContentFeatures,
    f0_bins: F0Bins,
    e: SpeakerEmbedding,
    dropped: bool,
}

impl ConditionSet {
    pub fn new(x: ContentFeatures, f0_bins: F0Bins, e: SpeakerEmbedding) -> Result<Self> {
        if e.is_null {
            return Err(SvcError::InvalidArgument(
                "use null_conditions for a nulled speaker".into(),
            ));
        }
        if f0_bins.len() != x.frames() {
            return Err(SvcError::Shape(format!(
                "{} F0 bins for {} content frames",
                f0_bins.len(),
                x.frames()
            )));
        }
        if f0_bins.idx.iter().any(|&b| b > F0_BINS) {
            return Err(SvcError::InvalidArgument("F0 bin above 256".into()));
        }
        Ok(Self {
            x,
            f0_bins,
            e,
            dropped: false,
        })
    }

    /// The same content with speaker and melody nulled.
    pub fn nulled(&self) -> Self {
        null_conditions(self.x.clone(), self.e.dim())
    }

    pub fn x(&self) -> &ContentFeatures {
        &self.x
    }

    pub fn f0_bins(&self) -> &F0Bins {
        &self.f0_bins
    }

    pub fn e(&self) -> &SpeakerEmbedding {
        &self.e
    }

    pub fn dropped(&self) -> bool {
        self.dropped
    }

    pub fn frames(&self) -> usize {
        self.x.frames()
    }

    /// Crop of frames `[start, start+len)`.
    pub fn crop(&self, start: usize, len: usize) -> Self {
        Self {
            x: ContentFeatures {
                values: self.x.values.slice_cols(start, len),
            },
            f0_bins: F0Bins {
                idx: self.f0_bins.idx[start..start + len].to_vec(),
            },
            e: self.e.clone(),
            dropped: self.dropped,
        }
    }
}

pub fn null_conditions(x: ContentFeatures, d_spk: usize) -> ConditionSet {
    let frames = x.frames();
    ConditionSet {
        x,
        f0_bins: F0Bins::unvoiced(frames),
        e: SpeakerEmbedding::null(d_spk),
        dropped: true,
    }
}

// ---------------------------------------------------------------- content encoder

/// Standardises every mel band over time. Removing each band's
/// per-utterance mean strips the static spectral envelope, which is where
/// most singer identity lives.
pub fn normalize_mel(mel: &MelSpectrogram) -> Tensor {
    let v = &mel.values;
    let (m, t) = (v.rows(), v.cols());
    let mut out = Tensor::zeros(&[m, t]);
    for i in 0..m {
        let row = v.row(i);
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (j, x) in row.iter().enumerate() {
            out.data_mut()[i * t + j] = (x - mean) * inv;
        }
    }
    out
}

pub fn init_content_encoder<R: Rng + ?Sized>(
    p: &mut ParamStore,
    mel_bins: usize,
    channels: usize,
    d_content: usize,
    rng: &mut R,
) {
    p.init_conv("content.c0", channels, mel_bins, 5, rng);
    p.init_conv("content.c1", channels, channels, 5, rng);
    p.init_conv("content.c2", channels, channels, 5, rng);
    p.init_conv("content.c3", d_content, channels, 1, rng);
}

/// Four stride-1 convolutions; `input` is a normalised mel `[mel, T]`.
pub fn content_forward(g: &mut Graph, p: &ParamStore, input: Var) -> Var {
    let mut h = conv(g, p, "content.c0", input, 1);
    h = g.leaky_relu(h, 0.1);
    let r = conv(g, p, "content.c1", h, 1);
    let r = g.leaky_relu(r, 0.1);
    h = g.add(h, r);
    let r = conv(g, p, "content.c2", h, 2);
    let r = g.leaky_relu(r, 0.1);
    h = g.add(h, r);
    conv(g, p, "content.c3", h, 1)
}

pub fn content_features(mel: &MelSpectrogram, p: &ParamStore) -> Result<ContentFeatures> {
    let want = p
        .get("content.c0.w")
        .ok_or_else(|| SvcError::Incompatible("no content encoder weights".into()))?
        .dim(1);
    if mel.values.rows() != want {
        return Err(SvcError::Shape(format!(
            "content encoder expects {want} mel bins, got {}",
            mel.values.rows()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(normalize_mel(mel));
    let y = content_forward(&mut g, p, x);
    Ok(ContentFeatures {
        values: g.value(y).clone(),
    })
}

// ---------------------------------------------------------------- speaker encoder

/// Per-band mean and standard deviation of a log-mel: `[2·mel, 1]`.
pub fn speaker_stats(mel: &MelSpectrogram) -> Tensor {
    let v = &mel.values;
    let (m, t) = (v.rows(), v.cols());
    let mut out = vec![0.0; 2 * m];
    for i in 0..m {
        let row = v.row(i);
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t as f64;
        out[i] = mean;
        out[m + i] = var.sqrt();
    }
    Tensor::column(out)
}

pub fn init_speaker_encoder<R: Rng + ?Sized>(
    p: &mut ParamStore,
    mel_bins: usize,
    d_spk: usize,
    n_classes: usize,
    rng: &mut R,
) {
    p.insert("spk.norm_mean", Tensor::zeros(&[2 * mel_bins, 1]));
    p.insert("spk.norm_std", Tensor::full(&[2 * mel_bins, 1], 1.0));
    p.init_linear("spk.proj", d_spk, 2 * mel_bins, rng);
    if n_classes > 0 {
        p.insert("spk.classes", Tensor::randn(&[d_spk, n_classes], 1.0, rng));
    }
    p.freeze_prefix("spk.norm_");
}

/// Statistics that vary less than this across the corpus (in log-mel
/// units) carry no singer information; flooring their scale keeps small
/// synthesis artefacts in them from dominating the embedding.
pub const SPEAKER_STAT_FLOOR: f64 = 0.1;

/// Fixes the input standardisation from a set of training statistics.
pub fn fit_speaker_norm(p: &mut ParamStore, stats: &[Tensor]) -> Result<()> {
    let Some(first) = stats.first() else {
        return Err(SvcError::InvalidArgument("no statistics to fit".into()));
    };
    let d = first.len();
    let n = stats.len() as f64;
    let mut mean = vec![0.0; d];
    for s in stats {
        for (m, v) in mean.iter_mut().zip(s.data()) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for s in stats {
        for ((sd, v), m) in std.iter_mut().zip(s.data()).zip(&mean) {
            *sd += (v - m).powi(2) / n;
        }
    }
    let std: Vec<f64> = std.iter().map(|v| v.sqrt().max(SPEAKER_STAT_FLOOR)).collect();
    p.insert("spk.norm_mean", Tensor::column(mean));
    p.insert("spk.norm_std", Tensor::column(std));
    p.freeze_prefix("spk.norm_");
    Ok(())
}

fn standardize_stats(p: &ParamStore, stats: &Tensor) -> Result<Tensor> {
    let mean = p
        .get("spk.norm_mean")
        .ok_or_else(|| SvcError::Incompatible("no speaker encoder weights".into()))?;
    let std = p.get("spk.norm_std").expect("norm_std is stored with norm_mean");
    if mean.len() != stats.len() {
        return Err(SvcError::Shape(format!(
            "speaker encoder expects {} statistics, got {}",
            mean.len(),
            stats.len()
        )));
    }
    let centred = stats.zip_map(mean, |a, b| a - b);
    Ok(centred.zip_map(std, |a, b| a / b))
}

/// Raw statistics `[2·mel, 1]` → unit embedding `[d_spk, 1]`.
pub fn speaker_forward(g: &mut Graph, p: &ParamStore, stats: &Tensor) -> Result<Var> {
    let x = g.constant(standardize_stats(p, stats)?);
    let h = linear(g, p, "spk.proj", x);
    Ok(g.l2_normalize_cols(h, 1e-12))
}

/// Additive-margin softmax over the training singers.
pub fn am_softmax_loss(
    g: &mut Graph,
    p: &ParamStore,
    e: Var,
    label: usize,
    margin: f64,
    scale: f64,
) -> Var {
    let w = g.param(p, "spk.classes");
    let wn = g.l2_normalize_cols(w, 1e-12);
    let et = g.transpose(e);
    let cos = g.matmul(et, wn);
    let cos = g.transpose(cos);
    let k = g.value(cos).len();
    let mut shift = vec![0.0; k];
    shift[label] = -margin;
    let shift = g.constant(Tensor::column(shift));
    let logits = g.add(cos, shift);
    let logits = g.scale(logits, scale);
    g.cross_entropy(logits, label)
}

/// Embedding of pre-computed log-mels: per-clip embeddings averaged and
/// re-normalised.
pub fn embed_mels(mels: &[MelSpectrogram], p: &ParamStore) -> Result<SpeakerEmbedding> {
    if mels.is_empty() {
        return Err(SvcError::InvalidArgument("no reference clips".into()));
    }
    let mut acc: Vec<f64> = Vec::new();
    for m in mels {
        let mut g = Graph::new();
        let e = speaker_forward(&mut g, p, &speaker_stats(m))?;
        let v = g.value(e).data();
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, b) in acc.iter_mut().zip(v) {
            *a += b;
        }
    }
    SpeakerEmbedding::from_raw(acc)
}

/// Speaker embedding from reference clips, each at least one second long.
pub fn speaker_embed(refs: &[AudioClip], fe: &FrontEnd, p: &ParamStore) -> Result<SpeakerEmbedding> {
    if refs.is_empty() {
        return Err(SvcError::InvalidArgument("no reference clips".into()));
    }
    let mels = refs
        .iter()
        .map(|r| {
            let c = fe.conform(r);
            let needed = c.sample_rate as usize;
            if c.len() < needed {
                return Err(SvcError::ClipTooShort {
                    needed,
                    got: c.len(),
                });
            }
            fe.log_mel(&c)
        })
        .collect::<Result<Vec<_>>>()?;
    embed_mels(&mels, p)
}

// ---------------------------------------------------------------- SCLN and melody

/// Identity-initialised SCLN projections under `prefix`.
pub fn init_scln(p: &mut ParamStore, prefix: &str, d_content: usize, d_spk: usize) {
    p.insert(format!("{prefix}.gamma.w"), Tensor::zeros(&[d_content, d_spk]));
    p.insert(format!("{prefix}.gamma.b"), Tensor::full(&[d_content, 1], 1.0));
    p.insert(format!("{prefix}.beta.w"), Tensor::zeros(&[d_content, d_spk]));
    p.insert(format!("{prefix}.beta.b"), Tensor::zeros(&[d_content, 1]));
}

/// `γ(e) ⊙ LN(x) + β(e)`, with `x [d, T]` and `e [d_spk, 1]`.
pub fn scln_var(g: &mut Graph, p: &ParamStore, prefix: &str, x: Var, e: Var) -> Var {
    let ln = g.layer_norm_cols(x, LN_EPS);
    let gamma = linear(g, p, &format!("{prefix}.gamma"), e);
    let beta = linear(g, p, &format!("{prefix}.beta"), e);
    let y = g.mul_col(ln, gamma);
    g.add_col(y, beta)
}

pub fn scln(
    x: &ContentFeatures,
    e: &SpeakerEmbedding,
    p: &ParamStore,
    prefix: &str,
) -> Result<ContentFeatures> {
    let gw = p
        .get(&format!("{prefix}.gamma.w"))
        .ok_or_else(|| SvcError::Incompatible(format!("no SCLN weights under '{prefix}'")))?;
    if gw.rows() != x.dim() || gw.cols() != e.dim() {
        return Err(SvcError::Shape(format!(
            "SCLN expects d_content {} and d_spk {}, got {} and {}",
            gw.rows(),
            gw.cols(),
            x.dim(),
            e.dim()
        )));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.values.clone());
    let ev = g.constant(e.column());
    let y = scln_var(&mut g, p, prefix, xv, ev);
    Ok(ContentFeatures {
        values: g.value(y).clone(),
    })
}

/// Row lookup into a `[257, d_f0]` table, giving `[d_f0, frames]`.
pub fn melody_embedding(bins: &F0Bins, table: &Tensor) -> Result<Tensor> {
    if table.rows() != F0_BINS + 1 {
        return Err(SvcError::Shape(format!(
            "melody table needs {} rows, has {}",
            F0_BINS + 1,
            table.rows()
        )));
    }
    if let Some(&b) = bins.idx.iter().find(|&&b| b > F0_BINS) {
        return Err(SvcError::InvalidArgument(format!("F0 bin {b} out of range")));
    }
    let mut g = Graph::new();
    let t = g.constant(table.clone());
    let y = g.embedding(t, &bins.idx);
    Ok(g.value(y).clone())
}

/// Speaker input for a network: the embedding itself, or the learned null
/// vector stored at `null_name`.
pub fn speaker_var(g: &mut Graph, p: &ParamStore, null_name: &str, e: &SpeakerEmbedding) -> Var {
    if e.is_null {
        g.param(p, null_name)
    } else {
        g.constant(e.column())
    }
}
