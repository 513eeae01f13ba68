//! F0 extraction, the mean-ratio F0 shift, log-F0 quantisation and the
//! F0 Pearson correlation kernel.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Result, SvcError};

/// Number of voiced quantisation bins; bin 0 is reserved for unvoiced/null.
pub const F0_BINS: usize = 256;

/// Per-frame F0 in Hz; 0 marks an unvoiced frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Contour {
    pub frame_hop: usize,
    pub hz: Vec<f64>,
}

impl F0Contour {
    pub fn new(hz: Vec<f64>, frame_hop: usize) -> Result<Self> {
        if hz.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SvcError::InvalidArgument("F0 values must be finite and >= 0".into()));
        }
        Ok(Self { frame_hop, hz })
    }

    pub fn len(&self) -> usize {
        self.hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hz.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.hz.iter().filter(|&&v| v > 0.0).count()
    }

    /// Loads an externally computed contour from `{frame_hop, hz: [...]}`.
    pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(SvcError::MissingFile(path.to_path_buf()));
        }
        let c: F0Contour = serde_json::from_slice(&std::fs::read(path)?)?;
        F0Contour::new(c.hz, c.frame_hop)
    }

    pub fn save_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Quantised log-F0, one index in `0..=256` per frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct F0Bins {
    pub idx: Vec<usize>,
}

impl F0Bins {
    pub fn unvoiced(frames: usize) -> Self {
        Self {
            idx: vec![0; frames],
        }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn is_all_null(&self) -> bool {
        self.idx.iter().all(|&i| i == 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YinConfig {
    pub sample_rate: u32,
    pub hop: usize,
    /// Integration window in samples.
    pub window: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub threshold: f64,
    /// When no dip falls below `threshold`, the global minimum still counts
    /// as voiced if it is below this looser bound.
    pub fallback_threshold: f64,
}

impl YinConfig {
    pub fn new(sample_rate: u32, hop: usize, f_min: f64, f_max: f64) -> Self {
        Self {
            sample_rate,
            hop,
            window: 1024,
            f_min,
            f_max,
            threshold: 0.15,
            fallback_threshold: 0.35,
        }
    }
}

/// YIN-style estimator: difference function via FFT cross-correlation,
/// cumulative-mean normalisation, absolute threshold, parabolic refinement.
pub struct YinExtractor {
    cfg: YinConfig,
    tau_min: usize,
    tau_max: usize,
    fft_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl YinExtractor {
    pub fn new(cfg: YinConfig) -> Result<Self> {
        let nyq = cfg.sample_rate as f64 / 2.0;
        if !(cfg.f_min > 0.0 && cfg.f_min < cfg.f_max && cfg.f_max <= nyq) {
            return Err(SvcError::InvalidArgument(format!(
                "need 0 < f_min < f_max <= {nyq}, got {}..{}",
                cfg.f_min, cfg.f_max
            )));
        }
        if cfg.hop == 0 || cfg.window == 0 {
            return Err(SvcError::InvalidArgument("hop and window must be positive".into()));
        }
        let sr = cfg.sample_rate as f64;
        let tau_min = ((sr / cfg.f_max).floor() as usize).max(2);
        let tau_max = (sr / cfg.f_min).ceil() as usize + 1;
        let fft_len = (cfg.window + tau_max + cfg.window).next_power_of_two();
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            tau_min,
            tau_max,
            fft_len,
            forward: planner.plan_fft_forward(fft_len),
            inverse: planner.plan_fft_inverse(fft_len),
        })
    }

    pub fn config(&self) -> &YinConfig {
        &self.cfg
    }

    /// One F0 value per hop, frame `i` centred on sample `i · hop`, so the
    /// frame count equals the centre-padded STFT frame count.
    pub fn extract(&self, clip: &AudioClip) -> Result<F0Contour> {
        if clip.sample_rate != self.cfg.sample_rate {
            return Err(SvcError::InvalidArgument(format!(
                "clip rate {} differs from extractor rate {}",
                clip.sample_rate, self.cfg.sample_rate
            )));
        }
        if clip.samples.len() < self.cfg.window {
            return Err(SvcError::ClipTooShort {
                needed: self.cfg.window,
                got: clip.samples.len(),
            });
        }
        let frames = clip.samples.len() / self.cfg.hop + 1;
        let hz = (0..frames)
            .map(|i| self.frame_f0(&clip.samples, i * self.cfg.hop))
            .collect();
        F0Contour::new(hz, self.cfg.hop)
    }

    fn frame_f0(&self, x: &[f64], centre: usize) -> f64 {
        let w = self.cfg.window;
        let span = w + self.tau_max;
        let start = centre as isize - (w / 2) as isize;
        let seg: Vec<f64> = (0..span)
            .map(|j| {
                let k = start + j as isize;
                if k >= 0 && (k as usize) < x.len() {
                    x[k as usize]
                } else {
                    0.0
                }
            })
            .collect();
        let e0: f64 = seg[..w].iter().map(|v| v * v).sum();
        if e0 < 1e-6 * w as f64 * 1e-4 {
            return 0.0;
        }
        // r(τ) = Σ_j a_j b_{j+τ} = IFFT(conj(A) · B)
        let mut a = vec![Complex::new(0.0, 0.0); self.fft_len];
        let mut b = vec![Complex::new(0.0, 0.0); self.fft_len];
        for j in 0..w {
            a[j].re = seg[j];
        }
        for (j, &v) in seg.iter().enumerate() {
            b[j].re = v;
        }
        self.forward.process(&mut a);
        self.forward.process(&mut b);
        for (ai, bi) in a.iter_mut().zip(&b) {
            *ai = ai.conj() * bi;
        }
        self.inverse.process(&mut a);
        let scale = 1.0 / self.fft_len as f64;

        let mut prefix = vec![0.0; span + 1];
        for (j, v) in seg.iter().enumerate() {
            prefix[j + 1] = prefix[j] + v * v;
        }
        let tau_max = self.tau_max.min(span - w);
        let mut cmnd = vec![1.0; tau_max + 1];
        let mut running = 0.0;
        for tau in 1..=tau_max {
            let et = prefix[tau + w] - prefix[tau];
            let d = (e0 + et - 2.0 * a[tau].re * scale).max(0.0);
            running += d;
            cmnd[tau] = if running > 0.0 {
                d * tau as f64 / running
            } else {
                1.0
            };
        }
        let mut tau = self.tau_min;
        while tau < tau_max {
            if cmnd[tau] < self.cfg.threshold {
                while tau + 1 < tau_max && cmnd[tau + 1] < cmnd[tau] {
                    tau += 1;
                }
                break;
            }
            tau += 1;
        }
        if tau >= tau_max || cmnd[tau] >= self.cfg.threshold {
            tau = (self.tau_min..tau_max)
                .min_by(|&a, &b| cmnd[a].total_cmp(&cmnd[b]))
                .unwrap_or(tau_max);
            if tau >= tau_max || cmnd[tau] >= self.cfg.fallback_threshold {
                return 0.0;
            }
        }
        let refined = if tau > 1 && tau + 1 <= tau_max {
            let (l, c, r) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
            let denom = l - 2.0 * c + r;
            if denom.abs() > 1e-12 {
                tau as f64 + 0.5 * (l - r) / denom
            } else {
                tau as f64
            }
        } else {
            tau as f64
        };
        let f0 = self.cfg.sample_rate as f64 / refined;
        if f0 < self.cfg.f_min || f0 > self.cfg.f_max {
            0.0
        } else {
            f0
        }
    }
}

/// Convenience wrapper building a [`YinExtractor`] for one clip.
pub fn extract_f0(clip: &AudioClip, hop: usize, f_min: f64, f_max: f64) -> Result<F0Contour> {
    YinExtractor::new(YinConfig::new(clip.sample_rate, hop, f_min, f_max))?.extract(clip)
}

/// Arithmetic mean over voiced (`> 0`) frames.
pub fn voiced_mean(f0: &F0Contour) -> Result<f64> {
    let voiced: Vec<f64> = f0.hz.iter().copied().filter(|&v| v > 0.0).collect();
    if voiced.is_empty() {
        return Err(SvcError::NoVoicedFrames);
    }
    Ok(voiced.iter().sum::<f64>() / voiced.len() as f64)
}

/// Scales every frame by `mean_tar / voiced_mean(src)`; unvoiced frames stay 0.
pub fn shift_f0(src: &F0Contour, mean_tar: f64) -> Result<F0Contour> {
    if !(mean_tar > 0.0 && mean_tar.is_finite()) {
        return Err(SvcError::InvalidArgument(format!("target mean {mean_tar} must be > 0")));
    }
    let ratio = mean_tar / voiced_mean(src)?;
    Ok(F0Contour {
        frame_hop: src.frame_hop,
        hz: src.hz.iter().map(|&v| v * ratio).collect(),
    })
}

/// Uniform partition of `[ln f_lo, ln f_hi]` into 256 bins numbered 1..=256,
/// clamped at both ends. Unvoiced frames map to 0.
pub fn quantize_log_f0(f0: &F0Contour, f_lo: f64, f_hi: f64) -> Result<F0Bins> {
    if !(f_lo > 0.0 && f_lo < f_hi) {
        return Err(SvcError::InvalidArgument(format!("need 0 < f_lo < f_hi, got {f_lo}..{f_hi}")));
    }
    let (lo, hi) = (f_lo.ln(), f_hi.ln());
    let idx = f0
        .hz
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                0
            } else {
                let pos = ((v.ln() - lo) / (hi - lo)).clamp(0.0, 1.0);
                1 + ((pos * F0_BINS as f64).floor() as usize).min(F0_BINS - 1)
            }
        })
        .collect();
    Ok(F0Bins { idx })
}

/// Pearson correlation of the Hz values over frames voiced in both contours.
pub fn fpc(a: &F0Contour, b: &F0Contour) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SvcError::Shape(format!("frame counts differ: {} vs {}", a.len(), b.len())));
    }
    let pairs: Vec<(f64, f64)> = a
        .hz
        .iter()
        .zip(&b.hz)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x, y))
        .collect();
    if pairs.len() < 2 {
        return Err(SvcError::Degenerate(format!(
            "{} jointly voiced frames; need at least 2",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(x, y) in &pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(SvcError::Degenerate("zero F0 variance".into()));
    }
    let r = sab / (saa * sbb).sqrt();
    // Exactly affine pairs land within rounding error of ±1.
    if 1.0 - r.abs() < 1e-12 {
        return Ok(r.signum());
    }
    Ok(r.clamp(-1.0, 1.0))
}
