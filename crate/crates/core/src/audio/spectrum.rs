//! Short-time Fourier analysis, mel projection, and a differentiable
//! log-mel operator for the reconstruction loss.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::error::{Result, SvcError};
use crate::nn::{Graph, Tensor, Var};

/// Floor inside the mel log compression.
pub const LOG_FLOOR: f64 = 1e-5;
const MAG_EPS: f64 = 1e-18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub win: usize,
}

impl StftConfig {
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count under centre padding.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples / self.hop + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.win || self.win > self.fft_size {
            return Err(SvcError::InvalidArgument(format!(
                "need 0 < hop <= win <= fft_size, got hop={} win={} fft={}",
                self.hop, self.win, self.fft_size
            )));
        }
        Ok(())
    }
}

/// Magnitude STFT, stored channel-first as `[bins, frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSpectrogram {
    pub values: Tensor,
    pub config: StftConfig,
}

impl LinearSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.cols()
    }
}

/// Log-mel spectrogram, channel-first `[mel_bins, frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub values: Tensor,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.cols()
    }
}

/// Planned STFT with a periodic Hann window centred in the FFT frame.
#[derive(Clone)]
pub struct Stft {
    pub config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let n = config.fft_size;
        let offset = (n - config.win) / 2;
        let mut window = vec![0.0; n];
        for i in 0..config.win {
            window[offset + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / config.win as f64).cos();
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            window,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n < self.config.win {
            return Err(SvcError::ClipTooShort {
                needed: self.config.win,
                got: n,
            });
        }
        Ok(())
    }

    /// Complex spectra `frames × (fft/2 + 1)` of a reflect-padded signal.
    pub fn spectra(&self, samples: &[f64]) -> Result<Vec<Vec<Complex<f64>>>> {
        self.check_len(samples.len())?;
        let StftConfig { fft_size, hop, .. } = self.config;
        let pad = fft_size / 2;
        let frames = self.config.n_frames(samples.len());
        let nb = self.config.n_bins();
        let mut out = Vec::with_capacity(frames);
        let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
        for f in 0..frames {
            for (n, b) in buf.iter_mut().enumerate() {
                let idx = reflect_index((f * hop + n) as isize - pad as isize, samples.len());
                *b = Complex::new(samples[idx] * self.window[n], 0.0);
            }
            self.forward.process(&mut buf);
            out.push(buf[..nb].to_vec());
        }
        Ok(out)
    }
}

/// Index into `[0, n)` under repeated mirror reflection (no edge repeat).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

pub fn linear_spectrogram(clip: &AudioClip, stft: &Stft) -> Result<LinearSpectrogram> {
    if clip.sample_rate != stft.config.sample_rate {
        return Err(SvcError::InvalidArgument(format!(
            "clip rate {} differs from analysis rate {}",
            clip.sample_rate, stft.config.sample_rate
        )));
    }
    let spectra = stft.spectra(&clip.samples)?;
    let (frames, nb) = (spectra.len(), stft.config.n_bins());
    let mut values = Tensor::zeros(&[nb, frames]);
    for (f, spec) in spectra.iter().enumerate() {
        for (k, c) in spec.iter().enumerate() {
            values.data_mut()[k * frames + f] = c.norm();
        }
    }
    Ok(LinearSpectrogram {
        values,
        config: stft.config,
    })
}

/// Triangular HTK-mel filterbank, `[mel_bins, fft/2 + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    pub weights: Tensor,
    pub fmin: f64,
    pub fmax: f64,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl MelFilterbank {
    pub fn new(config: &StftConfig, mel_bins: usize, fmin: f64, fmax: f64) -> Result<Self> {
        if mel_bins < 1 {
            return Err(SvcError::InvalidArgument("mel_bins must be >= 1".into()));
        }
        let nyquist = config.sample_rate as f64 / 2.0;
        if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
            return Err(SvcError::InvalidArgument(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got {fmin}..{fmax}"
            )));
        }
        let nb = config.n_bins();
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..mel_bins + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (mel_bins + 1) as f64))
            .collect();
        let bin_hz = config.sample_rate as f64 / config.fft_size as f64;
        let mut w = Tensor::zeros(&[mel_bins, nb]);
        for m in 0..mel_bins {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..nb {
                let f = k as f64 * bin_hz;
                let v = ((f - l) / (c - l)).min((r - f) / (r - c));
                if v > 0.0 {
                    w.data_mut()[m * nb + k] = v;
                }
            }
        }
        Ok(Self {
            weights: w,
            fmin,
            fmax,
        })
    }

    pub fn mel_bins(&self) -> usize {
        self.weights.rows()
    }

    /// `log(W · |X| + ε)` for a linear spectrogram.
    pub fn apply(&self, spec: &LinearSpectrogram) -> MelSpectrogram {
        let (mb, nb) = (self.weights.rows(), self.weights.cols());
        let frames = spec.n_frames();
        let mut out = Tensor::zeros(&[mb, frames]);
        crate::nn::matmul_into(
            self.weights.data(),
            spec.values.data(),
            out.data_mut(),
            mb,
            nb,
            frames,
        );
        for v in out.data_mut() {
            *v = (*v + LOG_FLOOR).ln();
        }
        MelSpectrogram { values: out }
    }
}

pub fn mel_from_linear(
    spec: &LinearSpectrogram,
    mel_bins: usize,
    fmin: f64,
    fmax: f64,
) -> Result<MelSpectrogram> {
    let fb = MelFilterbank::new(&spec.config, mel_bins, fmin, fmax)?;
    Ok(fb.apply(spec))
}

/// Differentiable log-mel of a waveform node `[1, N]`, giving `[mel, frames]`.
pub fn log_mel_var(g: &mut Graph, audio: Var, stft: &Stft, fb: &MelFilterbank) -> Result<Var> {
    let samples = g.value(audio).data().to_vec();
    let spectra = stft.spectra(&samples)?;
    let frames = spectra.len();
    let nb = stft.config.n_bins();
    let mb = fb.mel_bins();
    let mut mags = vec![0.0; nb * frames];
    for (f, spec) in spectra.iter().enumerate() {
        for (k, c) in spec.iter().enumerate() {
            mags[k * frames + f] = (c.norm_sqr() + MAG_EPS).sqrt();
        }
    }
    let mut mel = vec![0.0; mb * frames];
    crate::nn::matmul_into(fb.weights.data(), &mags, &mut mel, mb, nb, frames);
    let out = Tensor::from_vec(&[mb, frames], mel.iter().map(|v| (v + LOG_FLOOR).ln()).collect());

    let weights = fb.weights.clone();
    let stft = stft.clone();
    let n = samples.len();
    Ok(g.custom(&[audio], out, move |gout, _, grads| {
        let StftConfig { fft_size, hop, .. } = stft.config;
        let pad = fft_size / 2;
        let dmel: Vec<f64> = gout
            .data()
            .iter()
            .zip(&mel)
            .map(|(gv, m)| gv / (m + LOG_FLOOR))
            .collect();
        // dmag [nb, frames] = Wᵀ · dmel
        let wt = weights.transpose();
        let mut dmag = vec![0.0; nb * frames];
        crate::nn::matmul_into(wt.data(), &dmel, &mut dmag, nb, mb, frames);
        let dx = grads.slot(audio);
        let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
        for f in 0..frames {
            for b in buf.iter_mut() {
                *b = Complex::new(0.0, 0.0);
            }
            for k in 0..nb {
                let c = spectra[f][k];
                let m = mags[k * frames + f];
                buf[k] = c * (dmag[k * frames + f] / m);
            }
            stft.inverse.process(&mut buf);
            for (i, b) in buf.iter().enumerate() {
                let idx = reflect_index((f * hop + i) as isize - pad as isize, n);
                dx[idx] += b.re * stft.window[i];
            }
        }
    }))
}
