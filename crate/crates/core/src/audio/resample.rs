use std::f64::consts::PI;

use super::AudioClip;

const ZERO_CROSSINGS: f64 = 24.0;
const ROLLOFF: f64 = 0.95;

/// Band-limited resampling by windowed-sinc interpolation.
///
/// The output holds `round(len · target / source)` samples. Identical rates
/// return the input unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target rate must be positive");
    if clip.sample_rate == target_rate {
        return clip.clone();
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = (clip.samples.len() as f64 * ratio).round() as usize;
    // Cutoff as a fraction of the input Nyquist.
    let fc = ratio.min(1.0) * ROLLOFF;
    let half = (ZERO_CROSSINGS / fc).ceil() as isize;
    let x = &clip.samples;
    let n = x.len() as isize;
    let samples = (0..out_len)
        .map(|j| {
            let pos = j as f64 / ratio;
            let center = pos.floor() as isize;
            let mut acc = 0.0;
            for k in (center - half + 1)..=(center + half) {
                if k < 0 || k >= n {
                    continue;
                }
                let d = pos - k as f64;
                let u = d / half as f64;
                if u.abs() >= 1.0 {
                    continue;
                }
                let window = 0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos();
                acc += x[k as usize] * fc * sinc(fc * d) * window;
            }
            acc
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: target_rate,
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn tone(freq: f64, rate: u32, secs: f64) -> AudioClip {
        let n = (rate as f64 * secs) as usize;
        AudioClip {
            samples: (0..n)
                .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / rate as f64).sin())
                .collect(),
            sample_rate: rate,
        }
    }

    /// Oracle: frequency of the largest FFT bin of the clip.
    fn peak_hz(clip: &AudioClip) -> (f64, f64) {
        let n = clip.samples.len();
        let mut buf: Vec<Complex<f64>> = clip
            .samples
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                Complex::new(s * w, 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = (0..n / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap();
        let bin = clip.sample_rate as f64 / n as f64;
        (k as f64 * bin, bin)
    }

    #[test]
    fn identity_when_rates_match() {
        let c = tone(440.0, 32000, 0.1);
        assert_eq!(resample(&c, 32000), c);
    }

    #[test]
    fn upsampled_tone_keeps_its_peak() {
        let c = tone(440.0, 16000, 1.0);
        let up = resample(&c, 32000);
        assert_eq!(up.samples.len(), 32000);
        let (hz, bin) = peak_hz(&up);
        assert!((hz - 440.0).abs() <= bin, "peak at {hz}");
    }

    #[test]
    fn downsample_length() {
        let c = tone(300.0, 48000, 1.0);
        let d = resample(&c, 32000);
        assert!((d.samples.len() as i64 - 32000).abs() <= 1);
    }

    #[test]
    fn round_trip_preserves_peak() {
        let c = tone(523.0, 32000, 0.5);
        let back = resample(&resample(&c, 64000), 32000);
        let (a, bin) = peak_hz(&c);
        let (b, _) = peak_hz(&back);
        assert!((a - b).abs() <= bin);
    }
}
