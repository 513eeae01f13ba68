use criterion::{black_box, criterion_group, criterion_main, Criterion};
use lsvc_bench::{clip, conditions};
use lsvc_core::diffusion::{ddpm_step, denoise_eps, init_denoiser};
use lsvc_core::frontend::FrontEnd;
use lsvc_core::nn::{ParamStore, Tensor};
use lsvc_core::rng::stream;
use lsvc_core::schedule::linear_schedule;
use lsvc_core::vae::{decode, init_decoder, Latent};
use lsvc_core::{Config, F0Contour, SpeakerEmbedding};

fn front_end(c: &mut Criterion) {
    let cfg = Config::smoke();
    let fe = FrontEnd::new(&cfg.audio).unwrap();
    let audio = clip(1.5);
    c.bench_function("stft_1.5s", |b| b.iter(|| fe.linear(black_box(&audio)).unwrap()));
    c.bench_function("log_mel_1.5s", |b| b.iter(|| fe.log_mel(black_box(&audio)).unwrap()));
    c.bench_function("yin_1.5s", |b| b.iter(|| fe.f0(black_box(&audio)).unwrap()));
}

fn denoiser(c: &mut Criterion) {
    let cfg = Config::smoke();
    let m = &cfg.model;
    let mut p = ParamStore::new();
    init_denoiser(&mut p, m, &mut stream(0, "bench-den", 0));
    let sched = linear_schedule(cfg.schedule.steps, cfg.schedule.beta_1, cfg.schedule.beta_t).unwrap();
    let cond = conditions(&cfg, 188);
    let z = Tensor::randn(&[m.d_z, 188], 1.0, &mut stream(0, "bench-z", 0));
    c.bench_function("denoiser_188_frames", |b| {
        b.iter(|| denoise_eps(black_box(&z), 50, &cond, &p, m, &sched).unwrap())
    });
    c.bench_function("guided_reverse_step_188_frames", |b| {
        let uncond = cond.nulled();
        let mut rng = stream(0, "bench-step", 0);
        b.iter(|| {
            let ec = denoise_eps(&z, 50, &cond, &p, m, &sched).unwrap();
            let eu = denoise_eps(&z, 50, &uncond, &p, m, &sched).unwrap();
            let eps = lsvc_core::diffusion::cfg_eps(&ec, &eu, 0.3).unwrap();
            ddpm_step(&z, 50, &eps, &sched, &mut rng).unwrap()
        })
    });
}

fn decoder(c: &mut Criterion) {
    let cfg = Config::smoke();
    let m = &cfg.model;
    let mut p = ParamStore::new();
    init_decoder(&mut p, m, &mut stream(0, "bench-dec", 0));
    let z = Latent {
        values: Tensor::randn(&[m.d_z, 64], 1.0, &mut stream(0, "bench-z", 1)),
    };
    let f0 = F0Contour::new(vec![180.0; 64], cfg.audio.hop).unwrap();
    let e = SpeakerEmbedding::from_raw(vec![1.0; m.d_spk]).unwrap();
    c.bench_function("nsf_decode_64_frames", |b| {
        b.iter(|| decode(black_box(&z), &f0, &e, &p, &cfg, &mut stream(0, "bench-exc", 0)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = front_end, denoiser, decoder
}
criterion_main!(benches);
