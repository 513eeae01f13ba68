use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use lsvc_core::audio::{load_wav, synth_dataset, write_wav, AudioClip};
use lsvc_core::diffusion::LdmTrainer;
use lsvc_core::eval::{
    build_pairs, classes_from_pitch, evaluate as run_eval, load_singer_classes, plot_report,
    Scenario, SingerClasses,
};
use lsvc_core::pipeline::{ConversionRequest, Converter, Overrides};
use lsvc_core::vae::{VaeModel, VaeTrainer};
use lsvc_core::{Checkpoint, ContentFeatures, DatasetManifest, F0Contour, SpeakerEmbedding, Split, SvcError};
use serde_json::json;

use crate::{CliError, CliResult, Context, ScenarioArg};

fn require(path: &Path, what: &str, hint: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::StageOrder(format!(
            "{what} not found at {}; run `lsvc {hint}` first",
            path.display()
        )))
    }
}

fn require_input(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(SvcError::MissingFile(path.to_path_buf()).into())
    }
}

pub fn synth_data(ctx: &Context, out: &Option<PathBuf>) -> CliResult<()> {
    let dir = out.clone().unwrap_or_else(|| ctx.root.join("data"));
    let mut ds = synth_dataset(&ctx.config.synth(), ctx.config.seed)?;
    let path = ds.write(&dir)?;
    eprintln!("wrote {} clips; manifest {}", ds.clips.len(), path.display());
    Ok(())
}

fn loss_csv(ckpt: &Path) -> PathBuf {
    let stem = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("train");
    ckpt.with_file_name(format!("{stem}_loss.csv"))
}

/// Opens the loss log for appending. A fresh run starts a new file; a
/// resumed run keeps only rows logged before `resume_step`.
fn open_log(path: &Path, header: &str, resume_step: usize) -> CliResult<fs::File> {
    let mut keep = String::from(header);
    keep.push('\n');
    if resume_step > 0 {
        if let Ok(text) = fs::read_to_string(path) {
            for line in text.lines().skip(1) {
                let step = line.split(',').next().and_then(|s| s.parse::<usize>().ok());
                if step.is_some_and(|s| s < resume_step) {
                    keep.push_str(line);
                    keep.push('\n');
                }
            }
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, keep)?;
    Ok(OpenOptions::new().append(true).open(path)?)
}

fn load_manifest(path: &Path) -> CliResult<DatasetManifest> {
    require(path, "dataset manifest", "synth-data")?;
    let m = DatasetManifest::load(path)?;
    m.validate()?;
    Ok(m)
}

pub fn train_vae(
    ctx: &Context,
    manifest: &Path,
    out: &Path,
    fresh: bool,
    stop_after: Option<usize>,
) -> CliResult<()> {
    let cfg = &ctx.config;
    let clips = load_manifest(manifest)?.load_split(Split::Train)?;
    let mut trainer = if out.exists() && !fresh {
        let ckpt = Checkpoint::load(out)?;
        let t = VaeTrainer::resume(cfg, &clips, &ckpt)?;
        eprintln!("resuming VAE training at step {}", t.step);
        t
    } else {
        VaeTrainer::new(cfg, &clips)?
    };
    let mut log = open_log(&loss_csv(out), "step,phase,total,recon,kl,aux", trainer.step)?;
    let every = cfg.vae_train.log_every;
    let stop = stop_after.map(|n| trainer.step + n);
    while !trainer.done() && stop.is_none_or(|s| trainer.step < s) {
        let s = trainer.step()?;
        if s.step % every == 0 {
            writeln!(
                log,
                "{},{},{},{},{},{}",
                s.step, s.phase, s.loss.total, s.loss.recon, s.loss.kl, s.loss.aux
            )?;
            eprintln!("vae step {} [{}] loss {:.4}", s.step, s.phase, s.loss.total);
        }
        if trainer.step % cfg.vae_train.checkpoint_every == 0 || trainer.done() || stop == Some(trainer.step) {
            trainer.checkpoint().save(out)?;
        }
    }
    if !out.exists() {
        trainer.checkpoint().save(out)?;
    }
    eprintln!("VAE checkpoint {}", out.display());
    Ok(())
}

pub fn train_ldm(
    ctx: &Context,
    manifest: &Path,
    vae: &Path,
    out: &Path,
    fresh: bool,
    stop_after: Option<usize>,
) -> CliResult<()> {
    let cfg = &ctx.config;
    require(vae, "VAE checkpoint", "train-vae")?;
    let clips = load_manifest(manifest)?.load_split(Split::Train)?;
    let vae = VaeModel::from_checkpoint(&Checkpoint::load(vae)?, cfg)?;
    let mut trainer = LdmTrainer::from_vae(cfg, &vae, &clips)?;
    if out.exists() && !fresh {
        trainer = trainer.resume(&Checkpoint::load(out)?)?;
        eprintln!("resuming LDM training at step {}", trainer.step);
    }
    let mut log = open_log(&loss_csv(out), "step,loss,drops", trainer.step)?;
    let every = cfg.ldm_train.log_every;
    let stop = stop_after.map(|n| trainer.step + n);
    while !trainer.done() && stop.is_none_or(|s| trainer.step < s) {
        let s = trainer.step()?;
        if s.step % every == 0 {
            writeln!(log, "{},{},{}", s.step, s.loss, s.drops)?;
            eprintln!("ldm step {} loss {:.4}", s.step, s.loss);
        }
        if trainer.step % cfg.ldm_train.checkpoint_every == 0 || trainer.done() || stop == Some(trainer.step) {
            trainer.checkpoint().save(out)?;
        }
    }
    if !out.exists() {
        trainer.checkpoint().save(out)?;
    }
    eprintln!("LDM checkpoint {}", out.display());
    Ok(())
}

pub struct ConvertArgs<'a> {
    pub source: &'a Path,
    pub refs: &'a [PathBuf],
    pub vae: &'a Path,
    pub ldm: &'a Path,
    pub w: f64,
    pub seed: u64,
    pub out: &'a Path,
    pub f0: Option<&'a Path>,
    pub content: Option<&'a Path>,
    pub speaker: Option<&'a Path>,
}

fn load_converter(ctx: &Context, vae: &Path, ldm: &Path) -> CliResult<Converter> {
    require(vae, "VAE checkpoint", "train-vae")?;
    require(ldm, "LDM checkpoint", "train-ldm")?;
    Ok(Converter::new(&ctx.config, &Checkpoint::load(vae)?, &Checkpoint::load(ldm)?)?)
}

pub fn convert(ctx: &Context, a: &ConvertArgs) -> CliResult<()> {
    // Inputs are checked before any model is loaded.
    require_input(a.source)?;
    for r in a.refs {
        require_input(r)?;
    }
    for p in [a.f0, a.content, a.speaker].into_iter().flatten() {
        require_input(p)?;
    }
    let source = load_wav(a.source)?;
    let refs = a.refs.iter().map(load_wav).collect::<Result<Vec<_>, _>>()?;
    let overrides = Overrides {
        f0: a.f0.map(F0Contour::load_sidecar).transpose()?,
        content: a.content.map(ContentFeatures::load_sidecar).transpose()?,
        speaker: a.speaker.map(SpeakerEmbedding::load_sidecar).transpose()?,
    };
    let req = ConversionRequest::new(source, refs, a.w, a.seed)?;
    let converter = load_converter(ctx, a.vae, a.ldm)?;
    let res = converter.convert(&req, &overrides)?;
    if let Some(dir) = a.out.parent() {
        fs::create_dir_all(dir)?;
    }
    write_wav(a.out, &res.audio)?;
    let sidecar = json!({
        "seed": a.seed,
        "w": a.w,
        "config_hash": ctx.config.hash(),
        "source": a.source.display().to_string(),
        "refs": a.refs.iter().map(|r| r.display().to_string()).collect::<Vec<_>>(),
        "sample_rate": res.audio.sample_rate,
        "samples": res.audio.len(),
        "target_mean_hz": res.target_mean_hz,
        "denoiser_calls": res.denoiser_calls,
        "timings": res.timings,
    });
    fs::write(
        a.out.with_extension("json"),
        serde_json::to_string_pretty(&sidecar).map_err(SvcError::from)? + "\n",
    )?;
    eprintln!("wrote {} ({} samples)", a.out.display(), res.audio.len());
    Ok(())
}

fn singer_classes(manifest: &DatasetManifest, path: &Path, converter: &Converter, clips: &[AudioClip]) -> CliResult<SingerClasses> {
    let sidecar = path.parent().unwrap_or(Path::new(".")).join("singers.json");
    if sidecar.exists() {
        return Ok(load_singer_classes(sidecar)?);
    }
    let fe = &converter.vae.fe;
    let f0s = manifest
        .entries
        .iter()
        .zip(clips)
        .filter(|(e, _)| e.split != Split::Train)
        .map(|(e, c)| Ok((e.singer_id.clone(), fe.f0(&fe.conform(c))?)))
        .collect::<Result<Vec<_>, SvcError>>()?;
    Ok(classes_from_pitch(&f0s)?)
}

pub fn evaluate(
    ctx: &Context,
    manifest_path: &Path,
    vae: &Path,
    ldm: &Path,
    scenario: ScenarioArg,
    w: f64,
    out: &Path,
) -> CliResult<()> {
    let manifest = load_manifest(manifest_path)?;
    let scenarios = match scenario {
        ScenarioArg::Seen => vec![Scenario::Seen],
        ScenarioArg::Unseen => vec![Scenario::Unseen],
        ScenarioArg::Both => vec![Scenario::Seen, Scenario::Unseen],
    };
    for sc in &scenarios {
        if manifest.singers(sc.split()).len() < 2 {
            return Err(SvcError::InvalidArgument(format!(
                "manifest has fewer than 2 singers in the {} split",
                sc.name()
            ))
            .into());
        }
    }
    let converter = load_converter(ctx, vae, ldm)?;
    let clips = (0..manifest.entries.len())
        .map(|i| manifest.load_clip(i))
        .collect::<Result<Vec<_>, _>>()?;
    let classes = singer_classes(&manifest, manifest_path, &converter, &clips)?;
    let mut trials = Vec::new();
    for sc in scenarios {
        trials.extend(build_pairs(&manifest, sc, &classes)?);
    }
    for (i, t) in trials.iter_mut().enumerate() {
        t.id = i;
    }
    let report = run_eval(&trials, &manifest, &clips, &converter, ctx.config.seed, w);
    fs::create_dir_all(out)?;
    report.save(out.join("report.json"))?;
    plot_report(&report, out)?;
    for (sc, s) in &report.aggregates.by_scenario {
        eprintln!(
            "{}: n={} ssim_to_target {:.3} ssim_to_source {:.3} fpc {:.3} target wins {:.0}%",
            sc.name(),
            s.fpc.count,
            s.ssim_to_target.mean,
            s.ssim_to_source.mean,
            s.fpc.mean,
            100.0 * s.target_wins
        );
    }
    eprintln!("report {} ({} failures)", out.join("report.json").display(), report.failure_count);
    Ok(())
}
