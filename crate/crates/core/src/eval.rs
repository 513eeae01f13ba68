//! Objective evaluation: trial construction over the held-out splits,
//! singer similarity and F0 correlation, JSON reports and SVG charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, DatasetManifest, PitchClass, SingerProfile, Split};
use crate::conditioning::SpeakerEmbedding;
use crate::error::{Result, SvcError};
use crate::frontend::FrontEnd;
use crate::pipeline::{ConversionRequest, Converter, Overrides};
use crate::pitch::{fpc, F0Contour};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Seen,
    Unseen,
}

impl Scenario {
    pub fn split(self) -> Split {
        match self {
            Scenario::Seen => Split::TestSeen,
            Scenario::Unseen => Split::TestUnseen,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Seen => "seen",
            Scenario::Unseen => "unseen",
        }
    }
}

/// Source-to-target pitch-class pairing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    L2L,
    L2H,
    H2L,
    H2H,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::L2L, Bucket::L2H, Bucket::H2L, Bucket::H2H];

    pub fn of(source: PitchClass, target: PitchClass) -> Self {
        match (source, target) {
            (PitchClass::Low, PitchClass::Low) => Bucket::L2L,
            (PitchClass::Low, PitchClass::High) => Bucket::L2H,
            (PitchClass::High, PitchClass::Low) => Bucket::H2L,
            (PitchClass::High, PitchClass::High) => Bucket::H2H,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bucket::L2L => "L2L",
            Bucket::L2H => "L2H",
            Bucket::H2L => "H2L",
            Bucket::H2H => "H2H",
        }
    }
}

pub type SingerClasses = BTreeMap<String, PitchClass>;

/// Classes as recorded by the synthetic corpus generator.
pub fn classes_from_profiles(profiles: &[SingerProfile]) -> SingerClasses {
    profiles.iter().map(|p| (p.id.clone(), p.pitch_class)).collect()
}

/// Reads `singers.json` next to a manifest.
pub fn load_singer_classes(path: impl AsRef<Path>) -> Result<SingerClasses> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(SvcError::MissingFile(path.to_path_buf()));
    }
    let profiles: Vec<SingerProfile> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(classes_from_profiles(&profiles))
}

/// Splits singers at the median of their voiced-mean F0: those above are
/// high, the rest low. `f0s` pairs each singer id with one of its contours.
pub fn classes_from_pitch(f0s: &[(String, F0Contour)]) -> Result<SingerClasses> {
    let mut pooled: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (s, c) in f0s {
        pooled
            .entry(s.as_str())
            .or_default()
            .extend(c.hz.iter().copied().filter(|&v| v > 0.0));
    }
    let mut means = Vec::new();
    for (s, v) in &pooled {
        if v.is_empty() {
            return Err(SvcError::NoVoicedFrames);
        }
        means.push((*s, v.iter().sum::<f64>() / v.len() as f64));
    }
    let mut sorted: Vec<f64> = means.iter().map(|m| m.1).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(means
        .into_iter()
        .map(|(s, m)| {
            let c = if m > median { PitchClass::High } else { PitchClass::Low };
            (s.to_string(), c)
        })
        .collect())
}

/// One conversion to score. Indices refer to manifest entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub scenario: Scenario,
    pub bucket: Bucket,
    pub source: usize,
    pub source_singer: String,
    pub target_singer: String,
    pub refs: Vec<usize>,
    /// The source singer's held-out clips, for measuring leakage.
    pub source_refs: Vec<usize>,
}

/// Every held-out source clip of the scenario paired with every other
/// singer of the same scenario, in manifest order then target id order.
pub fn build_pairs(
    manifest: &DatasetManifest,
    scenario: Scenario,
    classes: &SingerClasses,
) -> Result<Vec<Trial>> {
    let split = scenario.split();
    let by_singer = manifest.by_singer(split);
    if by_singer.len() < 2 {
        return Err(SvcError::InvalidArgument(format!(
            "{} scenario needs at least 2 singers, found {}",
            scenario.name(),
            by_singer.len()
        )));
    }
    if scenario == Scenario::Unseen {
        let train = manifest.singers(Split::Train);
        if let Some(s) = by_singer.keys().find(|s| train.contains(*s)) {
            return Err(SvcError::InvalidArgument(format!(
                "unseen singer {s} also appears in the training split"
            )));
        }
    }
    let class = |s: &str| {
        classes
            .get(s)
            .copied()
            .ok_or_else(|| SvcError::InvalidArgument(format!("no pitch class for singer {s}")))
    };
    let mut trials = Vec::new();
    for (i, entry) in manifest.with_split(split) {
        for (target, refs) in &by_singer {
            if *target == entry.singer_id {
                continue;
            }
            trials.push(Trial {
                id: trials.len(),
                scenario,
                bucket: Bucket::of(class(&entry.singer_id)?, class(target)?),
                source: i,
                source_singer: entry.singer_id.clone(),
                target_singer: target.clone(),
                refs: refs.clone(),
                source_refs: by_singer[&entry.singer_id].clone(),
            });
        }
    }
    Ok(trials)
}

/// Cosine between two embeddings. Symmetric and within `[-1, 1]`.
pub fn ssim(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> Result<f64> {
    a.cosine(b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub id: usize,
    pub scenario: Scenario,
    pub bucket: Bucket,
    pub source: String,
    pub source_singer: String,
    pub target_singer: String,
    pub refs: Vec<String>,
    pub ssim_to_target: f64,
    pub ssim_to_source: f64,
    pub fpc: f64,
    /// Listening-test scores, filled in externally.
    pub smos: Option<f64>,
    pub nmos: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub id: usize,
    pub error: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                mean: 0.0,
                std: 0.0,
                count,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        Self {
            mean,
            std: var.sqrt(),
            count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub ssim_to_target: Stat,
    pub ssim_to_source: Stat,
    pub fpc: Stat,
    /// Share of trials whose target similarity beats source similarity.
    pub target_wins: f64,
}

impl MetricStats {
    pub fn of<'a>(rows: impl IntoIterator<Item = &'a TrialRow>) -> Self {
        let rows: Vec<&TrialRow> = rows.into_iter().collect();
        let pick = |f: fn(&TrialRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
        let wins = rows.iter().filter(|r| r.ssim_to_target > r.ssim_to_source).count();
        Self {
            ssim_to_target: Stat::of(&pick(|r| r.ssim_to_target)),
            ssim_to_source: Stat::of(&pick(|r| r.ssim_to_source)),
            fpc: Stat::of(&pick(|r| r.fpc)),
            target_wins: if rows.is_empty() {
                0.0
            } else {
                wins as f64 / rows.len() as f64
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub by_scenario: BTreeMap<Scenario, MetricStats>,
    /// Keyed by scenario, then bucket.
    pub by_bucket: BTreeMap<Scenario, BTreeMap<Bucket, MetricStats>>,
}

impl Aggregates {
    pub fn from_rows(rows: &[TrialRow]) -> Self {
        let mut by_scenario = BTreeMap::new();
        let mut by_bucket: BTreeMap<Scenario, BTreeMap<Bucket, MetricStats>> = BTreeMap::new();
        for sc in [Scenario::Seen, Scenario::Unseen] {
            let in_sc: Vec<&TrialRow> = rows.iter().filter(|r| r.scenario == sc).collect();
            if in_sc.is_empty() {
                continue;
            }
            by_scenario.insert(sc, MetricStats::of(in_sc.iter().copied()));
            for b in Bucket::ALL {
                let in_b: Vec<&TrialRow> = in_sc.iter().copied().filter(|r| r.bucket == b).collect();
                if !in_b.is_empty() {
                    by_bucket.entry(sc).or_default().insert(b, MetricStats::of(in_b));
                }
            }
        }
        Self {
            by_scenario,
            by_bucket,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub seed: u64,
    pub w: f64,
    /// Conversion seed of each trial, by trial id.
    pub trial_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub meta: ReportMeta,
    pub trials: Vec<TrialRow>,
    pub aggregates: Aggregates,
    pub failures: Vec<TrialFailure>,
    pub failure_count: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(SvcError::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn trial_seed(root: u64, trial: &Trial) -> u64 {
    derive_seed(root, "trial", trial.id as u64)
}

/// Contour re-extracted from converted audio, trimmed to the intended length.
fn realised_f0(fe: &FrontEnd, audio: &AudioClip, frames: usize) -> Result<F0Contour> {
    let mut f = fe.f0(audio)?;
    f.hz.truncate(frames);
    if f.len() != frames {
        return Err(SvcError::Shape("converted audio is shorter than its source".into()));
    }
    Ok(f)
}

fn score(
    trial: &Trial,
    clips: &[AudioClip],
    converter: &Converter,
    root_seed: u64,
    w: f64,
) -> Result<(f64, f64, f64)> {
    let get = |i: usize| {
        clips
            .get(i)
            .cloned()
            .ok_or_else(|| SvcError::InvalidArgument(format!("no clip for manifest entry {i}")))
    };
    let refs = trial.refs.iter().map(|&i| get(i)).collect::<Result<Vec<_>>>()?;
    let source_refs = trial.source_refs.iter().map(|&i| get(i)).collect::<Result<Vec<_>>>()?;
    let req = ConversionRequest::new(get(trial.source)?, refs.clone(), w, trial_seed(root_seed, trial))?;
    let out = converter.convert(&req, &Overrides::default())?;
    let vae = &converter.vae;
    let e_conv = vae.speaker_embed(std::slice::from_ref(&out.audio))?;
    let e_src = vae.speaker_embed(&source_refs)?;
    let realised = realised_f0(&vae.fe, &out.audio, out.f0.len())?;
    Ok((
        ssim(&e_conv, &out.speaker)?,
        ssim(&e_conv, &e_src)?,
        fpc(&out.f0, &realised)?,
    ))
}

/// Converts and scores every trial. Failures are recorded, not fatal.
/// `clips` holds the audio of every manifest entry, by index.
pub fn evaluate(
    trials: &[Trial],
    manifest: &DatasetManifest,
    clips: &[AudioClip],
    converter: &Converter,
    root_seed: u64,
    w: f64,
) -> MetricsReport {
    let results: Vec<Result<(f64, f64, f64)>> = trials
        .par_iter()
        .map(|t| score(t, clips, converter, root_seed, w))
        .collect();
    let path = |i: usize| manifest.entries.get(i).map(|e| e.path.clone()).unwrap_or_default();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (t, r) in trials.iter().zip(results) {
        match r {
            Ok((to_target, to_source, f)) => rows.push(TrialRow {
                id: t.id,
                scenario: t.scenario,
                bucket: t.bucket,
                source: path(t.source),
                source_singer: t.source_singer.clone(),
                target_singer: t.target_singer.clone(),
                refs: t.refs.iter().map(|&i| path(i)).collect(),
                ssim_to_target: to_target,
                ssim_to_source: to_source,
                fpc: f,
                smos: None,
                nmos: None,
            }),
            Err(e) => failures.push(TrialFailure {
                id: t.id,
                error: e.to_string(),
            }),
        }
    }
    MetricsReport {
        meta: ReportMeta {
            config_hash: converter.config().hash(),
            seed: root_seed,
            w,
            trial_seeds: trials.iter().map(|t| trial_seed(root_seed, t)).collect(),
        },
        aggregates: Aggregates::from_rows(&rows),
        failure_count: failures.len(),
        trials: rows,
        failures,
    }
}

// ---------------------------------------------------------------- charts

const METRICS: [(&str, &str); 3] = [
    ("ssim_to_target", "#3b6ea5"),
    ("ssim_to_source", "#c8553d"),
    ("fpc", "#588b3b"),
];

/// Grouped bars of per-bucket means for one scenario. Buckets absent from
/// the report are left out.
pub fn chart_svg(report: &MetricsReport, scenario: Scenario) -> String {
    let empty = BTreeMap::new();
    let buckets = report.aggregates.by_bucket.get(&scenario).unwrap_or(&empty);
    let (w, h) = (120 + 150 * buckets.len().max(1), 300);
    let (top, base) = (40.0, 240.0);
    let span = (base - top) / 2.0; // values in [-1, 1]
    let zero = top + span;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"10\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">{} singers</text>",
        scenario.name()
    );
    let _ = writeln!(
        s,
        "<line x1=\"60\" y1=\"{zero:.1}\" x2=\"{}\" y2=\"{zero:.1}\" stroke=\"black\"/>",
        w - 20
    );
    for (v, y) in [(1.0, top), (0.0, zero), (-1.0, base)] {
        let _ = writeln!(
            s,
            "<text x=\"30\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{v:.0}</text>",
            y + 4.0
        );
    }
    for (g, (bucket, stats)) in buckets.iter().enumerate() {
        let x0 = 80.0 + 150.0 * g as f64;
        let values = [stats.ssim_to_target.mean, stats.ssim_to_source.mean, stats.fpc.mean];
        for (k, ((_, colour), v)) in METRICS.iter().zip(values).enumerate() {
            let v = v.clamp(-1.0, 1.0);
            let hgt = (v.abs() * span).max(0.5);
            let y = if v >= 0.0 { zero - hgt } else { zero };
            let _ = writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"36\" height=\"{hgt:.1}\" fill=\"{colour}\"/>",
                x0 + 40.0 * k as f64
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{} (n={})</text>",
            x0 + 20.0,
            base + 30.0,
            bucket.name(),
            stats.fpc.count
        );
    }
    for (k, (name, colour)) in METRICS.iter().enumerate() {
        let x = 80 + 150 * k;
        let _ = writeln!(s, "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{colour}\"/>", h - 16);
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{name}</text>",
            x + 14,
            h - 7
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `metrics_<scenario>.svg` for each scenario with results.
pub fn plot_report(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for sc in report.aggregates.by_scenario.keys() {
        let p = dir.join(format!("metrics_{}.svg", sc.name()));
        std::fs::write(&p, chart_svg(report, *sc))?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::ManifestEntry;

    fn manifest(singers: &[(&str, Split, usize)]) -> DatasetManifest {
        let mut entries = Vec::new();
        for &(s, split, n) in singers {
            for k in 0..n {
                entries.push(ManifestEntry {
                    path: format!("{s}_{k}.wav"),
                    singer_id: s.to_string(),
                    split,
                });
            }
        }
        DatasetManifest::new(entries, ".")
    }

    fn classes(ids: &[(&str, PitchClass)]) -> SingerClasses {
        ids.iter().map(|(s, c)| (s.to_string(), *c)).collect()
    }

    #[test]
    fn pair_counts_and_invariants() {
        let m = manifest(&[
            ("a", Split::TestSeen, 2),
            ("b", Split::TestSeen, 2),
            ("c", Split::TestSeen, 2),
            ("a", Split::Train, 3),
            ("u", Split::TestUnseen, 3),
            ("v", Split::TestUnseen, 1),
        ]);
        let cl = classes(&[
            ("a", PitchClass::Low),
            ("b", PitchClass::High),
            ("c", PitchClass::High),
            ("u", PitchClass::Low),
            ("v", PitchClass::High),
        ]);
        let seen = build_pairs(&m, Scenario::Seen, &cl).unwrap();
        assert_eq!(seen.len(), 12);
        assert!(seen.iter().all(|t| t.source_singer != t.target_singer));
        assert_eq!(seen.iter().filter(|t| t.bucket == Bucket::L2H).count(), 4);
        assert_eq!(seen.iter().map(|t| t.id).collect::<Vec<_>>(), (0..12).collect::<Vec<_>>());
        let unseen = build_pairs(&m, Scenario::Unseen, &cl).unwrap();
        assert_eq!(unseen.len(), 4);
        assert!(unseen.iter().all(|t| ["u", "v"].contains(&t.target_singer.as_str())));
        assert_eq!(build_pairs(&m, Scenario::Seen, &cl).unwrap(), seen);
    }

    #[test]
    fn pair_errors() {
        let m = manifest(&[("a", Split::TestSeen, 2)]);
        let cl = classes(&[("a", PitchClass::Low)]);
        assert!(build_pairs(&m, Scenario::Seen, &cl).is_err());
        let m = manifest(&[("a", Split::TestUnseen, 1), ("b", Split::TestUnseen, 1), ("a", Split::Train, 1)]);
        let cl = classes(&[("a", PitchClass::Low), ("b", PitchClass::Low)]);
        assert!(build_pairs(&m, Scenario::Unseen, &cl).is_err());
        let m = manifest(&[("a", Split::TestSeen, 1), ("b", Split::TestSeen, 1)]);
        assert!(build_pairs(&m, Scenario::Seen, &classes(&[("a", PitchClass::Low)])).is_err());
    }

    #[test]
    fn median_split_classes() {
        let c = |v: f64| F0Contour::new(vec![v, 0.0, v], 256).unwrap();
        let got = classes_from_pitch(&[
            ("a".into(), c(110.0)),
            ("b".into(), c(300.0)),
            ("c".into(), c(250.0)),
            ("d".into(), c(120.0)),
        ])
        .unwrap();
        assert_eq!(got["a"], PitchClass::Low);
        assert_eq!(got["b"], PitchClass::High);
        assert_eq!(got["c"], PitchClass::High);
        assert_eq!(got["d"], PitchClass::Low);
    }

    fn row(id: usize, scenario: Scenario, bucket: Bucket, t: f64, s: f64, f: f64) -> TrialRow {
        TrialRow {
            id,
            scenario,
            bucket,
            source: String::new(),
            source_singer: "a".into(),
            target_singer: "b".into(),
            refs: vec![],
            ssim_to_target: t,
            ssim_to_source: s,
            fpc: f,
            smos: None,
            nmos: None,
        }
    }

    #[test]
    fn aggregates_match_hand_means() {
        let rows = vec![
            row(0, Scenario::Seen, Bucket::L2H, 0.5, 0.1, 0.9),
            row(1, Scenario::Seen, Bucket::L2H, 0.7, 0.8, 0.7),
            row(2, Scenario::Seen, Bucket::H2H, 0.3, 0.2, 0.8),
            row(3, Scenario::Unseen, Bucket::L2L, 0.2, 0.4, 1.0),
        ];
        let a = Aggregates::from_rows(&rows);
        let seen = &a.by_scenario[&Scenario::Seen];
        assert_eq!(seen.ssim_to_target.count, 3);
        assert!((seen.ssim_to_target.mean - 0.5).abs() < 1e-15);
        assert!((seen.target_wins - 2.0 / 3.0).abs() < 1e-15);
        let l2h = &a.by_bucket[&Scenario::Seen][&Bucket::L2H];
        assert!((l2h.ssim_to_source.mean - 0.45).abs() < 1e-15);
        assert!((l2h.ssim_to_source.std - 0.35).abs() < 1e-15);
        assert!(!a.by_bucket[&Scenario::Seen].contains_key(&Bucket::L2L));
        assert_eq!(Aggregates::from_rows(&[]), Aggregates::default());
    }

    #[test]
    fn report_json_round_trip_and_chart() {
        let rows = vec![
            row(0, Scenario::Seen, Bucket::L2L, 0.5, 0.1, 0.9),
            row(1, Scenario::Seen, Bucket::L2H, 0.7, -0.3, 0.7),
            row(2, Scenario::Seen, Bucket::H2L, 0.3, 0.2, 0.8),
            row(3, Scenario::Seen, Bucket::H2H, 0.2, 0.4, 1.0),
        ];
        let report = MetricsReport {
            meta: ReportMeta {
                config_hash: "x".into(),
                seed: 1,
                w: 0.3,
                trial_seeds: vec![1, 2, 3, 4],
            },
            aggregates: Aggregates::from_rows(&rows),
            trials: rows,
            failures: vec![],
            failure_count: 0,
        };
        let json = report.to_json().unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(json.contains("\"smos\": null"));
        let svg = chart_svg(&report, Scenario::Seen);
        assert_eq!(svg.matches("(n=").count(), 4);
        assert_eq!(svg, chart_svg(&back, Scenario::Seen));
        assert_eq!(chart_svg(&report, Scenario::Unseen).matches("(n=").count(), 0);
        let dir = tempfile::tempdir().unwrap();
        let files = plot_report(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        assert!(files[0].ends_with("metrics_seen.svg"));
    }

    #[test]
    fn ssim_self_and_orthogonal() {
        let a = SpeakerEmbedding::from_raw(vec![0.3, -1.2, 2.0]).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let x = SpeakerEmbedding::from_raw(vec![1.0, 0.0]).unwrap();
        let y = SpeakerEmbedding::from_raw(vec![0.0, 1.0]).unwrap();
        assert_eq!(ssim(&x, &y).unwrap(), 0.0);
    }
}
