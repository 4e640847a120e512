//! Stage runner. Every stage reads its inputs from the output directory, so
//! stages can be run together or one invocation at a time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use pel::landscape::{landscape_grid, rigid_grid, LandscapeGrid, Scene};
use pel::metrics::{evaluate_trial, relative_error_field, report_table, FieldEvaluation, TrialEvaluation};
use pel::reconstruct::{assemble_samples, reconstruct, reconstruct_landscape, ReconstructionModel, VectorFieldSamples};
use pel::signal::{average_groups, AveragedTrial, Nominal, Source, TrialSeries};
use pel::simulate::{run_trials, TrialConfig};
use pel::{Error, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Model,
    Simulate,
    Filter,
    Reconstruct,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Model,
        Stage::Simulate,
        Stage::Filter,
        Stage::Reconstruct,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Model => "model",
            Stage::Simulate => "simulate",
            Stage::Filter => "filter",
            Stage::Reconstruct => "reconstruct",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config {
                path: "stages".into(),
                message: format!("unknown stage `{s}`"),
            })
    }
}

/// Parses a comma-separated stage list (or `all`) into execution order.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>> {
    let mut stages: Vec<Stage> = if list.trim() == "all" {
        Stage::ALL.to_vec()
    } else {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Stage::from_str)
            .collect::<Result<_>>()?
    };
    if stages.is_empty() {
        return Err(Error::Config {
            path: "stages".into(),
            message: "no stage given".into(),
        });
    }
    stages.sort();
    stages.dedup();
    Ok(stages)
}

/// File locations inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    fn at(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn config(&self) -> PathBuf {
        self.at("config.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.at("manifest.json")
    }
    pub fn timings(&self) -> PathBuf {
        self.at("timings.json")
    }
    pub fn ground_truth(&self) -> PathBuf {
        self.at("model/ground_truth.csv")
    }
    pub fn rigid(&self) -> PathBuf {
        self.at("model/rigid.csv")
    }
    pub fn trials_dir(&self) -> PathBuf {
        self.at("trials")
    }
    pub fn trial_index(&self) -> PathBuf {
        self.at("trials/index.json")
    }
    pub fn aborted(&self) -> PathBuf {
        self.at("trials/aborted.json")
    }
    pub fn averaged_dir(&self) -> PathBuf {
        self.at("averaged")
    }
    pub fn averaged_index(&self) -> PathBuf {
        self.at("averaged/index.json")
    }
    pub fn reconstruct_dir(&self) -> PathBuf {
        self.at("reconstruct")
    }
    pub fn reconstruct_index(&self) -> PathBuf {
        self.at("reconstruct/index.json")
    }
    pub fn trial_evaluations(&self) -> PathBuf {
        self.at("evaluate/trials.json")
    }
    pub fn field_evaluations(&self) -> PathBuf {
        self.at("evaluate/fields.json")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.at("report")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub file: String,
    pub index: usize,
    pub repetition: usize,
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub f: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionEntry {
    pub source: Source,
    pub f: f64,
    pub model: String,
    pub grid: String,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTrial {
    pub source: Source,
    pub stem: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEvaluations {
    pub evaluations: Vec<TrialEvaluation>,
    pub skipped: Vec<SkippedTrial>,
}

/// Content hashes of every output, plus what produced them. Timings live in
/// a separate file so that reruns produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub hhd_seed: u64,
    pub stages: Vec<Stage>,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub timings: Vec<StageTiming>,
}

/// Runs `stages` in order, writing into `out`.
pub fn run_pipeline(cfg: &RunConfig, stages: &[Stage], out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let layout = Layout::new(out);
    fs::create_dir_all(out)?;
    write_json(&layout.config(), cfg)?;
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();

    let needs_scene = stages.iter().any(|s| matches!(s, Stage::Model | Stage::Simulate));
    let scene = if needs_scene { Some(cfg.scene()?) } else { None };
    let mut timings = Vec::new();
    for &stage in &stages {
        let start = Instant::now();
        info!("stage {} started", stage.as_str());
        match stage {
            Stage::Model => model_stage(cfg, scene.as_ref().expect("scene built"), &layout)?,
            Stage::Simulate => simulate_stage(cfg, scene.as_ref().expect("scene built"), &layout)?,
            Stage::Filter => filter_stage(&layout)?,
            Stage::Reconstruct => reconstruct_stage(cfg, &layout)?,
            Stage::Evaluate => evaluate_stage(cfg, &layout)?,
            Stage::Report => report_stage(&layout)?,
        }
        let seconds = start.elapsed().as_secs_f64();
        info!("stage {} finished in {seconds:.1} s", stage.as_str());
        timings.push(StageTiming { stage, seconds });
    }
    write_json(&layout.timings(), &timings)?;
    let manifest = Manifest {
        config_hash: cfg.hash(),
        master_seed: cfg.sweep.master_seed,
        hhd_seed: cfg.reconstruction.hhd.seed,
        stages,
        files: hash_tree(&layout)?,
    };
    write_json(&layout.manifest(), &manifest)?;
    Ok(RunSummary { manifest, timings })
}

fn model_stage(cfg: &RunConfig, scene: &Scene, layout: &Layout) -> Result<()> {
    let axes = cfg.grid.axes()?;
    let protocol = cfg.protocol();
    fs::create_dir_all(layout.root.join("model"))?;
    landscape_grid(scene, &axes, &protocol, true)?.write_csv(&layout.ground_truth())?;
    rigid_grid(scene, &axes, &protocol, &cfg.rigid)?.write_csv(&layout.rigid())?;
    Ok(())
}

fn trial_stem(cfg: &TrialConfig, repetition: usize) -> String {
    format!("{}_r{repetition}", Nominal::of(cfg).stem())
}

fn simulate_stage(cfg: &RunConfig, scene: &Scene, layout: &Layout) -> Result<()> {
    let dir = layout.trials_dir();
    reset_dir(&dir)?;
    let plan = cfg.sweep.trials();
    let reps = cfg.sweep.repetitions;
    // One batch per orientation shares its model reference across f and
    // repetitions while keeping memory bounded.
    let mut batches: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    for (i, t) in plan.iter().enumerate() {
        batches
            .entry((t.alpha_deg.to_bits(), t.beta_deg.to_bits()))
            .or_default()
            .push(i);
    }
    let mut index = Vec::with_capacity(plan.len());
    let mut aborted = Vec::new();
    for (b, ids) in batches.values().enumerate() {
        let configs: Vec<TrialConfig> = ids.iter().map(|&i| plan[i].clone()).collect();
        info!("simulating orientation {}/{}", b + 1, batches.len());
        for (&i, outcome) in ids.iter().zip(run_trials(scene, &configs)) {
            match outcome {
                Ok(rec) => {
                    let stem = trial_stem(&rec.config, i % reps);
                    let path = dir.join(format!("{stem}.csv"));
                    rec.write_csv(&path)?;
                    rec.write_sidecar(&path.with_extension("json"))?;
                    index.push(TrialEntry {
                        file: format!("{stem}.csv"),
                        index: i,
                        repetition: i % reps,
                        alpha_deg: rec.config.alpha_deg,
                        beta_deg: rec.config.beta_deg,
                        f: rec.config.f,
                        seed: rec.config.seed,
                    });
                }
                Err(mut a) => {
                    warn!("trial {i} aborted: {}", a.reason);
                    a.index = i;
                    aborted.push(a);
                }
            }
        }
    }
    index.sort_by_key(|e| e.index);
    aborted.sort_by_key(|a| a.index);
    write_json(&layout.trial_index(), &index)?;
    write_json(&layout.aborted(), &aborted)?;
    Ok(())
}

fn filter_stage(layout: &Layout) -> Result<()> {
    let index: Vec<TrialEntry> = read_json(&layout.trial_index())?;
    let dir = layout.trials_dir();
    let series = index
        .iter()
        .map(|e| TrialSeries::read_csv(&dir.join(&e.file)))
        .collect::<Result<Vec<_>>>()?;
    let averaged = average_groups(&series)?;
    let out = layout.averaged_dir();
    reset_dir(&out)?;
    let mut files = Vec::with_capacity(averaged.len());
    for avg in &averaged {
        let file = format!("{}.csv", avg.nominal.stem());
        avg.write_csv(&out.join(&file))?;
        files.push(file);
    }
    write_json(&layout.averaged_index(), &files)
}

/// Loads every averaged trial listed by the filter stage.
pub fn load_averaged(layout: &Layout) -> Result<Vec<AveragedTrial>> {
    let files: Vec<String> = read_json(&layout.averaged_index())?;
    let dir = layout.averaged_dir();
    files.iter().map(|f| AveragedTrial::read_csv(&dir.join(f))).collect()
}

fn load_ground_truth(layout: &Layout) -> Result<LandscapeGrid> {
    let path = layout.ground_truth();
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    LandscapeGrid::read_csv(&path)
}

fn frequencies(trials: &[AveragedTrial]) -> Vec<f64> {
    let mut fs: Vec<f64> = trials.iter().map(|t| t.nominal.f).collect();
    fs.sort_by(f64::total_cmp);
    fs.dedup();
    fs
}

fn fmt_f(f: f64) -> String {
    format!("{f}")
}

/// Fits one reconstruction per source and head frequency.
fn reconstruct_stage(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let trials = load_averaged(layout)?;
    let truth = load_ground_truth(layout)?;
    let settings = &cfg.reconstruction;
    let dir = layout.reconstruct_dir();
    reset_dir(&dir)?;
    let mut index = Vec::new();
    for &source in &settings.sources {
        // The model gradient does not depend on f, so identical inputs reuse one fit.
        let mut cache: Option<(VectorFieldSamples, ReconstructionModel)> = None;
        for f in frequencies(&trials) {
            let group: Vec<AveragedTrial> = trials.iter().filter(|t| t.nominal.f == f).cloned().collect();
            let mut samples = assemble_samples(&group, source, (settings.x_range[0], settings.x_range[1]))?;
            if settings.keep < 1.0 {
                samples = samples.subsample(settings.keep, settings.hhd.seed);
            }
            let mut model = match &cache {
                Some((s, m)) if *s == samples => m.clone(),
                _ => {
                    info!("fitting {} at f = {f} Hz on {} samples", source.as_str(), samples.len());
                    let m = reconstruct(&samples, &settings.hhd)?;
                    cache = Some((samples.clone(), m.clone()));
                    m
                }
            };
            let grid = reconstruct_landscape(&mut model, &truth.axes, Some(&truth))?;
            let stem = format!("{}_f{}", source.as_str(), fmt_f(f));
            model.write_json(&dir.join(format!("{stem}.json")))?;
            grid.write_csv(&dir.join(format!("{stem}_grid.csv")))?;
            index.push(ReconstructionEntry {
                source,
                f,
                model: format!("{stem}.json"),
                grid: format!("{stem}_grid.csv"),
                samples: samples.len(),
            });
        }
    }
    write_json(&layout.reconstruct_index(), &index)
}

fn evaluate_stage(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let trials = load_averaged(layout)?;
    let mut evaluations = Vec::new();
    let mut skipped = Vec::new();
    for &source in cfg.reconstruction.sources.iter().filter(|s| s.sensed_channels().is_some()) {
        for t in &trials {
            match evaluate_trial(t, source) {
                Ok(e) => evaluations.push(e),
                Err(e @ (Error::NoAttach | Error::DegenerateWindow { .. })) => {
                    warn!("{} {}: {e}", source.as_str(), t.nominal.stem());
                    skipped.push(SkippedTrial {
                        source,
                        stem: t.nominal.stem(),
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
    let truth = load_ground_truth(layout)?;
    let index: Vec<ReconstructionEntry> = read_json(&layout.reconstruct_index())?;
    let fields = index
        .iter()
        .map(|e| {
            let grid = LandscapeGrid::read_csv(&layout.reconstruct_dir().join(&e.grid))?;
            Ok(FieldEvaluation {
                source: e.source,
                f: e.f,
                error: relative_error_field(&grid, &truth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(layout.root.join("evaluate"))?;
    write_json(&layout.trial_evaluations(), &TrialEvaluations { evaluations, skipped })?;
    write_json(&layout.field_evaluations(), &fields)
}

fn report_stage(layout: &Layout) -> Result<()> {
    let trials: TrialEvaluations = read_json(&layout.trial_evaluations())?;
    let fields: Vec<FieldEvaluation> = read_json(&layout.field_evaluations())?;
    let table = report_table(&trials.evaluations, &fields)?;
    let dir = layout.report_dir();
    reset_dir(&dir)?;
    table.write_csv(&dir.join("report.csv"))?;
    fs::write(dir.join("report.txt"), table.render())?;
    for source in Source::ALL {
        let mut part = table.clone();
        part.rows.retain(|r| r.source == source);
        if part.rows.is_empty() {
            continue;
        }
        part.write_csv(&dir.join(format!("report_{}.csv", source.as_str())))?;
        fs::write(dir.join(format!("report_{}.txt", source.as_str())), part.render())?;
    }
    Ok(())
}

// Stage outputs are replaced wholesale so stale files never reach the manifest.
fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// SHA-256 of every file under the output root except the manifest and timings.
fn hash_tree(layout: &Layout) -> Result<BTreeMap<String, String>> {
    let skip = [layout.manifest(), layout.timings()];
    let mut out = BTreeMap::new();
    let mut stack = vec![layout.root.clone()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if !skip.contains(&path) {
                let rel = path
                    .strip_prefix(&layout.root)
                    .expect("walk stays under root")
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, hex::encode(Sha256::digest(fs::read(&path)?)));
            }
        }
    }
    Ok(out)
}
