//! Command implementations behind the `simassoc` binary.
//!
//! Data directory layout:
//!
//! ```text
//! <data>/config.toml          effective config of the generating run
//! <data>/{train,test}/NAME.json       scenario
//! <data>/{train,test}/NAME.txt        KITTI tracking labels
//! <data>/{train,test}/NAME.poses.txt  ego poses
//! ```
//!
//! Every file written here is a pure function of the config and inputs;
//! timings only go to the log and the returned summaries.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::assocnet::{train_assocnet, AssocNet, AssocNetError, AssocTrainError, AssocTrainReport};
use crate::association::{ScoreError, Scorer};
use crate::baselines::CostKind;
use crate::config::{ConfigError, RunConfig};
use crate::data::{
    generate_benchmark, generate_test_set, parse_ego_poses, parse_kitti_records, records_to_scenario, scenario_to_records,
    simulate_detections, write_ego_poses, write_kitti_records, KittiError, KittiRecord, Scenario, ScenarioError,
};
use crate::eval::{evaluate, frames_from_records, EvalObject, MotReport};
use crate::rng;
use crate::simnet::{train_simnet, GridGeometry, SimNet, SimNetError, TrainReport};
use crate::tensor::{Checkpoint, CheckpointError};
use crate::tracker::{Associate, AssociateError, Associator, Solver, Tracker, TrackerCounters};

/// Environment variable naming the default data directory.
pub const DATA_ENV: &str = "SIMASSOC_DATA";
pub const SIMNET_FILE: &str = "simnet.ckpt";
pub const ASSOCNET_FILE: &str = "assocnet.ckpt";
pub const TRAIN_LOG: &str = "train.log.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Kitti(#[from] KittiError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    SimNet(#[from] SimNetError),
    #[error(transparent)]
    AssocNet(#[from] AssocNetError),
    #[error(transparent)]
    AssocTrain(#[from] AssocTrainError),
    #[error(transparent)]
    Associate(#[from] AssociateError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    MissingData(String),
    #[error("{0}")]
    Mismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Writes the effective config next to a command's outputs.
pub fn write_config(dir: &Path, cfg: &RunConfig) -> Result<(), PipelineError> {
    write_file(&dir.join("config.toml"), &cfg.to_toml())
}

#[derive(Clone, Debug, Serialize)]
pub struct DataSummary {
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub object_frames: usize,
}

fn write_set(dir: &Path, set: &[Scenario], cfg: &RunConfig) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for s in set {
        s.save(&dir.join(format!("{}.json", s.name)))?;
        write_file(&dir.join(format!("{}.txt", s.name)), &write_kitti_records(&scenario_to_records(s, &cfg.kitti.output_class)))?;
        let poses: Vec<_> = s.frames.iter().map(|f| f.pose).collect();
        write_file(&dir.join(format!("{}.poses.txt", s.name)), &write_ego_poses(&poses))?;
    }
    Ok(())
}

/// Generates the training and held-out test sequences under `dir`.
pub fn generate_data(cfg: &RunConfig, dir: &Path) -> Result<DataSummary, PipelineError> {
    let train = generate_benchmark(&cfg.scenario, &cfg.grid, cfg.seed);
    let test = generate_test_set(&cfg.scenario, &cfg.grid, cfg.seed);
    write_set(&dir.join("train"), &train, cfg)?;
    write_set(&dir.join("test"), &test, cfg)?;
    write_config(dir, cfg)?;
    Ok(DataSummary {
        train_sequences: train.len(),
        test_sequences: test.len(),
        object_frames: train.iter().chain(&test).map(Scenario::object_frames).sum(),
    })
}

/// Loads every sequence of a directory, sorted by name: scenario files when
/// present, otherwise KITTI label files (with `NAME.poses.txt` if found).
pub fn load_set(dir: &Path, cfg: &RunConfig) -> Result<Vec<Scenario>, PipelineError> {
    let entries = fs::read_dir(dir).map_err(|_| {
        PipelineError::MissingData(format!("no data at {} (run `simassoc generate-data` first)", dir.display()))
    })?;
    let mut json = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for e in entries {
        let path = e.map_err(io_err(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if let Some(stem) = name.strip_suffix(".json") {
            json.insert(stem.to_string(), path);
        } else if let Some(stem) = name.strip_suffix(".txt").filter(|s| !s.ends_with(".poses")) {
            labels.insert(stem.to_string(), path);
        }
    }
    let out: Vec<Scenario> = if !json.is_empty() {
        json.values().map(|p| Scenario::load(p)).collect::<Result<_, _>>()?
    } else {
        labels
            .iter()
            .map(|(name, p)| read_label_scenario(p, name, cfg))
            .collect::<Result<_, _>>()?
    };
    if out.is_empty() {
        return Err(PipelineError::MissingData(format!("no sequences in {}", dir.display())));
    }
    Ok(out)
}

fn read_label_scenario(path: &Path, name: &str, cfg: &RunConfig) -> Result<Scenario, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let records = parse_kitti_records(&text)?;
    let pose_path = path.with_file_name(format!("{name}.poses.txt"));
    let poses = match fs::read_to_string(&pose_path) {
        Ok(t) => Some(parse_ego_poses(&t, None)?),
        Err(_) => None,
    };
    let frames = poses.as_ref().map_or(0, Vec::len);
    Ok(records_to_scenario(&records, &cfg.kitti.classes, poses.as_deref(), cfg.scenario.frame_rate, name, frames)?)
}

fn open_log(path: &Path) -> Result<std::fs::File, PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))
}

pub fn load_simnet(path: &Path) -> Result<SimNet, PipelineError> {
    let ck = Checkpoint::load(path)
        .map_err(|e| PipelineError::MissingData(format!("simnet checkpoint {}: {e}", path.display())))?;
    Ok(SimNet::from_checkpoint(&ck)?)
}

pub fn load_assocnet(path: &Path) -> Result<AssocNet, PipelineError> {
    let ck = Checkpoint::load(path)
        .map_err(|e| PipelineError::MissingData(format!("assocnet checkpoint {}: {e}", path.display())))?;
    Ok(AssocNet::from_checkpoint(&ck)?)
}

/// Trains SimNet on `data/train`, appending epoch records to
/// `models/train.log.jsonl` and writing `models/simnet.ckpt`.
pub fn train_simnet_cmd(
    cfg: &RunConfig,
    data: &Path,
    models: &Path,
    resume: Option<&Path>,
) -> Result<TrainReport, PipelineError> {
    let scenarios = load_set(&data.join("train"), cfg)?;
    let start = resume.map(load_simnet).transpose()?;
    let mut log = open_log(&models.join(TRAIN_LOG))?;
    let (net, report) = train_simnet(cfg, &scenarios, start, &mut log)?;
    net.to_checkpoint(serde_json::json!({ "best_val_accuracy": report.best_val_accuracy }))
        .save(&models.join(SIMNET_FILE))?;
    write_config(models, cfg)?;
    Ok(report)
}

/// Trains AssocNet on maps scored with `cost`, writing
/// `models/assocnet.ckpt`. The simnet cost reads `models/simnet.ckpt`.
pub fn train_assocnet_cmd(
    cfg: &RunConfig,
    data: &Path,
    models: &Path,
    cost: CostKind,
    resume: Option<&Path>,
) -> Result<AssocTrainReport, PipelineError> {
    let scenarios = load_set(&data.join("train"), cfg)?;
    let simnet = if cost == CostKind::SimNet { Some(load_simnet(&models.join(SIMNET_FILE))?) } else { None };
    let scorer = Scorer::new(cost, simnet.as_ref(), &cfg.baselines, cfg.appearance.channels)?;
    let start = resume.map(load_assocnet).transpose()?;
    let mut log = open_log(&models.join(TRAIN_LOG))?;
    let (net, report) = train_assocnet(cfg, &scenarios, &scorer, start, &mut log)?;
    net.to_checkpoint(serde_json::json!({ "cost": cost.name(), "best_val_accuracy": report.best_val_accuracy }))
        .save(&models.join(ASSOCNET_FILE))?;
    write_config(models, cfg)?;
    Ok(report)
}

/// Tracks of one sequence plus run statistics.
#[derive(Clone, Debug)]
pub struct SequenceRun {
    pub name: String,
    pub records: Vec<KittiRecord>,
    pub counters: TrackerCounters,
    pub frames: usize,
    pub seconds: f64,
}

/// Seed of the detector simulation used for tracking runs.
pub fn detection_seed(cfg: &RunConfig) -> u64 {
    rng::derive(cfg.seed, &[rng::TAG_EVAL])
}

/// Runs the tracker over a scenario's simulated detections.
pub fn track_scenario(cfg: &RunConfig, scenario: &Scenario, assoc: &mut dyn Associate) -> Result<SequenceRun, PipelineError> {
    let dets = simulate_detections(scenario, &cfg.noise, &cfg.grid, &cfg.appearance, detection_seed(cfg));
    let mut tracker = Tracker::new(cfg.tracker);
    let mut records = Vec::new();
    let start = Instant::now();
    let mut last_time = None;
    for (k, frame) in scenario.frames.iter().enumerate() {
        let dt = match last_time {
            Some(t) if frame.timestamp > t => frame.timestamp - t,
            _ => scenario.dt(),
        };
        last_time = Some(frame.timestamp);
        tracker.step(&dets[k], frame.pose, dt, assoc)?;
        records.extend(tracker.records(k, &cfg.kitti.output_class));
    }
    Ok(SequenceRun {
        name: scenario.name.clone(),
        records,
        counters: tracker.counters.clone(),
        frames: scenario.frames.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trained networks needed by a cost/solver combination.
pub struct Models {
    pub simnet: Option<SimNet>,
    pub assocnet: Option<AssocNet>,
}

impl Models {
    /// Loads whatever `cost` and `solver` need from `dir`.
    pub fn load(dir: &Path, cost: CostKind, solver: Solver) -> Result<Self, PipelineError> {
        Self::load_for(dir, &[(cost, solver)])
    }

    pub fn load_for(dir: &Path, combos: &[(CostKind, Solver)]) -> Result<Self, PipelineError> {
        let simnet = if combos.iter().any(|c| c.0 == CostKind::SimNet) { Some(load_simnet(&dir.join(SIMNET_FILE))?) } else { None };
        let assocnet =
            if combos.iter().any(|c| c.1 == Solver::AssocNet) { Some(load_assocnet(&dir.join(ASSOCNET_FILE))?) } else { None };
        Ok(Self { simnet, assocnet })
    }

    pub fn associator<'a>(&'a self, cfg: &'a RunConfig, cost: CostKind, solver: Solver) -> Result<Associator<'a>, PipelineError> {
        let scorer = Scorer::new(cost, self.simnet.as_ref(), &cfg.baselines, cfg.appearance.channels)?;
        Ok(Associator::new(scorer, solver, self.assocnet.as_ref(), GridGeometry::new(&cfg.grid), cfg.baselines.gate)?)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrackSummary {
    pub cost: String,
    pub association: String,
    pub sequences: usize,
    pub frames: usize,
    pub tracks: usize,
    pub births: usize,
    pub deaths: usize,
    /// Mean wall time per frame in milliseconds; logged, never serialized.
    #[serde(skip)]
    pub mean_frame_ms: f64,
}

/// Tracks every sequence of `input`, writing `out/NAME.txt` per sequence.
pub fn track_cmd(
    cfg: &RunConfig,
    input: &Path,
    models: &Models,
    cost: CostKind,
    solver: Solver,
    out: &Path,
) -> Result<TrackSummary, PipelineError> {
    let scenarios = load_set(input, cfg)?;
    let mut assoc = models.associator(cfg, cost, solver)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut summary = TrackSummary {
        cost: cost.name().to_string(),
        association: solver.name().to_string(),
        sequences: scenarios.len(),
        frames: 0,
        tracks: 0,
        births: 0,
        deaths: 0,
        mean_frame_ms: 0.0,
    };
    let mut seconds = 0.0;
    for s in &scenarios {
        let run = track_scenario(cfg, s, &mut assoc)?;
        write_file(&out.join(format!("{}.txt", run.name)), &write_kitti_records(&run.records))?;
        let mut ids: Vec<i64> = run.records.iter().map(|r| r.track_id).collect();
        ids.sort_unstable();
        ids.dedup();
        summary.tracks += ids.len();
        summary.frames += run.frames;
        summary.births += run.counters.births;
        summary.deaths += run.counters.deaths;
        seconds += run.seconds;
    }
    summary.mean_frame_ms = if summary.frames > 0 { seconds * 1e3 / summary.frames as f64 } else { 0.0 };
    write_config(out, cfg)?;
    Ok(summary)
}

fn label_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, PipelineError> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = e.map_err(io_err(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(stem) = name.strip_suffix(".txt").filter(|s| !s.ends_with(".poses")) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

/// CLEAR MOT over matching `NAME.txt` files of a ground-truth and a
/// hypothesis directory. Sequence sets must be identical.
pub fn evaluate_dirs(cfg: &RunConfig, gt: &Path, hyp: &Path) -> Result<MotReport, PipelineError> {
    let g = label_files(gt)?;
    let h = label_files(hyp)?;
    if g.keys().ne(h.keys()) {
        let only_gt: Vec<_> = g.keys().filter(|k| !h.contains_key(*k)).collect();
        let only_hyp: Vec<_> = h.keys().filter(|k| !g.contains_key(*k)).collect();
        return Err(PipelineError::Mismatch(format!(
            "sequence mismatch: missing hypotheses for {only_gt:?}, no ground truth for {only_hyp:?}"
        )));
    }
    let read = |p: &Path| -> Result<Vec<KittiRecord>, PipelineError> {
        Ok(parse_kitti_records(&fs::read_to_string(p).map_err(io_err(p))?)?)
    };
    let mut sequences: Vec<(Vec<Vec<EvalObject>>, Vec<Vec<EvalObject>>)> = Vec::new();
    for (name, gp) in &g {
        let gr: Vec<KittiRecord> = read(gp)?.into_iter().filter(|r| cfg.kitti.classes.contains(&r.kind)).collect();
        let hr = read(&h[name])?;
        let n = gr.iter().chain(&hr).map(|r| r.frame + 1).max().unwrap_or(0);
        sequences.push((frames_from_records(&gr, n), frames_from_records(&hr, n)));
    }
    Ok(evaluate(&sequences, cfg.eval))
}

/// Writes `report.txt` (aligned table) and `report.kv` into `out`.
pub fn write_report(out: &Path, rows: &[(String, MotReport)]) -> Result<(), PipelineError> {
    write_file(&out.join("report.txt"), &MotReport::table(rows))?;
    let kv: String = rows.iter().map(|(label, r)| r.key_values(label)).collect();
    write_file(&out.join("report.kv"), &kv)
}

/// The six cost/solver rows of the ablation, in table order.
pub const ABLATION: [(CostKind, Solver); 6] = [
    (CostKind::Euclidean, Solver::AssocNet),
    (CostKind::Manhattan, Solver::AssocNet),
    (CostKind::Bhattacharyya, Solver::AssocNet),
    (CostKind::ChiSquare, Solver::AssocNet),
    (CostKind::SimNet, Solver::Hungarian),
    (CostKind::SimNet, Solver::AssocNet),
];

pub fn combo_label(cost: CostKind, solver: Solver) -> String {
    format!("{}+{}", cost.name(), solver.name())
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub report: MotReport,
    pub summary: TrackSummary,
}

/// Tracks the sequences of `input` with every ablation combination into
/// `out/LABEL/`, evaluates each against the input labels and writes the
/// table to `out/report.txt` and `out/report.kv`.
pub fn ablate_cmd(cfg: &RunConfig, input: &Path, models: &Models, out: &Path) -> Result<Vec<AblationRow>, PipelineError> {
    let mut rows = Vec::new();
    for (cost, solver) in ABLATION {
        let label = combo_label(cost, solver);
        let dir = out.join(&label);
        let summary = track_cmd(cfg, input, models, cost, solver, &dir)?;
        let report = evaluate_dirs(cfg, input, &dir)?;
        log::info!("{label}: mota {:?} ids {} ({:.2} ms/frame)", report.mota, report.ids, summary.mean_frame_ms);
        rows.push(AblationRow { label, report, summary });
    }
    let table: Vec<(String, MotReport)> = rows.iter().map(|r| (r.label.clone(), r.report.clone())).collect();
    write_report(out, &table)?;
    write_config(out, cfg)?;
    Ok(rows)
}
