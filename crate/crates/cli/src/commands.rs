use std::fs;
use std::path::{Path, PathBuf};

use dme_core::client::{AuditLog, ClientConfig, HttpClient, TextGenerationClient};
use dme_core::dataset::{
    generate_dataset, validate_logic, Dataset, DatasetConfig, LogicRecord, Manifest, RemoteMaker, SceneRecord, Split,
    DIALOGUES_FILE, LOGIC_FILE, SCENES_FILE,
};
use dme_core::decision::{classify_trajectory, RemoteOptions};
use dme_core::eval::{
    emit_report, judge_logic, render_ablation, trace_coverage, write_report, AblationRow, Judge, JudgeScore,
    OfflineJudge, PlanMetrics, RemoteJudge, ReportFormat, TraceEntry,
};
use dme_core::hbd::{gaze_to_bbox, import_gaze_csv, read_records, BBox};
use dme_core::jsonl::{read_jsonl, write_jsonl, LineDiagnostic};
use dme_core::planner::{
    checkpoint, loss_log_csv, plan_features, train, AblationMode, CueIds, PlannerParams, TrainOutcome, TrainSample,
};
use dme_core::sim::SceneConfig;
use dme_core::{DriverLogicOutput, RuleThresholds, Trajectory};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, RESOLVED_CONFIG};
use crate::{create_dir, CliError, RunLog};

pub const CHECKPOINT_FILE: &str = "checkpoint.dmep";
pub const LOSS_FILE: &str = "loss.csv";
pub const TRAIN_LOG: &str = "train.log";
pub const EVAL_LOG: &str = "eval.log";
pub const EVAL_CONFIG: &str = "eval.toml";
pub const TRACE_FILE: &str = "decision_trace.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const JUDGE_FILE: &str = "judge.json";
pub const AUDIT_FILE: &str = "client_audit.jsonl";

fn http_client(cfg: &ClientConfig) -> Result<HttpClient, CliError> {
    HttpClient::from_config(cfg).map_err(|e| CliError::Usage(format!("client {}: {e}", cfg.endpoint)))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone)]
pub struct GenDataArgs {
    pub seed: u64,
    pub scenes: usize,
    /// Defaults to a fifth of `scenes`.
    pub eval_scenes: Option<usize>,
    pub agents: usize,
    pub out: PathBuf,
    pub augment: bool,
    pub decision_maker: Option<ClientConfig>,
}

pub fn gen_data(args: &GenDataArgs) -> Result<Manifest, CliError> {
    if args.scenes == 0 {
        return Err(CliError::Usage("--scenes must be at least 1".into()));
    }
    let cfg = DatasetConfig {
        seed: args.seed,
        scenes: args.scenes,
        eval_scenes: args.eval_scenes.unwrap_or(args.scenes / 5),
        scene: SceneConfig {
            agents: args.agents,
            ..SceneConfig::default()
        },
        augment: args.augment,
    };
    create_dir(&args.out)?;
    let ds = match &args.decision_maker {
        Some(c) => {
            let client = http_client(c)?;
            let audit = AuditLog::open(args.out.join(AUDIT_FILE)).map_err(|e| CliError::io(&args.out, e))?;
            let remote = RemoteMaker {
                client: &client,
                options: RemoteOptions {
                    max_retries: c.max_retries,
                    ..RemoteOptions::default()
                },
                audit: Some(&audit),
            };
            generate_dataset(&cfg, Some(&remote))?
        }
        None => generate_dataset(&cfg, None)?,
    };
    ds.write(&args.out)?;
    log::info!(
        "wrote {} scenes ({} train, {} eval) to {}",
        ds.manifest.scenes,
        ds.manifest.train,
        ds.manifest.eval,
        args.out.display()
    );
    Ok(ds.manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    if !dir.join(SCENES_FILE).is_file() {
        return Err(CliError::Usage(format!(
            "no dataset at {} (run gen-data first)",
            dir.display()
        )));
    }
    Ok(Dataset::load(dir)?)
}

/// The logic whose texts a mode conditions on; the decision maker's for the
/// cue-free mode as well, since its category is still the audit target.
pub fn mode_logic(mode: AblationMode, l: &LogicRecord) -> &DriverLogicOutput {
    match mode {
        AblationMode::GtText => &l.gt,
        _ => &l.dm,
    }
}

pub fn prepare_samples(
    ds: &Dataset,
    split: Split,
    mode: AblationMode,
    params_dims: &dme_core::planner::PlannerDims,
) -> Vec<TrainSample> {
    ds.split(split)
        .into_iter()
        .map(|i| {
            let l = &ds.logic[i];
            TrainSample::new(
                &ds.scenes[i].scene,
                &mode.cues(&l.gt, &l.dm),
                mode_logic(mode, l).category,
                &ds.vocab,
                params_dims,
            )
        })
        .collect()
}

fn render_ids(ds: &Dataset, ids: &[usize]) -> String {
    ids.iter()
        .map(|&id| ds.vocab.token(id).unwrap_or("?"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Trains per the config and writes checkpoint, loss log, resolved config and
/// run log into `out`.
pub fn train_run(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome, CliError> {
    let tc = cfg.train_config();
    tc.validate()?;
    let ds = load_dataset(&cfg.data.dir)?;
    create_dir(out)?;
    cfg.write_resolved(out)?;
    let log = RunLog::create(&out.join(TRAIN_LOG))?;
    let samples = prepare_samples(&ds, Split::Train, tc.ablation, &tc.dims);
    let w = tc.weights.for_mode(tc.ablation);
    log.line(format!(
        "mode {} ({}): {} training scenes, vocab {}, loss weights {}/{}/{}",
        tc.ablation,
        tc.ablation.label(),
        samples.len(),
        ds.vocab.len(),
        w.imitation,
        w.collision,
        w.consistency
    ));
    if let Some(s) = samples.first() {
        log.line(format!(
            "first sample cues: gaze=[{}] description=[{}] decision=[{}]",
            render_ids(&ds, &s.cues.gaze),
            render_ids(&ds, &s.cues.description),
            render_ids(&ds, &s.cues.decision)
        ));
    }
    let outcome = train(&samples, ds.vocab.len(), &tc)?;
    for e in &outcome.log {
        log.line(format!(
            "epoch {:>3}: total {:.6} imitation {:.6} collision {:.6} consistency {:.6}",
            e.epoch, e.total, e.imitation, e.collision, e.consistency
        ));
    }
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint::save(&outcome.params, &ckpt)?;
    let loss = out.join(LOSS_FILE);
    fs::write(&loss, loss_log_csv(&outcome.log)).map_err(|e| CliError::io(&loss, e))?;
    log.line(format!("checkpoint written to {}", ckpt.display()));
    Ok(outcome)
}

/// Plans every scene of `indices`, splitting the work over `jobs` threads.
/// Output order follows `indices` regardless of `jobs`.
pub fn plan_scenes(
    ds: &Dataset,
    indices: &[usize],
    params: &PlannerParams,
    mode: AblationMode,
    jobs: usize,
) -> Result<Vec<Trajectory>, CliError> {
    let plan_one = |i: usize| {
        let l = &ds.logic[i];
        let cues = CueIds::new(&mode.cues(&l.gt, &l.dm), &ds.vocab, params.dims.max_text_len);
        let features = dme_core::sim::rasterize_bev(&ds.scenes[i].scene).features;
        plan_features(&features, &cues, params)
    };
    let jobs = jobs.clamp(1, indices.len().max(1));
    let chunk = indices.len().div_ceil(jobs).max(1);
    let results: Vec<Vec<_>> = std::thread::scope(|s| {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|&i| plan_one(i)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("planning thread panicked"))
            .collect()
    });
    Ok(results.into_iter().flatten().collect::<Result<Vec<_>, _>>()?)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    /// `None` with `expert` set evaluates the expert trajectories.
    pub checkpoint: Option<PathBuf>,
    pub expert: bool,
    pub data: PathBuf,
    pub report: PathBuf,
    /// Defaults to the mode in the checkpoint's run config.
    pub ablation: Option<AblationMode>,
    pub thresholds: Option<RuleThresholds>,
    pub jobs: usize,
    pub fail_if_l2_above: Option<f64>,
    pub judge: Option<ClientConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolvedEval {
    checkpoint: Option<PathBuf>,
    expert: bool,
    data: PathBuf,
    report: PathBuf,
    ablation: AblationMode,
    thresholds: RuleThresholds,
    jobs: usize,
    fail_if_l2_above: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub metrics: PlanMetrics,
    pub judge: JudgeScore,
    pub scene_ids: Vec<String>,
    pub trajectories: Vec<Trajectory>,
}

fn sibling_config(checkpoint: Option<&PathBuf>) -> Option<RunConfig> {
    let dir = checkpoint?.parent()?;
    let text = fs::read_to_string(dir.join(RESOLVED_CONFIG)).ok()?;
    RunConfig::from_toml(&text).ok()
}

fn mean_judge(ds: &Dataset, indices: &[usize], judge: &dyn Judge) -> JudgeScore {
    let mut acc = [0.0; 4];
    for &i in indices {
        let s = judge_logic(&ds.logic[i].dm, &ds.logic[i].gt, judge);
        for (a, v) in acc
            .iter_mut()
            .zip([s.gaze, s.scene_understanding, s.reasoning, s.decision])
        {
            *a += v;
        }
    }
    let n = indices.len().max(1) as f64;
    JudgeScore {
        gaze: acc[0] / n,
        scene_understanding: acc[1] / n,
        reasoning: acc[2] / n,
        decision: acc[3] / n,
    }
}

/// Plans the held-out scenes, writes report, metrics, judge scores and the
/// decision trace next to the report. A tripped L2 gate returns
/// `CliError::Gate` after all outputs are written.
pub fn eval(args: &EvalArgs) -> Result<EvalOutcome, CliError> {
    let sibling = sibling_config(args.checkpoint.as_ref());
    let mode = args
        .ablation
        .or(sibling.as_ref().map(|c| c.ablation))
        .unwrap_or(AblationMode::DmText);
    let thresholds = args
        .thresholds
        .or(sibling.as_ref().map(|c| c.thresholds))
        .unwrap_or_default();
    let params = match (&args.checkpoint, args.expert) {
        (Some(_), true) => return Err(CliError::Usage("--checkpoint and --expert are exclusive".into())),
        (None, false) => return Err(CliError::Usage("either --checkpoint or --expert is required".into())),
        (Some(p), false) => {
            if !p.is_file() {
                return Err(CliError::Usage(format!("checkpoint {} not found", p.display())));
            }
            Some(checkpoint::load(p)?)
        }
        (None, true) => None,
    };
    let ds = load_dataset(&args.data)?;
    let run_dir = match args.report.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir(&run_dir)?;
    let resolved = ResolvedEval {
        checkpoint: args.checkpoint.clone(),
        expert: args.expert,
        data: args.data.clone(),
        report: args.report.clone(),
        ablation: mode,
        thresholds,
        jobs: args.jobs,
        fail_if_l2_above: args.fail_if_l2_above,
    };
    let cfg_path = run_dir.join(EVAL_CONFIG);
    fs::write(
        &cfg_path,
        toml::to_string_pretty(&resolved).expect("eval config serializes"),
    )
    .map_err(|e| CliError::io(&cfg_path, e))?;
    let log = RunLog::create(&run_dir.join(EVAL_LOG))?;

    let indices = ds.split(Split::Eval);
    if indices.is_empty() {
        return Err(CliError::Usage(format!("{} has no eval scenes", args.data.display())));
    }
    let scene_ids: Vec<String> = indices.iter().map(|&i| ds.scenes[i].id.clone()).collect();
    log.line(format!(
        "evaluating {} scenes in mode {mode}: {}",
        scene_ids.len(),
        scene_ids.join(",")
    ));
    let trajectories = match &params {
        Some(p) => plan_scenes(&ds, &indices, p, mode, args.jobs)?,
        None => indices.iter().map(|&i| ds.scenes[i].scene.expert).collect(),
    };
    let preds: Vec<(Trajectory, &dme_core::sim::Scene)> = trajectories
        .iter()
        .zip(&indices)
        .map(|(t, &i)| (*t, &ds.scenes[i].scene))
        .collect();
    let logic: Vec<DriverLogicOutput> = indices
        .iter()
        .map(|&i| mode_logic(mode, &ds.logic[i]).clone())
        .collect();
    let metrics = PlanMetrics::compute(&preds, &logic, &thresholds)?;

    let trace: Vec<TraceEntry> = preds
        .iter()
        .zip(&logic)
        .zip(&scene_ids)
        .map(|(((t, s), l), id)| TraceEntry {
            scene_id: id.clone(),
            mode: mode.to_string(),
            trajectory: *t,
            classified: classify_trajectory(t, &s.ego, &thresholds),
            logic: l.clone(),
        })
        .collect();
    write_jsonl(run_dir.join(TRACE_FILE), &trace)?;

    let judge = match &args.judge {
        Some(c) => {
            let client = http_client(c)?;
            let audit = AuditLog::open(run_dir.join(AUDIT_FILE)).map_err(|e| CliError::io(&run_dir, e))?;
            let remote = RemoteJudge {
                client: &client as &dyn TextGenerationClient,
                max_attempts: c.max_retries,
                audit: Some(&audit),
            };
            mean_judge(&ds, &indices, &remote)
        }
        None => mean_judge(&ds, &indices, &OfflineJudge),
    };
    write_json(&run_dir.join(JUDGE_FILE), &judge)?;
    write_json(&run_dir.join(METRICS_FILE), &metrics)?;
    emit_report(&metrics, &args.report)?;
    log.line(format!(
        "L2 {:.4}/{:.4}/{:.4} avg {:.4}; collision {:.2}/{:.2}/{:.2} avg {:.2}; mismatch {:.2}",
        metrics.l2_1s,
        metrics.l2_2s,
        metrics.l2_3s,
        metrics.l2_avg,
        metrics.col_1s,
        metrics.col_2s,
        metrics.col_3s,
        metrics.col_avg,
        metrics.mismatch_rate
    ));
    if let Some(limit) = args.fail_if_l2_above {
        if metrics.l2_avg > limit {
            log.line(format!("L2 avg {:.4} exceeds the gate {limit}", metrics.l2_avg));
            return Err(CliError::Gate(format!("L2 avg {:.4} > {limit}", metrics.l2_avg)));
        }
    }
    Ok(EvalOutcome {
        metrics,
        judge,
        scene_ids,
        trajectories,
    })
}

pub const ABLATION_CSV: &str = "table3.csv";
pub const ABLATION_MD: &str = "table3.md";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Table3,
}

/// Trains and evaluates every ablation mode on the same data and seed, then
/// writes the combined report.
pub fn ablate(cfg: &RunConfig, preset: Preset, out: &Path, jobs: usize) -> Result<Vec<AblationRow>, CliError> {
    let Preset::Table3 = preset;
    create_dir(out)?;
    cfg.write_resolved(out)?;
    let log = RunLog::create(&out.join("ablate.log"))?;
    let mut rows = Vec::new();
    let mut shared_ids: Option<Vec<String>> = None;
    for mode in AblationMode::ALL {
        let dir = out.join(mode.as_str());
        let run_cfg = RunConfig {
            ablation: mode,
            ..cfg.clone()
        };
        log.line(format!("training {mode}"));
        train_run(&run_cfg, &dir)?;
        let outcome = eval(&EvalArgs {
            checkpoint: Some(dir.join(CHECKPOINT_FILE)),
            expert: false,
            data: cfg.data.dir.clone(),
            report: dir.join("metrics.csv"),
            ablation: Some(mode),
            thresholds: Some(cfg.thresholds),
            jobs,
            fail_if_l2_above: None,
            judge: None,
        })?;
        log.line(format!("{mode} eval scenes: {}", outcome.scene_ids.join(",")));
        match &shared_ids {
            Some(ids) if *ids != outcome.scene_ids => {
                return Err(CliError::Invalid(format!("{mode} evaluated a different scene set")));
            }
            _ => shared_ids = Some(outcome.scene_ids.clone()),
        }
        rows.push(AblationRow {
            method: mode.label().to_string(),
            metrics: outcome.metrics,
        });
    }
    write_report(out.join(ABLATION_CSV), &render_ablation(&rows, ReportFormat::Csv))?;
    write_report(out.join(ABLATION_MD), &render_ablation(&rows, ReportFormat::Markdown))?;
    Ok(rows)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationSummary {
    pub records: usize,
    /// (file, diagnostic) for every skipped line.
    pub diagnostics: Vec<(String, LineDiagnostic)>,
}

fn check_file(path: &Path, strict: bool, summary: &mut ValidationSummary) -> Result<(), CliError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let (records, diagnostics) = if name.ends_with(".hbd.jsonl") {
        let r = read_records(path, strict)?;
        (r.records.len(), r.diagnostics)
    } else if name == SCENES_FILE {
        let r = read_jsonl(path, strict, |s: &SceneRecord| {
            s.scene.validate().map_err(|e| e.to_string())
        })?;
        (r.records.len(), r.diagnostics)
    } else if name == LOGIC_FILE {
        let r = read_jsonl(path, strict, validate_logic)?;
        (r.records.len(), r.diagnostics)
    } else if name == TRACE_FILE {
        let r = read_jsonl(path, strict, |e: &TraceEntry| {
            if e.trajectory.is_finite() {
                Ok(())
            } else {
                Err("non-finite trajectory".to_string())
            }
        })?;
        (r.records.len(), r.diagnostics)
    } else {
        return Err(CliError::Usage(format!(
            "do not know how to validate {}",
            path.display()
        )));
    };
    summary.records += records;
    summary
        .diagnostics
        .extend(diagnostics.into_iter().map(|d| (path.display().to_string(), d)));
    Ok(())
}

/// Validates one record file or every record file of a dataset directory.
/// Strict mode fails on the first bad line; otherwise bad lines are listed.
pub fn validate(path: &Path, strict: bool) -> Result<ValidationSummary, CliError> {
    let mut summary = ValidationSummary::default();
    if path.is_dir() {
        for f in [
            SCENES_FILE,
            LOGIC_FILE,
            DIALOGUES_FILE,
            dme_core::dataset::AUGMENTED_FILE,
            TRACE_FILE,
        ] {
            let p = path.join(f);
            if p.is_file() {
                check_file(&p, strict, &mut summary)?;
            }
        }
        if summary.records == 0 && summary.diagnostics.is_empty() {
            return Err(CliError::Usage(format!("{} holds no record files", path.display())));
        }
    } else if path.is_file() {
        check_file(path, strict, &mut summary)?;
    } else {
        return Err(CliError::Usage(format!("{} not found", path.display())));
    }
    if strict && !summary.diagnostics.is_empty() {
        return Err(CliError::Invalid(format!("{} bad lines", summary.diagnostics.len())));
    }
    Ok(summary)
}

/// Join coverage of a decision trace over a dataset's eval split. Anything
/// short of full coverage is a gate failure.
pub fn check_trace(trace: &Path, data: &Path) -> Result<f64, CliError> {
    let ds = load_dataset(data)?;
    let entries = read_jsonl(trace, true, |_: &TraceEntry| Ok(()))?.records;
    let ids: Vec<String> = ds
        .split(Split::Eval)
        .into_iter()
        .map(|i| ds.scenes[i].id.clone())
        .collect();
    let coverage = trace_coverage(&ids, &entries);
    if coverage < 1.0 {
        return Err(CliError::Gate(format!(
            "trace covers {:.2}% of {} eval scenes",
            100.0 * coverage,
            ids.len()
        )));
    }
    Ok(coverage)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GazeBoxRecord {
    pub clip: String,
    pub window: u64,
    pub points: usize,
    pub bbox: BBox,
    pub region: String,
}

/// Converts a `clip,frame,x,y` gaze CSV into one box per 24-frame window.
pub fn import_gaze(csv: &Path, out: &Path) -> Result<Vec<GazeBoxRecord>, CliError> {
    let file = fs::File::open(csv).map_err(|e| CliError::io(csv, e))?;
    let windows = import_gaze_csv(file)?;
    let records = windows
        .into_iter()
        .map(|w| {
            let bbox = gaze_to_bbox(&w.trace.points)?;
            Ok(GazeBoxRecord {
                clip: w.clip,
                window: w.index,
                points: w.trace.points.len(),
                region: bbox.render(),
                bbox,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_jsonl(out, &records)?;
    Ok(records)
}
