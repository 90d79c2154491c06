//! Planning metrics, decision auditing, logic judging and report files.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{generate_with_retry, AuditLog, GenerationRequest, TextGenerationClient, Turn};
use crate::decision::{classify_trajectory, DriverLogicOutput, RuleThresholds};
use crate::encoding::words;
use crate::sim::Scene;
use crate::trajectory::{Trajectory, HORIZON_INDICES};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("length mismatch: {0} predictions vs {1} references")]
    Length(usize, usize),
    #[error("report parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// L2 (m) at 1 s, 2 s, 3 s and their mean.
pub fn l2_at_horizons(pred: &Trajectory, expert: &Trajectory) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (o, &k) in out.iter_mut().zip(HORIZON_INDICES.iter()) {
        let (p, e) = (pred.0[k], expert.0[k]);
        *o = (p[0] - e[0]).hypot(p[1] - e[1]);
    }
    out[3] = (out[0] + out[1] + out[2]) / 3.0;
    out
}

/// Index of the first waypoint that lies in an occupied cell at its own
/// time. Off-grid waypoints never collide.
pub fn first_collision(pred: &Trajectory, scene: &Scene) -> Option<usize> {
    pred.points()
        .iter()
        .enumerate()
        .position(|(k, p)| scene.occupancy_for_waypoint(k).occupied_at(&scene.grid, p[0], p[1]))
}

/// Collision rate (%) at 1 s, 2 s, 3 s and their mean. A trajectory counts
/// as colliding at horizon h when any waypoint up to h collides.
pub fn collision_rate(preds: &[(Trajectory, &Scene)]) -> Result<[f64; 4], EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = [0usize; 3];
    for (traj, scene) in preds {
        if let Some(k) = first_collision(traj, scene) {
            for (c, &h) in counts.iter_mut().zip(HORIZON_INDICES.iter()) {
                if k <= h {
                    *c += 1;
                }
            }
        }
    }
    let n = preds.len() as f64;
    let r = counts.map(|c| 100.0 * c as f64 / n);
    Ok([r[0], r[1], r[2], (r[0] + r[1] + r[2]) / 3.0])
}

/// Percentage of trajectories whose classified maneuver differs from the
/// commanded category.
pub fn decision_mismatch_rate(
    preds: &[(Trajectory, &Scene)],
    logic: &[DriverLogicOutput],
    thresholds: &RuleThresholds,
) -> Result<f64, EvalError> {
    if preds.len() != logic.len() {
        return Err(EvalError::Length(preds.len(), logic.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mismatched = preds
        .iter()
        .zip(logic)
        .filter(|((t, s), l)| classify_trajectory(t, &s.ego, thresholds) != l.category)
        .count();
    Ok(100.0 * mismatched as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub l2_1s: f64,
    pub l2_2s: f64,
    pub l2_3s: f64,
    pub l2_avg: f64,
    pub col_1s: f64,
    pub col_2s: f64,
    pub col_3s: f64,
    pub col_avg: f64,
    pub mismatch_rate: f64,
}

impl PlanMetrics {
    /// Aggregates per-scene results: mean L2 per horizon, collision and
    /// mismatch rates over the set.
    pub fn compute(
        preds: &[(Trajectory, &Scene)],
        logic: &[DriverLogicOutput],
        thresholds: &RuleThresholds,
    ) -> Result<Self, EvalError> {
        if preds.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut l2 = [0.0; 3];
        for (t, s) in preds {
            let h = l2_at_horizons(t, &s.expert);
            for (acc, v) in l2.iter_mut().zip(h) {
                *acc += v;
            }
        }
        let n = preds.len() as f64;
        let l2 = l2.map(|v| v / n);
        let col = collision_rate(preds)?;
        Ok(PlanMetrics {
            l2_1s: l2[0],
            l2_2s: l2[1],
            l2_3s: l2[2],
            l2_avg: (l2[0] + l2[1] + l2[2]) / 3.0,
            col_1s: col[0],
            col_2s: col[1],
            col_3s: col[2],
            col_avg: col[3],
            mismatch_rate: decision_mismatch_rate(preds, logic, thresholds)?,
        })
    }

    fn table2_values(&self) -> [f64; 8] {
        [
            self.l2_1s,
            self.l2_2s,
            self.l2_3s,
            self.l2_avg,
            self.col_1s,
            self.col_2s,
            self.col_3s,
            self.col_avg,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    /// Markdown for `.md` paths, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("md") => ReportFormat::Markdown,
            _ => ReportFormat::Csv,
        }
    }
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

/// L2 then collision columns, each as 1s,2s,3s,Avg, two decimals.
pub fn format_table2_row(m: &PlanMetrics) -> String {
    m.table2_values().map(fmt2).join(",")
}

const TABLE2_CSV_HEADER: &str = "l2_1s,l2_2s,l2_3s,l2_avg,col_1s,col_2s,col_3s,col_avg,mismatch";

pub fn render_metrics(m: &PlanMetrics, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => format!(
            "{TABLE2_CSV_HEADER}\n{},{}\n",
            format_table2_row(m),
            fmt2(m.mismatch_rate)
        ),
        ReportFormat::Markdown => {
            let cells: Vec<String> = m.table2_values().iter().map(|v| fmt2(*v)).collect();
            format!(
                "| L2(m) 1s | L2(m) 2s | L2(m) 3s | L2(m) Avg. | Col.Rate(%) 1s | Col.Rate(%) 2s | Col.Rate(%) 3s | Col.Rate(%) Avg. | Mismatch(%) |\n\
                 |---|---|---|---|---|---|---|---|---|\n\
                 | {} | {} |\n",
                cells.join(" | "),
                fmt2(m.mismatch_rate)
            )
        }
    }
}

fn parse_numbers(cells: &[&str]) -> Result<Vec<f64>, EvalError> {
    cells
        .iter()
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| EvalError::Parse(format!("not a number: '{c}'")))
        })
        .collect()
}

fn markdown_rows(text: &str) -> Vec<Vec<&str>> {
    text.lines()
        .filter(|l| l.trim_start().starts_with('|'))
        .map(|l| l.trim().trim_matches('|').split('|').map(str::trim).collect::<Vec<_>>())
        .filter(|cells| !cells.iter().all(|c| c.chars().all(|ch| ch == '-' || ch == ':')))
        .collect()
}

/// Reads back a report written by `render_metrics` (values at two decimals).
pub fn parse_metrics(text: &str, format: ReportFormat) -> Result<PlanMetrics, EvalError> {
    let values = match format {
        ReportFormat::Csv => {
            let row = text
                .lines()
                .nth(1)
                .ok_or_else(|| EvalError::Parse("missing data row".into()))?;
            parse_numbers(&row.split(',').collect::<Vec<_>>())?
        }
        ReportFormat::Markdown => {
            let rows = markdown_rows(text);
            let row = rows.get(1).ok_or_else(|| EvalError::Parse("missing data row".into()))?;
            parse_numbers(row)?
        }
    };
    if values.len() != 9 {
        return Err(EvalError::Parse(format!("expected 9 values, found {}", values.len())));
    }
    Ok(PlanMetrics {
        l2_1s: values[0],
        l2_2s: values[1],
        l2_3s: values[2],
        l2_avg: values[3],
        col_1s: values[4],
        col_2s: values[5],
        col_3s: values[6],
        col_avg: values[7],
        mismatch_rate: values[8],
    })
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub metrics: PlanMetrics,
}

const TABLE3_CSV_HEADER: &str = "method,L2(m),Col.Rate(%),Mismatch(%)";

pub fn render_ablation(rows: &[AblationRow], format: ReportFormat) -> String {
    let mut s = String::new();
    match format {
        ReportFormat::Csv => {
            s.push_str(TABLE3_CSV_HEADER);
            s.push('\n');
            for r in rows {
                let m = &r.metrics;
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    r.method,
                    fmt2(m.l2_avg),
                    fmt2(m.col_avg),
                    fmt2(m.mismatch_rate)
                );
            }
        }
        ReportFormat::Markdown => {
            s.push_str("| Method | L2(m) | Col.Rate(%) | Mismatch(%) |\n|---|---|---|---|\n");
            for r in rows {
                let m = &r.metrics;
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} |",
                    r.method,
                    fmt2(m.l2_avg),
                    fmt2(m.col_avg),
                    fmt2(m.mismatch_rate)
                );
            }
        }
    }
    s
}

/// `(method, L2 avg, collision avg, mismatch)` rows of an ablation report.
pub fn parse_ablation(text: &str, format: ReportFormat) -> Result<Vec<(String, [f64; 3])>, EvalError> {
    let rows: Vec<Vec<&str>> = match format {
        ReportFormat::Csv => text
            .lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .map(|l| l.split(',').collect())
            .collect(),
        ReportFormat::Markdown => markdown_rows(text).into_iter().skip(1).collect(),
    };
    rows.into_iter()
        .map(|cells| {
            if cells.len() != 4 {
                return Err(EvalError::Parse(format!("expected 4 cells, found {}", cells.len())));
            }
            let v = parse_numbers(&cells[1..])?;
            Ok((cells[0].to_string(), [v[0], v[1], v[2]]))
        })
        .collect()
}

pub fn write_report(path: impl AsRef<Path>, contents: &str) -> Result<(), EvalError> {
    let path = path.as_ref();
    fs::write(path, contents).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes metrics in the format implied by the path's extension.
pub fn emit_report(metrics: &PlanMetrics, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    write_report(path, &render_metrics(metrics, ReportFormat::from_path(path)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub gaze: f64,
    pub scene_understanding: f64,
    pub reasoning: f64,
    pub decision: f64,
}

impl JudgeScore {
    pub fn clamped(self) -> Self {
        let c = |v: f64| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        JudgeScore {
            gaze: c(self.gaze),
            scene_understanding: c(self.scene_understanding),
            reasoning: c(self.reasoning),
            decision: c(self.decision),
        }
    }
}

/// Token-multiset F1 between two texts. Two empty texts score 1.
pub fn token_f1(a: &str, b: &str) -> f64 {
    let (wa, wb) = (words(a), words(b));
    if wa.is_empty() && wb.is_empty() {
        return 1.0;
    }
    if wa.is_empty() || wb.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in &wb {
        *counts.entry(w).or_default() += 1;
    }
    let mut overlap = 0usize;
    for w in &wa {
        if let Some(c) = counts.get_mut(w.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / wa.len() as f64;
    let r = overlap as f64 / wb.len() as f64;
    2.0 * p * r / (p + r)
}

pub trait Judge {
    fn score(&self, pred: &DriverLogicOutput, reference: &DriverLogicOutput) -> JudgeScore;
}

/// Token-overlap judge; the decision dimension scores 1 for a matching
/// category and half the token F1 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineJudge;

impl Judge for OfflineJudge {
    fn score(&self, pred: &DriverLogicOutput, r: &DriverLogicOutput) -> JudgeScore {
        JudgeScore {
            gaze: token_f1(&pred.gaze_text, &r.gaze_text),
            scene_understanding: token_f1(&pred.description_text, &r.description_text),
            reasoning: token_f1(&pred.reasoning_text, &r.reasoning_text),
            decision: if pred.category == r.category {
                1.0
            } else {
                0.5 * token_f1(&pred.decision_text, &r.decision_text)
            },
        }
    }
}

const JUDGE_PROMPT: &str = "You grade a driver's answers against reference answers. Reply with exactly four numbers \
     between 0 and 1, separated by commas: gaze, scene understanding, reasoning, decision.";

/// Judge backed by a text-generation service; falls back to the offline
/// judge when the call fails or the reply cannot be parsed.
pub struct RemoteJudge<'a> {
    pub client: &'a dyn TextGenerationClient,
    pub max_attempts: usize,
    pub audit: Option<&'a AuditLog>,
}

fn parse_four_scores(text: &str) -> Option<JudgeScore> {
    let nums: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .filter_map(|s| s.parse().ok())
        .collect();
    if nums.len() != 4 || nums.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return None;
    }
    Some(JudgeScore {
        gaze: nums[0],
        scene_understanding: nums[1],
        reasoning: nums[2],
        decision: nums[3],
    })
}

impl Judge for RemoteJudge<'_> {
    fn score(&self, pred: &DriverLogicOutput, r: &DriverLogicOutput) -> JudgeScore {
        let labels = ["Gaze", "Scene", "Reasoning", "Decision"];
        let mut body = String::new();
        for ((label, p), q) in labels.iter().zip(pred.texts()).zip(r.texts()) {
            let _ = writeln!(body, "{label}\n  answer: {p}\n  reference: {q}");
        }
        let req = GenerationRequest {
            system: JUDGE_PROMPT.into(),
            turns: vec![Turn::user(body)],
        };
        match generate_with_retry(self.client, &req, self.max_attempts, self.audit, "judge") {
            Ok((text, _)) => parse_four_scores(&text).unwrap_or_else(|| {
                log::warn!("judge reply {text:?} is not four scores, using offline scoring");
                OfflineJudge.score(pred, r)
            }),
            Err(e) => {
                log::warn!("remote judge failed ({e}), using offline scoring");
                OfflineJudge.score(pred, r)
            }
        }
    }
}

pub fn judge_logic(pred: &DriverLogicOutput, reference: &DriverLogicOutput, judge: &dyn Judge) -> JudgeScore {
    judge.score(pred, reference).clamped()
}

/// One line of a run's decision trace: a planned trajectory with the texts
/// that conditioned it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub scene_id: String,
    pub mode: String,
    pub trajectory: Trajectory,
    pub classified: crate::decision::DecisionCategory,
    pub logic: DriverLogicOutput,
}

/// Fraction of `scene_ids` with a trace entry carrying all four texts.
pub fn trace_coverage(scene_ids: &[String], entries: &[TraceEntry]) -> f64 {
    if scene_ids.is_empty() {
        return 1.0;
    }
    let joined: HashSet<&str> = entries
        .iter()
        .filter(|e| !e.logic.decision_text.is_empty() && e.trajectory.is_finite())
        .map(|e| e.scene_id.as_str())
        .collect();
    let hit = scene_ids.iter().filter(|id| joined.contains(id.as_str())).count();
    hit as f64 / scene_ids.len() as f64
}
