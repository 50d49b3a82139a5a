//! Report tables built from a run directory alone:
//!
//! * `report/interventions.tsv`: steps, interventions and rate per episode
//!   plus the overall row, per buffer
//! * `report/per_checkpoint.tsv`: checkpoint k's reward on episode k's start
//! * `report/final.tsv`: final-checkpoint mean and population std over all
//!   starts, with the novice baseline first
//! * `report/losses.tsv`: every epoch of every retrain
//! * `report/reward_dump/<method>_cp<k>_ep<j>.tsv`: reward estimates of the
//!   proposed and executed actions along logged episode j
//! * `report/report.json`: all of the above

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use spar_core::learn::Method;
use spar_core::protocol::{intervention_table, reward_dump, InterventionTable, RewardDumpRow};

use crate::formats::{read_losses, Checkpoint, LossLine};
use crate::run::{
    checkpoint_file, load_buffer, method_dir, slug, MethodEval, NoviceEval, RunDir, NOVICE_EVAL_FILE,
    SHARED_BUFFER_FILE,
};
use crate::Result;

pub const NOVICE_LABEL: &str = "novice";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTable {
    /// `shared` or a method name.
    pub buffer: String,
    pub table: InterventionTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub method: String,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDump {
    pub method: Method,
    pub checkpoint: usize,
    pub episode: u32,
    pub rows: Vec<RewardDumpRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub interventions: Vec<LabeledTable>,
    pub per_checkpoint: Vec<CheckpointRow>,
    pub final_rows: Vec<FinalRow>,
    pub losses: Vec<LossLine>,
    pub reward_dumps: Vec<RewardDump>,
    /// Methods by decreasing final mean, ties by increasing std.
    pub ordering: Vec<String>,
}

fn methods_in(run: &RunDir) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|&m| run.exists(&format!("{}/eval.json", method_dir(m))))
        .collect()
}

pub fn build_report(run: &RunDir) -> Result<EvalReport> {
    let methods = methods_in(run);
    let mut interventions = Vec::new();
    if run.exists(SHARED_BUFFER_FILE) {
        interventions.push(LabeledTable {
            buffer: "shared".into(),
            table: intervention_table(&load_buffer(&run.path(SHARED_BUFFER_FILE))?),
        });
    }
    let mut per_checkpoint = Vec::new();
    let mut final_rows = Vec::new();
    let mut losses = Vec::new();
    let mut reward_dumps = Vec::new();
    if run.exists(NOVICE_EVAL_FILE) {
        let novice: NoviceEval = run.read_json(NOVICE_EVAL_FILE)?;
        final_rows.push(FinalRow {
            method: NOVICE_LABEL.into(),
            mean: novice.baseline.mean,
            std: novice.baseline.std,
            rewards: novice.baseline.rewards(),
        });
    }
    for method in methods {
        let dir = method_dir(method);
        let eval: MethodEval = run.read_json(&format!("{dir}/eval.json"))?;
        let buffer = load_buffer(&run.path(&format!("{dir}/buffer.jsonl")))?;
        if !eval.shared_rollouts {
            interventions.push(LabeledTable {
                buffer: method.name().into(),
                table: intervention_table(&buffer),
            });
        }
        per_checkpoint.push(CheckpointRow {
            method: method.name().into(),
            rewards: eval.per_checkpoint.iter().map(|e| e.reward).collect(),
        });
        final_rows.push(FinalRow {
            method: method.name().into(),
            mean: eval.final_eval.mean,
            std: eval.final_eval.std,
            rewards: eval.final_eval.rewards(),
        });
        losses.extend(read_losses(&run.path(&format!("{dir}/losses.jsonl")))?);
        if let Some(last) = eval.per_checkpoint.len().checked_sub(1) {
            let params = Checkpoint::load(&run.path(&checkpoint_file(method, last)))?.params;
            for t in buffer.trajectories() {
                reward_dumps.push(RewardDump {
                    method,
                    checkpoint: last,
                    episode: t.episode_id,
                    rows: reward_dump(&params, t)?,
                });
            }
        }
    }
    let mut ranked: Vec<&FinalRow> = final_rows.iter().filter(|r| r.method != NOVICE_LABEL).collect();
    ranked.sort_by(|a, b| b.mean.total_cmp(&a.mean).then(a.std.total_cmp(&b.std)));
    Ok(EvalReport {
        ordering: ranked.iter().map(|r| r.method.clone()).collect(),
        interventions,
        per_checkpoint,
        final_rows,
        losses,
        reward_dumps,
    })
}

pub fn interventions_tsv(report: &EvalReport) -> String {
    let mut out = String::from("buffer\tepisode\tsteps\tinterventions\trate\n");
    for lt in &report.interventions {
        for r in &lt.table.rows {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{:.4}", lt.buffer, r.episode, r.steps, r.interventions, r.rate);
        }
        let o = &lt.table.overall;
        let _ = writeln!(out, "{}\toverall\t{}\t{}\t{:.4}", lt.buffer, o.steps, o.interventions, o.rate);
    }
    out
}

pub fn per_checkpoint_tsv(report: &EvalReport) -> String {
    let n = report.per_checkpoint.iter().map(|r| r.rewards.len()).max().unwrap_or(0);
    let mut out = String::from("method");
    for k in 0..n {
        let _ = write!(out, "\tcp{k}");
    }
    out.push('\n');
    for row in &report.per_checkpoint {
        out.push_str(&row.method);
        for r in &row.rewards {
            let _ = write!(out, "\t{r}");
        }
        out.push('\n');
    }
    out
}

pub fn final_tsv(report: &EvalReport) -> String {
    let mut out = String::from("method\tmean\tstd\trewards\n");
    for row in &report.final_rows {
        let rewards: Vec<String> = row.rewards.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}\t{}\t{}\t{}", row.method, row.mean, row.std, rewards.join(","));
    }
    out
}

pub fn losses_tsv(report: &EvalReport) -> String {
    let mut out = String::from(
        "method\tcheckpoint\tepoch\tdirect\treward_bt\trl_surrogate\tpairs\tintervened\tnon_intervened\tgated\treward_margin\tpair_accuracy\n",
    );
    for l in &report.losses {
        let r = &l.report;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.method.name(),
            l.checkpoint,
            r.epoch,
            r.direct,
            r.reward_bt,
            r.rl_surrogate,
            r.pairs,
            r.intervened,
            r.non_intervened,
            r.gated,
            r.reward_margin,
            r.pair_accuracy
        );
    }
    out
}

pub fn reward_dump_tsv(rows: &[RewardDumpRow]) -> String {
    let mut out = String::from("t\tm\tagent\texecuted\ttrue_reward\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", r.t, u8::from(r.m), r.agent, r.executed, r.true_reward);
    }
    out
}

pub fn write_report(run: &mut RunDir, report: &EvalReport) -> Result<()> {
    run.put("report/interventions.tsv", "report", interventions_tsv(report).as_bytes())?;
    run.put("report/per_checkpoint.tsv", "report", per_checkpoint_tsv(report).as_bytes())?;
    run.put("report/final.tsv", "report", final_tsv(report).as_bytes())?;
    run.put("report/losses.tsv", "report", losses_tsv(report).as_bytes())?;
    for d in &report.reward_dumps {
        let rel = format!("report/reward_dump/{}_cp{}_ep{}.tsv", slug(d.method), d.checkpoint, d.episode);
        run.put(&rel, "report", reward_dump_tsv(&d.rows).as_bytes())?;
    }
    run.put_json("report/report.json", "report", report)
}
