//! Run directories and the protocol driver the CLI verbs share.
//!
//! ```text
//! manifest.json                  every file below with its kind and SHA-256
//! world.json  config.json
//! novice.ckpt novice_eval.json
//! shared_buffer.jsonl            novice rollouts every method trains on
//! methods/<method>/cp<k>.ckpt    checkpoint after episode k
//! methods/<method>/losses.jsonl  per-epoch loss reports, all checkpoints
//! methods/<method>/buffer.jsonl  the cumulative buffer the method saw
//! methods/<method>/eval.json     per-checkpoint and final evaluation
//! report/                        tables, see `report`
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spar_core::hitl::{PolicyMode, ReplayBuffer};
use spar_core::learn::Method;
use spar_core::net::NetParams;
use spar_core::protocol::{
    collect_rollouts, coverage_fraction, evaluate, mean_std, pretrain_novice, run_protocol, EvalEpisode,
    ExperimentConfig, ProtocolRun,
};
use spar_core::world::{RiverWorld, StartSpec};

use crate::formats::{
    self, read_trajectories, render_losses, render_trajectories, sha256_hex, world_json, Checkpoint, CheckpointMeta, LossLine,
    LOSS_SCHEMA_VERSION,
};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.json";
pub const WORLD_FILE: &str = "world.json";
pub const NOVICE_FILE: &str = "novice.ckpt";
pub const NOVICE_EVAL_FILE: &str = "novice_eval.json";
pub const SHARED_BUFFER_FILE: &str = "shared_buffer.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub kind: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub files: BTreeMap<String, FileEntry>,
}

/// A run directory and its manifest. Every write goes through [`RunDir::put`]
/// so the manifest always describes the directory.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    /// Opens `root`, creating it and an empty manifest if needed.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(Error::io(&root))?;
        if root.join(MANIFEST_FILE).exists() {
            return Self::open(root);
        }
        let mut run = Self {
            root,
            manifest: Manifest {
                format_version: MANIFEST_FORMAT_VERSION,
                files: BTreeMap::new(),
            },
        };
        run.save_manifest()?;
        Ok(run)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let path = root.join(MANIFEST_FILE);
        let manifest: Manifest = formats::from_json(&path)?;
        if manifest.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::format(path, format!("manifest format_version {}", manifest.format_version)));
        }
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.manifest.files.contains_key(rel)
    }

    pub fn put(&mut self, rel: &str, kind: &str, bytes: &[u8]) -> Result<()> {
        formats::write(&self.path(rel), bytes)?;
        self.manifest.files.insert(
            rel.to_owned(),
            FileEntry {
                kind: kind.to_owned(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(bytes),
            },
        );
        self.save_manifest()
    }

    /// Records a file some other writer produced under the run directory.
    pub fn adopt(&mut self, rel: &str, kind: &str) -> Result<()> {
        let bytes = formats::read(&self.path(rel))?;
        self.manifest.files.insert(
            rel.to_owned(),
            FileEntry {
                kind: kind.to_owned(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            },
        );
        self.save_manifest()
    }

    pub fn put_json<T: Serialize>(&mut self, rel: &str, kind: &str, value: &T) -> Result<()> {
        self.put(rel, kind, &formats::to_json(value))
    }

    pub fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<T> {
        formats::from_json(&self.path(rel))
    }

    /// Every manifest entry exists with the recorded hash.
    pub fn verify(&self) -> Result<()> {
        for (rel, entry) in &self.manifest.files {
            let bytes = formats::read(&self.path(rel))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(Error::format(self.path(rel), "contents differ from the manifest"));
            }
        }
        Ok(())
    }

    fn save_manifest(&mut self) -> Result<()> {
        formats::write(&self.root.join(MANIFEST_FILE), &formats::to_json(&self.manifest))
    }
}

/// Directory-safe method name, e.g. `spar-h`.
pub fn slug(method: Method) -> String {
    method.name().to_ascii_lowercase()
}

pub fn method_dir(method: Method) -> String {
    format!("methods/{}", slug(method))
}

pub fn checkpoint_file(method: Method, k: usize) -> String {
    format!("{}/cp{k}.ckpt", method_dir(method))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mode: PolicyMode,
    pub episodes: Vec<EvalEpisode>,
    pub mean: f64,
    pub std: f64,
}

impl EvalSummary {
    pub fn new(mode: PolicyMode, episodes: Vec<EvalEpisode>) -> Self {
        let rewards: Vec<f64> = episodes.iter().map(|e| e.reward).collect();
        let (mean, std) = mean_std(&rewards);
        Self {
            mode,
            episodes,
            mean,
            std,
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.reward).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoviceEval {
    pub updates: usize,
    pub demo_steps: usize,
    /// Greedy coverage from the default start.
    pub coverage: f64,
    pub baseline: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEval {
    pub method: Method,
    pub shared_rollouts: bool,
    /// Checkpoint k on the start of episode k.
    pub per_checkpoint: Vec<EvalEpisode>,
    pub final_eval: EvalSummary,
}

pub fn load_config(run: &RunDir) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = run.read_json(CONFIG_FILE)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_novice(run: &RunDir) -> Result<NetParams> {
    Ok(Checkpoint::load(&run.path(NOVICE_FILE))?.params)
}

/// Writes the world and config, pretrains the novice and evaluates it on
/// every start.
pub fn pretrain(run: &mut RunDir, cfg: &ExperimentConfig) -> Result<(NetParams, NoviceEval)> {
    cfg.validate()?;
    let world = RiverWorld::new(cfg.world.clone())?;
    run.put(WORLD_FILE, "world", &world_json(&cfg.world))?;
    run.put_json(CONFIG_FILE, "config", cfg)?;
    let outcome = pretrain_novice(&world, cfg.net, &cfg.novice, cfg.seed)?;
    run.put(
        NOVICE_FILE,
        "checkpoint",
        &Checkpoint::new(outcome.params.clone(), CheckpointMeta::novice(cfg.seed)).to_bytes(),
    )?;
    let eval = NoviceEval {
        updates: outcome.updates,
        demo_steps: outcome.demo_steps,
        coverage: outcome.coverage,
        baseline: EvalSummary::new(cfg.eval_mode, evaluate(&world, &outcome.params, &cfg.starts, cfg.seed, cfg.eval_mode)?),
    };
    run.put_json(NOVICE_EVAL_FILE, "novice_eval", &eval)?;
    Ok((outcome.params, eval))
}

/// Scripted-overseer rollouts of `params`, one per configured start.
pub fn collect_shared(run: &mut RunDir, cfg: &ExperimentConfig, params: &NetParams, rel: &str) -> Result<ReplayBuffer> {
    let world = RiverWorld::new(cfg.world.clone())?;
    let buffer = collect_rollouts(&world, params, cfg)?;
    run.put(rel, "trajectories", &render_trajectories(buffer.trajectories()))?;
    Ok(buffer)
}

pub fn load_buffer(path: &Path) -> Result<ReplayBuffer> {
    read_trajectories(path)
}

/// Sequential retraining of one method with every checkpoint, loss log,
/// buffer and evaluation written under `methods/<method>/`.
pub fn train_method(
    run: &mut RunDir,
    cfg: &ExperimentConfig,
    novice: &NetParams,
    method: Method,
    shared: Option<&ReplayBuffer>,
) -> Result<ProtocolRun> {
    let world = RiverWorld::new(cfg.world.clone())?;
    let result = run_protocol(&world, novice, cfg, method, shared)?;
    let mut losses = Vec::new();
    for cp in &result.checkpoints {
        let meta = CheckpointMeta {
            checkpoint_id: Some(cp.id),
            episode: Some(cp.episode),
            method: Some(method),
            hyper: Some(cp.hyper),
            creation_seed: cfg.seed,
        };
        run.put(
            &checkpoint_file(method, cp.id),
            "checkpoint",
            &Checkpoint::new(cp.params.clone(), meta).to_bytes(),
        )?;
        losses.extend(cp.reports.iter().map(|r| LossLine {
            schema_version: LOSS_SCHEMA_VERSION,
            checkpoint: cp.id,
            report: r.clone(),
        }));
    }
    let dir = method_dir(method);
    run.put(&format!("{dir}/losses.jsonl"), "losses", &render_losses(&losses))?;
    run.put(
        &format!("{dir}/buffer.jsonl"),
        "trajectories",
        &render_trajectories(result.buffer.trajectories()),
    )?;
    let eval = MethodEval {
        method,
        shared_rollouts: cfg.shared_rollouts,
        per_checkpoint: result.per_checkpoint.clone(),
        final_eval: EvalSummary::new(cfg.eval_mode, result.final_eval.clone()),
    };
    run.put_json(&format!("{dir}/eval.json"), "method_eval", &eval)?;
    Ok(result)
}

/// Greedy coverage fraction of each evaluation, for reporting.
pub fn coverage_of(world: &RiverWorld, episodes: &[EvalEpisode]) -> Vec<f64> {
    episodes.iter().map(|e| coverage_fraction(world, e)).collect()
}

/// Evaluates arbitrary parameters on `starts` without writing anything.
pub fn evaluate_params(
    cfg: &ExperimentConfig,
    params: &NetParams,
    starts: &[StartSpec],
) -> Result<EvalSummary> {
    let world = RiverWorld::new(cfg.world.clone())?;
    Ok(EvalSummary::new(
        cfg.eval_mode,
        evaluate(&world, params, starts, cfg.seed, cfg.eval_mode)?,
    ))
}

/// The whole protocol into `root`: novice, shared rollouts when configured,
/// every method, and the report.
pub fn run_full(root: impl Into<PathBuf>, cfg: &ExperimentConfig) -> Result<RunDir> {
    let mut run = RunDir::create(root)?;
    let (novice, _) = pretrain(&mut run, cfg)?;
    let shared = if cfg.shared_rollouts {
        Some(collect_shared(&mut run, cfg, &novice, SHARED_BUFFER_FILE)?)
    } else {
        None
    };
    for &method in &cfg.methods {
        train_method(&mut run, cfg, &novice, method, shared.as_ref())?;
    }
    let report = crate::report::build_report(&run)?;
    crate::report::write_report(&mut run, &report)?;
    Ok(run)
}
