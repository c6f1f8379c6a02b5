//! Command implementations behind the `plume` binary. Every command writes
//! `resolved.toml` next to its outputs; rerunning with that file reproduces
//! the CSVs byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coordinator::train::{train, TrainConfig, CHECKPOINT_FILE};
use crate::coordinator::{
    derive_seed, run_episode_with, streams, DqnNet, EpisodeConfig, EpisodeLog, Policy, SlotRow, WorldConfig,
};
use crate::error::{Error, Result};
use crate::estimator::{fit_kernel, FitOptions, KernelFit, KernelParams};
use crate::imaging::{save_side_by_side, FieldImage};
use crate::policy::checkpoint::Checkpoint;
use crate::policy::net::Architecture;
use crate::world::Position;

pub const RESOLVED_FILE: &str = "resolved.toml";
pub const KERNEL_FILE: &str = "kernel.json";
pub const KERNEL_CURVES_FILE: &str = "kernel_curves.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COMPARE_CSV: &str = "compare.csv";
pub const COMPARE_JSON: &str = "compare.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyChoice {
    #[default]
    Dqn,
    Random,
    Rotations,
    Eibv,
    Uniform,
}

impl PolicyChoice {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyChoice::Dqn => "dqn",
            PolicyChoice::Random => "random",
            PolicyChoice::Rotations => "rotations",
            PolicyChoice::Eibv => "eibv",
            PolicyChoice::Uniform => "uniform",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    /// Use `episode.kernel` as given.
    #[default]
    Fixed,
    /// Fit on a freshly generated sequence before running.
    Fit,
    /// Read a `kernel.json` written by `fit-kernel`.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub mode: KernelMode,
    pub path: Option<PathBuf>,
    /// Length of the sequence generated for fitting.
    pub fit_slots: u32,
    pub fit: FitOptions,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            mode: KernelMode::Fixed,
            path: None,
            fit_slots: 400,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub episodes: u64,
    /// Write truth/estimate PNG pairs every `frame_every` slots.
    pub frames: bool,
    pub frame_every: u32,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { episodes: 20, frames: false, frame_every: 25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub policies: Vec<PolicyChoice>,
    pub agents: Vec<usize>,
    pub episodes: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { policies: vec![PolicyChoice::Uniform, PolicyChoice::Rotations], agents: vec![3], episodes: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub policy: PolicyChoice,
    /// Trained network used by the `dqn` policy.
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint to continue training from.
    pub resume: Option<PathBuf>,
    pub world: WorldConfig,
    pub kernel: KernelConfig,
    pub episode: EpisodeConfig,
    pub train: TrainConfig,
    pub evaluate: EvaluateConfig,
    pub compare: CompareConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            policy: PolicyChoice::default(),
            checkpoint: None,
            resume: None,
            world: WorldConfig::default(),
            kernel: KernelConfig::default(),
            episode: EpisodeConfig::default(),
            train: TrainConfig::default(),
            evaluate: EvaluateConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        if let Some(o) = out {
            self.out_dir = o;
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        self.train.validate()?;
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must fit in a signed 64-bit integer".into()));
        }
        Ok(())
    }

    fn prepare_out(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(&self.out_dir)
    }

    fn write_resolved(&self) -> Result<()> {
        fs::write(self.out_dir.join(RESOLVED_FILE), self.to_toml()?)?;
        Ok(())
    }
}

/// Kernel parameters per the config's mode, plus the fit when one ran.
pub fn resolve_kernel(cfg: &RunConfig) -> Result<(KernelParams, Option<KernelFit>)> {
    match cfg.kernel.mode {
        KernelMode::Fixed => Ok((cfg.episode.kernel.clone(), None)),
        KernelMode::File => {
            let path = cfg.kernel.path.as_ref().ok_or_else(|| Error::Config("kernel.path is required".into()))?;
            let params: KernelParams = serde_json::from_slice(&fs::read(path)?)?;
            Ok((params, None))
        }
        KernelMode::Fit => {
            let fit = run_fit(cfg)?;
            Ok((fit.params.clone(), Some(fit)))
        }
    }
}

fn run_fit(cfg: &RunConfig) -> Result<KernelFit> {
    let seq = cfg.world.generate(derive_seed(cfg.seed, streams::KERNEL_FIT, 0), cfg.kernel.fit_slots)?;
    let opts = FitOptions { window_slots: cfg.episode.window_slots, ..cfg.kernel.fit.clone() };
    fit_kernel(&seq, &opts)
}

/// Copy of `cfg` with the kernel pinned into `episode.kernel`.
fn resolved(cfg: &RunConfig) -> Result<RunConfig> {
    cfg.validate()?;
    let (params, _) = resolve_kernel(cfg)?;
    let mut out = cfg.clone();
    out.kernel.mode = KernelMode::Fixed;
    out.episode.kernel = params;
    Ok(out)
}

#[derive(Serialize)]
struct KernelCurveRow {
    kind: &'static str,
    x: f64,
    empirical: f64,
    fitted: f64,
    count: u64,
}

pub fn cmd_fit_kernel(cfg: &RunConfig) -> Result<KernelParams> {
    cfg.validate()?;
    let out = cfg.prepare_out()?;
    let fit = run_fit(cfg)?;
    fs::write(out.join(KERNEL_FILE), serde_json::to_vec_pretty(&fit.params)?)?;
    let mut w = csv::Writer::from_path(out.join(KERNEL_CURVES_FILE))?;
    for (kind, curve) in [("spatial", &fit.spatial), ("temporal", &fit.temporal)] {
        for p in curve {
            w.serialize(KernelCurveRow { kind, x: p.x, empirical: p.empirical, fitted: p.fitted, count: p.count })?;
        }
    }
    w.flush()?;
    cfg.write_resolved()?;
    Ok(fit.params)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let cfg = resolved(cfg)?;
    let out = cfg.prepare_out()?.to_path_buf();
    cfg.write_resolved()?;
    let resume = match &cfg.resume {
        Some(p) => Some(Checkpoint::load(p, Some(&Architecture::new(cfg.episode.resolution)?))?),
        None => None,
    };
    train(&cfg.world, &cfg.episode, &cfg.train, cfg.seed, Some(&out), resume)?;
    Ok(out.join(CHECKPOINT_FILE))
}

fn build_policy(choice: PolicyChoice, cfg: &RunConfig) -> Result<Policy> {
    Ok(match choice {
        PolicyChoice::Dqn => {
            let path = cfg.checkpoint.as_ref().ok_or_else(|| Error::Config("the dqn policy needs `checkpoint`".into()))?;
            let arch = Architecture::new(cfg.episode.resolution)?;
            let ck = Checkpoint::load(path, Some(&arch))?;
            Policy::Dqn { net: Arc::new(DqnNet { arch, params: ck.online }), epsilon: 0.0 }
        }
        PolicyChoice::Random => Policy::Random,
        PolicyChoice::Rotations => Policy::Rotations,
        PolicyChoice::Eibv => Policy::Eibv,
        PolicyChoice::Uniform => Policy::Uniform,
    })
}

/// Statistics over evaluation episodes. `mean_mse` weights every logged
/// slot equally; the quartiles are over per-episode means.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: String,
    pub agents: usize,
    pub episodes: u64,
    pub mean_mse: Option<f64>,
    pub median_mse: Option<f64>,
    pub mse_q1: Option<f64>,
    pub mse_q3: Option<f64>,
    pub endurance_days: Option<f64>,
    pub uplink_bytes: usize,
    pub downlink_bytes: usize,
    pub max_message_bytes: usize,
    pub early_terminations: usize,
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

pub fn summarize(policy: &str, agents: usize, logs: &[EpisodeLog]) -> Summary {
    let slot_mse: Vec<f64> = logs.iter().flat_map(|l| l.slots.iter().map(|s| s.mse)).collect();
    let mut per_episode: Vec<f64> = logs.iter().filter(|l| !l.slots.is_empty()).map(|l| l.mean_mse()).collect();
    per_episode.sort_by(f64::total_cmp);
    let endurance: Vec<f64> = logs.iter().filter_map(|l| l.endurance_days).collect();
    Summary {
        policy: policy.to_string(),
        agents,
        episodes: logs.len() as u64,
        mean_mse: (!slot_mse.is_empty()).then(|| slot_mse.iter().sum::<f64>() / slot_mse.len() as f64),
        median_mse: quantile(&per_episode, 0.5),
        mse_q1: quantile(&per_episode, 0.25),
        mse_q3: quantile(&per_episode, 0.75),
        endurance_days: (!endurance.is_empty()).then(|| endurance.iter().sum::<f64>() / endurance.len() as f64),
        uplink_bytes: logs.iter().map(|l| l.uplink_bytes()).sum(),
        downlink_bytes: logs.iter().map(|l| l.downlink_bytes()).sum(),
        max_message_bytes: logs.iter().map(|l| l.max_message_bytes()).max().unwrap_or(0),
        early_terminations: logs.iter().filter(|l| l.terminated_early.is_some()).count(),
    }
}

/// Held-out evaluation episodes `0..episodes`, optionally writing frames.
fn evaluate_episodes(
    cfg: &RunConfig,
    ep: &EpisodeConfig,
    policy: &Policy,
    episodes: u64,
    frames: Option<&Path>,
) -> Result<Vec<EpisodeLog>> {
    (0..episodes)
        .map(|i| {
            let world_seed = derive_seed(cfg.seed, streams::EVAL_WORLD, i);
            let world = cfg.world.generate(world_seed, ep.slots)?;
            let sim_seed = derive_seed(cfg.seed, streams::EVAL_SIM, i);
            let every = cfg.evaluate.frame_every.max(1);
            run_episode_with(&world, ep, policy, i, world_seed, sim_seed, None, |sim, log| {
                let Some(dir) = frames else { return Ok(()) };
                if log.slot % every != 0 && log.slot != ep.slots {
                    return Ok(());
                }
                let truth: Vec<f64> =
                    world.frame(log.slot as usize).salinity.data.iter().map(|&v| v as f64).collect();
                let marks: Vec<(Position, usize)> = sim
                    .history()
                    .iter()
                    .enumerate()
                    .flat_map(|(n, h)| h.iter().flat_map(move |s| s.records.iter().map(move |r| (r.pos, n))))
                    .collect();
                let panel = |values| FieldImage {
                    domain: world.domain(),
                    values,
                    vmin: 15.0,
                    vmax: world.f_ocn(),
                    marks: marks.clone(),
                    scale: 4,
                };
                save_side_by_side(
                    &panel(&truth),
                    &panel(sim.estimate()),
                    dir.join(format!("ep{i:03}_slot{:03}.png", log.slot)),
                )
            })
        })
        .collect()
}

fn write_rows<'a>(path: &Path, rows: impl Iterator<Item = &'a SlotRow>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<SlotRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Summary> {
    let cfg = resolved(cfg)?;
    let out = cfg.prepare_out()?.to_path_buf();
    cfg.write_resolved()?;
    let policy = build_policy(cfg.policy, &cfg)?;
    let frames = if cfg.evaluate.frames {
        let d = out.join("frames");
        fs::create_dir_all(&d)?;
        Some(d)
    } else {
        None
    };
    let logs = evaluate_episodes(&cfg, &cfg.episode, &policy, cfg.evaluate.episodes, frames.as_deref())?;
    write_rows(&out.join(EPISODES_FILE), logs.iter().flat_map(|l| l.rows()))?;
    let summary = summarize(cfg.policy.name(), cfg.episode.agents, &logs);
    fs::write(out.join(SUMMARY_FILE), serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

/// Runs every listed policy at every listed fleet size on the same held-out
/// worlds.
pub fn cmd_compare(cfg: &RunConfig) -> Result<Vec<Summary>> {
    let cfg = resolved(cfg)?;
    let out = cfg.prepare_out()?.to_path_buf();
    cfg.write_resolved()?;
    let mut table = Vec::new();
    for &choice in &cfg.compare.policies {
        let policy = build_policy(choice, &cfg)?;
        for &agents in &cfg.compare.agents {
            let ep = EpisodeConfig { agents, ..cfg.episode.clone() };
            let logs = evaluate_episodes(&cfg, &ep, &policy, cfg.compare.episodes, None)?;
            table.push(summarize(choice.name(), agents, &logs));
        }
    }
    let mut w = csv::Writer::from_path(out.join(COMPARE_CSV))?;
    for row in &table {
        w.serialize(row)?;
    }
    w.flush()?;
    fs::write(out.join(COMPARE_JSON), serde_json::to_vec_pretty(&table)?)?;
    Ok(table)
}
