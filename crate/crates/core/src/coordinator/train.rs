//! Episode loop around the DQN learner: exploration schedule, replay,
//! periodic checkpoints and per-episode curves.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, run_episode, streams, EpisodeConfig, Policy, WorldConfig};
use crate::error::{Error, Result};
use crate::policy::checkpoint::Checkpoint;
use crate::policy::dqn::{epsilon_at, DqnConfig, Learner};
use crate::policy::net::Architecture;
use crate::policy::replay::{ReplayBuffer, DEFAULT_REPLAY_CAPACITY};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: u64,
    pub pure_explore: u64,
    pub replay_capacity: usize,
    /// Transitions stored before the first gradient step.
    pub warmup_transitions: usize,
    /// Slots between gradient steps.
    pub train_every: u32,
    /// Episodes between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub dqn: DqnConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 6500,
            pure_explore: 1500,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            warmup_transitions: 1000,
            train_every: 1,
            checkpoint_every: 100,
            dqn: DqnConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_every == 0 {
            return Err(Error::Config("train_every must be at least 1".into()));
        }
        if self.dqn.batch_size == 0 || self.replay_capacity < self.dqn.batch_size {
            return Err(Error::Config("replay capacity must hold at least one batch".into()));
        }
        Ok(())
    }
}

/// Learner plus replay and the rng that drives minibatch sampling.
pub struct Trainer {
    pub learner: Learner,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
    warmup: usize,
    train_every: u32,
    losses: Vec<f32>,
    steps: u64,
}

impl Trainer {
    pub fn new(learner: Learner, cfg: &TrainConfig, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            learner,
            buffer: ReplayBuffer::new(cfg.replay_capacity)?,
            rng,
            warmup: cfg.warmup_transitions.max(cfg.dqn.batch_size),
            train_every: cfg.train_every,
            losses: Vec::new(),
            steps: 0,
        })
    }

    /// Called once per slot after the slot's transitions are stored.
    pub fn after_slot(&mut self, slot: u32) -> Result<()> {
        if self.buffer.len() >= self.warmup && slot % self.train_every == 0 {
            let loss = self.learner.train_step(&self.buffer, &mut self.rng)?;
            self.losses.push(loss);
            self.steps += 1;
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn take_mean_loss(&mut self) -> Option<f64> {
        let l = std::mem::take(&mut self.losses);
        (!l.is_empty()).then(|| l.iter().map(|&v| v as f64).sum::<f64>() / l.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: u64,
    pub epsilon: f64,
    pub mean_reward: f64,
    pub mean_mse: f64,
    pub mean_loss: Option<f64>,
    pub endurance_days: Option<f64>,
    pub train_steps: u64,
}

pub struct TrainOutcome {
    pub learner: Learner,
    pub curves: Vec<CurveRow>,
    /// Episodes completed in total, including those before a resume.
    pub episodes_done: u64,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.plq";
pub const CURVES_FILE: &str = "curves.csv";

pub fn write_curves(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Trains for `cfg.episodes` in total. A resumed run starts from the
/// checkpoint's episode count with an empty replay buffer. When `out` is
/// given, checkpoints and `curves.csv` are written there; on divergence the
/// last periodic checkpoint is left in place and the error is returned.
pub fn train(
    world_cfg: &WorldConfig,
    ep_cfg: &EpisodeConfig,
    cfg: &TrainConfig,
    seed: u64,
    out: Option<&Path>,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    ep_cfg.validate()?;
    let (learner, start, rng) = match resume {
        Some(ck) => {
            let start = ck.header.episode;
            let rng = match &ck.header.rng {
                Some(s) => s.restore()?,
                None => trainer_rng(seed),
            };
            if ck.header.resolution != ep_cfg.resolution {
                return Err(Error::Config(format!(
                    "checkpoint resolution {} differs from configured {}",
                    ck.header.resolution, ep_cfg.resolution
                )));
            }
            let mut learner = ck.into_learner()?;
            learner.cfg = cfg.dqn.clone();
            (learner, start, rng)
        }
        None => {
            let mut init = ChaCha8Rng::seed_from_u64(seed);
            init.set_stream(streams::TRAINER + 100);
            let learner = Learner::new(Architecture::new(ep_cfg.resolution)?, cfg.dqn.clone(), &mut init);
            (learner, 0, trainer_rng(seed))
        }
    };
    let mut trainer = Trainer::new(learner, cfg, rng)?;
    let ck_path: Option<PathBuf> = out.map(|d| d.join(CHECKPOINT_FILE));
    let save = |t: &Trainer, episode: u64| -> Result<()> {
        if let Some(p) = &ck_path {
            Checkpoint::from_learner(&t.learner, episode, Some(&t.rng)).save(p)?;
        }
        Ok(())
    };
    let mut curves = Vec::new();
    for e in start..cfg.episodes {
        let epsilon = epsilon_at(e, cfg.episodes, cfg.pure_explore);
        let world_seed = derive_seed(seed, streams::TRAIN_WORLD, e);
        let world = world_cfg.generate(world_seed, ep_cfg.slots)?;
        let sim_seed = derive_seed(seed, streams::TRAIN_SIM, e);
        let policy = Policy::Training { epsilon };
        let log = match run_episode(&world, ep_cfg, &policy, e, world_seed, sim_seed, Some(&mut trainer)) {
            Ok(log) => log,
            Err(err) => {
                if let Some(d) = out {
                    write_curves(&d.join(CURVES_FILE), &curves)?;
                }
                return Err(err);
            }
        };
        curves.push(CurveRow {
            episode: e,
            epsilon,
            mean_reward: log.mean_reward().unwrap_or(f64::NAN),
            mean_mse: log.mean_mse(),
            mean_loss: trainer.take_mean_loss(),
            endurance_days: log.endurance_days,
            train_steps: trainer.steps(),
        });
        if cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0 {
            save(&trainer, e + 1)?;
        }
    }
    let done = cfg.episodes.max(start);
    save(&trainer, done)?;
    if let Some(d) = out {
        write_curves(&d.join(CURVES_FILE), &curves)?;
    }
    Ok(TrainOutcome { learner: trainer.learner, curves, episodes_done: done })
}

fn trainer_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(streams::TRAINER);
    rng
}
