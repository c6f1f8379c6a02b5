//! Server-side mission loop: each slot the fleet surfaces, uplinks its
//! samples, the estimate is refreshed, and new commands go out.

pub mod train;
pub mod wire;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{ideal_eibv_policy, random_walk_policy, EibvConfig, RotationPlan, UniformSampler};
use crate::error::{Error, Result};
use crate::estimator::{GprModel, KernelParams, DEFAULT_WINDOW_SLOTS};
use crate::policy::dqn::{compute_rewards, contrast_score, select_actions, RewardWeights};
use crate::policy::net::{Architecture, Workspace, MIN_RESOLUTION};
use crate::policy::replay::Transition;
use crate::policy::state::{render_state, AgentState, CompactState, RenderInput};
use crate::vehicle::{
    collect_samples, consume_energy, fleet_endurance_days, sample_count, speed_fraction, step_slot, Action,
    EnergyModel, SampleSet, VehicleState, DEFAULT_SUBSTEP_S,
};
use crate::world::{
    generate_sequence, Domain, FieldFrame, FieldSequence, Position, SynthParams, Wind, DEFAULT_NOISE_SD, SLOT_SECONDS,
};
use train::Trainer;
use wire::{decode_downlink, decode_uplink, encode_downlink, encode_uplink, DownlinkMsg, UplinkMsg};

/// Seed streams kept apart so that, e.g., evaluation worlds never coincide
/// with training worlds.
pub mod streams {
    pub const TRAIN_WORLD: u64 = 1;
    pub const EVAL_WORLD: u64 = 2;
    pub const TRAIN_SIM: u64 = 3;
    pub const EVAL_SIM: u64 = 4;
    pub const TRAINER: u64 = 5;
    pub const KERNEL_FIT: u64 = 6;
}

/// SplitMix64 over `(base, stream, index)`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    #[default]
    Standard,
    Smoke,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub domain: DomainKind,
    pub synth: SynthParams,
}

impl WorldConfig {
    pub fn domain(&self) -> Domain {
        match self.domain {
            DomainKind::Standard => Domain::standard(),
            DomainKind::Smoke => Domain::smoke(),
        }
    }

    /// Synthetic sequence with frames `0..=slots`, seeded by `seed`.
    pub fn generate(&self, seed: u64, slots: u32) -> Result<FieldSequence> {
        let synth = SynthParams { seed, ..self.synth.clone() };
        generate_sequence(&synth, &self.domain(), slots as usize + 1)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    #[default]
    Gpr,
    /// Ground truth stands in for the estimate; a pipeline check.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub agents: usize,
    pub slots: u32,
    pub estimator: EstimatorKind,
    pub kernel: KernelParams,
    pub window_slots: u32,
    pub noise_sd: f64,
    pub substep_s: f64,
    /// Side of the square state image.
    pub resolution: usize,
    /// Radius of the deployment arc around the mouth.
    pub deploy_distance_m: f64,
    pub initial_positions: Option<Vec<Position>>,
    pub rewards: RewardWeights,
    pub energy: EnergyModel,
    pub uniform_budget: usize,
    /// `None` samples water cells with a flat density.
    pub uniform_bias_m: Option<f64>,
    pub rotation_radius_m: f64,
    pub rotation_samples: usize,
    /// Anomaly threshold used to locate the time-mean plume.
    pub plume_zeta_psu: f64,
    pub eibv: EibvConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            agents: 3,
            slots: 150,
            estimator: EstimatorKind::Gpr,
            kernel: KernelParams::default(),
            window_slots: DEFAULT_WINDOW_SLOTS,
            noise_sd: DEFAULT_NOISE_SD,
            substep_s: DEFAULT_SUBSTEP_S,
            resolution: 64,
            deploy_distance_m: 2000.0,
            initial_positions: None,
            rewards: RewardWeights::default(),
            energy: EnergyModel::default(),
            uniform_budget: 15,
            uniform_bias_m: Some(3000.0),
            rotation_radius_m: 500.0,
            rotation_samples: 5,
            plume_zeta_psu: 1.0,
            eibv: EibvConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(Error::Config("agents must be at least 1".into()));
        }
        if self.agents > u16::MAX as usize {
            return Err(Error::Config("too many agents".into()));
        }
        if self.slots == 0 {
            return Err(Error::Config("slots must be at least 1".into()));
        }
        if let Some(p) = &self.initial_positions {
            if p.len() != self.agents {
                return Err(Error::Config(format!("{} initial positions for {} agents", p.len(), self.agents)));
            }
        }
        if !(1..=crate::vehicle::MAX_SAMPLES_PER_SLOT).contains(&self.rotation_samples) {
            return Err(Error::Config("rotation_samples must lie in [1, 10]".into()));
        }
        if self.resolution < MIN_RESOLUTION {
            return Err(Error::Config(format!("resolution must be at least {MIN_RESOLUTION}")));
        }
        self.rewards.validate()?;
        Ok(())
    }
}

/// Agents evenly spread over +-60 degrees of an arc around the mouth,
/// centered on the direction toward the domain center.
pub fn deployment_positions(domain: &Domain, agents: usize, distance_m: f64) -> Result<Vec<Position>> {
    let mouth = domain.mouth_position();
    let center = Position::new(domain.max_x() / 2.0, domain.max_y() / 2.0);
    let base = (center.y - mouth.y).atan2(center.x - mouth.x);
    let spread = 2.0 * PI / 3.0;
    (0..agents)
        .map(|n| {
            let a = base + ((n + 1) as f64 / (agents + 1) as f64 - 0.5) * spread;
            let p = Position::new(mouth.x + distance_m * a.cos(), mouth.y + distance_m * a.sin());
            if domain.is_water(p) {
                Ok(p)
            } else {
                Err(Error::Config(format!("deployment point {n} at ({:.0}, {:.0}) m is not water", p.x, p.y)))
            }
        })
        .collect()
}

/// `(1/|G|) sum (f - f_hat)^2` over the cells `g`; `estimate` is indexed
/// like the frame.
pub fn mse_on_grid(truth: &FieldFrame, estimate: &[f64], g: &[usize]) -> Result<f64> {
    if g.is_empty() {
        return Err(Error::invalid("evaluation grid is empty"));
    }
    if estimate.len() != truth.salinity.data.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates for {} cells",
            estimate.len(),
            truth.salinity.data.len()
        )));
    }
    Ok(g.iter().map(|&i| (truth.salinity.data[i] as f64 - estimate[i]).powi(2)).sum::<f64>() / g.len() as f64)
}

#[derive(Clone, Debug)]
pub struct DqnNet {
    pub arch: Architecture,
    pub params: Vec<f32>,
}

#[derive(Clone, Debug)]
pub enum Policy {
    Dqn { net: Arc<DqnNet>, epsilon: f64 },
    /// Acts with the online network of the trainer passed alongside.
    Training { epsilon: f64 },
    Random,
    Rotations,
    Eibv,
    Uniform,
    /// The same command every slot.
    Scripted(Action),
}

impl Policy {
    fn uses_network(&self) -> bool {
        matches!(self, Policy::Dqn { .. } | Policy::Training { .. })
    }
}

/// One CSV row: one agent in one slot. The uniform sampler logs a single
/// row per slot with no agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRow {
    pub episode: u64,
    pub slot: u32,
    pub agent: Option<u16>,
    pub alive: bool,
    /// Command executed during the slot.
    pub dir: Option<u8>,
    pub speed_mps: Option<f64>,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub battery_j: Option<f64>,
    pub samples: usize,
    pub reward: Option<f64>,
    pub mse: f64,
    pub contrast: f64,
    pub uplink_bytes: usize,
    pub downlink_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotLog {
    pub slot: u32,
    pub mse: f64,
    pub contrast: f64,
    pub rows: Vec<SlotRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub world_seed: u64,
    pub slots: Vec<SlotLog>,
    /// Slot after which every vehicle was dead, if that happened early.
    pub terminated_early: Option<u32>,
    pub endurance_days: Option<f64>,
}

impl EpisodeLog {
    pub fn mean_mse(&self) -> f64 {
        if self.slots.is_empty() {
            return f64::NAN;
        }
        self.slots.iter().map(|s| s.mse).sum::<f64>() / self.slots.len() as f64
    }

    pub fn rows(&self) -> impl Iterator<Item = &SlotRow> {
        self.slots.iter().flat_map(|s| s.rows.iter())
    }

    pub fn mean_reward(&self) -> Option<f64> {
        let r: Vec<f64> = self.rows().filter_map(|r| r.reward).collect();
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }

    pub fn uplink_bytes(&self) -> usize {
        self.rows().map(|r| r.uplink_bytes).sum()
    }

    pub fn downlink_bytes(&self) -> usize {
        self.rows().map(|r| r.downlink_bytes).sum()
    }

    pub fn max_message_bytes(&self) -> usize {
        self.rows().map(|r| r.uplink_bytes.max(r.downlink_bytes)).max().unwrap_or(0)
    }
}

/// Mutable mission state. Everything the policy path reads lives here and is
/// built from decoded uplinks; ground truth is passed in per call and only
/// touched for motion, sampling, metrics and the ideal baselines.
#[derive(Clone)]
pub struct Simulation {
    cfg: EpisodeConfig,
    domain: Domain,
    f_ocn: f64,
    slot: u32,
    vehicles: Vec<VehicleState>,
    /// Decoded sample sets per agent inside the window.
    history: Vec<Vec<SampleSet>>,
    model: GprModel,
    /// Estimate at every cell at the current slot time.
    estimate: Vec<f64>,
    wind: Wind,
    grid: Vec<usize>,
    grid_pos: Vec<Position>,
    cell_pos: Vec<Position>,
    plan: Option<RotationPlan>,
    sampler: Option<UniformSampler>,
    noise_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    /// Last state and action per agent, awaiting its reward.
    pending: Vec<Option<(Arc<CompactState>, Action)>>,
    speeds: Vec<Vec<f64>>,
    ws: Workspace<f32>,
}

impl Simulation {
    pub fn new(world: &FieldSequence, cfg: &EpisodeConfig, policy: &Policy, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let domain = world.domain().clone();
        if (world.num_slots() as u64) < cfg.slots as u64 + 1 {
            return Err(Error::Config(format!(
                "world has {} frames, episode needs {}",
                world.num_slots(),
                cfg.slots + 1
            )));
        }
        let fleet = !matches!(policy, Policy::Uniform);
        let positions = match (&cfg.initial_positions, fleet) {
            (_, false) => Vec::new(),
            (Some(p), true) => {
                if let Some(bad) = p.iter().position(|q| !domain.is_water(*q)) {
                    return Err(Error::Config(format!("initial position {bad} is not water")));
                }
                p.clone()
            }
            (None, true) => deployment_positions(&domain, cfg.agents, cfg.deploy_distance_m)?,
        };
        let plan = match policy {
            Policy::Rotations => {
                Some(RotationPlan::along_plume(world, cfg.agents, cfg.rotation_radius_m, cfg.plume_zeta_psu)?)
            }
            _ => None,
        };
        let sampler = match policy {
            Policy::Uniform => Some(UniformSampler::new(&domain, cfg.uniform_budget, cfg.uniform_bias_m)?),
            _ => None,
        };
        let vehicles: Vec<VehicleState> = positions
            .iter()
            .enumerate()
            .map(|(n, &p)| {
                let mut v = VehicleState::new(n as u16, p, &cfg.energy);
                if let Some(plan) = &plan {
                    v.pos = plan.position_at(n, 0.0);
                }
                v
            })
            .collect();
        let n = vehicles.len();
        let grid = domain.water_indices();
        let cell_pos: Vec<Position> = (0..domain.len()).map(|i| domain.node_position(domain.cell_of_index(i))).collect();
        let grid_pos = grid.iter().map(|&i| cell_pos[i]).collect();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(1);
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
        policy_rng.set_stream(2);
        Ok(Self {
            f_ocn: world.f_ocn(),
            model: GprModel::new(cfg.kernel.clone(), world.f_ocn(), cfg.window_slots)?,
            estimate: vec![world.f_ocn(); domain.len()],
            wind: world.wind_at_slot(0),
            cfg: cfg.clone(),
            domain,
            slot: 0,
            vehicles,
            history: vec![Vec::new(); n],
            grid,
            grid_pos,
            cell_pos,
            plan,
            sampler,
            noise_rng,
            policy_rng,
            pending: vec![None; n],
            speeds: vec![Vec::new(); n],
            ws: Workspace::new(),
        })
    }

    pub fn slot(&self) -> u32 {
        self.slot
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }

    pub fn model(&self) -> &GprModel {
        &self.model
    }

    /// Water cell indices forming the evaluation grid.
    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn history(&self) -> &[Vec<SampleSet>] {
        &self.history
    }

    /// Rendered state of agent `n` from the server's own data.
    pub fn render_agent(&self, n: usize) -> Result<AgentState> {
        let teammates: Vec<SampleSet> =
            self.history.iter().enumerate().filter(|(m, _)| *m != n).flat_map(|(_, h)| h.iter().cloned()).collect();
        render_state(&RenderInput {
            domain: &self.domain,
            f_ocn: self.f_ocn,
            estimate: &self.estimate,
            own: &self.history[n],
            teammates: &teammates,
            slot: self.slot,
            window_slots: self.cfg.window_slots,
            wind: self.wind,
            resolution: self.cfg.resolution,
        })
    }

    /// Rendered states of the live agents, in agent order.
    pub fn states(&self) -> Result<Vec<(usize, AgentState)>> {
        (0..self.vehicles.len()).filter(|&n| self.vehicles[n].alive).map(|n| Ok((n, self.render_agent(n)?))).collect()
    }

    /// Commands for the live agents. Only the ideal baseline reads `truth`.
    pub fn decide(
        &mut self,
        policy: &Policy,
        states: &[(usize, AgentState)],
        truth: &FieldSequence,
        trainer: Option<&Trainer>,
    ) -> Result<Vec<(usize, Action)>> {
        let live: Vec<usize> = (0..self.vehicles.len()).filter(|&n| self.vehicles[n].alive).collect();
        let actions = match policy {
            Policy::Dqn { net, epsilon } => self.network_actions(&net.arch, &net.params, states, *epsilon)?,
            Policy::Training { epsilon } => {
                let t = trainer.ok_or_else(|| Error::invalid("training policy needs a trainer"))?;
                self.network_actions(&t.learner.arch, &t.learner.online, states, *epsilon)?
            }
            Policy::Random => live.iter().map(|_| random_walk_policy(&mut self.policy_rng)).collect(),
            Policy::Rotations => live.iter().map(|_| Action { dir: 0, spd: 1 }).collect(),
            Policy::Eibv => live
                .iter()
                .map(|&n| {
                    ideal_eibv_policy(&self.model, truth, &self.vehicles[n], self.slot, &self.grid_pos, &self.cfg.eibv)
                })
                .collect::<Result<Vec<_>>>()?,
            Policy::Uniform => Vec::new(),
            Policy::Scripted(a) => vec![*a; live.len()],
        };
        Ok(live.into_iter().zip(actions).collect())
    }

    fn network_actions(
        &mut self,
        arch: &Architecture,
        params: &[f32],
        states: &[(usize, AgentState)],
        epsilon: f64,
    ) -> Result<Vec<Action>> {
        let refs: Vec<&AgentState> = states.iter().map(|(_, s)| s).collect();
        select_actions(arch, params, &refs, epsilon, &mut self.policy_rng, &mut self.ws)
    }

    /// Downlinks commands through the codec; returns bytes per agent.
    fn command(&mut self, actions: &[(usize, Action)]) -> Result<Vec<usize>> {
        let mut bytes = vec![0; self.vehicles.len()];
        for &(n, a) in actions {
            let v = &mut self.vehicles[n];
            let wire = encode_downlink(&DownlinkMsg::new(v.agent_id, self.slot, a))?;
            let msg = decode_downlink(&wire)?;
            v.command = msg.action()?;
            bytes[n] = wire.len();
        }
        Ok(bytes)
    }

    fn remember(&mut self, states: Vec<(usize, AgentState)>, actions: &[(usize, Action)]) {
        for ((n, s), &(m, a)) in states.into_iter().zip(actions) {
            debug_assert_eq!(n, m);
            self.pending[n] = Some((Arc::new(CompactState::from_state(&s)), a));
        }
    }

    /// Initial commands from the prior, before the first slot.
    pub fn start(&mut self, world: &FieldSequence, policy: &Policy, trainer: Option<&Trainer>) -> Result<()> {
        let states = if policy.uses_network() { self.states()? } else { Vec::new() };
        let actions = self.decide(policy, &states, world, trainer)?;
        self.command(&actions)?;
        if trainer.is_some() {
            self.remember(states, &actions);
        }
        Ok(())
    }

    /// Advances one slot: motion and sampling, uplink, estimate update,
    /// rendering, decisions, downlink, energy, metrics. With a trainer the
    /// finished transitions are pushed and training steps run.
    pub fn run_slot(
        &mut self,
        world: &FieldSequence,
        policy: &Policy,
        mut trainer: Option<&mut Trainer>,
    ) -> Result<SlotLog> {
        let k = self.slot + 1;
        let last = k == self.cfg.slots;
        let acting: Vec<usize> = (0..self.vehicles.len()).filter(|&n| self.vehicles[n].alive).collect();
        let mut executed = vec![None; self.vehicles.len()];

        // (1) motion and sampling
        let mut raw_sets = Vec::with_capacity(acting.len());
        for &n in &acting {
            let v = &self.vehicles[n];
            let cmd = v.command;
            let (next, track, count) = if let Some(plan) = &self.plan {
                let track = plan.track(n, k, self.cfg.substep_s)?;
                let mut next = v.clone();
                next.pos = track.last().map(|p| p.pos).unwrap_or(v.pos);
                (next, track, self.cfg.rotation_samples)
            } else {
                let (next, track) = step_slot(v, cmd, world, k, self.cfg.substep_s)?;
                let count = sample_count(speed_fraction(v.pos, &track), &mut self.noise_rng);
                (next, track, count)
            };
            let set = collect_samples(v.agent_id, k, &track, world, self.cfg.noise_sd, count, &mut self.noise_rng)?;
            let speed = if self.plan.is_some() { self.plan.as_ref().unwrap().speed_mps } else { cmd.speed_mps() };
            executed[n] = Some((cmd, speed));
            self.vehicles[n] = next;
            raw_sets.push((n, set));
        }

        // (2) uplink through the codec
        let mut uplink_bytes = vec![0; self.vehicles.len()];
        let mut received = Vec::with_capacity(raw_sets.len() + 1);
        let mut own_sets: Vec<Option<SampleSet>> = vec![None; self.vehicles.len()];
        let mut heard: Vec<Option<SampleSet>> = vec![None; self.vehicles.len()];
        for (n, set) in raw_sets {
            let wire = encode_uplink(&UplinkMsg::from_samples(&set)?)?;
            uplink_bytes[n] = wire.len();
            let decoded = decode_uplink(&wire)?.to_samples();
            heard[n] = Some(decoded.clone());
            received.push(decoded);
            // credits look truth up at the exact positions; f32 rounding can
            // push a point near the coast onto a land node
            own_sets[n] = Some(set);
        }
        let mut uniform_count = 0;
        if let Some(sampler) = &self.sampler {
            let set = sampler.sample(world, k, self.cfg.noise_sd, &mut self.noise_rng)?;
            uniform_count = set.records.len();
            received.push(set);
        }

        // previous estimate at the new samples, for the individual credit
        let t_prev = (k - 1) as f64 * SLOT_SECONDS;
        let t_now = k as f64 * SLOT_SECONDS;
        let mut credits: Vec<Vec<(f64, f64)>> = Vec::with_capacity(acting.len());
        for &n in &acting {
            let set = own_sets[n].as_ref().expect("acting agents uplink");
            let pos: Vec<Position> = set.records.iter().map(|r| r.pos).collect();
            let prev = match self.cfg.estimator {
                EstimatorKind::Gpr => self.model.mean_at_time(&pos, t_prev)?,
                EstimatorKind::Oracle => {
                    pos.iter().map(|&p| world.salinity_at(p, t_prev)).collect::<Result<Vec<_>>>()?
                }
            };
            let truth = pos.iter().map(|&p| world.salinity_at(p, t_now)).collect::<Result<Vec<_>>>()?;
            credits.push(prev.into_iter().zip(truth).collect());
        }

        // (3) estimate update
        self.slot = k;
        self.model = self.model.update(&received, k)?;
        self.estimate = match self.cfg.estimator {
            EstimatorKind::Gpr => self.model.mean_at_time(&self.cell_pos, t_now)?,
            EstimatorKind::Oracle => world.frame(k as usize).salinity.data.iter().map(|&v| v as f64).collect(),
        };
        self.wind = world.wind_at_slot(k as usize);
        for (n, set) in heard.into_iter().enumerate() {
            if let Some(set) = set {
                self.history[n].push(set);
            }
            let w = self.cfg.window_slots;
            self.history[n].retain(|s| s.slot + w > k);
        }

        // (7) energy for the slot just flown
        for &n in &acting {
            let (_, speed) = executed[n].expect("acting agents moved");
            self.vehicles[n] = consume_energy(&self.vehicles[n], speed, SLOT_SECONDS, &self.cfg.energy)?;
            self.speeds[n].push(speed);
        }

        // (8) metrics and rewards
        let frame = world.frame(k as usize);
        let mse = mse_on_grid(frame, &self.estimate, &self.grid)?;
        let contrast = contrast_score(frame, self.f_ocn, &self.grid)?;
        let speeds: Vec<f64> = acting.iter().map(|&n| executed[n].unwrap().1).collect();
        let rewards = compute_rewards(mse, contrast, &speeds, &credits, &self.cfg.rewards)?;
        let mut reward_of = vec![None; self.vehicles.len()];
        for (&n, &r) in acting.iter().zip(&rewards) {
            reward_of[n] = Some(r);
        }

        // (4)-(6) states, decisions, downlink
        let need_states = policy.uses_network() && (!last || trainer.is_some());
        let mut states = if need_states { self.states()? } else { Vec::new() };
        if let Some(t) = trainer.as_deref_mut() {
            let mut next_of: Vec<Option<Arc<CompactState>>> = vec![None; self.vehicles.len()];
            for (n, s) in &states {
                next_of[*n] = Some(Arc::new(CompactState::from_state(s)));
            }
            // agents that died this slot still get a terminal next state
            for &n in &acting {
                if next_of[n].is_none() {
                    next_of[n] = Some(Arc::new(CompactState::from_state(&self.render_agent(n)?)));
                }
            }
            for &n in &acting {
                if let (Some((state, action)), Some(next)) = (self.pending[n].take(), next_of[n].clone()) {
                    t.buffer.push(Transition {
                        state,
                        action,
                        reward: reward_of[n].unwrap() as f32,
                        next_state: next,
                        terminal: last || !self.vehicles[n].alive,
                    });
                }
            }
            t.after_slot(k)?;
        }
        let mut downlink_bytes = vec![0; self.vehicles.len()];
        if !last {
            let actions = self.decide(policy, &states, world, trainer.as_deref())?;
            downlink_bytes = self.command(&actions)?;
            if trainer.is_some() {
                self.remember(std::mem::take(&mut states), &actions);
            }
        }

        let mut rows = Vec::with_capacity(self.vehicles.len().max(1));
        for (n, v) in self.vehicles.iter().enumerate() {
            let exec = executed[n];
            rows.push(SlotRow {
                episode: 0,
                slot: k,
                agent: Some(v.agent_id),
                alive: v.alive,
                dir: exec.map(|(a, _)| a.dir),
                speed_mps: exec.map(|(_, s)| s),
                x: Some(v.pos.x),
                y: Some(v.pos.y),
                battery_j: Some(v.battery_j),
                samples: self.history[n].last().filter(|s| s.slot == k).map_or(0, |s| s.records.len()),
                reward: reward_of[n],
                mse,
                contrast,
                uplink_bytes: uplink_bytes[n],
                downlink_bytes: downlink_bytes[n],
            });
        }
        if self.sampler.is_some() {
            rows.push(SlotRow {
                episode: 0,
                slot: k,
                agent: None,
                alive: true,
                dir: None,
                speed_mps: None,
                x: None,
                y: None,
                battery_j: None,
                samples: uniform_count,
                reward: None,
                mse,
                contrast,
                uplink_bytes: 0,
                downlink_bytes: 0,
            });
        }
        Ok(SlotLog { slot: k, mse, contrast, rows })
    }

    pub fn fleet_dead(&self) -> bool {
        !self.vehicles.is_empty() && self.vehicles.iter().all(|v| !v.alive)
    }

    pub fn endurance_days(&self) -> Option<f64> {
        fleet_endurance_days(&self.speeds, &self.cfg.energy).ok()
    }
}

/// Runs `cfg.slots` slots (fewer if the whole fleet dies).
pub fn run_episode(
    world: &FieldSequence,
    cfg: &EpisodeConfig,
    policy: &Policy,
    episode: u64,
    world_seed: u64,
    sim_seed: u64,
    trainer: Option<&mut Trainer>,
) -> Result<EpisodeLog> {
    run_episode_with(world, cfg, policy, episode, world_seed, sim_seed, trainer, |_, _| Ok(()))
}

/// [`run_episode`] with a callback after every slot.
#[allow(clippy::too_many_arguments)]
pub fn run_episode_with(
    world: &FieldSequence,
    cfg: &EpisodeConfig,
    policy: &Policy,
    episode: u64,
    world_seed: u64,
    sim_seed: u64,
    mut trainer: Option<&mut Trainer>,
    mut on_slot: impl FnMut(&Simulation, &SlotLog) -> Result<()>,
) -> Result<EpisodeLog> {
    let mut sim = Simulation::new(world, cfg, policy, sim_seed)?;
    sim.start(world, policy, trainer.as_deref())?;
    let mut slots = Vec::with_capacity(cfg.slots as usize);
    let mut terminated_early = None;
    for _ in 0..cfg.slots {
        let mut log = sim.run_slot(world, policy, trainer.as_deref_mut())?;
        for r in &mut log.rows {
            r.episode = episode;
        }
        on_slot(&sim, &log)?;
        slots.push(log);
        if sim.fleet_dead() && sim.slot() < cfg.slots {
            terminated_early = Some(sim.slot());
            break;
        }
    }
    Ok(EpisodeLog { episode, world_seed, slots, terminated_early, endurance_days: sim.endurance_days() })
}

/// Episode `i` of an evaluation sweep: world and simulation seeds come from
/// the held-out streams.
pub fn run_eval_episode(
    world_cfg: &WorldConfig,
    cfg: &EpisodeConfig,
    policy: &Policy,
    seed: u64,
    i: u64,
) -> Result<EpisodeLog> {
    let world_seed = derive_seed(seed, streams::EVAL_WORLD, i);
    let world = world_cfg.generate(world_seed, cfg.slots)?;
    run_episode(&world, cfg, policy, i, world_seed, derive_seed(seed, streams::EVAL_SIM, i), None)
}

#[cfg(test)]
mod tests;
