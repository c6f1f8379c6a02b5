//! Action selection, rewards, Bellman targets, and the Adam training step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{Architecture, QOutput, Real, Workspace, WIND_FEATURES};
use super::replay::ReplayBuffer;
use super::state::AgentState;
use crate::error::{Error, Result};
use crate::vehicle::{Action, NUM_HEADINGS, NUM_SPEEDS};
use crate::world::FieldFrame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub eta0: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { eta0: 1.0, eta1: 0.1, eta2: 50.0, eta3: 0.05 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.eta0, self.eta1, self.eta2, self.eta3].iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::invalid("reward weights must be finite and non-negative"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Soft target update rate.
    pub tau: f64,
    pub batch_size: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            tau: 0.005,
            batch_size: 64,
        }
    }
}

/// 1.0 during pure exploration, then linear down to 0.05 at `total`.
pub fn epsilon_at(episode: u64, total: u64, pure_explore: u64) -> f64 {
    const FLOOR: f64 = 0.05;
    if episode < pure_explore {
        return 1.0;
    }
    if episode >= total || total <= pure_explore {
        return FLOOR;
    }
    let frac = (episode - pure_explore) as f64 / (total - pure_explore) as f64;
    1.0 - (1.0 - FLOOR) * frac
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Packs states into contiguous f32 image and wind buffers.
pub fn batch_inputs(states: &[&AgentState]) -> (Vec<f32>, Vec<f32>) {
    let mut images = Vec::with_capacity(states.iter().map(|s| s.image.len()).sum());
    let mut winds = Vec::with_capacity(states.len() * WIND_FEATURES);
    for s in states {
        images.extend_from_slice(&s.image);
        winds.extend_from_slice(&s.wind);
    }
    (images, winds)
}

/// Per-head epsilon-greedy selection. Each agent draws the direction coin,
/// then (if exploring) a direction, then the speed coin and speed; the
/// network only runs for agents with at least one greedy head.
pub fn select_actions<R: Rng + ?Sized>(
    arch: &Architecture,
    params: &[f32],
    states: &[&AgentState],
    epsilon: f64,
    rng: &mut R,
    ws: &mut Workspace<f32>,
) -> Result<Vec<Action>> {
    let mut picks: Vec<(Option<u8>, Option<u8>)> = Vec::with_capacity(states.len());
    for _ in states {
        let dir = (rng.random::<f64>() < epsilon).then(|| rng.random_range(0..NUM_HEADINGS as u8));
        let spd = (rng.random::<f64>() < epsilon).then(|| rng.random_range(0..NUM_SPEEDS as u8));
        picks.push((dir, spd));
    }
    let greedy: Vec<usize> = (0..states.len()).filter(|&i| picks[i].0.is_none() || picks[i].1.is_none()).collect();
    let mut q = QOutput::default();
    if !greedy.is_empty() {
        let sub: Vec<&AgentState> = greedy.iter().map(|&i| states[i]).collect();
        for s in &sub {
            if s.resolution != arch.resolution() {
                return Err(Error::DimensionMismatch(format!(
                    "state resolution {} vs network {}",
                    s.resolution,
                    arch.resolution()
                )));
            }
        }
        let (images, winds) = batch_inputs(&sub);
        q = arch.forward(params, &images, &winds, sub.len(), ws);
    }
    let mut out = Vec::with_capacity(states.len());
    let mut row = 0;
    for (dir, spd) in picks {
        let needs_net = dir.is_none() || spd.is_none();
        let dir = dir.unwrap_or_else(|| argmax(&q.q_dir[row * NUM_HEADINGS..(row + 1) * NUM_HEADINGS]) as u8);
        let spd = spd.unwrap_or_else(|| argmax(&q.q_spd[row * NUM_SPEEDS..(row + 1) * NUM_SPEEDS]) as u8);
        if needs_net {
            row += 1;
        }
        out.push(Action::new(dir, spd)?);
    }
    Ok(out)
}

/// `|f_ocn - mean salinity over the cells in g|`.
pub fn contrast_score(frame: &FieldFrame, f_ocn: f64, g: &[usize]) -> Result<f64> {
    if g.is_empty() {
        return Err(Error::invalid("evaluation grid is empty"));
    }
    let mean = g.iter().map(|&i| frame.salinity.data[i] as f64).sum::<f64>() / g.len() as f64;
    Ok((f_ocn - mean).abs())
}

/// The agent-invariant part of the reward.
pub fn global_reward(mse: f64, contrast: f64, speeds: &[f64], w: &RewardWeights) -> f64 {
    -w.eta0 * mse + w.eta1 * contrast / (1.0 + mse) - w.eta2 * speeds.iter().sum::<f64>()
}

/// Per-agent rewards. `credits[n]` holds `(previous estimate, truth)` at
/// each of agent `n`'s samples this slot; `speeds` lists the fleet's speeds.
pub fn compute_rewards(
    mse: f64,
    contrast: f64,
    speeds: &[f64],
    credits: &[Vec<(f64, f64)>],
    w: &RewardWeights,
) -> Result<Vec<f64>> {
    if speeds.len() != credits.len() {
        return Err(Error::invalid(format!("{} speeds for {} agents", speeds.len(), credits.len())));
    }
    let global = global_reward(mse, contrast, speeds, w);
    Ok(credits
        .iter()
        .map(|c| global + w.eta3 * c.iter().map(|(est, truth)| (est - truth).powi(2)).sum::<f64>())
        .collect())
}

/// Per-head Bellman targets from target-network outputs on next states.
pub fn td_targets<T: Real>(next: &QOutput<T>, rewards: &[T], terminal: &[bool], gamma: T) -> (Vec<T>, Vec<T>) {
    let mut y_dir = Vec::with_capacity(rewards.len());
    let mut y_spd = Vec::with_capacity(rewards.len());
    for (i, (&r, &done)) in rewards.iter().zip(terminal).enumerate() {
        if done {
            y_dir.push(r);
            y_spd.push(r);
            continue;
        }
        let qd = &next.q_dir[i * NUM_HEADINGS..(i + 1) * NUM_HEADINGS];
        let qs = &next.q_spd[i * NUM_SPEEDS..(i + 1) * NUM_SPEEDS];
        y_dir.push(r + gamma * qd[argmax(qd)]);
        y_spd.push(r + gamma * qs[argmax(qs)]);
    }
    (y_dir, y_spd)
}

/// `0.5 * [mean (Q_dir(s,b) - y_dir)^2 + mean (Q_spd(s,v) - y_spd)^2]`,
/// accumulating its gradient into `grad`.
#[allow(clippy::too_many_arguments)]
pub fn bellman_loss_and_grad<T: Real>(
    arch: &Architecture,
    params: &[T],
    images: &[T],
    winds: &[T],
    actions: &[Action],
    y_dir: &[T],
    y_spd: &[T],
    ws: &mut Workspace<T>,
    grad: &mut [T],
) -> T {
    let b = actions.len();
    let q = arch.forward(params, images, winds, b, ws);
    let inv_b = T::from_f64(1.0 / b as f64);
    let half = T::from_f64(0.5);
    let mut loss = T::ZERO;
    let mut d_dir = vec![T::ZERO; b * NUM_HEADINGS];
    let mut d_spd = vec![T::ZERO; b * NUM_SPEEDS];
    for (i, a) in actions.iter().enumerate() {
        let ed = q.q_dir[i * NUM_HEADINGS + a.dir as usize] - y_dir[i];
        let es = q.q_spd[i * NUM_SPEEDS + a.spd as usize] - y_spd[i];
        loss += half * inv_b * (ed * ed + es * es);
        d_dir[i * NUM_HEADINGS + a.dir as usize] = ed * inv_b;
        d_spd[i * NUM_SPEEDS + a.spd as usize] = es * inv_b;
    }
    arch.backward(params, ws, &d_dir, &d_spd, grad);
    loss
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32], cfg: &DqnConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - b2.powi(self.t.min(i32::MAX as u64) as i32);
        let step = (cfg.learning_rate * c2.sqrt() / c1) as f32;
        let eps = (cfg.adam_eps * c2.sqrt()) as f32;
        let (b1, b2) = (b1 as f32, b2 as f32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut [f32], online: &[f32], tau: f64) {
    if tau == 1.0 {
        target.copy_from_slice(online);
        return;
    }
    let tau = tau as f32;
    for (t, o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

/// Online and target networks with optimizer state.
#[derive(Debug)]
pub struct Learner {
    pub arch: Architecture,
    pub online: Vec<f32>,
    pub target: Vec<f32>,
    pub adam: AdamState,
    pub cfg: DqnConfig,
    ws: Workspace<f32>,
    ws_target: Workspace<f32>,
    grad: Vec<f32>,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, cfg: DqnConfig, rng: &mut R) -> Self {
        let online: Vec<f32> = arch.init_params(rng);
        Self::from_parts(arch, cfg, online.clone(), online, None)
    }

    pub fn from_parts(arch: Architecture, cfg: DqnConfig, online: Vec<f32>, target: Vec<f32>, adam: Option<AdamState>) -> Self {
        let n = arch.num_params();
        Self {
            adam: adam.unwrap_or_else(|| AdamState::new(n)),
            arch,
            online,
            target,
            cfg,
            ws: Workspace::new(),
            ws_target: Workspace::new(),
            grad: vec![0.0; n],
        }
    }

    pub fn workspace(&mut self) -> (&Architecture, &[f32], &mut Workspace<f32>) {
        (&self.arch, &self.online, &mut self.ws)
    }

    /// One minibatch update followed by the soft target update.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<f32> {
        let b = self.cfg.batch_size;
        let idx = buffer.sample_indices(b, rng)?;
        let img_len = self.arch.image_len();
        let mut images = vec![0.0f32; b * img_len];
        let mut next_images = vec![0.0f32; b * img_len];
        let mut winds = Vec::with_capacity(b * WIND_FEATURES);
        let mut next_winds = Vec::with_capacity(b * WIND_FEATURES);
        let mut actions = Vec::with_capacity(b);
        let mut rewards = Vec::with_capacity(b);
        let mut terminal = Vec::with_capacity(b);
        for (k, &i) in idx.iter().enumerate() {
            let t = buffer.get(i).expect("sampled index in range");
            if t.state.resolution() != self.arch.resolution() {
                return Err(Error::DimensionMismatch("replay state resolution differs from network".into()));
            }
            t.state.decode_into(&mut images[k * img_len..(k + 1) * img_len]);
            t.next_state.decode_into(&mut next_images[k * img_len..(k + 1) * img_len]);
            winds.extend_from_slice(&t.state.wind());
            next_winds.extend_from_slice(&t.next_state.wind());
            actions.push(t.action);
            rewards.push(t.reward);
            terminal.push(t.terminal);
        }
        let next_q = self.arch.forward(&self.target, &next_images, &next_winds, b, &mut self.ws_target);
        let (y_dir, y_spd) = td_targets(&next_q, &rewards, &terminal, self.cfg.gamma as f32);
        self.grad.fill(0.0);
        let loss = bellman_loss_and_grad(
            &self.arch,
            &self.online,
            &images,
            &winds,
            &actions,
            &y_dir,
            &y_spd,
            &mut self.ws,
            &mut self.grad,
        );
        if !loss.is_finite() || self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(format!("non-finite loss {loss} after {} steps", self.adam.t)));
        }
        self.adam.step(&mut self.online, &self.grad, &self.cfg);
        soft_update(&mut self.target, &self.online, self.cfg.tau);
        Ok(loss)
    }
}
