//! Reference samplers and policies: mouth-biased uniform sampling, circular
//! rotations around fixed cores, a random walk and a one-slot EIBV planner
//! with access to ground truth.

use std::f64::consts::TAU;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::estimator::GprModel;
use crate::vehicle::{
    sample_indices, speed_fraction, step_slot, Action, Record, SampleSet, TrackPoint, VehicleState, NUM_HEADINGS,
    NUM_SPEEDS,
};
use crate::world::{Domain, FieldSequence, Position, SLOT_SECONDS};

/// Agent id stamped on uniform-sampler sets, which belong to no vehicle.
pub const UNIFORM_AGENT_ID: u16 = u16::MAX;

/// Draws a fixed budget of point measurements per slot from water cells with
/// density proportional to `exp(-dist(x, mouth) / l_bias)`.
#[derive(Clone, Debug)]
pub struct UniformSampler {
    budget: usize,
    cells: Vec<Position>,
    index: WeightedIndex<f64>,
}

impl UniformSampler {
    /// `l_bias_m = None` gives a flat density.
    pub fn new(domain: &Domain, budget: usize, l_bias_m: Option<f64>) -> Result<Self> {
        if budget == 0 {
            return Err(Error::invalid("sampling budget must be positive"));
        }
        if let Some(l) = l_bias_m {
            if !(l > 0.0) {
                return Err(Error::invalid(format!("bias length {l} must be positive")));
            }
        }
        let mouth = domain.mouth_position();
        let cells: Vec<Position> = domain.water_cells().map(|c| domain.node_position(c)).collect();
        let weights: Vec<f64> = cells
            .iter()
            .map(|p| match l_bias_m {
                Some(l) => (-p.distance(&mouth) / l).exp(),
                None => 1.0,
            })
            .collect();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::invalid(format!("sampler weights: {e}")))?;
        Ok(Self { budget, cells, index })
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Water cell positions in the order used by [`Self::draw_cell`].
    pub fn cells(&self) -> &[Position] {
        &self.cells
    }

    pub fn draw_cell<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }

    /// One slot of measurements, all stamped at the slot end.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        world: &FieldSequence,
        slot: u32,
        noise_sd: f64,
        rng: &mut R,
    ) -> Result<SampleSet> {
        let t = slot as f64 * SLOT_SECONDS;
        let records = (0..self.budget)
            .map(|_| {
                let pos = self.cells[self.draw_cell(rng)];
                Ok(Record { pos, t, y: world.sample_salinity(pos, t, noise_sd, rng)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleSet { agent_id: UNIFORM_AGENT_ID, slot, records })
    }
}

/// Agents circling fixed cores at constant speed, ignoring currents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationPlan {
    pub cores: Vec<Position>,
    pub radius_m: f64,
    pub speed_mps: f64,
}

impl RotationPlan {
    /// One core per agent at fractions `1/(n+1), ..., n/(n+1)` of the
    /// climatological plume extent along the outflow axis. Cores whose
    /// circle touches land are pushed seaward a cell at a time.
    pub fn along_plume(world: &FieldSequence, agents: usize, radius_m: f64, zeta: f64) -> Result<Self> {
        if agents == 0 {
            return Err(Error::invalid("rotations need at least one agent"));
        }
        let (axis, extent) = plume_axis(world, zeta)?;
        let domain = world.domain();
        let mouth = domain.mouth_position();
        let step = domain.cell_size_m();
        let mut cores = Vec::with_capacity(agents);
        for n in 0..agents {
            let mut d = extent * (n + 1) as f64 / (agents + 1) as f64;
            let mut placed = None;
            for _ in 0..domain.nx().max(domain.ny()) {
                let c = Position::new(mouth.x + axis.0 * d, mouth.y + axis.1 * d);
                if circle_in_water(domain, c, radius_m) {
                    placed = Some(c);
                    break;
                }
                d += step;
            }
            cores.push(placed.ok_or_else(|| Error::invalid("no water room for a rotation circle"))?);
        }
        let plan = Self { cores, radius_m, speed_mps: 1.0 };
        plan.validate(domain)?;
        Ok(plan)
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        if self.cores.is_empty() {
            return Err(Error::invalid("rotation plan has no cores"));
        }
        if !(self.radius_m > 0.0 && self.speed_mps > 0.0) {
            return Err(Error::invalid("rotation radius and speed must be positive"));
        }
        for (n, c) in self.cores.iter().enumerate() {
            if !circle_in_water(domain, *c, self.radius_m) {
                return Err(Error::invalid(format!("rotation circle {n} leaves the water")));
            }
        }
        Ok(())
    }

    pub fn angular_rate(&self) -> f64 {
        self.speed_mps / self.radius_m
    }

    pub fn period_s(&self) -> f64 {
        TAU / self.angular_rate()
    }

    /// Agent `n` circles core `n mod cores`, starting due east of it at t = 0.
    pub fn position_at(&self, agent: usize, t: f64) -> Position {
        let c = self.cores[agent % self.cores.len()];
        let (s, co) = (self.angular_rate() * t).sin_cos();
        Position::new(c.x + self.radius_m * co, c.y + self.radius_m * s)
    }

    /// Substep positions over slot `k`, matching [`step_slot`] timestamps.
    pub fn track(&self, agent: usize, slot: u32, substep_s: f64) -> Result<Vec<TrackPoint>> {
        if slot == 0 {
            return Err(Error::invalid("slot 0 has no preceding interval"));
        }
        let steps = (SLOT_SECONDS / substep_s).round() as usize;
        let t0 = (slot as f64 - 1.0) * SLOT_SECONDS;
        Ok((1..=steps)
            .map(|n| {
                let t = t0 + n as f64 * substep_s;
                TrackPoint { pos: self.position_at(agent, t), t }
            })
            .collect())
    }
}

fn circle_in_water(domain: &Domain, c: Position, r: f64) -> bool {
    (0..72).all(|i| {
        let (s, co) = (i as f64 * TAU / 72.0).sin_cos();
        domain.is_water(Position::new(c.x + r * co, c.y + r * s))
    })
}

/// Unit outflow direction from the mouth toward the centroid of the
/// time-mean plume, and the farthest plume projection along it.
fn plume_axis(world: &FieldSequence, zeta: f64) -> Result<((f64, f64), f64)> {
    let domain = world.domain();
    let f_ocn = world.f_ocn();
    let mut mean = vec![0.0; domain.len()];
    for frame in world.frames() {
        for (m, &s) in mean.iter_mut().zip(&frame.salinity.data) {
            *m += s as f64;
        }
    }
    let k = world.num_slots() as f64;
    let mouth = domain.mouth_position();
    let plume: Vec<Position> = domain
        .water_indices()
        .into_iter()
        .filter(|&i| f_ocn - mean[i] / k >= zeta)
        .map(|i| domain.node_position(domain.cell_of_index(i)))
        .collect();
    if plume.is_empty() {
        return Err(Error::invalid("time-mean field shows no plume to place rotations in"));
    }
    let cx = plume.iter().map(|p| p.x).sum::<f64>() / plume.len() as f64;
    let cy = plume.iter().map(|p| p.y).sum::<f64>() / plume.len() as f64;
    let norm = (cx - mouth.x).hypot(cy - mouth.y);
    let axis = if norm > 0.0 { ((cx - mouth.x) / norm, (cy - mouth.y) / norm) } else { (-1.0, 0.0) };
    let extent = plume.iter().map(|p| (p.x - mouth.x) * axis.0 + (p.y - mouth.y) * axis.1).fold(0.0, f64::max);
    Ok((axis, extent))
}

pub fn random_walk_policy<R: Rng + ?Sized>(rng: &mut R) -> Action {
    Action { dir: rng.random_range(0..NUM_HEADINGS as u8), spd: rng.random_range(0..NUM_SPEEDS as u8) }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EibvConfig {
    pub threshold_psu: f64,
    pub substep_s: f64,
}

impl Default for EibvConfig {
    fn default() -> Self {
        Self { threshold_psu: 32.0, substep_s: crate::vehicle::DEFAULT_SUBSTEP_S }
    }
}

impl EibvConfig {
    pub fn validate(&self, f_ocn: f64) -> Result<()> {
        if !(self.threshold_psu > 0.0 && self.threshold_psu < f_ocn) {
            return Err(Error::invalid(format!("front threshold {} outside (0, {f_ocn})", self.threshold_psu)));
        }
        Ok(())
    }
}

/// Standard normal CDF.
fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Integrated Bernoulli variance of `f < threshold` over `(mean, variance)`
/// pairs. Zero-variance cells are classified with certainty.
pub fn ibv(posterior: &[(f64, f64)], threshold: f64) -> f64 {
    posterior
        .iter()
        .map(|&(mu, var)| {
            if var <= 0.0 {
                return 0.0;
            }
            let p = phi((threshold - mu) / var.sqrt());
            p * (1.0 - p)
        })
        .sum()
}

/// Hypothetical IBV over `grid` at the end of slot `slot + 1` for every
/// heading at full speed. Would-be samples take noise-free true values.
pub fn eibv_scores(
    model: &GprModel,
    world: &FieldSequence,
    state: &VehicleState,
    slot: u32,
    grid: &[Position],
    cfg: &EibvConfig,
) -> Result<[f64; NUM_HEADINGS]> {
    cfg.validate(model.f_ocn())?;
    let next = slot + 1;
    let t_next = next as f64 * SLOT_SECONDS;
    let wq = model.whiten_queries(grid, t_next);
    let mut scores = [0.0; NUM_HEADINGS];
    for (dir, score) in scores.iter_mut().enumerate() {
        let action = Action::new(dir as u8, 1)?;
        let (_, track) = step_slot(state, action, world, next, cfg.substep_s)?;
        if track.is_empty() {
            *score = ibv(&model.posterior_from_whitened(&wq), cfg.threshold_psu);
            continue;
        }
        let count = (3.0 + 4.0 * speed_fraction(state.pos, &track)).round() as usize;
        let extra = sample_indices(track.len(), count)
            .into_iter()
            .map(|i| {
                let p = track[i];
                Ok(Record { pos: p.pos, t: p.t, y: world.salinity_at(p.pos, p.t)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let ext = model.extend(&extra)?;
        *score = ibv(&ext.posterior(&wq), cfg.threshold_psu);
    }
    Ok(scores)
}

/// Heading with the lowest hypothetical IBV (ties to the lowest index), at
/// full speed.
pub fn ideal_eibv_policy(
    model: &GprModel,
    world: &FieldSequence,
    state: &VehicleState,
    slot: u32,
    grid: &[Position],
    cfg: &EibvConfig,
) -> Result<Action> {
    let scores = eibv_scores(model, world, state, slot, grid, cfg)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Action::new(best as u8, 1)
}
