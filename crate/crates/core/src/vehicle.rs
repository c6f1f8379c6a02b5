//! LAUV point kinematics under commanded velocity plus ambient current,
//! trajectory-constrained sampling and battery accounting.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{FieldSequence, Position, SLOT_SECONDS};

/// Cruise speed levels (m/s), indexed by the speed action.
pub const SPEEDS: [f64; 2] = [0.4, 1.0];
pub const NUM_HEADINGS: usize = 8;
pub const NUM_SPEEDS: usize = 2;
pub const DEFAULT_SUBSTEP_S: f64 = 60.0;
pub const MAX_SAMPLES_PER_SLOT: usize = 10;

/// Factored action: heading index `dir` (dir * 45 degrees, counter-clockwise
/// from east) and speed index `spd` into [`SPEEDS`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub dir: u8,
    pub spd: u8,
}

impl Action {
    pub fn new(dir: u8, spd: u8) -> Result<Self> {
        if dir as usize >= NUM_HEADINGS || spd as usize >= NUM_SPEEDS {
            return Err(Error::invalid(format!("action ({dir}, {spd}) out of range")));
        }
        Ok(Self { dir, spd })
    }

    pub fn heading_rad(&self) -> f64 {
        self.dir as f64 * PI / 4.0
    }

    pub fn speed_mps(&self) -> f64 {
        SPEEDS[self.spd as usize]
    }

    pub fn velocity(&self) -> (f64, f64) {
        let (s, c) = self.heading_rad().sin_cos();
        let v = self.speed_mps();
        (v * c, v * s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub agent_id: u16,
    pub pos: Position,
    pub command: Action,
    pub battery_j: f64,
    pub alive: bool,
}

impl VehicleState {
    pub fn new(agent_id: u16, pos: Position, energy: &EnergyModel) -> Self {
        Self { agent_id, pos, command: Action::default(), battery_j: energy.battery_capacity_j, alive: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackPoint {
    pub pos: Position,
    pub t: f64,
}

/// One measurement record `(x, t, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub pos: Position,
    pub t: f64,
    pub y: f64,
}

/// Measurements gathered by one agent during one slot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub agent_id: u16,
    pub slot: u32,
    pub records: Vec<Record>,
}

/// Integrates `x' = u + c(x, t)` over slot `k`, i.e. from `(k-1)Δ` to `kΔ`,
/// with forward Euler. Positions that would leave the water slide along the
/// offending boundary. Returns the end-of-substep positions.
pub fn step_slot(
    state: &VehicleState,
    action: Action,
    world: &FieldSequence,
    slot: u32,
    substep_s: f64,
) -> Result<(VehicleState, Vec<TrackPoint>)> {
    let mut next = state.clone();
    if !state.alive {
        return Ok((next, Vec::new()));
    }
    if slot == 0 {
        return Err(Error::invalid("slot 0 has no preceding interval"));
    }
    let steps = SLOT_SECONDS / substep_s;
    if !(substep_s > 0.0) || (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::invalid(format!("substep {substep_s} s must divide the slot evenly")));
    }
    let steps = steps.round() as usize;
    let (cu, cv) = action.velocity();
    let t0 = (slot as f64 - 1.0) * SLOT_SECONDS;
    let domain = world.domain();
    let mut pos = state.pos;
    let mut track = Vec::with_capacity(steps);
    for n in 0..steps {
        let t = t0 + n as f64 * substep_s;
        let (u, v) = world.current_at(pos, t)?;
        if !(u.is_finite() && v.is_finite()) {
            return Err(Error::CorruptWorld(format!("non-finite current at slot {slot}")));
        }
        let cand = Position::new(pos.x + (cu + u) * substep_s, pos.y + (cv + v) * substep_s);
        pos = slide(domain, pos, cand);
        track.push(TrackPoint { pos, t: t + substep_s });
    }
    next.pos = pos;
    next.command = action;
    Ok((next, track))
}

fn slide(domain: &crate::world::Domain, from: Position, to: Position) -> Position {
    let boxed = Position::new(to.x.clamp(0.0, domain.max_x()), to.y.clamp(0.0, domain.max_y()));
    if domain.is_water(boxed) {
        return boxed;
    }
    // land edges are grid aligned, so sliding means dropping one axis
    let along_y = Position::new(from.x, boxed.y);
    let along_x = Position::new(boxed.x, from.y);
    let dy = (boxed.y - from.y).abs();
    let dx = (boxed.x - from.x).abs();
    let order = if dy >= dx { [along_y, along_x] } else { [along_x, along_y] };
    order.into_iter().find(|p| domain.is_water(*p)).unwrap_or(from)
}

/// Over-ground progress over the slot mapped onto [0, 1] between the two
/// cruise speeds.
pub fn speed_fraction(start: Position, track: &[TrackPoint]) -> f64 {
    let Some(end) = track.last() else { return 0.0 };
    let ground = start.distance(&end.pos) / SLOT_SECONDS;
    ((ground - SPEEDS[0]) / (SPEEDS[1] - SPEEDS[0])).clamp(0.0, 1.0)
}

/// Per-slot sample count: `3 + 4 * speed_fraction`, stochastically rounded
/// and clamped to [1, 10]. Mean is 5 for an even mix of the two speeds.
pub fn sample_count<R: Rng + ?Sized>(speed_fraction: f64, rng: &mut R) -> usize {
    let target = 3.0 + 4.0 * speed_fraction.clamp(0.0, 1.0);
    let base = target.floor();
    let extra = if rng.random::<f64>() < target - base { 1.0 } else { 0.0 };
    ((base + extra) as usize).clamp(1, MAX_SAMPLES_PER_SLOT)
}

/// Indices of `count` points evenly spaced in time, always ending with the
/// final point.
pub fn sample_indices(len: usize, count: usize) -> Vec<usize> {
    let count = count.min(len);
    (0..count).map(|j| ((j + 1) * len).div_ceil(count) - 1).collect()
}

pub fn collect_samples<R: Rng + ?Sized>(
    agent_id: u16,
    slot: u32,
    track: &[TrackPoint],
    world: &FieldSequence,
    noise_sd: f64,
    target_count: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    if track.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    if !(1..=MAX_SAMPLES_PER_SLOT).contains(&target_count) {
        return Err(Error::invalid(format!("target count {target_count} outside [1, 10]")));
    }
    let records = sample_indices(track.len(), target_count)
        .into_iter()
        .map(|i| {
            let p = track[i];
            Ok(Record { pos: p.pos, t: p.t, y: world.sample_salinity(p.pos, p.t, noise_sd, rng)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet { agent_id, slot, records })
}

/// Hotel load plus cubic drag: `P(v) = hotel_w + drag_coef * v^3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyModel {
    pub hotel_w: f64,
    pub drag_coef: f64,
    pub battery_capacity_j: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self::calibrated(7.2e6, (1.0, 72.0), (0.4, 8.0 * 72.0)).expect("default anchors are consistent")
    }
}

impl EnergyModel {
    /// Solves for `(hotel_w, drag_coef)` so that a full battery lasts
    /// `fast.1` hours at `fast.0` m/s and `slow.1` hours at `slow.0` m/s.
    pub fn calibrated(capacity_j: f64, fast: (f64, f64), slow: (f64, f64)) -> Result<Self> {
        // hotel + drag * v^3 = capacity / endurance, for both anchors
        let p_fast = capacity_j / (fast.1 * 3600.0);
        let p_slow = capacity_j / (slow.1 * 3600.0);
        let det = fast.0.powi(3) - slow.0.powi(3);
        if det.abs() < 1e-12 {
            return Err(Error::invalid("calibration speeds must differ"));
        }
        let drag_coef = (p_fast - p_slow) / det;
        let hotel_w = p_fast - drag_coef * fast.0.powi(3);
        if !(hotel_w > 0.0 && drag_coef > 0.0) {
            return Err(Error::invalid(format!(
                "anchors imply hotel {hotel_w:.3} W and drag {drag_coef:.3} W/(m/s)^3"
            )));
        }
        Ok(Self { hotel_w, drag_coef, battery_capacity_j: capacity_j })
    }

    pub fn power_w(&self, speed: f64) -> f64 {
        self.hotel_w + self.drag_coef * speed.powi(3)
    }

    pub fn endurance_s(&self, speed: f64) -> f64 {
        self.battery_capacity_j / self.power_w(speed)
    }
}

pub fn consume_energy(state: &VehicleState, speed: f64, dt_s: f64, model: &EnergyModel) -> Result<VehicleState> {
    if !(dt_s > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let mut next = state.clone();
    if !state.alive {
        return Ok(next);
    }
    next.battery_j = (state.battery_j - model.power_w(speed) * dt_s).max(0.0);
    if next.battery_j == 0.0 {
        next.alive = false;
    }
    Ok(next)
}

/// Battery capacity over the fleet-mean of each vehicle's average power,
/// in days. `speeds[n]` lists the speed agent `n` held in each live slot.
pub fn fleet_endurance_days(speeds: &[Vec<f64>], model: &EnergyModel) -> Result<f64> {
    let per_vehicle: Vec<f64> = speeds
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().map(|&v| model.power_w(v)).sum::<f64>() / s.len() as f64)
        .collect();
    if per_vehicle.is_empty() {
        return Err(Error::invalid("endurance needs at least one slot"));
    }
    let mean_power = per_vehicle.iter().sum::<f64>() / per_vehicle.len() as f64;
    Ok(model.battery_capacity_j / mean_power / 86_400.0)
}
