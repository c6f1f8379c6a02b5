//! Per-agent observation: a 3-channel image plus the wind vector.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::net::{IMAGE_CHANNELS, WIND_FEATURES};
use crate::error::{Error, Result};
use crate::vehicle::SampleSet;
use crate::world::{Domain, Wind};

/// Wind speed mapped to 1.0.
pub const WIND_SPEED_SCALE: f64 = 20.0;

/// Image is NHWC with `R x R x 3` pixels in `[0, 1]`; row index is the
/// northward cell axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub resolution: usize,
    pub image: Vec<f32>,
    pub wind: [f32; WIND_FEATURES],
}

impl AgentState {
    pub fn pixel(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.image[(row * self.resolution + col) * IMAGE_CHANNELS + channel]
    }
}

/// Intensity of a mark `rank` slots old; the newest slot has rank 0.
pub fn recency_weight(rank: u32) -> f32 {
    (1.0 / (1.0 + (1.0 + rank as f64).ln())) as f32
}

pub fn normalize_wind(wind: Wind) -> [f32; WIND_FEATURES] {
    let angle = (wind.angle_rad as f64).rem_euclid(TAU) / TAU;
    let speed = (wind.speed_mps as f64 / WIND_SPEED_SCALE).clamp(0.0, 1.0);
    // rem_euclid can round up to exactly TAU
    [(angle as f32).min(1.0 - f32::EPSILON), speed as f32]
}

/// Everything the renderer may look at. None of it is ground truth.
pub struct RenderInput<'a> {
    pub domain: &'a Domain,
    pub f_ocn: f64,
    /// Estimate at every domain cell, row-major.
    pub estimate: &'a [f64],
    pub own: &'a [SampleSet],
    pub teammates: &'a [SampleSet],
    pub slot: u32,
    pub window_slots: u32,
    pub wind: Wind,
    pub resolution: usize,
}

pub fn render_state(input: &RenderInput<'_>) -> Result<AgentState> {
    let d = input.domain;
    let r = input.resolution;
    if input.estimate.len() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} values for a {}x{} domain",
            input.estimate.len(),
            d.nx(),
            d.ny()
        )));
    }
    if r == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let mut image = vec![0.0f32; r * r * IMAGE_CHANNELS];
    for row in 0..r {
        let j = (row * d.ny() + d.ny() / 2) / r;
        for col in 0..r {
            let i = (col * d.nx() + d.nx() / 2) / r;
            let idx = j * d.nx() + i;
            if d.land_mask()[idx] {
                continue;
            }
            let v = ((input.f_ocn - input.estimate[idx]) / input.f_ocn).clamp(0.0, 1.0);
            image[(row * r + col) * IMAGE_CHANNELS] = v as f32;
        }
    }
    for (channel, sets) in [(1, input.own), (2, input.teammates)] {
        for set in sets {
            if set.slot > input.slot || set.slot + input.window_slots <= input.slot {
                continue;
            }
            let w = recency_weight(input.slot - set.slot);
            for rec in &set.records {
                let Some(cell) = d.nearest_cell(rec.pos) else { continue };
                let row = cell.j * r / d.ny();
                let col = cell.i * r / d.nx();
                let px = &mut image[(row * r + col) * IMAGE_CHANNELS + channel];
                *px = px.max(w);
            }
        }
    }
    Ok(AgentState { resolution: r, image, wind: normalize_wind(input.wind) })
}

/// Replay-buffer form of [`AgentState`]: channel 0 quantized to 16 bits,
/// mark channels stored sparsely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactState {
    resolution: u16,
    estimate: Box<[u16]>,
    /// (pixel * 3 + channel, intensity)
    marks: Box<[(u32, f32)]>,
    wind: [f32; WIND_FEATURES],
}

impl CompactState {
    pub fn from_state(s: &AgentState) -> Self {
        let n = s.resolution * s.resolution;
        let mut estimate = Vec::with_capacity(n);
        let mut marks = Vec::new();
        for p in 0..n {
            let px = &s.image[p * IMAGE_CHANNELS..(p + 1) * IMAGE_CHANNELS];
            estimate.push((px[0].clamp(0.0, 1.0) * u16::MAX as f32).round() as u16);
            for c in 1..IMAGE_CHANNELS {
                if px[c] != 0.0 {
                    marks.push(((p * IMAGE_CHANNELS + c) as u32, px[c]));
                }
            }
        }
        Self {
            resolution: s.resolution as u16,
            estimate: estimate.into(),
            marks: marks.into(),
            wind: s.wind,
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution as usize
    }

    /// Writes the decoded image into `out` (length `R*R*3`).
    pub fn decode_into(&self, out: &mut [f32]) {
        out.fill(0.0);
        for (p, &q) in self.estimate.iter().enumerate() {
            out[p * IMAGE_CHANNELS] = q as f32 / u16::MAX as f32;
        }
        for &(i, v) in self.marks.iter() {
            out[i as usize] = v;
        }
    }

    pub fn wind(&self) -> [f32; WIND_FEATURES] {
        self.wind
    }

    pub fn to_state(&self) -> AgentState {
        let r = self.resolution();
        let mut image = vec![0.0; r * r * IMAGE_CHANNELS];
        self.decode_into(&mut image);
        AgentState { resolution: r, image, wind: self.wind }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::Record;
    use crate::world::Position;

    fn set(slot: u32, pts: &[(f64, f64)]) -> SampleSet {
        SampleSet {
            agent_id: 0,
            slot,
            records: pts.iter().map(|&(x, y)| Record { pos: Position { x, y }, t: slot as f64 * 1800.0, y: 34.0 }).collect(),
        }
    }

    fn input<'a>(d: &'a Domain, est: &'a [f64], own: &'a [SampleSet], team: &'a [SampleSet]) -> RenderInput<'a> {
        RenderInput {
            domain: d,
            f_ocn: 35.0,
            estimate: est,
            own,
            teammates: team,
            slot: 10,
            window_slots: 24,
            wind: Wind { angle_rad: 1.0, speed_mps: 5.0 },
            resolution: 32,
        }
    }

    #[test]
    fn ocean_estimate_and_no_tracks_is_black() {
        let d = Domain::smoke();
        let est = vec![35.0; d.len()];
        let s = render_state(&input(&d, &est, &[], &[])).unwrap();
        assert!(s.image.iter().all(|&v| v == 0.0));
        assert!((s.wind[0] as f64 - 1.0 / TAU).abs() < 1e-6);
        assert_eq!(s.wind[1], 0.25);
    }

    #[test]
    fn estimate_normalized_and_clamped() {
        let d = Domain::smoke();
        let mut est = vec![28.0; d.len()];
        est[0] = 40.0;
        let s = render_state(&input(&d, &est, &[], &[])).unwrap();
        assert_eq!(s.pixel(0, 0, 0), 0.0);
        assert!((s.pixel(5, 5, 0) - 0.2).abs() < 1e-6);
        assert!(s.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn marks_decay_with_recency_and_split_channels() {
        let d = Domain::smoke();
        let est = vec![35.0; d.len()];
        let own = [set(8, &[(300.0, 300.0)]), set(9, &[(600.0, 300.0)]), set(10, &[(900.0, 300.0)])];
        let team = [set(10, &[(3000.0, 3000.0)]), set(1, &[(3300.0, 3000.0)])];
        let s = render_state(&input(&d, &est, &own, &team)).unwrap();
        let (a, b, c) = (s.pixel(1, 3, 1), s.pixel(1, 2, 1), s.pixel(1, 1, 1));
        assert_eq!(a, 1.0);
        assert!(a > b && b > c && c > 0.0);
        assert_eq!(s.pixel(10, 10, 2), 1.0);
        assert_eq!(s.pixel(10, 10, 1), 0.0);
        // slot 1 is nine slots old, still inside the window
        assert!(s.pixel(10, 11, 2) > 0.0);
        let nonzero = s.image.chunks(3).filter(|p| p[1] > 0.0 || p[2] > 0.0).count();
        assert_eq!(nonzero, 5);
    }

    #[test]
    fn old_marks_leave_the_window() {
        let d = Domain::smoke();
        let est = vec![35.0; d.len()];
        let own = [set(3, &[(300.0, 300.0)])];
        let inp = RenderInput { slot: 27, ..input(&d, &est, &own, &[]) };
        let s = render_state(&inp).unwrap();
        assert!(s.image.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compact_round_trip_within_quantization() {
        let d = Domain::smoke();
        let est: Vec<f64> = (0..d.len()).map(|i| 25.0 + (i % 11) as f64).collect();
        let own = [set(9, &[(600.0, 300.0), (900.0, 900.0)])];
        let s = render_state(&input(&d, &est, &own, &[])).unwrap();
        let back = CompactState::from_state(&s).to_state();
        assert_eq!(back.wind, s.wind);
        for (a, b) in back.image.iter().zip(&s.image) {
            assert!((a - b).abs() <= 1.0 / 65535.0);
        }
    }
}
