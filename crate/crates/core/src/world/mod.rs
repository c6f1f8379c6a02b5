//! Ground-truth plume world: salinity, surface currents and wind on a
//! 30-minute slot clock.
//!
//! Grids are stored row-major with `index = j * nx + i`, where `i` runs east
//! and `j` runs north. Grid node `(i, j)` sits at `(i * cell, j * cell)`
//! meters, so the queryable box is `[0, (nx-1)*cell] x [0, (ny-1)*cell]`.

mod io;
mod synth;

pub use io::{load_sequence, read_sequence, save_sequence, write_sequence, FIELD_MAGIC};
pub use synth::{generate_sequence, SynthParams, WindProcess};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of one decision/communication slot.
pub const SLOT_SECONDS: f64 = 1800.0;

/// Default measurement noise standard deviation (variance 0.01 psu²).
pub const DEFAULT_NOISE_SD: f64 = 0.1;

/// Planar position in meters (east, north).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
}

impl Cell {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

/// Planar evaluation domain with a land mask and a river mouth.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    nx: usize,
    ny: usize,
    cell_size_m: f64,
    mouth: Cell,
    land: Vec<bool>,
}

impl Domain {
    pub fn new(nx: usize, ny: usize, cell_size_m: f64, mouth: Cell, land: Vec<bool>) -> Result<Self> {
        if nx < 8 || ny < 8 {
            return Err(Error::invalid(format!("domain grid {nx}x{ny} smaller than 8x8")));
        }
        if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
            return Err(Error::invalid(format!("cell size {cell_size_m} must be positive")));
        }
        if land.len() != nx * ny {
            return Err(Error::DimensionMismatch(format!(
                "land mask has {} cells, grid has {}",
                land.len(),
                nx * ny
            )));
        }
        if mouth.i >= nx || mouth.j >= ny {
            return Err(Error::invalid("mouth outside grid"));
        }
        let on_boundary = mouth.i == 0 || mouth.j == 0 || mouth.i == nx - 1 || mouth.j == ny - 1;
        if !on_boundary {
            return Err(Error::invalid("mouth must lie on the domain boundary"));
        }
        if land[mouth.j * nx + mouth.i] {
            return Err(Error::invalid("mouth lies on land"));
        }
        let land_cells = land.iter().filter(|&&l| l).count();
        if 2 * land_cells > nx * ny {
            return Err(Error::invalid(format!(
                "land mask covers {land_cells} of {} cells (max 50%)",
                nx * ny
            )));
        }
        Ok(Self { nx, ny, cell_size_m, mouth, land })
    }

    /// Straight north-south coastline on the east edge, `coast_cols` cells
    /// wide, cut by a three-cell river channel whose mouth sits at the
    /// east-boundary midpoint.
    pub fn coastal(nx: usize, ny: usize, cell_size_m: f64, coast_cols: usize) -> Result<Self> {
        let jm = ny / 2;
        let mut land = vec![false; nx * ny];
        for j in 0..ny {
            for i in nx.saturating_sub(coast_cols)..nx {
                let in_channel = j + 1 >= jm && j <= jm + 1;
                land[j * nx + i] = !in_channel;
            }
        }
        Self::new(nx, ny, cell_size_m, Cell::new(nx - 1, jm), land)
    }

    /// 12.8 km x 12.8 km at 200 m resolution.
    pub fn standard() -> Self {
        Self::coastal(64, 64, 200.0, 3).expect("standard domain is valid")
    }

    /// Reduced 32x32 world used for quick training runs.
    pub fn smoke() -> Self {
        Self::coastal(32, 32, 300.0, 2).expect("smoke domain is valid")
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn width_m(&self) -> f64 {
        self.nx as f64 * self.cell_size_m
    }

    pub fn height_m(&self) -> f64 {
        self.ny as f64 * self.cell_size_m
    }

    /// Largest queryable east coordinate (last grid node).
    pub fn max_x(&self) -> f64 {
        (self.nx - 1) as f64 * self.cell_size_m
    }

    pub fn max_y(&self) -> f64 {
        (self.ny - 1) as f64 * self.cell_size_m
    }

    pub fn mouth(&self) -> Cell {
        self.mouth
    }

    pub fn mouth_position(&self) -> Position {
        self.node_position(self.mouth)
    }

    pub fn land_mask(&self) -> &[bool] {
        &self.land
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.j * self.nx + cell.i
    }

    pub fn cell_of_index(&self, idx: usize) -> Cell {
        Cell::new(idx % self.nx, idx / self.nx)
    }

    pub fn node_position(&self, cell: Cell) -> Position {
        Position::new(cell.i as f64 * self.cell_size_m, cell.j as f64 * self.cell_size_m)
    }

    pub fn is_land(&self, cell: Cell) -> bool {
        self.land[self.index(cell)]
    }

    pub fn contains(&self, pos: Position) -> bool {
        pos.is_finite() && pos.x >= 0.0 && pos.y >= 0.0 && pos.x <= self.max_x() && pos.y <= self.max_y()
    }

    /// Grid node closest to `pos`, if `pos` lies inside the node hull.
    pub fn nearest_cell(&self, pos: Position) -> Option<Cell> {
        if !self.contains(pos) {
            return None;
        }
        let i = ((pos.x / self.cell_size_m).round() as usize).min(self.nx - 1);
        let j = ((pos.y / self.cell_size_m).round() as usize).min(self.ny - 1);
        Some(Cell::new(i, j))
    }

    /// Inside the node hull and the nearest node is water.
    pub fn is_water(&self, pos: Position) -> bool {
        self.nearest_cell(pos).is_some_and(|c| !self.is_land(c))
    }

    /// Indices of all water cells in row-major order.
    pub fn water_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| !self.land[k]).collect()
    }

    pub fn water_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).filter(|&k| !self.land[k]).map(|k| self.cell_of_index(k))
    }
}

/// Row-major scalar grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f32>,
}

impl Grid {
    pub fn filled(nx: usize, ny: usize, value: f32) -> Self {
        Self { nx, ny, data: vec![value; nx * ny] }
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[j * self.nx + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[j * self.nx + i] = v;
    }
}

/// Wind as `[angle, speed]`; angle in radians counter-clockwise from east.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wind {
    pub angle_rad: f32,
    pub speed_mps: f32,
}

/// One slot of ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldFrame {
    pub slot: u32,
    pub salinity: Grid,
    pub cur_u: Grid,
    pub cur_v: Grid,
    pub wind: Wind,
}

impl FieldFrame {
    pub fn max_current(&self) -> f64 {
        self.cur_u
            .data
            .iter()
            .zip(&self.cur_v.data)
            .map(|(&u, &v)| (u as f64).hypot(v as f64))
            .fold(0.0, f64::max)
    }
}

/// Frames at `t = k * SLOT_SECONDS`, `k = 0..len`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSequence {
    domain: Domain,
    f_ocn: f64,
    frames: Vec<FieldFrame>,
}

impl FieldSequence {
    pub fn new(domain: Domain, f_ocn: f64, frames: Vec<FieldFrame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("sequence needs at least one frame"));
        }
        for (k, frame) in frames.iter().enumerate() {
            if frame.slot as usize != k {
                return Err(Error::invalid(format!("frame {k} carries slot index {}", frame.slot)));
            }
            for g in [&frame.salinity, &frame.cur_u, &frame.cur_v] {
                if g.nx != domain.nx || g.ny != domain.ny || g.data.len() != domain.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "frame {k} grid {}x{} vs domain {}x{}",
                        g.nx, g.ny, domain.nx, domain.ny
                    )));
                }
            }
        }
        Ok(Self { domain, f_ocn, frames })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn f_ocn(&self) -> f64 {
        self.f_ocn
    }

    pub fn frames(&self) -> &[FieldFrame] {
        &self.frames
    }

    pub fn frame(&self, slot: usize) -> &FieldFrame {
        &self.frames[slot]
    }

    pub fn num_slots(&self) -> usize {
        self.frames.len()
    }

    pub fn dt_s(&self) -> f64 {
        SLOT_SECONDS
    }

    pub fn last_time(&self) -> f64 {
        (self.frames.len() - 1) as f64 * SLOT_SECONDS
    }

    /// Mutable frame access, used by tests that perturb ground truth.
    pub fn frames_mut(&mut self) -> &mut [FieldFrame] {
        &mut self.frames
    }

    fn locate(&self, x: Position, t: f64) -> Result<Stencil> {
        if !self.domain.is_water(x) {
            return Err(Error::OutsideWorld(format!("position ({:.1}, {:.1}) m", x.x, x.y)));
        }
        if !(t.is_finite() && t >= 0.0 && t <= self.last_time()) {
            return Err(Error::OutsideWorld(format!("time {t} s")));
        }
        let cs = self.domain.cell_size_m;
        let fx = x.x / cs;
        let fy = x.y / cs;
        let i0 = (fx.floor() as usize).min(self.domain.nx - 2);
        let j0 = (fy.floor() as usize).min(self.domain.ny - 2);
        let ft = t / SLOT_SECONDS;
        let k0 = (ft.floor() as usize).min(self.frames.len().saturating_sub(2));
        Ok(Stencil {
            i0,
            j0,
            wx: fx - i0 as f64,
            wy: fy - j0 as f64,
            k0,
            wt: if self.frames.len() == 1 { 0.0 } else { ft - k0 as f64 },
        })
    }

    fn interp(&self, s: &Stencil, pick: impl Fn(&FieldFrame) -> &Grid) -> f64 {
        let spatial = |g: &Grid| {
            let v00 = g.get(s.i0, s.j0) as f64;
            let v10 = g.get(s.i0 + 1, s.j0) as f64;
            let v01 = g.get(s.i0, s.j0 + 1) as f64;
            let v11 = g.get(s.i0 + 1, s.j0 + 1) as f64;
            let w = |a: f64, b: f64, t: f64| if t == 0.0 { a } else if t == 1.0 { b } else { a + (b - a) * t };
            w(w(v00, v10, s.wx), w(v01, v11, s.wx), s.wy)
        };
        let a = spatial(pick(&self.frames[s.k0]));
        if s.wt == 0.0 {
            return a;
        }
        let b = spatial(pick(&self.frames[s.k0 + 1]));
        if s.wt == 1.0 {
            b
        } else {
            a + (b - a) * s.wt
        }
    }

    /// Noise-free salinity: bilinear in space, linear in time.
    pub fn salinity_at(&self, x: Position, t: f64) -> Result<f64> {
        let s = self.locate(x, t)?;
        Ok(self.interp(&s, |f| &f.salinity))
    }

    /// Noisy point measurement.
    pub fn sample_salinity<R: Rng + ?Sized>(&self, x: Position, t: f64, noise_sd: f64, rng: &mut R) -> Result<f64> {
        let clean = self.salinity_at(x, t)?;
        if noise_sd <= 0.0 {
            return Ok(clean);
        }
        let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(clean + noise.sample(rng))
    }

    pub fn current_at(&self, x: Position, t: f64) -> Result<(f64, f64)> {
        let s = self.locate(x, t)?;
        Ok((self.interp(&s, |f| &f.cur_u), self.interp(&s, |f| &f.cur_v)))
    }

    pub fn wind_at_slot(&self, slot: usize) -> Wind {
        self.frames[slot.min(self.frames.len() - 1)].wind
    }
}

struct Stencil {
    i0: usize,
    j0: usize,
    wx: f64,
    wy: f64,
    k0: usize,
    wt: f64,
}

/// Plume membership: `f_ocn - salinity >= zeta`.
pub fn plume_mask(frame: &FieldFrame, f_ocn: f64, zeta: f64) -> Result<Vec<bool>> {
    if !(zeta > 0.0) {
        return Err(Error::invalid(format!("plume threshold {zeta} must be positive")));
    }
    Ok(frame.salinity.data.iter().map(|&s| f_ocn - s as f64 >= zeta).collect())
}
