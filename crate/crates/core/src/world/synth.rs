//! Parametric stand-in for hydrodynamic model output.
//!
//! The plume is an anisotropic freshwater lobe anchored at the river mouth.
//! Its amplitude follows a slow mean-reverting discharge walk modulated by
//! the tide, and its bulge is carried alongshore by the tidal current and
//! offshore by wind drift. Currents combine a tidal alongshore oscillation,
//! an ebb jet at the mouth, a radial outflow proportional to the plume's
//! salinity gradient and a wind-drift term, capped in magnitude.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Domain, FieldFrame, FieldSequence, Grid, Position, Wind, SLOT_SECONDS};
use crate::error::{Error, Result};

/// Mean-reverting (discrete OU) wind, one value per slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindProcess {
    /// Long-run mean wind vector, east and north components (m/s).
    pub mean_east_mps: f64,
    pub mean_north_mps: f64,
    /// Fraction of the gap to the mean closed each slot.
    pub reversion: f64,
    /// Per-slot innovation sd per component (m/s).
    pub sd_mps: f64,
}

impl Default for WindProcess {
    fn default() -> Self {
        Self { mean_east_mps: -3.0, mean_north_mps: 2.0, reversion: 0.05, sd_mps: 0.8 }
    }
}

impl WindProcess {
    pub fn calm() -> Self {
        Self { mean_east_mps: 0.0, mean_north_mps: 0.0, reversion: 0.0, sd_mps: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    /// Open-ocean background salinity (psu).
    pub f_ocn: f64,
    pub tidal_period_s: f64,
    /// Relative tidal modulation of the plume amplitude.
    pub tidal_modulation: f64,
    /// Long-run plume anomaly at the mouth (psu).
    pub discharge_mean: f64,
    /// Per-slot innovation variance of the discharge walk (psu²).
    pub discharge_var: f64,
    pub discharge_reversion: f64,
    /// Seaward distance of the plume bulge at mean discharge (m).
    pub plume_offset_m: f64,
    pub plume_length_m: f64,
    pub plume_width_m: f64,
    /// Decay length of the mouth-anchored core (m).
    pub core_length_m: f64,
    pub tidal_current_mps: f64,
    pub ebb_jet_mps: f64,
    pub jet_length_m: f64,
    /// Radial outflow speed per unit salinity gradient (m/s per psu/m).
    pub outflow_gain: f64,
    /// Fraction of the tidal current displacement the bulge follows.
    pub plume_tide_coupling: f64,
    pub wind: WindProcess,
    /// Surface drift as a fraction of wind speed.
    pub wind_drift_factor: f64,
    /// Per-slot relaxation of the wind-driven plume displacement.
    pub wind_relaxation: f64,
    pub current_cap_mps: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            f_ocn: 35.0,
            tidal_period_s: 45_000.0,
            tidal_modulation: 0.3,
            discharge_mean: 18.0,
            discharge_var: 0.25,
            discharge_reversion: 0.02,
            plume_offset_m: 3_000.0,
            plume_length_m: 2_500.0,
            plume_width_m: 1_500.0,
            core_length_m: 1_200.0,
            tidal_current_mps: 0.5,
            ebb_jet_mps: 0.5,
            jet_length_m: 2_000.0,
            outflow_gain: 75.0,
            plume_tide_coupling: 0.5,
            wind: WindProcess::default(),
            wind_drift_factor: 0.03,
            wind_relaxation: 0.25,
            current_cap_mps: 1.2,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tidal_period_s > 0.0) {
            return Err(Error::invalid("tidal_period_s must be positive"));
        }
        if !(self.current_cap_mps > 0.0 && self.current_cap_mps <= 1.5) {
            return Err(Error::invalid("current_cap_mps must lie in (0, 1.5]"));
        }
        if !(self.f_ocn > 0.0) {
            return Err(Error::invalid("f_ocn must be positive"));
        }
        if self.discharge_var < 0.0 || self.discharge_mean < 0.0 {
            return Err(Error::invalid("discharge parameters must be non-negative"));
        }
        for (name, v) in [
            ("plume_length_m", self.plume_length_m),
            ("plume_width_m", self.plume_width_m),
            ("core_length_m", self.core_length_m),
            ("jet_length_m", self.jet_length_m),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.wind_relaxation) || !(0.0..=1.0).contains(&self.wind.reversion) {
            return Err(Error::invalid("relaxation rates must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Latent per-slot forcing state.
struct Forcing {
    discharge: f64,
    wind: (f64, f64),
    wind_disp: (f64, f64),
}

pub fn generate_sequence(params: &SynthParams, domain: &Domain, num_slots: usize) -> Result<FieldSequence> {
    if num_slots == 0 {
        return Err(Error::invalid("num_slots must be at least 1"));
    }
    params.validate()?;
    if domain.is_land(domain.mouth()) {
        return Err(Error::invalid("mouth lies on land"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let w = &params.wind;
    let wind0 = (w.mean_east_mps, w.mean_north_mps);
    let mut forcing = Forcing {
        discharge: params.discharge_mean,
        wind: wind0,
        wind_disp: steady_wind_disp(params, wind0),
    };
    let mut frames = Vec::with_capacity(num_slots);
    for k in 0..num_slots {
        frames.push(render_frame(params, domain, k, &forcing));
        advance(params, &mut forcing, &mut rng);
    }
    FieldSequence::new(domain.clone(), params.f_ocn, frames)
}

fn steady_wind_disp(p: &SynthParams, wind: (f64, f64)) -> (f64, f64) {
    if p.wind_relaxation <= 0.0 {
        return (0.0, 0.0);
    }
    let g = p.wind_drift_factor * SLOT_SECONDS / p.wind_relaxation;
    (g * wind.0, g * wind.1)
}

fn advance(p: &SynthParams, f: &mut Forcing, rng: &mut ChaCha8Rng) {
    let z: f64 = StandardNormal.sample(rng);
    f.discharge += p.discharge_reversion * (p.discharge_mean - f.discharge) + p.discharge_var.sqrt() * z;
    f.discharge = f.discharge.clamp(0.0, p.f_ocn);

    let r = 1.0 - p.wind_relaxation;
    let drift = p.wind_drift_factor * SLOT_SECONDS;
    f.wind_disp = (r * f.wind_disp.0 + drift * f.wind.0, r * f.wind_disp.1 + drift * f.wind.1);

    let w = &p.wind;
    let ze: f64 = StandardNormal.sample(rng);
    let zn: f64 = StandardNormal.sample(rng);
    f.wind.0 += w.reversion * (w.mean_east_mps - f.wind.0) + w.sd_mps * ze;
    f.wind.1 += w.reversion * (w.mean_north_mps - f.wind.1) + w.sd_mps * zn;
}

fn render_frame(p: &SynthParams, domain: &Domain, k: usize, forcing: &Forcing) -> FieldFrame {
    let (nx, ny) = (domain.nx(), domain.ny());
    let cs = domain.cell_size_m();
    let t = k as f64 * SLOT_SECONDS;
    let phase = 2.0 * PI * t / p.tidal_period_s;
    let (cos_p, sin_p) = (phase.cos(), phase.sin());

    let amplitude = (forcing.discharge * (1.0 + p.tidal_modulation * cos_p)).clamp(0.0, p.f_ocn);
    let scale = if p.discharge_mean > 0.0 { (amplitude / p.discharge_mean).sqrt() } else { 1.0 };

    let mouth = domain.mouth_position();
    // seaward is away from the boundary the mouth sits on
    let seaward = seaward_unit(domain);
    let along = (-seaward.1, seaward.0);
    let tide_disp = p.plume_tide_coupling * p.tidal_current_mps * p.tidal_period_s / (2.0 * PI) * sin_p;
    let offset = p.plume_offset_m * scale;
    let mut centroid = Position::new(
        mouth.x + seaward.0 * offset + along.0 * tide_disp + forcing.wind_disp.0,
        mouth.y + seaward.1 * offset + along.1 * tide_disp + forcing.wind_disp.1,
    );
    centroid.x = centroid.x.clamp(0.0, domain.max_x());
    centroid.y = centroid.y.clamp(0.0, domain.max_y());

    let axis = {
        let (dx, dy) = (centroid.x - mouth.x, centroid.y - mouth.y);
        let n = dx.hypot(dy);
        if n > 1e-9 {
            (dx / n, dy / n)
        } else {
            seaward
        }
    };
    let lp = p.plume_length_m * scale.max(0.2);
    let lq = p.plume_width_m * scale.max(0.2);
    let lc = p.core_length_m * scale.max(0.2);

    let mut anomaly = vec![0.0f64; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let x = i as f64 * cs;
            let y = j as f64 * cs;
            let core = (-(x - mouth.x).hypot(y - mouth.y) / lc).exp();
            let (dx, dy) = (x - centroid.x, y - centroid.y);
            let dp = dx * axis.0 + dy * axis.1;
            let dq = -dx * axis.1 + dy * axis.0;
            let bulge = (-((dp / lp).powi(2) + (dq / lq).powi(2)).sqrt()).exp();
            let shape = 1.0 - (1.0 - core) * (1.0 - bulge);
            anomaly[j * nx + i] = amplitude * shape;
        }
    }

    let mut salinity = Grid::filled(nx, ny, 0.0);
    let mut cur_u = Grid::filled(nx, ny, 0.0);
    let mut cur_v = Grid::filled(nx, ny, 0.0);
    let (wu, wv) = forcing.wind;
    let coast_x = domain.max_x().max(cs);
    for j in 0..ny {
        for i in 0..nx {
            let idx = j * nx + i;
            let s = (p.f_ocn - anomaly[idx]).clamp(0.0, p.f_ocn);
            salinity.data[idx] = s as f32;
            if domain.land_mask()[idx] {
                continue;
            }
            let x = i as f64 * cs;
            let y = j as f64 * cs;
            let gx = diff(&anomaly, nx, i, j, true) / cs;
            let gy = diff(&anomaly, nx, i, j, false) / cs;
            let grad = gx.hypot(gy);
            let (rx, ry) = (x - mouth.x, y - mouth.y);
            let dist = rx.hypot(ry);
            let radial = if dist < cs { seaward } else { (rx / dist, ry / dist) };

            let outflow = p.outflow_gain * grad;
            let jet = p.ebb_jet_mps * cos_p * (-dist / p.jet_length_m).exp();
            // alongshore tide strongest near the coast
            let tide = p.tidal_current_mps * cos_p * (0.5 + 0.5 * x / coast_x);
            let mut u = (outflow + jet) * radial.0 + tide * along.0 + p.wind_drift_factor * wu;
            let mut v = (outflow + jet) * radial.1 + tide * along.1 + p.wind_drift_factor * wv;
            let mag = u.hypot(v);
            if mag > p.current_cap_mps {
                let f = p.current_cap_mps / mag;
                u *= f;
                v *= f;
            }
            cur_u.data[idx] = u as f32;
            cur_v.data[idx] = v as f32;
            // float rounding must not push the stored magnitude over the cap
            let stored = (cur_u.data[idx] as f64).hypot(cur_v.data[idx] as f64);
            if stored > p.current_cap_mps {
                let f = (p.current_cap_mps / stored) as f32 * (1.0 - f32::EPSILON);
                cur_u.data[idx] *= f;
                cur_v.data[idx] *= f;
            }
        }
    }

    FieldFrame {
        slot: k as u32,
        salinity,
        cur_u,
        cur_v,
        wind: Wind { angle_rad: wv.atan2(wu) as f32, speed_mps: wu.hypot(wv) as f32 },
    }
}

fn seaward_unit(domain: &Domain) -> (f64, f64) {
    let m = domain.mouth();
    if m.i == domain.nx() - 1 {
        (-1.0, 0.0)
    } else if m.i == 0 {
        (1.0, 0.0)
    } else if m.j == 0 {
        (0.0, 1.0)
    } else {
        (0.0, -1.0)
    }
}

fn diff(a: &[f64], nx: usize, i: usize, j: usize, along_x: bool) -> f64 {
    let ny = a.len() / nx;
    let at = |i: usize, j: usize| a[j * nx + i];
    if along_x {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(nx - 1);
        (at(hi, j) - at(lo, j)) / (hi - lo) as f64
    } else {
        let lo = j.saturating_sub(1);
        let hi = (j + 1).min(ny - 1);
        (at(i, hi) - at(i, lo)) / (hi - lo) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::plume_mask;

    fn tidal_only() -> SynthParams {
        SynthParams { discharge_var: 0.0, wind: WindProcess::calm(), ..SynthParams::default() }
    }

    #[test]
    fn rejects_zero_slots() {
        assert!(generate_sequence(&SynthParams::default(), &Domain::smoke(), 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let p = SynthParams { seed: 11, ..SynthParams::default() };
        let a = generate_sequence(&p, &Domain::smoke(), 30).unwrap();
        let b = generate_sequence(&p, &Domain::smoke(), 30).unwrap();
        assert_eq!(a, b);
        let c = generate_sequence(&SynthParams { seed: 12, ..p }, &Domain::smoke(), 30).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tidal_world_repeats_every_25_slots() {
        let seq = generate_sequence(&tidal_only(), &Domain::standard(), 60).unwrap();
        for k in 0..35 {
            let a = &seq.frame(k).salinity.data;
            let b = &seq.frame(k + 25).salinity.data;
            let worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
            assert!(worst <= 1e-6, "slot {k}: {worst}");
        }
    }

    #[test]
    fn currents_respect_cap_and_exceed_one_mps() {
        let p = SynthParams { seed: 3, ..SynthParams::default() };
        let seq = generate_sequence(&p, &Domain::standard(), 100).unwrap();
        let peak = seq.frames().iter().map(|f| f.max_current()).fold(0.0, f64::max);
        assert!(peak <= p.current_cap_mps, "peak {peak}");
        assert!(peak > 1.0, "peak {peak}");
    }

    #[test]
    fn salinity_within_bounds() {
        let p = SynthParams::default();
        let seq = generate_sequence(&p, &Domain::standard(), 50).unwrap();
        for f in seq.frames() {
            assert!(f.salinity.data.iter().all(|&s| (0.0..=36.0).contains(&s)));
        }
    }

    #[test]
    fn ebb_jet_points_seaward_at_mouth() {
        let seq = generate_sequence(&tidal_only(), &Domain::standard(), 30).unwrap();
        let mouth = seq.domain().mouth_position();
        // cos(phase) = 1 at slot 0 and slot 25 (peak ebb)
        for k in [0usize, 1, 24, 25] {
            let (u, _) = seq.current_at(mouth, k as f64 * SLOT_SECONDS).unwrap();
            assert!(-u > 0.0, "slot {k}: u = {u}");
        }
    }

    #[test]
    fn peak_discharge_plume_larger_than_slack() {
        let seq = generate_sequence(&tidal_only(), &Domain::standard(), 30).unwrap();
        let area = |k: usize| plume_mask(seq.frame(k), 35.0, 3.0).unwrap().iter().filter(|&&m| m).count();
        // phase 0 is peak amplitude; slot 12-13 is half a period later (minimum)
        assert!(area(0) > area(12));
        assert!(area(0) > area(13));
    }

    #[test]
    fn mean_salinity_autocorrelation_peaks_near_tidal_period() {
        let seq = generate_sequence(&SynthParams::default(), &Domain::standard(), 100).unwrap();
        let water = seq.domain().water_indices();
        let series: Vec<f64> = seq
            .frames()
            .iter()
            .map(|f| water.iter().map(|&i| f.salinity.data[i] as f64).sum::<f64>() / water.len() as f64)
            .collect();
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let dev: Vec<f64> = series.iter().map(|v| v - mean).collect();
        let var = dev.iter().map(|d| d * d).sum::<f64>();
        let acf = |lag: usize| dev.iter().zip(&dev[lag..]).map(|(a, b)| a * b).sum::<f64>() / var;
        let peak = (15..=35).max_by(|&a, &b| acf(a).total_cmp(&acf(b))).unwrap();
        assert!((23..=27).contains(&peak), "peak lag {peak}");
        assert!(acf(peak) > acf(peak - 1) && acf(peak) > acf(peak + 1));
    }

    #[test]
    fn currents_correlate_with_plume_anomaly() {
        let seq = generate_sequence(&SynthParams::default(), &Domain::standard(), 50).unwrap();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for f in seq.frames() {
            let mask = plume_mask(f, seq.f_ocn(), 1.0).unwrap();
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    xs.push((f.cur_u.data[i] as f64).hypot(f.cur_v.data[i] as f64));
                    ys.push(seq.f_ocn() - f.salinity.data[i] as f64);
                }
            }
        }
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>().sqrt();
        let sy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>().sqrt();
        let r = cov / (sx * sy);
        assert!(r > 0.3, "pearson {r}");
    }
}
