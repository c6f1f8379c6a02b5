//! Kernel hyperparameters from a field sequence by matching empirical
//! second moments of the anomaly `f - f_ocn`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{KernelParams, DEFAULT_WINDOW_SLOTS};
use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::world::{FieldSequence, SLOT_SECONDS};

pub const MIN_FIT_SLOTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Random water-cell pairs drawn per slot for the spatial curve.
    pub pairs_per_slot: usize,
    pub distance_bins: usize,
    /// Largest pair distance considered; `None` uses half the shorter domain side.
    pub max_distance_m: Option<f64>,
    /// Largest lag (slots) in the temporal fit.
    pub max_lag_slots: usize,
    pub window_slots: u32,
    pub t0_s: f64,
    pub noise_var: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            pairs_per_slot: 2000,
            distance_bins: 24,
            max_distance_m: None,
            max_lag_slots: DEFAULT_WINDOW_SLOTS as usize,
            window_slots: DEFAULT_WINDOW_SLOTS,
            t0_s: 45_000.0,
            noise_var: 0.01,
            seed: 0,
        }
    }
}

/// One point of an empirical curve and the fitted model at the same abscissa.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Distance (m) or lag (s).
    pub x: f64,
    pub empirical: f64,
    pub fitted: f64,
    pub count: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelFit {
    pub params: KernelParams,
    /// Spatial covariance (psu²) against distance.
    pub spatial: Vec<CurvePoint>,
    /// Temporal correlation against lag.
    pub temporal: Vec<CurvePoint>,
}

pub fn fit_kernel(seq: &FieldSequence, opts: &FitOptions) -> Result<KernelFit> {
    if seq.num_slots() < MIN_FIT_SLOTS {
        return Err(Error::invalid(format!(
            "kernel fit needs at least {MIN_FIT_SLOTS} slots, got {}",
            seq.num_slots()
        )));
    }
    if opts.distance_bins < 2 || opts.max_lag_slots < 2 || opts.max_lag_slots >= seq.num_slots() {
        return Err(Error::invalid("fit needs >= 2 distance bins and 2 <= max lag < num slots"));
    }
    let (spatial_bins, lambda, ell) = fit_spatial(seq, opts)?;
    let (temporal_bins, beta) = fit_temporal(seq, opts)?;
    let params = KernelParams {
        lambda,
        ell_m: ell,
        beta0: beta[0],
        beta1: beta[1],
        beta2: beta[2],
        t0_s: opts.t0_s,
        noise_var: opts.noise_var,
    };
    params.validate(opts.window_slots as f64 * SLOT_SECONDS)?;
    let spatial = spatial_bins
        .into_iter()
        .map(|(x, empirical, count)| CurvePoint { x, empirical, fitted: params.spatial(x), count })
        .collect();
    let temporal = temporal_bins
        .into_iter()
        .map(|(x, empirical, count)| CurvePoint { x, empirical, fitted: params.temporal(x), count })
        .collect();
    Ok(KernelFit { params, spatial, temporal })
}

fn anomalies(seq: &FieldSequence, water: &[usize]) -> Vec<Vec<f64>> {
    seq.frames()
        .iter()
        .map(|f| water.iter().map(|&i| f.salinity.data[i] as f64 - seq.f_ocn()).collect())
        .collect()
}

/// Binned `E[a(x) a(x')]` and the weighted least-squares exponential fit.
pub(super) fn fit_spatial(seq: &FieldSequence, opts: &FitOptions) -> Result<(Vec<(f64, f64, u64)>, f64, f64)> {
    let d = seq.domain();
    let water = d.water_indices();
    let pos: Vec<_> = water.iter().map(|&i| d.node_position(d.cell_of_index(i))).collect();
    let anom = anomalies(seq, &water);
    let max_d = opts.max_distance_m.unwrap_or(0.5 * d.width_m().min(d.height_m()));
    let nb = opts.distance_bins;
    // bin 0 holds zero-distance pairs; bins 1..nb split (0, max_d]
    let width = max_d / (nb - 1) as f64;
    let mut sum = vec![0.0; nb];
    let mut sum_d = vec![0.0; nb];
    let mut count = vec![0u64; nb];
    for a in &anom {
        sum[0] += a.iter().map(|v| v * v).sum::<f64>();
        count[0] += a.len() as u64;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for a in &anom {
        for _ in 0..opts.pairs_per_slot {
            let i = rng.random_range(0..water.len());
            let j = rng.random_range(0..water.len());
            if i == j {
                continue;
            }
            let dist = pos[i].distance(&pos[j]);
            if dist > max_d {
                continue;
            }
            let b = ((dist / width).ceil() as usize).clamp(1, nb - 1);
            sum[b] += a[i] * a[j];
            sum_d[b] += dist;
            count[b] += 1;
        }
    }
    let bins: Vec<(f64, f64, u64)> = (0..nb)
        .filter(|&b| count[b] > 0)
        .map(|b| (sum_d[b] / count[b] as f64, sum[b] / count[b] as f64, count[b]))
        .collect();
    if bins[0].1 <= 0.0 {
        return Err(Error::invalid("field has no variance about f_ocn"));
    }
    // profile out lambda^2 in closed form, search ell on a log grid then refine
    let sse_at = |ell: f64| -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        for &(x, c, _) in &bins {
            let e = (-x / ell).exp();
            num += c * e;
            den += e * e;
        }
        let lam2 = (num / den).max(0.0);
        let sse = bins.iter().map(|&(x, c, _)| (c - lam2 * (-x / ell).exp()).powi(2)).sum();
        (sse, lam2)
    };
    let lo = d.cell_size_m() * 0.1;
    let hi = max_d * 20.0;
    let steps = 400;
    let grid: Vec<f64> = (0..=steps).map(|s| lo * (hi / lo).powf(s as f64 / steps as f64)).collect();
    let best = (0..grid.len()).min_by(|&a, &b| sse_at(grid[a]).0.total_cmp(&sse_at(grid[b]).0)).unwrap();
    let (mut a, mut b) = (grid[best.saturating_sub(1)].ln(), grid[(best + 1).min(steps)].ln());
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - phi * (b - a);
        let e = a + phi * (b - a);
        if sse_at(c.exp()).0 < sse_at(e.exp()).0 {
            b = e;
        } else {
            a = c;
        }
    }
    let ell = (0.5 * (a + b)).exp();
    let lam2 = sse_at(ell).1;
    if !(lam2 > 0.0) {
        return Err(Error::invalid("spatial fit produced zero signal variance"));
    }
    Ok((bins, lam2.sqrt(), ell))
}

/// Lagged anomaly second moment pooled over cells, normalized by lag 0, and
/// a linear least-squares fit of `h`.
fn fit_temporal(seq: &FieldSequence, opts: &FitOptions) -> Result<(Vec<(f64, f64, u64)>, [f64; 3])> {
    let water = seq.domain().water_indices();
    let anom = anomalies(seq, &water);
    let n = anom.len();
    let dt = seq.dt_s();
    let mut bins = Vec::with_capacity(opts.max_lag_slots + 1);
    for lag in 0..=opts.max_lag_slots {
        let mut s = 0.0;
        let mut c = 0u64;
        for t in 0..n - lag {
            let (a, b) = (&anom[t], &anom[t + lag]);
            s += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            c += a.len() as u64;
        }
        bins.push((lag as f64 * dt, s / c as f64, c));
    }
    let c0 = bins[0].1;
    if !(c0 > 0.0) {
        return Err(Error::invalid("field has no variance about f_ocn"));
    }
    for b in &mut bins {
        b.1 /= c0;
    }
    // regress rho on [1, -tau, cos(pi tau / T0) - 1] with beta1, beta2 >= 0;
    // a negative cosine weight would make the separable kernel indefinite.
    // tau in hours for conditioning
    let hour = 3600.0;
    let rows: Vec<([f64; 3], f64)> = bins
        .iter()
        .map(|&(tau, rho, _)| ([1.0, -tau / hour, (std::f64::consts::PI * tau / opts.t0_s).cos() - 1.0], rho))
        .collect();
    let mut best: Option<(f64, [f64; 3])> = None;
    for free in [[true, true], [true, false], [false, true], [false, false]] {
        let cols: Vec<usize> = std::iter::once(0).chain((1..3).filter(|&c| free[c - 1])).collect();
        let k = cols.len();
        let mut ata = vec![0.0; k * k];
        let mut atb = vec![0.0; k];
        for (row, rho) in &rows {
            for (r, &cr) in cols.iter().enumerate() {
                atb[r] += row[cr] * rho;
                for (c, &cc) in cols.iter().enumerate() {
                    ata[r * k + c] += row[cr] * row[cc];
                }
            }
        }
        let Some(sol) = solve_dense(ata, atb, k) else { continue };
        let mut beta = [0.0; 3];
        for (&c, v) in cols.iter().zip(sol) {
            beta[c] = v;
        }
        if beta[1] < 0.0 || beta[2] < 0.0 {
            continue;
        }
        let sse: f64 =
            rows.iter().map(|(row, rho)| (rho - row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).powi(2)).sum();
        if best.is_none_or(|(b, _)| sse < b) {
            best = Some((sse, beta));
        }
    }
    let (_, beta) = best.ok_or_else(|| Error::invalid("temporal fit is singular"))?;
    Ok((bins, [beta[0], beta[1] / hour, beta[2]]))
}
