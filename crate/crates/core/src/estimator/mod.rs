//! Spatiotemporal Gaussian-process regression over a sliding window of
//! fleet measurements.
//!
//! Prior: `f ~ GP(f_ocn, K)` with the separable kernel
//! `K((x,t),(x',t')) = K_s(x,x') * h(|t-t'|)`,
//! `K_s = lambda^2 exp(-|x-x'| / ell)` and
//! `h(tau) = beta0 - beta1 tau + beta2 (cos(pi tau / T0) - 1)`.

mod fit;

pub use fit::{fit_kernel, FitOptions, KernelFit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{backward_solve_transposed, cholesky, dot, forward_solve};
use crate::vehicle::{Record, SampleSet};
use crate::world::{Position, SLOT_SECONDS};

pub const DEFAULT_WINDOW_SLOTS: u32 = 24;

/// Jitter ladder added to the kernel diagonal when factorization fails.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    /// Signal standard deviation (psu).
    pub lambda: f64,
    /// Spatial length scale (m).
    pub ell_m: f64,
    pub beta0: f64,
    /// Linear decay per second.
    pub beta1: f64,
    pub beta2: f64,
    /// Oscillation period parameter (s).
    pub t0_s: f64,
    /// Measurement noise variance (psu²).
    pub noise_var: f64,
}

impl Default for KernelParams {
    /// Values refit on the default synthetic world (`plume fit-kernel`).
    fn default() -> Self {
        Self {
            lambda: 4.86,
            ell_m: 6970.0,
            beta0: 0.790,
            beta1: 1.07e-6,
            beta2: 0.0,
            t0_s: 45_000.0,
            noise_var: 0.01,
        }
    }
}

impl KernelParams {
    pub fn spatial(&self, dist_m: f64) -> f64 {
        self.lambda * self.lambda * (-dist_m / self.ell_m).exp()
    }

    pub fn temporal(&self, tau_s: f64) -> f64 {
        self.beta0 - self.beta1 * tau_s + self.beta2 * ((std::f64::consts::PI * tau_s / self.t0_s).cos() - 1.0)
    }

    pub fn cov(&self, a: Position, ta: f64, b: Position, tb: f64) -> f64 {
        self.spatial(a.distance(&b)) * self.temporal((ta - tb).abs())
    }

    pub fn prior_variance(&self) -> f64 {
        self.lambda * self.lambda * self.beta0
    }

    /// Checks positivity of scales and of `h` on `[0, span_s]`.
    pub fn validate(&self, span_s: f64) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("ell_m", self.ell_m), ("t0_s", self.t0_s)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("kernel {name} = {v} must be positive")));
            }
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(Error::invalid("kernel noise_var must be non-negative"));
        }
        if let Some(tau) = first_nonpositive(self, span_s) {
            return Err(Error::InvalidTemporalKernel(format!("h({tau:.0} s) <= 0 inside the {span_s:.0} s window")));
        }
        Ok(())
    }
}

fn first_nonpositive(p: &KernelParams, span_s: f64) -> Option<f64> {
    let steps = 2000;
    (0..=steps).map(|s| span_s * s as f64 / steps as f64).find(|&tau| !(p.temporal(tau) > 0.0))
}

/// `lambda^2 exp(-|x - x'| / ell)`.
pub fn k_spatial(x: Position, x2: Position, params: &KernelParams) -> f64 {
    params.spatial(x.distance(&x2))
}

/// `beta0 - beta1 tau + beta2 (cos(pi tau / T0) - 1)`.
pub fn h_temporal(tau_s: f64, params: &KernelParams) -> Result<f64> {
    if !(tau_s >= 0.0) {
        return Err(Error::invalid("tau must be non-negative"));
    }
    Ok(params.temporal(tau_s))
}

/// A measurement tagged with the slot it was uplinked in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Datum {
    pub slot: u32,
    pub pos: Position,
    pub t: f64,
    pub y: f64,
}

/// Windowed GPR posterior. Immutable; [`GprModel::update`] returns a new model.
#[derive(Clone, Debug)]
pub struct GprModel {
    params: KernelParams,
    f_ocn: f64,
    window_slots: u32,
    data: Vec<Datum>,
    /// Lower factor of `K(D,D) + (noise_var + jitter) I`, row-major.
    chol: Vec<f64>,
    /// `L^-1 (y - f_ocn)`.
    whitened: Vec<f64>,
    /// `Kbar^-1 (y - f_ocn)`.
    alpha: Vec<f64>,
    jitter: f64,
}

impl GprModel {
    pub fn new(params: KernelParams, f_ocn: f64, window_slots: u32) -> Result<Self> {
        if window_slots == 0 {
            return Err(Error::invalid("window must hold at least one slot"));
        }
        params.validate(window_slots as f64 * SLOT_SECONDS)?;
        Ok(Self {
            params,
            f_ocn,
            window_slots,
            data: Vec::new(),
            chol: Vec::new(),
            whitened: Vec::new(),
            alpha: Vec::new(),
            jitter: 0.0,
        })
    }

    /// Batch construction from tagged data, keeping slots in `(slot - M, slot]`.
    pub fn from_data(params: KernelParams, f_ocn: f64, window_slots: u32, data: Vec<Datum>, slot: u32) -> Result<Self> {
        let mut model = Self::new(params, f_ocn, window_slots)?;
        model.data = data;
        model.retain_window(slot);
        model.refactor()?;
        Ok(model)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn f_ocn(&self) -> f64 {
        self.f_ocn
    }

    pub fn window_slots(&self) -> u32 {
        self.window_slots
    }

    pub fn data(&self) -> &[Datum] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Appends the slot's samples, drops data older than the window, and
    /// refactors.
    pub fn update(&self, new_samples: &[SampleSet], slot: u32) -> Result<Self> {
        let mut next = self.clone();
        for set in new_samples {
            next.data.extend(set.records.iter().map(|r| Datum { slot: set.slot, pos: r.pos, t: r.t, y: r.y }));
        }
        next.retain_window(slot);
        next.refactor()?;
        Ok(next)
    }

    fn retain_window(&mut self, slot: u32) {
        // keep slots in (slot - M, slot]
        let m = self.window_slots as u64;
        self.data.retain(|d| d.slot as u64 + m > slot as u64);
    }

    fn kernel_matrix(&self) -> Vec<f64> {
        let n = self.data.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            let a = &self.data[i];
            for j in 0..=i {
                let b = &self.data[j];
                let v = self.params.cov(a.pos, a.t, b.pos, b.t);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
            k[i * n + i] += self.params.noise_var;
        }
        k
    }

    fn refactor(&mut self) -> Result<()> {
        let n = self.data.len();
        if n == 0 {
            self.chol.clear();
            self.whitened.clear();
            self.alpha.clear();
            self.jitter = 0.0;
            return Ok(());
        }
        let base = self.kernel_matrix();
        let (chol, jitter) = factor_with_jitter(base, n)?;
        let mut w: Vec<f64> = self.data.iter().map(|d| d.y - self.f_ocn).collect();
        forward_solve(&chol, n, &mut w);
        let mut alpha = w.clone();
        backward_solve_transposed(&chol, n, &mut alpha);
        self.chol = chol;
        self.whitened = w;
        self.alpha = alpha;
        self.jitter = jitter;
        Ok(())
    }

    fn cross_cov(&self, q: Position, tq: f64) -> Vec<f64> {
        self.data.iter().map(|d| self.params.cov(q, tq, d.pos, d.t)).collect()
    }

    fn check_query(q: Position, t: f64) -> Result<()> {
        if q.is_finite() && t.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid("non-finite query"))
        }
    }

    /// `f_ocn + k_* alpha` per query `(x, t)`.
    pub fn posterior_mean(&self, queries: &[(Position, f64)]) -> Result<Vec<f64>> {
        queries
            .iter()
            .map(|&(q, t)| {
                Self::check_query(q, t)?;
                if self.data.is_empty() {
                    return Ok(self.f_ocn);
                }
                Ok(self.f_ocn + dot(&self.cross_cov(q, t), &self.alpha))
            })
            .collect()
    }

    /// `K(q,q) - k_* Kbar^-1 k_*^T`, floored at zero.
    pub fn posterior_var(&self, queries: &[(Position, f64)]) -> Result<Vec<f64>> {
        let n = self.data.len();
        queries
            .iter()
            .map(|&(q, t)| {
                Self::check_query(q, t)?;
                let prior = self.params.prior_variance();
                if n == 0 {
                    return Ok(prior);
                }
                let mut v = self.cross_cov(q, t);
                forward_solve(&self.chol, n, &mut v);
                Ok((prior - dot(&v, &v)).max(0.0))
            })
            .collect()
    }

    /// Posterior mean at many positions sharing one query time; the temporal
    /// factor is computed once per datum.
    pub fn mean_at_time(&self, positions: &[Position], t: f64) -> Result<Vec<f64>> {
        if !t.is_finite() {
            return Err(Error::invalid("non-finite query time"));
        }
        if self.data.is_empty() {
            return Ok(vec![self.f_ocn; positions.len()]);
        }
        let lam2 = self.params.lambda * self.params.lambda;
        let weights: Vec<f64> =
            self.data.iter().zip(&self.alpha).map(|(d, a)| lam2 * self.params.temporal((t - d.t).abs()) * a).collect();
        let inv_ell = 1.0 / self.params.ell_m;
        positions
            .iter()
            .map(|q| {
                if !q.is_finite() {
                    return Err(Error::invalid("non-finite query"));
                }
                let mut s = 0.0;
                for (d, w) in self.data.iter().zip(&weights) {
                    s += w * (-(q.x - d.pos.x).hypot(q.y - d.pos.y) * inv_ell).exp();
                }
                Ok(self.f_ocn + s)
            })
            .collect()
    }

    /// `L^-1 k_*` for each query, reusable across hypothetical extensions.
    pub fn whiten_queries(&self, positions: &[Position], t: f64) -> WhitenedQueries {
        let n = self.data.len();
        let mut v = Vec::with_capacity(positions.len() * n);
        for &q in positions {
            let start = v.len();
            v.extend(self.data.iter().map(|d| self.params.cov(q, t, d.pos, d.t)));
            forward_solve(&self.chol, n, &mut v[start..]);
        }
        WhitenedQueries { positions: positions.to_vec(), t, n, v }
    }

    /// Conditions the current posterior on extra records without
    /// refactoring the existing data (block Cholesky extension).
    pub fn extend(&self, extra: &[Record]) -> Result<Extension<'_>> {
        let n = self.data.len();
        let m = extra.len();
        // B = L^-1 K(D, extra), stored column per extra record
        let mut b = vec![0.0; m * n];
        for (j, r) in extra.iter().enumerate() {
            let col = &mut b[j * n..(j + 1) * n];
            for (c, d) in col.iter_mut().zip(&self.data) {
                *c = self.params.cov(r.pos, r.t, d.pos, d.t);
            }
            forward_solve(&self.chol, n, col);
        }
        let mut s = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..=i {
                let v = self.params.cov(extra[i].pos, extra[i].t, extra[j].pos, extra[j].t)
                    - dot(&b[i * n..(i + 1) * n], &b[j * n..(j + 1) * n]);
                s[i * m + j] = v;
                s[j * m + i] = v;
            }
            s[i * m + i] += self.params.noise_var + self.jitter;
        }
        let (c, _) = factor_with_jitter(s, m)?;
        let mut w2: Vec<f64> = extra
            .iter()
            .enumerate()
            .map(|(j, r)| r.y - self.f_ocn - dot(&b[j * n..(j + 1) * n], &self.whitened))
            .collect();
        forward_solve(&c, m, &mut w2);
        Ok(Extension { base: self, extra: extra.to_vec(), b, c, w2 })
    }

    /// Mean and variance at whitened queries with no extension.
    pub fn posterior_from_whitened(&self, wq: &WhitenedQueries) -> Vec<(f64, f64)> {
        let n = wq.n;
        let prior = self.params.prior_variance();
        (0..wq.positions.len())
            .map(|q| {
                let v1 = &wq.v[q * n..(q + 1) * n];
                (self.f_ocn + dot(v1, &self.whitened), (prior - dot(v1, v1)).max(0.0))
            })
            .collect()
    }
}

fn factor_with_jitter(mut k: Vec<f64>, n: usize) -> Result<(Vec<f64>, f64)> {
    let mut applied = 0.0;
    for &jit in &JITTER_LADDER {
        for i in 0..n {
            k[i * n + i] += jit - applied;
        }
        applied = jit;
        if let Some(l) = cholesky(&k, n) {
            return Ok((l, jit));
        }
    }
    Err(Error::KernelDegenerate { jitter: applied })
}

pub struct WhitenedQueries {
    positions: Vec<Position>,
    t: f64,
    n: usize,
    v: Vec<f64>,
}

impl WhitenedQueries {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Posterior of a model hypothetically conditioned on extra records.
pub struct Extension<'a> {
    base: &'a GprModel,
    extra: Vec<Record>,
    /// `L^-1 K(D, extra)`, column-major by extra record.
    b: Vec<f64>,
    c: Vec<f64>,
    w2: Vec<f64>,
}

impl Extension<'_> {
    pub fn posterior(&self, wq: &WhitenedQueries) -> Vec<(f64, f64)> {
        let base = self.base;
        let n = wq.n;
        let m = self.extra.len();
        let prior = base.params.prior_variance();
        let mut v2 = vec![0.0; m];
        (0..wq.positions.len())
            .map(|q| {
                let v1 = &wq.v[q * n..(q + 1) * n];
                let pos = wq.positions[q];
                for (j, r) in self.extra.iter().enumerate() {
                    v2[j] = base.params.cov(pos, wq.t, r.pos, r.t) - dot(&self.b[j * n..(j + 1) * n], v1);
                }
                forward_solve(&self.c, m, &mut v2);
                let mean = base.f_ocn + dot(v1, &base.whitened) + dot(&v2, &self.w2);
                let var = prior - dot(v1, v1) - dot(&v2, &v2);
                (mean, var.max(0.0))
            })
            .collect()
    }
}
