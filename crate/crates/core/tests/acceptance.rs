//! End-to-end acceptance suite. Each criterion prints one
//! `criterion N: PASS|FAIL ...` line to stderr and asserts at the pinned tolerance.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use plume_core::coordinator::train::{train, TrainConfig};
use plume_core::coordinator::wire::{decode_uplink, encode_uplink, UplinkMsg, WireRecord, MAX_UPLINK_BYTES};
use plume_core::coordinator::{
    derive_seed, run_eval_episode, streams, DomainKind, DqnNet, EpisodeConfig, EpisodeLog, Policy, WorldConfig,
};
use plume_core::estimator::{fit_kernel, h_temporal, k_spatial, Datum, FitOptions, GprModel, KernelParams};
use plume_core::policy::dqn::{argmax, batch_inputs, bellman_loss_and_grad};
use plume_core::policy::net::{Architecture, Workspace};
use plume_core::policy::state::AgentState;
use plume_core::vehicle::{step_slot, Action, EnergyModel, VehicleState, DEFAULT_SUBSTEP_S};
use plume_core::world::{Domain, FieldFrame, FieldSequence, Grid, Position, Wind, SLOT_SECONDS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// bypasses the harness capture so passing criteria print too
fn report(n: u32, pass: bool, detail: String, started: Instant) {
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n}: {} {detail} ({:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------- 1

fn dense_posterior(p: &KernelParams, data: &[Datum], q: Position, tq: f64) -> (f64, f64) {
    let n = data.len();
    let lam2 = p.lambda * p.lambda;
    let cov = |a: Position, ta: f64, b: Position, tb: f64| {
        let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
        let tau = (ta - tb).abs();
        let h = p.beta0 - p.beta1 * tau + p.beta2 * ((std::f64::consts::PI * tau / p.t0_s).cos() - 1.0);
        lam2 * (-d / p.ell_m).exp() * h
    };
    let k = DMatrix::from_fn(n, n, |i, j| {
        cov(data[i].pos, data[i].t, data[j].pos, data[j].t) + if i == j { p.noise_var } else { 0.0 }
    });
    let inv = k.try_inverse().expect("kernel matrix is invertible");
    let ks = DVector::from_fn(n, |i, _| cov(q, tq, data[i].pos, data[i].t));
    let r = DVector::from_fn(n, |i, _| data[i].y - 35.0);
    (35.0 + ks.dot(&(&inv * r)), lam2 * p.beta0 - ks.dot(&(&inv * &ks)))
}

#[test]
fn criterion_01_gpr_matches_dense_oracle() {
    let started = Instant::now();
    let p = KernelParams { lambda: 2.5, ell_m: 1500.0, beta0: 0.9, beta1: 5e-6, beta2: 0.05, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let slot = rng.random_range(1..200u32);
        let n = rng.random_range(1..=50);
        let data: Vec<Datum> = (0..n)
            .map(|_| {
                let s = rng.random_range(slot.saturating_sub(23).max(1)..=slot);
                Datum {
                    slot: s,
                    pos: Position::new(rng.random_range(0.0..8000.0), rng.random_range(0.0..8000.0)),
                    t: (s as f64 - rng.random_range(0.0..1.0)) * SLOT_SECONDS,
                    y: 35.0 - rng.random_range(0.0..8.0),
                }
            })
            .collect();
        let model = GprModel::from_data(p.clone(), 35.0, 24, data.clone(), slot).unwrap();
        let queries: Vec<(Position, f64)> = (0..10)
            .map(|_| {
                let pos = Position::new(rng.random_range(0.0..8000.0), rng.random_range(0.0..8000.0));
                (pos, slot as f64 * SLOT_SECONDS)
            })
            .collect();
        let means = model.posterior_mean(&queries).unwrap();
        let vars = model.posterior_var(&queries).unwrap();
        for (i, &(q, t)) in queries.iter().enumerate() {
            let (m, v) = dense_posterior(&p, &data, q, t);
            worst = worst.max((m - means[i]).abs()).max((v - vars[i]).abs());
        }
    }
    let empty = GprModel::new(p.clone(), 35.0, 24).unwrap();
    let q = [(Position::new(10.0, 20.0), 1800.0)];
    let prior_ok = empty.posterior_mean(&q).unwrap()[0] == 35.0
        && empty.posterior_var(&q).unwrap()[0] == p.lambda * p.lambda * p.beta0;
    let secs = started.elapsed().as_secs_f64();
    let pass = worst <= 1e-8 && prior_ok && secs < 10.0;
    report(1, pass, format!("max |diff| {worst:.2e}, empty prior exact {prior_ok}"), started);
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_kernel_identities() {
    let started = Instant::now();
    let p = KernelParams { lambda: 3.7, ell_m: 2100.0, beta0: 0.8, beta1: 2e-6, beta2: 0.07, ..Default::default() };
    let x = Position::new(1234.5, 678.9);
    let eps = f64::EPSILON * 4.0;
    let ks = k_spatial(x, x, &p);
    let h0 = h_temporal(0.0, &p).unwrap();
    let ht0 = h_temporal(p.t0_s, &p).unwrap();
    let want_t0 = p.beta0 - p.beta1 * p.t0_s - 2.0 * p.beta2;
    let pass = (ks - p.lambda * p.lambda).abs() <= eps * ks
        && (h0 - p.beta0).abs() <= eps
        && (ht0 - want_t0).abs() <= eps;
    report(2, pass, format!("Ks(x,x)={ks}, h(0)={h0}, h(T0)={ht0} vs {want_t0}"), started);
    assert!(pass);
}

// ---------------------------------------------------------------- 3

fn random_state(rng: &mut ChaCha8Rng, r: usize) -> AgentState {
    AgentState {
        resolution: r,
        image: (0..r * r * 3).map(|_| rng.random_range(0.0..1.0)).collect(),
        wind: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
    }
}

#[test]
fn criterion_03_network_correctness() {
    let started = Instant::now();
    let arch = Architecture::new(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let params: Vec<f32> = arch.init_params(&mut rng);
    let states: Vec<AgentState> = (0..100).map(|_| random_state(&mut rng, 32)).collect();
    let refs: Vec<&AgentState> = states.iter().collect();
    let (img, wind) = batch_inputs(&refs);
    let mut ws = Workspace::new();
    let q = arch.forward(&params, &img, &wind, refs.len(), &mut ws);
    let mut mean_gap: f32 = 0.0;
    for i in 0..refs.len() {
        let md = q.q_dir[i * 8..(i + 1) * 8].iter().sum::<f32>() / 8.0;
        let ms = q.q_spd[i * 2..(i + 1) * 2].iter().sum::<f32>() / 2.0;
        mean_gap = mean_gap.max((md - q.value[i]).abs()).max((ms - q.value[i]).abs());
    }

    // a constant added to every advantage output cancels in the dueling head
    let mut shifted = params.clone();
    for b in &mut shifted[arch.view("dir.bias").unwrap().range()] {
        *b += 3.25;
    }
    for b in &mut shifted[arch.view("spd.bias").unwrap().range()] {
        *b -= 1.5;
    }
    let qs = arch.forward(&shifted, &img, &wind, refs.len(), &mut ws);
    let argmax_same = (0..refs.len()).all(|i| {
        argmax(&q.q_dir[i * 8..(i + 1) * 8]) == argmax(&qs.q_dir[i * 8..(i + 1) * 8])
            && argmax(&q.q_spd[i * 2..(i + 1) * 2]) == argmax(&qs.q_spd[i * 2..(i + 1) * 2])
    });

    // gradients in f64 against central differences
    let small = Architecture::new(17).unwrap();
    let mut p64: Vec<f64> = small.init_params(&mut rng);
    for v in small.views().iter().filter(|v| v.shape.len() == 1) {
        for x in &mut p64[v.range()] {
            *x = rng.random_range(-0.1..0.1);
        }
    }
    let b = 3;
    let images: Vec<f64> = (0..b * small.image_len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let winds: Vec<f64> = (0..b * 2).map(|_| rng.random_range(0.0..1.0)).collect();
    let actions: Vec<Action> = (0..b).map(|_| Action::new(rng.random_range(0..8), rng.random_range(0..2)).unwrap()).collect();
    let y_dir: Vec<f64> = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y_spd: Vec<f64> = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ws64 = Workspace::new();
    let mut grad = vec![0.0; small.num_params()];
    bellman_loss_and_grad(&small, &p64, &images, &winds, &actions, &y_dir, &y_spd, &mut ws64, &mut grad);
    let views = small.views().to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..300 {
        let v = &views[k % views.len()];
        let i = v.offset + rng.random_range(0..v.len());
        let h = 1e-5;
        let mut loss_at = |d: f64| {
            let mut p = p64.clone();
            p[i] += d;
            let mut g = vec![0.0; small.num_params()];
            bellman_loss_and_grad(&small, &p, &images, &winds, &actions, &y_dir, &y_spd, &mut ws64, &mut g)
        };
        let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = mean_gap <= 1e-6 && argmax_same && worst <= 1e-5 && secs < 120.0;
    report(3, pass, format!("dueling gap {mean_gap:.1e}, argmax invariant {argmax_same}, grad rel err {worst:.1e}"), started);
    assert!(pass);
}

// ---------------------------------------------------------------- 4

fn open_sea(u: f32, v: f32) -> FieldSequence {
    let d = Domain::coastal(41, 41, 1000.0, 1).unwrap();
    let frames = (0..3)
        .map(|k| FieldFrame {
            slot: k,
            salinity: Grid::filled(41, 41, 35.0),
            cur_u: Grid::filled(41, 41, u),
            cur_v: Grid::filled(41, 41, v),
            wind: Wind::default(),
        })
        .collect();
    FieldSequence::new(d, 35.0, frames).unwrap()
}

fn one_slot(u: f32, v: f32, action: Action) -> (f64, f64) {
    let s = VehicleState::new(0, Position::new(20_000.0, 20_000.0), &EnergyModel::default());
    let (next, _) = step_slot(&s, action, &open_sea(u, v), 1, DEFAULT_SUBSTEP_S).unwrap();
    (next.pos.x - s.pos.x, next.pos.y - s.pos.y)
}

#[test]
fn criterion_04_mobility_and_energy() {
    let started = Instant::now();
    // heading 0 is east at 1 m/s, against a 1 m/s westward current
    let (sx, sy) = one_slot(-1.0, 0.0, Action::new(0, 1).unwrap());
    let stall = sx.hypot(sy);
    // heading 2 is north at 0.4 m/s in (0.3, 0.4) m/s current
    let (cx, cy) = one_slot(0.3, 0.4, Action::new(2, 0).unwrap());
    let closed = (cx - 0.3 * SLOT_SECONDS).hypot(cy - 0.8 * SLOT_SECONDS);
    let m = EnergyModel::default();
    let fast_h = m.endurance_s(1.0) / 3600.0;
    let slow_h = m.endurance_s(0.4) / 3600.0;
    let pass = stall <= 2.0 && closed <= 2.0 && (fast_h / 72.0 - 1.0).abs() <= 0.005 && (slow_h / 576.0 - 1.0).abs() <= 0.005;
    report(4, pass, format!("stall {stall:.3} m, closed-form gap {closed:.3} m, endurance {fast_h:.2} h / {slow_h:.2} h"), started);
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_protocol_byte_budget() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let full = UplinkMsg {
        agent_id: 1,
        slot: 2,
        records: (0..10).map(|_| WireRecord { x: 1.0, y: 2.0, t: 3.0, value: 4.0 }).collect(),
    };
    let full_len = encode_uplink(&full).unwrap().len();
    let mut round_trips = 0;
    for _ in 0..1000 {
        let z = rng.random_range(0..=10);
        let msg = UplinkMsg {
            agent_id: rng.random(),
            slot: rng.random(),
            records: (0..z)
                .map(|_| WireRecord { x: rng.random(), y: rng.random(), t: rng.random(), value: rng.random() })
                .collect(),
        };
        if decode_uplink(&encode_uplink(&msg).unwrap()).unwrap() == msg {
            round_trips += 1;
        }
    }
    let world = WorldConfig { domain: DomainKind::Smoke, ..Default::default() };
    let cfg = EpisodeConfig { agents: 3, slots: 48, resolution: 32, ..Default::default() };
    let log = run_eval_episode(&world, &cfg, &Policy::Random, 505, 0).unwrap();
    let largest = log.max_message_bytes();
    let pass = full_len == 167 && full_len == MAX_UPLINK_BYTES && round_trips == 1000 && largest < 500;
    report(5, pass, format!("z=10 uplink {full_len} B, {round_trips}/1000 round trips, largest simulated message {largest} B"), started);
    assert!(pass);
}

// ---------------------------------------------------------------- 6

fn mean_eval_mse(world: &WorldConfig, cfg: &EpisodeConfig, policy: &Policy, base: u64, episodes: u64) -> (f64, Vec<EpisodeLog>) {
    let logs: Vec<EpisodeLog> = (0..episodes).map(|i| run_eval_episode(world, cfg, policy, base, i).unwrap()).collect();
    (logs.iter().map(|l| l.mean_mse()).sum::<f64>() / logs.len() as f64, logs)
}

#[test]
fn criterion_06_baseline_ordering() {
    let started = Instant::now();
    let world = WorldConfig::default();
    let cfg = EpisodeConfig { agents: 3, slots: 96, uniform_budget: 15, window_slots: 24, ..Default::default() };
    let (uniform, _) = mean_eval_mse(&world, &cfg, &Policy::Uniform, 1000, 3);
    let (rotations, logs) = mean_eval_mse(&world, &cfg, &Policy::Rotations, 1000, 3);
    let largest = logs.iter().map(|l| l.max_message_bytes()).max().unwrap_or(0);
    let ratio = rotations / uniform;
    let pass = ratio >= 2.0 && largest < 500 && started.elapsed().as_secs_f64() < 900.0;
    report(6, pass, format!("uniform {uniform:.3}, rotations {rotations:.3}, ratio {ratio:.2} (need >= 2.0)"), started);
    assert!(pass);
}

// ---------------------------------------------------------------- 7-9

const TRAIN_SEEDS: [u64; 3] = [1, 2, 3];
const EVAL_BASE: u64 = 777;
const EVAL_EPISODES: u64 = 5;
/// Speed penalty of the smoke config; criterion 9 compares it with 50.
const SMOKE_ETA2: f64 = 0.0;

fn smoke_world() -> WorldConfig {
    WorldConfig { domain: DomainKind::Smoke, ..Default::default() }
}

fn smoke_kernel() -> KernelParams {
    static K: OnceLock<KernelParams> = OnceLock::new();
    K.get_or_init(|| {
        let seq = smoke_world().generate(derive_seed(0, streams::KERNEL_FIT, 0), 200).unwrap();
        fit_kernel(&seq, &FitOptions::default()).unwrap().params
    })
    .clone()
}

fn smoke_episode(agents: usize, eta2: f64) -> EpisodeConfig {
    let mut cfg = EpisodeConfig { agents, slots: 75, resolution: 32, kernel: smoke_kernel(), ..Default::default() };
    cfg.rewards.eta2 = eta2;
    cfg
}

fn smoke_training() -> TrainConfig {
    TrainConfig { episodes: 800, pure_explore: 200, checkpoint_every: 0, ..Default::default() }
}

type Key = (usize, u64, u64);

/// Trained greedy policy for (agents, eta2, seed), trained at most once per
/// process.
fn trained(agents: usize, eta2: f64, seed: u64) -> Policy {
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<DqnNet>>>> = OnceLock::new();
    let mut cache = CACHE.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    let net = cache
        .entry((agents, eta2.to_bits(), seed))
        .or_insert_with(|| {
            let t = Instant::now();
            let out = train(&smoke_world(), &smoke_episode(agents, eta2), &smoke_training(), seed, None, None).unwrap();
            println!("  trained N={agents} eta2={eta2} seed={seed} in {:.0}s", t.elapsed().as_secs_f64());
            Arc::new(DqnNet { arch: out.learner.arch.clone(), params: out.learner.online.clone() })
        })
        .clone();
    Policy::Dqn { net, epsilon: 0.0 }
}

fn mean_endurance(logs: &[EpisodeLog]) -> f64 {
    let v: Vec<f64> = logs.iter().filter_map(|l| l.endurance_days).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[test]
fn criterion_07_learning_efficacy() {
    let started = Instant::now();
    let world = smoke_world();
    let cfg = smoke_episode(1, SMOKE_ETA2);
    let (random, _) = mean_eval_mse(&world, &cfg, &Policy::Random, EVAL_BASE, EVAL_EPISODES);
    let (eibv, _) = mean_eval_mse(&world, &cfg, &Policy::Eibv, EVAL_BASE, EVAL_EPISODES);
    let mut votes = 0;
    let mut detail = format!("random {random:.3}, eibv {eibv:.3}; dqn");
    for seed in TRAIN_SEEDS {
        let (dqn, _) = mean_eval_mse(&world, &cfg, &trained(1, SMOKE_ETA2, seed), EVAL_BASE, EVAL_EPISODES);
        let ok = dqn <= 0.7 * random && dqn <= eibv;
        votes += ok as usize;
        detail.push_str(&format!(" {dqn:.3}{}", if ok { "+" } else { "-" }));
    }
    let pass = votes * 2 > TRAIN_SEEDS.len();
    report(7, pass, format!("{detail}; {votes}/3 seeds pass"), started);
    assert!(pass);
}

#[test]
fn criterion_08_multi_agent_scaling() {
    let started = Instant::now();
    let world = smoke_world();
    let policy = trained(3, SMOKE_ETA2, TRAIN_SEEDS[0]);
    let (n3, _) = mean_eval_mse(&world, &smoke_episode(3, SMOKE_ETA2), &policy, EVAL_BASE, EVAL_EPISODES);
    let (n6, _) = mean_eval_mse(&world, &smoke_episode(6, SMOKE_ETA2), &policy, EVAL_BASE, EVAL_EPISODES);
    let ratio = n6 / n3;
    let pass = ratio <= 0.8;
    report(8, pass, format!("N=3 {n3:.3}, N=6 {n6:.3}, ratio {ratio:.2} (need <= 0.8)"), started);
    assert!(pass);
}

#[test]
fn criterion_09_endurance_lever() {
    let started = Instant::now();
    let world = smoke_world();
    let mut votes = 0;
    let mut detail = String::new();
    for seed in TRAIN_SEEDS {
        let (mse0, logs0) = mean_eval_mse(&world, &smoke_episode(1, 0.0), &trained(1, 0.0, seed), EVAL_BASE, EVAL_EPISODES);
        let (mse50, logs50) = mean_eval_mse(&world, &smoke_episode(1, 50.0), &trained(1, 50.0, seed), EVAL_BASE, EVAL_EPISODES);
        let (e0, e50) = (mean_endurance(&logs0), mean_endurance(&logs50));
        let ok = e50 >= 1.2 * e0 && mse50 <= 1.5 * mse0;
        votes += ok as usize;
        detail.push_str(&format!(
            " seed {seed}: endurance {e0:.2}->{e50:.2} d, mse {mse0:.2}->{mse50:.2}{};",
            if ok { " +" } else { " -" }
        ));
    }
    let pass = votes * 2 > TRAIN_SEEDS.len();
    report(9, pass, format!("{detail} {votes}/3 seeds pass"), started);
    assert!(pass);
}

// ---------------------------------------------------------------- 10

fn plume(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_plume")).args(args).output().unwrap();
    assert!(out.status.success(), "plume {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn files_equal(a: &Path, b: &Path, name: &str) -> bool {
    std::fs::read(a.join(name)).unwrap() == std::fs::read(b.join(name)).unwrap()
}

#[test]
fn criterion_10_determinism() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("run.toml");
    std::fs::write(
        &config,
        "policy = \"random\"\n[world]\ndomain = \"smoke\"\n[kernel]\nmode = \"fit\"\nfit_slots = 120\n\
         [episode]\nagents = 2\nslots = 12\nresolution = 17\n[train]\nepisodes = 2\nwarmup_transitions = 10\n\
         [train.dqn]\nbatch_size = 8\n[evaluate]\nepisodes = 2\n[compare]\npolicies = [\"random\", \"uniform\"]\nagents = [1, 2]\nepisodes = 1\n",
    )
    .unwrap();
    let mut checks = Vec::new();
    for (cmd, files) in [
        ("fit-kernel", &["kernel_curves.csv", "kernel.json"][..]),
        ("train", &["curves.csv", "checkpoint.plq"][..]),
        ("evaluate", &["episodes.csv"][..]),
        ("compare", &["compare.csv"][..]),
    ] {
        let a = root.join(format!("{cmd}-a"));
        let b = root.join(format!("{cmd}-b"));
        plume(&[cmd, "--config", config.to_str().unwrap(), "--out", a.to_str().unwrap(), "--seed", "4"]);
        let resolved = a.join("resolved.toml");
        plume(&[cmd, "--config", resolved.to_str().unwrap(), "--out", b.to_str().unwrap()]);
        for f in files {
            checks.push((format!("{cmd}/{f}"), files_equal(&a, &b, f)));
        }
    }
    let pass = checks.iter().all(|(_, ok)| *ok);
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect();
    report(10, pass, format!("{} outputs compared, mismatches {failed:?}", checks.len()), started);
    assert!(pass);
}
