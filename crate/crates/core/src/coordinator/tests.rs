use super::train::{train, TrainConfig};
use super::*;
use crate::policy::checkpoint::Checkpoint;
use crate::world::Grid;

fn smoke_world(seed: u64, slots: u32) -> FieldSequence {
    WorldConfig { domain: DomainKind::Smoke, ..WorldConfig::default() }.generate(seed, slots).unwrap()
}

fn still_water(mut w: FieldSequence) -> FieldSequence {
    for f in w.frames_mut() {
        f.cur_u.data.fill(0.0);
        f.cur_v.data.fill(0.0);
    }
    w
}

fn smoke_cfg(agents: usize, slots: u32) -> EpisodeConfig {
    EpisodeConfig { agents, slots, resolution: 32, ..EpisodeConfig::default() }
}

#[test]
fn mse_examples() {
    let frame = |v: f32| FieldFrame {
        slot: 0,
        salinity: Grid::filled(8, 8, v),
        cur_u: Grid::filled(8, 8, 0.0),
        cur_v: Grid::filled(8, 8, 0.0),
        wind: Wind::default(),
    };
    let g: Vec<usize> = (0..64).collect();
    assert_eq!(mse_on_grid(&frame(31.5), &[31.5; 64], &g).unwrap(), 0.0);
    assert_eq!(mse_on_grid(&frame(30.0), &[35.0; 64], &g).unwrap(), 25.0);
    let mut f = frame(0.0);
    let truth = [30.0f32, 31.0, 33.5, 35.0, 28.25];
    let est = [31.0, 31.0, 32.0, 34.0, 30.25];
    let cells = [3usize, 17, 22, 40, 63];
    let mut e = vec![0.0; 64];
    for k in 0..5 {
        f.salinity.data[cells[k]] = truth[k];
        e[cells[k]] = est[k];
    }
    let hand = (1.0 + 0.0 + 2.25 + 1.0 + 4.0) / 5.0;
    assert_eq!(mse_on_grid(&f, &e, &cells).unwrap(), hand);
    assert!(mse_on_grid(&f, &e, &[]).is_err());
}

#[test]
fn seed_derivation_separates_streams() {
    assert_ne!(derive_seed(1, streams::TRAIN_WORLD, 0), derive_seed(1, streams::EVAL_WORLD, 0));
    assert_ne!(derive_seed(1, streams::TRAIN_WORLD, 0), derive_seed(1, streams::TRAIN_WORLD, 1));
    assert_eq!(derive_seed(7, 2, 3), derive_seed(7, 2, 3));
}

#[test]
fn deployment_arc_is_on_water_and_seaward() {
    for d in [Domain::smoke(), Domain::standard()] {
        for n in [1, 3, 6] {
            let p = deployment_positions(&d, n, 2000.0).unwrap();
            assert_eq!(p.len(), n);
            for q in &p {
                assert!((q.distance(&d.mouth_position()) - 2000.0).abs() < 1e-6);
                assert!(q.x < d.mouth_position().x);
            }
        }
    }
}

#[test]
fn constant_command_in_still_water_advances_v_delta() {
    let world = still_water(smoke_world(1, 6));
    let cfg = smoke_cfg(1, 5);
    let policy = Policy::Scripted(Action::new(4, 0).unwrap());
    let mut sim = Simulation::new(&world, &cfg, &policy, 3).unwrap();
    sim.start(&world, &policy, None).unwrap();
    let mut prev = sim.vehicles()[0].pos;
    for _ in 0..5 {
        sim.run_slot(&world, &policy, None).unwrap();
        let p = sim.vehicles()[0].pos;
        assert!((prev.x - p.x - 720.0).abs() < 1e-6 && (prev.y - p.y).abs() < 1e-9);
        prev = p;
    }
}

#[test]
fn dead_agents_stop_transmitting() {
    let world = smoke_world(2, 4);
    let cfg = smoke_cfg(3, 3);
    let policy = Policy::Random;
    let mut sim = Simulation::new(&world, &cfg, &policy, 5).unwrap();
    sim.start(&world, &policy, None).unwrap();
    sim.vehicles[1].alive = false;
    let log = sim.run_slot(&world, &policy, None).unwrap();
    assert_eq!(log.rows.iter().filter(|r| r.uplink_bytes > 0).count(), 2);
    assert_eq!(log.rows.iter().filter(|r| r.downlink_bytes == 8).count(), 2);
    assert!(log.rows[1].reward.is_none() && log.rows[1].samples == 0);
}

#[test]
fn random_walk_episode_is_reproducible_and_within_budget() {
    let world = smoke_world(3, 12);
    let cfg = smoke_cfg(3, 12);
    let a = run_episode(&world, &cfg, &Policy::Random, 0, 3, 11, None).unwrap();
    let b = run_episode(&world, &cfg, &Policy::Random, 0, 3, 11, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.slots.len(), 12);
    for r in a.rows() {
        assert!(r.uplink_bytes <= 167 && r.uplink_bytes == 7 + 16 * r.samples);
        assert_eq!(r.downlink_bytes, if r.slot < 12 { 8 } else { 0 });
    }
    assert!(a.max_message_bytes() < 500);
    let c = run_episode(&world, &cfg, &Policy::Random, 0, 3, 12, None).unwrap();
    assert_ne!(a, c);
}

#[test]
fn oracle_estimator_has_zero_error() {
    let world = smoke_world(4, 8);
    let cfg = EpisodeConfig { estimator: EstimatorKind::Oracle, ..smoke_cfg(2, 8) };
    let log = run_episode(&world, &cfg, &Policy::Random, 0, 4, 1, None).unwrap();
    assert_eq!(log.mean_mse(), 0.0);
}

#[test]
fn estimate_window_tracks_the_slot() {
    let world = smoke_world(5, 30);
    let cfg = EpisodeConfig { window_slots: 6, ..smoke_cfg(2, 30) };
    let mut sim = Simulation::new(&world, &cfg, &Policy::Random, 2).unwrap();
    sim.start(&world, &Policy::Random, None).unwrap();
    for k in 1..=30u32 {
        sim.run_slot(&world, &Policy::Random, None).unwrap();
        let slots: Vec<u32> = sim.model().data().iter().map(|d| d.slot).collect();
        assert_eq!(*slots.iter().max().unwrap(), k);
        assert!(slots.iter().all(|&s| s + 6 > k));
        for h in sim.history() {
            assert!(h.iter().all(|s| s.slot + 6 > k && s.slot <= k));
        }
    }
}

#[test]
fn policy_path_ignores_ground_truth() {
    let world = smoke_world(6, 10);
    let cfg = smoke_cfg(3, 10);
    let arch = Architecture::new(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Arc::new(DqnNet { params: arch.init_params(&mut rng), arch });
    let policy = Policy::Dqn { net, epsilon: 0.3 };
    let mut sim = Simulation::new(&world, &cfg, &policy, 8).unwrap();
    sim.start(&world, &policy, None).unwrap();
    for _ in 0..4 {
        sim.run_slot(&world, &policy, None).unwrap();
    }
    let mut corrupted = world.clone();
    for f in corrupted.frames_mut() {
        f.salinity.data.iter_mut().for_each(|v| *v = 0.0);
        f.cur_u.data.fill(1.0);
    }
    let mut a = sim.clone();
    let mut b = sim.clone();
    let sa = a.states().unwrap();
    let sb = b.states().unwrap();
    assert_eq!(sa, sb);
    let act_a = a.decide(&policy, &sa, &world, None).unwrap();
    let act_b = b.decide(&policy, &sb, &corrupted, None).unwrap();
    assert_eq!(act_a, act_b);
}

#[test]
fn empty_battery_ends_the_episode() {
    let world = smoke_world(7, 20);
    let energy = EnergyModel::calibrated(2.0e5, (1.0, 2.0), (0.4, 16.0)).unwrap();
    let cfg = EpisodeConfig { energy, ..smoke_cfg(2, 20) };
    let policy = Policy::Scripted(Action::new(4, 1).unwrap());
    let log = run_episode(&world, &cfg, &policy, 0, 7, 1, None).unwrap();
    let end = log.terminated_early.expect("fleet runs dry");
    assert_eq!(log.slots.len() as u32, end);
    assert!(end < 20);
    assert!(log.slots.last().unwrap().rows.iter().all(|r| !r.alive));
}

#[test]
fn uniform_and_rotation_runs() {
    let world = smoke_world(8, 6);
    let cfg = smoke_cfg(3, 6);
    let u = run_episode(&world, &cfg, &Policy::Uniform, 0, 8, 1, None).unwrap();
    for s in &u.slots {
        assert_eq!(s.rows.len(), 1);
        assert_eq!(s.rows[0].samples, 15);
        assert!(s.rows[0].agent.is_none());
    }
    assert!(u.endurance_days.is_none());
    let r = run_episode(&world, &cfg, &Policy::Rotations, 0, 8, 1, None).unwrap();
    let plan = RotationPlan::along_plume(&world, 3, 500.0, 1.0).unwrap();
    for s in &r.slots {
        for row in &s.rows {
            let n = row.agent.unwrap() as usize;
            let p = Position::new(row.x.unwrap(), row.y.unwrap());
            assert!(p.distance(&plan.position_at(n, s.slot as f64 * SLOT_SECONDS)) < 1e-9);
            assert_eq!(row.samples, 5);
        }
    }
    assert!((r.endurance_days.unwrap() - 3.0).abs() < 1e-9);
}

#[test]
fn eibv_fleet_runs_at_full_speed() {
    let world = smoke_world(9, 4);
    let cfg = smoke_cfg(2, 4);
    let log = run_episode(&world, &cfg, &Policy::Eibv, 0, 9, 1, None).unwrap();
    assert!(log.rows().filter(|r| r.slot > 1).all(|r| r.speed_mps == Some(1.0)));
}

fn tiny_train() -> (WorldConfig, EpisodeConfig, TrainConfig) {
    let world = WorldConfig { domain: DomainKind::Smoke, ..WorldConfig::default() };
    let ep = smoke_cfg(1, 12);
    let tc = TrainConfig {
        episodes: 3,
        pure_explore: 1,
        warmup_transitions: 8,
        checkpoint_every: 1,
        dqn: crate::policy::dqn::DqnConfig { batch_size: 8, ..Default::default() },
        ..TrainConfig::default()
    };
    (world, ep, tc)
}

#[test]
fn zero_episodes_checkpoint_is_the_initialization() {
    let (w, ep, tc) = tiny_train();
    let dir = tempfile::tempdir().unwrap();
    let out = train(&w, &ep, &TrainConfig { episodes: 0, ..tc.clone() }, 5, Some(dir.path()), None).unwrap();
    let ck = Checkpoint::load(dir.path().join(train::CHECKPOINT_FILE), None).unwrap();
    assert_eq!(ck.header.episode, 0);
    assert_eq!(ck.online, out.learner.online);
    let mut init = ChaCha8Rng::seed_from_u64(5);
    init.set_stream(streams::TRAINER + 100);
    let fresh: Vec<f32> = Architecture::new(32).unwrap().init_params(&mut init);
    assert_eq!(ck.online, fresh);
}

#[test]
fn training_is_deterministic_and_reloads_exactly() {
    let (w, ep, tc) = tiny_train();
    let dir = tempfile::tempdir().unwrap();
    let a = train(&w, &ep, &tc, 9, Some(dir.path()), None).unwrap();
    let b = train(&w, &ep, &tc, 9, None, None).unwrap();
    assert_eq!(a.curves, b.curves);
    assert_eq!(a.learner.online, b.learner.online);
    assert!(a.curves.last().unwrap().train_steps > 0);
    assert_eq!(a.curves[0].epsilon, 1.0);
    let curves = train::read_curves(&dir.path().join(train::CURVES_FILE)).unwrap();
    assert_eq!(curves.len(), 3);

    let ck = Checkpoint::load(dir.path().join(train::CHECKPOINT_FILE), None).unwrap();
    assert_eq!(ck.header.episode, 3);
    let eval = |params: Vec<f32>| {
        let net = Arc::new(DqnNet { arch: Architecture::new(32).unwrap(), params });
        run_eval_episode(&w, &ep, &Policy::Dqn { net, epsilon: 0.0 }, 4, 0).unwrap()
    };
    assert_eq!(eval(a.learner.online.clone()), eval(ck.online.clone()));

    // resuming continues the episode count
    let more = TrainConfig { episodes: 4, ..tc };
    let r = train(&w, &ep, &more, 9, Some(dir.path()), Some(ck)).unwrap();
    assert_eq!(r.curves.len(), 1);
    assert_eq!(r.curves[0].episode, 3);
    assert_eq!(r.episodes_done, 4);
}
