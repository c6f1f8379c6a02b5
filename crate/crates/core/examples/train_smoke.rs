//! Trains a short DQN run on the small world and evaluates it against the
//! random walk.
//!
//! cargo run --release --example train_smoke -- [episodes]

use std::sync::Arc;

use plume_core::coordinator::train::{train, TrainConfig};
use plume_core::coordinator::{run_eval_episode, DomainKind, DqnNet, EpisodeConfig, Policy, WorldConfig};

fn main() -> plume_core::Result<()> {
    let episodes = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let world = WorldConfig { domain: DomainKind::Smoke, ..Default::default() };
    let ep = EpisodeConfig { agents: 1, slots: 75, resolution: 32, ..Default::default() };
    let cfg = TrainConfig { episodes, pure_explore: episodes / 4, checkpoint_every: 0, ..Default::default() };
    let out = train(&world, &ep, &cfg, 1, None, None)?;
    for c in out.curves.iter().step_by((episodes as usize / 10).max(1)) {
        println!("episode {:4}  eps {:.2}  reward {:8.2}  mse {:6.2}", c.episode, c.epsilon, c.mean_reward, c.mean_mse);
    }
    let net = Arc::new(DqnNet { arch: out.learner.arch.clone(), params: out.learner.online.clone() });
    for (name, policy) in [("dqn", Policy::Dqn { net, epsilon: 0.0 }), ("random", Policy::Random)] {
        let mse: f64 = (0..3).map(|i| run_eval_episode(&world, &ep, &policy, 777, i).map(|l| l.mean_mse())).sum::<plume_core::Result<f64>>()? / 3.0;
        println!("{name:6} held-out mse {mse:.3}");
    }
    Ok(())
}
