//! Compares the unconstrained uniform sampler with three agents flying
//! circular rotations on the same held-out worlds.

use plume_core::coordinator::{run_eval_episode, EpisodeConfig, Policy, WorldConfig};

fn main() -> plume_core::Result<()> {
    let world = WorldConfig::default();
    let cfg = EpisodeConfig { agents: 3, slots: 96, ..Default::default() };
    for (name, policy) in [("uniform", Policy::Uniform), ("rotations", Policy::Rotations), ("random", Policy::Random)] {
        let mse: Vec<f64> = (0..3)
            .map(|i| run_eval_episode(&world, &cfg, &policy, 1000, i).map(|log| log.mean_mse()))
            .collect::<plume_core::Result<_>>()?;
        println!("{name:9} mean mse {:.3}  per seed {mse:.3?}", mse.iter().sum::<f64>() / mse.len() as f64);
    }
    Ok(())
}
