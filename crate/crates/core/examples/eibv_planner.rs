//! Runs the single-agent expected-integrated-Bernoulli-variance planner and
//! prints its track and the field error.

use plume_core::coordinator::{run_eval_episode, DomainKind, EpisodeConfig, Policy, WorldConfig};

fn main() -> plume_core::Result<()> {
    let world = WorldConfig { domain: DomainKind::Smoke, ..Default::default() };
    let cfg = EpisodeConfig { agents: 1, slots: 40, resolution: 32, ..Default::default() };
    let log = run_eval_episode(&world, &cfg, &Policy::Eibv, 1000, 0)?;
    for s in log.slots.iter().step_by(4) {
        let r = &s.rows[0];
        println!("slot {:2}  heading {:?}  at ({:6.0}, {:6.0})  mse {:.3}", s.slot, r.dir, r.x.unwrap_or(f64::NAN), r.y.unwrap_or(f64::NAN), s.mse);
    }
    println!("mean mse {:.3}", log.mean_mse());
    Ok(())
}
