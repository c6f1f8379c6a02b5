//! Feeds noisy point samples from a synthetic world into the windowed GPR
//! and reports the estimate error slot by slot.

use plume_core::estimator::{GprModel, KernelParams};
use plume_core::vehicle::{Record, SampleSet};
use plume_core::world::{generate_sequence, Domain, SynthParams, SLOT_SECONDS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> plume_core::Result<()> {
    let domain = Domain::smoke();
    let seq = generate_sequence(&SynthParams { seed: 3, ..Default::default() }, &domain, 30)?;
    let params = KernelParams::default();
    let mut model = GprModel::new(params, seq.f_ocn(), 24)?;
    let water = domain.water_indices();
    let nodes: Vec<_> = water.iter().map(|&i| domain.node_position(domain.cell_of_index(i))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 1..=30u32 {
        let t = k as f64 * SLOT_SECONDS;
        let truth = &seq.frame(k as usize).salinity.data;
        let records = (0..10)
            .map(|_| {
                let i = rng.random_range(0..water.len());
                Record { pos: nodes[i], t, y: truth[water[i]] as f64 + 0.1 * rng.random::<f64>() }
            })
            .collect();
        model = model.update(&[SampleSet { agent_id: 0, slot: k, records }], k)?;
        let est = model.mean_at_time(&nodes, t)?;
        let mse = water.iter().zip(&est).map(|(&i, e)| (e - truth[i] as f64).powi(2)).sum::<f64>() / water.len() as f64;
        if k % 5 == 0 {
            println!("slot {k:2}  window points {:3}  mse {mse:.3}", model.len());
        }
    }
    Ok(())
}
