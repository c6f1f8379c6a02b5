//! Generates a synthetic plume sequence and writes a few salinity frames.
//!
//! cargo run --example synth_world -- [out_dir]

use plume_core::imaging::FieldImage;
use plume_core::world::{generate_sequence, Domain, SynthParams};

fn main() -> plume_core::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth_world".into());
    std::fs::create_dir_all(&out)?;
    let domain = Domain::standard();
    let seq = generate_sequence(&SynthParams { seed: 7, ..Default::default() }, &domain, 48)?;
    let water = domain.water_indices();
    for k in [0usize, 12, 24, 36, 48] {
        let frame = seq.frame(k);
        let values: Vec<f64> = frame.salinity.data.iter().map(|&v| v as f64).collect();
        let mean = water.iter().map(|&i| values[i]).sum::<f64>() / water.len() as f64;
        println!("slot {k:2}  mean salinity {mean:6.3} psu  max current {:.2} m/s  wind {:?}", frame.max_current(), frame.wind);
        FieldImage { domain: &domain, values: &values, vmin: 15.0, vmax: seq.f_ocn(), marks: vec![], scale: 4 }
            .save(format!("{out}/salinity_{k:02}.png"))?;
    }
    Ok(())
}
