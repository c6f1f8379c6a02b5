//! Fits the separable kernel to a synthetic sequence and prints the
//! empirical and fitted correlation curves.

use plume_core::estimator::{fit_kernel, FitOptions};
use plume_core::world::{generate_sequence, Domain, SynthParams};

fn main() -> plume_core::Result<()> {
    let seq = generate_sequence(&SynthParams { seed: 11, ..Default::default() }, &Domain::smoke(), 200)?;
    let fit = fit_kernel(&seq, &FitOptions::default())?;
    println!("{:#?}", fit.params);
    println!("spatial (m, empirical, fitted)");
    for p in &fit.spatial {
        println!("{:8.0} {:7.3} {:7.3}", p.x, p.empirical, p.fitted);
    }
    println!("temporal (s, empirical, fitted)");
    for p in &fit.temporal {
        println!("{:8.0} {:7.3} {:7.3}", p.x, p.empirical, p.fitted);
    }
    Ok(())
}
