//! Prints the fully defaulted run configuration, the same TOML tree the
//! `plume` binary writes as `resolved.toml`.

use plume_core::cli::RunConfig;

fn main() -> plume_core::Result<()> {
    print!("{}", RunConfig::default().to_toml()?);
    Ok(())
}
