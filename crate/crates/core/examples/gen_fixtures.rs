//! Regenerates the bundled fixtures.
//!
//! `cargo run -p bnstress-core --example gen_fixtures -- crates/cli/fixtures`

use std::path::PathBuf;

use bnstress_core::fixtures::{write_banksim_fixtures, write_toy_fixtures};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root: PathBuf = std::env::args().nth(1).ok_or("usage: gen_fixtures <dir>")?.into();
    write_toy_fixtures(&root.join("toy"))?;
    write_banksim_fixtures(&root.join("banksim"))?;
    Ok(())
}
