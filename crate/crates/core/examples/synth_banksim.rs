//! Writes a synthetic BankSim-format transaction file.
//!
//! `cargo run -p bnstress-core --release --example synth_banksim -- out.csv 60000 1`

use std::fs::File;
use std::io::BufWriter;

use bnstress_core::banksim::{synthetic, write_records};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().ok_or("usage: synth_banksim <out.csv> [rows] [seed]")?;
    let rows: usize = args.next().map_or(Ok(60_000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;
    write_records(&synthetic(rows, seed), BufWriter::new(File::create(out)?))?;
    Ok(())
}
