//! Writes synthetic CSV datasets plus matching descriptors into a directory.
//!
//! Usage: `cargo run --example synthetic_data -- <dir>`

use std::path::PathBuf;

use tsalign::data::write_csv;
use tsalign::synthetic::{generate, SyntheticSpec};

fn main() -> tsalign::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic".into()));
    std::fs::create_dir_all(&dir).map_err(|e| tsalign::Error::io(&dir, e))?;
    let sets = [
        (SyntheticSpec::default(), "line plus daily sine with light noise"),
        (
            SyntheticSpec {
                name: "sine".into(),
                ..SyntheticSpec::sine(0.0)
            },
            "daily sine",
        ),
        (
            SyntheticSpec {
                name: "sine_shifted".into(),
                seed: 1,
                ..SyntheticSpec::sine(1.3)
            },
            "daily sine with shifted phase",
        ),
    ];
    for (spec, description) in sets {
        let ds = generate(&spec);
        let csv = dir.join(format!("{}.csv", spec.name));
        write_csv(&ds, &csv)?;
        let descriptor = format!(
            "name = \"{name}\"\npath = \"{name}.csv\"\nseq_len = 96\nhorizon = 24\nstride = 4\nperiod = {period}\ndescription = \"{description}\"\n",
            name = spec.name,
            period = spec.period,
        );
        let path = dir.join(format!("{}.toml", spec.name));
        std::fs::write(&path, descriptor).map_err(|e| tsalign::Error::io(&path, e))?;
        println!("{} ({} steps × {} channels)", csv.display(), ds.len(), ds.channels());
    }
    Ok(())
}
