//! Writes a synthetic data set (cubes, mask, manifest), loads it back and
//! prints a summary.
//!
//! ```text
//! cargo run --example synthetic_dataset -- [dir] [scenes]
//! ```

use hsi_unfold::data_io::{synth_dataset, Dataset, Role, SynthSpec};

fn main() -> hsi_unfold::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().map_or_else(|| std::env::temp_dir().join("hsi-unfold-synth"), Into::into);
    let scenes: usize = args.next().map_or(6, |s| s.parse().expect("scenes"));

    let spec = SynthSpec::new(42, scenes, 32, 32, 8);
    let manifest = synth_dataset(&spec, &dir)?;
    let ds = Dataset::load(&manifest)?;
    println!("{}: {} bands, shift step {}", manifest.display(), ds.bands(), ds.shift_step());
    for role in Role::ALL {
        let names: Vec<_> = ds.scenes(role).map(|s| s.name.as_str()).collect();
        if !names.is_empty() {
            println!("  {:<5} {}", role.to_string(), names.join(", "));
        }
    }
    for s in &ds.scenes {
        let d = s.cube.data();
        println!("  {:<8} mean {:.3}, max {:.3}", s.name, d.mean().unwrap_or(0.0), d.fold(0.0, |a: f64, &b| a.max(b)));
    }
    Ok(())
}
