//! Parameter counts of the full-scale single-stage network, split by
//! component, and their dependence on kernel size and stage count.

use hsi_unfold::nn::ParamStore;
use hsi_unfold::unfolding::{UnfoldConfig, UnfoldingNet};
use hsi_unfold::seeded_rng;

fn build(cfg: &UnfoldConfig) -> hsi_unfold::Result<ParamStore<f32>> {
    let mut store = ParamStore::new();
    UnfoldingNet::new(&mut store, cfg, &mut seeded_rng(0))?;
    Ok(store)
}

fn main() -> hsi_unfold::Result<()> {
    let cfg = UnfoldConfig::default();
    let store = build(&cfg)?;
    let mut groups: Vec<(String, usize)> = Vec::new();
    for info in store.infos() {
        let key = info.name.split('/').next().unwrap_or("").trim_end_matches(char::is_numeric).to_string();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, n)) => *n += info.shape.iter().product::<usize>(),
            None => groups.push((key, info.shape.iter().product())),
        }
    }
    for (k, n) in &groups {
        println!("{k:<10} {n:>9}");
    }
    println!("{:<10} {:>9} ({:.2}M)", "total", store.num_scalars(), store.num_scalars() as f64 / 1e6);

    for k in [3, 5, 7, 11, 13] {
        let mut c = cfg.clone();
        c.denoiser.kernel_size = k;
        println!("kernel {k:>2}: {:>9}", build(&c)?.num_scalars());
    }
    for stages in [1, 2, 3, 5] {
        let c = UnfoldConfig { stages, ..cfg.clone() };
        println!("{stages} stage(s): {:>9}", build(&c)?.num_scalars());
    }
    Ok(())
}
