//! Parameter counts for the two branches at desk scale and full scale,
//! showing the roughly quadratic effect of the width multiplier.
//!
//!     cargo run --example count_params

use spgim::harness::{count_parameters, format_millions};
use spgim::nn::ParamStore;
use spgim::spd::{SpdConfig, SpdNetwork};
use spgim::spgm::{SpgmConfig, SpgmNetwork};

fn main() -> anyhow::Result<()> {
    for (label, wm) in [("desk (width 0.25)", 0.25), ("full (width 1.0)", 1.0)] {
        let mut ps = ParamStore::new(0);
        let spd_cfg = if wm == 1.0 {
            SpdConfig::full_scale()
        } else {
            SpdConfig::desk(wm)
        };
        let _spd = SpdNetwork::new(&mut ps, "spd", spd_cfg)?;
        let spgm_cfg = if wm == 1.0 {
            SpgmConfig::full_scale()
        } else {
            SpgmConfig::desk(wm)
        };
        let _spgm = SpgmNetwork::new(&mut ps, "spgm", spgm_cfg)?;
        let count = count_parameters(&ps);
        println!("== {label}");
        for (module, n) in &count.per_module {
            println!("  {module:<24} {}", format_millions(*n));
        }
        let spd_total: usize = count
            .per_module
            .iter()
            .filter(|(k, _)| k.starts_with("spd."))
            .map(|(_, v)| v)
            .sum();
        println!("  spd branch total         {}", format_millions(spd_total));
        println!("  both branches            {}", format_millions(count.total));
    }
    Ok(())
}
