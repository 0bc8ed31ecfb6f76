//! Parameter counting per submodule, with millions formatting for reports.

use std::collections::BTreeMap;

use crate::nn::ParamStore;

#[derive(Clone, Debug)]
pub struct ParamCount {
    pub per_module: BTreeMap<String, usize>,
    pub total: usize,
}

/// Group counts by the first two path components ("spd.backbone", ...).
pub fn count_parameters(ps: &ParamStore) -> ParamCount {
    let mut per_module: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for (name, value) in ps.iter() {
        let module = name
            .splitn(3, '.')
            .take(2)
            .collect::<Vec<_>>()
            .join(".");
        *per_module.entry(module).or_insert(0) += value.len();
        total += value.len();
    }
    ParamCount { per_module, total }
}

/// "12.3M"-style formatting with one decimal.
pub fn format_millions(count: usize) -> String {
    format!("{:.1}M", count as f64 / 1e6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, ParamStore};

    #[test]
    fn conv_closed_form() {
        // one kxk conv c_in -> c_out with bias: k*k*c_in*c_out + c_out
        let mut ps = ParamStore::new(0);
        let _conv = crate::nn::Conv2d::same(&mut ps, "m.conv", 3, 8, 3, 1, 1, true);
        let count = count_parameters(&ps);
        assert_eq!(count.total, 3 * 3 * 3 * 8 + 8);
        assert_eq!(count.per_module.get("m.conv"), Some(&count.total));
    }

    #[test]
    fn total_is_sum_of_modules() {
        let mut ps = ParamStore::new(0);
        ps.register("a.x.w", &[10], Init::Zeros);
        ps.register("a.y.w", &[20], Init::Zeros);
        ps.register("b.z.w", &[5], Init::Zeros);
        let count = count_parameters(&ps);
        assert_eq!(count.total, 35);
        assert_eq!(count.per_module.values().sum::<usize>(), count.total);
        assert_eq!(count.per_module.get("a.x"), Some(&10));
    }

    #[test]
    fn width_scaling_is_roughly_quadratic() {
        let count_for = |wm: f64| {
            let mut ps = ParamStore::new(0);
            let cfg = crate::spd::SpdConfig {
                backbone: crate::nn::BackboneConfig {
                    in_channels: 3,
                    width_multiplier: wm,
                    blocks_per_stage: [1, 1, 1, 1],
                },
                aspp: crate::spd::AsppConfig::standard(wm),
                mask_stride: 16,
            };
            let _net = crate::spd::SpdNetwork::new(&mut ps, "spd", cfg).unwrap();
            count_parameters(&ps).total as f64
        };
        let half = count_for(0.5);
        let full = count_for(1.0);
        let ratio = half / full;
        assert!(
            (ratio - 0.25).abs() < 0.25 * 0.1 + 0.02,
            "quadratic width scaling, got ratio {ratio}"
        );
    }

    #[test]
    fn millions_formatting() {
        assert_eq!(format_millions(40_200_000), "40.2M");
        assert_eq!(format_millions(61_230_000), "61.2M");
    }
}
