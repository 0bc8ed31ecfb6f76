//! Finite-difference gradient checking against the autodiff engine, in the
//! spirit of `torch.autograd.gradcheck`. The perturbed forward pass is the
//! independent route the analytic gradients are verified against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::nn::{Fwd, ParamStore};
use crate::tensor::{to_scalar, Graph, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter and element index where the worst error occurred.
    pub worst: Option<(String, usize)>,
}

/// Compare analytic gradients of `build`'s scalar loss against central
/// finite differences, for every parameter whose name passes `filter`.
/// At most `samples_per_param` elements per tensor are probed (0 = all),
/// chosen deterministically. Elements where both routes are below
/// `floor` are skipped as numerically unresolvable.
pub fn gradcheck_params(
    ps: &ParamStore,
    filter: impl Fn(&str) -> bool,
    samples_per_param: usize,
    eps: f64,
    floor: f64,
    build: impl Fn(&mut Fwd) -> Var,
) -> GradCheckReport {
    let eval = |store: &ParamStore| -> f64 {
        let mut g = Graph::new();
        let mut f = Fwd {
            g: &mut g,
            ps: store,
            train: false,
            trainable: true,
            dropout_rng: ChaCha12Rng::seed_from_u64(0),
        };
        let loss = build(&mut f);
        to_scalar(g.value(loss))
    };

    let mut g = Graph::new();
    let mut f = Fwd {
        g: &mut g,
        ps,
        train: false,
        trainable: true,
        dropout_rng: ChaCha12Rng::seed_from_u64(0),
    };
    let loss = build(&mut f);
    let grads = g.backward(loss);

    let mut checked = 0usize;
    let mut max_rel: f64 = 0.0;
    let mut worst = None;
    for (name, value) in ps.iter() {
        if !filter(name) {
            continue;
        }
        let analytic = grads
            .by_name(name)
            .unwrap_or_else(|| panic!("no gradient for parameter {name}"));
        let n = value.len();
        let indices: Vec<usize> = if samples_per_param == 0 || samples_per_param >= n {
            (0..n).collect()
        } else {
            let mut rng =
                ChaCha12Rng::seed_from_u64(crate::hash::seed_for(0xFDC0FFEE ^ n as u64, name));
            (0..samples_per_param)
                .map(|_| rng.random_range(0..n))
                .collect()
        };
        for idx in indices {
            let orig = value.as_slice().unwrap()[idx];
            let mut plus = ps.clone();
            plus.get_mut(name).as_slice_mut().unwrap()[idx] = orig + eps;
            let mut minus = ps.clone();
            minus.get_mut(name).as_slice_mut().unwrap()[idx] = orig - eps;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let an = analytic.as_slice().unwrap()[idx];
            if an.abs() < floor && fd.abs() < floor {
                continue;
            }
            let rel = (an - fd).abs() / an.abs().max(fd.abs());
            if rel > max_rel {
                max_rel = rel;
                worst = Some((name.clone(), idx));
            }
            checked += 1;
        }
    }
    GradCheckReport {
        checked,
        max_rel_err: max_rel,
        worst,
    }
}
