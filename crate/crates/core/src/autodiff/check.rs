//! Central finite-difference gradients, used as an independent oracle for
//! [`Graph::backward`](super::Graph::backward).

use super::{Grads, ParamSet};
use crate::error::Result;

/// Numerical gradient of a scalar function of `params` by central differences.
pub fn numeric_gradient(
    params: &ParamSet,
    step: f64,
    mut f: impl FnMut(&ParamSet) -> f64,
) -> Result<Grads> {
    let base = params.flatten();
    let mut out = vec![0.0; base.len()];
    let mut probe = params.clone();
    for (k, slot) in out.iter_mut().enumerate() {
        set_flat(&mut probe, k, base[k] + step);
        let up = f(&probe);
        set_flat(&mut probe, k, base[k] - step);
        let down = f(&probe);
        set_flat(&mut probe, k, base[k]);
        *slot = (up - down) / (2.0 * step);
    }
    Grads::unflatten(&out, params)
}

fn set_flat(params: &mut ParamSet, mut k: usize, value: f64) {
    for (_, t) in params.iter_mut() {
        if k < t.numel() {
            t.data_mut()[k] = value;
            return;
        }
        k -= t.numel();
    }
    panic!("flat index out of range");
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
