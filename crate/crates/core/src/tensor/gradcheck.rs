use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, NodeId, ParamStore};
use crate::Result;

/// Coordinates sampled per parameter tensor; smaller tensors are checked in
/// full.
const COORDS_PER_PARAM: usize = 12;

/// Compares the tape's gradients of `loss` against central finite
/// differences with step `eps`. Returns the largest
/// `|analytic - numeric| / max(1, |numeric|)` over sampled coordinates.
/// Parameter values are restored and gradients are left zeroed.
pub fn grad_check<F, R>(store: &mut ParamStore, loss: F, eps: f64, rng: &mut R) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<NodeId>,
    R: Rng,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = loss(s, &mut g)?;
        Ok(g.value(out).item())
    };
    store.zero_grad();
    {
        let mut g = Graph::new();
        let out = loss(store, &mut g)?;
        g.backward(out, store)?;
    }
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.gradient.data().to_vec()).collect();
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).numel();
        let coords: Vec<usize> = if n <= COORDS_PER_PARAM { (0..n).collect() } else { sample(rng, n, COORDS_PER_PARAM).into_vec() };
        for c in coords {
            let orig = store.value(id).data()[c];
            store.get_mut(id).tensor.data_mut()[c] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).tensor.data_mut()[c] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).tensor.data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic[id.0][c] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    store.zero_grad();
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    #[test]
    fn quadratic_form_is_exact() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::matrix(1, 3, alloc::vec![0.4, -1.2, 2.0]).unwrap());
        let a = Tensor::matrix(3, 3, alloc::vec![2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 3.0]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let err = grad_check(
            &mut store,
            |s, g| {
                let xn = g.param(s, x);
                let an = g.constant(a.clone());
                let ax = g.matmul_nt(xn, an)?;
                let prod = g.mul(ax, xn)?;
                Ok(g.sum(prod))
            },
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
