use rand::seq::index::sample;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

fn eval_scalar(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::NonScalarLoss(t.shape.clone()));
    }
    Ok(t.item())
}

/// Largest relative discrepancy between backward and central differences of
/// a scalar function of one tensor.
pub fn grad_check(f: impl Fn(&mut Graph, Var) -> Result<Var>, x: &Tensor, h: f64) -> Result<f64> {
    grad_check_many(|g, v| f(g, v[0]), std::slice::from_ref(x), h)
}

/// [`grad_check`] over several inputs at once; the result is the maximum over
/// every coordinate of every input.
pub fn grad_check_many(f: impl Fn(&mut Graph, &[Var]) -> Result<Var>, xs: &[Tensor], h: f64) -> Result<f64> {
    let run = |xs: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars = xs.iter().map(|x| g.leaf(x.clone(), true)).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (mut g, vars, out) = run(xs)?;
    g.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut probe = xs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; xs[i].numel()]);
        for j in 0..xs[i].numel() {
            let orig = probe[i].data[j];
            probe[i].data[j] = orig + h;
            let (gp, _, op) = run(&probe)?;
            probe[i].data[j] = orig - h;
            let (gm, _, om) = run(&probe)?;
            probe[i].data[j] = orig;
            let numeric = (eval_scalar(&gp, op)? - eval_scalar(&gm, om)?) / (2.0 * h);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    Ok(worst)
}

/// [`grad_check`] with respect to the parameters of a store. When
/// `per_param` is set, only that many seeded coordinates of each parameter
/// are probed.
pub fn grad_check_params(
    f: impl Fn(&mut Graph, &ParamStore) -> Result<Var>,
    store: &ParamStore,
    h: f64,
    per_param: Option<usize>,
    seed: u64,
) -> Result<f64> {
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out)?;
    let grads: Vec<(ParamId, Vec<f64>)> = g.param_grads().into_iter().map(|(id, gr)| (id, gr.to_vec())).collect();
    let analytic = |id: ParamId| grads.iter().find(|(p, _)| *p == id).map(|(_, gr)| gr.as_slice());

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        eval_scalar(&g, out)
    };
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let n = store.value(id).numel();
        let coords: Vec<usize> = match per_param {
            Some(k) if k < n => {
                let mut r = crate::rng::rng(seed, &[id.0 as u64]);
                let mut c = sample(&mut r, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for j in coords {
            let orig = store.value(id).data[j];
            probe.value_mut(id).data[j] = orig + h;
            let fp = eval(&probe)?;
            probe.value_mut(id).data[j] = orig - h;
            let fm = eval(&probe)?;
            probe.value_mut(id).data[j] = orig;
            let a = analytic(id).map_or(0.0, |gr| gr[j]);
            worst = worst.max(rel_err(a, (fp - fm) / (2.0 * h)));
        }
    }
    Ok(worst)
}
