//! Builds a small graph by hand, backpropagates and compares against
//! central differences.

use eegtext::autodiff::{grad_check_many, Graph, Tensor, DEFAULT_STEP};

fn main() -> eegtext::Result<()> {
    let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?;
    let w = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 - 6.0) / 10.0).collect())?;

    let loss = |g: &mut Graph, v: &[eegtext::autodiff::Var]| {
        let h = g.matmul(v[0], v[1])?;
        let h = g.gelu(h)?;
        g.cross_entropy(h, &[1, 3])
    };

    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true)?;
    let wv = g.leaf(w.clone(), true)?;
    let l = loss(&mut g, &[xv, wv])?;
    g.backward(l)?;
    println!("loss {:.6}", g.value(l).item());
    println!("dL/dx {:?}", g.grad(xv).unwrap());

    let err = grad_check_many(loss, &[x, w], DEFAULT_STEP)?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
