//! Runs the encoder on random inputs and prints shapes, parameter counts and
//! attention statistics.

use eegtext::autodiff::{Graph, Tensor};
use eegtext::model::{Model, ModelConfig, Pass};

fn main() -> eegtext::Result<()> {
    let full = Model::new(ModelConfig::default(), 0)?;
    println!("default config: {} parameters", full.param_count());

    let cfg = ModelConfig::toy();
    let m = Model::new(cfg.clone(), 0)?;
    println!(
        "toy config: {} parameters, token grid {:?}, input {}x{}x{}x{}",
        m.param_count(),
        cfg.token_grid(),
        cfg.frames,
        cfg.bands,
        cfg.height,
        cfg.width
    );

    let shape = [2, cfg.frames, cfg.bands, cfg.height, cfg.width];
    let de = Tensor::from_fn(&shape, |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0);
    let psd = Tensor::from_fn(&shape, |i| ((i * 104_729) % 97) as f64 / 48.0 - 1.0);
    let mut g = Graph::new();
    let (de, psd) = (g.constant(de)?, g.constant(psd)?);
    let mut pass = Pass::eval();
    let y = m.forward(&mut g, de, psd, &mut pass)?;
    println!("output shape {:?}", g.shape(y));
    for row in g.value(y).data.chunks(cfg.proj_dim) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("  embedding norm {norm:.6}");
    }
    println!("{} attention maps recorded", pass.attention.len());
    Ok(())
}
