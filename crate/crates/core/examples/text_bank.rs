//! Renders prompts for each label and builds a frozen stub bank.

use eegtext::text_bank::{build_bank, render_prompts, BankSource, PromptTemplateSet};

fn main() -> eegtext::Result<()> {
    let labels: Vec<String> = ["negative", "neutral", "positive"].map(String::from).to_vec();
    let templates = PromptTemplateSet::default();
    for p in render_prompts("neutral", &templates)?.iter().take(3) {
        println!("prompt: {p}");
    }
    println!("... {} templates", templates.templates().len());

    let bank = build_bank(&labels, &templates, &BankSource::Stub { dim: 16, seed: 0 })?;
    println!("bank: {} labels x {} dims, frozen = {}", bank.len(), bank.dim(), bank.is_frozen());
    println!("provenance {:?}", bank.provenance());
    println!("content hash {}", bank.content_hash());
    for (i, a) in bank.embeddings().iter().enumerate() {
        let sims: Vec<String> = bank
            .embeddings()
            .iter()
            .map(|b| format!("{:>7.3}", a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()))
            .collect();
        println!("{:<9}{}", labels[i], sims.join(""));
    }
    Ok(())
}
