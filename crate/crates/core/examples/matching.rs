//! Scores EEG embeddings against the bank and predicts labels.

use eegtext::matching::{argmax_rows, matching_loss, predict, similarity_logits};
use eegtext::text_bank::{build_bank, BankSource, PromptTemplateSet};

fn main() -> eegtext::Result<()> {
    let labels: Vec<String> = ["negative", "neutral", "positive"].map(String::from).to_vec();
    let bank = build_bank(&labels, &PromptTemplateSet::default(), &BankSource::Stub { dim: 8, seed: 3 })?;

    // Noisy copies of the class embeddings stand in for encoder output.
    let eeg: Vec<Vec<f64>> = [2usize, 0, 1, 1]
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let v: Vec<f64> = bank.embeddings()[k]
                .iter()
                .enumerate()
                .map(|(j, x)| x + 0.2 * (((i * 31 + j * 17) % 11) as f64 / 5.0 - 1.0))
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();

    let logits = similarity_logits(&eeg, &bank, 0.07)?;
    for row in logits.rows() {
        println!("{}", row.iter().map(|v| format!("{v:>8.3}")).collect::<String>());
    }
    println!("argmax {:?}", argmax_rows(&logits));
    println!("labels {:?}", predict(&logits, &labels)?);
    println!("loss {:.4}", matching_loss(&logits, &[2, 0, 1, 1])?);
    Ok(())
}
