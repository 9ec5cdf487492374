//! Similarity logits between EEG embeddings and class text embeddings,
//! argmax prediction and the cross-entropy matching loss.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::text_bank::TextBank;

/// `batch × classes` temperature-scaled cosine similarities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub batch: usize,
    pub classes: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn new(batch: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * classes {
            return Err(Error::shape("logits", format!("{} values for {batch}×{classes}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "logits" });
        }
        Ok(Self { batch, classes, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.classes)
    }
}

/// `logits[i][k] = (eeg_i · class_k) / τ`.
pub fn similarity_logits(eeg: &[Vec<f64>], bank: &TextBank, tau: f64) -> Result<Logits> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    let mut data = Vec::with_capacity(eeg.len() * bank.len());
    for e in eeg {
        if e.len() != bank.dim() {
            return Err(Error::shape(
                "similarity_logits",
                format!("embedding dim {} vs bank dim {}", e.len(), bank.dim()),
            ));
        }
        for c in bank.embeddings() {
            data.push(e.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() / tau);
        }
    }
    Logits::new(eeg.len(), bank.len(), data)
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(logits: &Logits) -> Vec<usize> {
    logits
        .rows()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn predict(logits: &Logits, labels: &[String]) -> Result<Vec<String>> {
    if labels.len() != logits.classes || labels.len() < 2 {
        return Err(Error::shape(
            "predict",
            format!("{} labels for {} classes", labels.len(), logits.classes),
        ));
    }
    Ok(argmax_rows(logits).into_iter().map(|k| labels[k].clone()).collect())
}

/// Mean of `−log softmax(logits_i)[target_i]`.
pub fn matching_loss(logits: &Logits, targets: &[usize]) -> Result<f64> {
    if targets.len() != logits.batch || targets.is_empty() {
        return Err(Error::shape(
            "matching_loss",
            format!("{} targets for batch {}", targets.len(), logits.batch),
        ));
    }
    let mut total = 0.0;
    for (row, &t) in logits.rows().zip(targets) {
        if t >= logits.classes {
            return Err(Error::InvalidTarget {
                index: t,
                classes: logits.classes,
            });
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    Ok(total / targets.len() as f64)
}

/// Differentiable logits `(emb · bankᵀ) · exp(logit_scale)` for unit
/// embeddings `[B, P]`. The bank enters as a constant, so it never gets a
/// gradient.
pub fn logits_graph(g: &mut Graph, emb: Var, bank: &TextBank, logit_scale: Var) -> Result<Var> {
    let b = g.constant(bank.to_tensor())?;
    let sim = g.matmul_t(emb, b)?;
    let scale = g.exp(logit_scale)?;
    g.mul(sim, scale)
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;
    use crate::autodiff::Tensor;
    use crate::text_bank::{build_bank, BankSource, PromptTemplateSet};

    fn labels() -> Vec<String> {
        ["neg", "neu", "pos"].map(String::from).to_vec()
    }

    fn bank() -> TextBank {
        build_bank(&labels(), &PromptTemplateSet::default(), &BankSource::Stub { dim: 16, seed: 1 }).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let b = bank();
        let e = b.embeddings()[1].clone();
        let l = similarity_logits(&[e.clone()], &b, 1.0).unwrap();
        assert!((l.row(0)[1] - 1.0).abs() < 1e-12);
        let l = similarity_logits(&[e.clone()], &b, 0.07).unwrap();
        assert!((l.row(0)[1] - 14.285_714_285_714_286).abs() <= 1e-9);

        // Orthogonal: remove the class direction from another vector.
        let c = &b.embeddings()[0];
        let mut o = b.embeddings()[2].clone();
        let d: f64 = o.iter().zip(c).map(|(a, b)| a * b).sum();
        o.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
        let l = similarity_logits(&[o], &b, 0.07).unwrap();
        assert!(l.row(0)[0].abs() < 1e-12);

        assert!(matches!(similarity_logits(&[e.clone()], &b, 0.0), Err(Error::NonPositiveTemperature(_))));
        assert!(similarity_logits(&[vec![1.0; 4]], &b, 1.0).is_err());
    }

    #[test]
    fn prediction_rules() {
        let l = Logits::new(2, 3, vec![0.2, 0.9, 0.1, 0.5, 0.5, 0.0]).unwrap();
        assert_eq!(predict(&l, &labels()).unwrap(), vec!["neu", "neg"]);
        let shifted = Logits::new(2, 3, l.data.iter().map(|v| 3.0 * v.exp() - 7.0).collect()).unwrap();
        assert_eq!(argmax_rows(&shifted), argmax_rows(&l));
        assert!(predict(&l, &labels()[..2]).is_err());
    }

    #[test]
    fn loss_examples() {
        let l = Logits::new(1, 3, vec![0.4; 3]).unwrap();
        assert!((matching_loss(&l, &[2]).unwrap() - 3f64.ln()).abs() < 1e-15);
        let l = Logits::new(1, 3, vec![0.0, 20.0, 0.0]).unwrap();
        assert!(matching_loss(&l, &[1]).unwrap() <= 1e-8);
        assert!(matches!(matching_loss(&l, &[3]), Err(Error::InvalidTarget { .. })));

        let mut r = crate::rng::rng(4, &[]);
        let data: Vec<f64> = (0..12).map(|_| r.random_range(-5.0..5.0)).collect();
        let targets = [0, 2, 1, 1];
        let l = Logits::new(4, 3, data.clone()).unwrap();
        // Direct formula: log(sum(exp)) - x_t without max subtraction.
        let mut want = 0.0;
        for i in 0..4 {
            let row = &data[i * 3..i * 3 + 3];
            want += row.iter().map(|v| v.exp()).sum::<f64>().ln() - row[targets[i]];
        }
        assert!((matching_loss(&l, &targets).unwrap() - want / 4.0).abs() < 1e-12);
    }

    #[test]
    fn graph_logits_match_pure_version_and_leave_bank_alone() {
        let b = bank();
        let mut r = crate::rng::rng(5, &[]);
        let emb: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let v: Vec<f64> = (0..16).map(|_| r.random_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let tau = 0.07;
        let mut g = Graph::new();
        let e = g
            .leaf(Tensor::new(vec![4, 16], emb.iter().flatten().copied().collect()).unwrap(), true)
            .unwrap();
        let s = g.leaf(Tensor::scalar((1.0 / tau as f64).ln()), true).unwrap();
        let l = logits_graph(&mut g, e, &b, s).unwrap();
        let pure = similarity_logits(&emb, &b, tau).unwrap();
        for (a, p) in g.value(l).data.iter().zip(&pure.data) {
            assert!((a - p).abs() < 1e-9);
        }
        let before = b.content_hash();
        let loss = g.cross_entropy(l, &[0, 1, 2, 0]).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(s).is_some());
        // The bank constant is the node created right after the logit scale.
        assert_eq!(g.grad(crate::autodiff::Var(s.0 + 1)), None);
        assert_eq!(before, b.content_hash());
        assert!((g.value(loss).item() - matching_loss(&pure, &[0, 1, 2, 0]).unwrap()).abs() < 1e-9);
    }
}
