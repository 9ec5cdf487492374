//! Frozen per-class text embeddings built from prompt templates.
//!
//! Class vectors come either from an embedding file produced offline by a
//! real text encoder, or from a deterministic hash-seeded stub. Each class
//! vector is the normalised mean of its per-template embeddings.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::container;
use crate::error::{Error, Result};

pub const TEMPLATE_COUNT: usize = 16;
pub const MIN_STUB_DIM: usize = 8;
const BANK_MAGIC: &[u8; 4] = b"EEGT";
const BANK_SCHEMA: u32 = 1;
const SLOTS: [&str; 2] = ["{label}", "{}"];

/// Exactly sixteen templates, each with one `{label}` (or `{}`) slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PromptTemplateSet {
    templates: Vec<String>,
}

fn slot_count(t: &str) -> usize {
    // `{label}` does not contain `{}`, so the two counts never overlap.
    SLOTS.iter().map(|s| t.matches(s).count()).sum()
}

impl PromptTemplateSet {
    pub fn new(templates: Vec<String>) -> Result<Self> {
        if templates.len() != TEMPLATE_COUNT {
            return Err(Error::Template(format!(
                "expected {TEMPLATE_COUNT} templates, got {}",
                templates.len()
            )));
        }
        if let Some(t) = templates.iter().find(|t| slot_count(t) != 1) {
            return Err(Error::Template(format!("template {t:?} must contain exactly one label slot")));
        }
        Ok(Self { templates })
    }

    /// Parses the plain-text format: one template per line, blank lines and
    /// `#` comments ignored.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        )
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        Self::parse(include_str!("../data/templates.txt")).expect("shipped templates are valid")
    }
}

impl TryFrom<Vec<String>> for PromptTemplateSet {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PromptTemplateSet> for Vec<String> {
    fn from(t: PromptTemplateSet) -> Self {
        t.templates
    }
}

/// Fills the slot of every template with `label`, keeping template order.
pub fn render_prompts(label: &str, templates: &PromptTemplateSet) -> Result<Vec<String>> {
    if label.trim().is_empty() {
        return Err(Error::Template("label must be non-empty".into()));
    }
    Ok(templates
        .templates
        .iter()
        .map(|t| {
            let slot = SLOTS.iter().find(|s| t.contains(**s)).expect("validated slot");
            t.replacen(slot, label, 1)
        })
        .collect())
}

/// Deterministic pseudo-random unit vector keyed by `(seed, text)`.
pub fn stub_embed(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if dim < MIN_STUB_DIM {
        return Err(Error::TextBank(format!("stub dimension {dim} is below {MIN_STUB_DIM}")));
    }
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(text.as_bytes()).finalize();
    let mut r = rand_chacha::ChaCha8Rng::from_seed(digest.into());
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
    Ok(normalize(v))
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Where class embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BankSource {
    File { path: PathBuf },
    Stub { dim: usize, seed: u64 },
}

/// Recorded origin of a bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    File { path: PathBuf, sha256: String },
    Stub { dim: usize, seed: u64 },
}

/// Immutable class embeddings, one unit vector per label.
#[derive(Debug, Clone, PartialEq)]
pub struct TextBank {
    dim: usize,
    labels: Vec<String>,
    embeddings: Vec<Vec<f64>>,
    provenance: Provenance,
}

impl TextBank {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn embedding(&self, label: &str) -> Option<&[f64]> {
        self.labels.iter().position(|l| l == label).map(|i| self.embeddings[i].as_slice())
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Banks are never trainable.
    pub fn is_frozen(&self) -> bool {
        true
    }

    /// `[K, dim]` matrix in label order.
    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.labels.len(), self.dim],
            data: self.embeddings.iter().flatten().copied().collect(),
        }
    }

    /// SHA-256 over labels and the exact vector bits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (l, v) in self.labels.iter().zip(&self.embeddings) {
            h.update((l.len() as u64).to_le_bytes());
            h.update(l.as_bytes());
            for x in v {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub labels: Vec<String>,
    pub templates: Vec<String>,
    pub dim: usize,
}

/// Writes an embedding file: manifest plus an `f32` matrix of
/// `(labels × templates) × dim` rows, label-major.
pub fn write_embedding_file(path: impl AsRef<Path>, manifest: &EmbeddingManifest, rows: &[Vec<f32>]) -> Result<()> {
    let want = manifest.labels.len() * manifest.templates.len();
    if rows.len() != want || rows.iter().any(|r| r.len() != manifest.dim) {
        return Err(Error::TextBank(format!(
            "expected {want} rows of dimension {}",
            manifest.dim
        )));
    }
    let payload = container::f32_payload(rows.iter().flatten().copied());
    container::write_file(
        path.as_ref(),
        &container::encode(BANK_MAGIC, BANK_SCHEMA, manifest, &payload)?,
    )
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<(EmbeddingManifest, Vec<Vec<f32>>)> {
    let bytes = container::read_file(path.as_ref())?;
    let (manifest, payload): (EmbeddingManifest, _) = container::decode(BANK_MAGIC, BANK_SCHEMA, &bytes)?;
    let n = manifest.labels.len() * manifest.templates.len();
    let values = container::read_f32s(payload, n * manifest.dim)?;
    if payload.len() != n * manifest.dim * 4 {
        return Err(Error::TextBank("trailing bytes after embedding matrix".into()));
    }
    if manifest.dim == 0 {
        return Err(Error::TextBank("embedding dimension must be positive".into()));
    }
    let rows = values.chunks(manifest.dim).map(<[f32]>::to_vec).collect();
    Ok((manifest, rows))
}

fn mean_normalized(vectors: &[Vec<f64>]) -> Vec<f64> {
    let dim = vectors[0].len();
    let mut m = vec![0.0; dim];
    for v in vectors {
        for (a, b) in m.iter_mut().zip(v) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= vectors.len() as f64);
    normalize(m)
}

/// Builds the class bank for `labels`.
pub fn build_bank(labels: &[String], templates: &PromptTemplateSet, source: &BankSource) -> Result<TextBank> {
    if labels.is_empty() {
        return Err(Error::Empty("label set"));
    }
    let (dim, embeddings, provenance) = match source {
        BankSource::Stub { dim, seed } => {
            let mut out = Vec::with_capacity(labels.len());
            for l in labels {
                let per: Vec<Vec<f64>> = render_prompts(l, templates)?
                    .iter()
                    .map(|p| stub_embed(p, *dim, *seed))
                    .collect::<Result<_>>()?;
                out.push(mean_normalized(&per));
            }
            (*dim, out, Provenance::Stub { dim: *dim, seed: *seed })
        }
        BankSource::File { path } => {
            let bytes = container::read_file(path)?;
            let sha = hex::encode(Sha256::digest(&bytes));
            let (manifest, rows) = read_embedding_file(path)?;
            let nt = manifest.templates.len();
            let mut out = Vec::with_capacity(labels.len());
            for l in labels {
                let li = manifest
                    .labels
                    .iter()
                    .position(|m| m == l)
                    .ok_or_else(|| Error::TextBank(format!("embedding file has no label {l:?}")))?;
                let mut per = Vec::with_capacity(TEMPLATE_COUNT);
                for t in templates.templates() {
                    let ti = manifest
                        .templates
                        .iter()
                        .position(|m| m == t)
                        .ok_or_else(|| Error::TextBank(format!("embedding file has no template {t:?}")))?;
                    per.push(rows[li * nt + ti].iter().map(|&x| f64::from(x)).collect::<Vec<_>>());
                }
                let v = mean_normalized(&per);
                if v.iter().all(|x| *x == 0.0) {
                    return Err(Error::TextBank(format!("class {l:?} averages to the zero vector")));
                }
                out.push(v);
            }
            (
                manifest.dim,
                out,
                Provenance::File {
                    path: path.clone(),
                    sha256: sha,
                },
            )
        }
    };
    Ok(TextBank {
        dim,
        labels: labels.to_vec(),
        embeddings,
        provenance,
    })
}
