use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub fn new(name: &str, low: f64, high: f64) -> Self {
        Self {
            name: name.to_string(),
            low,
            high,
        }
    }

    pub fn edges(&self) -> (f64, f64) {
        (self.low, self.high)
    }
}

/// Ordered frequency bands. The default is δ, θ, α, β, γ1, γ2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSet {
    pub bands: Vec<Band>,
}

impl Default for BandSet {
    fn default() -> Self {
        Self {
            bands: vec![
                Band::new("delta", 1.0, 4.0),
                Band::new("theta", 4.0, 8.0),
                Band::new("alpha", 8.0, 14.0),
                Band::new("beta", 14.0, 31.0),
                Band::new("gamma1", 31.0, 51.0),
                Band::new("gamma2", 51.0, 75.0),
            ],
        }
    }
}

impl BandSet {
    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn ceiling(&self) -> f64 {
        self.bands.iter().map(|b| b.high).fold(0.0, f64::max)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.bands.iter().position(|b| b.name == name)
    }

    /// Checks ordering and edge invariants, and that every band sits below
    /// Nyquist at `fs`.
    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::config("band_set", "no bands"));
        }
        for (i, b) in self.bands.iter().enumerate() {
            if !(b.low > 0.0 && b.low < b.high && b.high < fs / 2.0) {
                return Err(Error::InvalidBand {
                    low: b.low,
                    high: b.high,
                    fs,
                });
            }
            if i > 0 && self.bands[i - 1].low > b.low {
                return Err(Error::config("band_set", format!("band {} out of order", b.name)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bands() {
        let b = BandSet::default();
        assert_eq!(b.len(), 6);
        assert_eq!(b.ceiling(), 75.0);
        assert_eq!(b.bands[2].edges(), (8.0, 14.0));
        b.validate(200.0).unwrap();
        assert!(b.validate(150.0).is_err());
    }
}
