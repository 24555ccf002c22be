use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// One isotropic component of a [`GaussianMixture`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

impl MixtureComponent {
    pub fn new(weight: f64, mean: Vec<f64>, std: f64) -> Self {
        Self { weight, mean, std }
    }
}

/// JSON layout: `{"dimension": D, "components": [{"weight", "mean": [..], "std"}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MixtureDocument {
    dimension: usize,
    components: Vec<MixtureComponent>,
}

/// Weighted isotropic Gaussian components in `R^dimension`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureDocument", into = "MixtureDocument")]
pub struct GaussianMixture {
    dimension: usize,
    components: Vec<MixtureComponent>,
}

impl TryFrom<MixtureDocument> for GaussianMixture {
    type Error = Error;

    fn try_from(doc: MixtureDocument) -> Result<Self> {
        Self::new(doc.dimension, doc.components)
    }
}

impl From<GaussianMixture> for MixtureDocument {
    fn from(m: GaussianMixture) -> Self {
        Self {
            dimension: m.dimension,
            components: m.components,
        }
    }
}

impl GaussianMixture {
    pub fn new(dimension: usize, components: Vec<MixtureComponent>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidMixture("dimension must be positive".into()));
        }
        if components.is_empty() {
            return Err(Error::InvalidMixture("mixture has no components".into()));
        }
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::InvalidMixture(format!(
                    "component {i}: weight {} is not strictly positive",
                    c.weight
                )));
            }
            if !(c.std.is_finite() && c.std > 0.0) {
                return Err(Error::InvalidMixture(format!(
                    "component {i}: std {} is not strictly positive",
                    c.std
                )));
            }
            if c.mean.len() != dimension {
                return Err(Error::InvalidMixture(format!(
                    "component {i}: mean has {} entries, dimension is {dimension}",
                    c.mean.len()
                )));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidMixture(format!("component {i}: mean is not finite")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidMixture(format!("weights sum to {total}, not 1")));
        }
        Ok(Self {
            dimension,
            components,
        })
    }

    /// Single component with unit weight.
    pub fn isotropic(mean: Vec<f64>, std: f64) -> Result<Self> {
        Self::new(mean.len(), vec![MixtureComponent::new(1.0, mean, std)])
    }

    /// Equal-weight components sharing one std.
    pub fn equal_weights(means: Vec<Vec<f64>>, std: f64) -> Result<Self> {
        let dimension = means.first().map(Vec::len).unwrap_or(0);
        let w = 1.0 / means.len().max(1) as f64;
        Self::new(
            dimension,
            means.into_iter().map(|m| MixtureComponent::new(w, m, std)).collect(),
        )
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("mixture serializes")
    }

    /// Draws one point from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = &self.components[self.components.len() - 1];
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                pick = c;
                break;
            }
        }
        pick.mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + pick.std * z
            })
            .collect()
    }

    /// Per-coordinate standard deviation of `x_t`, averaged over coordinates.
    pub fn marginal_std(&self, t: f64) -> f64 {
        let mut var = 0.0;
        for d in 0..self.dimension {
            let mut second = 0.0;
            let mut first = 0.0;
            for c in &self.components {
                let s2 = (1.0 - t).powi(2) + t * t * c.std * c.std;
                let m = t * c.mean[d];
                first += c.weight * m;
                second += c.weight * (s2 + m * m);
            }
            var += second - first * first;
        }
        (var / self.dimension as f64).sqrt()
    }
}
