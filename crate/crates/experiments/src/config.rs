//! Experiment configuration: per-scenario defaults, JSON documents, CLI
//! overrides, and validation that reports every violated field at once.

use std::fmt;
use std::path::{Path, PathBuf};

use flowlab::flowfield::{GaussianMixture, MixtureComponent, NYQUIST};
use flowlab::metrics::W2_MAX_POINTS;
use flowlab::Lattice;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::scenarios::ambiguous::nearest_component;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    ErrorReduction,
    Stability,
    Wasserstein,
    Ambiguous,
    Visibility,
    Ablation,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::ErrorReduction,
        Scenario::Stability,
        Scenario::Wasserstein,
        Scenario::Ambiguous,
        Scenario::Visibility,
        Scenario::Ablation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::ErrorReduction => "error_reduction",
            Scenario::Stability => "stability",
            Scenario::Wasserstein => "wasserstein",
            Scenario::Ambiguous => "ambiguous",
            Scenario::Visibility => "visibility",
            Scenario::Ablation => "ablation",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mixture as written in a config; validated by [`ExperimentConfig::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub dimension: usize,
    pub components: Vec<MixtureComponent>,
}

impl MixtureSpec {
    pub fn isotropic(mean: Vec<f64>, std: f64) -> Self {
        Self {
            dimension: mean.len(),
            components: vec![MixtureComponent::new(1.0, mean, std)],
        }
    }

    pub fn equal_weights(means: Vec<Vec<f64>>, std: f64) -> Self {
        let w = 1.0 / means.len() as f64;
        Self {
            dimension: means[0].len(),
            components: means.into_iter().map(|m| MixtureComponent::new(w, m, std)).collect(),
        }
    }

    pub fn build(&self) -> flowlab::Result<GaussianMixture> {
        GaussianMixture::new(self.dimension, self.components.clone())
    }
}

/// Cubic lattice `[lo, hi]^D` with `extent` sites per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub lo: f64,
    pub hi: f64,
    pub extent: usize,
}

impl LatticeSpec {
    pub fn build(&self, dims: usize) -> flowlab::Result<Lattice> {
        Lattice::cube(dims, self.lo, self.hi, self.extent)
    }
}

/// Parameter grid swept by the ablation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    pub sigmas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub priors: Vec<usize>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.5, 1.0, 2.5],
            rhos: vec![0.2, 0.4, 1.0],
            priors: vec![1, 3, 5],
        }
    }
}

/// Voxel-scene settings for the visibility scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// JSON scene file; the built-in occluder scene is used when absent.
    #[serde(default)]
    pub path: Option<PathBuf>,
    pub resolution: usize,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            path: None,
            resolution: 16,
            beta: 1.5,
            gamma: 1.5,
            lambda: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Target of the observation branch.
    pub observation: MixtureSpec,
    /// Targets of the semantic (prior) branch; `ambiguous` takes two.
    pub semantic: Vec<MixtureSpec>,
    /// Relaxation strengths in lattice sites.
    pub sigmas: Vec<f64>,
    pub rho: f64,
    pub steps: usize,
    /// Independently perturbed copies of each prior field.
    pub priors: usize,
    /// Noise cutoff in cycles per lattice site.
    pub cutoff: f64,
    pub amplitude: f64,
    /// Samples per seed (trajectories for path errors, draws for W2).
    pub samples: usize,
    pub seed: u64,
    pub seed_count: usize,
    pub lattice: LatticeSpec,
    pub ablation: AblationGrid,
    pub scene: SceneSpec,
    /// Output directory; not part of the config hash.
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn defaults(scenario: Scenario) -> Self {
        let base = Self {
            scenario,
            observation: MixtureSpec::isotropic(vec![1.0, 0.0], 0.5),
            semantic: vec![MixtureSpec::isotropic(vec![-1.0, 1.0], 0.7)],
            sigmas: vec![1.0],
            rho: 0.2,
            steps: 100,
            priors: 3,
            cutoff: 0.25,
            amplitude: 1.0,
            samples: 512,
            seed: 0,
            seed_count: 20,
            lattice: LatticeSpec {
                lo: -4.0,
                hi: 4.0,
                extent: 64,
            },
            ablation: AblationGrid::default(),
            scene: SceneSpec::default(),
            output: PathBuf::from("out").join(scenario.name()),
        };
        match scenario {
            Scenario::ErrorReduction => Self {
                sigmas: vec![0.5, 1.0, 2.0],
                samples: 8,
                ..base
            },
            Scenario::Stability => Self {
                observation: MixtureSpec::isotropic(vec![0.0, 0.0, 0.0], 1.0),
                semantic: vec![MixtureSpec::isotropic(vec![0.0, 0.0, 0.0], 1.0)],
                amplitude: 0.5,
                seed_count: 100,
                ..base
            },
            Scenario::Wasserstein => Self { amplitude: 0.3, ..base },
            Scenario::Ambiguous => Self {
                observation: MixtureSpec::equal_weights(vec![vec![1.0, 2.0], vec![1.0, -2.0]], 0.3),
                semantic: vec![
                    MixtureSpec::isotropic(vec![1.0, 2.0], 1.0),
                    MixtureSpec::isotropic(vec![1.0, -2.0], 1.0),
                ],
                steps: 50,
                samples: 1024,
                ..base
            },
            Scenario::Visibility => Self {
                steps: 50,
                seed_count: 5,
                ..base
            },
            Scenario::Ablation => Self {
                samples: 256,
                seed_count: 3,
                ..base
            },
        }
    }

    /// Defaults for `scenario`, overlaid with an optional JSON document and
    /// then with `key=value` overrides (dotted keys reach nested fields;
    /// values parse as JSON and fall back to plain strings).
    pub fn load(scenario: Scenario, document: Option<&str>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(Self::defaults(scenario)).expect("defaults serialize");
        if let Some(doc) = document {
            let user: Value = serde_json::from_str(doc).map_err(|e| ConfigError::single("document", e))?;
            if let Some(s) = user.get("scenario") {
                if s != &Value::String(scenario.name().into()) {
                    return Err(ConfigError::single(
                        "scenario",
                        format!("document names {s}, command is {scenario}"),
                    ));
                }
            }
            merge(&mut value, user);
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: Self = serde_json::from_value(value).map_err(|e| ConfigError::single("document", e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load_path(scenario: Scenario, path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p).map_err(|e| ConfigError::single("config", format!("{}: {e}", p.display())))?,
            ),
            None => None,
        };
        Self::load(scenario, text.as_deref(), overrides)
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Violations::default();
        let obs = self.observation.build();
        if let Err(e) = &obs {
            v.push("observation", e);
        }
        let dim = self.observation.dimension;
        let needs_lattice = self.scenario != Scenario::Stability;
        if needs_lattice && !(1..=2).contains(&dim) {
            v.push("observation.dimension", format!("lattice scenarios support 1 or 2 dimensions, got {dim}"));
        }
        if self.scenario == Scenario::Stability && !(1..=16).contains(&dim) {
            v.push("observation.dimension", format!("must lie in 1..=16, got {dim}"));
        }
        if self.semantic.is_empty() {
            v.push("semantic", "need at least one prior target");
        }
        for (i, m) in self.semantic.iter().enumerate() {
            let name = format!("semantic[{i}]");
            if let Err(e) = m.build() {
                v.push(&name, e);
            } else if m.dimension != dim {
                v.push(&name, format!("dimension {} differs from observation dimension {dim}", m.dimension));
            }
        }
        if self.scenario == Scenario::Ambiguous {
            if self.semantic.len() != 2 {
                v.push("semantic", format!("ambiguous needs exactly two prior targets, got {}", self.semantic.len()));
            } else if self.semantic[0] == self.semantic[1] {
                v.push("semantic", "the two prior targets are identical");
            } else if obs.is_ok()
                && self.semantic.iter().all(|m| m.dimension == dim)
                && nearest_component(&self.observation, &self.semantic[0])
                    == nearest_component(&self.observation, &self.semantic[1])
            {
                v.push("semantic", "both prior targets select the same observation mode");
            }
        }
        if matches!(self.scenario, Scenario::Wasserstein | Scenario::Ambiguous | Scenario::Visibility)
            && !self.sigmas.iter().any(|s| *s > 0.0)
        {
            v.push("sigmas", "need at least one positive relaxation strength");
        }
        check_sigmas(&mut v, "sigmas", &self.sigmas);
        if !(0.0..=1.0).contains(&self.rho) {
            v.push("rho", format!("must lie in [0, 1], got {}", self.rho));
        }
        if !(1..=100_000).contains(&self.steps) {
            v.push("steps", format!("must lie in 1..=100000, got {}", self.steps));
        }
        if !(1..=16).contains(&self.priors) {
            v.push("priors", format!("must lie in 1..=16, got {}", self.priors));
        }
        if !(self.cutoff > 0.0 && self.cutoff < NYQUIST) {
            v.push("cutoff", format!("must lie in (0, {NYQUIST}) cycles per site, got {}", self.cutoff));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            v.push("amplitude", format!("must be finite and non-negative, got {}", self.amplitude));
        }
        if !(1..=W2_MAX_POINTS).contains(&self.samples) {
            v.push("samples", format!("must lie in 1..={W2_MAX_POINTS}, got {}", self.samples));
        }
        if !(1..=1000).contains(&self.seed_count) {
            v.push("seed_count", format!("must lie in 1..=1000, got {}", self.seed_count));
        }
        let l = &self.lattice;
        if !(l.lo.is_finite() && l.hi.is_finite() && l.lo < l.hi) {
            v.push("lattice", format!("need finite lo < hi, got [{}, {}]", l.lo, l.hi));
        }
        if !(4..=512).contains(&l.extent) {
            v.push("lattice.extent", format!("must lie in 4..=512, got {}", l.extent));
        }
        let a = &self.ablation;
        if a.sigmas.is_empty() || a.rhos.is_empty() || a.priors.is_empty() {
            v.push("ablation", "every grid axis needs at least one value");
        }
        check_sigmas(&mut v, "ablation.sigmas", &a.sigmas);
        if let Some(r) = a.rhos.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            v.push("ablation.rhos", format!("values must lie in [0, 1], got {r}"));
        }
        if let Some(n) = a.priors.iter().find(|n| !(1..=16).contains(*n)) {
            v.push("ablation.priors", format!("values must lie in 1..=16, got {n}"));
        }
        let s = &self.scene;
        if !(2..=128).contains(&s.resolution) {
            v.push("scene.resolution", format!("must lie in 2..=128, got {}", s.resolution));
        }
        for (name, x) in [("scene.beta", s.beta), ("scene.gamma", s.gamma), ("scene.lambda", s.lambda)] {
            if !(x.is_finite() && x > 0.0) {
                v.push(name, format!("must be positive, got {x}"));
            }
        }
        v.finish()
    }

    /// Seeds `seed, seed + 1, ...` in run order.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.seed_count as u64).map(|i| self.seed + i).collect()
    }

    /// SHA-256 of the canonical JSON form with `output` blanked, so the same
    /// experiment written to different directories shares a hash.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut c = self.clone();
        c.output = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn check_sigmas(v: &mut Violations, name: &str, sigmas: &[f64]) {
    if sigmas.is_empty() {
        v.push(name, "need at least one value");
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && (0.0..=20.0).contains(*s))) {
        v.push(name, format!("values must lie in [0, 20], got {s}"));
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn apply_override(value: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::single("override", format!("`{spec}` is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = value;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) => map
                .get_mut(part)
                .ok_or_else(|| ConfigError::single("override", format!("unknown key `{key}`")))?,
            Value::Array(items) => {
                let i: usize = part
                    .parse()
                    .map_err(|_| ConfigError::single("override", format!("`{part}` in `{key}` is not an index")))?;
                let len = items.len();
                items
                    .get_mut(i)
                    .ok_or_else(|| ConfigError::single("override", format!("index {i} out of range ({len})")))?
            }
            _ => return Err(ConfigError::single("override", format!("`{key}` does not name a field"))),
        };
    }
    *slot = parsed;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

#[derive(Default)]
struct Violations(Vec<Violation>);

impl Violations {
    fn push(&mut self, field: &str, reason: impl fmt::Display) {
        self.0.push(Violation {
            field: field.to_string(),
            reason: reason.to_string(),
        });
    }

    fn finish(self) -> Result<(), ConfigError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { violations: self.0 })
        }
    }
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigError {
    pub violations: Vec<Violation>,
}

impl ConfigError {
    fn single(field: &str, reason: impl fmt::Display) -> Self {
        Self {
            violations: vec![Violation {
                field: field.to_string(),
                reason: reason.to_string(),
            }],
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problems):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {}: {}", v.field, v.reason)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}
