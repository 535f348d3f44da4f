//! Experiment descriptions as TOML documents.
//!
//! The file mirrors `ExperimentConfig` field for field, so a run is fully
//! specified by one reviewable document; individual command-line flags
//! override single fields after parsing. The canonical serialization of the
//! effective (post-override, defaults filled in) document is hashed to name
//! the output files, so identical settings always land in identically named
//! artifacts.

use std::fs;
use std::path::Path;

use corhf::experiments::ExperimentConfig;
use corhf::filters::{FilterKind, TailPolicy};
use corhf::models::{ModelSpec, ObservationError, ObservationOperator, ObservationSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const VALID_FILTERS: &str = "enkf, rhf, qceff, corhf, bpf";

/// Scalar fields are declared before the table-valued sections so the
/// serialized form is always valid TOML.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub filters: Vec<String>,
    pub n_ens: Vec<usize>,
    pub n_steps: usize,
    #[serde(default)]
    pub n_spinup: usize,
    #[serde(default = "one")]
    pub n_trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Copula kernel bandwidth multiplier.
    #[serde(default = "unit")]
    pub alpha: f64,
    /// Localization radius for the copula conditioning; omit for none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_loc: Option<f64>,
    pub model: ModelSection,
    pub observation: ObservationSection,
    #[serde(default)]
    pub tails: TailsSection,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

/// Model parameters default to the canonical values; spell one out only to
/// depart from them.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSection {
    Lorenz63 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dt_internal: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dt_assimilation: Option<f64>,
    },
    Lorenz96 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_states: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        forcing: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dt_internal: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dt_assimilation: Option<f64>,
    },
}

impl ModelSection {
    pub fn to_spec(self) -> ModelSpec {
        match self {
            ModelSection::Lorenz63 {
                sigma,
                rho,
                beta,
                dt_internal,
                dt_assimilation,
            } => {
                let mut spec = ModelSpec::lorenz63();
                if let corhf::models::ModelKind::Lorenz63 {
                    sigma: s,
                    rho: r,
                    beta: b,
                } = &mut spec.kind
                {
                    *s = sigma.unwrap_or(*s);
                    *r = rho.unwrap_or(*r);
                    *b = beta.unwrap_or(*b);
                }
                spec.dt_internal = dt_internal.unwrap_or(spec.dt_internal);
                spec.dt_assimilation = dt_assimilation.unwrap_or(spec.dt_assimilation);
                spec
            }
            ModelSection::Lorenz96 {
                n_states,
                forcing,
                dt_internal,
                dt_assimilation,
            } => {
                let mut spec = ModelSpec::lorenz96(n_states.unwrap_or(40));
                if let corhf::models::ModelKind::Lorenz96 { forcing: f, .. } = &mut spec.kind {
                    *f = forcing.unwrap_or(*f);
                }
                spec.dt_internal = dt_internal.unwrap_or(spec.dt_internal);
                spec.dt_assimilation = dt_assimilation.unwrap_or(spec.dt_assimilation);
                spec
            }
        }
    }

    /// The same section with every optional parameter filled in, so two
    /// spellings of the same model hash identically.
    fn resolved(self) -> Self {
        let spec = self.to_spec();
        match spec.kind {
            corhf::models::ModelKind::Lorenz63 { sigma, rho, beta } => ModelSection::Lorenz63 {
                sigma: Some(sigma),
                rho: Some(rho),
                beta: Some(beta),
                dt_internal: Some(spec.dt_internal),
                dt_assimilation: Some(spec.dt_assimilation),
            },
            corhf::models::ModelKind::Lorenz96 { n_states, forcing } => ModelSection::Lorenz96 {
                n_states: Some(n_states),
                forcing: Some(forcing),
                dt_internal: Some(spec.dt_internal),
                dt_assimilation: Some(spec.dt_assimilation),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSection {
    pub operator: OperatorSection,
    pub error: ErrorSection,
}

impl ObservationSection {
    pub fn to_spec(self) -> ObservationSpec {
        ObservationSpec {
            operator: match self.operator {
                OperatorSection::EquilibriumDistance { take_sqrt } => {
                    ObservationOperator::L63EquilibriumDistance { take_sqrt }
                }
                OperatorSection::AbsAlternate => ObservationOperator::L96AbsAlternate,
            },
            error: match self.error {
                ErrorSection::Gaussian { variance } => ObservationError::Gaussian { variance },
                ErrorSection::HalfGaussian { variance } => {
                    ObservationError::HalfGaussian { variance }
                }
                ErrorSection::HalfCauchy { scale } => ObservationError::HalfCauchy { scale },
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OperatorSection {
    EquilibriumDistance {
        #[serde(default)]
        take_sqrt: bool,
    },
    AbsAlternate,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ErrorSection {
    Gaussian { variance: f64 },
    HalfGaussian { variance: f64 },
    HalfCauchy { scale: f64 },
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TailsSection {
    FixedMultiple {
        multiplier: f64,
    },
    Adaptive {
        #[serde(default)]
        capped: bool,
    },
}

impl Default for TailsSection {
    fn default() -> Self {
        TailsSection::FixedMultiple { multiplier: 2.0 }
    }
}

impl TailsSection {
    pub fn to_policy(self) -> TailPolicy {
        match self {
            TailsSection::FixedMultiple { multiplier } => TailPolicy::FixedMultiple(multiplier),
            TailsSection::Adaptive { capped } => TailPolicy::Adaptive { capped },
        }
    }
}

/// Command-line values that replace config fields. Empty vectors mean "keep
/// the config's list".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub filters: Vec<String>,
    pub n_ens: Vec<usize>,
    pub n_trials: Option<usize>,
    pub n_steps: Option<usize>,
    pub alpha: Option<f64>,
    pub r_loc: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("malformed config {}: {e}", path.display()))
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if !overrides.filters.is_empty() {
            self.filters = overrides.filters.clone();
        }
        if !overrides.n_ens.is_empty() {
            self.n_ens = overrides.n_ens.clone();
        }
        if let Some(n_trials) = overrides.n_trials {
            self.n_trials = n_trials;
        }
        if let Some(n_steps) = overrides.n_steps {
            self.n_steps = n_steps;
        }
        if let Some(alpha) = overrides.alpha {
            self.alpha = alpha;
        }
        if let Some(r_loc) = overrides.r_loc {
            self.r_loc = Some(r_loc);
        }
    }

    pub fn to_experiment(&self) -> Result<ExperimentConfig, String> {
        let filters = self
            .filters
            .iter()
            .map(|name| {
                FilterKind::from_name(name).ok_or_else(|| {
                    format!("unknown filter {name:?}; valid names: {VALID_FILTERS}")
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExperimentConfig {
            model: self.model.to_spec(),
            observation: self.observation.to_spec(),
            filters,
            n_ens: self.n_ens.clone(),
            n_steps: self.n_steps,
            n_spinup: self.n_spinup,
            n_trials: self.n_trials,
            seed: self.seed,
            tails: self.tails.to_policy(),
            alpha: self.alpha,
            r_loc: self.r_loc,
        })
    }

    /// Hex SHA-256 of the canonical form: defaults filled in, overrides
    /// applied, serialized with a fixed field order.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.model = canonical.model.resolved();
        let text = toml::to_string(&canonical).expect("config serializes");
        let hash = Sha256::digest(text.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The first eight digest characters, used to name output files.
pub fn run_id(digest: &str) -> &str {
    &digest[..8]
}

#[cfg(test)]
mod tests {
    use super::*;

    const L63_DOC: &str = r#"
        filters = ["enkf", "corhf"]
        n_ens = [10, 20]
        n_steps = 100
        n_spinup = 10
        n_trials = 3
        seed = 42

        [model]
        kind = "lorenz63"

        [observation.operator]
        kind = "equilibrium-distance"

        [observation.error]
        kind = "half-gaussian"
        variance = 1.0

        [tails]
        kind = "adaptive"
    "#;

    #[test]
    fn parses_a_full_document() {
        let cfg: ConfigFile = toml::from_str(L63_DOC).unwrap();
        assert_eq!(cfg.filters, ["enkf", "corhf"]);
        assert_eq!(cfg.n_ens, [10, 20]);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.alpha, 1.0);
        assert_eq!(cfg.r_loc, None);
        let exp = cfg.to_experiment().unwrap();
        assert_eq!(exp.filters, [FilterKind::Enkf, FilterKind::Corhf]);
        assert_eq!(exp.model.n_states(), 3);
        assert_eq!(exp.tails, TailPolicy::Adaptive { capped: false });
        exp.validate().unwrap();
    }

    #[test]
    fn optional_model_parameters_override_the_canonical_values() {
        let doc = r#"
            filters = ["rhf"]
            n_ens = [5]
            n_steps = 10

            [model]
            kind = "lorenz96"
            n_states = 12
            dt_assimilation = 0.4

            [observation.operator]
            kind = "abs-alternate"

            [observation.error]
            kind = "half-cauchy"
            scale = 0.1
        "#;
        let cfg: ConfigFile = toml::from_str(doc).unwrap();
        let spec = cfg.model.to_spec();
        assert_eq!(spec.n_states(), 12);
        assert_eq!(spec.dt_assimilation, 0.4);
        assert_eq!(spec.dt_internal, 0.01);
        assert_eq!(cfg.n_trials, 1);
        assert_eq!(cfg.n_spinup, 0);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let doc = L63_DOC.replace("seed = 42", "sede = 42");
        let err = toml::from_str::<ConfigFile>(&doc).unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
    }

    #[test]
    fn unknown_filter_names_are_listed() {
        let doc = L63_DOC.replace("\"enkf\"", "\"3dvar\"");
        let cfg: ConfigFile = toml::from_str(&doc).unwrap();
        let err = cfg.to_experiment().unwrap_err();
        assert!(err.contains("3dvar") && err.contains("corhf"), "{err}");
    }

    #[test]
    fn overrides_replace_only_the_given_fields() {
        let mut cfg: ConfigFile = toml::from_str(L63_DOC).unwrap();
        cfg.apply(&Overrides {
            seed: Some(7),
            n_ens: vec![40],
            r_loc: Some(2.0),
            ..Overrides::default()
        });
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.n_ens, [40]);
        assert_eq!(cfg.r_loc, Some(2.0));
        assert_eq!(cfg.n_steps, 100);
        assert_eq!(cfg.filters, ["enkf", "corhf"]);
    }

    #[test]
    fn digest_ignores_spelling_but_not_substance() {
        let cfg: ConfigFile = toml::from_str(L63_DOC).unwrap();
        let spelled = L63_DOC.replace("kind = \"lorenz63\"", "kind = \"lorenz63\"\nsigma = 10.0");
        let explicit: ConfigFile = toml::from_str(&spelled).unwrap();
        assert_eq!(cfg.digest(), explicit.digest());

        let mut reseeded = cfg.clone();
        reseeded.apply(&Overrides {
            seed: Some(43),
            ..Overrides::default()
        });
        assert_ne!(cfg.digest(), reseeded.digest());
        assert_eq!(run_id(&cfg.digest()).len(), 8);
    }

    #[test]
    fn round_trips_through_its_own_serialization() {
        let cfg: ConfigFile = toml::from_str(L63_DOC).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: ConfigFile = toml::from_str(&text).unwrap();
        assert_eq!(back.digest(), cfg.digest());
    }
}
