//! Network documents and experiment configuration files.
//!
//! A network document is a JSON object
//!
//! ```json
//! { "species": ["S1", "S2"], "k": [2, 1],
//!   "reactions": [ {"from": 0, "to": 1, "rate": 1.0}, … ] }
//! ```
//!
//! where index `0` is the source/sink.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crn::{CrnSpec, RateMatrix, SpecLimits, State};
use crate::error::{CrnError, Result};
use crate::numeric::kth_root;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub species: Vec<String>,
    pub k: Vec<u32>,
    pub reactions: Vec<ReactionDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionDoc {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

fn json_error(e: serde_json::Error) -> CrnError {
    CrnError::Parse {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    }
}

fn field_error(location: impl Into<String>, message: impl Into<String>) -> CrnError {
    CrnError::Parse {
        location: location.into(),
        message: message.into(),
    }
}

impl NetworkDoc {
    pub fn from_spec(spec: &CrnSpec) -> Self {
        Self {
            species: spec.names().to_vec(),
            k: spec.arities().to_vec(),
            reactions: spec
                .reactions()
                .into_iter()
                .map(|(from, to)| ReactionDoc {
                    from,
                    to,
                    rate: spec.rate(from, to),
                })
                .collect(),
        }
    }

    /// Validates the document and builds the network.
    pub fn to_spec(&self, limits: SpecLimits) -> Result<CrnSpec> {
        let n = self.species.len();
        if self.k.len() != n {
            return Err(field_error(
                "k",
                format!("{} arities for {n} species", self.k.len()),
            ));
        }
        let m = n + 1;
        let mut rates = vec![0.0; m * m];
        for (e, r) in self.reactions.iter().enumerate() {
            for (name, v) in [("from", r.from), ("to", r.to)] {
                if v > n {
                    return Err(field_error(
                        format!("reactions[{e}].{name}"),
                        format!("index {v} is out of range 0..={n}"),
                    ));
                }
            }
            if r.from == r.to {
                return Err(field_error(
                    format!("reactions[{e}]"),
                    format!("reaction from {} to itself", r.from),
                ));
            }
            if !(r.rate.is_finite() && r.rate >= 0.0) {
                return Err(CrnError::NegativeRate {
                    location: format!("reactions[{e}].rate"),
                    value: r.rate,
                });
            }
            let slot = &mut rates[r.from * m + r.to];
            if *slot != 0.0 {
                return Err(field_error(
                    format!("reactions[{e}]"),
                    format!("duplicate reaction {} -> {}", r.from, r.to),
                ));
            }
            *slot = r.rate;
        }
        let kappa = RateMatrix::new((0..m).collect(), rates)?;
        CrnSpec::with_limits(self.species.clone(), self.k.clone(), kappa, limits)
    }
}

/// Parses and validates a network document.
pub fn parse_network(text: &str) -> Result<CrnSpec> {
    parse_network_with(text, SpecLimits::default())
}

pub fn parse_network_with(text: &str, limits: SpecLimits) -> Result<CrnSpec> {
    let doc: NetworkDoc = serde_json::from_str(text).map_err(json_error)?;
    doc.to_spec(limits)
}

pub fn read_network(path: &Path) -> Result<CrnSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CrnError::Io(format!("{}: {e}", path.display())))?;
    parse_network(&text).map_err(|e| match e {
        CrnError::Parse { location, message } => CrnError::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn network_to_json(spec: &CrnSpec) -> String {
    serde_json::to_string_pretty(&NetworkDoc::from_spec(spec)).expect("network serializes")
}

/// Either a path to a network document or the document itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkSource {
    Path(PathBuf),
    Inline(NetworkDoc),
}

impl NetworkSource {
    /// Relative paths are resolved against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<CrnSpec> {
        match self {
            NetworkSource::Inline(doc) => doc.to_spec(SpecLimits::default()),
            NetworkSource::Path(p) => {
                let full = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                read_network(&full)
            }
        }
    }
}

/// Initial-state policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPolicy {
    /// Explicit molecule counts, used for every `N`.
    State(Vec<u64>),
    /// `α_i N^{1/k_i}` rounded down to a multiple of `k_i`.
    Alpha(Vec<f64>),
}

impl InitialPolicy {
    pub fn initial_state(&self, spec: &CrnSpec, big_n: u64) -> Result<State> {
        match self {
            InitialPolicy::State(x) => {
                if x.len() != spec.n() {
                    return Err(CrnError::DimensionMismatch {
                        expected: spec.n(),
                        got: x.len(),
                    });
                }
                Ok(State(x.clone()))
            }
            InitialPolicy::Alpha(alpha) => alpha_state(spec, big_n, alpha),
        }
    }

    /// Limit of the scaled initial state.
    pub fn alpha(&self, spec: &CrnSpec, big_n: u64) -> Vec<f64> {
        match self {
            InitialPolicy::Alpha(a) => a.clone(),
            InitialPolicy::State(x) => x
                .iter()
                .enumerate()
                .map(|(a, &v)| v as f64 / kth_root(big_n as f64, spec.arity(a + 1)))
                .collect(),
        }
    }
}

/// `x_i = k_i ⌊α_i N^{1/k_i} / k_i⌋`, i.e. the largest point of residue
/// class 0 not above `α_i N^{1/k_i}`.
pub fn alpha_state(spec: &CrnSpec, big_n: u64, alpha: &[f64]) -> Result<State> {
    if alpha.len() != spec.n() {
        return Err(CrnError::DimensionMismatch {
            expected: spec.n(),
            got: alpha.len(),
        });
    }
    alpha
        .iter()
        .enumerate()
        .map(|(a, &v)| {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CrnError::NonPositivePoint { index: a + 1, value: v });
            }
            let k = spec.arity(a + 1) as u64;
            // Guard against `exp(ln N / k)` landing a hair below an integer.
            let target = v * kth_root(big_n as f64, k as u32) * (1.0 + 1e-12);
            Ok((target / k as f64).floor() as u64 * k)
        })
        .collect::<Result<Vec<_>>>()
        .map(State)
}

/// Optional pass thresholds applied at the largest `N` of the ladder.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub slow_sup: Option<f64>,
    pub fast_average: Option<f64>,
    pub exit_fraction: Option<f64>,
    pub functional_residual: Option<f64>,
}

/// Which metrics must decrease along the ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendChecks {
    pub slow_sup: bool,
    pub fast_average: bool,
    pub exit_fraction: bool,
    pub functional_residual: bool,
}

impl Default for TrendChecks {
    fn default() -> Self {
        Self {
            slow_sup: true,
            fast_average: true,
            exit_fraction: false,
            functional_residual: true,
        }
    }
}

fn default_replicas() -> usize {
    20
}

fn default_safety() -> f64 {
    crate::equilibrium::DEFAULT_SAFETY
}

fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSource,
    pub n_ladder: Vec<u64>,
    pub t_end: f64,
    /// Start of the averaging window; defaults to `0.1 T`.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    pub x0: InitialPolicy,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    /// ODE step; defaults to `10⁻³ T`.
    #[serde(default)]
    pub ode_step: Option<f64>,
    /// Bound vectors are built around this `α`; defaults to the equilibrium `ℓ`.
    #[serde(default)]
    pub bounds_alpha: Option<Vec<f64>>,
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// Radius of the bump test function relative to `ℓ_i`.
    #[serde(default)]
    pub bump_radius: Option<f64>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub trends: TrendChecks,
    #[serde(default)]
    pub event_budget: Option<u64>,
}

impl ExperimentConfig {
    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or(0.1 * self.t_end)
    }

    pub fn ode_step(&self) -> f64 {
        self.ode_step.unwrap_or(1e-3 * self.t_end)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CrnError::InvalidArgument(m));
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        let eta = self.eta();
        if !(0.0 <= eta && eta < self.t_end) {
            return bad(format!("need 0 <= eta < t_end, got eta = {eta}"));
        }
        if self.replicas == 0 {
            return bad("replicas must be at least 1".into());
        }
        if self.n_ladder.is_empty() || self.n_ladder[0] == 0 {
            return bad("n_ladder must be non-empty with positive entries".into());
        }
        if self.n_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return bad("n_ladder must be strictly increasing".into());
        }
        if !(self.safety > 1.0) {
            return bad(format!("safety must exceed 1, got {}", self.safety));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(json_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative network paths resolve against its directory.
    pub fn read(path: &Path) -> Result<(Self, CrnSpec)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CrnError::Io(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|e| match e {
            CrnError::Parse { location, message } => CrnError::Parse {
                location: format!("{}: {location}", path.display()),
                message,
            },
            other => other,
        })?;
        let spec = cfg.network.load(path.parent())?;
        Ok((cfg, spec))
    }
}
