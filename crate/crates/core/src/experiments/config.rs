use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::stepsize::{AlphaUnits, CertifyOptions, Coupling};

/// A complete experiment description, read from JSON.
///
/// ```json
/// {
///   "problem": {"kind": "quadratic", "n": 10, "coef_range": [1, 1000], "offset_range": [1, 100]},
///   "topology": {"kind": "k_regular", "k": 4, "seed": 0},
///   "variants": [{"method": "C", "t": 2, "stepsize": {"mode": "certificate"}}],
///   "stop": {"epsilon": 0.01, "max_iters": 1000000},
///   "seeds": [0, 1, 2]
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub topology: Topology,
    pub variants: Vec<MethodSpec>,
    #[serde(default)]
    pub stop: StopSpec,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Keep one trace row every this many iterations.
    #[serde(default = "one")]
    pub record_every: usize,
    /// Default penalty `B = penalty_scale * A'A` for non-certificate runs.
    #[serde(default = "unit")]
    pub penalty_scale: f64,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `f_i(x) = c_i (x - b_i)^2` with integer `c_i`, `b_i` drawn inclusively from the ranges.
    Quadratic {
        n: usize,
        coef_range: (i64, i64),
        offset_range: (i64, i64),
        #[serde(default)]
        seed: u64,
    },
    /// Regularised logistic regression over a LIBSVM file split across `n` agents.
    /// Without a path a synthetic dataset of `samples x features` is generated.
    Logistic {
        dataset_path: Option<PathBuf>,
        #[serde(default = "default_kappa")]
        kappa: f64,
        n: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_features")]
        features: usize,
    },
}

fn default_kappa() -> f64 {
    0.01
}

fn default_samples() -> usize {
    768
}

fn default_features() -> usize {
    8
}

impl ProblemSpec {
    pub fn n(&self) -> usize {
        match self {
            ProblemSpec::Quadratic { n, .. } | ProblemSpec::Logistic { n, .. } => *n,
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        let mut out = self.clone();
        match &mut out {
            ProblemSpec::Quadratic { n: m, .. } | ProblemSpec::Logistic { n: m, .. } => *m = n,
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodKind {
    F,
    G,
    C,
    #[serde(rename = "EXTRA")]
    Extra,
    #[serde(rename = "MM")]
    Mm,
}

impl MethodKind {
    pub fn label(&self) -> &'static str {
        match self {
            MethodKind::F => "FlexPD-F",
            MethodKind::G => "FlexPD-G",
            MethodKind::C => "FlexPD-C",
            MethodKind::Extra => "EXTRA",
            MethodKind::Mm => "MM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: MethodKind,
    #[serde(default = "one")]
    pub t: usize,
    pub stepsize: StepsizeMode,
    /// Overrides the experiment-wide penalty scale for this method.
    #[serde(default)]
    pub penalty_scale: Option<f64>,
    /// Scales the penalty per instance so that `rho(B) = penalty_rho_over_m * m`.
    /// Mutually exclusive with `penalty_scale`.
    #[serde(default)]
    pub penalty_rho_over_m: Option<f64>,
    /// MM inner-solve tolerance on the augmented Lagrangian gradient.
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
}

fn default_inner_tol() -> f64 {
    1e-10
}

impl MethodSpec {
    pub fn new(method: MethodKind, t: usize, stepsize: StepsizeMode) -> Self {
        MethodSpec { method, t, stepsize, penalty_scale: None, penalty_rho_over_m: None, inner_tol: default_inner_tol() }
    }

    pub fn label(&self) -> String {
        match self.method {
            MethodKind::Extra | MethodKind::Mm => self.method.label().to_string(),
            _ => format!("{}(T={})", self.method.label(), self.t),
        }
    }
}

fn fixed_coupling() -> Coupling {
    Coupling::Fixed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StepsizeMode {
    Certificate {
        #[serde(flatten)]
        options: CertifyOptions,
    },
    Tuned {
        budget: usize,
        #[serde(default)]
        seed: u64,
        /// Relative-error target used during tuning; defaults to the run's epsilon.
        #[serde(default)]
        tol: Option<f64>,
        #[serde(default)]
        max_iters: Option<usize>,
        #[serde(default)]
        alpha_range: Option<(f64, f64)>,
        #[serde(default)]
        beta_range: Option<(f64, f64)>,
        #[serde(default)]
        alpha_units: AlphaUnits,
        /// Defaults to `fixed`: candidates share the configured penalty matrix.
        #[serde(default = "fixed_coupling")]
        coupling: Coupling,
    },
    Fixed {
        alpha: f64,
        #[serde(default = "unit")]
        beta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSpec {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_epsilon() -> f64 {
    0.01
}

fn default_max_iters() -> usize {
    1_000_000
}

impl Default for StopSpec {
    fn default() -> Self {
        StopSpec { epsilon: default_epsilon(), max_iters: default_max_iters() }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.stop.epsilon > 0.0 && self.stop.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.stop.epsilon));
        }
        if self.variants.is_empty() {
            return bad("at least one variant is required".into());
        }
        if self.problem.n() < 2 {
            return bad("need at least two agents".into());
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        if !(self.penalty_scale > 0.0 && self.penalty_scale.is_finite()) {
            return bad(format!("penalty_scale must be positive, got {}", self.penalty_scale));
        }
        if self.topology == Topology::Custom {
            return bad("custom topologies cannot be described in a config file".into());
        }
        if let ProblemSpec::Quadratic { coef_range, .. } = &self.problem {
            if coef_range.0 < 1 || coef_range.1 < coef_range.0 {
                return bad(format!("coef_range {coef_range:?} must be a positive interval"));
            }
        }
        for v in &self.variants {
            match (v.penalty_scale, v.penalty_rho_over_m) {
                (Some(_), Some(_)) => {
                    return bad(format!("{}: set penalty_scale or penalty_rho_over_m, not both", v.label()));
                }
                (Some(s), None) | (None, Some(s)) if !(s > 0.0 && s.is_finite()) => {
                    return bad(format!("{}: penalty factor must be positive, got {s}", v.label()));
                }
                _ => {}
            }
            if v.t == 0 {
                return bad(format!("{}: T must be at least 1", v.method.label()));
            }
            match (&v.method, &v.stepsize) {
                (MethodKind::Extra | MethodKind::Mm, StepsizeMode::Certificate { .. }) => {
                    return bad(format!("{} has no stepsize certificate; use fixed or tuned", v.method.label()));
                }
                (MethodKind::Mm, StepsizeMode::Tuned { .. }) => {
                    return bad("MM takes a fixed beta".into());
                }
                (_, StepsizeMode::Tuned { budget: 0, .. }) => {
                    return bad("tuning budget must be at least 1".into());
                }
                (_, StepsizeMode::Tuned { alpha_range, beta_range, .. })
                    if [alpha_range, beta_range].into_iter().flatten().any(|&(lo, hi)| !(lo > 0.0 && lo <= hi && hi.is_finite())) =>
                {
                    return bad("search ranges must satisfy 0 < lo <= hi < inf".into());
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "problem": {"kind": "quadratic", "n": 10, "coef_range": [1, 1000], "offset_range": [1, 100]},
        "topology": {"kind": "k_regular", "k": 4, "seed": 0},
        "variants": [
            {"method": "C", "t": 2, "stepsize": {"mode": "certificate", "alpha_frac": 0.5}},
            {"method": "EXTRA", "stepsize": {"mode": "tuned", "budget": 8}},
            {"method": "MM", "stepsize": {"mode": "fixed", "alpha": 1.0, "beta": 1.0}}
        ],
        "seeds": [0, 1]
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        assert_eq!(cfg.variants.len(), 3);
        assert_eq!(cfg.stop.epsilon, 0.01);
        match &cfg.variants[0].stepsize {
            StepsizeMode::Certificate { options } => assert_eq!(options.alpha_frac, 0.5),
            other => panic!("unexpected {other:?}"),
        }
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let no_variants = SAMPLE.replace(
            r#"{"method": "C", "t": 2, "stepsize": {"mode": "certificate", "alpha_frac": 0.5}},
            {"method": "EXTRA", "stepsize": {"mode": "tuned", "budget": 8}},
            {"method": "MM", "stepsize": {"mode": "fixed", "alpha": 1.0, "beta": 1.0}}"#,
            "",
        );
        assert!(matches!(ExperimentConfig::from_json(&no_variants), Err(Error::Config(_))));
        let eps = SAMPLE.replace(r#""seeds""#, r#""stop": {"epsilon": 1.5}, "seeds""#);
        assert!(ExperimentConfig::from_json(&eps).is_err());
        let extra_cert = SAMPLE.replace(r#""mode": "tuned", "budget": 8"#, r#""mode": "certificate""#);
        assert!(ExperimentConfig::from_json(&extra_cert).is_err());
        assert!(ExperimentConfig::from_json("{not json").is_err());
        let both = SAMPLE.replace(r#""t": 2,"#, r#""t": 2, "penalty_scale": 0.5, "penalty_rho_over_m": 0.5,"#);
        assert!(ExperimentConfig::from_json(&both).is_err());
    }

    #[test]
    fn tuned_search_options() {
        let tuned = r#"{"mode": "tuned", "budget": 8, "alpha_units": "inverse_l", "coupling": "tied", "beta_range": [0.1, 1]}"#;
        let cfg = ExperimentConfig::from_json(&SAMPLE.replace(r#"{"mode": "certificate", "alpha_frac": 0.5}"#, tuned)).unwrap();
        let StepsizeMode::Tuned { alpha_units, coupling, beta_range, alpha_range, .. } = &cfg.variants[0].stepsize else {
            panic!("expected tuned mode");
        };
        assert_eq!((*alpha_units, *coupling), (AlphaUnits::InverseL, Coupling::Tied));
        assert_eq!((*alpha_range, *beta_range), (None, Some((0.1, 1.0))));
        let plain = r#"{"mode": "tuned", "budget": 8}"#;
        let cfg = ExperimentConfig::from_json(&SAMPLE.replace(r#"{"mode": "certificate", "alpha_frac": 0.5}"#, plain)).unwrap();
        assert!(matches!(cfg.variants[0].stepsize, StepsizeMode::Tuned { coupling: Coupling::Fixed, .. }));
        let inverted = tuned.replace("[0.1, 1]", "[1, 0.1]");
        assert!(ExperimentConfig::from_json(&SAMPLE.replace(r#"{"mode": "certificate", "alpha_frac": 0.5}"#, &inverted)).is_err());
    }
}
