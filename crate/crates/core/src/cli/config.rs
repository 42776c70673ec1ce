use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngState};

/// RNG stream ids for the fixed draws of an experiment. Trial-based
/// experiments use streams `0..trials`, so these sit far above that range.
pub(crate) const W0_STREAM: u64 = 1 << 48;
pub(crate) const X0_STREAM: u64 = (1 << 48) + 1;

const DEFAULT_N: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub seed: u64,
    /// Rows of `W0`; implied by diagonal and file sources.
    #[serde(default)]
    pub n: Option<usize>,
    /// Columns of `W0` for the Frobenius experiment; defaults to `n`.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_r")]
    pub r: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: Vec<f64>,
    #[serde(default = "default_r")]
    pub k: usize,
    #[serde(default = "default_step")]
    pub flow_step: f64,
    #[serde(default = "default_horizon")]
    pub flow_horizon: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub w0_source: W0Source,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_r() -> usize {
    1
}
fn default_sigma() -> f64 {
    1.0
}
fn default_alpha() -> Vec<f64> {
    vec![1e-2, 5e-3, 2.5e-3]
}
fn default_lambda() -> Vec<f64> {
    vec![0.0, 1.0]
}
fn default_step() -> f64 {
    1e-4
}
fn default_horizon() -> f64 {
    2.0
}
fn default_trials() -> usize {
    100_000
}

/// Where `W0` comes from.
///
/// JSON forms: `{"identity-scaled": 2.0}`, `{"diagonal": [3, 2, 1]}`,
/// `"gaussian-seeded"` and `{"file": "w0.csv"}` (relative to the config).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum W0Source {
    IdentityScaled(f64),
    Diagonal(Vec<f64>),
    #[default]
    GaussianSeeded,
    File(PathBuf),
}

/// Command-line values that replace top-level config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub experiment: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(e) = &o.experiment {
            self.experiment = e.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("field `{field}`: {msg}")));
        let names: Vec<&str> = super::EXPERIMENTS.iter().map(|(n, _)| *n).collect();
        if !names.contains(&self.experiment.as_str()) {
            return bad(
                "experiment",
                format!(
                    "unknown `{}`; valid names: {}",
                    self.experiment,
                    names.join(", ")
                ),
            );
        }
        if self.n == Some(0) {
            return bad("n", "must be at least 1".into());
        }
        if self.m == Some(0) {
            return bad("m", "must be at least 1".into());
        }
        if self.r == 0 {
            return bad("r", "must be at least 1".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma", format!("must be positive, got {}", self.sigma));
        }
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return bad(
                "alpha",
                "must be a non-empty list of positive step sizes".into(),
            );
        }
        if self.lambda.is_empty() || self.lambda.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad(
                "lambda",
                "must be a non-empty list of values in [0, 1]".into(),
            );
        }
        if self.k == 0 {
            return bad("k", "must be at least 1".into());
        }
        if !(self.flow_step > 0.0 && self.flow_step.is_finite()) {
            return bad(
                "flow_step",
                format!("must be positive, got {}", self.flow_step),
            );
        }
        if !(self.flow_horizon >= self.flow_step && self.flow_horizon.is_finite()) {
            return bad(
                "flow_horizon",
                format!(
                    "must be finite and at least flow_step, got {}",
                    self.flow_horizon
                ),
            );
        }
        if self.trials < 100 {
            return bad(
                "trials",
                format!("must be at least 100, got {}", self.trials),
            );
        }
        match &self.w0_source {
            W0Source::IdentityScaled(s) if !s.is_finite() => {
                bad("w0_source", "scale must be finite".into())
            }
            W0Source::Diagonal(d) if d.is_empty() || d.iter().any(|x| !x.is_finite()) => bad(
                "w0_source",
                "diagonal must be a non-empty list of finite values".into(),
            ),
            W0Source::Diagonal(d) if self.n.is_some_and(|n| n != d.len()) => bad(
                "n",
                format!("conflicts with diagonal of length {}", d.len()),
            ),
            _ => Ok(()),
        }
    }

    /// Builds `W0`; `square` forces `m = n`. Relative file paths resolve
    /// against `base`.
    pub fn resolve_w0(&self, base: &Path, square: bool) -> Result<Matrix> {
        let n = self.n.unwrap_or(DEFAULT_N);
        let m = if square { n } else { self.m.unwrap_or(n) };
        let w0 = match &self.w0_source {
            W0Source::IdentityScaled(s) => Matrix::rect_diag(n, m, &vec![*s; n.min(m)]),
            W0Source::Diagonal(d) => {
                let m = if square {
                    d.len()
                } else {
                    self.m.unwrap_or(d.len())
                };
                Matrix::rect_diag(d.len(), m, d)
            }
            W0Source::GaussianSeeded => {
                RngState::with_stream(self.seed, W0_STREAM).gaussian_matrix(n, m, 1.0)?
            }
            W0Source::File(p) => read_matrix_csv(&base.join(p))?,
        };
        if square && !w0.is_square() {
            return Err(Error::Config(format!(
                "field `w0_source`: experiment `{}` needs a square W0, got {}x{}",
                self.experiment,
                w0.rows(),
                w0.cols()
            )));
        }
        if let Some(n) = self.n {
            if w0.rows() != n {
                return Err(Error::Config(format!(
                    "field `n`: {n} disagrees with W0 of {} rows",
                    w0.rows()
                )));
            }
        }
        Ok(w0)
    }
}

/// Rows of comma-separated doubles, no header.
pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let cfg_err = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| cfg_err(e.to_string()))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| cfg_err(e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| cfg_err(format!("line {}: `{s}`: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(cfg_err("empty matrix".into()));
    }
    Matrix::from_rows(&rows).map_err(|e| cfg_err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment": "trace-flow"}"#).unwrap();
        assert_eq!(cfg.r, 1);
        assert_eq!(cfg.alpha, vec![1e-2, 5e-3, 2.5e-3]);
        assert_eq!(cfg.w0_source, W0Source::GaussianSeeded);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let err =
            ExperimentConfig::from_json("{\n  \"experiment\": \"moments\",\n  \"bogus\": 1\n}")
                .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn unknown_experiment_lists_names() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment": "nope"}"#).unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(
            msg.contains("gd-convergence") && msg.contains("lowrank-eym"),
            "{msg}"
        );
    }

    #[test]
    fn w0_sources() {
        let base = Path::new(".");
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment": "trace-flow", "w0_source": {"diagonal": [3, 2, 1]}}"#,
        )
        .unwrap();
        assert_eq!(
            cfg.resolve_w0(base, true).unwrap(),
            Matrix::diag(&[3.0, 2.0, 1.0])
        );

        let cfg = ExperimentConfig::from_json(
            r#"{"experiment": "lowrank-eym", "n": 2, "m": 3, "w0_source": {"identity-scaled": 2.0}}"#,
        )
        .unwrap();
        assert_eq!(
            cfg.resolve_w0(base, false).unwrap(),
            Matrix::rect_diag(2, 3, &[2.0, 2.0])
        );

        let cfg = ExperimentConfig::from_json(r#"{"experiment": "lowrank-eym", "n": 4, "m": 3}"#)
            .unwrap();
        let a = cfg.resolve_w0(base, false).unwrap();
        assert_eq!(a.shape(), (4, 3));
        assert_eq!(a, cfg.resolve_w0(base, false).unwrap());
        assert!(matches!(cfg.resolve_w0(base, true), Ok(m) if m.shape() == (4, 4)));
    }

    #[test]
    fn matrix_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("w0.csv"), "1, 2\n3,4\n").unwrap();
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment": "trace-flow", "w0_source": {"file": "w0.csv"}}"#,
        )
        .unwrap();
        let w0 = cfg.resolve_w0(dir.path(), true).unwrap();
        assert_eq!(
            w0,
            Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()
        );

        std::fs::write(dir.path().join("w0.csv"), "1,2\n3\n").unwrap();
        assert!(matches!(
            cfg.resolve_w0(dir.path(), true),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn validation_names_fields() {
        let cfg =
            ExperimentConfig::from_json(r#"{"experiment": "approx-error", "trials": 10}"#).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("`trials`"));
        let cfg = ExperimentConfig::from_json(r#"{"experiment": "gd-convergence", "lambda": [2]}"#)
            .unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("`lambda`"));
    }
}
