use std::path::{Path, PathBuf};

use gibbsfit::fitting::FitConfig;
use gibbsfit::simulation::SimulationConfig;
use gibbsfit::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Effective run configuration: the JSON config file with flag overrides applied.
///
/// The thread count is deliberately absent: it must not change any output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    /// Side of the intensity grid used for kernel surfaces and offsets.
    pub grid: usize,
    /// Number of r steps of the summary-function grid.
    pub r_steps: usize,
    /// Dummy grid side; `None` picks it from the largest per-mark count.
    pub dummy: Option<usize>,
    pub border: Option<f64>,
    /// `all` or a comma-separated list of menu labels.
    pub models: String,
    pub max_range: Option<f64>,
    /// Candidate ranges; `None` spreads `r_grid_size` values up to the max range.
    pub r_grid: Option<Vec<f64>>,
    pub r_grid_size: usize,
    pub gamma_grid: Vec<f64>,
    /// Irregular-parameter file written by `profile`; `fit` profiles afresh without it.
    pub profile: Option<PathBuf>,
    /// Model files for `residuals` and `simulate`; defaults to `<out>/models/*.json`.
    pub model_files: Vec<PathBuf>,
    pub seed: u64,
    pub steps: u64,
    pub burn_in: u64,
    pub trace_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimulationConfig::<f64>::default();
        Self {
            manifest: None,
            out: PathBuf::from("out"),
            grid: 64,
            r_steps: gibbsfit::summaries::DEFAULT_R_STEPS,
            dummy: None,
            border: None,
            models: "all".into(),
            max_range: None,
            r_grid: None,
            r_grid_size: 6,
            gamma_grid: vec![-0.2, -0.1, 0.0, 0.1, 0.2],
            profile: None,
            model_files: Vec::new(),
            seed: 0,
            steps: sim.steps,
            burn_in: sim.burn_in,
            trace_every: sim.trace_every,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let file = std::fs::File::open(p)
                    .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", p.display())))?;
                Ok(serde_json::from_reader(file)?)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.grid < 2 {
            return bad("grid must be at least 2");
        }
        if self.r_steps < 2 {
            return bad("r_steps must be at least 2");
        }
        if self.dummy == Some(0) {
            return bad("dummy grid side must be positive");
        }
        if self.border.is_some_and(|b| !(b >= 0.0 && b.is_finite())) {
            return bad("border must be a finite nonnegative distance");
        }
        if self.max_range.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
            return bad("max range must be positive");
        }
        if self.r_grid.as_ref().is_some_and(|g| g.is_empty() || g.iter().any(|r| !(*r > 0.0))) {
            return bad("r grid must be nonempty with positive entries");
        }
        if self.r_grid_size == 0 || self.gamma_grid.is_empty() {
            return bad("profile grids must be nonempty");
        }
        if self.gamma_grid.iter().any(|g| !g.is_finite()) {
            return bad("gamma grid entries must be finite");
        }
        if self.burn_in >= self.steps {
            return bad("burn-in must be shorter than the run");
        }
        Ok(())
    }

    pub fn manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("a manifest is required (--manifest)".into()))
    }

    /// Hex SHA-256 of the canonical JSON form, with the output directory
    /// blanked: where results land does not change them.
    pub fn hash(&self) -> String {
        let keyed = Self { out: PathBuf::new(), ..self.clone() };
        let bytes = serde_json::to_vec(&keyed).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn fit_config(&self, use_covariates: bool) -> FitConfig<f64> {
        FitConfig {
            dummy_side: self.dummy,
            border: self.border,
            use_covariates,
            intensity_side: self.grid,
            ..FitConfig::default()
        }
    }

    pub fn simulation_config(&self) -> SimulationConfig<f64> {
        SimulationConfig {
            steps: self.steps,
            burn_in: self.burn_in,
            seed: self.seed,
            trace_every: self.trace_every,
            ..SimulationConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_hash_is_stable() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hash(), RunConfig::default().hash());
        assert_eq!(c.hash().len(), 64);
        let d = RunConfig { seed: 1, ..c.clone() };
        assert_ne!(c.hash(), d.hash());
        let e = RunConfig { out: "elsewhere".into(), ..c.clone() };
        assert_eq!(c.hash(), e.hash());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"grid": 32, "seed": 7}"#).unwrap();
        assert_eq!(c.grid, 32);
        assert_eq!(c.seed, 7);
        assert_eq!(c.models, "all");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"gird": 32}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let c = RunConfig { burn_in: 10, steps: 10, ..RunConfig::default() };
        assert_eq!(c.validate().unwrap_err().kind(), "invalid_argument");
        let c = RunConfig { r_grid: Some(vec![]), ..RunConfig::default() };
        assert!(c.validate().is_err());
    }
}
